"""Scenario construction: demand synthesis, price curves, time gridding.

Consumer demand profiles are synthesized from one district-total load
curve: the curve is low-pass filtered (zero-phase Butterworth) and then
varied per consumer by multiplicative log-normal noise on a band of its
Fourier spectrum. Price curves are piecewise linear in time and
resampled onto the simulation grid.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.signal import butter, sosfiltfilt

from .errors import ParseError, ValidationError
from .network import control_volumes
from .objective import ConstraintSet, PriceModel
from .thermal import (BoundarySpec, PhysicalConstants, TimeGrid, assemble,
                      demand_to_delta)

#: Default cutoff of the demand low-pass: one cycle per ~4 h.
DEFAULT_CUTOFF_HZ = 69.4e-6
#: Default Fourier noise band: periods between 2 h and 24 h.
DEFAULT_NOISE_BAND_HZ = (1.0 / (24 * 3600.0), 1.0 / (2 * 3600.0))
DEFAULT_NOISE_SIGMA = 0.2
#: Default smoothness weight, in working objective units per (°C/s)^2.
#: Calibrated on the bundled desk fixture: damps step-to-step control
#: jitter while contributing well under 1 % of the baseline loss.
DEFAULT_TIKHONOV_WEIGHT = 300.0

_MIN_FILTER_SAMPLES = 8
_ABS_ZERO_C = -273.15


@dataclass(frozen=True)
class LoadSeries:
    """Uniformly sampled power series, watts."""

    values_w: np.ndarray
    dt_s: float
    start_s: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values_w, dtype=float)
        object.__setattr__(self, "values_w", v)
        if v.ndim != 1 or v.size < _MIN_FILTER_SAMPLES:
            raise ValidationError(
                f"load series needs >= {_MIN_FILTER_SAMPLES} samples, got {v.size}"
            )
        if not np.all(np.isfinite(v)):
            raise ValidationError("load series contains non-finite values")
        if np.any(v < 0):
            raise ValidationError("load series contains negative power")
        if not self.dt_s > 0:
            raise ValidationError("sample interval must be > 0")

    def times(self):
        return self.start_s + np.arange(self.values_w.size) * self.dt_s

    def mean(self):
        return float(self.values_w.mean())


@dataclass(frozen=True)
class PriceSeries:
    """Price knots in time, EUR/MWh, linearly interpolated between."""

    times_s: np.ndarray
    prices_eur_mwh: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times_s, dtype=float)
        p = np.asarray(self.prices_eur_mwh, dtype=float)
        object.__setattr__(self, "times_s", t)
        object.__setattr__(self, "prices_eur_mwh", p)
        if t.ndim != 1 or t.shape != p.shape or t.size < 2:
            raise ValidationError("price series needs matching 1-d knots")
        if np.any(np.diff(t) <= 0):
            raise ValidationError("price knots must be strictly increasing")


@dataclass(frozen=True)
class DemandSet:
    """One demand series per consumer edge."""

    consumer_ids: tuple
    series: tuple

    def __post_init__(self):
        if len(self.consumer_ids) != len(self.series):
            raise ValidationError("ids and series lengths differ")
        object.__setattr__(self, "consumer_ids", tuple(self.consumer_ids))
        object.__setattr__(self, "series", tuple(self.series))

    def for_consumer(self, cid):
        try:
            return self.series[self.consumer_ids.index(cid)]
        except ValueError:
            raise ValidationError(f"no demand series for consumer {cid!r}") from None


# ---------------------------------------------------------------------------
# signal operations
# ---------------------------------------------------------------------------

def lowpass(series, cutoff_hz, order=4):
    """Zero-phase Butterworth low-pass of a load series.

    The filter is applied forward and backward (no phase shift, squared
    magnitude response) with reflective edge padding of one settling
    length, roughly a cutoff period. Negative excursions from ringing
    are clamped to zero.
    """
    fs = 1.0 / series.dt_s
    if not 0 < cutoff_hz < 0.5 * fs:
        raise ValidationError(
            f"cutoff {cutoff_hz} Hz must lie in (0, Nyquist={0.5 * fs} Hz)"
        )
    padlen = int(np.ceil(1.0 / (cutoff_hz * series.dt_s)))
    if padlen >= series.values_w.size:
        raise ValidationError(
            f"series too short for edge padding: need > {padlen} samples, "
            f"got {series.values_w.size}"
        )
    sos = butter(order, cutoff_hz, btype="low", fs=fs, output="sos")
    filtered = sosfiltfilt(sos, series.values_w, padtype="even", padlen=padlen)
    return LoadSeries(values_w=np.maximum(filtered, 0.0),
                      dt_s=series.dt_s, start_s=series.start_s)


def _consumer_rng(master_seed, key):
    """Independent RNG stream derived from (master seed, consumer key)."""
    digest = hashlib.sha256(str(key).encode("utf-8")).digest()
    salt = int.from_bytes(digest[:8], "big")
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), salt]))


def synthesize_variations(base, n, band_hz=DEFAULT_NOISE_BAND_HZ,
                          sigma=DEFAULT_NOISE_SIGMA, seed=0,
                          target_means=None, keys=None):
    """Create ``n`` demand variations of a base profile.

    Every variation multiplies the Fourier bins of the base inside the
    band by independent positive factors ``exp(N(0, sigma^2))``; the DC
    bin is untouched, so the pre-clamp mean equals the rescaling target
    exactly. Negative samples are clamped to zero and the series is
    rescaled to its target mean (default: equal shares of the base
    mean). Stream ``i`` is derived from ``(seed, keys[i])`` so the
    output is reproducible and independent of evaluation order.
    """
    if n < 1:
        raise ValidationError("need at least one variation")
    values = base.values_w
    nyquist = 0.5 / base.dt_s
    lo, hi = float(band_hz[0]), float(band_hz[1])
    if not (0.0 < lo < hi <= nyquist):
        raise ValidationError(
            f"noise band ({lo}, {hi}) Hz must lie within (0, {nyquist}] Hz"
        )
    freqs = np.fft.rfftfreq(values.size, d=base.dt_s)
    mask = (freqs >= lo) & (freqs <= hi)
    if not mask.any():
        raise ValidationError("noise band contains no Fourier bins")
    if target_means is None:
        target_means = np.full(n, base.mean() / n)
    else:
        target_means = np.asarray(target_means, dtype=float)
        if target_means.shape != (n,):
            raise ValidationError(f"need {n} target means")
    if keys is None:
        keys = [str(i) for i in range(n)]
    if len(keys) != n:
        raise ValidationError(f"need {n} keys")

    spectrum = np.fft.rfft(values)
    out = []
    for i in range(n):
        rng = _consumer_rng(seed, keys[i])
        spec = spectrum.copy()
        spec[mask] *= np.exp(rng.normal(0.0, sigma, size=int(mask.sum())))
        varied = np.fft.irfft(spec, n=values.size)
        mean = varied.mean()
        if mean <= 0:
            raise ValidationError("varied profile has non-positive mean")
        varied *= target_means[i] / mean
        varied = np.maximum(varied, 0.0)
        mean = varied.mean()
        if mean > 0:
            varied *= target_means[i] / mean
        out.append(LoadSeries(values_w=varied, dt_s=base.dt_s,
                              start_s=base.start_s))
    return out


def resample_to_grid(series, grid):
    """Linear interpolation of a load or price series at the grid times."""
    if isinstance(series, LoadSeries):
        times, values = series.times(), series.values_w
    elif isinstance(series, PriceSeries):
        times, values = series.times_s, series.prices_eur_mwh
    else:
        times, values = series
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
    t = grid.times()
    if t[0] < times[0] - 1e-9 or t[-1] > times[-1] + 1e-9:
        raise ValidationError(
            f"grid [{t[0]}, {t[-1]}] s not covered by series "
            f"[{times[0]}, {times[-1]}] s"
        )
    return np.interp(t, times, values)


# ---------------------------------------------------------------------------
# scenario assembly
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class Scenario:
    """Complete immutable optimization scenario.

    Bundles the network, flows, time grid, boundary data (consumer
    temperature drops, ambient), price model, constraint set and the
    control's initial value. ``system`` lazily assembles and caches the
    sparse operators; treat instances as frozen after construction.
    """

    graph: object
    flow: object
    volumes: object
    constants: PhysicalConstants
    grid: TimeGrid
    demands_w: np.ndarray
    deltas: np.ndarray
    ambient: np.ndarray
    price: PriceModel
    constraints: ConstraintSet
    tikhonov_weight: float
    u_init: np.ndarray
    seed: int | None = None

    @cached_property
    def system(self):
        return assemble(self.graph, self.flow, self.volumes, self.constants,
                        self.grid.dt_s)

    @property
    def n_plants(self):
        return len(self.graph.producer_edges)

    @property
    def n_consumers(self):
        return len(self.graph.consumer_edges)


def build_scenario(graph, flow, demands, prices, constraints, grid, constants,
                   *, alpha=1.0, beta=0.0, tikhonov_weight=DEFAULT_TIKHONOV_WEIGHT,
                   initial_control_c=110.0, seed=None):
    """Assemble a scenario from validated pieces.

    Demand powers are converted to consumer temperature drops with each
    consumer's mass flow. ``prices=None`` selects the static model
    (every step weighted 1). The initial control defines the steady
    state the horizon starts from.
    """
    bc = BoundarySpec.from_graph(graph)
    if tikhonov_weight < 0:
        raise ValidationError("tikhonov weight must be >= 0")

    consumer_ids = [graph.edge_ids[e] for e in bc.consumer_edges]
    rows = []
    for cid in consumer_ids:
        series = demands.for_consumer(cid)
        rows.append(resample_to_grid(series, grid))
    demands_w = np.asarray(rows)

    mdot_c = np.abs(flow.massflow_kg_s[bc.consumer_edges])
    deltas = demand_to_delta(demands_w, mdot_c[:, None],
                             constants.cp_j_per_kg_c)
    max_drop = constraints.plant_max_c - _ABS_ZERO_C
    bad = np.flatnonzero(np.max(deltas, axis=1) > max_drop)
    if bad.size:
        raise ValidationError(
            f"consumer {consumer_ids[bad[0]]!r}: temperature drop "
            f"{deltas[bad[0]].max():.1f} °C would push the return below "
            f"absolute zero"
        )

    if prices is None:
        price = PriceModel.static_price(alpha=alpha, beta=beta)
    else:
        price = PriceModel.from_curve(prices.times_s, prices.prices_eur_mwh,
                                      alpha=alpha, beta=beta)
        price.price_at(grid.times())  # fails fast if the curve is too short

    u_init = np.asarray(initial_control_c, dtype=float)
    if u_init.ndim == 0:
        u_init = np.full(bc.n_plants, float(u_init))
    if u_init.shape != (bc.n_plants,):
        raise ValidationError(
            f"initial control needs {bc.n_plants} plant values, got {u_init.shape}"
        )

    return Scenario(
        graph=graph,
        flow=flow,
        volumes=control_volumes(graph),
        constants=constants,
        grid=grid,
        demands_w=demands_w,
        deltas=deltas,
        ambient=constants.ambient_series(grid.n_steps),
        price=price,
        constraints=constraints,
        tikhonov_weight=float(tikhonov_weight),
        u_init=u_init,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

_LOAD_HEADER = ["time_s", "power_w"]
_PRICE_HEADER = ["time_s", "price_eur_mwh"]
_DEMAND_HEADER = ["time_s", "consumer_edge_id", "power_w"]


def _read_rows(path, expected_header):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}:1: empty file") from None
        if [h.strip() for h in header] != expected_header:
            raise ParseError(
                f"{path}:1: expected header {','.join(expected_header)!r}"
            )
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected_header):
                raise ParseError(
                    f"{path}:{lineno}: expected {len(expected_header)} fields"
                )
            rows.append((lineno, [c.strip() for c in row]))
    return rows


def _float(path, lineno, field, text):
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"{path}:{lineno}: bad {field} value {text!r}") from None


def read_load_series(path):
    """Read a base load CSV (`time_s,power_w`); spacing must be uniform."""
    rows = _read_rows(path, _LOAD_HEADER)
    times = np.array([_float(path, ln, "time_s", r[0]) for ln, r in rows])
    powers = np.array([_float(path, ln, "power_w", r[1]) for ln, r in rows])
    if times.size < 2:
        raise ParseError(f"{path}: need at least two samples")
    steps = np.diff(times)
    if np.any(np.abs(steps - steps[0]) > 1e-6 * abs(steps[0])):
        raise ValidationError(f"{path}: sample spacing is not uniform")
    return LoadSeries(values_w=powers, dt_s=float(steps[0]),
                      start_s=float(times[0]))


def write_load_series(series, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_LOAD_HEADER)
        for t, p in zip(series.times(), series.values_w):
            w.writerow([repr(float(t)), repr(float(p))])


def read_price_series(path):
    rows = _read_rows(path, _PRICE_HEADER)
    times = np.array([_float(path, ln, "time_s", r[0]) for ln, r in rows])
    prices = np.array([_float(path, ln, "price_eur_mwh", r[1]) for ln, r in rows])
    return PriceSeries(times_s=times, prices_eur_mwh=prices)


def write_price_series(series, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_PRICE_HEADER)
        for t, p in zip(series.times_s, series.prices_eur_mwh):
            w.writerow([repr(float(t)), repr(float(p))])


def read_demand_set(path):
    """Read a per-consumer demand CSV in long format."""
    rows = _read_rows(path, _DEMAND_HEADER)
    by_id = {}
    for ln, (t, cid, p) in rows:
        by_id.setdefault(cid, []).append(
            (_float(path, ln, "time_s", t), _float(path, ln, "power_w", p))
        )
    ids, series = [], []
    for cid, pairs in by_id.items():
        times = np.array([t for t, _ in pairs])
        powers = np.array([p for _, p in pairs])
        order = np.argsort(times, kind="stable")
        times, powers = times[order], powers[order]
        steps = np.diff(times)
        if steps.size == 0 or np.any(np.abs(steps - steps[0]) > 1e-6 * abs(steps[0])):
            raise ValidationError(f"{path}: consumer {cid!r} spacing not uniform")
        ids.append(cid)
        series.append(LoadSeries(values_w=powers, dt_s=float(steps[0]),
                                 start_s=float(times[0])))
    return DemandSet(consumer_ids=tuple(ids), series=tuple(series))


def write_demand_set(demands, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_DEMAND_HEADER)
        for cid, series in zip(demands.consumer_ids, demands.series):
            for t, p in zip(series.times(), series.values_w):
                w.writerow([repr(float(t)), cid, repr(float(p))])
