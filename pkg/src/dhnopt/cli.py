"""Command-line driver: simulate, optimize, synth-demand, verify, report.

One JSON config file describes a run; flags override the output
directory, seed, thread count and verbosity. Scalar results land in
``report.json`` (deterministic bytes for a fixed config and seed; wall
times go to ``timing.json``), time series in flat CSV files with one
row per solved step.

Exit codes: 0 success, 1 numerical failure, 2 input error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .errors import ParseError, SolverError, ValidationError
from .network import load_flow_field, parse_network, subdivide_pipes
from .objective import (ConstraintSet, constraint_violations, loss_energy,
                        loss_energy_steps, max_violation)
from .optimizer import OptimizerConfig, optimize
from .scenario import (DEFAULT_CUTOFF_HZ, DEFAULT_NOISE_BAND_HZ,
                       DEFAULT_TIKHONOV_WEIGHT, DemandSet, build_scenario,
                       lowpass, read_demand_set, read_load_series,
                       read_price_series, synthesize_variations,
                       write_demand_set)
from .thermal import (BoundarySpec, PhysicalConstants, TimeGrid, assemble,
                      energy_balance, simulate_system, solve_steady,
                      stored_energy)

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_INPUT = 2

_SAVINGS_RECOMPUTE_RTOL = 1e-12
_BINDING_TOL_C = 0.5

_DEFAULTS = {
    "network": {"nodes": None, "edges": None, "flows": None},
    "demand_file": None,
    "price_file": None,
    "base_load_file": None,
    "control": {"constant_c": None, "file": None},
    "scenario": {
        "dt_s": 900.0,
        "n_steps": None,
        "horizon_s": None,
        "ambient_c": 10.0,
        "cp_j_per_kg_c": 4186.0,
        "rho_kg_m3": 1000.0,
        "max_cell_length_m": 100.0,
        "alpha": 1.0,
        "beta": 0.0,
        "static_price": None,
        "tikhonov_weight": DEFAULT_TIKHONOV_WEIGHT,
        "initial_control_c": 110.0,
        "constraints": {
            "consumer_supply_min_c": 80.0,
            "consumer_return_min_c": 30.0,
            "plant_max_c": 140.0,
            "plant_min_c": 30.0,
        },
    },
    "optimizer": {
        "memory": 10,
        "max_inner_iterations": 200,
        "gradient_tolerance": 1e-6,
        "initial_penalty": 10.0,
        "penalty_factor": 10.0,
        "penalty_stop": 1e6,
    },
    "synthesis": {
        "cutoff_hz": DEFAULT_CUTOFF_HZ,
        "order": 4,
        "band_hz": list(DEFAULT_NOISE_BAND_HZ),
        "sigma": 0.2,
        "mean_w_per_consumer": None,
    },
    "verify": {
        "reference_file": None,
        "dense_tolerance_c": 1e-8,
        "mean_mismatch_threshold_c": None,
    },
    "quantile_levels": [1, 10, 50, 90, 99],
    "seed": 0,
    "out_dir": "out",
    "threads": None,
}


def _merge(defaults, given):
    out = {}
    for key, val in defaults.items():
        if isinstance(val, dict):
            out[key] = _merge(val, given.get(key, {}) if given else {})
        else:
            out[key] = given.get(key, val) if given else val
    if given:
        for key in given:
            if key not in defaults:
                raise ValidationError(f"unknown config key {key!r}")
    return out


class RunConfig:
    """Parsed config file plus flag overrides."""

    def __init__(self, data, base_dir, out_dir, seed, threads, quiet):
        self.data = data
        self.base_dir = Path(base_dir)
        self.out_dir = Path(out_dir)
        self.seed = int(seed)
        self.threads = threads
        self.quiet = quiet

    @classmethod
    def load(cls, args):
        path = Path(args.config)
        if not path.is_file():
            raise ValidationError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}: invalid JSON: {exc}") from None
        data = _merge(_DEFAULTS, raw)
        seed = args.seed if args.seed is not None else data["seed"]
        threads = args.threads if args.threads is not None else data["threads"]
        base = path.parent
        # a flag resolves against the working directory, the config
        # value against the config file's own directory
        if args.out_dir:
            out = Path(args.out_dir).absolute()
        else:
            out = Path(data["out_dir"])
            if not out.is_absolute():
                out = base / out
        return cls(data, base, out, seed, threads, args.quiet)

    def path(self, key, *, required=True, section=None):
        value = (self.data[section] if section else self.data).get(key)
        if value is None:
            if required:
                raise ValidationError(f"config is missing {key!r}")
            return None
        p = Path(value)
        if not p.is_absolute():
            p = self.base_dir / p
        if not p.is_file():
            raise ValidationError(f"{key}: file not found: {p}")
        return p

    def log(self, msg):
        if not self.quiet:
            print(msg)


# ---------------------------------------------------------------------------
# config -> model objects
# ---------------------------------------------------------------------------

def _load_network(cfg):
    net = cfg.data["network"]
    for key in ("nodes", "edges", "flows"):
        if not net.get(key):
            raise ValidationError(f"config is missing network.{key}")
    paths = {}
    for key in ("nodes", "edges", "flows"):
        p = Path(net[key])
        if not p.is_absolute():
            p = cfg.base_dir / p
        if not p.is_file():
            raise ValidationError(f"network.{key}: file not found: {p}")
        paths[key] = p
    graph = parse_network(paths["nodes"], paths["edges"])
    flow = load_flow_field(paths["flows"], graph)
    max_cell = cfg.data["scenario"]["max_cell_length_m"]
    return subdivide_pipes(graph, flow, max_cell)


def _time_grid(cfg):
    sc = cfg.data["scenario"]
    dt = float(sc["dt_s"])
    if sc["n_steps"] is not None:
        return TimeGrid(dt_s=dt, n_steps=int(sc["n_steps"]))
    if sc["horizon_s"] is None:
        raise ValidationError("config needs scenario.n_steps or scenario.horizon_s")
    horizon = float(sc["horizon_s"])
    n = horizon / dt
    if abs(n - round(n)) > 1e-9:
        raise ValidationError(
            f"dt_s={dt} does not divide horizon_s={horizon}"
        )
    return TimeGrid(dt_s=dt, n_steps=int(round(n)))


def _constraints(cfg):
    return ConstraintSet(**cfg.data["scenario"]["constraints"])


def _scenario(cfg, graph, flow):
    sc = cfg.data["scenario"]
    grid = _time_grid(cfg)
    demands = read_demand_set(cfg.path("demand_file"))
    static = sc["static_price"]
    price_path = cfg.path("price_file", required=False)
    if static is None:
        static = price_path is None
    if static:
        prices = None
    else:
        if price_path is None:
            raise ValidationError("dynamic pricing needs a price_file")
        prices = read_price_series(price_path)
    constants = PhysicalConstants(
        cp_j_per_kg_c=float(sc["cp_j_per_kg_c"]),
        rho_kg_m3=float(sc["rho_kg_m3"]),
        ambient_c=sc["ambient_c"],
    )
    return build_scenario(
        graph, flow, demands, prices, _constraints(cfg), grid, constants,
        alpha=float(sc["alpha"]), beta=float(sc["beta"]),
        tikhonov_weight=float(sc["tikhonov_weight"]),
        initial_control_c=float(sc["initial_control_c"]),
        seed=cfg.seed,
    )


def _control(cfg, scenario):
    """Baseline control trajectory, shape (n_plants, n_steps)."""
    bc = scenario.system.bc
    ctl = cfg.data["control"]
    grid = scenario.grid
    if ctl.get("file"):
        p = Path(ctl["file"])
        if not p.is_absolute():
            p = cfg.base_dir / p
        if not p.is_file():
            raise ValidationError(f"control.file: file not found: {p}")
        return _read_control_file(p, scenario.graph, bc, grid)
    const = ctl.get("constant_c")
    if const is None:
        const = cfg.data["scenario"]["initial_control_c"]
    return np.full((bc.n_plants, grid.n_steps), float(const))


_CONTROL_HEADER = ["time_s", "plant_edge_id", "supply_temp_c"]


def _read_control_file(path, graph, bc, grid):
    plant_ids = [graph.edge_ids[e] for e in bc.producer_edges]
    by_id = {pid: {} for pid in plant_ids}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != _CONTROL_HEADER:
            raise ParseError(f"{path}:1: expected header "
                             f"{','.join(_CONTROL_HEADER)!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            t, pid, temp = (c.strip() for c in row)
            if pid not in by_id:
                raise ValidationError(f"{path}:{lineno}: unknown plant {pid!r}")
            try:
                by_id[pid][float(t)] = float(temp)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad numeric value") from None
    u = np.empty((len(plant_ids), grid.n_steps))
    for i, pid in enumerate(plant_ids):
        if not by_id[pid]:
            raise ValidationError(f"{path}: no rows for plant {pid!r}")
        times = np.array(sorted(by_id[pid]))
        vals = np.array([by_id[pid][t] for t in times])
        target = grid.times()[1:]
        if target[0] < times[0] - 1e-9 or target[-1] > times[-1] + 1e-9:
            raise ValidationError(
                f"{path}: control for {pid!r} does not cover the horizon"
            )
        u[i] = np.interp(target, times, vals)
    return u


def _write_control_file(path, graph, bc, grid, u):
    plant_ids = [graph.edge_ids[e] for e in bc.producer_edges]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_CONTROL_HEADER)
        for i, pid in enumerate(plant_ids):
            for t, temp in zip(grid.times()[1:], u[i]):
                w.writerow([repr(float(t)), pid, repr(float(temp))])


# ---------------------------------------------------------------------------
# metrics and series output
# ---------------------------------------------------------------------------

def compute_quantiles(traj, graph, levels=(1, 10, 50, 90, 99)):
    """Per-step quantile bands of the consumer supply temperatures.

    Empirical quantiles with linear interpolation between order
    statistics, plus the per-step minimum and median.
    """
    bc = BoundarySpec.from_graph(graph)
    temps = traj.values_c[bc.consumer_supply_nodes, 1:]
    out = {"min": temps.min(axis=0), "median": np.median(temps, axis=0)}
    for q in levels:
        out[f"p{q:g}"] = np.quantile(temps, q / 100.0, axis=0)
    return out


def _plant_injection_w(system, traj):
    bc = system.bc
    cp = system.constants.cp_j_per_kg_c
    y = traj.values_c
    dT = y[bc.plant_nodes, 1:] - y[bc.plant_return_nodes, 1:]
    return cp * (system.plant_massflow[:, None] * dT).sum(axis=0)


def _loss_steps(scenario, traj):
    """Per-step contribution to the loss (J static, EUR dynamic)."""
    return loss_energy_steps(traj, scenario.graph, scenario.flow,
                             scenario.price, scenario.constants.cp_j_per_kg_c)


def _min_consumer_temps(traj, bc):
    y = traj.values_c
    return (y[bc.consumer_supply_nodes, 1:].min(axis=0),
            y[bc.consumer_return_nodes, 1:].min(axis=0))


def _stored_series(scenario, traj):
    """Stored energy per step vs ambient mean and vs the initial state."""
    ref = float(np.mean(scenario.ambient))
    e = stored_energy(traj.values_c, scenario.volumes, scenario.constants,
                      reference_c=ref)
    return e[1:], e[1:] - e[0], e[0]


def _write_csv(path, header, columns):
    columns = [np.asarray(c) for c in columns]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([x if isinstance(x, str) else repr(float(x))
                        for x in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg):
    """Run the solution operator and write trajectory diagnostics."""
    graph, flow = _load_network(cfg)
    scenario = _scenario(cfg, graph, flow)
    u = _control(cfg, scenario)
    # the initial steady state follows the supplied trajectory's start
    scenario.u_init[:] = u[:, 0]
    system = scenario.system
    t0 = time.perf_counter()
    traj = simulate_system(system, scenario.grid, u, scenario.deltas,
                           scenario.ambient, scenario.u_init)
    wall = time.perf_counter() - t0

    balance = energy_balance(system, traj, scenario.deltas, scenario.ambient)
    times = scenario.grid.times()[1:]
    cfg.out_dir.mkdir(parents=True, exist_ok=True)

    _write_csv(cfg.out_dir / "steady_state.csv",
               ["node_id", "temperature_c"],
               [list(graph.node_ids), traj.values_c[:, 0]])
    min_supply, min_return = _min_consumer_temps(traj, system.bc)
    e_amb, e_init, e0 = _stored_series(scenario, traj)
    _write_csv(cfg.out_dir / "summary.csv",
               ["time_s", "min_temp_c", "mean_temp_c", "max_temp_c",
                "min_consumer_supply_c", "min_consumer_return_c",
                "plant_injection_w"],
               [times, traj.values_c[:, 1:].min(axis=0),
                traj.values_c[:, 1:].mean(axis=0),
                traj.values_c[:, 1:].max(axis=0),
                min_supply, min_return, _plant_injection_w(system, traj)])
    _write_csv(cfg.out_dir / "energy_balance.csv",
               ["time_s", "injection_w", "extraction_w", "ambient_w",
                "storage_w", "residual_w", "residual_rel"],
               [times, balance["injection_w"], balance["extraction_w"],
                balance["ambient_w"], balance["storage_w"],
                balance["residual_w"], balance["residual_rel"]])
    _write_csv(cfg.out_dir / "stored_energy.csv",
               ["time_s", "stored_vs_ambient_j", "stored_vs_initial_j"],
               [times, e_amb, e_init])

    c = constraint_violations(traj, graph, scenario.constraints)
    report = {
        "command": "simulate",
        "n_nodes": graph.n_nodes,
        "n_edges": graph.n_edges,
        "n_steps": scenario.grid.n_steps,
        "dt_s": scenario.grid.dt_s,
        "loss": loss_energy(traj, graph, flow, scenario.price,
                            scenario.constants.cp_j_per_kg_c),
        "loss_unit": "J" if scenario.price.static else "EUR",
        "max_energy_balance_residual_rel": float(balance["residual_rel"].max()),
        "max_constraint_violation_c": max_violation(c),
        "initial_stored_vs_ambient_j": e0,
        "seed": cfg.seed,
        "config": cfg.data,
    }
    _write_json(cfg.out_dir / "report.json", report)
    _write_json(cfg.out_dir / "timing.json", {"wall_time_s": wall})
    cfg.log(f"simulated {scenario.grid.n_steps} steps on {graph.n_nodes} nodes; "
            f"max balance residual {report['max_energy_balance_residual_rel']:.2e}")
    return EXIT_OK


def cmd_optimize(cfg):
    """Optimize the plant controls and report baseline vs optimized."""
    graph, flow = _load_network(cfg)
    scenario = _scenario(cfg, graph, flow)
    u0 = _control(cfg, scenario)
    opt_cfg = OptimizerConfig(**{k: (int(v) if k in ("memory", "max_inner_iterations")
                                     else float(v))
                                 for k, v in cfg.data["optimizer"].items()})
    system = scenario.system
    bc = system.bc

    t0 = time.perf_counter()
    baseline = simulate_system(system, scenario.grid, u0, scenario.deltas,
                               scenario.ambient, scenario.u_init)
    u_opt, opt_report = optimize(scenario, u0, opt_cfg)
    optimized = simulate_system(system, scenario.grid, u_opt, scenario.deltas,
                                scenario.ambient, scenario.u_init)
    wall = time.perf_counter() - t0

    cp = scenario.constants.cp_j_per_kg_c
    loss_base = loss_energy(baseline, graph, flow, scenario.price, cp)
    loss_opt = loss_energy(optimized, graph, flow, scenario.price, cp)
    savings = (loss_base - loss_opt) / loss_base

    times = scenario.grid.times()[1:]
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    plant_ids = [graph.edge_ids[e] for e in bc.producer_edges]

    _write_csv(cfg.out_dir / "controls.csv",
               ["time_s"] + [f"baseline_{p}" for p in plant_ids]
               + [f"optimized_{p}" for p in plant_ids],
               [times] + [u0[i] for i in range(len(plant_ids))]
               + [u_opt[i] for i in range(len(plant_ids))])
    _write_control_file(cfg.out_dir / "optimized_control.csv", graph, bc,
                        scenario.grid, u_opt)

    bs, br = _min_consumer_temps(baseline, bc)
    os_, or_ = _min_consumer_temps(optimized, bc)
    _write_csv(cfg.out_dir / "consumer_temps.csv",
               ["time_s", "baseline_min_supply_c", "baseline_min_return_c",
                "optimized_min_supply_c", "optimized_min_return_c"],
               [times, bs, br, os_, or_])

    eb_amb, eb_init, eb0 = _stored_series(scenario, baseline)
    eo_amb, eo_init, eo0 = _stored_series(scenario, optimized)
    _write_csv(cfg.out_dir / "stored_energy.csv",
               ["time_s", "baseline_vs_ambient_j", "optimized_vs_ambient_j",
                "baseline_vs_initial_j", "optimized_vs_initial_j"],
               [times, eb_amb, eo_amb, eb_init, eo_init])

    price_curve = scenario.price.price_at(times)
    _write_csv(cfg.out_dir / "price.csv", ["time_s", "price_eur_mwh"],
               [times, price_curve])

    inj_base = _plant_injection_w(system, baseline)
    inj_opt = _plant_injection_w(system, optimized)
    loss_steps_base = _loss_steps(scenario, baseline)
    loss_steps_opt = _loss_steps(scenario, optimized)
    _write_csv(cfg.out_dir / "plant_power.csv",
               ["time_s", "baseline_injection_w", "optimized_injection_w",
                "baseline_loss_step", "optimized_loss_step"],
               [times, inj_base, inj_opt, loss_steps_base, loss_steps_opt])

    levels = tuple(cfg.data["quantile_levels"])
    for name, traj in (("baseline", baseline), ("optimized", optimized)):
        q = compute_quantiles(traj, graph, levels)
        keys = ["min", "median"] + [f"p{q_:g}" for q_ in levels]
        _write_csv(cfg.out_dir / f"quantiles_{name}.csv",
                   ["time_s"] + keys, [times] + [q[k] for k in keys])

    _write_csv(cfg.out_dir / "trace.csv",
               ["round", "lambda_p", "inner_iterations", "objective",
                "true_loss", "max_violation_c", "grad_norm"],
               [[str(i) for i in range(len(opt_report.rounds))],
                [r.lambda_p for r in opt_report.rounds],
                [str(r.inner_iterations) for r in opt_report.rounds],
                [r.objective for r in opt_report.rounds],
                [r.true_loss for r in opt_report.rounds],
                [r.max_violation_c for r in opt_report.rounds],
                [r.grad_norm for r in opt_report.rounds]])

    smin = scenario.constraints.consumer_supply_min_c
    rmin = scenario.constraints.consumer_return_min_c
    binding = ((np.abs(os_ - smin) <= _BINDING_TOL_C)
               | (np.abs(or_ - rmin) <= _BINDING_TOL_C))
    report = {
        "command": "optimize",
        "n_nodes": graph.n_nodes,
        "n_edges": graph.n_edges,
        "n_steps": scenario.grid.n_steps,
        "baseline_loss": loss_base,
        "optimized_loss": loss_opt,
        "savings": savings,
        "loss_unit": "J" if scenario.price.static else "EUR",
        "baseline_loss_mwh": loss_base / 3.6e9 if scenario.price.static else None,
        "optimized_loss_mwh": loss_opt / 3.6e9 if scenario.price.static else None,
        "final_max_violation_c": opt_report.final_max_violation_c,
        "binding_fraction": float(binding.mean()),
        "stored_energy_initial_j": eo0,
        "stored_energy_final_j": float(eo_amb[-1]),
        "injection_price_correlation": (
            float(np.corrcoef(inj_opt, price_curve)[0, 1])
            if not scenario.price.static else None),
        "aborted": opt_report.aborted,
        "abort_reason": opt_report.abort_reason,
        "rounds": [{
            "lambda_p": r.lambda_p,
            "inner_iterations": r.inner_iterations,
            "objective": r.objective,
            "true_loss": r.true_loss,
            "max_violation_c": r.max_violation_c,
            "grad_norm": r.grad_norm,
            "converged": r.converged,
        } for r in opt_report.rounds],
        "seed": cfg.seed,
        "config": cfg.data,
    }
    _write_json(cfg.out_dir / "report.json", report)
    _write_json(cfg.out_dir / "timing.json",
                {"wall_time_s": wall,
                 "optimize_wall_time_s": opt_report.wall_time_s})

    cfg.log(f"baseline {loss_base:.6e} -> optimized {loss_opt:.6e} "
            f"({'J' if scenario.price.static else 'EUR'}); "
            f"savings {100 * savings:.2f} %; "
            f"max violation {opt_report.final_max_violation_c:.3f} °C")
    if opt_report.aborted:
        cfg.log(f"optimizer aborted: {opt_report.abort_reason}")
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_verify(cfg):
    """Steady solve cross-checked against a dense oracle and a reference."""
    graph, flow = _load_network(cfg)
    scenario = _scenario(cfg, graph, flow)
    u = _control(cfg, scenario)
    system = assemble(graph, flow, scenario.volumes, scenario.constants)
    y = solve_steady(system, u[:, 0], scenario.deltas[:, 0],
                     scenario.ambient[0])

    dense = np.linalg.solve(
        system.steady_matrix().toarray(),
        system.rhs_steady(u[:, 0], scenario.deltas[:, 0], scenario.ambient[0]))
    dense_mismatch = float(np.max(np.abs(y - dense)))

    ver = cfg.data["verify"]
    tol = float(ver["dense_tolerance_c"])
    report = {
        "command": "verify",
        "n_nodes": graph.n_nodes,
        "dense_mismatch_c": dense_mismatch,
        "dense_tolerance_c": tol,
        "dense_ok": dense_mismatch <= tol,
        "seed": cfg.seed,
        "config": cfg.data,
    }

    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    failed = dense_mismatch > tol

    ref_path = cfg.path("reference_file", required=False, section="verify")
    if ref_path is not None:
        ref = _read_reference(ref_path, graph)
        mismatch = y - ref
        mean_abs = float(np.mean(np.abs(mismatch)))
        counts, bins = np.histogram(mismatch, bins=50)
        _write_csv(cfg.out_dir / "mismatch_histogram.csv",
                   ["bin_left_c", "bin_right_c", "count"],
                   [bins[:-1], bins[1:], [str(c) for c in counts]])
        report["reference_mean_abs_mismatch_c"] = mean_abs
        report["reference_max_abs_mismatch_c"] = float(np.max(np.abs(mismatch)))
        threshold = ver["mean_mismatch_threshold_c"]
        if threshold is not None and mean_abs > float(threshold):
            report["reference_ok"] = False
            failed = True
        else:
            report["reference_ok"] = True

    _write_csv(cfg.out_dir / "steady_state.csv",
               ["node_id", "temperature_c"], [list(graph.node_ids), y])
    _write_json(cfg.out_dir / "verify_report.json", report)
    cfg.log(f"dense-oracle mismatch {dense_mismatch:.3e} °C on "
            f"{graph.n_nodes} nodes")
    if ref_path is not None:
        cfg.log(f"reference mean abs mismatch "
                f"{report['reference_mean_abs_mismatch_c']:.4f} °C")
    return EXIT_NUMERICAL if failed else EXIT_OK


def _read_reference(path, graph):
    values = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["node_id",
                                                             "temperature_c"]:
            raise ParseError(f"{path}:1: expected header 'node_id,temperature_c'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            nid, temp = row[0].strip(), row[1].strip()
            try:
                values[nid] = float(temp)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad temperature") from None
    missing = [nid for nid in graph.node_ids if nid not in values]
    if missing:
        raise ValidationError(f"{path}: missing node {missing[0]!r}")
    return np.array([values[nid] for nid in graph.node_ids])


def cmd_synth_demand(cfg):
    """Low-pass the base load and write per-consumer demand variations."""
    graph, _ = _load_network(cfg)
    base = read_load_series(cfg.path("base_load_file"))
    syn = cfg.data["synthesis"]
    smooth = lowpass(base, float(syn["cutoff_hz"]), order=int(syn["order"]))
    consumer_ids = [graph.edge_ids[e] for e in graph.consumer_edges]
    n = len(consumer_ids)
    mean_target = syn["mean_w_per_consumer"]
    targets = (np.full(n, float(mean_target)) if mean_target is not None
               else np.full(n, smooth.mean() / n))
    series = synthesize_variations(
        smooth, n, band_hz=tuple(float(b) for b in syn["band_hz"]),
        sigma=float(syn["sigma"]), seed=cfg.seed, target_means=targets,
        keys=consumer_ids)
    demands = DemandSet(consumer_ids=tuple(consumer_ids), series=tuple(series))

    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    write_demand_set(demands, cfg.out_dir / "demands.csv")
    _write_csv(cfg.out_dir / "demand_summary.csv",
               ["consumer_edge_id", "mean_w", "min_w", "max_w"],
               [consumer_ids,
                [s.values_w.mean() for s in series],
                [s.values_w.min() for s in series],
                [s.values_w.max() for s in series]])
    cfg.log(f"synthesized {n} demand series "
            f"(mean target {targets[0]:.1f} W each)")
    return EXIT_OK


def cmd_report(args):
    """Recompute and print the summary of a finished optimize run."""
    out_dir = Path(args.out_dir) if args.out_dir else None
    if out_dir is None and args.config:
        cfg = RunConfig.load(args)
        out_dir = cfg.out_dir
    if out_dir is None:
        raise ValidationError("report needs --out-dir or --config")
    report_path = out_dir / "report.json"
    if not report_path.is_file():
        raise ValidationError(f"no report found: {report_path}")
    with open(report_path, encoding="utf-8") as fh:
        report = json.load(fh)

    lines = [f"{k}: {report[k]}" for k in
             ("command", "n_nodes", "n_steps", "baseline_loss",
              "optimized_loss", "savings", "loss_unit",
              "final_max_violation_c", "binding_fraction")
             if k in report]
    if not args.quiet:
        print("\n".join(lines))

    power_path = out_dir / "plant_power.csv"
    if report.get("command") == "optimize" and power_path.is_file():
        with open(power_path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            base_steps, opt_steps = [], []
            for row in reader:
                base_steps.append(float(row["baseline_loss_step"]))
                opt_steps.append(float(row["optimized_loss_step"]))
        loss_base = float(np.sum(base_steps))
        loss_opt = float(np.sum(opt_steps))
        recomputed = (loss_base - loss_opt) / loss_base
        if not np.isclose(recomputed, report["savings"],
                          rtol=_SAVINGS_RECOMPUTE_RTOL, atol=0.0):
            print(f"error: savings in report ({report['savings']!r}) do not "
                  f"match the series ({recomputed!r})", file=sys.stderr)
            return EXIT_NUMERICAL
        if not args.quiet:
            print(f"savings recomputed from series: {recomputed}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _set_threads(n):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(int(n))


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="dhnopt",
        description="District heating network simulation and optimal control",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="path to the JSON run config")
    common.add_argument("--out-dir", help="output directory (overrides config)")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--threads", type=int, help="thread count hint")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_, needs_config=True):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=func, needs_config=needs_config)
        return p

    add("simulate", cmd_simulate, "run the solution operator on a control")
    add("optimize", cmd_optimize, "optimize the plant supply temperatures")
    add("synth-demand", cmd_synth_demand, "synthesize consumer demand profiles")
    add("verify", cmd_verify, "steady solve vs dense oracle and reference")
    add("report", cmd_report, "summarize a finished run", needs_config=False)
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    if args.threads is not None:
        _set_threads(args.threads)
    try:
        if args.func is cmd_report:
            return cmd_report(args)
        if not args.config:
            print("error: --config is required", file=sys.stderr)
            return EXIT_INPUT
        cfg = RunConfig.load(args)
        return args.func(cfg)
    except (ParseError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_INPUT
    except SolverError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
