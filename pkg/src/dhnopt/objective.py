"""Operating-cost objective, regularization, constraints and penalties.

The scalar objective combines the energy (or monetary) cost of plant
injection, a first-order smoothness regularizer on the control, and a
quadratic hinge penalty on the consumer temperature constraints. All
functions here are pure and operate on immutable inputs.

Units: :func:`loss_energy` reports joules (static prices) or euros
(dynamic prices). The composed objective converts the static loss to
megawatt hours so that the °C-scale hinge penalty can dominate it
within the default continuation schedule; a joule-scale loss would keep
°C-sized violations stationary at any affordable penalty weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .thermal import DEFAULT_CP, BoundarySpec

#: Joules per megawatt hour; converts energy to the price curve's unit.
J_PER_MWH = 3.6e9


@dataclass(frozen=True)
class PriceModel:
    """Energy price weighting for the injection cost.

    A static model weights every step by 1, so the loss is a plain
    energy. A dynamic model carries a piecewise-linear price curve
    ``p(t)`` in EUR/MWh plus a generation efficiency factor ``alpha``
    (applied while the plant injects heat) and a recovery factor
    ``beta`` (applied when the plant return runs hotter than its
    supply, i.e. the network gives heat back).
    """

    alpha: float = 1.0
    beta: float = 0.0
    static: bool = True
    times_s: np.ndarray | None = None
    prices_eur_mwh: np.ndarray | None = None

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValidationError("alpha must be > 0")
        if self.beta < 0:
            raise ValidationError("beta must be >= 0")
        if not self.static:
            if self.times_s is None or self.prices_eur_mwh is None:
                raise ValidationError("dynamic price model needs a price curve")
            t = np.asarray(self.times_s, dtype=float)
            p = np.asarray(self.prices_eur_mwh, dtype=float)
            if t.ndim != 1 or t.shape != p.shape or t.size < 2:
                raise ValidationError("price curve needs matching 1-d knots")
            if np.any(np.diff(t) <= 0):
                raise ValidationError("price knots must be strictly increasing")
            if not (np.all(np.isfinite(t)) and np.all(np.isfinite(p))):
                raise ValidationError("price curve contains non-finite values")
            object.__setattr__(self, "times_s", t)
            object.__setattr__(self, "prices_eur_mwh", p)

    @classmethod
    def static_price(cls, alpha=1.0, beta=0.0):
        return cls(alpha=alpha, beta=beta, static=True)

    @classmethod
    def from_curve(cls, times_s, prices_eur_mwh, alpha=1.0, beta=0.0):
        return cls(alpha=alpha, beta=beta, static=False,
                   times_s=times_s, prices_eur_mwh=prices_eur_mwh)

    def price_at(self, t_s):
        """Linear interpolation of the price curve, EUR/MWh."""
        if self.static:
            return np.ones_like(np.asarray(t_s, dtype=float))
        t = np.asarray(t_s, dtype=float)
        if np.any(t < self.times_s[0]) or np.any(t > self.times_s[-1]):
            raise ValidationError(
                f"price curve covers [{self.times_s[0]}, {self.times_s[-1]}] s, "
                f"queried outside"
            )
        return np.interp(t, self.times_s, self.prices_eur_mwh)


def price_weight(t_s, y_supply, y_return, model):
    """Loss weight of one plant at one time.

    Static model: 1. Dynamic model: ``p(t) * alpha`` while the plant
    supplies hotter water than it receives, else ``p(t) * beta``
    (recovered heat), in EUR/MWh.
    """
    if model.static:
        return 1.0
    p = float(model.price_at(t_s))
    return p * (model.alpha if y_supply >= y_return else model.beta)


def _loss_weights(model, times_s, supply, ret, working=False):
    """Per-plant per-step loss weights including the unit conversion.

    Shape ``(n_plants, n_steps)``. For a static model the weights are 1
    and the loss is in joules; for a dynamic model the EUR/MWh curve is
    converted to EUR/J so the loss comes out in euros. With
    ``working=True`` a static model weighs per MWh instead of per joule
    (the objective's working unit).
    """
    if model.static:
        scale = 1.0 / J_PER_MWH if working else 1.0
        return np.full_like(supply, scale)
    p = model.price_at(times_s)[None, :]
    factor = np.where(supply >= ret, model.alpha, model.beta)
    return p * factor / J_PER_MWH


@dataclass(frozen=True)
class ConstraintSet:
    """Temperature bounds at consumers and plants (°C)."""

    consumer_supply_min_c: float = 80.0
    consumer_return_min_c: float = 30.0
    plant_max_c: float = 140.0
    plant_min_c: float = 30.0

    def __post_init__(self):
        if not (self.plant_max_c > self.consumer_supply_min_c
                > self.consumer_return_min_c):
            raise ValidationError(
                "need plant max > consumer supply min > consumer return min"
            )
        if not self.plant_min_c < self.plant_max_c:
            raise ValidationError("plant bounds are empty")

    @property
    def control_bounds(self):
        return (self.plant_min_c, self.plant_max_c)


@dataclass(frozen=True)
class ObjectiveConfig:
    """Weights and models combined into the total objective."""

    tikhonov_weight: float
    penalty_weight: float
    price: PriceModel
    constraints: ConstraintSet

    def __post_init__(self):
        if self.tikhonov_weight < 0:
            raise ValidationError("tikhonov weight must be >= 0")
        if not self.penalty_weight > 0:
            raise ValidationError("penalty weight must be > 0")


def loss_energy_steps(traj, graph, flow, price, cp_j_per_kg_c=DEFAULT_CP):
    """Per-step contributions to the operating cost, shape ``(n_steps,)``.

    Step ``k`` contributes ``cp * dt * sum_plants mdot_p * (y_supply -
    y_return) * w_k`` with the weight from the price model; joules for a
    static model, euros for a dynamic one.
    """
    bc = BoundarySpec.from_graph(graph)
    y = traj.values_c
    grid = traj.grid
    mdot = np.abs(flow.massflow_kg_s[bc.producer_edges])
    supply = y[bc.plant_nodes, 1:]
    ret = y[bc.plant_return_nodes, 1:]
    w = _loss_weights(price, grid.times()[1:], supply, ret)
    terms = cp_j_per_kg_c * grid.dt_s * mdot[:, None] * (supply - ret) * w
    return terms.sum(axis=0)


def loss_energy(traj, graph, flow, price, cp_j_per_kg_c=DEFAULT_CP):
    """Cost of operating the plants over the horizon.

    Rectangle rule over the solved steps: the sum of
    :func:`loss_energy_steps`. The value is in joules for a static
    price model and in euros for a dynamic one (the EUR/MWh curve is
    applied per joule).
    """
    return float(loss_energy_steps(traj, graph, flow, price,
                                   cp_j_per_kg_c).sum())


def tikhonov(u, grid):
    """Quadratic variation of the control: ``sum ((u_k - u_{k-1})/dt)^2``.

    Summed over all plants; needs at least two steps.
    """
    u = np.atleast_2d(np.asarray(u, dtype=float))
    if u.shape[1] < 2:
        raise ValidationError("tikhonov needs a control with at least 2 steps")
    d = np.diff(u, axis=1) / grid.dt_s
    return float((d * d).sum())


def tikhonov_gradient(u, grid):
    """Exact gradient of :func:`tikhonov`, same shape as ``u``."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    d = np.diff(u, axis=1) / grid.dt_s
    g = np.zeros_like(u)
    g[:, :-1] -= 2.0 * d / grid.dt_s
    g[:, 1:] += 2.0 * d / grid.dt_s
    return g


def constraint_violations(traj, graph, constraints):
    """Signed constraint values for every consumer and solved step.

    Rows stack the supply-side constraints ``smin - y_supply`` over all
    consumers, then the return-side constraints ``rmin - y_return``;
    positive entries are violations in °C. Shape
    ``(2 * n_consumers, n_steps)``.
    """
    bc = BoundarySpec.from_graph(graph)
    y = traj.values_c
    c_supply = constraints.consumer_supply_min_c - y[bc.consumer_supply_nodes, 1:]
    c_return = constraints.consumer_return_min_c - y[bc.consumer_return_nodes, 1:]
    return np.vstack([c_supply, c_return])


def max_violation(c_values):
    """Largest violation in °C (0 when all constraints hold)."""
    return float(max(0.0, np.max(c_values)))


def penalty(c_values, lambda_p):
    """Quadratic hinge penalty ``lambda/2 * sum max(0, c)^2``."""
    if not lambda_p > 0:
        raise ValidationError("penalty weight must be > 0")
    h = np.maximum(0.0, np.asarray(c_values, dtype=float))
    return float(0.5 * lambda_p * (h * h).sum())


def project_control(u, bounds):
    """Componentwise clamp of the control into ``[lo, hi]``."""
    lo, hi = bounds
    return np.clip(np.asarray(u, dtype=float), lo, hi)


def objective_loss(traj, scenario):
    """Injection cost in the objective's working unit (MWh or EUR)."""
    loss = loss_energy(traj, scenario.graph, scenario.flow, scenario.price,
                       scenario.constants.cp_j_per_kg_c)
    return loss / J_PER_MWH if scenario.price.static else loss


def total_objective(scenario, u, lambda_p=10.0):
    """Loss + smoothness regularizer + constraint penalty.

    The state trajectory is simulated once and shared by the loss and
    the penalty terms. The loss enters in the working unit (MWh for a
    static price model, EUR for a dynamic one).
    """
    from .thermal import simulate
    traj = simulate(scenario.graph, scenario.flow, scenario, u)
    reg = scenario.tikhonov_weight * tikhonov(u, scenario.grid)
    c = constraint_violations(traj, scenario.graph, scenario.constraints)
    return objective_loss(traj, scenario) + reg + penalty(c, lambda_p)
