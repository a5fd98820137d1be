"""Exact gradients via the discrete adjoint and projected L-BFGS.

The gradient of the total objective with respect to the plant controls
is computed by one backward sweep with the transposed system matrix:

    A^T lam_k = dJ/dy_k + B^T lam_{k+1},    k = n_steps .. 1,

where ``B`` is the (diagonal) previous-state operator with zeroed
boundary rows. The control enters only through the Dirichlet entries of
the right-hand side, so ``dJ/du_k = lam_k[plant rows]`` plus the
explicit regularizer derivative. Forward and backward sweeps share one
LU factorization.

Minimization is a gradient-projection flavoured L-BFGS: trial points
are clamped into the control box, and the curvature memory is reset
whenever the active bound set changes. State constraints are enforced
by quadratic-penalty continuation with a geometrically increasing
weight.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import SolverError, ValidationError
from .objective import (constraint_violations, loss_energy, max_violation,
                        objective_loss, penalty, project_control, tikhonov,
                        tikhonov_gradient, _loss_weights)
from .thermal import simulate_system

_ARMIJO_C1 = 1e-4
_MAX_BACKTRACKS = 40
_CURVATURE_EPS = 1e-10
_BOUND_ATOL = 1e-12
_STALL_WINDOW = 15
_STALL_RTOL = 1e-10


@dataclass(frozen=True)
class OptimizerConfig:
    """Inner L-BFGS and outer continuation settings."""

    memory: int = 10
    max_inner_iterations: int = 200
    gradient_tolerance: float = 1e-6
    initial_penalty: float = 10.0
    penalty_factor: float = 10.0
    penalty_stop: float = 1e6

    def __post_init__(self):
        if self.memory < 1 or self.max_inner_iterations < 1:
            raise ValidationError("memory and iteration cap must be >= 1")
        if not (self.gradient_tolerance > 0 and self.initial_penalty > 0
                and self.penalty_stop > 0):
            raise ValidationError("tolerances and penalties must be > 0")
        if not self.penalty_factor > 1:
            raise ValidationError("continuation factor must be > 1")


class ObjectiveEvaluator:
    """Value and adjoint gradient of the penalized objective.

    Caches the forward simulation keyed on the control bytes, so a line
    search evaluating the value at a trial point pays no extra forward
    solve when the gradient is requested at the accepted point.
    """

    def __init__(self, scenario, lambda_p):
        if not lambda_p > 0:
            raise ValidationError("penalty weight must be > 0")
        self.scenario = scenario
        self.lambda_p = float(lambda_p)
        self.system = scenario.system
        self.n_evals = 0
        self.n_gradients = 0
        self._cache_key = None
        self._cache = None

    # -- forward ---------------------------------------------------------

    def _forward(self, u):
        key = u.tobytes()
        if key == self._cache_key:
            return self._cache
        s = self.scenario
        traj = simulate_system(self.system, s.grid, u, s.deltas, s.ambient,
                               s.u_init)
        loss = loss_energy(traj, s.graph, s.flow, s.price,
                           s.constants.cp_j_per_kg_c)
        loss_working = objective_loss(traj, s)
        reg = tikhonov(u, s.grid)
        c = constraint_violations(traj, s.graph, s.constraints)
        pen = penalty(c, self.lambda_p)
        value = loss_working + s.tikhonov_weight * reg + pen
        self._cache_key = key
        self._cache = {"traj": traj, "loss": loss, "tikhonov": reg,
                       "penalty": pen, "violations": c, "value": value}
        self.n_evals += 1
        return self._cache

    def value(self, u):
        u = np.ascontiguousarray(u, dtype=float)
        return self._forward(u)["value"]

    def parts(self, u):
        """Dict with loss, regularizer, penalty, violations and value."""
        u = np.ascontiguousarray(u, dtype=float)
        return dict(self._forward(u))

    # -- backward --------------------------------------------------------

    def value_and_gradient(self, u):
        u = np.ascontiguousarray(u, dtype=float)
        fwd = self._forward(u)
        traj = fwd["traj"]
        s = self.scenario
        sysm = self.system
        bc = sysm.bc
        grid = s.grid
        cp = s.constants.cp_j_per_kg_c
        y = traj.values_c
        n_c = bc.n_consumers

        supply = y[bc.plant_nodes, 1:]
        ret = y[bc.plant_return_nodes, 1:]
        w = _loss_weights(s.price, grid.times()[1:], supply, ret, working=True)
        dloss = cp * grid.dt_s * sysm.plant_massflow[:, None] * w

        c = fwd["violations"]
        hinge = self.lambda_p * np.maximum(0.0, c)
        hinge_supply = hinge[:n_c, :]
        hinge_return = hinge[n_c:, :]

        grad = np.zeros_like(u)
        lam_next = np.zeros(sysm.graph.n_nodes)
        for k in range(grid.n_steps, 0, -1):
            g = sysm.B_diag * lam_next
            np.add.at(g, bc.plant_nodes, dloss[:, k - 1])
            np.add.at(g, bc.plant_return_nodes, -dloss[:, k - 1])
            # d/dy of lambda/2 * max(0, bound - y)^2 is -lambda * hinge
            np.add.at(g, bc.consumer_supply_nodes, -hinge_supply[:, k - 1])
            np.add.at(g, bc.consumer_return_nodes, -hinge_return[:, k - 1])
            lam = sysm.solve_adjoint(g)
            grad[:, k - 1] = lam[bc.plant_nodes]
            lam_next = lam

        grad += s.tikhonov_weight * tikhonov_gradient(u, grid)
        if not np.all(np.isfinite(grad)):
            raise SolverError("adjoint sweep produced a non-finite gradient")
        self.n_gradients += 1
        return fwd["value"], grad


def gradient(scenario, u, lambda_p=10.0):
    """Adjoint gradient of the total objective at ``u``."""
    return ObjectiveEvaluator(scenario, lambda_p).value_and_gradient(u)[1]


# ---------------------------------------------------------------------------
# projected L-BFGS
# ---------------------------------------------------------------------------

@dataclass
class LbfgsResult:
    u: np.ndarray
    f: float
    g: np.ndarray
    iterations: int
    converged: bool
    line_search_failed: bool
    trace: list = field(default_factory=list)


def _projected_gradient(x, g, lo, hi):
    """Gradient with components pushing against an active bound zeroed.

    At the lower bound only a negative component can still decrease the
    objective, at the upper bound only a positive one; everywhere else
    the plain gradient applies. The infinity norm of this vector is the
    box-constrained stationarity measure.
    """
    pg = g.copy()
    at_lo = x <= lo + _BOUND_ATOL
    at_hi = x >= hi - _BOUND_ATOL
    pg[at_lo] = np.minimum(g[at_lo], 0.0)
    pg[at_hi] = np.maximum(g[at_hi], 0.0)
    return pg


def _two_loop(g, s_list, y_list):
    q = g.copy()
    alphas = []
    rhos = [1.0 / float(np.vdot(y, s)) for s, y in zip(s_list, y_list)]
    for s, y, rho in zip(reversed(s_list), reversed(y_list), reversed(rhos)):
        a = rho * float(np.vdot(s, q))
        alphas.append(a)
        q -= a * y
    s, y = s_list[-1], y_list[-1]
    q *= float(np.vdot(s, y) / np.vdot(y, y))
    for (s, y, rho), a in zip(zip(s_list, y_list, rhos), reversed(alphas)):
        b = rho * float(np.vdot(y, q))
        q += (a - b) * s
    return q


def lbfgs_minimize(fg, u0, bounds, config=None, f_only=None):
    """Minimize within a box via limited-memory BFGS with projection.

    Parameters
    ----------
    fg : callable
        Returns ``(value, gradient)`` at a control array.
    u0 : ndarray
        Start point; projected into the box first.
    bounds : tuple
        ``(lo, hi)`` scalars or arrays broadcastable to the control.
    config : OptimizerConfig
    f_only : callable, optional
        Cheaper value-only evaluation used for line-search trials;
        defaults to ``fg(u)[0]``.

    Trial points are clamped into the box; sufficient decrease is
    measured against the projected step, and the curvature memory is
    dropped whenever the set of active bounds changes. A failed line
    search returns the best iterate with a flag instead of raising.

    Converged means the projected-gradient infinity norm (components
    pushing against an active bound zeroed) fell below
    ``tolerance * (1 + |f|)``.
    """
    if config is None:
        config = OptimizerConfig()
    if f_only is None:
        f_only = lambda u: fg(u)[0]
    lo, hi = bounds

    x = project_control(np.asarray(u0, dtype=float), bounds)
    f, g = fg(x)
    s_mem, y_mem = [], []
    trace = []
    converged = False
    ls_failed = False
    active = (x <= lo + _BOUND_ATOL) | (x >= hi - _BOUND_ATOL)
    it = 0
    window_f = f

    for it in range(1, config.max_inner_iterations + 1):
        pg = _projected_gradient(x, g, lo, hi)
        pg_norm = float(np.max(np.abs(pg)))
        trace.append({"iteration": it - 1, "f": f, "pg_norm": pg_norm})
        if pg_norm <= config.gradient_tolerance * (1.0 + abs(f)):
            converged = True
            break

        if s_mem:
            d = -_two_loop(g, s_mem, y_mem)
            alpha0 = 1.0
            if float(np.vdot(d, g)) >= 0.0:
                s_mem.clear()
                y_mem.clear()
                d = -g
                alpha0 = 1.0 / pg_norm  # first trial moves about 1 °C
        else:
            d = -g
            alpha0 = 1.0 / pg_norm

        alpha = alpha0
        accepted = False
        for _ in range(_MAX_BACKTRACKS):
            xt = project_control(x + alpha * d, bounds)
            step = xt - x
            if not np.any(step):
                break
            ft = f_only(xt)
            slope = min(0.0, float(np.vdot(g, step)))
            if ft <= f + _ARMIJO_C1 * slope:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            ls_failed = True
            break

        f_new, g_new = fg(xt)
        s_vec = xt - x
        y_vec = g_new - g
        active_new = (xt <= lo + _BOUND_ATOL) | (xt >= hi - _BOUND_ATOL)
        if np.any(active_new != active):
            s_mem.clear()
            y_mem.clear()
        else:
            sy = float(np.vdot(s_vec, y_vec))
            if sy > _CURVATURE_EPS * float(np.linalg.norm(s_vec)
                                           * np.linalg.norm(y_vec)):
                s_mem.append(s_vec)
                y_mem.append(y_vec)
                if len(s_mem) > config.memory:
                    s_mem.pop(0)
                    y_mem.pop(0)
        x, f, g, active = xt, f_new, g_new, active_new

        # near the hinge walls the objective flattens below float
        # resolution; stop once a whole window makes no progress
        if it % _STALL_WINDOW == 0:
            if window_f - f <= _STALL_RTOL * (1.0 + abs(f)):
                break
            window_f = f

    return LbfgsResult(u=x, f=f, g=g, iterations=it, converged=converged,
                       line_search_failed=ls_failed, trace=trace)


# ---------------------------------------------------------------------------
# penalty continuation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RoundStats:
    """Summary of one outer continuation round."""

    lambda_p: float
    inner_iterations: int
    objective: float
    true_loss: float
    max_violation_c: float
    grad_norm: float
    converged: bool


@dataclass
class OptimizationReport:
    rounds: list
    final_control: np.ndarray
    final_max_violation_c: float
    wall_time_s: float
    aborted: bool = False
    abort_reason: str = ""


def optimize(scenario, u0=None, config=None):
    """Penalty-continuation loop around the projected L-BFGS.

    Each round minimizes the objective at the current penalty weight,
    warm-starts the next round from its result, and multiplies the
    weight by the continuation factor; the loop stops after the first
    round whose weight exceeds the stop threshold. A round that raises
    the unpenalized loss while the violations grow indicates a diverged
    continuation; the report is flagged and returned with the best
    control found so far.
    """
    if config is None:
        config = OptimizerConfig()
    bounds = scenario.constraints.control_bounds
    n_p = scenario.system.bc.n_plants
    if u0 is None:
        u0 = np.tile(scenario.u_init[:, None], (1, scenario.grid.n_steps))
    u = project_control(np.asarray(u0, dtype=float), bounds)
    if u.shape != (n_p, scenario.grid.n_steps):
        raise ValidationError(
            f"control must have shape ({n_p}, {scenario.grid.n_steps}), got {u.shape}"
        )

    start = time.perf_counter()
    rounds = []
    aborted = False
    reason = ""
    lam = config.initial_penalty
    prev = None
    while True:
        ev = ObjectiveEvaluator(scenario, lam)
        res = lbfgs_minimize(ev.value_and_gradient, u, bounds, config,
                             f_only=ev.value)
        parts = ev.parts(res.u)
        viol = max_violation(parts["violations"])
        rounds.append(RoundStats(
            lambda_p=lam,
            inner_iterations=res.iterations,
            objective=res.f,
            true_loss=parts["loss"],
            max_violation_c=viol,
            grad_norm=float(np.max(np.abs(res.g))),
            converged=res.converged,
        ))
        if prev is not None:
            loss_up = parts["loss"] > prev.true_loss * (1 + 1e-12) + 1e-9
            viol_up = viol > prev.max_violation_c + 1e-9
            if loss_up and viol_up:
                aborted = True
                reason = (
                    f"round at lambda_p={lam:g} raised the loss "
                    f"({prev.true_loss:.6e} -> {parts['loss']:.6e}) while the "
                    f"max violation grew ({prev.max_violation_c:.3e} -> {viol:.3e} °C)"
                )
                break
        u = res.u
        prev = rounds[-1]
        if lam > config.penalty_stop:
            break
        lam *= config.penalty_factor

    report = OptimizationReport(
        rounds=rounds,
        final_control=u,
        final_max_violation_c=rounds[-1].max_violation_c if not aborted
        else prev.max_violation_c if prev else float("nan"),
        wall_time_s=time.perf_counter() - start,
        aborted=aborted,
        abort_reason=reason,
    )
    return u, report
