"""Sparse thermal transport model and its solution operator.

The network temperature field is governed by advection along the fixed
mass flows plus heat loss to ambient. Per node ``i`` (water volume
``V_i``, ambient-loss coefficient ``S_ii``) the semi-discrete balance is

    rho*cp*V_i * dy_i/dt + cp * sum_e mdot_e * (y_i - y_up(e))
        + S_ii * (y_i - y_a) = 0,

where the advection sum runs over the edges bringing flow into ``i``
and ``y_up(e)`` is the upstream neighbour (first-order upwinding; axial
diffusion is negligible in these convection-dominated flows). Backward
Euler in time gives one sparse linear system

    (rho*cp/dt * V + cp * G + S) y_t = rho*cp/dt * V y_{t-1} + S y_a

whose matrix does not change over time for fixed flows and step size,
so a single LU factorization serves the whole horizon. Boundary
conditions replace rows: plant supply nodes are held at the control
temperature, and each consumer edge enforces a prescribed supply-to-
return temperature drop representing the extracted heat.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverError, ValidationError

#: Default physical constants for hot water.
DEFAULT_CP = 4186.0      # J/(kg °C)
DEFAULT_RHO = 1000.0     # kg/m^3
DEFAULT_AMBIENT = 10.0   # °C


@dataclass(frozen=True)
class PhysicalConstants:
    """Water properties and the ambient temperature.

    ``ambient_c`` may be a scalar or a per-time-step series.
    """

    cp_j_per_kg_c: float = DEFAULT_CP
    rho_kg_m3: float = DEFAULT_RHO
    ambient_c: float | np.ndarray = DEFAULT_AMBIENT

    def __post_init__(self):
        if not self.cp_j_per_kg_c > 0:
            raise ValidationError("cp must be > 0")
        if not self.rho_kg_m3 > 0:
            raise ValidationError("rho must be > 0")

    def ambient_series(self, n_steps):
        """Ambient temperature on the grid, shape ``(n_steps + 1,)``."""
        amb = np.asarray(self.ambient_c, dtype=float)
        if amb.ndim == 0:
            return np.full(n_steps + 1, float(amb))
        if amb.shape != (n_steps + 1,):
            raise ValidationError(
                f"ambient series has length {amb.shape[0]}, expected {n_steps + 1}"
            )
        return amb


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid ``t_k = k * dt`` for ``k = 0 .. n_steps``."""

    dt_s: float
    n_steps: int

    def __post_init__(self):
        if not self.dt_s > 0:
            raise ValidationError("dt must be > 0")
        if self.n_steps < 1:
            raise ValidationError("need at least one time step")

    @property
    def horizon_s(self):
        return self.dt_s * self.n_steps

    def times(self):
        return np.arange(self.n_steps + 1) * self.dt_s


@dataclass(frozen=True)
class BoundarySpec:
    """Index bookkeeping for the boundary rows.

    ``plant_nodes`` are the supply-side heads of the producer edges and
    carry Dirichlet rows (the control). ``consumer_return_nodes`` are
    the return-side heads of the consumer edges and carry the
    temperature-drop rows. Edge orientation equals flow direction for
    both kinds (enforced at flow validation).
    """

    producer_edges: np.ndarray
    plant_nodes: np.ndarray
    plant_return_nodes: np.ndarray
    consumer_edges: np.ndarray
    consumer_supply_nodes: np.ndarray
    consumer_return_nodes: np.ndarray

    @classmethod
    def from_graph(cls, graph):
        prod = graph.producer_edges
        cons = graph.consumer_edges
        if prod.size == 0:
            raise ValidationError("network has no producer edge")
        if cons.size == 0:
            raise ValidationError("network has no consumer edge")
        plant_nodes = graph.edge_head[prod]
        if len(np.unique(plant_nodes)) != len(plant_nodes):
            raise ValidationError("two producer edges share a plant supply node")
        creturn = graph.edge_head[cons]
        if len(np.unique(creturn)) != len(creturn):
            raise ValidationError("two consumer edges share a return node")
        overlap = np.intersect1d(plant_nodes, creturn)
        if overlap.size:
            raise ValidationError("plant node also a consumer return node")
        return cls(
            producer_edges=prod,
            plant_nodes=plant_nodes,
            plant_return_nodes=graph.edge_tail[prod],
            consumer_edges=cons,
            consumer_supply_nodes=graph.edge_tail[cons],
            consumer_return_nodes=creturn,
        )

    @property
    def n_plants(self):
        return len(self.producer_edges)

    @property
    def n_consumers(self):
        return len(self.consumer_edges)


def _advection_matrix(graph, flow):
    """Upwinded advection operator G (kg/s entries).

    Row ``i`` has the total outgoing flow on the diagonal and
    ``-|mdot_e|`` at the upstream neighbour of every incoming edge, so
    ``cp * (G y)_i`` is the net advected enthalpy leaving node ``i``.
    Row sums vanish by mass conservation.
    """
    m = np.asarray(flow.massflow_kg_s, dtype=float)
    up = np.where(m > 0, graph.edge_tail, graph.edge_head)
    down = np.where(m > 0, graph.edge_head, graph.edge_tail)
    mag = np.abs(m)
    rows = np.concatenate([up, down])
    cols = np.concatenate([up, up])
    vals = np.concatenate([mag, -mag])
    return sp.csr_matrix((vals, (rows, cols)),
                         shape=(graph.n_nodes, graph.n_nodes))


def _ambient_loss_diagonal(graph):
    """Per-node loss coefficient: half of each incident pipe's k*l.

    Consumer and producer edges are heat-exchanger interfaces and
    contribute no ambient loss regardless of their file parameters.
    """
    s = np.zeros(graph.n_nodes)
    pipes = graph.pipe_edges
    half = graph.htc_w_per_m_c[pipes] * graph.length_m[pipes] / 2.0
    np.add.at(s, graph.edge_tail[pipes], half)
    np.add.at(s, graph.edge_head[pipes], half)
    return s


class SystemMatrices:
    """Assembled sparse operators plus cached LU factorizations.

    The transient matrix ``A = rho*cp/dt * V + cp*G + S`` and the steady
    matrix ``cp*G + S`` share their boundary-row replacement; both are
    factorized at most once. ``lu.solve(b, trans='T')`` provides the
    transposed solves needed by adjoint computations.
    """

    def __init__(self, graph, flow, volumes, constants, dt_s, bc):
        self.graph = graph
        self.flow = flow
        self.bc = bc
        self.constants = constants
        self.dt_s = float(dt_s) if dt_s is not None else None
        n = graph.n_nodes

        self.G = _advection_matrix(graph, flow)
        self.S_diag = _ambient_loss_diagonal(graph)
        self.V_diag = volumes.volumes_m3.copy()
        self.plant_massflow = np.abs(flow.massflow_kg_s[bc.producer_edges])
        self.consumer_massflow = np.abs(flow.massflow_kg_s[bc.consumer_edges])

        replaced = np.zeros(n, dtype=bool)
        replaced[bc.plant_nodes] = True
        replaced[bc.consumer_return_nodes] = True
        self.replaced_rows = replaced
        self.interior = ~replaced
        self._check_boundary_inflows()

        cp = constants.cp_j_per_kg_c
        rho = constants.rho_kg_m3
        # rows of the previous-state operator vanish where rows of A are replaced
        if self.dt_s is not None:
            self.B_diag = np.where(replaced, 0.0, rho * cp / self.dt_s * self.V_diag)
        else:
            self.B_diag = None

        self._lu_transient = None
        self._lu_steady = None

    def _check_boundary_inflows(self):
        """Boundary rows must own all flow into their node.

        A replaced row discards the node's physical balance, so any
        additional inflow there would be silently lost. Consumer return
        nodes may only receive the consumer edge's flow (give each
        substation a dedicated return port that joins the trunk at a
        separate junction node), and plant supply nodes only the
        producer edge's flow.
        """
        graph, m = self.graph, self.flow.massflow_kg_s
        down = np.where(m > 0, graph.edge_head, graph.edge_tail)
        inflows = [[] for _ in range(graph.n_nodes)]
        for e, node in enumerate(down):
            inflows[node].append(e)
        for e, node in zip(self.bc.consumer_edges, self.bc.consumer_return_nodes):
            if inflows[node] != [e]:
                raise ValidationError(
                    f"consumer return node {graph.node_ids[node]!r} receives "
                    f"flow besides its consumer edge; use a dedicated return "
                    f"port per substation"
                )
        for e, node in zip(self.bc.producer_edges, self.bc.plant_nodes):
            if inflows[node] != [e]:
                raise ValidationError(
                    f"plant supply node {graph.node_ids[node]!r} receives "
                    f"flow besides its producer edge"
                )

    # -- assembly -------------------------------------------------------

    def _build_matrix(self, include_time):
        n = self.graph.n_nodes
        cp = self.constants.cp_j_per_kg_c
        rho = self.constants.rho_kg_m3
        G = self.G.tocoo()
        rows = [G.row, np.arange(n)]
        cols = [G.col, np.arange(n)]
        vals = [cp * G.data, self.S_diag.astype(float)]
        if include_time:
            rows.append(np.arange(n))
            cols.append(np.arange(n))
            vals.append(rho * cp / self.dt_s * self.V_diag)
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        keep = ~self.replaced_rows[rows]
        rows, cols, vals = rows[keep], cols[keep], vals[keep]

        bc = self.bc
        rows = np.concatenate([rows, bc.plant_nodes,
                               bc.consumer_return_nodes, bc.consumer_return_nodes])
        cols = np.concatenate([cols, bc.plant_nodes,
                               bc.consumer_return_nodes, bc.consumer_supply_nodes])
        vals = np.concatenate([vals, np.ones(bc.n_plants),
                               np.ones(bc.n_consumers), -np.ones(bc.n_consumers)])
        return sp.csc_matrix((vals, (rows, cols)), shape=(n, n))

    def _factorize(self, matrix, label):
        try:
            lu = spla.splu(matrix)
        except RuntimeError as exc:
            raise SolverError(f"{label} system matrix is singular: {exc}") from None
        return lu

    @property
    def lu_transient(self):
        if self.dt_s is None:
            raise SolverError("system was assembled without a time step")
        if self._lu_transient is None:
            self._lu_transient = self._factorize(self._build_matrix(True), "transient")
        return self._lu_transient

    @property
    def lu_steady(self):
        if self._lu_steady is None:
            self._lu_steady = self._factorize(self._build_matrix(False), "steady")
        return self._lu_steady

    def transient_matrix(self):
        return self._build_matrix(True)

    def steady_matrix(self):
        return self._build_matrix(False)

    # -- right-hand sides ------------------------------------------------

    def _check_bc(self, plant_temps, deltas):
        plant_temps = np.asarray(plant_temps, dtype=float)
        deltas = np.asarray(deltas, dtype=float)
        if plant_temps.shape != (self.bc.n_plants,):
            raise ValidationError(
                f"expected {self.bc.n_plants} plant temperatures, got {plant_temps.shape}"
            )
        if deltas.shape != (self.bc.n_consumers,):
            raise ValidationError(
                f"expected {self.bc.n_consumers} consumer deltas, got {deltas.shape}"
            )
        if np.any(deltas < 0):
            raise ValidationError("consumer temperature deltas must be >= 0")
        return plant_temps, deltas

    def _rhs_steady_unchecked(self, plant_temps, deltas, ambient_c):
        b = self.S_diag * ambient_c
        b[self.replaced_rows] = 0.0
        b[self.bc.plant_nodes] = plant_temps
        b[self.bc.consumer_return_nodes] = -deltas
        return b

    def rhs_steady(self, plant_temps, deltas, ambient_c):
        plant_temps, deltas = self._check_bc(plant_temps, deltas)
        return self._rhs_steady_unchecked(plant_temps, deltas, ambient_c)

    def _rhs_transient_unchecked(self, y_prev, plant_temps, deltas, ambient_c):
        b = self._rhs_steady_unchecked(plant_temps, deltas, ambient_c)
        b += self.B_diag * y_prev  # B rows vanish where rows are replaced
        return b

    def rhs_transient(self, y_prev, plant_temps, deltas, ambient_c):
        plant_temps, deltas = self._check_bc(plant_temps, deltas)
        return self._rhs_transient_unchecked(y_prev, plant_temps, deltas,
                                             ambient_c)

    def _solve(self, lu, b):
        y = lu.solve(b)
        if not np.all(np.isfinite(y)):
            raise SolverError("linear solve produced non-finite temperatures")
        return y

    def solve_adjoint(self, b):
        """Solve ``A^T x = b`` with the transient factorization."""
        return self.lu_transient.solve(b, trans="T")


def assemble(graph, flow, volumes, constants, dt_s=None, bc=None):
    """Assemble the sparse system for a network with fixed flows.

    ``dt_s=None`` builds a steady-only system. The boundary spec
    defaults to the one implied by the graph's producer and consumer
    edges.
    """
    if bc is None:
        bc = BoundarySpec.from_graph(graph)
    return SystemMatrices(graph, flow, volumes, constants, dt_s, bc)


def solve_steady(system, plant_temps, deltas, ambient_c):
    """Steady temperatures under fixed boundary values."""
    b = system.rhs_steady(plant_temps, deltas, ambient_c)
    return system._solve(system.lu_steady, b)


def step(system, y_prev, plant_temps, deltas, ambient_c):
    """One backward-Euler step from ``y_prev``."""
    if not np.all(np.isfinite(y_prev)):
        raise SolverError("previous state contains non-finite values")
    b = system.rhs_transient(y_prev, plant_temps, deltas, ambient_c)
    return system._solve(system.lu_transient, b)


@dataclass
class StateTrajectory:
    """Node temperatures over the grid, shape ``(n_nodes, n_steps + 1)``.

    Column 0 is the initial state.
    """

    values_c: np.ndarray
    grid: TimeGrid

    def __post_init__(self):
        if not np.all(np.isfinite(self.values_c)):
            raise SolverError("trajectory contains non-finite temperatures")


def simulate_system(system, grid, u, deltas, ambient, u_init=None):
    """Run the solution operator: control trajectory -> state trajectory.

    Parameters
    ----------
    system : SystemMatrices
        Assembled with ``dt_s == grid.dt_s``.
    grid : TimeGrid
    u : ndarray, shape (n_plants, n_steps)
        Plant supply temperature at steps ``1 .. n_steps``.
    deltas : ndarray, shape (n_consumers, n_steps + 1)
        Consumer temperature drops on the grid (column 0 feeds the
        initial steady state).
    ambient : ndarray, shape (n_steps + 1,)
    u_init : ndarray, shape (n_plants,), optional
        Plant temperatures defining the initial steady state; defaults
        to the first control column.

    The initial state is the steady solution under ``u_init`` and the
    grid's first boundary values; the matrix is factorized once and
    reused for every step.
    """
    u = np.asarray(u, dtype=float)
    n_p, n_c = system.bc.n_plants, system.bc.n_consumers
    if u.shape != (n_p, grid.n_steps):
        raise ValidationError(
            f"control must have shape ({n_p}, {grid.n_steps}), got {u.shape}"
        )
    deltas = np.asarray(deltas, dtype=float)
    if deltas.shape != (n_c, grid.n_steps + 1):
        raise ValidationError(
            f"deltas must have shape ({n_c}, {grid.n_steps + 1}), got {deltas.shape}"
        )
    ambient = np.asarray(ambient, dtype=float)
    if u_init is None:
        u_init = u[:, 0]

    if np.any(deltas < 0):
        raise ValidationError("consumer temperature deltas must be >= 0")
    y = np.empty((system.graph.n_nodes, grid.n_steps + 1))
    y[:, 0] = solve_steady(system, u_init, deltas[:, 0], ambient[0])
    lu = system.lu_transient
    for k in range(1, grid.n_steps + 1):
        b = system._rhs_transient_unchecked(y[:, k - 1], u[:, k - 1],
                                            deltas[:, k], ambient[k])
        y[:, k] = lu.solve(b)
    return StateTrajectory(values_c=y, grid=grid)


def simulate(graph, flow, scenario, u):
    """Solution operator on a scenario's grid and boundary data.

    ``graph``/``flow`` may differ from the scenario's own (a fresh
    system is assembled then); passing the scenario's instances reuses
    its cached factorization.
    """
    if graph is scenario.graph and flow is scenario.flow:
        system = scenario.system
    else:
        from .network import control_volumes
        system = assemble(graph, flow, control_volumes(graph),
                          scenario.constants, scenario.grid.dt_s)
    return simulate_system(system, scenario.grid, u, scenario.deltas,
                           scenario.ambient, scenario.u_init)


def demand_to_delta(power_w, massflow_kg_s, cp_j_per_kg_c):
    """Temperature drop representing an extracted power.

    ``y_d = phi / (cp * mdot)``; works elementwise on arrays.
    """
    power_w = np.asarray(power_w, dtype=float)
    if np.any(power_w < 0):
        raise ValidationError("consumed power must be >= 0")
    if np.any(np.asarray(massflow_kg_s) <= 0):
        raise ValidationError("consumer mass flow must be > 0")
    return power_w / (cp_j_per_kg_c * massflow_kg_s)


def stored_energy(y, volumes, constants, reference_c=0.0):
    """Thermal energy stored in the water volume, relative to a reference.

    ``E = rho * cp * sum_i V_i * (y_i - reference)``. Accepts a single
    state vector or a full trajectory array (nodes x steps).
    """
    y = np.asarray(y, dtype=float)
    v = volumes.volumes_m3
    weights = constants.rho_kg_m3 * constants.cp_j_per_kg_c * v
    if y.ndim == 1:
        return float(weights @ (y - reference_c))
    return weights @ (y - reference_c)


def energy_balance(system, traj, deltas, ambient):
    """Per-step energy audit of a simulated trajectory.

    Each term is assembled directly from the state, flows and operator
    diagonals, independent of the linear solver. For the governed
    (non-boundary) nodes the backward-Euler rows sum to the exact
    identity

        plant injection = consumer extraction + ambient loss
                          + storage rate,

    so the residual measures only solver round-off. Boundary rows
    (plant nodes, consumer return nodes) are accounting interfaces and
    carry no storage/loss of their own.

    Returns a dict of arrays of length ``n_steps``: ``injection_w``,
    ``extraction_w``, ``ambient_w``, ``storage_w``, ``residual_w`` and
    ``residual_rel`` (relative to plant injection).
    """
    bc = system.bc
    cp = system.constants.cp_j_per_kg_c
    rho = system.constants.rho_kg_m3
    y = traj.values_c
    dt = traj.grid.dt_s

    supply = y[bc.plant_nodes, 1:]
    ret = y[bc.plant_return_nodes, 1:]
    injection = cp * (system.plant_massflow[:, None] * (supply - ret)).sum(axis=0)
    extraction = cp * (system.consumer_massflow[:, None] * deltas[:, 1:]).sum(axis=0)

    interior = system.interior
    s = system.S_diag[interior][:, None]
    ambient_loss = (s * (y[interior, 1:] - ambient[None, 1:])).sum(axis=0)
    w = rho * cp * system.V_diag[interior][:, None]
    storage = (w * (y[interior, 1:] - y[interior, :-1])).sum(axis=0) / dt

    residual = injection - extraction - ambient_loss - storage
    scale = np.maximum(np.abs(injection), 1e-30)
    return {
        "injection_w": injection,
        "extraction_w": extraction,
        "ambient_w": ambient_loss,
        "storage_w": storage,
        "residual_w": residual,
        "residual_rel": np.abs(residual) / scale,
    }
