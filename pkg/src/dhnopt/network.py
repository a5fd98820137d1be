"""Graph data model and file ingestion for district heating networks.

A network is a connected directed graph with a duplicated structure:
every location appears once on the hot supply side and once on the
cooled return side. Supply and return pipes stay within one side; a
consumer edge crosses from a supply node to a return node (heat
extraction at a substation) and a producer edge crosses back from
return to supply (the plant reheats the returning water).

Mass flows are a fixed external input, computed by a hydraulic tool and
ingested from file. They are validated for conservation but never
re-balanced here; bad input fails fast.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ParseError, ValidationError

NODE_SIDES = ("supply", "return")
EDGE_KINDS = ("supply", "return", "consumer", "producer")
PIPE_KINDS = ("supply", "return")

#: Absolute tolerance on the per-node mass balance, kg/s.
MASS_BALANCE_TOL = 1e-9

_AREA_RTOL = 1e-12


@dataclass(frozen=True)
class PipeParams:
    """Geometry and heat-loss parameters of one pipe segment.

    Attributes
    ----------
    length_m : float
        Segment length, > 0.
    diameter_m : float
        Inner diameter, > 0.
    area_m2 : float
        Cross section; must equal pi * d^2 / 4 within 1e-12 relative.
    heat_transfer_w_per_m_c : float
        Loss coefficient to ambient per metre of pipe, >= 0.
    """

    length_m: float
    diameter_m: float
    area_m2: float
    heat_transfer_w_per_m_c: float

    def __post_init__(self):
        if not self.length_m > 0:
            raise ValidationError(f"pipe length must be > 0, got {self.length_m}")
        if not self.diameter_m > 0:
            raise ValidationError(f"pipe diameter must be > 0, got {self.diameter_m}")
        if not self.heat_transfer_w_per_m_c >= 0:
            raise ValidationError(
                f"heat transfer coefficient must be >= 0, got {self.heat_transfer_w_per_m_c}"
            )
        area = math.pi * self.diameter_m**2 / 4.0
        if abs(self.area_m2 - area) > _AREA_RTOL * area:
            raise ValidationError(
                f"cross section {self.area_m2} inconsistent with diameter "
                f"{self.diameter_m} (expected {area})"
            )

    @classmethod
    def from_diameter(cls, length_m, diameter_m, heat_transfer_w_per_m_c):
        """Build params with the cross section derived from the diameter."""
        return cls(
            length_m=float(length_m),
            diameter_m=float(diameter_m),
            area_m2=math.pi * float(diameter_m) ** 2 / 4.0,
            heat_transfer_w_per_m_c=float(heat_transfer_w_per_m_c),
        )


class NetworkGraph:
    """Validated, immutable network graph.

    Nodes and edges keep their file order; the integer index of a node
    or edge is its position in that order, which makes runs
    reproducible. All per-edge quantities are stored as flat arrays
    aligned with the edge order.

    Parameters
    ----------
    node_ids, node_side, node_xy
        Node identifiers (unique strings), side labels
        ('supply'/'return'), and optional planar coordinates
        (shape ``(n, 2)``, NaN where absent).
    edge_ids, edge_kind, edge_tail, edge_head
        Edge identifiers, kind labels, and endpoint node indices.
    length_m, diameter_m, area_m2, htc_w_per_m_c
        Per-edge pipe parameters.
    """

    def __init__(self, node_ids, node_side, node_xy, edge_ids, edge_kind,
                 edge_tail, edge_head, length_m, diameter_m, area_m2,
                 htc_w_per_m_c):
        self.node_ids = list(node_ids)
        self.node_side = np.asarray(node_side, dtype=object)
        self.node_xy = np.asarray(node_xy, dtype=float)
        self.edge_ids = list(edge_ids)
        self.edge_kind = np.asarray(edge_kind, dtype=object)
        self.edge_tail = np.asarray(edge_tail, dtype=np.int64)
        self.edge_head = np.asarray(edge_head, dtype=np.int64)
        self.length_m = np.asarray(length_m, dtype=float)
        self.diameter_m = np.asarray(diameter_m, dtype=float)
        self.area_m2 = np.asarray(area_m2, dtype=float)
        self.htc_w_per_m_c = np.asarray(htc_w_per_m_c, dtype=float)
        self.node_index = {nid: i for i, nid in enumerate(self.node_ids)}
        self.edge_index = {eid: i for i, eid in enumerate(self.edge_ids)}
        self._validate()

    # -- basic shape --------------------------------------------------

    @property
    def n_nodes(self):
        return len(self.node_ids)

    @property
    def n_edges(self):
        return len(self.edge_ids)

    def edges_of_kind(self, kind):
        """Indices of all edges of one kind, in file order."""
        return np.flatnonzero(self.edge_kind == kind)

    @property
    def consumer_edges(self):
        return self.edges_of_kind("consumer")

    @property
    def producer_edges(self):
        return self.edges_of_kind("producer")

    @property
    def pipe_edges(self):
        return np.flatnonzero(np.isin(self.edge_kind, PIPE_KINDS))

    def pipe(self, e):
        """PipeParams of edge index ``e``."""
        return PipeParams(
            length_m=float(self.length_m[e]),
            diameter_m=float(self.diameter_m[e]),
            area_m2=float(self.area_m2[e]),
            heat_transfer_w_per_m_c=float(self.htc_w_per_m_c[e]),
        )

    def incidence(self):
        """Sparse node-edge incidence matrix (-1 tail, +1 head)."""
        n_e = self.n_edges
        rows = np.concatenate([self.edge_tail, self.edge_head])
        cols = np.concatenate([np.arange(n_e), np.arange(n_e)])
        vals = np.concatenate([-np.ones(n_e), np.ones(n_e)])
        return sp.csc_matrix((vals, (rows, cols)), shape=(self.n_nodes, n_e))

    # -- validation ----------------------------------------------------

    def _validate(self):
        if len(set(self.node_ids)) != len(self.node_ids):
            raise ValidationError("duplicate node ids")
        if len(set(self.edge_ids)) != len(self.edge_ids):
            raise ValidationError("duplicate edge ids")
        if self.node_xy.shape != (self.n_nodes, 2):
            raise ValidationError("node coordinates must have shape (n_nodes, 2)")
        for arr, name in ((self.edge_tail, "edge_tail"), (self.edge_head, "edge_head")):
            if arr.shape != (self.n_edges,):
                raise ValidationError(f"{name} has wrong length")
            if arr.size and (arr.min() < 0 or arr.max() >= self.n_nodes):
                raise ValidationError(f"{name} references a node out of range")
        for side, nid in zip(self.node_side, self.node_ids):
            if side not in NODE_SIDES:
                raise ValidationError(f"node {nid!r}: unknown side {side!r}")

        for e, eid in enumerate(self.edge_ids):
            kind = self.edge_kind[e]
            if kind not in EDGE_KINDS:
                raise ValidationError(f"edge {eid!r}: unknown kind {kind!r}")
            if self.edge_tail[e] == self.edge_head[e]:
                raise ValidationError(f"edge {eid!r}: self loop")
            ts = self.node_side[self.edge_tail[e]]
            hs = self.node_side[self.edge_head[e]]
            want = {
                "supply": ("supply", "supply"),
                "return": ("return", "return"),
                "consumer": ("supply", "return"),
                "producer": ("return", "supply"),
            }[kind]
            if (ts, hs) != want:
                raise ValidationError(
                    f"edge {eid!r}: kind {kind!r} must connect "
                    f"{want[0]} -> {want[1]} nodes, got {ts} -> {hs}"
                )
            # zero-length/diameter rejected via PipeParams semantics
            if not self.length_m[e] > 0:
                raise ValidationError(f"edge {eid!r}: length must be > 0")
            if not self.diameter_m[e] > 0:
                raise ValidationError(f"edge {eid!r}: diameter must be > 0")
            if not self.htc_w_per_m_c[e] >= 0:
                raise ValidationError(f"edge {eid!r}: heat transfer must be >= 0")
            area = math.pi * self.diameter_m[e] ** 2 / 4.0
            if abs(self.area_m2[e] - area) > _AREA_RTOL * area:
                raise ValidationError(f"edge {eid!r}: inconsistent cross section")

        if not self._connected():
            raise ValidationError("graph is not connected")

    def _connected(self):
        if self.n_nodes <= 1:
            return True
        adj = [[] for _ in range(self.n_nodes)]
        for t, h in zip(self.edge_tail, self.edge_head):
            adj[t].append(h)
            adj[h].append(t)
        seen = np.zeros(self.n_nodes, dtype=bool)
        stack = [0]
        seen[0] = True
        while stack:
            v = stack.pop()
            for w in adj[v]:
                if not seen[w]:
                    seen[w] = True
                    stack.append(w)
        return bool(seen.all())


@dataclass(frozen=True)
class ControlVolumes:
    """Water volume attributed to each node for thermal inertia."""

    volumes_m3: np.ndarray

    def total(self):
        return float(self.volumes_m3.sum())


class FlowField:
    """Signed mass flow per edge, kg/s, positive along edge orientation."""

    def __init__(self, massflow_kg_s):
        self.massflow_kg_s = np.asarray(massflow_kg_s, dtype=float)

    def validate_against(self, graph):
        """Check stagnation, conservation and exchanger orientation.

        Consumer and producer edges must carry flow along the edge
        direction (supply -> return and return -> supply respectively):
        the boundary handling in the thermal model relies on it.
        """
        m = self.massflow_kg_s
        if m.shape != (graph.n_edges,):
            raise ValidationError(
                f"flow field has {m.shape[0]} values for {graph.n_edges} edges"
            )
        if not np.all(np.isfinite(m)):
            raise ValidationError("flow field contains non-finite values")
        zero = np.flatnonzero(m == 0.0)
        if zero.size:
            raise ValidationError(
                f"edge {graph.edge_ids[zero[0]]!r}: zero mass flow (stagnation)"
            )
        imbalance = graph.incidence() @ m
        bad = np.flatnonzero(np.abs(imbalance) > MASS_BALANCE_TOL)
        if bad.size:
            i = bad[0]
            raise ValidationError(
                f"node {graph.node_ids[i]!r}: mass imbalance "
                f"{imbalance[i]:.3e} kg/s exceeds {MASS_BALANCE_TOL} kg/s"
            )
        for e in np.concatenate([graph.consumer_edges, graph.producer_edges]):
            if m[e] <= 0:
                raise ValidationError(
                    f"edge {graph.edge_ids[e]!r}: {graph.edge_kind[e]} edges "
                    f"must carry flow along their orientation (got {m[e]} kg/s)"
                )
        return self


def velocity(massflow_kg_s, pipe, rho_kg_m3):
    """Fluid velocity in a pipe from its mass flow.

    ``v = mdot / (pi * d^2 / 4 * rho)``; the sign of the flow carries
    through to the velocity.
    """
    if not pipe.diameter_m > 0:
        raise ValidationError("diameter must be > 0")
    if not rho_kg_m3 > 0:
        raise ValidationError("density must be > 0")
    return massflow_kg_s / (math.pi * pipe.diameter_m**2 / 4.0 * rho_kg_m3)


def control_volumes(graph):
    """Per-node control volumes: half of each incident pipe's volume.

    Every edge's water volume ``A * l`` is split evenly between its two
    endpoints, so the volumes sum to the network's total water content.
    """
    vol = np.zeros(graph.n_nodes)
    half = graph.area_m2 * graph.length_m / 2.0
    np.add.at(vol, graph.edge_tail, half)
    np.add.at(vol, graph.edge_head, half)
    isolated = np.flatnonzero(vol <= 0.0)
    if isolated.size:
        raise ValidationError(
            f"node {graph.node_ids[isolated[0]]!r} has no incident edges"
        )
    return ControlVolumes(volumes_m3=vol)


# ---------------------------------------------------------------------------
# file ingestion
# ---------------------------------------------------------------------------

_NODE_HEADER = ["node_id", "side", "x", "y"]
_EDGE_HEADER = ["edge_id", "from_node", "to_node", "kind",
                "length_m", "diameter_m", "htc_w_per_m_c"]
_FLOW_HEADER = ["edge_id", "massflow_kg_s"]


def _open_csv(path, expected_header):
    fh = open(path, newline="", encoding="utf-8")
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        fh.close()
        raise ParseError(f"{path}:1: empty file") from None
    if [h.strip() for h in header] != expected_header:
        fh.close()
        raise ParseError(
            f"{path}:1: expected header {','.join(expected_header)!r}, "
            f"got {','.join(header)!r}"
        )
    return fh, reader


def _parse_float(path, lineno, field, text):
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"{path}:{lineno}: bad {field} value {text!r}") from None


def parse_network(node_file, edge_file):
    """Load and validate a network from node and edge CSV files.

    Raises
    ------
    ParseError
        Malformed row; the message names the file and line.
    ValidationError
        Structural invariant violated; the message names the node/edge.
    """
    node_ids, sides, xy = [], [], []
    fh, reader = _open_csv(node_file, _NODE_HEADER)
    with fh:
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ParseError(f"{node_file}:{lineno}: expected 4 fields, got {len(row)}")
            nid, side, x, y = (c.strip() for c in row)
            node_ids.append(nid)
            sides.append(side)
            xy.append([
                _parse_float(node_file, lineno, "x", x) if x else math.nan,
                _parse_float(node_file, lineno, "y", y) if y else math.nan,
            ])

    node_index = {nid: i for i, nid in enumerate(node_ids)}
    edge_ids, kinds, tails, heads = [], [], [], []
    lengths, diameters, htcs = [], [], []
    fh, reader = _open_csv(edge_file, _EDGE_HEADER)
    with fh:
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 7:
                raise ParseError(f"{edge_file}:{lineno}: expected 7 fields, got {len(row)}")
            eid, frm, to, kind, length, diam, htc = (c.strip() for c in row)
            for nid in (frm, to):
                if nid not in node_index:
                    raise ValidationError(
                        f"edge {eid!r} ({edge_file}:{lineno}) references unknown node {nid!r}"
                    )
            edge_ids.append(eid)
            kinds.append(kind)
            tails.append(node_index[frm])
            heads.append(node_index[to])
            lengths.append(_parse_float(edge_file, lineno, "length_m", length))
            diameters.append(_parse_float(edge_file, lineno, "diameter_m", diam))
            htcs.append(_parse_float(edge_file, lineno, "htc_w_per_m_c", htc))

    areas = [math.pi * d**2 / 4.0 for d in diameters]
    return NetworkGraph(node_ids, sides, xy, edge_ids, kinds, tails, heads,
                        lengths, diameters, areas, htcs)


def write_network(graph, node_file, edge_file):
    """Write a graph back to the CSV schemas read by :func:`parse_network`.

    Floats are written with ``repr`` so a round trip is bit-exact.
    """
    with open(node_file, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_NODE_HEADER)
        for i, nid in enumerate(graph.node_ids):
            x, y = (float(v) for v in graph.node_xy[i])
            w.writerow([nid, graph.node_side[i],
                        "" if math.isnan(x) else repr(x),
                        "" if math.isnan(y) else repr(y)])
    with open(edge_file, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_EDGE_HEADER)
        for e, eid in enumerate(graph.edge_ids):
            w.writerow([eid,
                        graph.node_ids[graph.edge_tail[e]],
                        graph.node_ids[graph.edge_head[e]],
                        graph.edge_kind[e],
                        repr(float(graph.length_m[e])),
                        repr(float(graph.diameter_m[e])),
                        repr(float(graph.htc_w_per_m_c[e]))])


def load_flow_field(flow_file, graph):
    """Load mass flows and validate them against the graph."""
    values = {}
    fh, reader = _open_csv(flow_file, _FLOW_HEADER)
    with fh:
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ParseError(f"{flow_file}:{lineno}: expected 2 fields, got {len(row)}")
            eid, val = (c.strip() for c in row)
            if eid not in graph.edge_index:
                raise ValidationError(
                    f"flow file {flow_file}:{lineno}: unknown edge {eid!r}"
                )
            if eid in values:
                raise ValidationError(
                    f"flow file {flow_file}:{lineno}: duplicate edge {eid!r}"
                )
            values[eid] = _parse_float(flow_file, lineno, "massflow_kg_s", val)
    missing = [eid for eid in graph.edge_ids if eid not in values]
    if missing:
        raise ValidationError(f"flow file {flow_file}: missing edge {missing[0]!r}")
    m = np.array([values[eid] for eid in graph.edge_ids])
    return FlowField(m).validate_against(graph)


def write_flow_field(flow, graph, flow_file):
    """Write a flow field to the CSV schema read by :func:`load_flow_field`."""
    with open(flow_file, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_FLOW_HEADER)
        for eid, val in zip(graph.edge_ids, flow.massflow_kg_s):
            w.writerow([eid, repr(float(val))])


# ---------------------------------------------------------------------------
# discretization helper
# ---------------------------------------------------------------------------

def subdivide_pipes(graph, flow=None, max_cell_length_m=100.0):
    """Split supply/return pipes into cells of at most the given length.

    Each pipe of length ``l`` becomes ``ceil(l / max_cell_length_m)``
    equal segments, with interior nodes inserted on the pipe's side.
    Consumer and producer edges are heat-exchanger interfaces, not
    pipes, and are never split. Interior node coordinates are
    interpolated when both endpoints have coordinates.

    Returns the refined graph and, when a flow field is given, the flow
    field expanded to the new edge list (every segment of a pipe
    carries the parent pipe's flow).
    """
    if not max_cell_length_m > 0:
        raise ValidationError("max_cell_length_m must be > 0")
    node_ids = list(graph.node_ids)
    sides = list(graph.node_side)
    xy = [list(p) for p in graph.node_xy]
    edge_ids, kinds, tails, heads = [], [], [], []
    lengths, diameters, htcs = [], [], []
    flows = [] if flow is not None else None

    for e, eid in enumerate(graph.edge_ids):
        kind = graph.edge_kind[e]
        length = float(graph.length_m[e])
        n_cells = 1
        if kind in PIPE_KINDS:
            n_cells = max(1, math.ceil(length / max_cell_length_m - 1e-12))
        t, h = int(graph.edge_tail[e]), int(graph.edge_head[e])
        chain = [t]
        for j in range(1, n_cells):
            node_ids.append(f"{eid}#n{j}")
            sides.append(kind)
            frac = j / n_cells
            p0, p1 = graph.node_xy[t], graph.node_xy[h]
            xy.append(list(p0 + frac * (p1 - p0)))
            chain.append(len(node_ids) - 1)
        chain.append(h)
        for j in range(n_cells):
            edge_ids.append(eid if n_cells == 1 else f"{eid}#s{j}")
            kinds.append(kind)
            tails.append(chain[j])
            heads.append(chain[j + 1])
            lengths.append(length / n_cells)
            diameters.append(float(graph.diameter_m[e]))
            htcs.append(float(graph.htc_w_per_m_c[e]))
            if flows is not None:
                flows.append(float(flow.massflow_kg_s[e]))

    areas = [math.pi * d**2 / 4.0 for d in diameters]
    refined = NetworkGraph(node_ids, sides, xy, edge_ids, kinds, tails, heads,
                           lengths, diameters, areas, htcs)
    if flows is None:
        return refined, None
    return refined, FlowField(np.array(flows)).validate_against(refined)
