"""Synthetic networks, load profiles and scenarios for tests and demos.

All fixtures are fully deterministic given their arguments. The desk
network is a single feeder with ten consumers, small enough to solve in
milliseconds; the feeder network scales the same layout to a realistic
node count for runtime benchmarks.
"""

from __future__ import annotations

import math

import numpy as np

from .network import FlowField, NetworkGraph, subdivide_pipes
from .objective import ConstraintSet
from .scenario import (DemandSet, LoadSeries, PriceSeries, build_scenario,
                       lowpass, synthesize_variations, DEFAULT_CUTOFF_HZ)
from .thermal import PhysicalConstants, TimeGrid

_EXCHANGER_LENGTH_M = 5.0
_EXCHANGER_DIAMETER_M = 0.05


def _graph(nodes, edges):
    """nodes: (id, side, x, y); edges: (id, tail, head, kind, l, d, k)."""
    node_ids = [n[0] for n in nodes]
    sides = [n[1] for n in nodes]
    xy = [[n[2], n[3]] for n in nodes]
    edge_ids = [e[0] for e in edges]
    kinds = [e[3] for e in edges]
    index = {nid: i for i, nid in enumerate(node_ids)}
    tails = [index[e[1]] for e in edges]
    heads = [index[e[2]] for e in edges]
    lengths = [e[4] for e in edges]
    diams = [e[5] for e in edges]
    htcs = [e[6] for e in edges]
    areas = [math.pi * d**2 / 4.0 for d in diams]
    return NetworkGraph(node_ids, sides, xy, edge_ids, kinds, tails, heads,
                        lengths, diams, areas, htcs)


def minimal_loop(mdot_kg_s=0.5, length_m=80.0, diameter_m=0.05,
                 htc_w_per_m_c=0.5):
    """Smallest closed network: one consumer fed by one plant."""
    nodes = [
        ("SP", "supply", 0.0, 0.0),
        ("SC", "supply", length_m, 0.0),
        ("RC", "return", length_m, -1.0),
        ("RP", "return", 0.0, -1.0),
    ]
    edges = [
        ("supply_pipe", "SP", "SC", "supply", length_m, diameter_m, htc_w_per_m_c),
        ("consumer", "SC", "RC", "consumer", _EXCHANGER_LENGTH_M,
         _EXCHANGER_DIAMETER_M, 0.0),
        ("return_pipe", "RC", "RP", "return", length_m, diameter_m, htc_w_per_m_c),
        ("producer", "RP", "SP", "producer", _EXCHANGER_LENGTH_M,
         _EXCHANGER_DIAMETER_M, 0.0),
    ]
    graph = _graph(nodes, edges)
    flow = FlowField(np.full(4, mdot_kg_s)).validate_against(graph)
    return graph, flow


def pipe_chain(n_cells, total_length_m=1000.0, mdot_kg_s=0.05,
               diameter_m=0.05, htc_w_per_m_c=0.2093):
    """Closed loop whose supply run is a chain of ``n_cells`` equal cells.

    The return run mirrors the supply run; one consumer edge joins the
    chain ends and one producer edge closes the loop. Useful for
    comparing the discrete steady profile against the analytic
    advection-loss solution along a single pipe.
    """
    cell = total_length_m / n_cells
    nodes = [("S0", "supply", 0.0, 0.0)]
    for j in range(1, n_cells + 1):
        nodes.append((f"S{j}", "supply", j * cell, 0.0))
    for j in range(n_cells, -1, -1):
        nodes.append((f"R{j}", "return", j * cell, -1.0))
    edges = []
    for j in range(n_cells):
        edges.append((f"sup{j}", f"S{j}", f"S{j+1}", "supply", cell,
                      diameter_m, htc_w_per_m_c))
    edges.append(("consumer", f"S{n_cells}", f"R{n_cells}", "consumer",
                  _EXCHANGER_LENGTH_M, _EXCHANGER_DIAMETER_M, 0.0))
    for j in range(n_cells, 0, -1):
        edges.append((f"ret{j}", f"R{j}", f"R{j-1}", "return", cell,
                      diameter_m, htc_w_per_m_c))
    edges.append(("producer", "R0", "S0", "producer", _EXCHANGER_LENGTH_M,
                  _EXCHANGER_DIAMETER_M, 0.0))
    graph = _graph(nodes, edges)
    flow = FlowField(np.full(graph.n_edges, mdot_kg_s)).validate_against(graph)
    return graph, flow


def _feeder(nodes, edges, flows, plant_supply, plant_return, feeder_id,
            n_consumers, segment_length_m, mdot_consumer, htc, velocity_m_s,
            port_length_m=5.0):
    """Append one feeder (supply trunk, consumers, return trunk).

    Every substation gets a dedicated return port node: the consumer
    edge ends there and a short service pipe joins the port to the
    return-trunk junction, where its flow mixes with the trunk's.
    """
    rho = 1000.0
    prev_s, prev_r = plant_supply, plant_return
    for j in range(1, n_consumers + 1):
        mdot_seg = (n_consumers - j + 1) * mdot_consumer
        area = mdot_seg / (rho * velocity_m_s)
        diameter = math.sqrt(4.0 * area / math.pi)
        s, r = f"S{feeder_id}_{j}", f"R{feeder_id}_{j}"
        port = f"RC{feeder_id}_{j}"
        x = float(j * segment_length_m)
        nodes.append((s, "supply", x, float(feeder_id)))
        nodes.append((port, "return", x, float(feeder_id) - 0.25))
        nodes.append((r, "return", x, float(feeder_id) - 0.5))
        edges.append((f"sup{feeder_id}_{j}", prev_s, s, "supply",
                      segment_length_m, diameter, htc))
        flows.append(mdot_seg)
        edges.append((f"con{feeder_id}_{j}", s, port, "consumer",
                      _EXCHANGER_LENGTH_M, _EXCHANGER_DIAMETER_M, 0.0))
        flows.append(mdot_consumer)
        edges.append((f"svc{feeder_id}_{j}", port, r, "return",
                      port_length_m, _EXCHANGER_DIAMETER_M, htc))
        flows.append(mdot_consumer)
        edges.append((f"ret{feeder_id}_{j}", r, prev_r, "return",
                      segment_length_m, diameter, htc))
        flows.append(mdot_seg)
        prev_s, prev_r = s, r


def desk_network(n_consumers=10, segment_length_m=80.0, mdot_consumer=0.4,
                 htc_w_per_m_c=1.0, velocity_m_s=0.8):
    """Single-feeder network: one plant, ``n_consumers`` substations."""
    nodes = [("SP", "supply", 0.0, 0.0), ("RP", "return", 0.0, -0.5)]
    edges, flows = [], []
    _feeder(nodes, edges, flows, "SP", "RP", 0, n_consumers,
            segment_length_m, mdot_consumer, htc_w_per_m_c, velocity_m_s)
    total = n_consumers * mdot_consumer
    edges.append(("producer", "RP", "SP", "producer", _EXCHANGER_LENGTH_M,
                  _EXCHANGER_DIAMETER_M, 0.0))
    flows.append(total)
    graph = _graph(nodes, edges)
    flow = FlowField(np.array(flows)).validate_against(graph)
    return graph, flow


def feeder_network(n_feeders=13, consumers_per_feeder=10,
                   segment_length_m=450.0, mdot_consumer=0.4,
                   htc_w_per_m_c=0.1, velocity_m_s=0.8,
                   max_cell_length_m=100.0):
    """Star of feeders around one plant, refined to short cells.

    The default configuration yields about 1400 computational nodes and
    1500 pipe segments, the scale of a small town's network.
    """
    nodes = [("SP", "supply", 0.0, 0.0), ("RP", "return", 0.0, -0.5)]
    edges, flows = [], []
    for f in range(n_feeders):
        _feeder(nodes, edges, flows, "SP", "RP", f, consumers_per_feeder,
                segment_length_m, mdot_consumer, htc_w_per_m_c, velocity_m_s)
    total = n_feeders * consumers_per_feeder * mdot_consumer
    edges.append(("producer", "RP", "SP", "producer", _EXCHANGER_LENGTH_M,
                  _EXCHANGER_DIAMETER_M, 0.0))
    flows.append(total)
    graph = _graph(nodes, edges)
    flow = FlowField(np.array(flows)).validate_against(graph)
    return subdivide_pipes(graph, flow, max_cell_length_m)


def daily_load_profile(mean_w=500e3, n_days=3, dt_s=900.0,
                       daily_swing=0.25, secondary_swing=0.12):
    """Smooth district-total heating load over a few days.

    Daily cycle peaking in the morning (heating plus hot-water draw)
    with a smaller evening shoulder from a half-day harmonic.
    """
    n = int(round(n_days * 86400.0 / dt_s)) + 1
    t = np.arange(n) * dt_s
    day = t / 86400.0
    shape = (1.0
             + daily_swing * np.sin(2.0 * np.pi * day - 0.125 * np.pi)
             + secondary_swing * np.sin(4.0 * np.pi * day + 1.0))
    return LoadSeries(values_w=mean_w * shape, dt_s=dt_s)


def two_level_price(n_days=3, cheap_eur_mwh=20.0, expensive_eur_mwh=100.0,
                    cheap_hours=(2, 8)):
    """Hourly two-level day-ahead curve: cheap nights, expensive days."""
    hours = np.arange(n_days * 24 + 1)
    in_window = (hours % 24 >= cheap_hours[0]) & (hours % 24 < cheap_hours[1])
    prices = np.where(in_window, cheap_eur_mwh, expensive_eur_mwh)
    return PriceSeries(times_s=hours * 3600.0, prices_eur_mwh=prices.astype(float))


def demand_set_for(graph, base, seed=0, sigma=0.15,
                   cutoff_hz=DEFAULT_CUTOFF_HZ, mean_w_per_consumer=None):
    """Synthesize one demand series per consumer edge of a graph."""
    consumer_ids = [graph.edge_ids[e] for e in graph.consumer_edges]
    n = len(consumer_ids)
    smooth = lowpass(base, cutoff_hz)
    if mean_w_per_consumer is None:
        targets = np.full(n, smooth.mean() / n)
    else:
        targets = np.full(n, float(mean_w_per_consumer))
    series = synthesize_variations(smooth, n, sigma=sigma, seed=seed,
                                   target_means=targets, keys=consumer_ids)
    return DemandSet(consumer_ids=tuple(consumer_ids), series=tuple(series))


def desk_scenario(static=True, seed=0, n_consumers=10, n_days=3, dt_s=900.0,
                  sigma=0.15, initial_control_c=110.0, tikhonov_weight=None,
                  alpha=1.0, beta=0.0, htc_w_per_m_c=1.0,
                  mean_w_per_consumer=50e3):
    """Ten-consumer, three-day scenario used throughout the tests."""
    graph, flow = desk_network(n_consumers=n_consumers,
                               htc_w_per_m_c=htc_w_per_m_c)
    grid = TimeGrid(dt_s=dt_s, n_steps=int(round(n_days * 86400.0 / dt_s)))
    base = daily_load_profile(mean_w=mean_w_per_consumer * n_consumers,
                              n_days=n_days, dt_s=dt_s)
    demands = demand_set_for(graph, base, seed=seed, sigma=sigma,
                             mean_w_per_consumer=mean_w_per_consumer)
    prices = None if static else two_level_price(n_days=n_days)
    kwargs = {}
    if tikhonov_weight is not None:
        kwargs["tikhonov_weight"] = tikhonov_weight
    return build_scenario(
        graph, flow, demands, prices, ConstraintSet(), grid,
        PhysicalConstants(), alpha=alpha, beta=beta,
        initial_control_c=initial_control_c, seed=seed, **kwargs)


def feeder_scenario(static=True, seed=0, n_days=3, dt_s=900.0, sigma=0.15,
                    initial_control_c=110.0, mean_w_per_consumer=50e3,
                    **network_kwargs):
    """Scenario on the ~1500-node feeder network."""
    graph, flow = feeder_network(**network_kwargs)
    grid = TimeGrid(dt_s=dt_s, n_steps=int(round(n_days * 86400.0 / dt_s)))
    n_cons = len(graph.consumer_edges)
    base = daily_load_profile(mean_w=mean_w_per_consumer * n_cons,
                              n_days=n_days, dt_s=dt_s)
    demands = demand_set_for(graph, base, seed=seed, sigma=sigma,
                             mean_w_per_consumer=mean_w_per_consumer)
    prices = None if static else two_level_price(n_days=n_days)
    return build_scenario(
        graph, flow, demands, prices, ConstraintSet(), grid,
        PhysicalConstants(), initial_control_c=initial_control_c, seed=seed)


def write_desk_fixture(out_dir, dynamic=False, seed=0, n_consumers=10,
                       n_days=3, dt_s=900.0, sigma=0.15,
                       initial_control_c=110.0, **config_overrides):
    """Write the desk fixture as CSV files plus a run config.

    Produces ``nodes.csv``, ``edges.csv``, ``flows.csv``,
    ``base_load.csv``, ``demands.csv``, optionally ``prices.csv`` and a
    ready-to-run ``config.json``; returns the config path.
    """
    import json
    from pathlib import Path

    from .network import write_flow_field, write_network
    from .scenario import (write_demand_set, write_load_series,
                           write_price_series)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    graph, flow = desk_network(n_consumers=n_consumers)
    write_network(graph, out / "nodes.csv", out / "edges.csv")
    write_flow_field(flow, graph, out / "flows.csv")
    base = daily_load_profile(mean_w=50e3 * n_consumers, n_days=n_days,
                              dt_s=dt_s)
    write_load_series(base, out / "base_load.csv")
    demands = demand_set_for(graph, base, seed=seed, sigma=sigma,
                             mean_w_per_consumer=50e3)
    write_demand_set(demands, out / "demands.csv")

    config = {
        "network": {"nodes": "nodes.csv", "edges": "edges.csv",
                    "flows": "flows.csv"},
        "demand_file": "demands.csv",
        "base_load_file": "base_load.csv",
        "control": {"constant_c": initial_control_c},
        "scenario": {
            "dt_s": dt_s,
            "n_steps": int(round(n_days * 86400.0 / dt_s)),
            "initial_control_c": initial_control_c,
        },
        "seed": seed,
        "out_dir": "out",
    }
    if dynamic:
        write_price_series(two_level_price(n_days=n_days), out / "prices.csv")
        config["price_file"] = "prices.csv"
        config["scenario"]["static_price"] = False
    for key, value in config_overrides.items():
        if isinstance(value, dict):
            config.setdefault(key, {}).update(value)
        else:
            config[key] = value
    config_path = out / "config.json"
    with open(config_path, "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return config_path
