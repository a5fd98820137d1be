"""Simulate three days of operation and audit the energy bookkeeping.

Runs the solution operator under a slowly varying plant temperature and
checks, step by step, that plant injection equals consumer extraction
plus ambient loss plus the change of stored energy.
"""

import numpy as np

from dhnopt.fixtures import desk_scenario
from dhnopt.thermal import energy_balance, simulate, stored_energy

scenario = desk_scenario()
t = scenario.grid.times()[1:]
u = (110.0 + 6.0 * np.sin(2 * np.pi * t / 86400.0))[None, :]

traj = simulate(scenario.graph, scenario.flow, scenario, u)
balance = energy_balance(scenario.system, traj, scenario.deltas,
                         scenario.ambient)

print(f"{scenario.grid.n_steps} steps of {scenario.grid.dt_s:.0f} s on "
      f"{scenario.graph.n_nodes} nodes")
print(f"{'hour':>6} {'inject kW':>10} {'extract kW':>11} "
      f"{'ambient kW':>11} {'storage kW':>11} {'residual':>10}")
for k in range(0, scenario.grid.n_steps, 24):
    print(f"{t[k] / 3600.0:>6.1f} "
          f"{balance['injection_w'][k] / 1e3:>10.1f} "
          f"{balance['extraction_w'][k] / 1e3:>11.1f} "
          f"{balance['ambient_w'][k] / 1e3:>11.1f} "
          f"{balance['storage_w'][k] / 1e3:>11.1f} "
          f"{balance['residual_rel'][k]:>10.1e}")

print(f"\nworst relative residual: {balance['residual_rel'].max():.2e}")

ref = float(np.mean(scenario.ambient))
energy = stored_energy(traj.values_c, scenario.volumes, scenario.constants,
                       reference_c=ref)
print(f"stored energy vs ambient: start {energy[0] / 1e9:.2f} GJ, "
      f"min {energy.min() / 1e9:.2f} GJ, max {energy.max() / 1e9:.2f} GJ")
