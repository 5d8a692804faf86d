"""Two point masses on a two-level chain of splits: the transport distance
between the induced flows falls below half of their weighted l1 gap."""

import numpy as np

from mtsdag.dag import MarkedDag, l1_omega, lambda_map, validate, w1_dag_exact

tau = 12.0
# root -> a (omega 10) -> {x, y} (omega 10/tau); root -> b (omega 10) -> z
nodes = ["r", "a", "b", "x", "y", "z"]
arcs = [("r", "a", 10, 0.5), ("r", "b", 10, 0.5), ("a", "x", 10 / tau, 0.5),
        ("a", "y", 10 / tau, 0.5), ("b", "z", 10 / tau, 1.0)]
d = validate(MarkedDag.from_arcs(nodes, arcs, "r", ["x", "y", "z"], tau=tau, levels=[0, 1, 1, 2, 2, 2]))
f = lambda_map(d, np.array([1.0, 0, 1, 0, 1]))
g = lambda_map(d, np.array([0, 1.0, 0, 0, 1]))
w, l1 = w1_dag_exact(d, f, g), l1_omega(d, f, g)
print(f"W1={w:.4f} l1={l1:.4f} ratio={w / l1:.4f} (tau-1)/(2 tau)={(tau - 1) / (2 * tau):.4f}")
