"""Build a net DAG over a small Euclidean metric, run the dynamics against a phased
adversary, and compare the online cost to the offline optimum."""

import numpy as np

from mtsdag import build_net_dag, compress, comparator_lipschitz, epsilon_dag, offline_opt, run
from mtsdag.dag import combinatorial_depth, information_depth
from mtsdag.metric import random_euclidean_metric
from mtsdag.offline import BlockUniform

m = random_euclidean_metric(10, 2, seed=3)
nd = build_net_dag(m)
d = compress(nd.dag).compressed
print(f"points={m.n} paths={d.n_paths} depth {combinatorial_depth(nd.dag)} -> {combinatorial_depth(d)}"
      f" info depth={information_depth(d):.2f} (3 ln n={3 * np.log(m.n):.2f})")

kappa = 6 * comparator_lipschitz(d, m)
eps = epsilon_dag(d, kappa)
print(f"kappa={kappa:g} per-step cost cap={eps:.3e}")

# costs above the cap are split into sub-steps, so keep them near it
tr = run(d, BlockUniform(m.n, seed=1, magnitude=2 * eps), kappa, T=300, metric=m, exact_w1=True)
opt = offline_opt(m, tr.costs, start=0)
tot = tr.totals
print(f"service={tot['service']:.3e} movement(W1 on points)={tot['movement_w1_base']:.3e} OPT={opt.total:.3e}")
print(f"ratio={(tot['service'] + tot['movement_w1_base']) / opt.total:.2f}")
