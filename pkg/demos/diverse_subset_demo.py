"""Compare greedy determinant-based subset selection with uniform sampling.

Builds a clustered point cloud, selects a small subset with the greedy
log-det rule, and tabulates how evenly each method covers the clusters.
The greedy subset spreads across all clusters by construction; uniform
sampling leaves coverage to chance.

    python3 demos/diverse_subset_demo.py
"""

import numpy as np

from fusealign import diversity as dv

N_PER_CLUSTER = 150
N_CLUSTERS = 5
DIM = 12
K = 25
SPREAD = 0.07


def main():
    rng = np.random.default_rng(3)
    labels = np.repeat(np.arange(N_CLUSTERS), N_PER_CLUSTER)
    centers = np.eye(DIM)[:N_CLUSTERS]
    points = centers[labels] + rng.normal(scale=SPREAD, size=(labels.size, DIM))
    print(f"{labels.size} points in {N_CLUSTERS} clusters, "
          f"selecting k={K}\n")

    kernel = dv.build_kernel(points, dv.KernelSpec(kind="poly2"))
    greedy = dv.greedy_kdpp(kernel, K)
    counts = np.bincount(labels[greedy.indices], minlength=N_CLUSTERS)
    print("greedy log-det selection:")
    print("  per-cluster counts:", counts.tolist())
    print(f"  total log det: {np.sum(greedy.gains):.2f}")
    print(f"  gains are non-increasing: "
          f"{bool(np.all(np.diff(greedy.gains) <= 1e-9))}")

    print("\nuniform sampling over 10 seeds:")
    mins = []
    for seed in range(10):
        idx = dv.uniform_subset(labels.size, K, seed)
        c = np.bincount(labels[idx], minlength=N_CLUSTERS)
        mins.append(c.min())
        print(f"  seed {seed}: {c.tolist()}")
    print(f"\nsmallest per-cluster count: greedy {counts.min()} vs "
          f"uniform mean {np.mean(mins):.1f}")

    # the linear kernel saturates once the span is covered; the squared
    # kernel keeps discriminating within clusters
    lin = dv.greedy_kdpp(dv.build_kernel(points, dv.KernelSpec(kind="linear")),
                         K)
    print(f"\nlinear kernel stops early at {lin.indices.size} picks "
          f"(span exhausted); poly2 reaches {greedy.indices.size}")


if __name__ == "__main__":
    main()
