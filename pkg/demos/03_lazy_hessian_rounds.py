"""The lazy-Hessian round schedule and its communication ledger.

One column of the Hessian crosses the wire per round.  The first d
rounds only build the matrix (the iterate does not move); afterwards the
server steps every round against a snapshot Hessian that refreshes once
per d-round epoch.  Upstream traffic is exactly n*d^2 + 2nd(K-d) scalars.
"""

import numpy as np

from c2eden import RunConfig, load_toy, partition, run, tau

shards = partition(load_toy(), 4, seed=0)
d, n, rounds = 10, 4, 45

cfg = RunConfig(
    method="c2eden", rounds=rounds, M=1.0, grad_tol=0.0, record_snapshots=True
)
trace = run(cfg, shards)

print(f"run: n={n} clients, d={d} features, K={rounds} rounds\n")
print("  k  phase      f(x_k)      ||grad||   up_scalars  down_scalars")
for row in trace.rows:
    if row.k <= d:
        phase = "warm-up" if row.k < d else "promote"
    else:
        phase = f"epoch {row.k // d}" if row.k % d else "promote"
    print(
        f"{row.k:3d}  {phase:8s}  {row.f:.6f}  {row.grad_norm:9.3e}"
        f"  {row.up_scalars:10d}  {row.down_scalars:12d}"
    )

print("\nwarm-up keeps the iterate frozen:",
      all(np.array_equal(trace.iterates[0], trace.iterates[k]) for k in range(d + 1)))

totals = trace.ledger.totals()
print(f"\nledger totals: {totals['up_scalars']} up, {totals['down_scalars']} down")
print(f"closed form:   {n * d * d + 2 * n * d * (rounds - d)} up, "
      f"{d * (rounds - d)} down")

print("\nsnapshot staleness: the Hessian active at round k was computed at")
print("x_tau with tau(k; d) = d(floor(k/d) - 1):")
for snap in trace.snapshots:
    k0 = snap.promotion_round
    anchor = trace.iterates[tau(k0, d)]
    same = np.array_equal(snap.hessian_point, anchor)
    print(f"  promotion at k={k0:2d}: columns were computed at x_{tau(k0, d):2d} "
          f"(bitwise match: {same})")
