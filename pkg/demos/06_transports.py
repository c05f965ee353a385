"""In-process vs localhost-TCP transport equality.

Both transports run the same client/server protocol; the TCP path adds
real sockets, length-prefixed frames, and a byte ledger.  Results are
bit-identical because every float crosses the wire at full precision
and the server reduces client reports in a fixed order.
"""

import numpy as np

from c2eden import (
    LocalOracle,
    ServerConfig,
    load_toy,
    partition,
    run_inprocess,
    run_tcp,
)

shards = partition(load_toy(), 4, seed=0)
oracles = [LocalOracle(s) for s in shards]
cfg = ServerConfig(
    dim=10, num_clients=4, total_rounds=30, M=1.0, x0=np.zeros(10), grad_tol=0.0
)

xs_a, xs_b = [], []
res_a = run_inprocess(oracles, cfg, on_iterate=lambda k, x: xs_a.append(x.copy()))
res_b = run_tcp(oracles, cfg, on_iterate=lambda k, x: xs_b.append(x.copy()))

same_iterates = len(xs_a) == len(xs_b) and all(
    np.array_equal(p, q) for p, q in zip(xs_a, xs_b)
)
print(f"iterates bit-identical across transports: {same_iterates}")
print(f"final iterate: {res_a.final_x[:3]} ...\n")

ta, tb = res_a.ledger.totals(), res_b.ledger.totals()
print(f"{'ledger field':16s} {'in-process':>12s} {'tcp':>12s}")
for key in ("rounds", "up_scalars", "down_scalars", "up_messages", "down_messages"):
    print(f"{key:16s} {ta[key]:>12d} {tb[key]:>12d}")

# scalar counts are transport-invariant; bytes exist only on a real wire
print(f"\npayload bytes on the wire (tcp): {tb['up_bytes']} up, {tb['down_bytes']} down")
print(f"control bytes (handshakes, frames): {tb['control_bytes']}")
print(f"in-process byte counters stay zero: {ta['up_bytes']} up, {ta['down_bytes']} down")
