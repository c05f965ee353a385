"""Tests for the wire format, client sessions, coordinator, and transports."""

import struct

import numpy as np
import pytest

from c2eden import numkit, protocol
from c2eden.data_io import load_toy, partition
from c2eden.objective import ClientShard
from c2eden.protocol import (
    Broadcast,
    ClientReport,
    ClientSession,
    CommLedger,
    Hello,
    LocalOracle,
    ProtocolError,
    RoundTraffic,
    ServerConfig,
    Start,
    Stop,
    WarmupReport,
    decode_message,
    encode_message,
    run_inprocess,
    run_tcp,
)


def toy_shards(n=3, lam=1e-3):
    return partition(load_toy(), n, seed=0, lam=lam)


def small_shards(n=2, d=3, m=8, lam=1e-2):
    rng = np.random.default_rng(17)
    return [
        ClientShard(rng.standard_normal((m, d)), rng.choice([-1.0, 1.0], size=m), lam=lam)
        for _ in range(n)
    ]


def capture_iterates():
    seen = {}

    def hook(k, x):
        assert k not in seen
        seen[k] = x.copy()

    return seen, hook


class TestWireFormat:
    def test_frozen_broadcast_frame(self):
        # 2-vector broadcast: 4 length + 1 tag + 4 round + 4 sender + 16
        # payload = 29 bytes with a length field of 25.
        frame = encode_message(Broadcast(round=7, x=np.array([0.0, 1.0])))
        assert len(frame) == 29
        assert frame[:4] == struct.pack("<I", 25)
        assert frame[4] == 1
        assert frame[5:9] == struct.pack("<I", 7)
        assert frame[9:13] == struct.pack("<I", 0)
        assert frame[13:21] == struct.pack("<d", 0.0)
        assert frame[21:29] == struct.pack("<d", 1.0)

    def test_round_trip_all_kinds(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(5)
        g = rng.standard_normal(5)
        v = rng.standard_normal(5)
        messages = [
            Broadcast(round=12, x=x),
            ClientReport(round=9, client_id=4, grad=g, hess_col=v),
            WarmupReport(round=2, client_id=1, hess_col=v),
            Start(total_rounds=40, M=10.0, dim=5, num_clients=3, x0=x),
            Stop(),
            Hello(client_id=6),
        ]
        for msg in messages:
            back = decode_message(encode_message(msg))
            assert type(back) is type(msg)
            for name in getattr(msg, "__dataclass_fields__", {}):
                a, b = getattr(msg, name), getattr(back, name)
                if isinstance(a, np.ndarray):
                    assert np.array_equal(a, b), name
                else:
                    assert a == b, name

    def test_doubles_bit_exact(self):
        vals = np.array([-0.0, 5e-324, 1e308, 1.0 / 3.0, -np.pi])
        back = decode_message(encode_message(Broadcast(round=0, x=vals)))
        assert back.x.tobytes() == vals.tobytes()

    def test_truncated_frame_rejected(self):
        frame = encode_message(Stop())
        with pytest.raises(ProtocolError, match="too short|length"):
            decode_message(frame[:-2])
        big = encode_message(Broadcast(round=0, x=np.zeros(4)))
        with pytest.raises(ProtocolError, match="length"):
            decode_message(big[:-8])

    def test_unknown_tag_rejected(self):
        body = struct.pack("<BII", 42, 0, 0)
        frame = struct.pack("<I", len(body)) + body
        with pytest.raises(ProtocolError, match="tag"):
            decode_message(frame)

    def test_ragged_payload_rejected(self):
        body = struct.pack("<BII", 1, 0, 0) + b"\x00" * 12
        frame = struct.pack("<I", len(body)) + body
        with pytest.raises(ProtocolError, match="doubles"):
            decode_message(frame)

    def test_report_needs_even_payload(self):
        body = struct.pack("<BII", 2, 0, 0) + b"\x00" * 24
        frame = struct.pack("<I", len(body)) + body
        with pytest.raises(ProtocolError, match="2\\*dim"):
            decode_message(frame)

    def test_start_dim_mismatch_rejected(self):
        msg = Start(total_rounds=10, M=1.0, dim=3, num_clients=2, x0=np.zeros(3))
        frame = bytearray(encode_message(msg))
        frame = frame[:-8]  # chop one double off x0
        frame[:4] = struct.pack("<I", len(frame) - 4)
        with pytest.raises(ProtocolError, match="dim"):
            decode_message(bytes(frame))

    def test_empty_broadcast_rejected(self):
        body = struct.pack("<BII", 1, 0, 0)
        frame = struct.pack("<I", len(body)) + body
        with pytest.raises(ProtocolError, match="iterate"):
            decode_message(frame)


class TestClientSession:
    def start_msg(self, shard, total=13):
        return Start(
            total_rounds=total,
            M=5.0,
            dim=shard.dim,
            num_clients=1,
            x0=np.zeros(shard.dim),
        )

    def test_start_emits_warmup_and_first_report(self):
        shard = small_shards(n=1)[0]
        sess = ClientSession(0, LocalOracle(shard))
        out = sess.handle(self.start_msg(shard))
        d = shard.dim
        assert len(out) == d + 1
        x0 = np.zeros(d)
        for k in range(d):
            msg = out[k]
            assert isinstance(msg, WarmupReport) and msg.round == k
            assert np.array_equal(msg.hess_col, shard.hessian_column(x0, k))
        first = out[d]
        assert isinstance(first, ClientReport) and first.round == d
        assert np.array_equal(first.grad, shard.gradient(x0))
        assert np.array_equal(first.hess_col, shard.hessian_column(x0, 0))

    def test_broadcast_produces_one_report(self):
        shard = small_shards(n=1)[0]
        d = shard.dim
        sess = ClientSession(0, LocalOracle(shard))
        sess.handle(self.start_msg(shard))
        x = np.full(d, 0.5)
        out = sess.handle(Broadcast(round=d + 1, x=x))
        assert len(out) == 1
        report = out[0]
        assert report.round == d + 1
        assert np.array_equal(report.grad, shard.gradient(x))
        # snapshot still the starting point until the next epoch boundary
        assert np.array_equal(
            report.hess_col, shard.hessian_column(np.zeros(d), (d + 1) % d)
        )

    def test_snapshot_updates_at_epoch_boundary(self):
        shard = small_shards(n=1)[0]
        d = shard.dim
        sess = ClientSession(0, LocalOracle(shard))
        sess.handle(self.start_msg(shard))
        for r in range(d + 1, 2 * d):
            sess.handle(Broadcast(round=r, x=np.full(d, 0.1 * r)))
        x2d = np.full(d, 7.0)
        out = sess.handle(Broadcast(round=2 * d, x=x2d))
        assert np.array_equal(out[0].hess_col, shard.hessian_column(x2d, 0))

    def test_final_broadcast_yields_no_report(self):
        shard = small_shards(n=1)[0]
        d = shard.dim
        total = d + 1
        sess = ClientSession(0, LocalOracle(shard))
        sess.handle(self.start_msg(shard, total=total))
        out = sess.handle(Broadcast(round=total, x=np.ones(d)))
        assert out == []
        assert sess.handle(Stop()) == []
        assert sess.done

    def test_out_of_order_broadcast_rejected(self):
        shard = small_shards(n=1)[0]
        sess = ClientSession(0, LocalOracle(shard))
        sess.handle(self.start_msg(shard))
        with pytest.raises(ProtocolError, match="expected broadcast round"):
            sess.handle(Broadcast(round=shard.dim + 2, x=np.zeros(shard.dim)))

    def test_duplicate_start_rejected(self):
        shard = small_shards(n=1)[0]
        sess = ClientSession(0, LocalOracle(shard))
        sess.handle(self.start_msg(shard))
        with pytest.raises(ProtocolError, match="duplicate"):
            sess.handle(self.start_msg(shard))

    def test_broadcast_before_start_rejected(self):
        shard = small_shards(n=1)[0]
        sess = ClientSession(0, LocalOracle(shard))
        with pytest.raises(ProtocolError, match="before start"):
            sess.handle(Broadcast(round=0, x=np.zeros(shard.dim)))

    def test_dim_mismatch_rejected(self):
        shard = small_shards(n=1)[0]
        sess = ClientSession(0, LocalOracle(shard))
        bad = Start(total_rounds=10, M=1.0, dim=shard.dim + 1, num_clients=1, x0=np.zeros(shard.dim + 1))
        with pytest.raises(ProtocolError, match="dim"):
            sess.handle(bad)

    def test_oracle_view_hides_full_hessian(self):
        shard = small_shards(n=1)[0]
        view = LocalOracle(shard)
        assert not hasattr(view, "full_hessian")
        assert not hasattr(view, "hvp")


class TestLedger:
    def test_totals(self):
        ledger = CommLedger()
        ledger.record(RoundTraffic(0, up_scalars=6, down_scalars=0, up_messages=2, down_messages=0))
        ledger.record(RoundTraffic(1, up_scalars=12, down_scalars=3, up_messages=2, down_messages=2, up_bytes=100, down_bytes=50))
        assert ledger.up_scalars == 18
        assert ledger.down_scalars == 3
        assert ledger.up_messages == 4
        assert ledger.down_messages == 2
        assert ledger.totals()["up_bytes"] == 100

    @pytest.mark.parametrize("n,d,total", [(1, 3, 7), (2, 3, 10), (3, 4, 9), (4, 2, 11)])
    def test_exact_ledger_law(self, n, d, total):
        # after K total rounds: upstream n d^2 + 2 n d (K - d) scalars,
        # downstream d (K - d) scalars, exactly.
        rng = np.random.default_rng(d * 17 + n)
        shards = [
            ClientShard(rng.standard_normal((6, d)), rng.choice([-1.0, 1.0], size=6), lam=0.1)
            for _ in range(n)
        ]
        cfg = ServerConfig(dim=d, num_clients=n, total_rounds=total, M=10.0, x0=np.zeros(d))
        result = run_inprocess([LocalOracle(s) for s in shards], cfg)
        ledger = result.ledger
        assert ledger.up_scalars == n * d * d + 2 * n * d * (total - d)
        assert ledger.down_scalars == d * (total - d)
        assert len(ledger.rounds) == total
        for entry in ledger.rounds[:d]:
            assert entry.up_scalars == n * d and entry.down_scalars == 0
        for entry in ledger.rounds[d:]:
            assert entry.up_scalars == 2 * n * d and entry.down_scalars == d
        assert ledger.up_messages == n * total
        assert ledger.down_messages == n * (total - d)


class TestCoordinatorSchedule:
    def test_warmup_keeps_iterate_fixed(self):
        shards = small_shards()
        d = shards[0].dim
        cfg = ServerConfig(dim=d, num_clients=len(shards), total_rounds=d + 3, M=5.0, x0=np.zeros(d))
        seen, hook = capture_iterates()
        run_inprocess([LocalOracle(s) for s in shards], cfg, on_iterate=hook)
        for k in range(d + 1):
            assert np.array_equal(seen[k], np.zeros(d))
        assert not np.array_equal(seen[d + 1], np.zeros(d))

    def test_snapshots_match_direct_hessian_assembly(self):
        # the promoted matrix must equal the column-by-column mean Hessian
        # at the point one epoch behind the promotion, bit for bit
        shards = toy_shards(n=3)
        d = shards[0].dim
        total = 3 * d + 2
        cfg = ServerConfig(dim=d, num_clients=3, total_rounds=total, M=20.0, x0=np.zeros(d))
        seen, hook = capture_iterates()
        result = run_inprocess(
            [LocalOracle(s) for s in shards], cfg, on_iterate=hook, record_snapshots=True
        )
        assert [s.promotion_round for s in result.snapshots] == [d, 2 * d, 3 * d]
        for snap in result.snapshots:
            assert np.array_equal(snap.hessian_point, seen[snap.promotion_round - d])
            assert np.array_equal(snap.report_point, seen[snap.promotion_round])
            expected = np.column_stack(
                [
                    numkit.mean_in_order(
                        [s.hessian_column(snap.hessian_point, j) for s in shards]
                    )
                    for j in range(d)
                ]
            )
            assert np.array_equal(snap.hessian, expected)

    def test_first_epoch_hessian_is_at_start_point(self):
        shards = small_shards()
        d = shards[0].dim
        x0 = np.full(d, 0.25)
        cfg = ServerConfig(dim=d, num_clients=len(shards), total_rounds=d + 1, M=5.0, x0=x0)
        result = run_inprocess([LocalOracle(s) for s in shards], cfg, record_snapshots=True)
        snap = result.snapshots[0]
        assert np.array_equal(snap.hessian_point, x0)
        assert np.array_equal(snap.report_point, x0)

    def test_early_stop_skips_broadcast(self):
        shards = small_shards()
        d = shards[0].dim
        cfg = ServerConfig(
            dim=d, num_clients=len(shards), total_rounds=d + 5, M=5.0,
            x0=np.zeros(d), grad_tol=1e9,
        )
        result = run_inprocess([LocalOracle(s) for s in shards], cfg)
        assert result.stopped_early and result.stop_round == d
        ledger = result.ledger
        assert ledger.down_scalars == 0
        assert len(ledger.rounds) == d + 1
        assert ledger.rounds[-1].up_scalars == 2 * len(shards) * d

    def test_reruns_bit_identical(self):
        shards = toy_shards(n=2)
        d = shards[0].dim
        cfg = ServerConfig(dim=d, num_clients=2, total_rounds=2 * d + 3, M=15.0, x0=np.zeros(d))
        a = run_inprocess([LocalOracle(s) for s in shards], cfg)
        b = run_inprocess([LocalOracle(s) for s in shards], cfg)
        assert np.array_equal(a.final_x, b.final_x)

    def test_rejects_too_few_rounds(self):
        with pytest.raises(ValueError, match="total_rounds"):
            ServerConfig(dim=4, num_clients=1, total_rounds=4, M=1.0, x0=np.zeros(4))

    def test_newton_mode_requires_pd(self):
        # nonconvex-looking curvature: a shard with a huge nonconvex
        # penalty makes the Hessian indefinite at the start
        rng = np.random.default_rng(5)
        shard = ClientShard(
            rng.standard_normal((6, 3)) * 0.01,
            rng.choice([-1.0, 1.0], size=6),
            lam=5.0,
            regularizer="smooth_nonconvex",
        )
        x0 = np.full(3, 1.5)  # penalty curvature negative at |x| > 1
        cfg = ServerConfig(dim=3, num_clients=1, total_rounds=5, M=0.0, x0=x0)
        with pytest.raises(numkit.NotPositiveDefinite, match="round 3"):
            run_inprocess([LocalOracle(shard)], cfg)


class TestTcpTransport:
    def test_matches_inprocess_bitwise(self):
        shards = toy_shards(n=3)
        d = shards[0].dim
        cfg = ServerConfig(dim=d, num_clients=3, total_rounds=2 * d + 4, M=25.0, x0=np.zeros(d))
        seen_a, hook_a = capture_iterates()
        res_a = run_inprocess([LocalOracle(s) for s in shards], cfg, on_iterate=hook_a)
        seen_b, hook_b = capture_iterates()
        res_b = run_tcp([LocalOracle(s) for s in shards], cfg, on_iterate=hook_b, timeout=20.0)
        assert seen_a.keys() == seen_b.keys()
        for k in seen_a:
            assert np.array_equal(seen_a[k], seen_b[k]), f"iterate {k} differs"
        assert np.array_equal(res_a.final_x, res_b.final_x)
        la, lb = res_a.ledger, res_b.ledger
        assert la.up_scalars == lb.up_scalars
        assert la.down_scalars == lb.down_scalars
        assert la.up_messages == lb.up_messages

    def test_tcp_counts_bytes(self):
        shards = small_shards(n=2, d=3)
        cfg = ServerConfig(dim=3, num_clients=2, total_rounds=8, M=5.0, x0=np.zeros(3))
        result = run_tcp([LocalOracle(s) for s in shards], cfg, timeout=20.0)
        ledger = result.ledger
        # per upstream frame: 13 header + payload; warm-up 3 doubles,
        # reports 6 doubles; downstream broadcasts 3 doubles
        assert ledger.up_bytes == 2 * (3 * (13 + 24) + 5 * (13 + 48))
        assert ledger.down_bytes == 2 * 5 * (13 + 24)
        assert ledger.control_bytes > 0

    def test_dropped_client_aborts_with_round(self):
        class FailingOracle(LocalOracle):
            def __init__(self, shard, fail_at_round):
                super().__init__(shard)
                self.fail_at = fail_at_round
                self.grad_calls = 0

            def gradient(self, x):
                self.grad_calls += 1
                if self.grad_calls > self.fail_at:
                    raise RuntimeError("client storage died")
                return super().gradient(x)

        shards = small_shards(n=2, d=3)
        cfg = ServerConfig(dim=3, num_clients=2, total_rounds=12, M=5.0, x0=np.zeros(3))
        oracles_ = [LocalOracle(shards[0]), FailingOracle(shards[1], fail_at_round=3)]
        with pytest.raises(ProtocolError, match="round|closed"):
            run_tcp(oracles_, cfg, timeout=10.0)

    def test_oracle_count_mismatch(self):
        shards = small_shards(n=2, d=3)
        cfg = ServerConfig(dim=3, num_clients=3, total_rounds=8, M=5.0, x0=np.zeros(3))
        with pytest.raises(ValueError, match="client oracles"):
            run_tcp([LocalOracle(s) for s in shards], cfg)
