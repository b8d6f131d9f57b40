"""Bridge protocol: framing, lifecycle, faults, and round-trip fidelity."""

from __future__ import annotations

import json
import sys
import textwrap

import numpy as np
import pytest

from stclab.bridge import ChildProcessTransport, decode, encode, make_meta
from stclab.engine import run_episode
from stclab.errors import ProtocolFault
from stclab.policies import bridge_policy, lqr_policy


ECHO_PEER = textwrap.dedent("""
    import json, sys
    for line in sys.stdin:
        msg = json.loads(line)
        if msg["type"] == "obs":
            m = int(%d)
            sys.stdout.write(json.dumps({"type": "act", "u": [0.0] * m, "tau_idx": 0}) + "\\n")
            sys.stdout.flush()
        elif msg["type"] == "close":
            break
""")

# mirrors the backup feedback using only served metadata
LQR_PEER = textwrap.dedent("""
    import json, sys
    import numpy as np
    k = None
    u_max = None
    for line in sys.stdin:
        msg = json.loads(line)
        if msg["type"] == "meta":
            k = np.asarray(msg["k"], dtype=float)
            u_max = np.asarray(msg["u_max"], dtype=float)
        elif msg["type"] == "obs":
            x = np.asarray(msg["x"], dtype=float)
            u = np.clip(-(k @ x), -u_max, u_max)
            sys.stdout.write(json.dumps(
                {"type": "act", "u": [float(v) for v in u], "tau_idx": 0}) + "\\n")
            sys.stdout.flush()
        elif msg["type"] == "close":
            break
""")


def spawn_peer(code: str) -> ChildProcessTransport:
    return ChildProcessTransport([sys.executable, "-c", code])


class TestFraming:
    def test_round_trip(self):
        msg = {"type": "act", "u": [0.1, -0.2], "tau_idx": 3}
        assert decode(encode(msg).strip()) == msg

    def test_malformed_json_rejected(self):
        with pytest.raises(ProtocolFault):
            decode(b"{not json")

    def test_unknown_type_rejected(self):
        with pytest.raises(ProtocolFault):
            decode(b'{"type": "surprise"}')

    def test_obs_schema_matches_state_dim(self, setups):
        meta = make_meta(setups["pendulum"])
        assert meta["obs_dim"] == 4  # 2 states + msi + b
        assert len(meta["grid"]) == 8
        assert np.asarray(meta["k"]).shape == (1, 2)


class TestBridgePolicy:
    def test_echo_peer_acts_as_zero_input(self, soft_setups):
        s = soft_setups["pendulum"]
        transport = spawn_peer(ECHO_PEER % s.model.m)
        pol = bridge_policy(transport, s.grid, meta=make_meta(s))
        try:
            tr = run_episode(s.spec, pol, np.random.default_rng(0), seed=0)
        finally:
            pol.close()
        assert all(np.array_equal(r.u_proposed, np.zeros(1)) for r in tr.records)
        assert all(r.tau_executed == s.grid.tau_min for r in tr.records)
        assert tr.cause != "protocol_fault"

    def test_lqr_peer_reproduces_in_process_trace(self, soft_setups):
        s = soft_setups["pendulum"]
        transport = spawn_peer(LQR_PEER)
        pol = bridge_policy(transport, s.grid, meta=make_meta(s))
        try:
            remote = run_episode(s.spec, pol, np.random.default_rng(4), episode=0, seed=4)
        finally:
            pol.close()
        local_pol = lqr_policy(s.cert, s.lin, s.grid.tau_min, s.grid)
        local = run_episode(s.spec, local_pol, np.random.default_rng(4), episode=0, seed=4)
        assert len(remote.records) == len(local.records)
        for a, b in zip(remote.records, local.records):
            assert np.array_equal(a.x, b.x)
            assert np.array_equal(a.u_executed, b.u_executed)
            assert a.reward == b.reward
        assert remote.summary() == local.summary()

    def test_out_of_grid_tau_index_faults(self, soft_setups):
        s = soft_setups["pendulum"]
        peer = textwrap.dedent("""
            import json, sys
            for line in sys.stdin:
                msg = json.loads(line)
                if msg["type"] == "obs":
                    sys.stdout.write(json.dumps({"type": "act", "u": [0.0], "tau_idx": 9}) + "\\n")
                    sys.stdout.flush()
        """)
        transport = spawn_peer(peer)
        pol = bridge_policy(transport, s.grid, meta=make_meta(s))
        try:
            tr = run_episode(s.spec, pol, np.random.default_rng(0), seed=0)
        finally:
            pol.close()
        assert tr.cause == "protocol_fault"

    def test_peer_death_faults(self, soft_setups):
        s = soft_setups["pendulum"]
        transport = spawn_peer("import sys; sys.exit(0)")
        pol = bridge_policy(transport, s.grid, timeout=5.0)
        try:
            tr = run_episode(s.spec, pol, np.random.default_rng(0), seed=0)
        finally:
            pol.close()
        assert tr.cause == "protocol_fault"

    def test_timeout_faults(self, soft_setups):
        s = soft_setups["pendulum"]
        transport = spawn_peer("import time\nwhile True: time.sleep(0.2)")
        pol = bridge_policy(transport, s.grid, timeout=0.3)
        try:
            tr = run_episode(s.spec, pol, np.random.default_rng(0), seed=0)
        finally:
            pol.close()
        assert tr.cause == "protocol_fault"
