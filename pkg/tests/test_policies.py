from __future__ import annotations

import math

import numpy as np
import pytest

from stclab.engine import Observation, run_episode
from stclab.errors import ProtocolFault
from stclab.policies import (
    classical_stc_policy,
    fixed_tau_policy,
    lqr_policy,
    make_policy,
)

from conftest import PLANTS


def obs(x, msi=0.05, b=0):
    return Observation(x=np.asarray(x, dtype=float), msi=msi, b=b)


class TestLqrPolicy:
    def test_feedback_and_fixed_tau(self, setups):
        s = setups["pendulum"]
        pol = lqr_policy(s.cert, s.lin, 0.05, s.grid)
        u, tau = pol.act(obs([0.01, -0.02]))
        assert tau == 0.05
        assert np.allclose(u, -(s.cert.k @ [0.01, -0.02]))

    def test_saturates_exactly_at_limits(self, setups):
        s = setups["pendulum"]
        pol = lqr_policy(s.cert, s.lin, 0.05, s.grid)
        u, _ = pol.act(obs([1.0, 0.0]))  # raw command ~ -10.9
        assert u[0] == -2.0
        u, _ = pol.act(obs([-1.0, 0.0]))
        assert u[0] == 2.0

    def test_off_grid_tau_rejected(self, setups):
        s = setups["pendulum"]
        with pytest.raises(ProtocolFault):
            lqr_policy(s.cert, s.lin, 0.037, s.grid)


class TestClassicalStc:
    @pytest.mark.parametrize("saturate", (False, True))
    def test_greedy_max_property(self, setups, saturate):
        # selection must be the largest grid value passing the decay test,
        # evaluated exhaustively with the policy's own prediction form
        rng = np.random.default_rng(0)
        for plant in PLANTS:
            s = setups[plant]
            pol = classical_stc_policy(s.cert, s.lin, s.grid, saturate_prediction=saturate)
            for _ in range(40):
                x = rng.uniform(-0.2, 0.2, s.lin.n)
                u_exec, tau = pol.act(obs(x))
                v0 = float(x @ s.cert.p @ x)
                passing = []
                for j in range(s.grid.size):
                    if saturate:
                        xp = pol.phis[j] @ x + pol.gammas[j] @ u_exec
                    else:
                        xp = pol.maps[j] @ x
                    if float(xp @ s.cert.p @ xp) <= v0 * math.exp(
                        -s.cert.decay * s.grid.values[j]
                    ):
                        passing.append(j)
                if passing:
                    assert tau == pytest.approx(s.grid.values[max(passing)])
                else:
                    assert tau == s.grid.tau_min

    def test_fallback_is_tau_min(self, setups):
        s = setups["quadrotor3d"]
        pol = classical_stc_policy(s.cert, s.lin, s.grid)
        rng = np.random.default_rng(1)
        for _ in range(50):
            _, tau = pol.act(obs(rng.uniform(-0.3, 0.3, 12)))
            assert any(abs(tau - g) < 1e-12 for g in s.grid.values)

    def test_saturated_variant_matches_when_unsaturated(self, setups):
        s = setups["pendulum"]
        raw = classical_stc_policy(s.cert, s.lin, s.grid)
        sat = classical_stc_policy(s.cert, s.lin, s.grid, saturate_prediction=True)
        rng = np.random.default_rng(2)
        for _ in range(30):
            x = rng.uniform(-0.05, 0.05, 2)  # well inside the unsaturated region
            u1, t1 = raw.act(obs(x))
            u2, t2 = sat.act(obs(x))
            assert np.array_equal(u1, u2)
            assert t1 == t2


class TestFixedTau:
    def test_overrides_interval_exactly(self, setups):
        s = setups["pendulum"]
        pol = fixed_tau_policy(classical_stc_policy(s.cert, s.lin, s.grid), 0.40, s.grid)
        rng = np.random.default_rng(3)
        for _ in range(20):
            _, tau = pol.act(obs(rng.uniform(-0.1, 0.1, 2)))
            assert tau == 0.40

    def test_wrapping_same_tau_is_identity(self, soft_setups):
        s = soft_setups["pendulum"]
        inner = lqr_policy(s.cert, s.lin, s.grid.tau_min, s.grid)
        wrapped = fixed_tau_policy(inner, s.grid.tau_min, s.grid)
        t1 = run_episode(s.spec, inner, np.random.default_rng(0), seed=0)
        t2 = run_episode(s.spec, wrapped, np.random.default_rng(0), seed=0)
        for a, b in zip(t1.records, t2.records):
            assert np.array_equal(a.x, b.x)
            assert a.tau_executed == b.tau_executed

    def test_keeps_u_channel(self, setups):
        s = setups["pendulum"]
        inner = lqr_policy(s.cert, s.lin, s.grid.tau_min, s.grid)
        pol = fixed_tau_policy(inner, 0.40, s.grid)
        x = [0.05, -0.1]
        u_inner, _ = inner.act(obs(x))
        u, tau = pol.act(obs(x))
        assert np.array_equal(u, u_inner)
        assert tau == 0.40


class TestMakePolicy:
    def test_kinds(self, setups):
        s = setups["pendulum"]
        assert make_policy(s, {"kind": "b1"}).tau == s.grid.tau_min
        assert make_policy(s, {"kind": "b2"}).tau == 0.40
        assert make_policy(s, {"kind": "lqr", "tau": 0.15}).tau == 0.15
        pol = make_policy(s, {"kind": "fixed_tau", "inner": {"kind": "b3"}, "tau": 0.2})
        assert pol.tau == 0.2

    def test_unknown_kind_rejected(self, setups):
        from stclab.errors import ConfigError

        with pytest.raises(ConfigError):
            make_policy(setups["pendulum"], {"kind": "dqn"})
