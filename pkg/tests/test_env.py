import math
from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from pitchrl.env import (
    EVAL_SCHEDULE,
    EnvConfig,
    PitchEnv,
    TraceRow,
    reference_at,
    reward,
    run_scripted,
    write_trace_csv,
)
from pitchrl.physics import MotorParams

unit = st.floats(0.0, 1.0, allow_nan=False)


class TestReward:
    def test_tracking_only_limit(self):
        assert reward(0.5, 0.3, 0.0) == -0.5

    def test_energy_only_limit(self):
        assert reward(0.5, 0.3, 1.0) == -0.3

    def test_mixed(self):
        # -(0.75 * 0.5) - (0.25 * 0.3)
        assert reward(0.5, 0.3, 0.25) == pytest.approx(-0.45, rel=1e-12)

    @pytest.mark.parametrize("alpha", [-0.01, 1.01, 5.0])
    def test_rejects_alpha_out_of_range(self, alpha):
        with pytest.raises(ValueError):
            reward(0.1, 0.1, alpha)

    @given(d=unit, p1=unit, p2=unit)
    def test_alpha_zero_ignores_power(self, d, p1, p2):
        assert reward(d, p1, 0.0) == reward(d, p2, 0.0)

    @given(d1=unit, d2=unit, p=unit)
    def test_alpha_one_ignores_deviation(self, d1, d2, p):
        assert reward(d1, p, 1.0) == reward(d2, p, 1.0)

    @given(d=unit, p=unit, a=unit)
    def test_range(self, d, p, a):
        assert -1.0 <= reward(d, p, a) <= 0.0

    @given(d=unit, p=unit, a=unit, bump=st.floats(0.0, 1.0))
    def test_monotone_nonincreasing(self, d, p, a, bump):
        base = reward(d, p, a)
        assert reward(min(d + bump, 1.0), p, a) <= base + 1e-15
        assert reward(d, min(p + bump, 1.0), a) <= base + 1e-15


class TestReferenceAt:
    def test_single_entry(self):
        assert reference_at(3.0, [(0.0, 0.4)]) == 0.4

    def test_before_switch(self):
        assert reference_at(4.99, [(0.0, 0.0), (5.0, 0.5)]) == 0.0

    def test_at_switch(self):
        assert reference_at(5.0, [(0.0, 0.0), (5.0, 0.5)]) == 0.5

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            reference_at(0.0, [])

    def test_rejects_unsorted(self):
        with pytest.raises(ValueError):
            reference_at(0.0, [(1.0, 0.1), (0.5, 0.2)])


def make_env(**kw) -> PitchEnv:
    return PitchEnv(EnvConfig(**kw))


class TestReset:
    def test_error_mirrors_reference_at_rest(self):
        env = make_env(ref_schedule=((0.0, 0.3),))
        obs = env.reset()
        assert obs.e == pytest.approx(-obs.r_n, abs=1e-15)

    def test_zero_schedule_gives_zero_observation(self):
        env = make_env(ref_schedule=((0.0, 0.0),))
        obs = env.reset()
        assert obs.as_array().tolist() == [0.0, 0.0, 0.0, 0.0]

    def test_same_seed_same_observation(self):
        env = make_env(train_targets=True)
        a = env.reset(seed=7)
        b = env.reset(seed=7)
        assert a == b

    def test_train_targets_vary_across_episodes(self):
        env = make_env(train_targets=True, seed=3)
        env.reset()
        r1 = env.reference()
        env.reset()
        r2 = env.reference()
        assert r1 != r2
        assert abs(r1) <= math.radians(30.0)


class TestStep:
    def test_zero_action_zero_reference_zero_reward(self):
        env = make_env(ref_schedule=((0.0, 0.0),))
        env.reset()
        res = env.step(0.0)
        assert res.reward == 0.0
        assert res.raw_power_w == 0.0

    def test_full_action_stall_power_alpha_one(self):
        env = make_env(alpha=1.0)
        env.reset()
        res = env.step(1.0)
        expect = -min(1.0, 2 * 24.0 ** 2 / (8.4 * env.p_max))
        assert res.reward == pytest.approx(expect, rel=1e-12)
        assert res.raw_power_w == pytest.approx(2 * 24.0 ** 2 / 8.4, rel=1e-12)

    def test_power_normalizer_override(self):
        env = PitchEnv(EnvConfig(alpha=1.0, p_max=500.0))
        env.reset()
        res = env.step(1.0)
        assert res.reward == pytest.approx(-(2 * 24.0 ** 2 / 8.4) / 500.0, rel=1e-12)

    @pytest.mark.parametrize("wild,edge", [(5.0, 1.0), (-3.0, -1.0)])
    def test_actions_clamp(self, wild, edge):
        a = make_env()
        b = make_env()
        a.reset()
        b.reset()
        assert a.step(wild) == b.step(edge)

    def test_rejects_non_finite_action(self):
        env = make_env()
        env.reset()
        with pytest.raises(ValueError):
            env.step(float("nan"))

    def test_episode_length_exact(self):
        env = make_env(episode_steps=25)
        env.reset()
        for k in range(1, 26):
            res = env.step(0.1)
            assert res.done == (k == 25)
        with pytest.raises(RuntimeError):
            env.step(0.0)

    def test_reward_decomposition_invariant(self):
        env = make_env(alpha=0.35)
        env.reset()
        for _ in range(50):
            res = env.step(0.6)
            assert res.reward == -(1 - 0.35) * abs(res.delta_t) - 0.35 * res.p_t
            assert res.delta_t >= 0.0 and res.p_t >= 0.0

    def test_determinism_bit_exact(self):
        def rollout():
            env = make_env(train_targets=True, seed=11, episode_steps=40)
            env.reset()
            out = []
            for k in range(90):
                res = env.step(math.sin(0.3 * k))
                out.append(res)
                if res.done:
                    env.reset()
            return out

        assert rollout() == rollout()


class TestSnapshot:
    def test_snapshot_restore_round_trip(self):
        env = make_env(train_targets=True, seed=5, episode_steps=30)
        env.reset()
        for k in range(20):
            env.step(0.4)
        snap = env.snapshot()
        tail = [env.step(0.2) for _ in range(9)]
        env.restore(snap)
        replay = [env.step(0.2) for _ in range(9)]
        assert tail == replay


class TestTrace:
    def test_zero_profile_flat_trace(self):
        env = make_env(ref_schedule=((0.0, 0.0),), episode_steps=50)
        rows = run_scripted(env, [(0.0, 0.0)], n_steps=50)
        assert all(r.phi_deg == 0.0 and r.power_W == 0.0 for r in rows)

    def test_csv_round_trip(self, tmp_path):
        rows = [TraceRow(0.01, 1.0, 2.0, 3.0, 4.0, -0.5),
                TraceRow(0.02, 1.5, 2.0, 3.0, 4.1, -0.4)]
        path = write_trace_csv(rows, tmp_path / "trace.csv")
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "t,phi_deg,r_deg,u_V,power_W,reward"
        assert len(lines) == 3


class TestConfigValidation:
    def test_rejects_bad_alpha(self):
        with pytest.raises(ValueError):
            EnvConfig(alpha=1.5)

    def test_rejects_bad_normalizers(self):
        with pytest.raises(ValueError):
            EnvConfig(p_max=0.0)
        with pytest.raises(ValueError):
            EnvConfig(delta_max=-1.0)

    def test_default_power_normalizer_tracks_motor(self):
        env = PitchEnv(EnvConfig(), motor=MotorParams(R=4.2))
        assert env.p_max == pytest.approx(2 * 24.0 ** 2 / 4.2, rel=1e-12)

    def test_eval_schedule_shape(self):
        assert EVAL_SCHEDULE[0] == (0.0, 0.0)
        assert [t for t, _ in EVAL_SCHEDULE] == [0.0, 2.0, 12.0, 22.0]
