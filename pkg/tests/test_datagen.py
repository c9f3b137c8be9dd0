import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orl.datagen import (
    DYNAMICS_KINDS,
    DataFormatError,
    ExpertSpec,
    SyntheticScenario,
    companion_radius,
    generate,
    load_offline_predictions,
    load_trajectory,
    make_rng,
    random_stable_matrix,
    uniform_ball,
    write_offline_predictions,
    write_trajectory,
)


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


class TestScenario:
    def test_rejects_unknown_kind(self):
        with pytest.raises(ValueError, match="static-linear, drifting-linear, nonlinear-sine"):
            SyntheticScenario(dynamics="chaotic")

    def test_rejects_negative_disturbance(self):
        with pytest.raises(ValueError):
            SyntheticScenario(d_max=-0.1)

    def test_rejects_bad_seed(self):
        with pytest.raises(ValueError):
            SyntheticScenario(seed=2**64)

    def test_rejects_too_many_specs(self):
        with pytest.raises(ValueError):
            SyntheticScenario(N=1, experts=(ExpertSpec(), ExpertSpec()))

    def test_dict_round_trip(self):
        sc = SyntheticScenario(
            n=2, N=3, T=50, dynamics="drifting-linear", seed=9,
            experts=(ExpertSpec(bias=(1.0, -1.0)), ExpertSpec(noise=0.3), ExpertSpec(drift_onset=10, drift_rate=0.1)),
        )
        assert SyntheticScenario.from_dict(sc.to_dict()) == sc

    def test_unspecified_experts_are_exact(self):
        assert SyntheticScenario(N=3, experts=(ExpertSpec(noise=1.0),)).expert_specs()[1:] == (ExpertSpec(),) * 2


class TestGenerate:
    def test_exact_expert_has_zero_residuals(self):
        traj, off, gt = generate(SyntheticScenario(n=2, p=2, T=200, N=2, d_max=0.0, experts=(ExpertSpec(), ExpertSpec(noise=1.0))))
        assert np.all(gt.residuals[0] == 0.0)
        assert np.array_equal(off.predictions[0], traj.window(0, 200))
        assert np.any(gt.residuals[1] != 0.0)

    def test_drift_onset_shifts_residuals(self):
        T, rate = 2000, 0.01
        sc = SyntheticScenario(
            n=2, T=T, N=1, dynamics="drifting-linear", d_max=0.05, seed=4,
            experts=(ExpertSpec(drift_onset=T // 2, drift_rate=rate),),
        )
        _, _, gt = generate(sc)
        e = gt.residuals[0]
        first, second = e[: T // 2].mean(axis=0), e[T // 2 :].mean(axis=0)
        # The ramp alone moves the second-half mean by rate * T / 4 on average.
        assert np.linalg.norm(second - first) > 0.5 * rate * T / 4

    def test_deterministic(self):
        sc = SyntheticScenario(n=3, T=100, N=2, dynamics="nonlinear-sine", seed=123, experts=(ExpertSpec(noise=0.5),))
        a, b = generate(sc), generate(sc)
        assert np.array_equal(a[0].states, b[0].states)
        assert np.array_equal(a[1].predictions, b[1].predictions)
        c = generate(SyntheticScenario(n=3, T=100, N=2, dynamics="nonlinear-sine", seed=124, experts=(ExpertSpec(noise=0.5),)))
        assert not np.array_equal(a[0].states, c[0].states)

    def test_shapes_and_history(self):
        traj, off, gt = generate(SyntheticScenario(n=2, p=3, T=40, N=4))
        assert traj.start_time == -3 and traj.end_time == 40
        assert off.predictions.shape == (4, 41, 2)
        assert gt.A.shape == (2, 6)

    def test_rejects_unstable_law(self):
        A = ((1.2, 0.0), (0.0, 0.5))
        with pytest.raises(ValueError, match="stable"):
            generate(SyntheticScenario(n=2, p=1, A=A))

    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(0, 2**64 - 1), kind=st.sampled_from(DYNAMICS_KINDS))
    def test_reported_residual_bound_holds(self, seed, kind):
        sc = SyntheticScenario(n=2, T=100, N=3, dynamics=kind, seed=seed, d_max=0.2,
                               experts=(ExpertSpec(bias=(0.5, 0.5)), ExpertSpec(noise=0.4)))
        traj, off, gt = generate(sc)
        assert np.all(np.isfinite(traj.states))
        norms = np.linalg.norm(traj.window(0, 100)[None] - off.predictions, axis=2)
        assert norms.max() <= gt.D_r

    def test_disturbances_bounded(self):
        _, _, gt = generate(SyntheticScenario(T=500, d_max=0.3, seed=1))
        assert np.linalg.norm(gt.disturbances, axis=1).max() <= 0.3


class TestRandomness:
    def test_counter_based_generator(self):
        assert isinstance(make_rng(0).bit_generator, np.random.Philox)

    def test_ball_samples(self):
        x = uniform_ball(make_rng(1), 2.0, 3, size=5000)
        r = np.linalg.norm(x, axis=1)
        assert r.max() <= 2.0
        # Radius of a uniform 3-ball sample has CDF (r/R)^3, so its median is R / 2^(1/3).
        assert np.median(r) == pytest.approx(2.0 / 2 ** (1 / 3), rel=0.03)

    @pytest.mark.parametrize("n,p", [(1, 1), (2, 2), (3, 4)])
    def test_stable_matrix_radius(self, n, p):
        A = random_stable_matrix(make_rng(n * 10 + p), n, p, 0.7)
        assert companion_radius(A) == pytest.approx(0.7, rel=1e-9)


class TestFiles:
    def test_round_trip_is_exact(self, tmp_path):
        traj, off, _ = generate(SyntheticScenario(n=2, T=30, N=3, seed=5, experts=(ExpertSpec(noise=0.7),)))
        write_trajectory(tmp_path / "traj.csv", traj)
        write_offline_predictions(tmp_path / "off.csv", off)
        t2 = load_trajectory(tmp_path / "traj.csv")
        o2 = load_offline_predictions(tmp_path / "off.csv", N=3, T=30, n=2)
        assert t2.start_time == traj.start_time and np.array_equal(t2.states, traj.states)
        assert np.array_equal(o2.predictions, off.predictions)

    def test_small_trajectory(self, tmp_path):
        p = write(tmp_path / "t.csv", "t,x0,x1\n-1,0,1\n0,2,3\n1,4,5\n")
        traj = load_trajectory(p)
        assert traj.start_time == -1 and traj.states.shape == (3, 2)

    @pytest.mark.parametrize(
        "body,line,msg",
        [
            ("0,1\n0,2\n", 3, "duplicate"),
            ("0,1\n2,2\n", 3, "gap"),
            ("0,1\n1,abc\n", 3, "non-numeric"),
            ("0,1\n1,2,3\n", 3, "fields"),
        ],
    )
    def test_trajectory_errors_carry_line_numbers(self, tmp_path, body, line, msg):
        p = write(tmp_path / "t.csv", "t,x0\n" + body)
        with pytest.raises(DataFormatError, match=msg) as info:
            load_trajectory(p)
        assert info.value.line == line
        assert f":{line}:" in str(info.value)

    def test_bad_header(self, tmp_path):
        with pytest.raises(DataFormatError):
            load_trajectory(write(tmp_path / "t.csv", "time,x0\n0,1\n"))

    def test_complete_offline_grid(self, tmp_path):
        p = write(tmp_path / "o.csv", "expert,t,x0\n1,0,0.5\n1,1,1.5\n2,0,2.5\n2,1,3.5\n")
        off = load_offline_predictions(p, N=2, T=1, n=1)
        np.testing.assert_array_equal(off.predictions[:, :, 0], [[0.5, 1.5], [2.5, 3.5]])

    def test_missing_cell_is_named(self, tmp_path):
        p = write(tmp_path / "o.csv", "expert,t,x0\n1,0,0.5\n1,1,1.5\n2,0,2.5\n")
        with pytest.raises(DataFormatError, match=r"missing prediction for \(expert=2, t=1\)"):
            load_offline_predictions(p, N=2, T=1)

    def test_unknown_expert(self, tmp_path):
        p = write(tmp_path / "o.csv", "expert,t,x0\n1,0,0.5\n3,0,1.5\n")
        with pytest.raises(DataFormatError, match="unknown expert id 3"):
            load_offline_predictions(p, N=2, T=0)

    def test_dimension_mismatch(self, tmp_path):
        p = write(tmp_path / "o.csv", "expert,t,x0\n1,0,0.5\n")
        with pytest.raises(DataFormatError):
            load_offline_predictions(p, n=2)
