import numpy as np
import pytest

from memtrack import filtering, models
from memtrack.errors import BadDof, SingularInnovation, TooFewPoints
from memtrack.filtering import TrackerConfig
from memtrack.models import Compensation, ExtensionState, MeasurementFrame, TrackState
from memtrack.simulate import generate_case
from memtrack.spdmat import sample_wishart, sample_inverse_wishart


def textbook_kalman_step(mean, cov, z, fmat, q, hmat, r):
    """Independent predict/update oracle, no shared code with the filter."""
    mean_p = fmat @ mean
    cov_p = fmat @ cov @ fmat.T + q
    innov_cov = hmat @ cov_p @ hmat.T + r
    gain = cov_p @ hmat.T @ np.linalg.inv(innov_cov)
    mean_u = mean_p + gain @ (z - hmat @ mean_p)
    cov_u = cov_p - gain @ hmat @ cov_p
    return mean_u, cov_u


@pytest.fixture()
def cv_model():
    return models.nominal_cv_model(sigma_w=0.4, dt=1.0)


@pytest.fixture()
def zero():
    return Compensation.zero()


class TestPredictState:
    def test_zero_compensation_cv(self, cv_model, zero):
        prior = TrackState(mean=np.array([0.0, 0.0, 10.0, 0.0]), cov=np.eye(4))
        pred = filtering.predict_state(prior, cv_model, zero)
        np.testing.assert_array_equal(pred.mean, [10.0, 0.0, 10.0, 0.0])
        fmat = cv_model.jac_f(prior.mean)
        np.testing.assert_allclose(pred.cov, fmat @ prior.cov @ fmat.T + cv_model.q,
                                   atol=1e-12)

    def test_shift_additive(self, cv_model, zero):
        prior = TrackState(mean=np.array([0.0, 0.0, 10.0, 0.0]), cov=np.eye(4))
        comp = Compensation(df=np.array([1.0, 0.0, 0.0, 0.0]), pf=np.zeros((4, 4)),
                            dh=np.zeros(2), ph=np.zeros((2, 2)), pphi=np.zeros((2, 2)))
        pred = filtering.predict_state(prior, cv_model, comp)
        np.testing.assert_array_equal(pred.mean, [11.0, 0.0, 10.0, 0.0])

    def test_covariance_inflation(self, cv_model, zero):
        prior = TrackState(mean=np.zeros(4), cov=np.eye(4))
        comp = Compensation(df=np.zeros(4), pf=np.diag([1.0, 2.0, 3.0, 4.0]),
                            dh=np.zeros(2), ph=np.zeros((2, 2)), pphi=np.zeros((2, 2)))
        base = filtering.predict_state(prior, cv_model, zero)
        inflated = filtering.predict_state(prior, cv_model, comp)
        np.testing.assert_allclose(inflated.cov - base.cov, comp.pf, atol=1e-12)


class TestPredictExtension:
    def test_dof_closed_form_value(self, zero):
        # lambda = 4, delta = 7: 2*7*5*3*2/(16*11) + 8 = 420/176 + 8
        model = models.nominal_cv_model(sigma_w=0.4, mean_preserving_transition=False)
        prior = ExtensionState(dof=10.0, param=np.eye(2))
        pred = filtering.predict_extension(prior, model, zero)
        assert abs(pred.dof - (420.0 / 176.0 + 8.0)) < 1e-10
        assert abs(pred.dof - 10.3864) < 1e-4

    def test_param_scaling_raw_transition(self, zero):
        model = models.nominal_cv_model(sigma_w=0.4, mean_preserving_transition=False)
        prior = ExtensionState(dof=10.0, param=np.eye(2))
        pred = filtering.predict_extension(prior, model, zero)
        expected = ((pred.dof - 6.0) / 4.0) * 7.0
        np.testing.assert_allclose(pred.param, expected * np.eye(2), atol=1e-12)
        assert abs(expected - 7.676) < 1e-3

    def test_mean_preserving_divides_by_delta(self, cv_model, zero):
        prior = ExtensionState(dof=10.0, param=np.eye(2))
        pred = filtering.predict_extension(prior, cv_model, zero)
        raw_model = models.nominal_cv_model(sigma_w=0.4, mean_preserving_transition=False)
        raw = filtering.predict_extension(prior, raw_model, zero)
        np.testing.assert_allclose(raw.param, 7.0 * pred.param, rtol=1e-12)

    def test_rotation_similarity(self, zero):
        th = 0.3
        rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        model = models.nominal_cv_model(sigma_w=0.4, a=rot,
                                        mean_preserving_transition=False)
        prior = ExtensionState(dof=12.0, param=np.diag([4.0, 1.0]))
        pred = filtering.predict_extension(prior, model, zero)
        lam = 12.0 - 6.0
        scale = (pred.dof - 6.0) / lam * 7.0
        np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(pred.param)),
                                   np.sort(scale * np.array([1.0, 4.0])), rtol=1e-10)

    def test_bad_dof(self, cv_model, zero):
        with pytest.raises(BadDof):
            filtering.predict_extension(ExtensionState(dof=8.0, param=np.eye(2)),
                                        cv_model, zero)

    def test_wishart_transition_mean_consistency(self, zero):
        """Monte Carlo oracle for the raw-form prediction: draw the prior
        extent from an inverse Wishart whose mean equals the filter's point
        estimate, push it through the Wishart transition W(delta, X_prev),
        and compare the sample mean to the predicted extent."""
        model = models.nominal_cv_model(sigma_w=0.4, mean_preserving_transition=False)
        prior = ExtensionState(dof=16.0, param=np.array([[8.0, 2.0], [2.0, 5.0]]))
        pred = filtering.predict_extension(prior, model, zero)
        analytic = filtering.extension_mean(pred)
        np.testing.assert_allclose(analytic, 7.0 * filtering.extension_mean(prior),
                                   rtol=1e-10)
        # textbook IW(v', P) has mean P/(v' - 3); v' = dof - 3 matches the
        # filter's lambda convention P/(dof - 6)
        rng = np.random.default_rng(1234)
        draws = []
        for _ in range(6000):
            x_prev = sample_inverse_wishart(prior.dof - 3.0, prior.param, rng)
            draws.append(sample_wishart(model.delta, x_prev, rng) / model.delta)
        mc = model.delta * np.mean(draws, axis=0)
        np.testing.assert_allclose(mc, analytic, rtol=0.05)


class TestInnovation:
    def test_block_arithmetic(self, zero):
        model = models.nominal_cv_model(sigma_w=0.4, b=np.eye(2))
        pred = TrackState(mean=np.zeros(4), cov=np.eye(4))
        ext = ExtensionState(dof=10.0, param=4.0 * np.eye(2))  # extent mean = I
        stats = filtering.innovation(pred, ext, model, zero, count=1)
        np.testing.assert_allclose(stats.pzz, 2.0 * np.eye(2), atol=1e-12)

    def test_scatter_term_vanishes_large_n(self, zero):
        model = models.nominal_cv_model(sigma_w=0.4, b=np.eye(2))
        pred = TrackState(mean=np.zeros(4), cov=np.eye(4))
        ext = ExtensionState(dof=10.0, param=4.0 * np.eye(2))
        stats = filtering.innovation(pred, ext, model, zero, count=10 ** 9)
        hmat = model.jac_h(pred.mean)
        np.testing.assert_allclose(stats.pzz, hmat @ pred.cov @ hmat.T, atol=1e-6)

    def test_pxz_selects_columns(self, cv_model, zero):
        rng = np.random.default_rng(0)
        m = rng.standard_normal((4, 4))
        cov = m @ m.T + np.eye(4)
        pred = TrackState(mean=np.zeros(4), cov=cov)
        ext = ExtensionState(dof=10.0, param=np.eye(2))
        stats = filtering.innovation(pred, ext, cv_model, zero, count=5)
        np.testing.assert_allclose(stats.pxz, cov[:, :2], atol=1e-12)


class TestUpdateState:
    def test_zero_innovation_keeps_mean(self, cv_model, zero):
        pred = TrackState(mean=np.array([1.0, 2.0, 3.0, 4.0]), cov=np.eye(4))
        ext = ExtensionState(dof=10.0, param=np.eye(2))
        stats = filtering.innovation(pred, ext, cv_model, zero, count=4)
        out = filtering.update_state(pred, stats, np.array(stats.z_pred))
        np.testing.assert_allclose(out.mean, pred.mean, atol=1e-12)

    def test_covariance_never_grows(self, cv_model, zero):
        rng = np.random.default_rng(7)
        for _ in range(25):
            m = rng.standard_normal((4, 4))
            pred = TrackState(mean=rng.standard_normal(4), cov=m @ m.T + 0.5 * np.eye(4))
            ext = ExtensionState(dof=9.0 + rng.uniform(0, 5), param=np.eye(2) * rng.uniform(1, 5))
            stats = filtering.innovation(pred, ext, cv_model, zero, count=int(rng.integers(2, 30)))
            out = filtering.update_state(pred, stats, rng.standard_normal(2))
            diff_eigs = np.linalg.eigvalsh(pred.cov - out.cov)
            assert diff_eigs.min() > -1e-9

    def test_singular_innovation_rejected(self, zero):
        model = models.nominal_cv_model(sigma_w=0.4)
        pred = TrackState(mean=np.zeros(4), cov=np.zeros((4, 4)))
        stats = filtering.InnovationStats(
            z_pred=np.zeros(2), pxz=np.zeros((4, 2)), pzz=np.zeros((2, 2)),
            s_inv=np.zeros((2, 2)), count=1)
        with pytest.raises(SingularInnovation):
            filtering.update_state(pred, stats, np.ones(2))


class TestUpdateExtension:
    def test_dof_increment_exact(self, cv_model, zero):
        case = generate_case(models.ScenarioConfig(steps=140, cases=1, seed=5), 5, 0)
        states, exts, diags = filtering.run_filter(case.frames, cv_model, TrackerConfig())
        for k, diag in enumerate(diags):
            n = case.frames[k + 1].count
            assert exts[k].dof - diag.pred_ext.dof == n

    def test_no_information_keeps_param(self, cv_model):
        pred_ext = ExtensionState(dof=10.0, param=np.diag([3.0, 2.0]))
        stats = filtering.InnovationStats(
            z_pred=np.array([1.0, 1.0]), pxz=np.zeros((4, 2)),
            pzz=np.eye(2), s_inv=0.5 * np.eye(2), count=3)
        fs = models.FrameStats(mean=np.array([1.0, 1.0]), scatter=np.zeros((2, 2)), count=3)
        out = filtering.update_extension(pred_ext, stats, fs, cv_model)
        np.testing.assert_allclose(out.param, pred_ext.param, atol=1e-12)
        assert out.dof == 13.0

    def test_result_symmetric_psd(self, cv_model, zero):
        rng = np.random.default_rng(11)
        for _ in range(25):
            m = rng.standard_normal((2, 2))
            pred_ext = ExtensionState(dof=rng.uniform(9, 30), param=m @ m.T + np.eye(2))
            pts = rng.standard_normal((8, 2)) * 2.0
            fs = models.frame_stats(MeasurementFrame(pts))
            stats = filtering.InnovationStats(
                z_pred=rng.standard_normal(2), pxz=np.zeros((4, 2)),
                pzz=np.eye(2), s_inv=np.abs(rng.standard_normal((2, 2))), count=fs.count)
            out = filtering.update_extension(pred_ext, stats, fs, cv_model)
            np.testing.assert_allclose(out.param, out.param.T, atol=1e-12)
            assert np.linalg.eigvalsh(out.param).min() >= -1e-12


class TestExtensionMean:
    def test_divides_by_lambda(self):
        assert np.allclose(
            filtering.extension_mean(ExtensionState(dof=10.0, param=4.0 * np.eye(2))),
            np.eye(2))
        np.testing.assert_allclose(
            filtering.extension_mean(ExtensionState(dof=8.0, param=np.diag([20.0, 2.0]))),
            np.diag([10.0, 1.0]))

    def test_bad_dof(self):
        with pytest.raises(BadDof):
            filtering.extension_mean(ExtensionState(dof=6.0, param=np.eye(2)))


class TestInitTrack:
    def test_position_from_mean(self):
        frame = MeasurementFrame(np.array([[4.0, 6.0], [6.0, 4.0]]))
        state, ext = filtering.init_track(frame, TrackerConfig())
        np.testing.assert_allclose(state.mean, [5.0, 5.0, 0.0, 0.0])

    def test_coincident_points_floor(self):
        frame = MeasurementFrame(np.tile([1.0, 1.0], (5, 1)))
        cfg = TrackerConfig(min_extent=0.5)
        _, ext = filtering.init_track(frame, cfg)
        np.testing.assert_allclose(ext.param, 0.5 * np.eye(2), atol=1e-12)

    def test_rejects_single_point(self):
        with pytest.raises(TooFewPoints):
            filtering.init_track(MeasurementFrame(np.array([[0.0, 0.0]])), TrackerConfig())

    def test_recovers_ellipse_axes(self):
        """Sample covariance of a uniform solid ellipse is diag(a^2, b^2)/4,
        so 2 * sqrt(eigenvalues of the sample covariance) estimates the
        semi-axes."""
        rng = np.random.default_rng(3)
        a, b = 5.0, 1.0
        radius = np.sqrt(rng.uniform(0, 1, 200))
        ang = rng.uniform(0, 2 * np.pi, 200)
        pts = np.stack([a * radius * np.cos(ang), b * radius * np.sin(ang)], axis=1)
        cfg = TrackerConfig(min_extent=1e-6)
        _, ext = filtering.init_track(MeasurementFrame(pts), cfg)
        sample_cov_eigs = np.sort(np.linalg.eigvalsh(ext.param / (cfg.init_dof - 6.0)))
        recovered = 2.0 * np.sqrt(sample_cov_eigs)
        assert abs(recovered[1] - a) / a < 0.25
        assert abs(recovered[0] - b) / b < 0.25


class TestKalmanEquivalence:
    def test_zero_compensation_equals_textbook_kalman(self, cv_model):
        """State branch with zero compensation == textbook Kalman with
        R_k = B Xhat_k B^T / n_k, to 1e-10 over a long seeded run."""
        case = generate_case(models.ScenarioConfig(steps=101, cases=1, seed=9), 9, 0)
        tcfg = TrackerConfig()
        states, exts, diags = filtering.run_filter(case.frames, cv_model, tcfg)

        state0, _ = filtering.init_track(case.frames[0], tcfg)
        mean, cov = state0.mean, state0.cov
        fmat = cv_model.jac_f(mean)
        hmat = cv_model.jac_h(mean)
        worst = 0.0
        for k, diag in enumerate(diags):
            xhat = filtering.extension_mean(diag.pred_ext)
            r = cv_model.b @ xhat @ cv_model.b.T / diag.frame.count
            mean, cov = textbook_kalman_step(
                mean, cov, diag.frame.mean, fmat, cv_model.q, hmat, r)
            worst = max(worst, float(np.max(np.abs(mean - states[k].mean))))
            worst = max(worst, float(np.max(np.abs(cov - states[k].cov))))
        assert worst < 1e-10

    def test_stationary_target_error_shrinks(self, zero):
        """Near-exact measurements of a fixed target: position error decays."""
        model = models.nominal_cv_model(sigma_w=0.01)
        rng = np.random.default_rng(2)
        frames = [MeasurementFrame(rng.normal(0.0, 1e-3, size=(20, 2)))
                  for _ in range(40)]
        states, _, _ = filtering.run_filter(frames, model, TrackerConfig(pos_var=25.0))
        errs = [float(np.linalg.norm(s.mean[:2])) for s in states]
        assert errs[-1] < errs[0]
        assert errs[-1] < 1e-2


class TestFilterStep:
    def test_matches_manual_composition(self, cv_model, zero):
        case = generate_case(models.ScenarioConfig(steps=3, cases=1, seed=13), 13, 0)
        tcfg = TrackerConfig()
        state, ext = filtering.init_track(case.frames[0], tcfg)
        auto_state, auto_ext, diag = filtering.filter_step(
            state, ext, case.frames[1], cv_model, zero)
        fs = models.frame_stats(case.frames[1])
        pred = filtering.predict_state(state, cv_model, zero)
        ext_pred = filtering.predict_extension(ext, cv_model, zero)
        stats = filtering.innovation(pred, ext_pred, cv_model, zero, fs.count)
        manual_state = filtering.update_state(pred, stats, fs.mean)
        manual_ext = filtering.update_extension(ext_pred, stats, fs, cv_model)
        np.testing.assert_array_equal(auto_state.mean, manual_state.mean)
        np.testing.assert_array_equal(auto_ext.param, manual_ext.param)

    def test_single_point_frame_increments_dof_by_one(self, cv_model, zero):
        state = TrackState(mean=np.zeros(4), cov=np.eye(4))
        ext = ExtensionState(dof=12.0, param=np.eye(2) * 6.0)
        frame = MeasurementFrame(np.array([[0.5, -0.5]]))
        _, new_ext, diag = filtering.filter_step(state, ext, frame, cv_model, zero)
        assert new_ext.dof - diag.pred_ext.dof == 1

    def test_feldmann_update_mode_runs(self, zero):
        model = models.nominal_cv_model(sigma_w=0.4, feldmann_update=True)
        case = generate_case(models.ScenarioConfig(steps=30, cases=1, seed=17), 17, 0)
        states, exts, _ = filtering.run_filter(case.frames, model, TrackerConfig())
        assert all(np.all(np.isfinite(e.param)) for e in exts)
        assert np.linalg.eigvalsh(exts[-1].param).min() > 0
