import numpy as np
import pytest

from memtrack import metrics
from memtrack.errors import LengthMismatch, ShapeMismatch
from memtrack.filtering import TrackerConfig, run_filter
from memtrack.metrics import EllipseEstimate, evaluate_run, gwd, iou_ellipse, position_rmse
from memtrack.models import ScenarioConfig, nominal_cv_model
from memtrack.simulate import generate_dataset


def rot(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


class TestPositionRmse:
    def test_identical_is_zero(self):
        seq = np.arange(8.0).reshape(2, 4)
        per_step, mse, rmse = position_rmse(seq, seq)
        assert mse == 0.0 and rmse == 0.0
        np.testing.assert_array_equal(per_step, [0.0, 0.0])

    def test_constant_offset(self):
        truth = np.zeros((5, 4))
        est = truth.copy()
        est[:, 0] += 3.0
        est[:, 1] += 4.0
        per_step, mse, rmse = position_rmse(est, truth)
        np.testing.assert_allclose(per_step, 5.0)
        assert abs(mse - 25.0) < 1e-12 and abs(rmse - 5.0) < 1e-12

    def test_mean_square_convention(self):
        truth = np.zeros((2, 4))
        est = truth.copy()
        est[1, 0] = 5.0
        _, mse, rmse = position_rmse(est, truth)
        assert abs(mse - 12.5) < 1e-12
        assert abs(rmse - np.sqrt(12.5)) < 1e-12

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            position_rmse(np.zeros((2, 4)), np.zeros((3, 4)))


class TestIoU:
    def test_identical(self):
        e = EllipseEstimate(np.array([1.0, 2.0]), np.array([[4.0, 1.0], [1.0, 2.0]]))
        assert abs(iou_ellipse(e, e) - 1.0) < 1e-3

    def test_disjoint(self):
        a = EllipseEstimate(np.zeros(2), np.eye(2))
        b = EllipseEstimate(np.array([100.0, 0.0]), np.eye(2))
        assert iou_ellipse(a, b) == 0.0

    def test_concentric_circles(self):
        a = EllipseEstimate(np.zeros(2), np.eye(2))
        b = EllipseEstimate(np.zeros(2), 4.0 * np.eye(2))
        assert abs(iou_ellipse(a, b) - 0.25) < 1e-3

    def test_monte_carlo_oracle(self):
        rng = np.random.default_rng(0)
        a = EllipseEstimate(np.array([0.5, -0.2]),
                            rot(0.4) @ np.diag([9.0, 1.0]) @ rot(0.4).T)
        b = EllipseEstimate(np.array([1.5, 0.4]),
                            rot(-0.7) @ np.diag([4.0, 2.0]) @ rot(-0.7).T)
        n = 10 ** 6
        lo = np.minimum(a.center, b.center) - 4.0
        hi = np.maximum(a.center, b.center) + 4.0
        pts = rng.uniform(lo, hi, size=(n, 2))
        def inside(e, p):
            d = p - e.center
            sol = np.linalg.solve(e.extent, d.T).T
            return np.einsum("ij,ij->i", d, sol) <= 1.0
        in_a = inside(a, pts)
        in_b = inside(b, pts)
        mc = in_a[in_b].sum() / (in_a | in_b).sum()
        assert abs(iou_ellipse(a, b) - mc) < 3e-3

    def test_symmetry_and_rigid_motion_invariance(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            m1, m2 = rng.standard_normal((2, 2, 2))
            e1 = EllipseEstimate(rng.standard_normal(2), m1 @ m1.T + 0.5 * np.eye(2))
            e2 = EllipseEstimate(rng.standard_normal(2), m2 @ m2.T + 0.5 * np.eye(2))
            assert abs(iou_ellipse(e1, e2) - iou_ellipse(e2, e1)) < 1e-9
            r = rot(rng.uniform(0, 2 * np.pi))
            t = rng.standard_normal(2) * 10
            f1 = EllipseEstimate(r @ e1.center + t, r @ e1.extent @ r.T)
            f2 = EllipseEstimate(r @ e2.center + t, r @ e2.extent @ r.T)
            assert abs(iou_ellipse(e1, e2) - iou_ellipse(f1, f2)) < 1e-6


class TestGwd:
    def test_identical_zero(self):
        e = EllipseEstimate(np.array([1.0, 2.0]), np.array([[3.0, 0.5], [0.5, 1.0]]))
        assert abs(gwd(e, e)) < 1e-9

    def test_swapped_diagonals(self):
        a = EllipseEstimate(np.zeros(2), np.diag([4.0, 1.0]))
        b = EllipseEstimate(np.zeros(2), np.diag([1.0, 4.0]))
        assert abs(gwd(a, b) - 2.0) < 1e-9

    def test_commuting_extents_closed_form(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            la = rng.uniform(0.5, 5.0, 2)
            lb = rng.uniform(0.5, 5.0, 2)
            ca, cb = rng.standard_normal((2, 2))
            a = EllipseEstimate(ca, np.diag(la))
            b = EllipseEstimate(cb, np.diag(lb))
            expected = float(np.sum((np.sqrt(la) - np.sqrt(lb)) ** 2)
                             + np.sum((ca - cb) ** 2))
            assert abs(gwd(a, b) - expected) < 1e-9

    def test_center_term_decouples(self):
        rng = np.random.default_rng(3)
        m = rng.standard_normal((2, 2))
        ext = m @ m.T + np.eye(2)
        a = EllipseEstimate(np.zeros(2), ext)
        t = np.array([2.0, -1.0])
        shifted_both = gwd(EllipseEstimate(a.center + t, ext),
                           EllipseEstimate(t, ext))
        assert abs(shifted_both - gwd(a, EllipseEstimate(np.zeros(2), ext))) < 1e-12
        one_shifted = gwd(a, EllipseEstimate(a.center + t, ext))
        assert abs(one_shifted - float(t @ t)) < 1e-9

    def test_symmetry_and_triangle_inequality(self):
        rng = np.random.default_rng(4)
        for _ in range(300):
            ms = rng.standard_normal((3, 2, 2))
            es = [EllipseEstimate(rng.standard_normal(2) * 3, m @ m.T + 0.3 * np.eye(2))
                  for m in ms]
            dab = np.sqrt(gwd(es[0], es[1]))
            dba = np.sqrt(gwd(es[1], es[0]))
            assert abs(dab - dba) < 1e-9
            dbc = np.sqrt(gwd(es[1], es[2]))
            dac = np.sqrt(gwd(es[0], es[2]))
            assert dac <= dab + dbc + 1e-6


class TestEvaluateRun:
    def _dataset_and_runs(self):
        cfg = ScenarioConfig(steps=25, cases=3, seed=19)
        ds = generate_dataset(cfg)
        model = nominal_cv_model(sigma_w=cfg.sigma_w)
        runs = []
        for idx in ds.test_idx:
            st, ex, _ = run_filter(ds.cases[int(idx)].frames, model, TrackerConfig())
            runs.append((st, ex))
        return ds, runs

    def test_report_shapes(self):
        ds, runs = self._dataset_and_runs()
        rep = evaluate_run(ds, runs, polygon_order=64)
        assert len(rep.per_case) == len(ds.test_idx)
        assert all(series.shape == (24, 3) for series in rep.per_case)
        assert 0.0 <= rep.mean_iou <= 1.0
        assert rep.peak_iou <= rep.mean_iou
        assert rep.peak_position_error >= rep.position_rmse

    def test_perfect_posteriors(self):
        from memtrack.models import ExtensionState, TrackState
        cfg = ScenarioConfig(steps=10, cases=1, seed=23)
        ds = generate_dataset(cfg)
        case = ds.cases[0]
        states = [TrackState(mean=case.truth.states[k], cov=np.eye(4))
                  for k in range(1, 10)]
        exts = [ExtensionState(dof=10.0, param=4.0 * case.truth.extents[k])
                for k in range(1, 10)]
        rep = evaluate_run(ds, [(states, exts)], case_indices=[0])
        assert rep.position_rmse == 0.0
        assert rep.mean_iou > 0.999
        assert rep.mean_gwd < 1e-9

    def test_deterministic(self):
        ds, runs = self._dataset_and_runs()
        a = evaluate_run(ds, runs, polygon_order=64)
        b = evaluate_run(ds, runs, polygon_order=64)
        assert a.position_rmse == b.position_rmse
        assert a.mean_iou == b.mean_iou
        assert a.mean_gwd == b.mean_gwd

    def test_shape_mismatch(self):
        ds, runs = self._dataset_and_runs()
        with pytest.raises(ShapeMismatch):
            evaluate_run(ds, runs[:-1])
