import numpy as np
import pytest

from csviu import (
    CsviuError,
    OperatorSet,
    SystemModel,
    check_alpha_stability,
    check_detectability,
    closed_loop_check,
    closed_loop_cost_step,
    detectability_search,
    spectral_radius,
)

import support


def _plain(A, sigma_bar_x, n=None, C=None):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = n or A.shape[0]
    return SystemModel(
        A=A,
        B=np.zeros((n, 1)),
        C=np.eye(n) if C is None else C,
        D=np.zeros((n if C is None else np.atleast_2d(C).shape[0], 1)),
        sigma=np.zeros((n, 1)),
        sigma_x=np.zeros((n, n)),
        sigma_bar_x=np.atleast_2d(np.asarray(sigma_bar_x, dtype=float)),
        sigma_u=np.zeros((n, 1)),
        sigma_bar_u=np.zeros((n, 1)),
    )


class TestFiveConditions:
    def test_scalar_stable(self):
        # propagation factor 0.5^2 + 0.3^2 = 0.34
        report = check_alpha_stability(_plain(0.5, 0.3), alpha=1.0)
        assert report.radius == pytest.approx(0.34, abs=1e-12)
        assert report.verdict == "stable"
        assert all(c is True for c in report.conditions)
        assert report.counter_discount_eig_ok is True
        assert report.max_abs_eig == pytest.approx(0.5, abs=1e-12)

    def test_scalar_unstable(self):
        report = check_alpha_stability(_plain(1.1, 0.0), alpha=1.0)
        assert report.radius == pytest.approx(1.21, abs=1e-12)
        assert report.verdict == "unstable"
        assert report.d_stable is False
        assert report.eig_ok is False

    def test_discount_rescues_unstable_mean(self):
        # alpha * (1.1^2) = 0.5 * 1.21 < 1
        report = check_alpha_stability(_plain(1.1, 0.0), alpha=0.5)
        assert report.verdict == "stable"

    def test_growth_noise_alone_can_destabilize(self):
        report = check_alpha_stability(_plain(0.5, 0.9), alpha=1.0)
        assert report.radius == pytest.approx(0.25 + 0.81, abs=1e-12)
        assert report.verdict == "unstable"

    def test_witness_solves_shrink_equation(self, scalar_model):
        report = check_alpha_stability(scalar_model, alpha=0.9)
        assert report.verdict == "stable"
        U = report.lyapunov_witness
        ops = OperatorSet(scalar_model, 0.9)
        np.testing.assert_allclose(U - ops.lyapunov_step(U), np.eye(1), atol=1e-10)

    def test_counter_discount_gate(self):
        # second moments shrink, but alpha*|eig A| = 1.05 blocks the alpha>=1 verdict
        report = check_alpha_stability(_plain(0.7, 0.1), alpha=1.5)
        assert report.d_stable is True
        assert report.counter_discount_eig_ok is False
        assert report.verdict == "indeterminate"

    def test_conditions_agree_across_regression_models(self):
        for name, model in support.regression_models():
            for alpha in (0.9, 1.0):
                report = check_alpha_stability(model, alpha)
                settled = [c for c in report.conditions if c is not None]
                assert len(set(settled)) <= 1, f"{name}@{alpha}: {report.conditions}"

    def test_random_sweep_unanimous(self, rng):
        for _ in range(25):
            model = support.random_model(rng, n=3, m=2, radius=float(rng.uniform(0.3, 1.3)))
            report = check_alpha_stability(model, alpha=float(rng.uniform(0.5, 1.0)))
            settled = [c for c in report.conditions if c is not None]
            if report.verdict == "stable":
                assert all(settled)
            elif report.verdict == "unstable":
                assert not any(settled) or len(set(settled)) == 1


class TestDetectability:
    def test_injection_shrinks_unstable_plant(self):
        model = _plain(1.2, 0.1)
        check = check_detectability(model, alpha=1.0, H=[[-0.9]])
        # (1.2 - 0.9)^2 + 0.1^2 = 0.10
        assert check.radius == pytest.approx(0.10, abs=1e-12)
        assert check.ok

    def test_zero_injection_reduces_to_open_loop(self, scalar_model):
        check = check_detectability(scalar_model, alpha=0.9, H=[[0.0]])
        open_loop = check_alpha_stability(scalar_model, 0.9)
        assert check.radius == pytest.approx(open_loop.radius, abs=1e-12)

    def test_shape_guard(self, scalar_model):
        with pytest.raises(CsviuError, match="shape"):
            check_detectability(scalar_model, 1.0, np.zeros((2, 1)))

    def test_search_succeeds_with_full_observation(self):
        model = _plain([[1.3, 0.2], [0.0, 1.1]], np.zeros((2, 2)))
        H = detectability_search(model, alpha=1.0)
        assert H is not None
        assert check_detectability(model, 1.0, H).ok

    def test_search_fails_when_output_is_blind(self):
        model = _plain(1.5, 0.0, C=np.zeros((1, 1)))
        assert detectability_search(model, alpha=1.0, attempts=20) is None

    def test_search_is_deterministic(self):
        model = _plain([[1.3, 0.2], [0.0, 1.1]], 0.05 * np.eye(2))
        H1 = detectability_search(model, alpha=1.0, seed=3)
        H2 = detectability_search(model, alpha=1.0, seed=3)
        np.testing.assert_array_equal(H1, H2)


class TestClosedLoopStep:
    def test_zero_gain_reduces_to_open_loop_cost(self, scalar_model, rng):
        U = np.array([[2.0]])
        ops = OperatorSet(scalar_model, 0.9)
        got = closed_loop_cost_step(scalar_model, 0.9, U, np.zeros((1, 1)))
        want = ops.lyapunov_step(U) + scalar_model.C.T @ scalar_model.C
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_forms_agree_on_random_inputs(self, rng):
        model = support.random_model(rng, n=3, m=2)
        for _ in range(10):
            root = rng.standard_normal((3, 3))
            U = root @ root.T
            G = rng.standard_normal((2, 3))
            out = closed_loop_cost_step(model, 0.95, U, G)
            assert out.shape == (3, 3)
            np.testing.assert_allclose(out, out.T, atol=1e-10)

    def test_matches_operator_matrix_route(self, rng):
        model = support.random_model(rng, n=2, m=1)
        G = rng.standard_normal((1, 2))
        U = np.eye(2) * 1.5
        ops = OperatorSet(model, 0.9)
        M = ops.operator_matrix("closed_loop", G=G)
        via_matrix = (M @ U.reshape(-1, order="F")).reshape((2, 2), order="F")
        Ccl = model.C + model.D @ G
        np.testing.assert_allclose(
            closed_loop_cost_step(model, 0.9, U, G), via_matrix + Ccl.T @ Ccl, atol=1e-11
        )


class TestClosedLoopCheck:
    def test_stable_loop(self, scalar_model):
        check = closed_loop_check(scalar_model, 0.9, G=[[-0.3]])
        # gain -0.3 puts the mean loop at 0.2
        assert check.gain_radius == pytest.approx(0.2, abs=1e-12)
        assert check.gain_radius_ok is None
        assert check.ok

    def test_expanding_discount_needs_tight_mean_loop(self):
        base = dict(support.SCALAR_DATA, A=0.9)
        model = SystemModel.from_dict(base)
        loose = closed_loop_check(model, 1.5, G=[[-0.15]])  # Acl = 0.75 > 1/1.5
        assert loose.gain_radius_ok is False
        assert not loose.ok
        tight = closed_loop_check(model, 1.5, G=[[-0.4]])  # Acl = 0.5 < 2/3
        assert tight.gain_radius_ok is True
        assert tight.ok == (tight.radius < 1.0)

    def test_radius_matches_manual_operator(self, rng):
        model = support.random_model(rng, n=2, m=2)
        G = -0.2 * rng.standard_normal((2, 2))
        check = closed_loop_check(model, 0.9, G)
        M = OperatorSet(model, 0.9).operator_matrix("closed_loop", G=G)
        assert check.radius == pytest.approx(spectral_radius(M), abs=1e-12)
