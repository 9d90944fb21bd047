"""Model containers, augmentations, linearization and JSON round trips."""

import numpy as np
import pytest

from nuvmpc.lssm import (
    BoundaryCond,
    FixedGaussian,
    LinearizationError,
    Lssm,
    NonlinearStage,
    PriorAttachment,
    attach_all,
    augment_derivative_input,
    augment_m_level_input,
    augment_output_selector,
    check_attachments,
    fd_jacobian,
    linearize_stage,
    load_model,
    dump_model,
    model_from_dict,
    model_to_dict,
)
from nuvmpc.priors import ContractError, NuvKind, NuvSpec, PriorParams


def double_integrator(K=5):
    return Lssm.constant([[1.0, 1.0], [0.0, 1.0]], [[0.5], [1.0]], [[1.0, 0.0]], K)


class TestLssm:
    def test_dimensions(self):
        m = double_integrator(7)
        assert (m.K, m.N, m.L, m.H) == (7, 2, 1, 1)
        assert m.is_constant()

    def test_offsets_default_to_zero(self):
        m = double_integrator()
        assert np.all(m.c == 0) and np.all(m.d == 0)

    def test_frozen_arrays(self):
        m = double_integrator()
        with pytest.raises(ValueError):
            m.A[0, 0, 0] = 2.0

    def test_shape_errors(self):
        with pytest.raises(ContractError):
            Lssm(np.zeros((3, 2, 2)), np.zeros((3, 3, 1)), np.zeros((3, 1, 2)))
        with pytest.raises(ContractError):
            Lssm(np.zeros((3, 2, 2)), np.zeros((3, 2, 1)), np.zeros((3, 1, 2)), c=np.zeros((2, 2)))
        with pytest.raises(ContractError):
            Lssm(np.zeros((2, 2)), np.zeros((2, 1)), np.zeros((1, 2)))

    def test_simulate_matches_closed_form(self):
        # unit acceleration from rest: position k^2 / 2 after k steps
        m = double_integrator(6)
        x, y = m.simulate(np.ones(6), [0.0, 0.0])
        np.testing.assert_allclose(y[:, 0], (np.arange(1, 7) ** 2) / 2)
        np.testing.assert_allclose(x[:, 1], np.arange(7))

    def test_simulate_with_offsets(self):
        m = Lssm.constant([[1.0]], [[1.0]], [[2.0]], 3, c=[0.5], d=[1.0])
        _, y = m.simulate(np.zeros(3), [0.0])
        np.testing.assert_allclose(y[:, 0], 2 * 0.5 * np.arange(1, 4) + 1)

    def test_replace(self):
        m = double_integrator()
        m2 = m.replace(d=np.ones((m.K, 1)))
        assert np.all(m2.d == 1) and np.all(m.d == 0)


class TestBoundaryAndAttachments:
    def test_pinned(self):
        bc = BoundaryCond.pinned([1.0, 2.0], [3.0, 4.0], 1e-9)
        assert bc.has_terminal
        np.testing.assert_allclose(bc.xK_cov, 1e-9 * np.eye(2))

    def test_terminal_pair(self):
        with pytest.raises(ContractError):
            BoundaryCond([0.0], [[1.0]], xK_mean=[0.0])

    def test_asymmetric_covariance(self):
        with pytest.raises(ContractError):
            BoundaryCond([0.0, 0.0], [[1.0, 0.5], [0.0, 1.0]])

    def test_fixed_gaussian_variance(self):
        with pytest.raises(ContractError):
            FixedGaussian(0.0, 0.0)

    def test_bad_target(self):
        with pytest.raises(ContractError):
            PriorAttachment("state", 0, 0, FixedGaussian(0.0, 1.0))

    def test_every_input_needs_a_prior(self):
        m = double_integrator(3)
        atts = attach_all("input", 3, 0, FixedGaussian(0.0, 1.0), steps=[0, 1])
        with pytest.raises(ContractError, match=r"u\[2\]"):
            check_attachments(m, atts)

    def test_duplicates_and_range(self):
        m = double_integrator(2)
        atts = attach_all("input", 2, 0, FixedGaussian(0.0, 1.0))
        with pytest.raises(ContractError):
            check_attachments(m, atts + [atts[0]])
        with pytest.raises(ContractError):
            check_attachments(m, atts + [PriorAttachment("output", 0, 3, FixedGaussian(0, 1))])

    def test_attachment_dict_round_trip(self):
        a = PriorAttachment("output", 3, 0, NuvSpec(NuvKind.BOX, gamma=2, a=-1, b=1),
                            PriorParams(0.2, 3.0))
        b = PriorAttachment("input", 1, 0, FixedGaussian(0.5, 2.0))
        assert PriorAttachment.from_dict(a.to_dict()) == a
        assert PriorAttachment.from_dict(b.to_dict()) == b


class TestAugmentations:
    def test_derivative_input_integrates(self):
        base = double_integrator(6)
        aug = augment_derivative_input(base)
        du = np.array([1.0, 0.0, -2.0, 0.0, 0.5, 0.0])
        u0 = 0.3
        xa, ya = aug.simulate(du, np.r_[u0, 0.0, 0.0])
        u = u0 + np.cumsum(du)
        # the stored input drives the plant one step later
        _, yb = base.simulate(np.r_[u0, u[:-1]], [0.0, 0.0])
        np.testing.assert_allclose(xa[1:, 0], u)
        np.testing.assert_allclose(ya, yb)

    def test_derivative_needs_scalar_input(self):
        m = Lssm.constant(np.eye(2), np.eye(2), np.eye(2), 3)
        with pytest.raises(ContractError):
            augment_derivative_input(m)

    def test_output_selector_only_at_selected_steps(self):
        base = double_integrator(5)
        aug = augment_output_selector(base, [1, 3])
        u = np.column_stack([np.zeros(5), np.full(5, 2.0)])
        _, y = aug.simulate(u, np.zeros(3))
        np.testing.assert_allclose(y[:, 0], [0, 2, 0, 2, 0])

    def test_selector_out_of_horizon(self):
        with pytest.raises(ContractError):
            augment_output_selector(double_integrator(5), [5])

    def test_m_level_input(self):
        base = double_integrator(4)
        aug = augment_m_level_input(base, [1.0, 1.0], -1.0)
        v = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float)
        _, ya = aug.simulate(v, [0.0, 0.0])
        _, yb = base.simulate(v.sum(axis=1) - 1.0, [0.0, 0.0])
        np.testing.assert_allclose(ya, yb)


class TestLinearization:
    def test_fd_jacobian(self):
        f = lambda x: np.array([np.sin(x[0]) * x[1], x[0] ** 2])
        x = np.array([0.3, -1.2])
        J = np.array([[np.cos(0.3) * -1.2, np.sin(0.3)], [0.6, 0.0]])
        np.testing.assert_allclose(fd_jacobian(f, x), J, atol=1e-8)

    def test_affine_model_is_exact_for_linear_dynamics(self):
        A = np.array([[0.0, 1.0], [-2.0, -0.5]])
        B = np.array([[0.0], [1.0]])
        stage = NonlinearStage(f=lambda x, u: A @ x + B @ u, f_o=lambda x: np.array([x[0] + 1]))
        step = linearize_stage(stage, [0.4, -0.2], [0.7], step=0.1)
        np.testing.assert_allclose(step.A, np.eye(2) + 0.1 * A, atol=1e-9)
        np.testing.assert_allclose(step.B, 0.1 * B, atol=1e-9)
        np.testing.assert_allclose(step.c, 0.0, atol=1e-9)
        np.testing.assert_allclose(step.d, [1.0], atol=1e-9)

    def test_euler_step_reproduced_at_the_linearization_point(self):
        f = lambda x, u: np.array([x[1], -np.sin(x[0]) + u[0]])
        stage = NonlinearStage(f=f)
        x, u = np.array([0.5, 0.1]), np.array([0.2])
        s = linearize_stage(stage, x, u, step=0.05)
        np.testing.assert_allclose(s.A @ x + s.B @ u + s.c, x + 0.05 * f(x, u), atol=1e-12)

    def test_analytic_jacobians_used(self):
        calls = []

        def jx(x, u):
            calls.append(1)
            return np.zeros((1, 1))

        stage = NonlinearStage(f=lambda x, u: 0 * x, jac_x=jx, jac_u=lambda x, u: np.ones((1, 1)))
        s = linearize_stage(stage, [1.0], [0.0])
        assert calls and s.B[0, 0] == 1.0

    @pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
    def test_non_finite(self):
        stage = NonlinearStage(f_o=lambda x: np.array([np.log(x[0])]))
        with pytest.raises(LinearizationError):
            linearize_stage(stage, [-1.0])

    def test_step_positive(self):
        with pytest.raises(LinearizationError):
            linearize_stage(NonlinearStage(f=lambda x, u: x), [0.0], [0.0], step=0.0)


class TestJson:
    def test_round_trip_constant(self, tmp_path):
        m = double_integrator(4)
        bc = BoundaryCond.pinned([0.0, 0.0], [1.0, 0.0])
        atts = attach_all("input", 4, 0, NuvSpec(NuvKind.L1, gamma=2.0))
        p = tmp_path / "m.json"
        dump_model(p, m, bc, atts)
        m2, bc2, atts2 = load_model(p)
        for name in "ABCcd":
            np.testing.assert_array_equal(getattr(m2, name), getattr(m, name))
        np.testing.assert_array_equal(bc2.xK_mean, bc.xK_mean)
        assert atts2 == atts

    def test_round_trip_time_varying(self):
        rng = np.random.default_rng(0)
        m = Lssm(rng.normal(size=(3, 2, 2)), rng.normal(size=(3, 2, 1)), rng.normal(size=(3, 1, 2)))
        m2, bc, atts = model_from_dict(model_to_dict(m))
        assert bc is None and atts == []
        np.testing.assert_array_equal(m2.A, m.A)

    def test_dims_mismatch(self):
        doc = model_to_dict(double_integrator(3))
        doc["dims"]["N"] = 5
        with pytest.raises(ContractError):
            model_from_dict(doc)
