"""Iterative estimation loop, prior grouping and the relinearization wrapper."""

import numpy as np
import pytest

from nuvmpc import iake
from nuvmpc.iake import IakeConfig, PriorBank, iake_solve, relinearized_solve
from nuvmpc.lssm import BoundaryCond, FixedGaussian, Lssm, PriorAttachment, attach_all
from nuvmpc.mbf import GaussianPriors, SmootherSingularity, smooth
from nuvmpc.priors import ContractError, NuvKind, NuvSpec, PriorParams
from nuvmpc.scalar_lab import NumericFailure, ScalarLikelihood, run_scalar


def scalar_embedding(spec, mu, s2, init):
    """K=1 model whose single input sees the likelihood N(mu, s2) through the output."""
    m = Lssm.constant([[1.0]], [[1.0]], [[1.0]], 1)
    bc = BoundaryCond([0.0], [[0.0]])
    atts = [PriorAttachment("input", 0, 0, spec, init),
            PriorAttachment("output", 0, 0, FixedGaussian(mu, s2))]
    return m, bc, atts


def walk(K=20):
    return Lssm.constant([[1.0]], [[1.0]], [[1.0]], K)


class TestConfig:
    @pytest.mark.parametrize("kw", [
        {"max_iters": 0}, {"param_tol": 0.0}, {"relin_damping": 0.0},
        {"relin_damping": 1.5}, {"relin_max_outer": 0},
    ])
    def test_invalid(self, kw):
        with pytest.raises(ContractError):
            IakeConfig(**kw)


class TestPriorBank:
    def test_groups_by_kind(self):
        K = 6
        atts = attach_all("input", K, 0, NuvSpec(NuvKind.L1, gamma=1.0))
        atts += attach_all("output", K, 0, NuvSpec(NuvKind.BOX, gamma=1.0, a=-1.0, b=1.0))
        bank = PriorBank(walk(K), atts)
        assert len(bank.groups) == 2
        assert sorted(g.k.size for g in bank.groups) == [K, K]

    def test_mixed_parameters_in_one_group(self):
        K = 3
        atts = attach_all("input", K, 0, FixedGaussian(0.0, 1.0))
        atts += [PriorAttachment("output", k, 0, NuvSpec(NuvKind.BOX, gamma=1.0 + k, a=-k - 1.0, b=1.0))
                 for k in range(K)]
        bank = PriorBank(walk(K), atts)
        (g,) = bank.groups
        np.testing.assert_array_equal(g.gamma, [1, 2, 3])
        np.testing.assert_array_equal(g.a, [-1, -2, -3])

    def test_fixed_gaussians_are_written_once(self):
        K = 4
        atts = attach_all("input", K, 0, FixedGaussian(0.5, 2.0))
        bank = PriorBank(walk(K), atts)
        assert bank.groups == []
        np.testing.assert_array_equal(bank.priors.u_mean, 0.5)
        assert np.isinf(bank.priors.y_var).all()

    def test_initial_params_used(self):
        atts = [PriorAttachment("input", 0, 0, NuvSpec(NuvKind.L1), PriorParams(0.3, 4.0))]
        bank = PriorBank(walk(1), atts)
        assert (bank.priors.u_mean[0, 0], bank.priors.u_var[0, 0]) == (0.3, 4.0)

    def test_missing_input_prior(self):
        with pytest.raises(ContractError):
            PriorBank(walk(2), [PriorAttachment("input", 0, 0, FixedGaussian(0, 1))])


class TestIakeSolve:
    def test_fixed_gaussians_settle_after_one_update(self):
        K = 15
        atts = attach_all("input", K, 0, FixedGaussian(0.0, 1.0))
        atts += [PriorAttachment("output", K - 1, 0, FixedGaussian(3.0, 0.1))]
        m, bc = walk(K), BoundaryCond([0.0], [[1e-12]])
        res = iake_solve(m, bc, atts)
        assert res.converged and res.iterations == 1
        ref = smooth(m, bc, PriorBank(m, atts).priors)
        np.testing.assert_allclose(res.u_hat, ref.u_mean, rtol=1e-14)

    @pytest.mark.parametrize("spec,mu,s2,init", [
        (NuvSpec(NuvKind.BOX, gamma=1.0, a=-1.0, b=1.0), 2.5, 0.6, PriorParams(0.0, 1.0)),
        (NuvSpec(NuvKind.HALF_SPACE_LOWER, gamma=2.0, a=0.0), -1.0, 0.2, PriorParams(0.0, 1.0)),
        (NuvSpec(NuvKind.L1, gamma=1.0), 0.8, 0.5, PriorParams(0.0, 1.0)),
        (NuvSpec(NuvKind.BINARIZING_EM), 0.3, 0.3, PriorParams(0.5, 1.0)),
        (NuvSpec(NuvKind.BINARIZING_AM), 0.3, 0.05, PriorParams(0.5, 1.0)),
    ])
    def test_scalar_embedding_matches_scalar_lab(self, spec, mu, s2, init):
        tr = run_scalar(spec, ScalarLikelihood(mu, s2), init, max_iters=12, tol=0.0)
        m, bc, atts = scalar_embedding(spec, mu, s2, init)
        for n in range(1, 13):
            res = iake_solve(m, bc, atts, IakeConfig(max_iters=n, param_tol=1e-300))
            assert res.u_hat[0, 0] == pytest.approx(tr.estimates[n - 1], abs=1e-12, rel=1e-12)

    def test_box_on_outputs_of_a_walk(self):
        # pull the walk toward 2 while an output box keeps it inside [-1, 1]
        K = 30
        atts = attach_all("input", K, 0, FixedGaussian(0.0, 1.0))
        atts += attach_all("output", K, 0, NuvSpec(NuvKind.BOX, gamma=10.0, a=-1.0, b=1.0))
        m = walk(K)
        bc = BoundaryCond([0.0], [[1e-12]], [2.0], [[1.0]])
        res = iake_solve(m, bc, atts, IakeConfig(max_iters=2000))
        assert res.y_hat.max() <= 1.0 + 1e-3
        assert res.y_hat[-1, 0] > 0.9

    def test_history_and_callback(self):
        K = 10
        atts = attach_all("input", K, 0, NuvSpec(NuvKind.L1, gamma=1.0))
        atts += [PriorAttachment("output", K - 1, 0, FixedGaussian(1.0, 0.01))]
        seen = []
        res = iake_solve(walk(K), BoundaryCond([0.0], [[1e-12]]), atts,
                         IakeConfig(max_iters=7, param_tol=1e-300),
                         callback=lambda it, d: seen.append(it))
        assert not res.converged and res.iterations == 7
        assert seen == list(range(1, 8)) and len(res.history) == 7

    def test_singularity_reports_iteration(self):
        m = walk(2)
        atts = attach_all("input", 2, 0, FixedGaussian(0.0, 1.0))
        atts += [PriorAttachment("output", 1, 0, FixedGaussian(0.0, 1.0))]
        bank = PriorBank(m, atts)
        bank.priors.y_var[1, 0] = -10.0
        with pytest.raises(SmootherSingularity) as err:
            iake_solve(m, BoundaryCond([0.0], [[1.0]]), atts, bank=bank)
        assert err.value.iteration == 1

    def test_non_finite_update(self, monkeypatch):
        m, bc, atts = scalar_embedding(NuvSpec(NuvKind.L1), 1.0, 1.0, None)
        monkeypatch.setattr(iake, "rule_arrays", lambda *a, **k: (np.nan, 1.0))
        with pytest.raises(NumericFailure) as err:
            iake_solve(m, bc, atts)
        assert err.value.iteration == 1


class TestRelinearized:
    def test_linear_problem_matches_plain_solve(self):
        K = 12
        m = walk(K)
        bc = BoundaryCond([0.0], [[1e-12]], [1.0], [[1e-6]])
        atts = attach_all("input", K, 0, NuvSpec(NuvKind.BOX, gamma=5.0, a=0.0, b=0.15))
        ref = iake_solve(m, bc, atts, IakeConfig(max_iters=3000))
        calls = []

        def linearize(x, u):
            calls.append(1)
            return m, bc

        res = relinearized_solve(linearize, atts, np.zeros((K + 1, 1)), np.zeros((K, 1)),
                                 IakeConfig(max_iters=3000, relinearize=True))
        assert res.converged
        np.testing.assert_allclose(res.u_hat, ref.u_hat, atol=1e-6)
        assert len(calls) == res.outer_iterations >= 2

    def test_iteration_budget(self):
        K = 5
        m = walk(K)
        # binarizing EM converges only algebraically, so every budgeted step runs
        atts = [PriorAttachment("input", k, 0, NuvSpec(NuvKind.BINARIZING_EM), PriorParams(0.5, 1.0))
                for k in range(K)]
        atts += [PriorAttachment("output", K - 1, 0, FixedGaussian(1.3, 0.01))]
        cfg = IakeConfig(max_iters=3, relinearize=True, relin_max_outer=4, param_tol=1e-300)
        res = relinearized_solve(lambda x, u: (m, BoundaryCond([0.0], [[1e-12]])), atts,
                                 np.zeros((K + 1, 1)), np.zeros((K, 1)), cfg)
        assert res.iterations == 12 and res.outer_iterations == 4 and not res.converged

    def test_linearization_error_carries_outer_step(self):
        class Boom(ArithmeticError):
            pass

        def linearize(x, u):
            raise Boom("bad point")

        with pytest.raises(Boom) as err:
            relinearized_solve(linearize, [], np.zeros((2, 1)), np.zeros((1, 1)))
        assert err.value.outer_iteration == 1
