import numpy as np
import pytest

from ramu.bellman import (
    contraction_probe,
    dr_bellman_oracle,
    ramu_bellman_exact,
    ramu_bellman_operator,
    ramu_policy_evaluation,
    sampled_targets,
    side_for,
)
from ramu.cmdp import ModelMixture, Policy, QTable, TabularCMDP, ValueKind, policy_evaluation, standard_bellman, state_values
from ramu.risk import DistortionSpec, SizeError, exact_risk, DiscreteRV

from conftest import SPECS, random_cmdp, random_mixture

R, C = ValueKind.REWARD, ValueKind.COST
WANG = DistortionSpec.wang(0.75)
EXP = DistortionSpec.expectation()


@pytest.fixture
def instance(rng):
    cmdp = random_cmdp(rng, 4, 2, gamma=0.9)
    mix = random_mixture(rng, 4, 2, 5)
    pi = Policy(rng.dirichlet(np.ones(2), size=4))
    return cmdp, mix, pi


class TestExactOperator:
    def test_single_model_equals_standard(self, rng, instance, spec):
        cmdp, _, pi = instance
        mix = ModelMixture.degenerate(cmdp)
        for kind in (R, C):
            q = QTable(rng.normal(size=(4, 2)), kind)
            for s in range(4):
                for a in range(2):
                    assert ramu_bellman_exact(q, cmdp, pi, mix, spec, s, a) == pytest.approx(standard_bellman(q, cmdp, pi, s, a), abs=1e-12)

    def test_expectation_uses_mean_row(self, rng, instance):
        cmdp, mix, pi = instance
        mean = mix.mean_model()
        for kind in (R, C):
            q = QTable(rng.normal(size=(4, 2)), kind)
            for s in range(4):
                for a in range(2):
                    assert ramu_bellman_exact(q, cmdp, pi, mix, EXP, s, a) == pytest.approx(standard_bellman(q, cmdp, pi, s, a, mean[s, a]), abs=1e-12)

    def test_cvar_half_picks_worse_model(self):
        p = np.array([[[0.5, 0.5]], [[0.0, 1.0]]])
        cmdp = TabularCMDP(p=p, r=[[0.0], [0.0]], c=[[0.2], [1.0]], d0=[1, 0], gamma=0.9)
        hi, lo = np.array([0.1, 0.9]), np.array([0.9, 0.1])
        mix = ModelMixture(((np.stack([hi, lo]),), (p[1],)), ((np.array([0.5, 0.5]),), (np.ones(1),)))
        q = QTable(np.array([[1.0], [5.0]]), C)
        pi = Policy.uniform(2, 1)
        targets = [standard_bellman(q, cmdp, pi, 0, 0, row) for row in (hi, lo)]
        assert ramu_bellman_exact(q, cmdp, pi, mix, DistortionSpec.cvar(0.5), 0, 0) == pytest.approx(max(targets), abs=1e-12)
        # reward side of the same measure picks the better model
        q_r = QTable(q.values, R)
        targets_r = [standard_bellman(q_r, cmdp, pi, 0, 0, row) for row in (hi, lo)]
        assert ramu_bellman_exact(q_r, cmdp, pi, mix, DistortionSpec.cvar(0.5), 0, 0) == pytest.approx(min(targets_r), abs=1e-12)

    def test_undefined_pair(self, instance):
        cmdp, mix, pi = instance
        with pytest.raises(KeyError):
            ramu_bellman_exact(QTable.zeros(4, 2, C), cmdp, pi, mix, WANG, 9, 0)


class TestPolicyEvaluation:
    def test_degenerate(self, instance, spec):
        cmdp, _, pi = instance
        mix = ModelMixture.degenerate(cmdp)
        for kind in (R, C):
            np.testing.assert_allclose(
                ramu_policy_evaluation(cmdp, pi, mix, spec, kind).values, policy_evaluation(cmdp, pi, kind).values, atol=1e-10
            )

    def test_expectation_is_mean_model(self, instance):
        cmdp, mix, pi = instance
        mean_cmdp = TabularCMDP(mix.mean_model(), cmdp.r, cmdp.c, cmdp.d0, cmdp.gamma)
        for kind in (R, C):
            np.testing.assert_allclose(
                ramu_policy_evaluation(cmdp, pi, mix, EXP, kind).values, policy_evaluation(mean_cmdp, pi, kind).values, atol=1e-10
            )

    def test_risk_ordering(self, rng):
        for _ in range(10):
            cmdp = random_cmdp(rng, 3, 2, gamma=0.9)
            mix = random_mixture(rng, 3, 2, 4)
            pi = Policy(rng.dirichlet(np.ones(2), size=3))
            prev_c = prev_r = None
            for eta in (0.0, 0.25, 0.75, 1.5):
                spec = DistortionSpec.wang(eta)
                qc = ramu_policy_evaluation(cmdp, pi, mix, spec, C).values
                qr = ramu_policy_evaluation(cmdp, pi, mix, spec, R).values
                if prev_c is not None:
                    assert np.all(qc >= prev_c - 1e-10)
                    assert np.all(qr <= prev_r + 1e-10)
                prev_c, prev_r = qc, qr
            q_exp = ramu_policy_evaluation(cmdp, pi, mix, EXP, C).values
            assert np.all(ramu_policy_evaluation(cmdp, pi, mix, WANG, C).values >= q_exp - 1e-10)


class TestOracle:
    def test_equivalence(self, rng, spec):
        for _ in range(5):
            cmdp = random_cmdp(rng, 3, 2)
            mix = random_mixture(rng, 3, 2, 6)
            pi = Policy(rng.dirichlet(np.ones(2), size=3))
            for kind in (R, C):
                q = QTable(rng.normal(size=(3, 2)) * 4, kind)
                for s in range(3):
                    for a in range(2):
                        assert dr_bellman_oracle(q, cmdp, pi, mix, spec, kind, s, a) == pytest.approx(
                            ramu_bellman_exact(q, cmdp, pi, mix, spec, s, a), abs=1e-9
                        )

    def test_expectation_singleton_core(self, instance, rng):
        cmdp, mix, pi = instance
        q = QTable(rng.normal(size=(4, 2)), C)
        mean = mix.mean_model()
        assert dr_bellman_oracle(q, cmdp, pi, mix, EXP, C, 1, 1) == pytest.approx(standard_bellman(q, cmdp, pi, 1, 1, mean[1, 1]), abs=1e-12)

    def test_single_model(self, instance, rng):
        cmdp, _, pi = instance
        q = QTable(rng.normal(size=(4, 2)), R)
        assert dr_bellman_oracle(q, cmdp, pi, ModelMixture.degenerate(cmdp), WANG, R, 2, 0) == pytest.approx(
            standard_bellman(q, cmdp, pi, 2, 0), abs=1e-12
        )

    def test_support_cap(self, rng):
        cmdp = random_cmdp(rng, 2, 1)
        rows = rng.dirichlet(np.ones(2), size=(2, 1, 13))
        mix = ModelMixture.from_arrays(rows, np.full((2, 1, 13), 1 / 13))
        with pytest.raises(SizeError):
            dr_bellman_oracle(QTable.zeros(2, 1, C), cmdp, Policy.uniform(2, 1), mix, WANG, C, 0, 0)


class TestSampledTargets:
    def test_single_sample(self, spec):
        imm, nv = np.array([1.0, -2.0]), np.array([[3.0], [4.0]])
        out = sampled_targets(imm, nv, spec, C, 0.9, 1)
        np.testing.assert_array_equal(out, imm + 0.9 * nv[:, 0])

    def test_expectation_mean(self, rng):
        nv = rng.normal(size=(3, 6))
        out = sampled_targets(np.zeros(3), nv, EXP, R, 1.0 - 1e-9, 6)
        np.testing.assert_allclose(out, nv.mean(axis=1) * (1.0 - 1e-9), atol=1e-12)

    def test_wang_hand_dot(self):
        out = sampled_targets([0.0], [[1.0, 2.0, 3.0, 4.0, 5.0]], WANG, C, 0.5, 5)
        # 2 * (targets 0.5..2.5 weighted) with the mpmath weight table
        assert 2 * out[0] == pytest.approx(3.94020094171254, abs=1e-12)

    def test_reward_sorts_ascending(self):
        out = sampled_targets([0.0], [[3.0, 1.0]], DistortionSpec.cvar(0.5), R, 0.5, 2)
        assert out[0] == 0.5

    def test_n_mismatch(self):
        with pytest.raises(ValueError):
            sampled_targets([0.0], [[1.0, 2.0]], WANG, C, 0.9, 3)

    def test_converges_to_exact(self, spec):
        """One-hot models: a sampled model is the same as a sampled next state.

        Sampling error is O(spread / (alpha sqrt(n))); values are kept within
        about 30% of each other so every spec sits well inside 1e-2.
        """
        rng = np.random.default_rng(3)
        nS = 5
        models = np.eye(nS)
        probs = np.array([0.1, 0.3, 0.2, 0.25, 0.15])
        p = np.zeros((nS, 1, nS))
        p[:, 0] = probs
        cmdp = TabularCMDP(p=p, r=np.full((nS, 1), 0.5), c=np.full((nS, 1), 0.3), d0=np.full(nS, 0.2), gamma=0.9)
        mix = ModelMixture(tuple((models,) for _ in range(nS)), tuple((probs,) for _ in range(nS)))
        pi = Policy.uniform(nS, 1)
        n = 10_000
        for kind in (R, C):
            q = QTable(np.array([[11.0], [14.0], [10.0], [13.0], [12.0]]), kind)
            v = state_values(q, pi)
            draws = rng.choice(nS, size=(1, n), p=probs)
            est = sampled_targets(cmdp.immediate(kind)[:1, 0], v[draws], spec, kind, cmdp.gamma, n)[0]
            exact = ramu_bellman_exact(q, cmdp, pi, mix, spec, 0, 0)
            assert abs(est - exact) / abs(exact) <= 1e-2


class TestContraction:
    def _op(self, cmdp, pi, mix, spec, kind):
        return lambda q: ramu_bellman_operator(QTable(q, kind), cmdp, pi, mix, spec).values

    def test_equal_inputs(self, instance, rng):
        cmdp, mix, pi = instance
        q = rng.normal(size=(4, 2))
        assert contraction_probe(self._op(cmdp, pi, mix, WANG, C), q, q.copy()) == 0.0

    def test_constant_shift(self, instance, rng, spec):
        cmdp, mix, pi = instance
        q = rng.normal(size=(4, 2))
        for kind in (R, C):
            ratio = contraction_probe(self._op(cmdp, pi, mix, spec, kind), q, q + 2.5)
            assert ratio == pytest.approx(cmdp.gamma, abs=1e-10)

    def test_random_pairs(self, instance, rng):
        cmdp, mix, pi = instance
        for spec in (EXP, DistortionSpec.cvar(0.25), WANG):
            op = self._op(cmdp, pi, mix, spec, C)
            for _ in range(25):
                q1, q2 = rng.normal(size=(2, 4, 2)) * 3
                assert contraction_probe(op, q1, q2) <= cmdp.gamma + 1e-10

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            contraction_probe(lambda q: q, np.zeros(2), np.zeros(3))


def test_side_mapping():
    assert side_for(R).value == "reward" and side_for(C).value == "cost"
