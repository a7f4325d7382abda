"""Unit tests for the comparison agents."""

import math
from decimal import Decimal, getcontext

import numpy as np
import pytest

from baselines import (
    LinearAgent,
    LinearArmModel,
    OracleAgent,
    PerArmTreeModel,
    RandomAgent,
    TreeBootstrapAgent,
    UCB1NormalAgent,
    bootstrap_backend_config,
    lints_sample,
    linucb_score,
    sample_theta,
    ucb1_normal_score,
)
from ensembles import EnsembleConfig
from tree_core import FeatureMatrix, FeatureSchema

SCHEMA = FeatureSchema(numeric_count=2)


def test_linucb_fresh_model_example() -> None:
    """A = I, b = 0, α=1 and a unit vector score 1.0."""
    m = LinearArmModel(3)
    x = np.array([0.6, 0.8, 0.0])
    assert linucb_score(m, x, 1.0) == pytest.approx(1.0)
    assert linucb_score(m, x, 0.0) == 0.0


def test_linucb_converges_to_observed_reward() -> None:
    """Repeated reward 1 for the same x drives the score toward 1."""
    m = LinearArmModel(2)
    x = np.array([1.0, 0.0])
    for _ in range(2000):
        m.update(x, 1.0)
    assert linucb_score(m, x, 1.0) == pytest.approx(1.0, abs=0.05)
    assert linucb_score(m, x, 0.0) == pytest.approx(float(m.theta @ x))


def test_sherman_morrison_matches_direct_inverse() -> None:
    rng = np.random.default_rng(0)
    m = LinearArmModel(4, ridge=0.5)
    for _ in range(50):
        m.update(rng.normal(size=4), float(rng.normal()))
    np.testing.assert_allclose(m.A_inv, np.linalg.inv(m.A), atol=1e-9)
    np.testing.assert_allclose(m.theta, np.linalg.solve(m.A, m.b), atol=1e-9)
    with pytest.raises(ValueError, match="schema mismatch"):
        m.update(np.zeros(3), 1.0)


def test_lints_zero_scale_is_ridge_prediction() -> None:
    rng = np.random.default_rng(1)
    m = LinearArmModel(2)
    m.update(np.array([1.0, 2.0]), 3.0)
    x = np.array([0.5, -1.0])
    assert lints_sample(m, x, 0.0, rng) == pytest.approx(float(m.theta @ x))


def test_sample_theta_identity_covariance() -> None:
    """With A = I the sampled coordinates are independent standard normals around θ."""
    rng = np.random.default_rng(2)
    m = LinearArmModel(3)
    draws = np.array([sample_theta(m, 1.0, rng) for _ in range(20_000)])
    np.testing.assert_allclose(draws.mean(axis=0), 0.0, atol=0.05)
    np.testing.assert_allclose(np.cov(draws.T), np.eye(3), atol=0.05)


def test_sample_theta_after_updates_is_finite() -> None:
    """Cholesky of the symmetrized inverse succeeds after many rank-one updates."""
    rng = np.random.default_rng(3)
    m = LinearArmModel(5)
    for _ in range(500):
        m.update(rng.normal(size=5) * 10.0, float(rng.normal()))
    assert np.all(np.isfinite(sample_theta(m, 1.0, rng)))


def test_ucb1_normal_score_examples() -> None:
    """σ̂²=0 returns the mean; μ̂=0, σ̂²=1, m=16, t=e+1 gives 1."""
    assert ucb1_normal_score(0.4, 0.0, 5, 10) == 0.4
    assert ucb1_normal_score(0.0, 1.0, 16, math.e + 1) == pytest.approx(1.0)
    with pytest.raises(ValueError, match="arm must be played twice"):
        ucb1_normal_score(0.0, 1.0, 1, 10)


def test_ucb1_normal_agent_forces_two_plays() -> None:
    """Every arm is played twice before any score is computed."""
    agent = UCB1NormalAgent(n_arms=3, seed=0)
    x = SCHEMA.vector([0.0, 0.0])
    contexts = [x] * 3
    for _ in range(6):
        arm = agent.select(contexts)
        agent.observe(arm, x, 1.0 if arm == 2 else 0.0)
    assert agent.plays.tolist() == [2, 2, 2]
    for _ in range(20):
        arm = agent.select(contexts)
        agent.observe(arm, x, 1.0 if arm == 2 else 0.0)
    assert agent.plays[2] == agent.plays.max()


def test_linear_agent_prefers_rewarded_direction() -> None:
    agent = LinearAgent("ucb", dim=2, n_arms=2, seed=0, alpha=0.1)
    contexts = [SCHEMA.vector([1.0, 0.0]), SCHEMA.vector([0.0, 1.0])]
    for _ in range(30):
        arm = agent.select(contexts)
        agent.observe(arm, contexts[arm], 1.0 if arm == 1 else 0.0)
    assert agent.select(contexts) == 1
    assert agent.model_refreshes == 30


def test_lints_agent_scores_all_arms() -> None:
    agent = LinearAgent("ts", dim=2, n_arms=2, seed=0)
    scores = agent.score_arms([SCHEMA.vector([1.0, 0.0]), SCHEMA.vector([0.0, 1.0])])
    assert [s.arm_id for s in scores] == [0, 1]
    assert agent.name == "lints"


def _observe(agent: TreeBootstrapAgent, arm: int, reward: float, times: int) -> None:
    rng = np.random.default_rng(arm)
    for _ in range(times):
        agent.observe(arm, SCHEMA.vector(rng.uniform(size=2)), reward)


def test_treebootstrap_forces_unplayed_arm() -> None:
    agent = TreeBootstrapAgent(SCHEMA, EnsembleConfig(), "tree", n_arms=2, seed=0)
    _observe(agent, 0, 1.0, 5)
    contexts = [SCHEMA.vector([0.1, 0.1]), SCHEMA.vector([0.2, 0.2])]
    assert agent.select(contexts) == 1


@pytest.mark.parametrize("backend", ["tree", "forest", "boosting"])
def test_treebootstrap_picks_rewarded_arm(backend: str) -> None:
    """Histories of all ones against all zeros select the first arm."""
    ensemble = EnsembleConfig(n_trees=3, max_depth=2)
    agent = TreeBootstrapAgent(SCHEMA, ensemble, backend, n_arms=2, seed=0)
    _observe(agent, 0, 1.0, 6)
    _observe(agent, 1, 0.0, 6)
    contexts = [SCHEMA.vector([0.5, 0.5]), SCHEMA.vector([0.5, 0.5])]
    assert agent.select(contexts) == 0


def test_treebootstrap_single_sample_prediction() -> None:
    """A one-sample history resamples to itself and predicts its reward."""
    model = PerArmTreeModel(0)
    model.history.append(SCHEMA.vector([0.3, 0.4]), 0.7)
    model.refit(SCHEMA, bootstrap_backend_config("tree", EnsembleConfig()), np.random.default_rng(0))
    X = FeatureMatrix.from_vectors([SCHEMA.vector([9.0, 9.0])], SCHEMA)
    assert model.predict(X)[0] == pytest.approx(0.7)
    with pytest.raises(ValueError, match="no history"):
        PerArmTreeModel(1).refit(SCHEMA, EnsembleConfig(), np.random.default_rng(0))


def test_treebootstrap_stride_warns(caplog: pytest.LogCaptureFixture) -> None:
    with caplog.at_level("WARNING"):
        TreeBootstrapAgent(SCHEMA, EnsembleConfig(), "tree", n_arms=2, seed=0, refit_stride=5)
    assert "refits every 5 rounds" in caplog.text


def test_bootstrap_backend_config() -> None:
    tree = bootstrap_backend_config("tree", EnsembleConfig(n_trees=50))
    assert (tree.n_trees, tree.trainer, tree.bootstrap) == (1, "bagging", False)
    assert bootstrap_backend_config("forest", EnsembleConfig()).trainer == "bagging"
    assert bootstrap_backend_config("boosting", EnsembleConfig(trainer="bagging")).trainer == "boosting"


def test_shared_treebootstrap_scores_by_context() -> None:
    """A shared model ranks arms by their contexts alone."""
    agent = TreeBootstrapAgent(SCHEMA, EnsembleConfig(max_depth=2), "tree", n_arms=2, seed=0, shared=True)
    assert agent.score_arms([SCHEMA.vector([0.0, 0.0])] * 2) is None
    for i in range(20):
        value = i / 20.0
        agent.observe(0, SCHEMA.vector([value, 0.0]), 1.0 if value > 0.5 else 0.0)
    contexts = [SCHEMA.vector([0.1, 0.0]), SCHEMA.vector([0.9, 0.0])]
    assert agent.select(contexts) == 1


def test_random_and_oracle_agents() -> None:
    random_agent = RandomAgent(n_arms=3, seed=0)
    contexts = [SCHEMA.vector([float(a), 0.0]) for a in range(3)]
    picks = {random_agent.select(contexts) for _ in range(100)}
    assert picks == {0, 1, 2}
    oracle = OracleAgent(lambda xs: np.array([x.numeric[0] for x in xs]), n_arms=3, seed=0)
    assert oracle.select(contexts) == 2


def test_ucb1_normal_matches_high_precision_evaluation() -> None:
    """Random inputs agree with a 50-digit decimal evaluation to 1e-12 relative error."""
    rng = np.random.default_rng(12)
    getcontext().prec = 50
    for _ in range(100):
        mean = float(rng.uniform(-1.0, 1.0))
        var = float(rng.uniform(0.0, 4.0))
        m = int(rng.integers(2, 1000))
        t = int(rng.integers(2, 100_000))
        exact = Decimal(mean) + (Decimal(16) * Decimal(var) * Decimal(t - 1).ln() / Decimal(m)).sqrt()
        got = ucb1_normal_score(mean, var, m, t)
        assert abs(Decimal(got) - exact) <= Decimal("1e-12") * max(abs(exact), Decimal(1))


# Each arm is best on two independent contexts, so every arm is learned in every direction.
ARM_WEIGHTS = np.array([[0.9, 0.3], [0.3, 0.9]])
BASE_CONTEXTS = np.array([[1.0, 0.0], [1.0, 0.5], [0.0, 1.0], [0.5, 1.0]])
DISJOINT = FeatureSchema(numeric_count=4)


def _disjoint_contexts(x: np.ndarray) -> list:
    rows = []
    for arm in range(2):
        dense = np.zeros(4)
        dense[2 * arm : 2 * arm + 2] = x
        rows.append(DISJOINT.vector(dense))
    return rows


def _linear_regrets(agent: LinearAgent, rounds: int) -> np.ndarray:
    """Noise-free linear rewards r = θ_kᵀx over a small set of base contexts."""
    rng = np.random.default_rng(5)
    regrets = []
    for _ in range(rounds):
        x = BASE_CONTEXTS[rng.integers(len(BASE_CONTEXTS))]
        expected = ARM_WEIGHTS @ x
        contexts = _disjoint_contexts(x)
        arm = agent.select(contexts)
        agent.observe(arm, contexts[arm], float(expected[arm]))
        regrets.append(float(expected.max() - expected[arm]))
    return np.asarray(regrets)


@pytest.mark.parametrize("method", ["ucb", "ts"])
def test_linear_agent_regret_is_sublinear(method: str) -> None:
    """Per-step regret around t = 2000 is below a tenth of its level around t = 200."""
    agent = LinearAgent(method, dim=4, n_arms=2, seed=1)
    regrets = _linear_regrets(agent, 2050)
    early = regrets[150:250].mean()
    late = regrets[1950:2050].mean()
    assert late <= 0.1 * early
    assert late < 0.01


def test_design_matrix_stays_positive_definite() -> None:
    """Cholesky of A and of the symmetrized A⁻¹ succeeds after every update."""
    rng = np.random.default_rng(6)
    m = LinearArmModel(4, ridge=0.1)
    for step in range(300):
        scale = 10.0 ** rng.uniform(-3.0, 2.0)
        m.update(rng.normal(size=4) * scale, float(rng.normal()))
        np.linalg.cholesky(m.A)
        np.linalg.cholesky(0.5 * (m.A_inv + m.A_inv.T))
        assert np.all(np.isfinite(sample_theta(m, 1.0, rng))), step


@pytest.mark.parametrize("backend", ["tree", "forest", "boosting"])
def test_treebootstrap_is_deterministic_for_a_seed(backend: str) -> None:
    """Two agents with the same seed and feedback make identical choices."""
    ensemble = EnsembleConfig(n_trees=3, max_depth=3)
    runs = []
    for _ in range(2):
        agent = TreeBootstrapAgent(SCHEMA, ensemble, backend, n_arms=2, seed=12)
        rng = np.random.default_rng(13)
        choices = []
        for _ in range(40):
            contexts = [SCHEMA.vector(rng.uniform(size=2)) for _ in range(2)]
            arm = agent.select(contexts)
            reward = float(contexts[arm].numeric[0] > 0.5) if arm == 1 else 0.4
            agent.observe(arm, contexts[arm], reward)
            choices.append(arm)
        runs.append(choices)
    assert runs[0] == runs[1]
