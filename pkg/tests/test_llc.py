import numpy as np
import pytest

from loopcausal.features import Feature, feature_space
from loopcausal.llc import (
    CovarianceConditionError,
    LlcConfig,
    LlcSystem,
    assemble_system,
    column_index,
    covariance_condition,
    estimate_noise_covariance,
    estimate_total_effects,
    extend_system,
    faithfulness_constraints,
    llc_discover,
    pair_condition,
    solve_penalized,
    unstack_coefficients,
)
from loopcausal.scm import (
    Dataset,
    Experiment,
    LinearScm,
    ScmSamplerConfig,
    exact_dataset,
    experiment_setup,
    graph_of,
    sample_data,
    sample_random_scm,
)


def two_node_scm():
    return LinearScm([[0, 0.3], [0.5, 0]], np.eye(2))


def two_node_setup():
    return [Experiment(2, ()), Experiment(2, [0]), Experiment(2, [1])]


def exact_datasets(scm, setup):
    return [exact_dataset(scm, e) for e in setup]


class TestColumnLayout:
    def test_round_trip(self):
        n = 4
        vec = np.arange(n * (n - 1), dtype=float)
        b = unstack_coefficients(n, vec)
        assert np.all(np.diag(b) == 0)
        for u in range(n):
            for i in range(n):
                if u != i:
                    assert b[u, i] == vec[column_index(n, u, i)]

    def test_diagonal_not_addressable(self):
        with pytest.raises(ValueError):
            column_index(3, 1, 1)


class TestTotalEffects:
    def test_intervene_first_node(self):
        ds = exact_dataset(two_node_scm(), Experiment(2, [0]))
        te = estimate_total_effects(ds)
        assert te.effects == {(0, 1): pytest.approx(0.5)}

    def test_intervene_second_node(self):
        ds = exact_dataset(two_node_scm(), Experiment(2, [1]))
        te = estimate_total_effects(ds)
        assert te.effects == {(1, 0): pytest.approx(0.3)}

    def test_null_experiment_empty(self):
        ds = exact_dataset(two_node_scm(), Experiment(2, ()))
        assert estimate_total_effects(ds).effects == {}

    def test_normalized_by_intervened_variance(self):
        # an intervention with variance 4 instead of 1 must not change
        # the estimate: rebuild the equilibrium covariance by hand
        scm = two_node_scm()
        e = Experiment(2, [0])
        a = np.eye(2) - e.u_diag() @ scm.b
        noise = e.u_diag() @ scm.sigma_e @ e.u_diag() + 4.0 * e.j_diag()
        cov = np.linalg.inv(a) @ noise @ np.linalg.inv(a).T
        te = estimate_total_effects(Dataset(experiment=e, exact=cov))
        assert te.effects[(0, 1)] == pytest.approx(0.5)


class TestAssembleSystem:
    def test_two_node_system(self):
        setup = two_node_setup()
        effects = [estimate_total_effects(d) for d in exact_datasets(two_node_scm(), setup)]
        sys_ = assemble_system(effects, setup)
        assert sys_.t_matrix.shape == (2, 2)
        assert np.allclose(sys_.t_matrix, [[0, 1], [1, 0]])
        assert np.allclose(sys_.t_vector, [0.5, 0.3])

    def test_singleton_free_set_gives_identity_row(self):
        scm = two_node_scm()
        setup = [Experiment(2, [0])]
        effects = [estimate_total_effects(exact_dataset(scm, setup[0]))]
        sys_ = assemble_system(effects, setup)
        row = sys_.t_matrix[0]
        assert row[column_index(2, 1, 0)] == 1.0
        assert np.count_nonzero(row) == 1

    def test_row_count_setup_15(self):
        rng = np.random.default_rng(0)
        scm = sample_random_scm(ScmSamplerConfig(), rng)
        setup = experiment_setup(15)
        effects = [estimate_total_effects(d) for d in exact_datasets(scm, setup)]
        sys_ = assemble_system(effects, setup)
        assert sys_.t_matrix.shape == (20, 20)


class TestConditions:
    def test_observational_setup_misses_everything(self):
        ok, missing = pair_condition(experiment_setup(0))
        assert not ok
        assert len(missing) == 20

    def test_full_single_interventions_cover(self):
        ok, missing = pair_condition(experiment_setup(15))
        assert ok and not missing

    def test_partial_setup_missing_pairs(self):
        ok, missing = pair_condition(experiment_setup(11))
        assert not ok
        assert (1, 0) in missing

    def test_rank_deficiency_matches_pair_condition(self):
        rng = np.random.default_rng(8)
        scm = sample_random_scm(ScmSamplerConfig(), rng)
        for sid in (11, 15, 23, 25):
            setup = experiment_setup(sid)
            effects = [estimate_total_effects(d) for d in exact_datasets(scm, setup)]
            sys_ = assemble_system(effects, setup)
            full_rank = np.linalg.matrix_rank(sys_.t_matrix, tol=1e-8) == 20
            assert full_rank == pair_condition(setup)[0]

    def test_covariance_condition(self):
        for sid in (0, 11, 25, 45):
            assert covariance_condition(experiment_setup(sid))
        assert not covariance_condition([Experiment(5, [0, 1, 2, 3, 4])])
        assert covariance_condition([Experiment(5, ())])


class TestSolvePenalized:
    def system(self, t_mat, t_vec, n=2):
        return LlcSystem(
            n=n,
            t_matrix=np.asarray(t_mat, dtype=float),
            t_vector=np.asarray(t_vec, dtype=float),
            row_provenance=tuple(("row", k) for k in range(len(t_vec))),
        )

    def test_identity_unpenalized(self):
        sys_ = self.system(np.eye(2), [0.7, -0.2])
        b = solve_penalized(sys_, "l1", 0.0)
        assert b[0, 1] == pytest.approx(0.7)
        assert b[1, 0] == pytest.approx(-0.2)

    def test_large_l1_shrinks_to_zero(self):
        sys_ = self.system(np.eye(2), [0.7, -0.2])
        assert np.all(solve_penalized(sys_, "l1", 1e6) == 0)

    def test_exact_recovery_two_nodes(self):
        setup = two_node_setup()
        effects = [estimate_total_effects(d) for d in exact_datasets(two_node_scm(), setup)]
        sys_ = assemble_system(effects, setup)
        b = solve_penalized(sys_, "l1", 0.0)
        assert abs(b[1, 0] - 0.5) < 1e-10
        assert abs(b[0, 1] - 0.3) < 1e-10

    def test_l2_matches_normal_equations(self):
        rng = np.random.default_rng(1)
        t_mat = rng.normal(size=(5, 2))
        t_vec = rng.normal(size=5)
        lam = 0.3
        sys_ = self.system(t_mat, t_vec)
        got = solve_penalized(sys_, "l2", lam)
        expected = np.linalg.solve(t_mat.T @ t_mat + lam * np.eye(2), t_mat.T @ t_vec)
        assert got[0, 1] == pytest.approx(expected[0])
        assert got[1, 0] == pytest.approx(expected[1])

    def test_l1_matches_slow_ista(self):
        rng = np.random.default_rng(2)
        t_mat = rng.normal(size=(8, 2))
        t_vec = rng.normal(size=8)
        lam = 0.5
        # plain ISTA reference, run far past convergence
        step = 1.0 / (2 * np.linalg.norm(t_mat, 2) ** 2)
        b = np.zeros(2)
        for _ in range(50_000):
            g = 2 * t_mat.T @ (t_mat @ b - t_vec)
            z = b - step * g
            b = np.sign(z) * np.maximum(np.abs(z) - step * lam, 0)
        got = solve_penalized(self.system(t_mat, t_vec), "l1", lam)
        assert got[0, 1] == pytest.approx(b[0], abs=1e-6)
        assert got[1, 0] == pytest.approx(b[1], abs=1e-6)

    def test_empty_system_gives_zero(self):
        sys_ = LlcSystem(
            n=3, t_matrix=np.zeros((0, 6)), t_vector=np.zeros(0), row_provenance=()
        )
        assert np.all(solve_penalized(sys_, "l1", 0.05) == 0)


class TestNoiseCovariance:
    def test_true_b_recovers_sigma(self):
        rng = np.random.default_rng(4)
        scm = sample_random_scm(ScmSamplerConfig(), rng)
        setup = experiment_setup(25)
        dss = exact_datasets(scm, setup)
        sigma = estimate_noise_covariance(scm.b, dss, setup)
        assert np.max(np.abs(sigma - scm.sigma_e)) < 1e-10

    def test_zero_b_null_experiment(self):
        scm = two_node_scm()
        setup = [Experiment(2, ())]
        dss = exact_datasets(scm, setup)
        sigma = estimate_noise_covariance(np.zeros((2, 2)), dss, setup)
        assert np.allclose(sigma, dss[0].exact)

    def test_average_of_identical_experiments(self):
        scm = two_node_scm()
        setup = [Experiment(2, ()), Experiment(2, ())]
        dss = exact_datasets(scm, setup)
        one = estimate_noise_covariance(scm.b, dss[:1], setup[:1])
        both = estimate_noise_covariance(scm.b, dss, setup)
        assert np.allclose(one, both)

    def test_uncovered_pair_raises(self):
        scm = LinearScm(np.zeros((2, 2)), np.eye(2))
        setup = [Experiment(2, [0, 1])]
        dss = exact_datasets(scm, setup)
        with pytest.raises(CovarianceConditionError):
            estimate_noise_covariance(np.zeros((2, 2)), dss, setup)


class TestFaithfulnessRules:
    def test_rule_one_chain(self):
        b = np.zeros((3, 3))
        b[1, 0] = 0.5
        b[2, 1] = 0.5
        scm = LinearScm(b, np.eye(3))
        setup = [Experiment(3, ())]
        faith = faithfulness_constraints(exact_datasets(scm, setup), setup, 0.05)
        assert (0, 2) in faith.zero_coefficients
        assert (2, 0) in faith.zero_coefficients
        assert (0, 2) in faith.sigma_zeros
        # but not the true edges
        assert (1, 0) not in faith.zero_coefficients

    def test_rule_three_isolated_node(self):
        b = np.zeros((3, 3))
        b[1, 0] = 0.8
        scm = LinearScm(b, np.eye(3))
        setup = [Experiment(3, [0])]
        faith = faithfulness_constraints(exact_datasets(scm, setup), setup, 0.05)
        # t(0~>1) != 0, t(0~>2) = 0 forces the effect of 1 on 2 to zero
        assert (2, 1) in faith.zero_coefficients
        assert faith.zero_coefficients[(2, 1)][0] in ("faith3", "faith1")

    def test_rule_two_intervened_independent(self):
        b = np.zeros((3, 3))
        b[2, 1] = 0.7
        scm = LinearScm(b, np.eye(3))
        setup = [Experiment(3, [0])]
        faith = faithfulness_constraints(exact_datasets(scm, setup), setup, 0.05)
        # 0 is intervened and unrelated to both 1 and 2
        assert (1, 0) in faith.zero_coefficients
        assert (2, 0) in faith.zero_coefficients

    def test_dense_dependence_emits_nothing(self):
        b = np.zeros((2, 2))
        b[1, 0] = 0.9
        sigma = np.array([[1.0, 0.5], [0.5, 1.0]])
        scm = LinearScm(b, sigma)
        setup = [Experiment(2, ())]
        faith = faithfulness_constraints(exact_datasets(scm, setup), setup, 0.05)
        assert not faith.zero_coefficients
        assert not faith.sigma_zeros

    def test_rules_sound_on_oracle_data(self):
        rng = np.random.default_rng(9)
        cfg = ScmSamplerConfig()
        for _ in range(10):
            scm = sample_random_scm(cfg, rng)
            setup = experiment_setup(13)
            faith = faithfulness_constraints(exact_datasets(scm, setup), setup, 0.05)
            for (u, i) in faith.zero_coefficients:
                assert scm.b[u, i] == 0.0
            for (i, j) in faith.sigma_zeros:
                assert scm.sigma_e[i, j] == 0.0

    def test_extend_system_appends_unit_rows(self):
        setup = two_node_setup()
        effects = [estimate_total_effects(d) for d in exact_datasets(two_node_scm(), setup)]
        sys_ = assemble_system(effects, setup)
        from loopcausal.llc import FaithfulnessConstraints

        faith = FaithfulnessConstraints(
            zero_coefficients={(0, 1): ("faith1", 0, 0, 1)}, sigma_zeros={}
        )
        bigger = extend_system(sys_, faith)
        assert bigger.t_matrix.shape == (3, 2)
        assert bigger.t_vector[-1] == 0.0
        assert bigger.row_provenance[-1][0] == "faith1"


class TestLlcDiscover:
    def test_requires_null_experiment(self):
        scm = two_node_scm()
        setup = [Experiment(2, [0])]
        with pytest.raises(ValueError):
            llc_discover(exact_datasets(scm, setup), setup, LlcConfig())

    def test_infinite_mode_exact_support(self):
        scm = two_node_scm()
        setup = two_node_setup()
        table = llc_discover(exact_datasets(scm, setup), setup, LlcConfig(lam=0.0))
        assert table.score(Feature.directed(0, 1)) == 1e6
        assert table.score(Feature.directed(1, 0)) == 1e6
        assert table.score(Feature.bidirected(0, 1)) == 0.0

    def test_bootstrap_scores_separate_true_edges(self):
        rng = np.random.default_rng(12)
        scm = two_node_scm()
        setup = two_node_setup()
        dss = [sample_data(scm, e, 10_000, rng) for e in setup]
        table = llc_discover(dss, setup, LlcConfig(), rng=np.random.default_rng(0))
        assert table.score(Feature.directed(0, 1)) > 5
        assert table.score(Feature.directed(1, 0)) > 5
        assert table.score(Feature.bidirected(0, 1)) < 5

    def test_all_zero_estimates_score_zero(self):
        scm = LinearScm(np.zeros((2, 2)), np.eye(2))
        setup = [Experiment(2, ())]
        rng = np.random.default_rng(3)
        dss = [sample_data(scm, e, 500, rng) for e in setup]
        table = llc_discover(dss, setup, LlcConfig(bootstrap_reps=20), rng=np.random.default_rng(1))
        # no intervention rows at all: every coefficient is exactly zero
        assert table.score(Feature.directed(0, 1)) == 0.0
        assert table.score(Feature.directed(1, 0)) == 0.0

    def test_bootstrap_deterministic_given_seed(self):
        rng = np.random.default_rng(14)
        scm = two_node_scm()
        setup = two_node_setup()
        dss = [sample_data(scm, e, 1000, rng) for e in setup]
        t1 = llc_discover(dss, setup, LlcConfig(bootstrap_reps=10), rng=np.random.default_rng(5))
        t2 = llc_discover(dss, setup, LlcConfig(bootstrap_reps=10), rng=np.random.default_rng(5))
        assert t1.scores == t2.scores

    def test_exact_recovery_property(self):
        rng = np.random.default_rng(15)
        cfg = ScmSamplerConfig()
        for _ in range(5):
            scm = sample_random_scm(cfg, rng)
            for sid in (15, 35):
                setup = experiment_setup(sid)
                dss = exact_datasets(scm, setup)
                effects = [estimate_total_effects(d) for d in dss]
                sys_ = assemble_system(effects, setup)
                b_hat = solve_penalized(sys_, "l1", 0.0)
                assert np.max(np.abs(b_hat - scm.b)) < 1e-8
                sigma_hat = estimate_noise_covariance(b_hat, dss, setup)
                assert np.max(np.abs(sigma_hat - scm.sigma_e)) < 1e-8

    def test_mixed_modes_rejected(self):
        scm = two_node_scm()
        setup = two_node_setup()
        dss = exact_datasets(scm, setup)
        dss[1] = sample_data(scm, setup[1], 100, np.random.default_rng(0))
        with pytest.raises(ValueError):
            llc_discover(dss, setup, LlcConfig())
