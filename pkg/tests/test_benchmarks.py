import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taskemb import embedding as emb
from taskemb.benchmarks import clusters, prediction, selection
from taskemb.envs import sample_tasks
from taskemb.seeding import make_rng


def brute_force_silhouette(points, labels):
    n = len(points)
    scores = []
    for i in range(n):
        own = [j for j in range(n) if labels[j] == labels[i] and j != i]
        if not own:
            scores.append(0.0)
            continue
        a = np.mean([np.linalg.norm(points[i] - points[j]) for j in own])
        b = np.inf
        for lab in set(labels) - {labels[i]}:
            other = [j for j in range(n) if labels[j] == lab]
            b = min(b, np.mean([np.linalg.norm(points[i] - points[j]) for j in other]))
        denom = max(a, b)
        scores.append(0.0 if denom == 0 else (b - a) / denom)
    return float(np.mean(scores))


class TestSilhouette:
    def test_well_separated_clouds(self):
        rng = make_rng(1)
        a = rng.normal(size=(40, 3)) * 0.1
        b = rng.normal(size=(40, 3)) * 0.1 + 10.0
        points = np.concatenate([a, b])
        labels = np.array([0] * 40 + [1] * 40)
        assert clusters.silhouette(points, labels) > 0.8

    def test_random_labels_near_zero(self):
        rng = make_rng(2)
        points = rng.normal(size=(300, 4))
        labels = rng.integers(0, 3, size=300)
        assert abs(clusters.silhouette(points, labels)) < 0.05

    def test_singleton_clusters_contribute_zero(self):
        points = np.array([[0.0, 0.0], [1.0, 0.0], [5.0, 5.0]])
        labels = np.array([0, 1, 2])
        assert clusters.silhouette(points, labels) == 0.0

    def test_single_cluster_rejected(self):
        with pytest.raises(ValueError):
            clusters.silhouette(np.zeros((5, 2)), np.zeros(5))

    def test_matches_brute_force(self):
        rng = make_rng(3)
        for n, k in [(30, 2), (80, 4), (150, 3)]:
            points = rng.normal(size=(n, 3))
            labels = rng.integers(0, k, size=n)
            fast = clusters.silhouette(points, labels)
            slow = brute_force_silhouette(points, labels)
            assert fast == pytest.approx(slow, abs=1e-12)


class TestClusterLabels:
    def test_multikeynav_required_minus_possessed(self):
        # door type 1 needs A+B; agent holds A -> still needs B (bit value 4)
        state = np.array([0.2, 1, 0, 0, 0, 0, 0], dtype=float)
        assert clusters.cluster_labels("multikeynav", state)[0] == 4
        # holds both -> needs nothing
        state2 = np.array([0.2, 1, 1, 0, 0, 0, 0], dtype=float)
        assert clusters.cluster_labels("multikeynav", state2)[0] == 0

    def test_multikeynav_total_over_samples(self):
        states = sample_tasks("multikeynav", 500, make_rng(4))
        labels = clusters.cluster_labels("multikeynav", states)
        assert labels.shape == (500,)
        assert np.all((labels >= 0) & (labels < 16))

    def test_cartpole_two_classes(self):
        states = sample_tasks("cartpolevar", 200, make_rng(5))
        labels = clusters.cluster_labels("cartpolevar", states)
        assert set(np.unique(labels)) == {-1, 1}

    def test_pointmass_three_classes(self):
        states = sample_tasks("pointmass", 500, make_rng(6))
        labels = clusters.cluster_labels("pointmass", states)
        assert set(np.unique(labels)) <= {0, 1, 2}


class TestQuizDataset:
    def test_sizes_and_counts(self, tiny_population):
        ds = prediction.gen_quiz_dataset("multikeynav", tiny_population, 3, 40,
                                         make_rng(10))
        assert len(ds) == 40
        for ex in ds:
            assert ex.quiz_states.shape == (3, 7)
            assert ex.quiz_outcomes.shape == (3,)
            assert ex.test_outcome in (0, 1)
            assert 0 <= ex.agent_index < len(tiny_population)

    def test_quiz_size_one(self, tiny_population):
        ds = prediction.gen_quiz_dataset("multikeynav", tiny_population, 1, 10,
                                         make_rng(11))
        assert all(ex.quiz_states.shape[0] == 1 for ex in ds)

    def test_same_seed_identical(self, tiny_population):
        d1 = prediction.gen_quiz_dataset("multikeynav", tiny_population, 2, 15,
                                         make_rng(12))
        d2 = prediction.gen_quiz_dataset("multikeynav", tiny_population, 2, 15,
                                         make_rng(12))
        for a, b in zip(d1, d2):
            assert np.array_equal(a.quiz_states, b.quiz_states)
            assert np.array_equal(a.quiz_outcomes, b.quiz_outcomes)
            assert a.test_outcome == b.test_outcome
            assert a.agent_index == b.agent_index

    def test_csv_roundtrip(self, tiny_population, tmp_path):
        ds = prediction.gen_quiz_dataset("multikeynav", tiny_population, 4, 12,
                                         make_rng(13))
        path = tmp_path / "quiz.csv"
        prediction.save_quiz_dataset(path, "multikeynav", ds)
        back = prediction.load_quiz_dataset(path)
        assert len(back) == 12
        for a, b in zip(ds, back):
            assert np.array_equal(a.quiz_states, b.quiz_states)
            assert np.array_equal(a.quiz_outcomes, b.quiz_outcomes)
            assert np.array_equal(a.test_state, b.test_state)
            assert (a.test_outcome, a.agent_index) == (b.test_outcome, b.agent_index)


def _example(quiz_states, quiz_outcomes, test_state, test_outcome=0):
    return prediction.QuizExample(np.asarray(quiz_states, dtype=float),
                                  np.asarray(quiz_outcomes, dtype=np.uint8),
                                  np.asarray(test_state, dtype=float),
                                  test_outcome, 0)


class TestSoftNn:
    def model(self):
        return emb.fresh_embedding_net("multikeynav", 4, make_rng(20))

    def states(self, n):
        return sample_tasks("multikeynav", n, make_rng(21))

    def test_single_quiz_task_copies_outcome(self):
        s = self.states(2)
        ex = _example(s[:1], [1], s[1])
        assert prediction.predict_softnn(self.model(), ex) == 1
        ex0 = _example(s[:1], [0], s[1])
        assert prediction.predict_softnn(self.model(), ex0) == 0

    def test_exact_match_dominates_at_large_beta(self):
        s = self.states(4)
        quiz = np.concatenate([s[:3], s[3:4]])
        ex = _example(quiz, [1, 1, 1, 0], s[3])
        assert prediction.predict_softnn(self.model(), ex, beta=1e6) == 0

    def test_constant_outcomes_returned_regardless_of_distance(self):
        s = self.states(6)
        for o in (0, 1):
            ex = _example(s[:5], [o] * 5, s[5])
            assert prediction.predict_softnn(self.model(), ex, beta=17.0) == o

    def test_quiz_order_invariance(self):
        s = self.states(6)
        outcomes = [1, 0, 1, 0, 1]
        ex = _example(s[:5], outcomes, s[5])
        base = prediction.softnn_score(self.model(), ex, 100.0)
        perm = [3, 1, 4, 0, 2]
        ex_p = _example(s[perm], [outcomes[i] for i in perm], s[5])
        assert prediction.softnn_score(self.model(), ex_p, 100.0) == pytest.approx(base, rel=1e-12)

    def test_huge_beta_numerically_safe(self):
        s = self.states(4)
        ex = _example(s[:3], [1, 0, 1], s[3])
        score = prediction.softnn_score(self.model(), ex, 1e8)
        assert np.isfinite(score)

    def test_beta_must_be_positive(self):
        s = self.states(2)
        with pytest.raises(ValueError):
            prediction.softnn_score(self.model(), _example(s[:1], [1], s[1]), 0.0)


class TestBaselines:
    def test_random_near_half(self, tiny_population):
        examples = [None] * 5000  # random baseline never touches the example
        preds = prediction.baseline_predictions("random", examples, tiny_population,
                                                make_rng(30))
        assert abs(preds.mean() - 0.5) < 0.02

    def test_ignore_agent_constant_for_shared_test_task(self, tiny_population):
        s = sample_tasks("multikeynav", 3, make_rng(31))
        ex1 = prediction.QuizExample(s[:1], np.array([1], dtype=np.uint8), s[2], 1, 0)
        ex2 = prediction.QuizExample(s[1:2], np.array([0], dtype=np.uint8), s[2], 0, 5)
        p = prediction.baseline_predictions("ignore_agent", [ex1, ex2],
                                            tiny_population, make_rng(32))
        assert p[0] == p[1]

    def test_opt_tracks_near_deterministic_agent(self, tiny_population):
        # Sharpen the best unmasked agent so its behavior is almost
        # deterministic; OPT should then match outcomes up to failure-lottery
        # noise.
        from taskemb import population as pop
        best_idx = max(
            (k for k, s in enumerate(tiny_population.snapshots) if s.mask == "none"),
            key=lambda k: tiny_population.snapshots[k].validation_score,
        )
        policy = tiny_population.policy(best_idx)
        policy.net.layers[-1].weights *= 8.0
        policy.net.layers[-1].biases *= 8.0
        sharp = pop.Population("multikeynav", [
            pop.AgentSnapshot(policy.to_flat(), "bc", "none", "none", 0, 1.0)
        ])
        ds = prediction.gen_quiz_dataset("multikeynav", sharp, 1, 300, make_rng(33))
        preds = prediction.baseline_predictions("opt", ds, sharp, make_rng(34))
        outcomes = np.array([ex.test_outcome for ex in ds])
        assert (preds == outcomes).mean() >= 0.85

    def test_unknown_baseline_rejected(self, tiny_population):
        with pytest.raises(ValueError):
            prediction.baseline_predictions("psychic", [], tiny_population, make_rng(0))


class TestEvalPrediction:
    def test_constant_predictor_on_balanced_data(self):
        outcomes = np.array([0, 1] * 500)
        preds = np.ones(1000, dtype=np.uint8)
        mean, stderr, folds = prediction.eval_prediction(preds, outcomes, make_rng(40))
        assert mean == pytest.approx(0.5, abs=0.05)
        assert len(folds) == 10

    def test_perfect_predictor(self):
        outcomes = (np.arange(40) % 2).astype(np.uint8)
        mean, stderr, _ = prediction.eval_prediction(outcomes.copy(), outcomes,
                                                     make_rng(41))
        assert mean == 1.0
        assert stderr == 0.0

    def test_fold_assignment_deterministic(self):
        rng_out = make_rng(42)
        preds = (rng_out.uniform(size=200) < 0.5).astype(np.uint8)
        outcomes = (rng_out.uniform(size=200) < 0.5).astype(np.uint8)
        a = prediction.eval_prediction(preds, outcomes, make_rng(43))
        b = prediction.eval_prediction(preds, outcomes, make_rng(43))
        assert a[0] == b[0] and np.array_equal(a[2], b[2])

    def test_truncates_to_fold_multiple(self):
        preds = np.zeros(27, dtype=np.uint8)
        outcomes = np.zeros(27, dtype=np.uint8)
        mean, _, folds = prediction.eval_prediction(preds, outcomes, make_rng(44))
        assert len(folds) == 10
        assert mean == 1.0


@pytest.fixture(scope="module")
def selection_dataset(tiny_population):
    return selection.gen_selection_dataset(
        "multikeynav", tiny_population, 16, make_rng(50),
        mi_reps_per_agent=40, pos_reps_per_agent=10, easy_pool_size=120)


class TestSelectionDataset:
    def test_shapes_and_types(self, selection_dataset):
        assert len(selection_dataset) == 16
        for i, ex in enumerate(selection_dataset):
            assert ex.option_states.shape == (10, 7)
            assert ex.easy_refs.shape == (5, 7)
            assert ex.query_type == (1 if i % 2 == 0 else 2)
            assert 0 <= ex.ground_truth < 10

    def test_type2_ground_truth_strictly_harder(self, selection_dataset):
        for ex in selection_dataset:
            if ex.query_type == 2:
                assert ex.pos_options[ex.ground_truth] < ex.pos_ref

    def test_ground_truth_maximizes_estimates(self, selection_dataset):
        for ex in selection_dataset:
            if ex.query_type == 1:
                assert ex.ground_truth == int(np.argmax(ex.gt_sims))
            else:
                harder = ex.pos_options < ex.pos_ref
                masked = np.where(harder, ex.gt_sims, -np.inf)
                assert ex.ground_truth == int(np.argmax(masked))

    def test_easy_refs_are_actually_easy(self, selection_dataset, tiny_population):
        from taskemb.population import success_rates
        easy_pos = success_rates(tiny_population, selection_dataset[0].easy_refs,
                                 50, make_rng(51))
        fresh = sample_tasks("multikeynav", 100, make_rng(52))
        fresh_pos = success_rates(tiny_population, fresh, 50, make_rng(53))
        assert easy_pos.mean() >= np.quantile(fresh_pos, 0.8)

    def test_csv_roundtrip(self, selection_dataset, tmp_path):
        path = tmp_path / "sel.csv"
        selection.save_selection_dataset(path, "multikeynav", selection_dataset)
        back = selection.load_selection_dataset(path)
        assert len(back) == len(selection_dataset)
        for a, b in zip(selection_dataset, back):
            assert np.array_equal(a.ref_state, b.ref_state)
            assert np.array_equal(a.option_states, b.option_states)
            assert a.ground_truth == b.ground_truth
            assert a.query_type == b.query_type
            assert np.array_equal(a.gt_sims, b.gt_sims)


class TestSelect:
    def resources(self, tiny_population):
        return selection.SelectionResources(
            env="multikeynav",
            model=emb.fresh_embedding_net("multikeynav", 4, make_rng(60)),
            model_wonorm=emb.fresh_embedding_net("multikeynav", 4, make_rng(61)),
            population=tiny_population,
            population_half=tiny_population.subset(range(0, len(tiny_population), 2)),
            mi_reps_per_agent=20,
            pos_reps_per_agent=5,
        )

    def test_random_topk_rates(self, selection_dataset, tiny_population):
        res = self.resources(tiny_population)
        rng = make_rng(62)
        hits1, hits3, trials = 0, 0, 0
        for _ in range(200):
            for ex in selection_dataset:
                rank, _ = selection.select("random", ex, res, rng)
                hits1 += rank[0] == ex.ground_truth
                hits3 += ex.ground_truth in rank[:3]
                trials += 1
        assert hits1 / trials == pytest.approx(0.1, abs=0.02)
        assert hits3 / trials == pytest.approx(0.3, abs=0.03)

    def test_every_method_returns_permutation(self, selection_dataset, tiny_population):
        res = self.resources(tiny_population)
        rng = make_rng(63)
        for method in ("ours", "ours_wonorm", "random", "state_sim",
                       "trajectory_sim", "opt", "opt50"):
            for ex in selection_dataset[:4]:
                rank, boundary = selection.select(method, ex, res, rng)
                assert sorted(rank) == list(range(10))
                assert 0 <= boundary <= 10

    def test_estimate_oracle_reproduces_ground_truth(self, selection_dataset):
        for ex in selection_dataset:
            rank, _ = selection.select_with_estimates(ex)
            assert rank[0] == ex.ground_truth

    def test_type2_filter_soundness_ours(self, selection_dataset, tiny_population):
        res = self.resources(tiny_population)
        model = res.model
        for ex in selection_dataset:
            if ex.query_type != 2:
                continue
            rank, boundary = selection.select("ours", ex, res, make_rng(64))
            e_ref = model.embed(ex.ref_state)
            e_opt = model.embed(ex.option_states)
            for pos in range(boundary):
                assert np.linalg.norm(e_opt[rank[pos]]) > np.linalg.norm(e_ref)

    def test_rankings_invariant_to_monotone_transform(self, selection_dataset):
        for ex in selection_dataset:
            base, b0 = selection.select_with_estimates(ex)
            scaled = selection.SelectionExample(
                ex.ref_state, ex.option_states, ex.easy_refs, ex.query_type,
                ex.ground_truth, 2.0 * ex.gt_sims + 1.0, ex.pos_ref, ex.pos_options)
            moved, b1 = selection.select_with_estimates(scaled)
            assert np.array_equal(base, moved)
            assert b0 == b1

    def test_topk_accuracy_helper(self):
        ranks = [np.array([3, 1, 2, 0]), np.array([0, 1, 2, 3])]
        assert selection.topk_accuracy(ranks, [3, 2], 1) == 0.5
        assert selection.topk_accuracy(ranks, [3, 2], 3) == 1.0

    def test_missing_resource_rejected(self, selection_dataset):
        res = selection.SelectionResources(env="multikeynav")
        with pytest.raises(ValueError):
            selection.select("ours", selection_dataset[0], res, make_rng(65))
