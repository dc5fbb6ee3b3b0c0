"""Performance prediction: guess a hidden agent's success on a new task from a quiz.

Each example is a small quiz of (task, outcome) pairs produced by one hidden
agent plus a test task whose outcome must be predicted. The embedding-based
predictor soft-matches the test task against the quiz in embedding space;
baselines use increasing amounts of oracle access to the hidden agent and the
population.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from taskemb.envs import rollout_batch, sample_tasks
from taskemb.envs.core import get_env
from taskemb.population import Population, success_rates
from taskemb.stats import fold_mean_stderr


@dataclass
class QuizExample:
    quiz_states: np.ndarray     # (k, state_dim)
    quiz_outcomes: np.ndarray   # (k,) success bits
    test_state: np.ndarray
    test_outcome: int
    agent_index: int            # hidden from predictors; kept for oracle baselines


def gen_quiz_dataset(env: str, population: Population, quiz_size: int,
                     n_examples: int, rng: np.random.Generator) -> list[QuizExample]:
    """Sample examples: a hidden agent, quiz_size + 1 i.i.d. tasks, one rollout each."""
    if not 1 <= quiz_size <= 20:
        raise ValueError("quiz_size must be in [1, 20]")
    agent_idx = rng.integers(0, len(population), size=n_examples)
    states = sample_tasks(env, n_examples * (quiz_size + 1), rng)
    states = states.reshape(n_examples, quiz_size + 1, -1)
    outcomes = np.empty((n_examples, quiz_size + 1), dtype=np.uint8)
    for a in np.unique(agent_idx):
        rows = np.where(agent_idx == a)[0]
        batch = states[rows].reshape(-1, states.shape[2])
        out, _ = rollout_batch(env, batch, population.policy(int(a)), rng)
        outcomes[rows] = out.reshape(rows.size, quiz_size + 1)
    return [
        QuizExample(states[i, :-1], outcomes[i, :-1], states[i, -1],
                    int(outcomes[i, -1]), int(agent_idx[i]))
        for i in range(n_examples)
    ]


def softnn_score(model, example: QuizExample, beta: float) -> float:
    """Distance-weighted quiz-outcome average in embedding space.

    Weights exp(-beta * d^2) are normalized after shifting by the smallest
    distance, so huge beta cannot underflow every weight.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    quiz_e = model.embed(example.quiz_states)
    test_e = model.embed(example.test_state)
    d2 = np.sum((quiz_e - test_e) ** 2, axis=1)
    w = np.exp(-beta * (d2 - d2.min()))
    return float(np.sum(example.quiz_outcomes * w) / np.sum(w))


def predict_softnn(model, example: QuizExample, beta: float = 1000.0) -> int:
    return int(softnn_score(model, example, beta) > 0.5)


def tune_beta(model, examples: list[QuizExample],
              grid=(1.0, 10.0, 100.0, 1000.0, 10000.0)) -> float:
    """Pick the grid beta with the best training-split accuracy.

    The grid reaches down to 1 because the learned embedding's distance scale
    can make every larger beta act as pure nearest-neighbor matching.
    """
    best_beta, best_acc = grid[0], -1.0
    for beta in grid:
        acc = np.mean([predict_softnn(model, ex, beta) == ex.test_outcome
                       for ex in examples])
        if acc > best_acc:
            best_beta, best_acc = beta, acc
    return best_beta


BASELINES = ("random", "ignore_task", "ignore_agent", "opt")


def baseline_predictions(kind: str, examples: list[QuizExample],
                         population: Population, rng: np.random.Generator,
                         ignore_task_rollouts: int = 500,
                         ignore_agent_reps: int = 10,
                         opt_rollouts: int = 10) -> np.ndarray:
    """Predictions of one oracle baseline for a whole dataset.

    random flips a coin; ignore_task thresholds the hidden agent's success on
    random tasks; ignore_agent thresholds the population's success on the test
    task; opt thresholds the hidden agent's own success on the test task.
    """
    env = population.env
    n = len(examples)
    if kind == "random":
        return (rng.uniform(size=n) < 0.5).astype(np.uint8)
    if kind == "ignore_agent":
        tests = np.stack([ex.test_state for ex in examples])
        rates = success_rates(population, tests, ignore_agent_reps, rng)
        return (rates > 0.5).astype(np.uint8)
    if kind not in ("ignore_task", "opt"):
        raise ValueError(f"unknown baseline {kind!r}")
    preds = np.empty(n, dtype=np.uint8)
    agent_idx = np.array([ex.agent_index for ex in examples])
    for a in np.unique(agent_idx):
        rows = np.where(agent_idx == a)[0]
        policy = population.policy(int(a))
        if kind == "ignore_task":
            for i in rows:
                tasks = sample_tasks(env, ignore_task_rollouts, rng)
                out, _ = rollout_batch(env, tasks, policy, rng)
                preds[i] = out.mean() > 0.5
        else:  # opt
            batch = np.repeat(np.stack([examples[i].test_state for i in rows]),
                              opt_rollouts, axis=0)
            out, _ = rollout_batch(env, batch, policy, rng)
            rates = out.reshape(rows.size, opt_rollouts).mean(axis=1)
            preds[rows] = rates > 0.5
    return preds


def baseline_predict(kind: str, example: QuizExample, population: Population,
                     rng: np.random.Generator) -> int:
    """Single-example form of baseline_predictions."""
    return int(baseline_predictions(kind, [example], population, rng)[0])


def eval_prediction(predictions: np.ndarray, outcomes: np.ndarray,
                    rng: np.random.Generator, n_folds: int = 10):
    """Fold the examples, score each fold, return (mean, stderr, fold accuracies).

    The dataset is truncated to a multiple of n_folds; fold assignment is a
    seeded shuffle.
    """
    predictions = np.asarray(predictions)
    outcomes = np.asarray(outcomes)
    n = (len(predictions) // n_folds) * n_folds
    if n == 0:
        raise ValueError("dataset smaller than the fold count")
    order = rng.permutation(len(predictions))[:n]
    correct = (predictions[order] == outcomes[order]).astype(np.float64)
    fold_accs = correct.reshape(n_folds, -1).mean(axis=1)
    mean, stderr = fold_mean_stderr(fold_accs)
    return mean, stderr, fold_accs


def save_quiz_dataset(path, env: str, examples: list[QuizExample]) -> None:
    """Long-format CSV: one row per task with its role, outcome, and agent."""
    fields = get_env(env).state_fields
    with open(path, "w", newline="", encoding="utf-8") as fp:
        writer = csv.writer(fp)
        writer.writerow(["example", "role", "outcome", "agent_index", *fields])
        for i, ex in enumerate(examples):
            for q in range(len(ex.quiz_states)):
                writer.writerow([i, "quiz", int(ex.quiz_outcomes[q]), ex.agent_index,
                                 *[repr(float(v)) for v in ex.quiz_states[q]]])
            writer.writerow([i, "test", ex.test_outcome, ex.agent_index,
                             *[repr(float(v)) for v in ex.test_state]])


def load_quiz_dataset(path) -> list[QuizExample]:
    examples: dict[int, dict] = {}
    with open(path, "r", newline="", encoding="utf-8") as fp:
        reader = csv.reader(fp)
        next(reader)
        for row in reader:
            i, role, outcome, agent = int(row[0]), row[1], int(row[2]), int(row[3])
            state = np.array([float(v) for v in row[4:]])
            rec = examples.setdefault(i, {"quiz": [], "out": [], "agent": agent})
            if role == "quiz":
                rec["quiz"].append(state)
                rec["out"].append(outcome)
            else:
                rec["test"], rec["test_out"] = state, outcome
    return [
        QuizExample(np.stack(rec["quiz"]), np.array(rec["out"], dtype=np.uint8),
                    rec["test"], rec["test_out"], rec["agent"])
        for i, rec in sorted(examples.items())
    ]
