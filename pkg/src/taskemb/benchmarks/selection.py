"""Task selection: pick the option most similar to (or similar-but-harder than) a reference.

Ground truth comes from full-population estimates: similarity is the paired
mutual-information statistic, difficulty the success-rate estimate. Methods
rank the ten options; Type-2 queries first filter options the method deems
harder than the reference and fall back to the unfiltered ranking when that
filter comes up empty.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass

import numpy as np

from taskemb.envs import rollout_batch, sample_tasks
from taskemb.envs.core import ExpertPolicy, get_env
from taskemb.population import Population, success_rates
from taskemb.seeding import make_rng
from taskemb.similarity import mi_pairwise
from taskemb.stats import levenshtein

METHODS = ("ours", "ours_wonorm", "random", "state_sim", "trajectory_sim",
           "opt", "opt50", "predmodel")


@dataclass
class SelectionExample:
    ref_state: np.ndarray
    option_states: np.ndarray   # (n_options, state_dim)
    easy_refs: np.ndarray       # (n_easy, state_dim), shared per dataset
    query_type: int             # 1: most similar; 2: most similar among harder
    ground_truth: int
    gt_sims: np.ndarray         # construction-time similarity estimates per option
    pos_ref: float
    pos_options: np.ndarray


def gen_selection_dataset(env: str, population: Population, n_examples: int,
                          rng: np.random.Generator, mi_reps_per_agent: int = 100,
                          pos_reps_per_agent: int = 10, n_options: int = 10,
                          easy_pool_size: int = 500, n_easy: int = 5
                          ) -> list[SelectionExample]:
    """Build one dataset of alternating Type-1 / Type-2 examples.

    Easy reference tasks are the n_easy highest success-rate tasks out of a
    sampled pool. A Type-2 example is resampled until at least one option is
    estimated harder than its reference.
    """
    pool_rng, ex_rng, mi_rng = rng.spawn(3)
    pool = sample_tasks(env, easy_pool_size, pool_rng)
    pool_pos = success_rates(population, pool, pos_reps_per_agent, pool_rng)
    easy_refs = pool[np.argsort(-pool_pos, kind="stable")[:n_easy]]

    query_types = np.where(np.arange(n_examples) % 2 == 0, 1, 2)
    refs = np.empty((n_examples, pool.shape[1]))
    options = np.empty((n_examples, n_options, pool.shape[1]))
    pos_ref = np.empty(n_examples)
    pos_opt = np.empty((n_examples, n_options))
    pending = np.arange(n_examples)
    for _ in range(60):
        if pending.size == 0:
            break
        draw = sample_tasks(env, pending.size * (1 + n_options), ex_rng)
        draw = draw.reshape(pending.size, 1 + n_options, -1)
        rates = success_rates(population,
                              draw.reshape(-1, draw.shape[2]),
                              pos_reps_per_agent, ex_rng)
        rates = rates.reshape(pending.size, 1 + n_options)
        ok = (query_types[pending] == 1) | np.any(rates[:, 1:] < rates[:, :1], axis=1)
        sel = pending[ok]
        refs[sel] = draw[ok, 0]
        options[sel] = draw[ok, 1:]
        pos_ref[sel] = rates[ok, 0]
        pos_opt[sel] = rates[ok, 1:]
        pending = pending[~ok]
    if pending.size:
        raise RuntimeError("could not sample Type-2 examples with a harder option")

    all_tasks = np.concatenate([refs[:, None, :], options], axis=1)
    table = population.outcome_table(all_tasks.reshape(-1, all_tasks.shape[2]),
                                     mi_reps_per_agent, mi_rng)
    examples = []
    for i in range(n_examples):
        base = i * (1 + n_options)
        sims = mi_pairwise(table, base, range(base + 1, base + 1 + n_options))
        if query_types[i] == 1:
            gt = int(np.argmax(sims))
        else:
            harder = pos_opt[i] < pos_ref[i]
            masked = np.where(harder, sims, -np.inf)
            gt = int(np.argmax(masked))
        examples.append(SelectionExample(refs[i], options[i], easy_refs,
                                         int(query_types[i]), gt, sims,
                                         float(pos_ref[i]), pos_opt[i].copy()))
    return examples


@dataclass
class SelectionResources:
    """Everything the method family needs; unused entries may stay None."""

    env: str
    model: object = None          # embedding net for "ours"
    model_wonorm: object = None
    predmodel: object = None
    population: Population | None = None
    population_half: Population | None = None
    mi_reps_per_agent: int = 100
    pos_reps_per_agent: int = 10
    trajectory_seed: int = 7


def _rank(sims: np.ndarray, harder: np.ndarray | None):
    """Full ranking: harder-filtered options first (when any), by similarity.

    Returns (ranking, boundary) where the first `boundary` entries satisfy the
    hardness predicate; boundary 0 means the filter was empty and the fallback
    ranking over all options applies.
    """
    order = np.argsort(-sims, kind="stable")
    if harder is None or not harder.any():
        return order, 0
    hard_part = order[harder[order]]
    soft_part = order[~harder[order]]
    return np.concatenate([hard_part, soft_part]), int(harder.sum())


def _embedding_rank(model, example: SelectionExample):
    e_ref = model.embed(example.ref_state)
    e_opt = model.embed(example.option_states)
    sims = e_opt @ e_ref
    if example.query_type == 1:
        return _rank(sims, None)
    harder = np.linalg.norm(e_opt, axis=1) > np.linalg.norm(e_ref)
    return _rank(sims, harder)


def _nearest_easy_similarity(sim_to_easy: np.ndarray) -> float:
    return float(sim_to_easy.max())


def _task_digest(state: np.ndarray) -> int:
    return int.from_bytes(hashlib.sha256(state.tobytes()).digest()[:8], "big")


def _expert_symbols(env: str, state: np.ndarray, seed: int) -> np.ndarray:
    ops = get_env(env)
    rng = make_rng(seed, _task_digest(state))
    _, _, recs = rollout_batch(env, state[None, :], ExpertPolicy(), rng, record=True)
    actions = recs[0].actions
    if ops.action_kind == "discrete":
        return ops.action_symbols(np.array(actions, dtype=np.int64))
    return ops.action_symbols(np.stack(actions)) if actions else np.array([], dtype=np.int64)


def select(method: str, example: SelectionExample, res: SelectionResources,
           rng: np.random.Generator):
    """Rank the options for one example. Returns (ranking, hardness_boundary)."""
    n_opt = example.option_states.shape[0]
    if method == "random":
        return rng.permutation(n_opt), 0
    if method in ("ours", "ours_wonorm", "predmodel"):
        model = {"ours": res.model, "ours_wonorm": res.model_wonorm,
                 "predmodel": res.predmodel}[method]
        if model is None:
            raise ValueError(f"selection method {method!r} needs its model resource")
        return _embedding_rank(model, example)
    if method == "state_sim":
        sims = -np.linalg.norm(example.option_states - example.ref_state, axis=1)
        if example.query_type == 1:
            return _rank(sims, None)
        easy = example.easy_refs
        h_opt = np.array([
            _nearest_easy_similarity(-np.linalg.norm(easy - s, axis=1))
            for s in example.option_states
        ])
        h_ref = _nearest_easy_similarity(-np.linalg.norm(easy - example.ref_state, axis=1))
        return _rank(sims, h_opt < h_ref)
    if method == "trajectory_sim":
        seed = res.trajectory_seed
        ref_sym = _expert_symbols(res.env, example.ref_state, seed)
        opt_sym = [_expert_symbols(res.env, s, seed) for s in example.option_states]
        sims = -np.array([levenshtein(ref_sym, sym) for sym in opt_sym], dtype=float)
        if example.query_type == 1:
            return _rank(sims, None)
        easy_sym = [_expert_symbols(res.env, s, seed) for s in example.easy_refs]
        h_opt = np.array([
            _nearest_easy_similarity(-np.array([levenshtein(sym, es) for es in easy_sym],
                                               dtype=float))
            for sym in opt_sym
        ])
        h_ref = _nearest_easy_similarity(-np.array([levenshtein(ref_sym, es) for es in easy_sym],
                                                   dtype=float))
        return _rank(sims, h_opt < h_ref)
    if method in ("opt", "opt50"):
        popn = res.population if method == "opt" else res.population_half
        if popn is None:
            raise ValueError(f"selection method {method!r} needs its population resource")
        stack = np.concatenate([example.ref_state[None, :], example.option_states])
        table = popn.outcome_table(stack, res.mi_reps_per_agent, rng)
        sims = mi_pairwise(table, 0, range(1, 1 + n_opt))
        if example.query_type == 1:
            return _rank(sims, None)
        pos = popn.outcome_table(stack, res.pos_reps_per_agent, rng).mean(axis=1)
        return _rank(sims, pos[1:] < pos[0])
    raise ValueError(f"unknown selection method {method!r}; options: {', '.join(METHODS)}")


def select_with_estimates(example: SelectionExample):
    """Ranking from the construction-time estimates themselves (the noise-free oracle)."""
    if example.query_type == 1:
        return _rank(example.gt_sims, None)
    return _rank(example.gt_sims, example.pos_options < example.pos_ref)


def topk_accuracy(rankings: list[np.ndarray], ground_truths: list[int], k: int) -> float:
    hits = [gt in rank[:k] for rank, gt in zip(rankings, ground_truths)]
    return float(np.mean(hits))


def save_selection_dataset(path, env: str, examples: list[SelectionExample]) -> None:
    fields = get_env(env).state_fields
    with open(path, "w", newline="", encoding="utf-8") as fp:
        writer = csv.writer(fp)
        writer.writerow(["example", "role", "query_type", "ground_truth", "pos",
                         "similarity", *fields])
        for i, ex in enumerate(examples):
            writer.writerow([i, "ref", ex.query_type, ex.ground_truth,
                             repr(ex.pos_ref), "",
                             *[repr(float(v)) for v in ex.ref_state]])
            for j in range(ex.option_states.shape[0]):
                writer.writerow([i, f"option_{j}", ex.query_type, "",
                                 repr(float(ex.pos_options[j])),
                                 repr(float(ex.gt_sims[j])),
                                 *[repr(float(v)) for v in ex.option_states[j]]])
            for j in range(ex.easy_refs.shape[0]):
                writer.writerow([i, f"easy_{j}", ex.query_type, "", "", "",
                                 *[repr(float(v)) for v in ex.easy_refs[j]]])


def load_selection_dataset(path) -> list[SelectionExample]:
    rows: dict[int, dict] = {}
    with open(path, "r", newline="", encoding="utf-8") as fp:
        reader = csv.reader(fp)
        next(reader)
        for row in reader:
            i, role, qtype = int(row[0]), row[1], int(row[2])
            state = np.array([float(v) for v in row[6:]])
            rec = rows.setdefault(i, {"options": [], "pos": [], "sims": [],
                                      "easy": [], "qtype": qtype})
            if role == "ref":
                rec["ref"] = state
                rec["gt"] = int(row[3])
                rec["pos_ref"] = float(row[4])
            elif role.startswith("option"):
                rec["options"].append(state)
                rec["pos"].append(float(row[4]))
                rec["sims"].append(float(row[5]))
            else:
                rec["easy"].append(state)
    return [
        SelectionExample(rec["ref"], np.stack(rec["options"]), np.stack(rec["easy"]),
                         rec["qtype"], rec["gt"], np.array(rec["sims"]),
                         rec["pos_ref"], np.array(rec["pos"]))
        for i, rec in sorted(rows.items())
    ]
