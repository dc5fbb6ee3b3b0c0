"""Task embedding network and its ordinal-constraint training.

The network maps a task's initial state to an n-dimensional vector. Training
maximizes the Bradley-Terry-Luce likelihood of two constraint families over a
task pool: triplets ordering inner products (similarity) and pairs ordering
norms (difficulty), giving softplus losses on score differences. Easier tasks
end up with smaller norms; similar tasks with larger inner products.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from taskemb import nn
from taskemb.envs.core import get_env
from taskemb.similarity import ConstraintSet, PairConstraint, TripletConstraint


@dataclass
class EmbeddingNet:
    env: str
    net: nn.Mlp
    dim: int

    def embed(self, states: np.ndarray) -> np.ndarray:
        """Embed one state vector or a batch; a pure forward pass, no rollouts."""
        ops = get_env(self.env)
        states = np.asarray(states, dtype=np.float64)
        single = states.ndim == 1
        if single:
            ops.validate_state(states)
            states = states[None, :]
        out = nn.mlp_forward(self.net, ops.featurize_embed(states))
        return out[0] if single else out

    def embed_task(self, task) -> np.ndarray:
        if task.env != self.env:
            raise ValueError(f"task env {task.env!r} != model env {self.env!r}")
        return self.embed(task.state0)


def fresh_embedding_net(env: str, dim: int, rng: np.random.Generator,
                        hidden: tuple[int, ...] | None = None) -> EmbeddingNet:
    ops = get_env(env)
    hidden = ops.embed_hidden if hidden is None else hidden
    in_dim = ops.featurize_embed(np.zeros((1, ops.state_dim))).shape[1]
    sizes = [in_dim, *hidden, dim]
    acts = ["relu"] * len(hidden) + ["identity"]
    return EmbeddingNet(env, nn.glorot_init(sizes, acts, rng), dim)


def triplet_loss(e1: np.ndarray, e2: np.ndarray, e3: np.ndarray) -> float:
    """softplus(<e1,e3> - <e1,e2>): near zero when e2 is the clearly closer partner."""
    return float(nn.softplus(np.dot(e1, e3) - np.dot(e1, e2)))


def triplet_loss_grads(e1, e2, e3):
    """Gradients of triplet_loss w.r.t. all three embeddings."""
    s = float(nn.sigmoid(np.dot(e1, e3) - np.dot(e1, e2)))
    return s * (e3 - e2), -s * e1, s * e1


def norm_pair_loss(e_easy: np.ndarray, e_hard: np.ndarray) -> float:
    """softplus(|e_easy| - |e_hard|): pushes easier tasks toward smaller norms."""
    return float(nn.softplus(np.linalg.norm(e_easy) - np.linalg.norm(e_hard)))


def norm_pair_loss_grads(e_easy, e_hard):
    n_easy = np.linalg.norm(e_easy)
    n_hard = np.linalg.norm(e_hard)
    s = float(nn.sigmoid(n_easy - n_hard))
    g_easy = s * e_easy / n_easy if n_easy > 0 else np.zeros_like(e_easy)
    g_hard = -s * e_hard / n_hard if n_hard > 0 else np.zeros_like(e_hard)
    return g_easy, g_hard


@dataclass
class TrainConfig:
    dim: int = 6
    norm_weight: float = 0.4     # weight on the pair-constraint mean
    epochs: int = 300
    batch_size: int = 128
    lr: float = 1e-3
    patience: int = 20           # epochs without validation improvement
    online_constraints: bool = False


@dataclass
class TrainLog:
    epochs: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    test_loss: float = float("nan")


def _constraint_arrays(triplets: list[TripletConstraint]):
    t1 = np.array([t.task1 for t in triplets], dtype=np.intp)
    sim_idx = np.array([t.task2 if t.label == 1 else t.task3 for t in triplets],
                       dtype=np.intp)
    dis_idx = np.array([t.task3 if t.label == 1 else t.task2 for t in triplets],
                       dtype=np.intp)
    return t1, sim_idx, dis_idx


def _pair_arrays(pairs: list[PairConstraint]):
    easy = np.array([p.task1 if p.label == 1 else p.task2 for p in pairs], dtype=np.intp)
    hard = np.array([p.task2 if p.label == 1 else p.task1 for p in pairs], dtype=np.intp)
    return easy, hard


def _batch_losses(model: EmbeddingNet, x_feat: np.ndarray, t1, sim_idx, dis_idx,
                  easy, hard, norm_weight: float, want_grads: bool):
    """Mean triplet loss + norm_weight * mean pair loss, with net parameter grads.

    Each embedding slot is a separate forward pass through the shared net;
    parameter gradients from all slots accumulate.
    """
    param_grads = None
    total = 0.0

    def accumulate(states_idx, grad_out):
        nonlocal param_grads
        out, cache = nn.mlp_forward_cached(model.net, x_feat[states_idx])
        grads, _ = nn.mlp_backward(model.net, cache, grad_out(out) if callable(grad_out) else grad_out)
        if param_grads is None:
            param_grads = grads
        else:
            param_grads = [a + b for a, b in zip(param_grads, grads)]

    e1 = nn.mlp_forward(model.net, x_feat[t1])
    e_sim = nn.mlp_forward(model.net, x_feat[sim_idx])
    e_dis = nn.mlp_forward(model.net, x_feat[dis_idx])
    diffs = np.einsum("ij,ij->i", e1, e_dis) - np.einsum("ij,ij->i", e1, e_sim)
    total += float(np.mean(nn.softplus(diffs)))
    if want_grads:
        b = t1.size
        s = nn.sigmoid(diffs)[:, None] / b
        accumulate(t1, s * (e_dis - e_sim))
        accumulate(sim_idx, -s * e1)
        accumulate(dis_idx, s * e1)

    if norm_weight > 0.0 and easy.size:
        e_easy = nn.mlp_forward(model.net, x_feat[easy])
        e_hard = nn.mlp_forward(model.net, x_feat[hard])
        n_easy = np.linalg.norm(e_easy, axis=1)
        n_hard = np.linalg.norm(e_hard, axis=1)
        pair_diffs = n_easy - n_hard
        total += norm_weight * float(np.mean(nn.softplus(pair_diffs)))
        if want_grads:
            bp = easy.size
            s = nn.sigmoid(pair_diffs) * norm_weight / bp
            with np.errstate(invalid="ignore", divide="ignore"):
                u_easy = np.where(n_easy[:, None] > 0, e_easy / n_easy[:, None], 0.0)
                u_hard = np.where(n_hard[:, None] > 0, e_hard / n_hard[:, None], 0.0)
            accumulate(easy, s[:, None] * u_easy)
            accumulate(hard, -s[:, None] * u_hard)

    return total, param_grads


def constraint_loss(model: EmbeddingNet, pool_states: np.ndarray, cset: ConstraintSet,
                    norm_weight: float) -> float:
    """Full-set objective value: per-set means, pairs weighted by norm_weight."""
    ops = get_env(model.env)
    x_feat = ops.featurize_embed(np.asarray(pool_states, dtype=np.float64))
    t1, sim_idx, dis_idx = _constraint_arrays(cset.triplets)
    easy, hard = _pair_arrays(cset.pairs)
    loss, _ = _batch_losses(model, x_feat, t1, sim_idx, dis_idx, easy, hard,
                            norm_weight, want_grads=False)
    return loss


def triplet_satisfaction(model: EmbeddingNet, pool_states: np.ndarray,
                         triplets: list[TripletConstraint]) -> float:
    """Fraction of triplets whose labeled partner wins on inner product."""
    ops = get_env(model.env)
    x_feat = ops.featurize_embed(np.asarray(pool_states, dtype=np.float64))
    t1, sim_idx, dis_idx = _constraint_arrays(triplets)
    e = nn.mlp_forward(model.net, x_feat)
    good = np.einsum("ij,ij->i", e[t1], e[sim_idx]) > np.einsum("ij,ij->i", e[t1], e[dis_idx])
    return float(good.mean())


def train_embedding(pool_states: np.ndarray, train_set: ConstraintSet,
                    val_set: ConstraintSet, test_set: ConstraintSet,
                    config: TrainConfig, rng: np.random.Generator,
                    online_sampler=None, verbose: bool = False
                    ) -> tuple[EmbeddingNet, TrainLog]:
    """Minibatch Adam on the constraint objective with early stopping.

    Constraints are a fixed pool reused across epochs; passing online_sampler
    (with config.online_constraints) instead draws fresh labeled constraints
    every step, trading a large compute cost for the fully online protocol.
    Returns the parameters with the best validation loss and logs the test
    loss at those parameters.
    """
    if not train_set.triplets:
        raise ValueError("empty triplet constraint set")
    if config.norm_weight > 0.0 and not train_set.pairs:
        raise ValueError("empty pair constraint set with norm_weight > 0")
    env = train_set.env
    ops = get_env(env)
    init_rng, order_rng = rng.spawn(2)
    model = fresh_embedding_net(env, config.dim, init_rng)
    x_feat = ops.featurize_embed(np.asarray(pool_states, dtype=np.float64))

    t1, sim_idx, dis_idx = _constraint_arrays(train_set.triplets)
    easy, hard = _pair_arrays(train_set.pairs)

    params = model.net.parameters()
    adam = nn.AdamState.init(params, learning_rate=config.lr)
    log = TrainLog()
    best_val = float("inf")
    best_flat = model.net.to_flat()
    stale = 0
    n_tri = t1.size
    steps = max(1, int(np.ceil(n_tri / config.batch_size)))

    for epoch in range(config.epochs):
        tri_order = order_rng.permutation(n_tri)
        pair_order = order_rng.permutation(easy.size) if easy.size else np.array([], dtype=np.intp)
        epoch_loss = 0.0
        for step_i in range(steps):
            if config.online_constraints and online_sampler is not None:
                fresh_tri, fresh_pairs = online_sampler(config.batch_size, config.batch_size,
                                                        order_rng)
                bt1, bsim, bdis = _constraint_arrays(fresh_tri)
                beasy, bhard = _pair_arrays(fresh_pairs)
            else:
                sel = tri_order[step_i * config.batch_size : (step_i + 1) * config.batch_size]
                bt1, bsim, bdis = t1[sel], sim_idx[sel], dis_idx[sel]
                if easy.size:
                    lo = (step_i * config.batch_size) % easy.size
                    psel = np.take(pair_order, np.arange(lo, lo + config.batch_size),
                                   mode="wrap")
                else:
                    psel = np.array([], dtype=np.intp)
                beasy, bhard = easy[psel], hard[psel]
            loss, grads = _batch_losses(model, x_feat, bt1, bsim, bdis, beasy, bhard,
                                        config.norm_weight, want_grads=True)
            if not np.isfinite(loss):
                raise RuntimeError(f"embedding loss became non-finite at epoch {epoch}")
            epoch_loss += loss
            params, adam = nn.adam_step(params, grads, adam)
            model.net.set_parameters(params)

        val_loss = constraint_loss(model, pool_states, val_set, config.norm_weight)
        log.epochs.append(epoch)
        log.train_loss.append(epoch_loss / steps)
        log.val_loss.append(val_loss)
        if verbose and epoch % 20 == 0:
            print(f"  epoch {epoch}: train {epoch_loss / steps:.4f} val {val_loss:.4f}")
        if val_loss < best_val:
            best_val = val_loss
            best_flat = model.net.to_flat()
            log.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale > config.patience:
                break

    model.net.set_flat(best_flat)
    log.test_loss = constraint_loss(model, pool_states, test_set, config.norm_weight)
    return model, log


def pca_project(embeddings: np.ndarray, k: int):
    """Mean-centered projection onto the top-k principal components.

    Returns (projected, explained_variance_ratios). Degenerate inputs (all
    points equal) warn and project onto an arbitrary orthonormal basis.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need at least two points")
    if k > x.shape[1]:
        raise ValueError(f"k={k} exceeds dimension {x.shape[1]}")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (x.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.maximum(eigvals[order], 0.0)
    eigvecs = eigvecs[:, order]
    total = eigvals.sum()
    if total <= 0.0:
        warnings.warn("zero variance: PCA basis is arbitrary")
        ratios = np.zeros(k)
    else:
        ratios = eigvals[:k] / total
    return centered @ eigvecs[:, :k], ratios


def save_embedding_model(model: EmbeddingNet, path) -> None:
    """Header line {"env": ..., "dim": ...} followed by the text weight format."""
    with open(path, "w", encoding="utf-8") as fp:
        fp.write(json.dumps({"env": model.env, "dim": model.dim}) + "\n")
        nn.write_weights(model.net, fp)


def load_embedding_model(path) -> EmbeddingNet:
    with open(path, "r", encoding="utf-8") as fp:
        header = json.loads(fp.readline())
        net = nn.read_weights(fp)
    return EmbeddingNet(header["env"], net, int(header["dim"]))


def export_embeddings(path, model: EmbeddingNet, states: np.ndarray) -> None:
    """CSV `task_index,e_1..e_n,norm` for a batch of tasks."""
    emb = model.embed(np.asarray(states, dtype=np.float64))
    with open(path, "w", newline="", encoding="utf-8") as fp:
        cols = ",".join(f"e_{i + 1}" for i in range(model.dim))
        fp.write(f"task_index,{cols},norm\n")
        for i, row in enumerate(emb):
            vals = ",".join(repr(float(v)) for v in row)
            fp.write(f"{i},{vals},{repr(float(np.linalg.norm(row)))}\n")
