"""Pipeline stages: each consumes upstream artifacts, writes files, updates the manifest.

Stages are cached by content: identical config section + identical input
hashes + intact outputs means a stage is skipped. Downstream stages verify
their upstream files against the manifest and refuse to run on mismatch
unless forced.
"""

from __future__ import annotations

import csv
import time
from pathlib import Path

import numpy as np

from taskemb import embedding as emb
from taskemb import population as pop
from taskemb import similarity as sim
from taskemb.benchmarks import clusters, prediction, selection
from taskemb.benchmarks import predmodel as pm
from taskemb.config import (RunConfig, parse_methods, parse_quiz_sizes,
                            section_dump)
from taskemb.envs import load_tasks, sample_tasks, save_tasks
from taskemb.envs.core import get_env
from taskemb.manifest import Manifest, text_hash
from taskemb.seeding import make_rng


def _stage_hash(cfg: RunConfig, sections: list[str]) -> str:
    # output_dir is a location and threads never change results; neither
    # belongs in the cache key.
    dump = section_dump(cfg, ["run", "seeds", *sections])
    lines = [l for l in dump.splitlines()
             if not l.startswith(("output_dir =", "threads ="))]
    return text_hash("\n".join(lines) + "\n")


def _announce(name: str, skipped: bool) -> None:
    print(f"[{name}] {'cached, skipping' if skipped else 'running'}", flush=True)


def _population_config(cfg: RunConfig) -> pop.PopulationConfig:
    p = cfg.population
    return pop.PopulationConfig(
        target_size=p.target_size, snap_delta=p.snap_delta, snap_reps=p.snap_reps,
        snap_size=p.snap_size, bc_epochs=p.bc_epochs, bc_rollouts=p.bc_rollouts,
        bc_passes=p.bc_passes, bc_batch=p.bc_batch, bc_lr=p.bc_lr,
        pg_iters=p.pg_iters, pg_batch=p.pg_batch, pg_eval_every=p.pg_eval_every,
        pg_lr=p.pg_lr,
    )


def _load_population(cfg: RunConfig, root: Path) -> pop.Population:
    popn = pop.load_population(root / "population")
    popn.threads = cfg.threads
    return popn


def stage_train_population(cfg: RunConfig, force: bool = False) -> Path:
    root = Path(cfg.output_dir)
    manifest = Manifest.load(root)
    config_hash = _stage_hash(cfg, ["population"])
    name = "train-population"
    if not force and manifest.up_to_date(name, config_hash, []):
        _announce(name, True)
        return root / "population"
    _announce(name, False)
    t0 = time.time()
    recipe = pop.standard_recipe(cfg.env, cfg.population.recipe)
    for spec in recipe:
        spec.method = cfg.population.method
    rng = make_rng(cfg.seeds.root, cfg.seeds.population)
    popn = pop.build_population(cfg.env, recipe, _population_config(cfg), rng,
                                verbose=True)
    paths = pop.save_population(popn, root / "population")
    manifest.record(name, config_hash, [], paths, time.time() - t0)
    return root / "population"


def stage_gen_constraints(cfg: RunConfig, force: bool = False) -> Path:
    root = Path(cfg.output_dir)
    manifest = Manifest.load(root)
    inputs = manifest.verify_upstream("train-population", force)
    config_hash = _stage_hash(cfg, ["constraints"])
    name = "gen-constraints"
    if not force and manifest.up_to_date(name, config_hash, inputs):
        _announce(name, True)
        return root / "constraints"
    _announce(name, False)
    t0 = time.time()
    c = cfg.constraints
    popn = _load_population(cfg, root)
    rng = make_rng(cfg.seeds.root, cfg.seeds.constraints)
    pool = sample_tasks(cfg.env, c.pool_size, rng)
    splits = sim.gen_constraint_splits(
        pool, popn,
        [(c.n_mi_train, c.n_norm_train), (c.n_mi_val, c.n_norm_val),
         (c.n_mi_test, c.n_norm_test)],
        rng, c.mi_reps_per_agent, c.pos_reps_per_agent, c.drop_ties_eps)
    out_dir = root / "constraints"
    out_dir.mkdir(parents=True, exist_ok=True)
    save_tasks(out_dir / "pool.csv", cfg.env, pool)
    outputs = [out_dir / "pool.csv"]
    for split, cset in zip(("train", "val", "test"), splits):
        path = out_dir / f"{split}.csv"
        sim.save_constraints(path, cset)
        outputs.append(path)
    manifest.record(name, config_hash, inputs, outputs, time.time() - t0)
    return out_dir


def _load_constraint_artifacts(cfg: RunConfig, root: Path):
    out_dir = root / "constraints"
    _, pool = load_tasks(out_dir / "pool.csv")
    sets = {split: sim.load_constraints(out_dir / f"{split}.csv", cfg.env)
            for split in ("train", "val", "test")}
    return pool, sets


def _online_sampler(cfg: RunConfig, pool: np.ndarray, popn: pop.Population):
    """Fresh-rollout constraint sampler for the fully online training protocol."""
    c = cfg.constraints

    def sampler(n_tri: int, n_pair: int, rng: np.random.Generator):
        cset = sim.gen_constraints(pool, popn, n_tri, n_pair, rng,
                                   c.mi_reps_per_agent, c.pos_reps_per_agent,
                                   c.drop_ties_eps)
        return cset.triplets, cset.pairs

    return sampler


def _write_trainlog(path, log: emb.TrainLog) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fp:
        writer = csv.writer(fp)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for e, tr, va in zip(log.epochs, log.train_loss, log.val_loss):
            writer.writerow([e, repr(tr), repr(va)])
        writer.writerow(["best_epoch", log.best_epoch, ""])
        writer.writerow(["test_loss", repr(log.test_loss), ""])


def stage_train_embedding(cfg: RunConfig, force: bool = False) -> Path:
    root = Path(cfg.output_dir)
    manifest = Manifest.load(root)
    inputs = manifest.verify_upstream("gen-constraints", force)
    config_hash = _stage_hash(cfg, ["embedding"])
    name = "train-embedding"
    if not force and manifest.up_to_date(name, config_hash, inputs):
        _announce(name, True)
        return root / "embedding"
    _announce(name, False)
    t0 = time.time()
    pool, sets = _load_constraint_artifacts(cfg, root)
    e = cfg.embedding
    sampler = None
    if e.online_constraints:
        sampler = _online_sampler(cfg, pool, _load_population(cfg, root))
    out_dir = root / "embedding"
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []

    main_cfg = emb.TrainConfig(dim=cfg.embed_dim(), norm_weight=e.norm_weight,
                               epochs=e.epochs, batch_size=e.batch_size, lr=e.lr,
                               patience=e.patience,
                               online_constraints=e.online_constraints)
    model, log = emb.train_embedding(pool, sets["train"], sets["val"], sets["test"],
                                     main_cfg, make_rng(cfg.seeds.root, cfg.seeds.training),
                                     online_sampler=sampler)
    emb.save_embedding_model(model, out_dir / "model.txt")
    _write_trainlog(out_dir / "trainlog.csv", log)
    outputs += [out_dir / "model.txt", out_dir / "trainlog.csv"]

    if e.train_wonorm:
        wo_cfg = emb.TrainConfig(dim=cfg.embed_dim_wonorm(), norm_weight=0.0,
                                 epochs=e.epochs, batch_size=e.batch_size, lr=e.lr,
                                 patience=e.patience,
                                 online_constraints=e.online_constraints)
        wo_model, wo_log = emb.train_embedding(
            pool, sets["train"], sets["val"], sets["test"], wo_cfg,
            make_rng(cfg.seeds.root, cfg.seeds.training, 1), online_sampler=sampler)
        emb.save_embedding_model(wo_model, out_dir / "model_wonorm.txt")
        _write_trainlog(out_dir / "trainlog_wonorm.csv", wo_log)
        outputs += [out_dir / "model_wonorm.txt", out_dir / "trainlog_wonorm.csv"]

    random_model = emb.fresh_embedding_net(cfg.env, cfg.embed_dim(),
                                           make_rng(cfg.seeds.root, cfg.seeds.training, 2))
    emb.save_embedding_model(random_model, out_dir / "model_random.txt")
    outputs.append(out_dir / "model_random.txt")
    manifest.record(name, config_hash, inputs, outputs, time.time() - t0)
    return out_dir


def stage_train_predmodel(cfg: RunConfig, force: bool = False) -> Path:
    root = Path(cfg.output_dir)
    manifest = Manifest.load(root)
    config_hash = _stage_hash(cfg, ["predmodel"])
    name = "train-predmodel"
    if not force and manifest.up_to_date(name, config_hash, []):
        _announce(name, True)
        return root / "predmodel"
    _announce(name, False)
    t0 = time.time()
    p = cfg.predmodel
    pm_cfg = pm.PredModelConfig(latent_dim=cfg.predmodel_latent(), epochs=p.epochs,
                                batch_size=p.batch_size, lr=p.lr,
                                alpha_reward=p.alpha_reward,
                                alpha_dynamics=p.alpha_dynamics, beta_kl=p.beta_kl,
                                n_rollouts=p.n_rollouts)
    rng = make_rng(cfg.seeds.root, cfg.seeds.training, 3)
    transitions = pm.collect_transitions(cfg.env, pm_cfg.n_rollouts, rng)
    nets, losses = pm.train_predmodel(cfg.env, transitions, pm_cfg, rng, verbose=True)
    out_dir = root / "predmodel"
    out_dir.mkdir(parents=True, exist_ok=True)
    pm.save_predmodel(nets, out_dir / "model.txt")
    with open(out_dir / "trainlog.csv", "w", newline="", encoding="utf-8") as fp:
        writer = csv.writer(fp)
        writer.writerow(["epoch", "loss"])
        for i, loss in enumerate(losses):
            writer.writerow([i, repr(loss)])
    outputs = [out_dir / "model.txt", out_dir / "trainlog.csv"]
    manifest.record(name, config_hash, [], outputs, time.time() - t0)
    return out_dir


def _prediction_inputs(cfg: RunConfig, manifest: Manifest, methods: list[str],
                       force: bool) -> list[Path]:
    inputs = list(manifest.verify_upstream("train-population", force))
    inputs += manifest.verify_upstream("train-embedding", force)
    if "predmodel" in methods:
        inputs += manifest.verify_upstream("train-predmodel", force)
    return inputs


def _write_results(path, rows: list[tuple]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fp:
        writer = csv.writer(fp)
        writer.writerow(["method", "quiz_size_or_type", "mean", "stderr"])
        for method, key, mean, stderr in rows:
            writer.writerow([method, key, repr(float(mean)), repr(float(stderr))])


def read_results(path) -> list[tuple[str, str, float, float]]:
    with open(path, "r", newline="", encoding="utf-8") as fp:
        reader = csv.reader(fp)
        next(reader)
        return [(m, k, float(a), float(b)) for m, k, a, b in reader]


def stage_eval_prediction(cfg: RunConfig, force: bool = False,
                          agent_population_dir=None) -> Path:
    """Performance-prediction benchmark over every configured quiz size.

    agent_population_dir optionally draws the hidden agents from a different
    population directory; predictor-side resources (embedding model and the
    population-average baseline) still come from this run.
    """
    root = Path(cfg.output_dir)
    manifest = Manifest.load(root)
    b = cfg.benchmarks
    methods = parse_methods(b.prediction_methods,
                            ("ours", "random", "ignore_task", "ignore_agent", "opt",
                             "predmodel"))
    inputs = _prediction_inputs(cfg, manifest, methods, force)
    name = "eval-prediction"
    suffix = ""
    if agent_population_dir is not None:
        agent_population_dir = Path(agent_population_dir)
        name = "eval-prediction-transfer"
        suffix = "_transfer"
        inputs = inputs + [agent_population_dir / "manifest"]
    config_hash = _stage_hash(cfg, ["benchmarks"])
    out_dir = root / "benchmarks"
    if not force and manifest.up_to_date(name, config_hash, inputs):
        _announce(name, True)
        return out_dir
    _announce(name, False)
    t0 = time.time()
    out_dir.mkdir(parents=True, exist_ok=True)
    popn = _load_population(cfg, root)
    agent_pop = popn
    if agent_population_dir is not None:
        agent_pop = pop.load_population(agent_population_dir)
        agent_pop.threads = cfg.threads
    model = emb.load_embedding_model(root / "embedding" / "model.txt")
    predm = None
    if "predmodel" in methods:
        predm = pm.load_predmodel(root / "predmodel" / "model.txt")

    sizes = parse_quiz_sizes(b.quiz_sizes)
    outputs = []
    rows = []
    for size in sizes:
        gen_rng = make_rng(cfg.seeds.root, cfg.seeds.benchmarks, 10, size)
        train_ds = prediction.gen_quiz_dataset(cfg.env, agent_pop, size,
                                               b.quiz_train_examples, gen_rng)
        test_ds = prediction.gen_quiz_dataset(cfg.env, agent_pop, size,
                                              b.quiz_test_examples, gen_rng)
        for split, ds in (("train", train_ds), ("test", test_ds)):
            path = out_dir / f"quiz_size_{size}_{split}{suffix}.csv"
            prediction.save_quiz_dataset(path, cfg.env, ds)
            outputs.append(path)
        outcomes = np.array([ex.test_outcome for ex in test_ds])
        fold_rng_parts = (cfg.seeds.root, cfg.seeds.benchmarks, 11, size)
        for method in methods:
            if method == "ours" or method == "predmodel":
                m = model if method == "ours" else predm
                beta = b.softnn_beta
                if b.tune_beta:
                    beta = prediction.tune_beta(m, train_ds)
                preds = np.array([prediction.predict_softnn(m, ex, beta)
                                  for ex in test_ds], dtype=np.uint8)
            else:
                base_rng = make_rng(cfg.seeds.root, cfg.seeds.benchmarks, 12, size,
                                    methods.index(method))
                preds = prediction.baseline_predictions(
                    method, test_ds, popn, base_rng,
                    ignore_task_rollouts=b.ignore_task_rollouts,
                    ignore_agent_reps=b.ignore_agent_reps,
                    opt_rollouts=b.opt_rollouts)
            mean, stderr, _ = prediction.eval_prediction(preds, outcomes,
                                                         make_rng(*fold_rng_parts))
            rows.append((method, str(size), mean, stderr))
        print(f"  quiz size {size}: " + "  ".join(
            f"{m}={v:.3f}" for m, k, v, _ in rows[-len(methods):]), flush=True)
    results_path = out_dir / f"prediction_results{suffix}.csv"
    _write_results(results_path, rows)
    outputs.append(results_path)
    manifest.record(name, config_hash, inputs, outputs, time.time() - t0)
    return out_dir


def stage_eval_selection(cfg: RunConfig, force: bool = False) -> Path:
    root = Path(cfg.output_dir)
    manifest = Manifest.load(root)
    b = cfg.benchmarks
    methods = parse_methods(b.selection_methods, selection.METHODS)
    inputs = list(manifest.verify_upstream("train-population", force))
    inputs += manifest.verify_upstream("train-embedding", force)
    if "predmodel" in methods:
        inputs += manifest.verify_upstream("train-predmodel", force)
    config_hash = _stage_hash(cfg, ["benchmarks"])
    name = "eval-selection"
    out_dir = root / "benchmarks"
    if not force and manifest.up_to_date(name, config_hash, inputs):
        _announce(name, True)
        return out_dir
    _announce(name, False)
    t0 = time.time()
    out_dir.mkdir(parents=True, exist_ok=True)
    popn = _load_population(cfg, root)
    res = selection.SelectionResources(
        env=cfg.env,
        model=emb.load_embedding_model(root / "embedding" / "model.txt"),
        population=popn,
        mi_reps_per_agent=b.selection_mi_reps,
        pos_reps_per_agent=b.selection_pos_reps,
    )
    wonorm_path = root / "embedding" / "model_wonorm.txt"
    if wonorm_path.exists():
        res.model_wonorm = emb.load_embedding_model(wonorm_path)
    if "predmodel" in methods:
        res.predmodel = pm.load_predmodel(root / "predmodel" / "model.txt")

    outputs = []
    # accuracy[method][(qtype, k)] -> list over datasets
    acc: dict[str, dict[tuple[int, int], list[float]]] = {
        m: {(t, k): [] for t in (1, 2) for k in (1, 3)} for m in methods}
    for d in range(b.selection_datasets):
        ds_rng = make_rng(cfg.seeds.root, cfg.seeds.benchmarks, 20, d)
        dataset = selection.gen_selection_dataset(
            cfg.env, popn, b.selection_examples, ds_rng,
            mi_reps_per_agent=b.selection_mi_reps,
            pos_reps_per_agent=b.selection_pos_reps,
            easy_pool_size=b.selection_pool)
        path = out_dir / f"selection_{d}.csv"
        selection.save_selection_dataset(path, cfg.env, dataset)
        outputs.append(path)
        if "opt50" in methods:
            half_rng = make_rng(cfg.seeds.root, cfg.seeds.benchmarks, 21, d)
            half = half_rng.choice(len(popn), size=max(1, len(popn) // 2),
                                   replace=False)
            res.population_half = popn.subset(sorted(half))
        for method in methods:
            m_rng = make_rng(cfg.seeds.root, cfg.seeds.benchmarks, 22, d,
                             methods.index(method))
            by_type: dict[int, list] = {1: [], 2: []}
            for ex in dataset:
                rank, _ = selection.select(method, ex, res, m_rng)
                by_type[ex.query_type].append((rank, ex.ground_truth))
            for t in (1, 2):
                ranks = [r for r, _ in by_type[t]]
                gts = [g for _, g in by_type[t]]
                for k in (1, 3):
                    acc[method][(t, k)].append(selection.topk_accuracy(ranks, gts, k))
        print(f"  selection dataset {d} done", flush=True)
    rows = []
    for method in methods:
        for t in (1, 2):
            for k in (1, 3):
                vals = np.array(acc[method][(t, k)])
                from taskemb.stats import fold_mean_stderr
                mean, stderr = fold_mean_stderr(vals)
                rows.append((method, f"type{t}_top{k}", mean, stderr))
    results_path = out_dir / "selection_results.csv"
    _write_results(results_path, rows)
    outputs.append(results_path)
    manifest.record(name, config_hash, inputs, outputs, time.time() - t0)
    return out_dir


def stage_silhouette(cfg: RunConfig, force: bool = False) -> Path:
    root = Path(cfg.output_dir)
    manifest = Manifest.load(root)
    inputs = list(manifest.verify_upstream("train-embedding", force))
    inputs += manifest.verify_upstream("gen-constraints", force)
    with_predmodel = (root / "predmodel" / "model.txt").exists()
    if with_predmodel:
        inputs += manifest.verify_upstream("train-predmodel", force)
    config_hash = _stage_hash(cfg, ["benchmarks"])
    name = "silhouette"
    out_dir = root / "benchmarks"
    if not force and manifest.up_to_date(name, config_hash, inputs):
        _announce(name, True)
        return out_dir
    _announce(name, False)
    t0 = time.time()
    out_dir.mkdir(parents=True, exist_ok=True)
    fresh = sample_tasks(cfg.env, cfg.benchmarks.eval_tasks,
                         make_rng(cfg.seeds.root, cfg.seeds.benchmarks, 7))
    _, pool = load_tasks(root / "constraints" / "pool.csv")
    pool_split = pool[: cfg.benchmarks.eval_tasks]
    models = {"ours": emb.load_embedding_model(root / "embedding" / "model.txt"),
              "random": emb.load_embedding_model(root / "embedding" / "model_random.txt")}
    wonorm_path = root / "embedding" / "model_wonorm.txt"
    if wonorm_path.exists():
        models["ours_wonorm"] = emb.load_embedding_model(wonorm_path)
    if with_predmodel:
        models["predmodel"] = pm.load_predmodel(root / "predmodel" / "model.txt")
    path = out_dir / "silhouette.csv"
    with open(path, "w", newline="", encoding="utf-8") as fp:
        writer = csv.writer(fp)
        writer.writerow(["model", "split", "n_tasks", "score"])
        for model_name, model in models.items():
            for split_name, states in (("fresh", fresh), ("pool", pool_split)):
                score = clusters.silhouette_for_model(model, cfg.env, states)
                writer.writerow([model_name, split_name, states.shape[0],
                                 repr(float(score))])
                print(f"  {model_name}/{split_name}: {score:.3f}", flush=True)
    manifest.record(name, config_hash, inputs, [path], time.time() - t0)
    return out_dir


def stage_dim_sweep(cfg: RunConfig, force: bool = False, dims=range(1, 11)) -> Path:
    root = Path(cfg.output_dir)
    manifest = Manifest.load(root)
    inputs = manifest.verify_upstream("gen-constraints", force)
    config_hash = _stage_hash(cfg, ["embedding"])
    name = "dim-sweep"
    out_dir = root / "eval"
    path = out_dir / "dim_sweep.csv"
    if not force and manifest.up_to_date(name, config_hash, inputs):
        _announce(name, True)
        return out_dir
    _announce(name, False)
    t0 = time.time()
    out_dir.mkdir(parents=True, exist_ok=True)
    pool, sets = _load_constraint_artifacts(cfg, root)
    e = cfg.embedding
    with open(path, "w", newline="", encoding="utf-8") as fp:
        writer = csv.writer(fp)
        writer.writerow(["dim", "best_val_loss", "test_loss"])
        for dim in dims:
            train_cfg = emb.TrainConfig(dim=dim, norm_weight=e.norm_weight,
                                        epochs=e.epochs, batch_size=e.batch_size,
                                        lr=e.lr, patience=e.patience)
            _, log = emb.train_embedding(pool, sets["train"], sets["val"],
                                         sets["test"], train_cfg,
                                         make_rng(cfg.seeds.root, cfg.seeds.training,
                                                  4, dim))
            writer.writerow([dim, repr(min(log.val_loss)), repr(log.test_loss)])
            print(f"  dim {dim}: test loss {log.test_loss:.4f}", flush=True)
    manifest.record(name, config_hash, inputs, [path], time.time() - t0)
    return out_dir


def stage_export_viz(cfg: RunConfig, force: bool = False) -> Path:
    root = Path(cfg.output_dir)
    manifest = Manifest.load(root)
    inputs = manifest.verify_upstream("train-embedding", force)
    config_hash = _stage_hash(cfg, ["benchmarks"])
    name = "export-viz"
    out_dir = root / "viz"
    if not force and manifest.up_to_date(name, config_hash, inputs):
        _announce(name, True)
        return out_dir
    _announce(name, False)
    t0 = time.time()
    out_dir.mkdir(parents=True, exist_ok=True)
    model = emb.load_embedding_model(root / "embedding" / "model.txt")
    states = sample_tasks(cfg.env, cfg.benchmarks.eval_tasks,
                          make_rng(cfg.seeds.root, cfg.seeds.benchmarks, 7))
    emb.export_embeddings(out_dir / "embeddings.csv", model, states)
    save_tasks(out_dir / "tasks.csv", cfg.env, states)
    vectors = model.embed(states)
    k = min(2, model.dim)
    proj, ratios = emb.pca_project(vectors, k)
    with open(out_dir / "pca.csv", "w", newline="", encoding="utf-8") as fp:
        writer = csv.writer(fp)
        writer.writerow(["task_index"] + [f"p_{i + 1}" for i in range(k)] + ["label"])
        labels = clusters.cluster_labels(cfg.env, states)
        for i in range(proj.shape[0]):
            writer.writerow([i, *[repr(float(v)) for v in proj[i]], int(labels[i])])
    with open(out_dir / "pca_variance.csv", "w", newline="", encoding="utf-8") as fp:
        writer = csv.writer(fp)
        writer.writerow(["component", "explained_variance_ratio"])
        for i, ratio in enumerate(ratios):
            writer.writerow([i + 1, repr(float(ratio))])
    outputs = [out_dir / "embeddings.csv", out_dir / "tasks.csv",
               out_dir / "pca.csv", out_dir / "pca_variance.csv"]
    manifest.record(name, config_hash, inputs, outputs, time.time() - t0)
    return out_dir


def stage_plot_data(cfg: RunConfig, force: bool = False) -> Path:
    """Reshape result CSVs into per-figure tables (quiz-size curves, selection bars)."""
    root = Path(cfg.output_dir)
    manifest = Manifest.load(root)
    out_dir = root / "benchmarks"
    inputs = list(manifest.verify_upstream("eval-prediction", force))
    inputs += manifest.verify_upstream("eval-selection", force)
    config_hash = _stage_hash(cfg, ["benchmarks"])
    name = "plot-data"
    if not force and manifest.up_to_date(name, config_hash, inputs):
        _announce(name, True)
        return out_dir
    _announce(name, False)
    t0 = time.time()
    pred = read_results(out_dir / "prediction_results.csv")
    methods = sorted({m for m, _, _, _ in pred})
    sizes = sorted({int(k) for _, k, _, _ in pred})
    table = {(m, int(k)): (mean, se) for m, k, mean, se in pred}
    fig5 = out_dir / "fig_prediction.csv"
    with open(fig5, "w", newline="", encoding="utf-8") as fp:
        writer = csv.writer(fp)
        header = ["quiz_size"]
        for m in methods:
            header += [f"{m}_mean", f"{m}_stderr"]
        writer.writerow(header)
        for s in sizes:
            row = [s]
            for m in methods:
                mean, se = table[(m, s)]
                row += [repr(mean), repr(se)]
            writer.writerow(row)
    sel = read_results(out_dir / "selection_results.csv")
    fig6 = out_dir / "fig_selection.csv"
    sel_methods = sorted({m for m, _, _, _ in sel})
    sel_table = {(m, k): (mean, se) for m, k, mean, se in sel}
    with open(fig6, "w", newline="", encoding="utf-8") as fp:
        writer = csv.writer(fp)
        keys = ["type1_top1", "type1_top3", "type2_top1", "type2_top3"]
        writer.writerow(["method"] + [f"{k}_{x}" for k in keys for x in ("mean", "stderr")])
        for m in sel_methods:
            row = [m]
            for k in keys:
                mean, se = sel_table[(m, k)]
                row += [repr(mean), repr(se)]
            writer.writerow(row)
    manifest.record(name, config_hash, inputs, [fig5, fig6], time.time() - t0)
    return out_dir


ALL_STAGES = ["train-population", "gen-constraints", "train-embedding",
              "train-predmodel", "eval-prediction", "eval-selection",
              "silhouette", "dim-sweep", "export-viz", "plot-data"]


def run_stage(stage: str, cfg: RunConfig, force: bool = False, **kwargs):
    fns = {
        "train-population": stage_train_population,
        "gen-constraints": stage_gen_constraints,
        "train-embedding": stage_train_embedding,
        "train-predmodel": stage_train_predmodel,
        "eval-prediction": stage_eval_prediction,
        "eval-selection": stage_eval_selection,
        "silhouette": stage_silhouette,
        "dim-sweep": stage_dim_sweep,
        "export-viz": stage_export_viz,
        "plot-data": stage_plot_data,
    }
    return fns[stage](cfg, force=force, **kwargs)
