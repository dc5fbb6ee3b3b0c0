"""Run configuration: flat `key = value` sections, explicit seeds, lossless round-trip.

Every stage of the pipeline reads its settings from one file so a run is
fully described by (config, code). All randomness flows from the named seeds
here; nothing samples ambient entropy.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field

from taskemb.envs.core import get_env


@dataclass
class Seeds:
    root: int = 20240601
    population: int = 1
    constraints: int = 2
    training: int = 3
    benchmarks: int = 4


@dataclass
class PopulationSection:
    recipe: str = "masks"        # masks | bias
    method: str = "bc"           # bc | pg
    target_size: int = 100
    snap_delta: float = 0.01
    snap_reps: int = 10
    snap_size: int = 1000
    bc_epochs: int = 60
    bc_rollouts: int = 200
    bc_passes: int = 5
    bc_batch: int = 128
    bc_lr: float = 3e-3
    pg_iters: int = 200
    pg_batch: int = 32
    pg_eval_every: int = 10
    pg_lr: float = 1e-3


@dataclass
class ConstraintSection:
    pool_size: int = 1000
    n_mi_train: int = 5000
    n_norm_train: int = 5000
    n_mi_val: int = 1000
    n_norm_val: int = 1000
    n_mi_test: int = 1000
    n_norm_test: int = 1000
    mi_reps_per_agent: int = 100
    pos_reps_per_agent: int = 10
    drop_ties_eps: float = 0.0


@dataclass
class EmbeddingSection:
    dim: int = 0                 # 0: use the environment default
    dim_wonorm: int = 0
    norm_weight: float = 0.4
    epochs: int = 300
    batch_size: int = 128
    lr: float = 1e-3
    patience: int = 20
    train_wonorm: bool = True
    online_constraints: bool = False


@dataclass
class PredModelSection:
    enabled: bool = False
    latent_dim: int = 0          # 0: use the environment default
    epochs: int = 500
    batch_size: int = 512
    lr: float = 1e-3
    alpha_reward: float = 1.0
    alpha_dynamics: float = 1.0
    beta_kl: float = 0.01
    n_rollouts: int = 10000


@dataclass
class BenchmarkSection:
    quiz_sizes: str = "1-20"
    quiz_train_examples: int = 5000
    quiz_test_examples: int = 5000
    prediction_methods: str = "ours,random,ignore_agent,opt"
    softnn_beta: float = 1000.0
    tune_beta: bool = True
    ignore_task_rollouts: int = 500
    ignore_agent_reps: int = 10
    opt_rollouts: int = 10
    selection_datasets: int = 4
    selection_examples: int = 50
    selection_methods: str = "ours,ours_wonorm,random,state_sim,trajectory_sim,opt,opt50"
    selection_mi_reps: int = 100
    selection_pos_reps: int = 10
    selection_pool: int = 500
    eval_tasks: int = 1000


@dataclass
class RunConfig:
    env: str = "multikeynav"
    output_dir: str = "runs/default"
    threads: int = 1
    seeds: Seeds = field(default_factory=Seeds)
    population: PopulationSection = field(default_factory=PopulationSection)
    constraints: ConstraintSection = field(default_factory=ConstraintSection)
    embedding: EmbeddingSection = field(default_factory=EmbeddingSection)
    predmodel: PredModelSection = field(default_factory=PredModelSection)
    benchmarks: BenchmarkSection = field(default_factory=BenchmarkSection)

    def embed_dim(self) -> int:
        return self.embedding.dim or get_env(self.env).embed_dim

    def embed_dim_wonorm(self) -> int:
        return self.embedding.dim_wonorm or get_env(self.env).embed_dim_wonorm

    def predmodel_latent(self) -> int:
        return self.predmodel.latent_dim or get_env(self.env).embed_dim


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


_SECTIONS = {
    "seeds": Seeds,
    "population": PopulationSection,
    "constraints": ConstraintSection,
    "embedding": EmbeddingSection,
    "predmodel": PredModelSection,
    "benchmarks": BenchmarkSection,
}


def _coerce(ftype: str, raw: str):
    if ftype == "int":
        return int(raw)
    if ftype == "float":
        return float(raw)
    if ftype == "bool":
        low = raw.strip().lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    return raw


def _fill_section(cls, items: dict[str, str], section: str):
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in items.items():
        if key not in known:
            raise ConfigError(f"[{section}] unknown key {key!r}")
        try:
            kwargs[key] = _coerce(str(known[key].type), raw)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: {exc}") from exc
    return cls(**kwargs)


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    cfg = RunConfig()
    if parser.has_section("run"):
        run = dict(parser.items("run"))
        cfg.env = run.pop("env", cfg.env)
        cfg.output_dir = run.pop("output_dir", cfg.output_dir)
        if "threads" in run:
            cfg.threads = int(run.pop("threads"))
        if run:
            raise ConfigError(f"[run] unknown keys {sorted(run)}")
    for name, cls in _SECTIONS.items():
        if parser.has_section(name):
            setattr(cfg, name, _fill_section(cls, dict(parser.items(name)), name))
    get_env(cfg.env)  # validates the environment name
    if cfg.threads < 1:
        raise ConfigError("threads must be >= 1")
    return cfg


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fp:
        return parse_config(fp.read())


def _value_str(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: RunConfig) -> str:
    out = io.StringIO()
    out.write("[run]\n")
    out.write(f"env = {cfg.env}\n")
    out.write(f"output_dir = {cfg.output_dir}\n")
    out.write(f"threads = {cfg.threads}\n")
    for name in _SECTIONS:
        out.write(f"\n[{name}]\n")
        section = getattr(cfg, name)
        for f in dataclasses.fields(section):
            out.write(f"{f.name} = {_value_str(getattr(section, f.name))}\n")
    return out.getvalue()


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fp:
        fp.write(dump_config(cfg))


def section_dump(cfg: RunConfig, names: list[str]) -> str:
    """Canonical text of selected sections, for stage content hashing."""
    full = dump_config(cfg)
    blocks = {}
    current = None
    for line in full.splitlines():
        if line.startswith("["):
            current = line[1:-1]
            blocks[current] = []
        elif line.strip() and current is not None:
            blocks[current].append(line)
    picked = []
    for name in names:
        picked.append(f"[{name}]")
        picked.extend(blocks.get(name, []))
    return "\n".join(picked) + "\n"


def parse_quiz_sizes(spec: str) -> list[int]:
    """Accepts '1-20', '5', or '1,2,5,20'; returns sorted unique sizes."""
    sizes: set[int] = set()
    for part in spec.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-")
            sizes.update(range(int(lo), int(hi) + 1))
        elif part:
            sizes.add(int(part))
    out = sorted(sizes)
    if not out or out[0] < 1 or out[-1] > 20:
        raise ConfigError(f"quiz sizes must lie in [1, 20]: {spec!r}")
    return out


def parse_methods(spec: str, valid: tuple[str, ...]) -> list[str]:
    methods = [m.strip() for m in spec.split(",") if m.strip()]
    for m in methods:
        if m not in valid:
            raise ConfigError(f"unknown method {m!r}; valid: {', '.join(valid)}")
    return methods
