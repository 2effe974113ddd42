"""Command line pipeline.

Subcommands mirror the pipeline stages and are individually re-runnable
from persisted artifacts in the output directory:

    validate    parse the corpus and check every invariant
    weigh       train the significance model -> weights.jsonl, weight_model.json
    assess      score step difficulties      -> difficulty.jsonl
    cluster     k-means over question embeddings -> clusters.json
    schedule    plan all stages              -> schedule.json
    shape-loss  per-stage loss ranges        -> losses.jsonl
    simulate    tabular student under the schedule -> trace.json
    run         all of the above in order

Exit codes: 0 ok, 1 usage, 2 validation/input error, 3 numeric failure.
Config is INI-style `key = value` lines; every flag overrides its key.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import hashlib
import os
import struct
import sys
from pathlib import Path

from .corpus import CorpusError, parse_corpus
from .difficulty import (
    DifficultyError,
    compute_table,
    read_table,
    synthetic_logprobs,
    write_table,
)
from .loss_shaping import (
    LossShapingError,
    StudentConfig,
    build_stage_loss_specs,
    simulate_student,
    write_loss_specs,
    write_trace,
)
from .schedule import BudgetCurve, plan_full_schedule, read_schedule, write_schedule
from .selection import kmeans_cluster, read_clusters, write_clusters
from .weighting import (
    WeightingConfig,
    WeightingError,
    read_weights,
    save_model,
    train_weighting,
    write_weights,
)


@dataclasses.dataclass
class PipelineConfig:
    corpus: str = ""
    out: str = "out"
    seed: int | None = None
    lenient: bool = False
    synthetic_logprobs: int | None = None
    # significance model
    alpha: float = 0.5
    tau: float = 1.0
    weight_lr: float = 0.05
    scorer_lr: float = 0.005
    head_decay: float = 5e-3
    weight_epochs: int = 200
    batch_size: int = 8
    prefix_samples: int = 4
    restarts: int = 3
    unmasked_weight: float = 0.3
    d_embed: int = 32
    d_hidden: int = 32
    # schedule and selection
    epochs: int = 20
    t_max: int | None = None  # defaults to half the epoch count
    p: float = 0.5
    c0_frac: float = 0.3  # warm start as a fraction of total difficulty
    delta_s: int = 1
    n_clusters: int = 5
    beta: float = 12.0
    eps: float = 0.1
    # student simulation
    student_lr: float = 0.5
    simulate: bool = False

    @property
    def horizon(self) -> int:
        return self.t_max if self.t_max is not None else max(1, self.epochs // 2)

    def validate(self) -> None:
        if not self.corpus:
            raise ValueError("no corpus given (config key 'corpus' or --corpus)")
        if self.seed is None:
            raise ValueError("a seed is required (config key 'seed' or --seed)")
        if self.alpha < 0.0 or self.tau <= 0.0:
            raise ValueError("need alpha >= 0 and tau > 0")
        if not (0.0 < self.eps < 0.5):
            raise ValueError(f"eps must lie in (0, 0.5), got {self.eps}")
        if self.p <= 0.0:
            raise ValueError(f"p must be > 0, got {self.p}")
        if not (0.0 <= self.c0_frac <= 1.0):
            raise ValueError(f"c0_frac must lie in [0, 1], got {self.c0_frac}")
        if self.epochs < 1 or self.weight_epochs < 1:
            raise ValueError("epoch counts must be >= 1")
        if self.t_max is not None and self.t_max < 1:
            raise ValueError(f"t_max must be >= 1, got {self.t_max}")
        if self.delta_s < 1 or self.n_clusters < 1:
            raise ValueError("delta_s and n_clusters must be >= 1")
        if self.restarts < 1:
            raise ValueError(f"restarts must be >= 1, got {self.restarts}")
        if self.head_decay < 0.0 or self.unmasked_weight < 0.0:
            raise ValueError("head_decay and unmasked_weight must be >= 0")
        if self.beta < 0.0 or self.weight_lr <= 0.0 or self.scorer_lr <= 0.0 or self.student_lr <= 0.0:
            raise ValueError("need beta >= 0 and positive learning rates")


def _to_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_CONVERTERS = {
    "corpus": str,
    "out": str,
    "seed": int,
    "lenient": _to_bool,
    "synthetic_logprobs": int,
    "alpha": float,
    "tau": float,
    "weight_lr": float,
    "scorer_lr": float,
    "head_decay": float,
    "weight_epochs": int,
    "batch_size": int,
    "prefix_samples": int,
    "restarts": int,
    "unmasked_weight": float,
    "d_embed": int,
    "d_hidden": int,
    "epochs": int,
    "t_max": int,
    "p": float,
    "c0_frac": float,
    "delta_s": int,
    "n_clusters": int,
    "beta": float,
    "eps": float,
    "student_lr": float,
    "simulate": _to_bool,
}


def load_config(path) -> dict:
    """INI-style key = value lines; a bare file without section headers is
    accepted. Unknown keys are rejected (they are almost always typos)."""
    text = Path(path).read_text(encoding="utf-8")
    if not text.lstrip().startswith("["):
        text = "[pipeline]\n" + text
    parser = configparser.ConfigParser()
    parser.read_string(text)
    out: dict = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            key = key.replace("-", "_")
            if key not in _CONVERTERS:
                raise ValueError(f"config {path}: unknown key {key!r}")
            out[key] = _CONVERTERS[key](value)
    return out


def make_config(args: argparse.Namespace) -> PipelineConfig:
    """defaults < config file < command line flags."""
    values: dict = {}
    if args.config:
        values.update(load_config(args.config))
    for key in _CONVERTERS:
        flag = getattr(args, key, None)
        if flag is not None and flag is not False:
            values[key] = flag
    cfg = PipelineConfig(**values)
    cfg.validate()
    return cfg


def stage_seed(seed: int, name: str) -> int:
    """Stable named sub-seed so stages draw independent streams."""
    digest = hashlib.blake2b(
        name.encode("utf-8"), digest_size=8, key=struct.pack("<q", seed)
    ).digest()
    return int.from_bytes(digest, "little") >> 1  # keep it non-negative


def _atomic(write_fn, path: Path) -> Path:
    tmp = path.with_name(path.name + ".tmp")
    write_fn(tmp)
    os.replace(tmp, path)
    return path


def _load_corpus(cfg: PipelineConfig):
    path = Path(cfg.corpus)
    if not path.exists():
        raise FileNotFoundError(f"corpus not found: {path}")
    return parse_corpus(path, strict=not cfg.lenient)


def _out_dir(cfg: PipelineConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_validate(cfg: PipelineConfig) -> int:
    corpus = _load_corpus(cfg)
    n_steps = sum(q.n_steps for q in corpus.questions)
    with_lp = sum(1 for q in corpus.questions if q.token_logprobs is not None)
    print(
        f"[validate] ok: {len(corpus)} questions, {n_steps} steps,"
        f" {with_lp} with logprobs, embedding dim {corpus.embedding_dim}"
    )
    return 0


def cmd_weigh(cfg: PipelineConfig) -> int:
    corpus = _load_corpus(cfg)
    wcfg = WeightingConfig(
        alpha=cfg.alpha,
        tau=cfg.tau,
        lr=cfg.weight_lr,
        scorer_lr=cfg.scorer_lr,
        head_decay=cfg.head_decay,
        epochs=cfg.weight_epochs,
        batch_size=cfg.batch_size,
        prefix_samples=cfg.prefix_samples,
        restarts=cfg.restarts,
        unmasked_weight=cfg.unmasked_weight,
        d_embed=cfg.d_embed,
        d_hidden=cfg.d_hidden,
        seed=stage_seed(cfg.seed, "weigh"),
    )
    result = train_weighting(corpus, wcfg)
    out = _out_dir(cfg)
    _atomic(lambda p: write_weights(result.weights, p), out / "weights.jsonl")
    _atomic(lambda p: save_model(result.model, p), out / "weight_model.json")
    print(f"[weigh] wrote {out / 'weights.jsonl'} (final loss {result.epoch_losses[-1]:.4f})")
    return 0


def _maybe_weights(cfg: PipelineConfig):
    path = _out_dir(cfg) / "weights.jsonl"
    return read_weights(path) if path.exists() else None


def cmd_assess(cfg: PipelineConfig) -> int:
    corpus = _load_corpus(cfg)
    logprobs = None
    if cfg.synthetic_logprobs is not None:
        logprobs = synthetic_logprobs(corpus, cfg.synthetic_logprobs)
    table = compute_table(corpus, weights=_maybe_weights(cfg), logprobs=logprobs)
    out = _out_dir(cfg)
    _atomic(lambda p: write_table(table, p), out / "difficulty.jsonl")
    print(f"[assess] wrote {out / 'difficulty.jsonl'} (total difficulty {table.corpus_total:.4f})")
    return 0


def cmd_cluster(cfg: PipelineConfig) -> int:
    corpus = _load_corpus(cfg)
    embeddings = {q.id: q.embedding for q in corpus.questions}
    clusters = kmeans_cluster(embeddings, cfg.n_clusters, stage_seed(cfg.seed, "cluster"))
    out = _out_dir(cfg)
    _atomic(lambda p: write_clusters(clusters, p), out / "clusters.json")
    print(f"[cluster] wrote {out / 'clusters.json'} ({cfg.n_clusters} clusters)")
    return 0


def cmd_schedule(cfg: PipelineConfig) -> int:
    corpus = _load_corpus(cfg)
    out = _out_dir(cfg)
    table = read_table(out / "difficulty.jsonl")
    clusters = read_clusters(out / "clusters.json")
    curve = BudgetCurve.solve(
        b_total=table.corpus_total,
        c0=cfg.c0_frac * table.corpus_total,
        p=cfg.p,
        t_max=cfg.horizon,
    )
    plan = plan_full_schedule(
        corpus,
        table,
        curve,
        clusters,
        beta=cfg.beta,
        eps=cfg.eps,
        step_reduction=cfg.delta_s,
        total_stages=max(cfg.epochs, cfg.horizon),
    )
    _atomic(lambda p: write_schedule(plan, p), out / "schedule.json")
    print(f"[schedule] wrote {out / 'schedule.json'} ({len(plan.stages)} stages)")
    return 0


def cmd_shape_loss(cfg: PipelineConfig) -> int:
    corpus = _load_corpus(cfg)
    out = _out_dir(cfg)
    plan = read_schedule(out / "schedule.json")
    specs = build_stage_loss_specs(corpus, plan, _maybe_weights(cfg))
    _atomic(lambda p: write_loss_specs(specs, p), out / "losses.jsonl")
    print(f"[shape-loss] wrote {out / 'losses.jsonl'} ({len(specs)} specs)")
    return 0


def cmd_simulate(cfg: PipelineConfig) -> int:
    corpus = _load_corpus(cfg)
    out = _out_dir(cfg)
    plan = read_schedule(out / "schedule.json")
    scfg = StudentConfig(
        epochs=cfg.epochs, lr=cfg.student_lr, seed=stage_seed(cfg.seed, "simulate")
    )
    trace = simulate_student(corpus, plan, _maybe_weights(cfg), scfg)
    _atomic(lambda p: write_trace(trace, p), out / "trace.json")
    print(f"[simulate] wrote {out / 'trace.json'} (final loss {trace.epoch_losses[-1]:.4f})")
    return 0


def run_pipeline(cfg: PipelineConfig) -> int:
    """Every stage in order over the same persisted artifacts, so a full
    run and stage-by-stage runs produce identical outputs."""
    for step in (cmd_validate, cmd_weigh, cmd_assess, cmd_cluster, cmd_schedule, cmd_shape_loss):
        code = step(cfg)
        if code != 0:
            return code
    if cfg.simulate:
        return cmd_simulate(cfg)
    return 0


COMMANDS = {
    "validate": cmd_validate,
    "weigh": cmd_weigh,
    "assess": cmd_assess,
    "cluster": cmd_cluster,
    "schedule": cmd_schedule,
    "shape-loss": cmd_shape_loss,
    "simulate": cmd_simulate,
    "run": run_pipeline,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        raise SystemExit(1) from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cotpace", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command")
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or "").strip().splitlines()[0] if fn.__doc__ else None)
        p.add_argument("--config", help="INI config file")
        p.add_argument("--corpus", help="corpus JSONL path")
        p.add_argument("--out", help="output directory (default: out)")
        p.add_argument("--seed", type=int, help="master seed (required here or in the config)")
        p.add_argument("--lenient", action="store_true", help="ignore unknown corpus keys")
        p.add_argument(
            "--synthetic-logprobs",
            type=int,
            metavar="SEED",
            dest="synthetic_logprobs",
            help="generate seeded logprobs instead of requiring token_logprobs",
        )
        p.add_argument("--epochs", type=int, help="student epochs / schedule stages")
        p.add_argument("--weight-epochs", type=int, dest="weight_epochs")
        p.add_argument("--weight-lr", type=float, dest="weight_lr")
        p.add_argument("--scorer-lr", type=float, dest="scorer_lr")
        p.add_argument("--head-decay", type=float, dest="head_decay")
        p.add_argument("--restarts", type=int, help="independent weighting runs, best kept")
        p.add_argument(
            "--unmasked-weight",
            type=float,
            dest="unmasked_weight",
            help="weight of the always-visible predictor pass",
        )
        p.add_argument("--student-lr", type=float, dest="student_lr")
        p.add_argument("--alpha", type=float, help="mask-ratio penalty")
        p.add_argument("--tau", type=float, help="relaxation temperature")
        p.add_argument("--beta", type=float, help="diversity bonus")
        p.add_argument("--clusters", type=int, dest="n_clusters")
        p.add_argument("--eps", type=float, help="threshold decay")
        p.add_argument("--p", type=float, help="budget curve exponent")
        p.add_argument("--c0-frac", type=float, dest="c0_frac", help="warm-start fraction")
        p.add_argument("--delta-s", type=int, dest="delta_s", help="steps removed per selection")
        p.add_argument("--t-max", type=int, dest="t_max", help="budget horizon (default epochs/2)")
        p.add_argument("--simulate", action="store_true", help="run the student after the pipeline")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not args.command:
        parser.print_usage(sys.stderr)
        return 1
    try:
        cfg = make_config(args)
        return COMMANDS[args.command](cfg)
    except (CorpusError, DifficultyError, LossShapingError, WeightingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, FloatingPointError, OverflowError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
