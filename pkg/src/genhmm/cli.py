"""Command-line interface: train, eval, bench.

``train`` fits one model per class and writes per-class checkpoints
(resuming from per-iteration training states when present), ``eval``
scores a test set against saved models and emits a metrics report,
``bench`` sweeps mixture sizes and noise levels comparing the flow
models against the GMM baseline.

Exit codes: 0 success, 2 configuration error, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import logging
import os
import re
import sys
import time
from dataclasses import dataclass, fields

import numpy as np

from . import checkpoint, metrics
from .data import DataError, add_noise, load_dataset
from .flow import FlowError
from .gmm import GmmHmm, gmm_em_step
from .model import (GenHmm, TrainConfig, TrainState, TrainingError,
                    em_step, states_from_lengths)
from .nn import NonFiniteGradientError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class ConfigError(ValueError):
    """Invalid run configuration (file or flags)."""


@dataclass
class RunConfig:
    """Everything a training run needs besides the dataset itself."""

    model: str = "genhmm"
    k: int = 1
    blocks: int = 4
    hidden: int = 24
    frames_per_state: int = 3
    lr: float = 1e-3
    batch_size: int = 32
    inner_batches: int = 4
    max_em: int = 50
    tol: float = 1e-4
    seed: int = 0
    threads: int = 1
    noise: str | None = None
    snr_db: float | None = None
    per_frame_score: bool = False

    def validate(self):
        if self.model not in ("genhmm", "gmmhmm"):
            raise ConfigError(f"unknown model type {self.model!r}")
        positive = ["k", "blocks", "hidden", "frames_per_state", "lr",
                    "batch_size", "inner_batches", "max_em", "tol", "threads"]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"--{name.replace('_', '-')} must be > 0")
        if self.seed < 0:
            raise ConfigError("--seed must be non-negative")
        if self.noise is not None and self.noise not in ("white", "pink"):
            raise ConfigError(f"unknown noise kind {self.noise!r}")
        if (self.noise is None) != (self.snr_db is None):
            raise ConfigError("--noise and --snr-db go together")

    def as_kv(self):
        return "\n".join(f"{f.name} = {getattr(self, f.name)}"
                         for f in fields(self)) + "\n"


def read_config_file(path):
    """Parse a ``key = value`` config file into a dict of strings."""
    out = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
                key, value = line.split("=", 1)
                out[key.strip().replace("-", "_")] = value.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    return out


def build_run_config(args):
    """Config-file values overridden by explicit command-line flags."""
    cfg = RunConfig()
    if getattr(args, "config", None):
        file_values = read_config_file(args.config)
        valid = {f.name: f for f in fields(RunConfig)}
        for key, raw in file_values.items():
            if key not in valid:
                raise ConfigError(f"unknown config key {key!r}")
            current = getattr(cfg, key)
            try:
                if key in ("noise",):
                    value = raw
                elif isinstance(current, bool):
                    value = raw.lower() in ("1", "true", "yes")
                elif isinstance(current, int):
                    value = int(raw)
                elif key in ("snr_db",) or isinstance(current, float):
                    value = float(raw)
                else:
                    value = raw
            except ValueError as exc:
                raise ConfigError(f"config key {key}: {exc}") from exc
            setattr(cfg, key, value)
    for f in fields(RunConfig):
        flag_value = getattr(args, f.name, None)
        if flag_value is not None:
            setattr(cfg, f.name, flag_value)
    cfg.validate()
    return cfg


def class_seed(root_seed, label):
    """Stable per-class seed derived from the root seed."""
    digest = hashlib.sha256(f"{root_seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _safe_name(label):
    return re.sub(r"[^A-Za-z0-9_.-]", "_", str(label))


# ---------------------------------------------------------------------------
# training

def _train_config_for(cfg, label, n_seqs):
    return TrainConfig(lr=cfg.lr,
                       batch_size=min(cfg.batch_size, n_seqs),
                       inner_batches=cfg.inner_batches,
                       max_iters=cfg.max_em,
                       tol=cfg.tol,
                       seed=class_seed(cfg.seed, label))


def _trajectory_hash(train_cfg):
    # Only the parameters that shape the optimization path; stopping
    # knobs (max_iters, tol) may change between an interrupted run and
    # its continuation without invalidating the saved state.
    return checkpoint.config_hash({
        "lr": train_cfg.lr,
        "batch_size": train_cfg.batch_size,
        "inner_batches": train_cfg.inner_batches,
        "seed": train_cfg.seed,
    })


def train_one_class(cfg, label, seqs, out_dir, fresh=False):
    """Train one class's model, checkpointing every EM iteration.

    An existing training state with a matching trajectory configuration
    is resumed; returns ``(model, state)`` with the final model also
    written to ``<label>.model.json``.
    """
    train_cfg = _train_config_for(cfg, label, len(seqs))
    state_path = os.path.join(out_dir, f"{_safe_name(label)}.train.json")
    model_path = os.path.join(out_dir, f"{_safe_name(label)}.model.json")
    model = None
    state = None
    if not fresh and os.path.exists(state_path):
        saved_model, saved_state = checkpoint.load_train_state(state_path)
        if (_trajectory_hash(saved_state.config) == _trajectory_hash(train_cfg)
                and saved_model.kind == cfg.model):
            model, state = saved_model, saved_state
            state.config = train_cfg  # adopt the (possibly new) stopping knobs
            logger.info("class %s: resuming at EM iteration %d",
                        label, state.em_iter)
        else:
            logger.warning("class %s: existing training state does not match "
                           "this configuration; starting fresh", label)
    if model is None:
        rng = np.random.default_rng(train_cfg.seed)
        n_states = states_from_lengths([s.shape[0] for s in seqs],
                                       cfg.frames_per_state)
        n_dim = seqs[0].shape[1]
        if cfg.model == "genhmm":
            model = GenHmm.build(label, n_states, cfg.k, n_dim,
                                 n_blocks=cfg.blocks, hidden=cfg.hidden, rng=rng)
        else:
            model = GmmHmm.build(label, n_states, cfg.k, n_dim,
                                 dataset=seqs, rng=rng)
        state = TrainState(model, train_cfg)

    log_path = os.path.join(out_dir, "train.log")

    def on_iteration(mdl, st):
        checkpoint.save_train_state(mdl, st, state_path)
        with open(log_path, "a", encoding="utf-8") as fh:
            fh.write(f"class={label} iter={st.em_iter - 1} "
                     f"loglik_frame={st.history_frame[-1]:.17g}\n")

    _run_em(model, seqs, state, on_iteration)
    checkpoint.save_model(model, model_path)
    return model, state


def _run_em(model, seqs, state, callback):
    """Shared EM driver for both model kinds."""
    cfg = state.config
    while state.em_iter < cfg.max_iters:
        if model.kind == "genhmm":
            per_frame = em_step(model, seqs, state)
        else:
            rng = np.random.default_rng(
                np.random.SeedSequence([cfg.seed, state.em_iter]))
            per_frame = gmm_em_step(model, seqs, rng)
            state.history_frame.append(per_frame)
            state.em_iter += 1
        if not np.isfinite(per_frame):
            raise TrainingError(
                f"class {model.label}, EM iteration {state.em_iter - 1}: "
                f"non-finite log-likelihood")
        callback(model, state)
        hist = state.history_frame
        if len(hist) >= 2:
            prev, cur = hist[-2], hist[-1]
            if abs(cur - prev) / max(abs(prev), 1e-12) < cfg.tol:
                break
    return state


def cmd_train(args):
    cfg = build_run_config(args)
    ds = load_dataset(args.data)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "run.kv"), "w", encoding="utf-8") as fh:
        fh.write(cfg.as_kv())
        fh.write(f"config_hash = {checkpoint.config_hash(vars(cfg))}\n")
    per_class = ds.by_class()
    started = time.perf_counter()
    if cfg.threads > 1:
        with concurrent.futures.ProcessPoolExecutor(cfg.threads) as pool:
            futures = {
                pool.submit(train_one_class, cfg, label, seqs, args.out,
                            args.fresh): label
                for label, seqs in per_class.items()}
            for fut in concurrent.futures.as_completed(futures):
                fut.result()
    else:
        for label, seqs in per_class.items():
            train_one_class(cfg, label, seqs, args.out, args.fresh)
    elapsed = time.perf_counter() - started
    print(f"trained {len(per_class)} class models "
          f"({cfg.model}, K={cfg.k}) in {elapsed:.1f}s -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluation

def load_models(models_dir):
    paths = sorted(p for p in os.listdir(models_dir)
                   if p.endswith(".model.json"))
    if not paths:
        raise DataError(f"no model checkpoints in {models_dir}")
    models = [checkpoint.load_model(os.path.join(models_dir, p)) for p in paths]
    models.sort(key=lambda m: str(m.label))
    widths = {m.n_dim for m in models}
    if len(widths) != 1:
        raise DataError(f"checkpoints disagree on frame width: {sorted(widths)}")
    return models


def evaluate(models, ds, per_frame_score=False, metadata=None):
    if ds.n_dim != models[0].n_dim:
        raise DataError(f"models expect width {models[0].n_dim}, "
                        f"dataset has width {ds.n_dim}")
    labels = [m.label for m in models]
    index = {label: i for i, label in enumerate(labels)}
    unknown = [lbl for lbl in ds.labels if lbl not in index]
    if unknown:
        raise DataError(f"no model for classes {unknown}")
    seqs = [frames for _, frames in ds]
    scores = np.stack([m.sequence_logliks(seqs) for m in models], axis=1)
    if per_frame_score:
        lengths = np.array([s.shape[0] for s in seqs], dtype=np.float64)
        scores = scores / lengths[:, None]
    y_true = [index[label] for label, _ in ds]
    y_pred = [None if np.all(np.isneginf(row)) else int(np.argmax(row))
              for row in scores]
    return metrics.report_from_predictions(labels, y_true, y_pred, metadata)


def _write_report(report, out_dir, stem="report"):
    os.makedirs(out_dir, exist_ok=True)
    table = metrics.format_table(report)
    kv = metrics.to_kv_lines(report)
    checkpoint.atomic_write(os.path.join(out_dir, f"{stem}.txt"), table + "\n")
    checkpoint.atomic_write(os.path.join(out_dir, f"{stem}.kv"), kv)
    return table


def cmd_eval(args):
    cfg = build_run_config(args)
    models = load_models(args.models_dir)
    ds = load_dataset(args.data)
    if cfg.noise is not None:
        ds = add_noise(ds, cfg.noise, cfg.snr_db, seed=class_seed(cfg.seed, "eval-noise"))
    started = time.perf_counter()
    report = evaluate(models, ds, cfg.per_frame_score)
    report.metadata.update({
        "config_hash": checkpoint.config_hash(vars(cfg)),
        "seed": cfg.seed,
        "noise": cfg.noise or "none",
        "snr_db": "" if cfg.snr_db is None else cfg.snr_db,
        "wall_time_s": f"{time.perf_counter() - started:.3f}",
    })
    print(_write_report(report, args.out))
    return EXIT_OK


# ---------------------------------------------------------------------------
# benchmark sweeps

def _parse_grid(text, kind=float):
    try:
        values = [kind(v) for v in str(text).split(",") if v.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"bad grid {text!r}: {exc}") from exc
    if not values:
        raise ConfigError(f"empty grid {text!r}")
    return values


def cmd_bench(args):
    cfg = build_run_config(args)
    k_grid = _parse_grid(args.k_grid, int)
    snr_grid = _parse_grid(args.snr_grid, float) if args.snr_grid else []
    model_kinds = [m.strip() for m in args.models.split(",")]
    for kind in model_kinds:
        if kind not in ("genhmm", "gmmhmm"):
            raise ConfigError(f"unknown model type {kind!r} in --models")
    train_ds = load_dataset(args.data)
    test_ds = load_dataset(args.test)
    os.makedirs(args.out, exist_ok=True)

    test_variants = [("clean", test_ds)]
    for snr in snr_grid:
        noisy = add_noise(test_ds, cfg.noise or "white", snr,
                          seed=class_seed(cfg.seed, f"bench-noise-{snr}"))
        test_variants.append((f"snr{snr:g}", noisy))

    rows = []
    for kind in model_kinds:
        for k in k_grid:
            cell = f"{kind}_k{k}"
            cell_dir = os.path.join(args.out, cell)
            os.makedirs(cell_dir, exist_ok=True)
            cell_cfg = RunConfig(**{**vars(cfg), "model": kind, "k": k})
            try:
                per_class = train_ds.by_class()
                models = [train_one_class(cell_cfg, label, seqs, cell_dir,
                                          fresh=args.fresh)[0]
                          for label, seqs in per_class.items()]
                models.sort(key=lambda m: str(m.label))
                accuracies = {}
                for name, variant in test_variants:
                    report = evaluate(models, variant, cfg.per_frame_score)
                    report.metadata.update({"cell": cell, "variant": name,
                                            "seed": cfg.seed})
                    _write_report(report, cell_dir, stem=f"report_{name}")
                    accuracies[name] = report.accuracy
                rows.append((kind, k, accuracies, None))
            except (DataError, TrainingError, FlowError,
                    NonFiniteGradientError, checkpoint.CheckpointError) as exc:
                logger.error("bench cell %s failed: %s", cell, exc)
                rows.append((kind, k, {}, str(exc)))

    variant_names = [name for name, _ in test_variants]
    lines = ["model    K  " + "  ".join(f"{n:>8}" for n in variant_names)]
    for kind, k, accs, err in rows:
        if err is not None:
            lines.append(f"{kind:<7} {k:>2}  FAILED: {err}")
        else:
            cells = "  ".join(f"{accs[n]:>8.4f}" for n in variant_names)
            lines.append(f"{kind:<7} {k:>2}  {cells}")
    table = "\n".join(lines)
    kv_lines = []
    for kind, k, accs, err in rows:
        for name in variant_names:
            if err is None:
                kv_lines.append(f"accuracy.{kind}.k{k}.{name} = {accs[name]:.17g}")
        if err is not None:
            kv_lines.append(f"error.{kind}.k{k} = {err}")
    checkpoint.atomic_write(os.path.join(args.out, "bench.txt"), table + "\n")
    checkpoint.atomic_write(os.path.join(args.out, "bench.kv"),
                             "\n".join(kv_lines) + "\n")
    print(table)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing

def _add_config_flags(p):
    p.add_argument("--config", help="key = value config file; flags override")
    p.add_argument("--model", choices=["genhmm", "gmmhmm"], default=None)
    p.add_argument("--k", type=int, default=None, help="mixture components per state")
    p.add_argument("--blocks", type=int, default=None, help="flow blocks per generator")
    p.add_argument("--hidden", type=int, default=None, help="coupling-net hidden width")
    p.add_argument("--frames-per-state", dest="frames_per_state", type=int,
                   default=None, help="divisor of the state-count heuristic")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--inner-batches", dest="inner_batches", type=int, default=None,
                   help="gradient batches per EM iteration")
    p.add_argument("--max-em", dest="max_em", type=int, default=None)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--noise", choices=["white", "pink"], default=None)
    p.add_argument("--snr-db", dest="snr_db", type=float, default=None)
    p.add_argument("--per-frame-score", dest="per_frame_score",
                   action="store_const", const=True, default=None,
                   help="normalize classification scores by sequence length")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="genhmm",
        description="Train and evaluate flow-mixture HMM sequence classifiers.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one model per class")
    _add_config_flags(p_train)
    p_train.add_argument("--data", required=True, help="training dataset file")
    p_train.add_argument("--out", required=True, help="checkpoint directory")
    p_train.add_argument("--fresh", action="store_true",
                         help="ignore existing training states")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="score a test set against checkpoints")
    _add_config_flags(p_eval)
    p_eval.add_argument("--models-dir", required=True)
    p_eval.add_argument("--data", required=True, help="test dataset file")
    p_eval.add_argument("--out", required=True, help="report directory")
    p_eval.set_defaults(func=cmd_eval)

    p_bench = sub.add_parser("bench", help="sweep K and SNR, compare model types")
    _add_config_flags(p_bench)
    p_bench.add_argument("--data", required=True, help="training dataset file")
    p_bench.add_argument("--test", required=True, help="test dataset file")
    p_bench.add_argument("--out", required=True)
    p_bench.add_argument("--k-grid", dest="k_grid", default="1,3,5")
    p_bench.add_argument("--snr-grid", dest="snr_grid", default="")
    p_bench.add_argument("--models", default="genhmm,gmmhmm")
    p_bench.add_argument("--fresh", action="store_true")
    p_bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, checkpoint.CheckpointError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, FlowError, NonFiniteGradientError,
            FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
