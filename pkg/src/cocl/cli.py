"""Command-line experiment runner.

Verbs::

    cocl run                   --config exp.ini [--seed S] [--out DIR]
    cocl ablate                --config exp.ini [--grid ird-buffer|lambda-sweep]
    cocl compare-preservation  --config exp.ini
    cocl eval-matrix           --config exp.ini --checkpoints DIR

Configs are INI files read with :mod:`configparser`. Sections use dotted
names; every key is optional and falls back to the defaults below::

    [run]            scenario, seed, run_id, out
    [data]           source = synthetic | idx | cifar10, plus per-source keys
    [model]          encoder_hidden, embed_dim, proj_hidden, proj_dim, input_shift, input_scale
    [train]          lr, batch_size, epochs_first, epochs_rest, warmup_epochs, momentum,
                     weight_decay, buffer_size (int or "inf"), use_buffer, preserve,
                     symmetric, steps_per_epoch, joint_baseline
    [train.loss]     tau, kappa, kappa_star, lam, gamma_t, gamma_s
    [train.augment]  crop_scale, flip_prob, jitter_prob, grayscale_prob, blur_prob
    [eval.probe]     epochs, lr, decay_epochs, decay_rate, momentum, batch_size, source, standardize
    [ablate]         grid, lambdas, seeds
    [compare]        modes, seeds

Exit codes: 0 success, 2 configuration or I/O problem, 3 numeric divergence.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import data as D
from . import engine as E
from . import eval as V
from . import losses as L
from . import model as M
from .augment import AugConfig
from .errors import CoclError, ConfigError, DivergenceError, FormatError

log = logging.getLogger("cocl")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3

METRICS_HEADER = ("run_id", "task", "epoch", "loss_asym", "loss_preserve", "loss_total", "lr", "wall_ms")
ABLATION_CELLS = (
    ("(a)", False, "none"),
    ("(b)", False, "ird"),
    ("(c)", True, "none"),
    ("(d)", True, "ird"),
)
GRIDS = ("ird-buffer", "lambda-sweep")


# ------------------------------------------------------------------ config


@dataclass
class DataSpec:
    source: str = "synthetic"
    num_classes: int = 6
    per_class: int = 150
    size: int = 16
    noise: float = 0.3
    shift: int = 2
    background: float = 0.0
    distractor: float = 0.8
    data_seed: int = 0
    test_fraction: float = 0.2
    classes_per_task: int = 2
    num_tasks: int = 20  # Domain-IL rotations
    resize: Optional[int] = None
    limit_per_class: Optional[int] = None
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    train_files: Tuple[str, ...] = ()
    test_files: Tuple[str, ...] = ()


@dataclass
class ExperimentConfig:
    scenario: D.Scenario = D.Scenario.CLASS_IL
    run_id: str = "run"
    out: str = "out"
    data: DataSpec = field(default_factory=DataSpec)
    model: Dict[str, object] = field(default_factory=dict)
    train: E.TrainConfig = field(default_factory=E.TrainConfig)
    probe: V.ProbeConfig = field(default_factory=V.ProbeConfig)
    joint_baseline: bool = False
    grid: str = "ird-buffer"
    lambdas: Tuple[float, ...] = (0.0, 0.1, 1.0)
    seeds: Tuple[int, ...] = (0, 1, 2)
    modes: Tuple[str, ...] = ("ird", "seed", "mse_emb", "mse_proj")

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, train=replace(self.train, seed=seed), probe=replace(self.probe, seed=seed))


def _ints(text: str) -> Tuple[int, ...]:
    return tuple(int(v) for v in text.replace(",", " ").split())


def _floats(text: str) -> Tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _words(text: str) -> Tuple[str, ...]:
    return tuple(v for v in text.replace(",", " ").split())


def _optional_int(text: str) -> Optional[int]:
    return None if text.strip().lower() in ("", "none", "inf", "infinite") else int(text)


class _Section:
    """Typed getters over one config section; records unknown keys."""

    def __init__(self, parser: configparser.ConfigParser, name: str):
        self.name = name
        self.items = dict(parser.items(name)) if parser.has_section(name) else {}
        self.used = set()

    def get(self, key, default, conv=None):
        if key not in self.items:
            return default
        self.used.add(key)
        raw = self.items[key]
        try:
            if conv is not None:
                return conv(raw)
            if isinstance(default, bool):
                return _boolean(raw)
            if isinstance(default, int):
                return int(raw)
            if isinstance(default, float):
                return float(raw)
            return raw
        except ValueError as exc:
            raise ConfigError(f"[{self.name}] {key} = {raw!r}: {exc}") from None

    def check_unused(self):
        extra = sorted(set(self.items) - self.used)
        if extra:
            raise ConfigError(f"[{self.name}] unknown keys: {', '.join(extra)}")


def _boolean(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


KNOWN_SECTIONS = ("run", "data", "model", "train", "train.loss", "train.augment", "eval.probe",
                  "ablate", "compare")


def load_config(path: str, seed: Optional[int] = None, out: Optional[str] = None) -> ExperimentConfig:
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    unknown = [s for s in parser.sections() if s not in KNOWN_SECTIONS]
    if unknown:
        raise ConfigError(f"{path}: unknown sections {unknown}")
    return config_from_parser(parser, seed=seed, out=out, base_dir=os.path.dirname(os.path.abspath(path)))


def config_from_parser(parser: configparser.ConfigParser, seed: Optional[int] = None,
                       out: Optional[str] = None, base_dir: str = ".") -> ExperimentConfig:
    sections = {name: _Section(parser, name) for name in KNOWN_SECTIONS}
    run, data, mdl, tr = sections["run"], sections["data"], sections["model"], sections["train"]
    lo, au, pr = sections["train.loss"], sections["train.augment"], sections["eval.probe"]
    ab, cmp_ = sections["ablate"], sections["compare"]

    try:
        scenario = D.Scenario(run.get("scenario", "class_il"))
    except ValueError:
        raise ConfigError(f"[run] scenario must be one of {[s.value for s in D.Scenario]}") from None

    def path(key):
        raw = data.get(key, "")
        return os.path.join(base_dir, raw) if raw and not os.path.isabs(raw) else raw

    def paths(key):
        return tuple(os.path.join(base_dir, p) if not os.path.isabs(p) else p
                     for p in data.get(key, (), _words))

    dd = DataSpec()
    spec = DataSpec(
        source=data.get("source", dd.source),
        num_classes=data.get("num_classes", dd.num_classes),
        per_class=data.get("per_class", dd.per_class),
        size=data.get("size", dd.size),
        noise=data.get("noise", dd.noise),
        shift=data.get("shift", dd.shift),
        background=data.get("background", dd.background),
        distractor=data.get("distractor", dd.distractor),
        data_seed=data.get("seed", dd.data_seed),
        test_fraction=data.get("test_fraction", dd.test_fraction),
        classes_per_task=data.get("classes_per_task", dd.classes_per_task),
        num_tasks=data.get("num_tasks", dd.num_tasks),
        resize=data.get("resize", None, _optional_int),
        limit_per_class=data.get("limit_per_class", None, _optional_int),
        train_images=path("train_images"), train_labels=path("train_labels"),
        test_images=path("test_images"), test_labels=path("test_labels"),
        train_files=paths("train_files"), test_files=paths("test_files"),
    )
    if spec.source not in ("synthetic", "idx", "cifar10"):
        raise ConfigError(f"[data] source must be synthetic, idx or cifar10, got {spec.source!r}")

    model = {}
    for key, conv in (("encoder_hidden", _ints), ("embed_dim", int), ("proj_hidden", int),
                      ("proj_dim", int), ("input_shift", float), ("input_scale", float)):
        value = mdl.get(key, None, conv)
        if value is not None:
            model[key] = value

    dl = L.LossConfig()
    loss = L.LossConfig(tau=lo.get("tau", dl.tau), kappa=lo.get("kappa", dl.kappa),
                        kappa_star=lo.get("kappa_star", dl.kappa_star), lam=lo.get("lam", dl.lam),
                        gamma_t=lo.get("gamma_t", dl.gamma_t), gamma_s=lo.get("gamma_s", dl.gamma_s))
    da = AugConfig()
    aug = AugConfig(crop_scale_range=au.get("crop_scale", da.crop_scale_range, lambda s: _floats(s)[:2]),
                    flip_prob=au.get("flip_prob", da.flip_prob),
                    jitter_prob=au.get("jitter_prob", da.jitter_prob),
                    grayscale_prob=au.get("grayscale_prob", da.grayscale_prob),
                    blur_prob=au.get("blur_prob", da.blur_prob))
    dt = E.TrainConfig()
    train = E.TrainConfig(
        lr=tr.get("lr", dt.lr), batch_size=tr.get("batch_size", dt.batch_size),
        epochs_first=tr.get("epochs_first", dt.epochs_first), epochs_rest=tr.get("epochs_rest", dt.epochs_rest),
        warmup_epochs=tr.get("warmup_epochs", dt.warmup_epochs), momentum=tr.get("momentum", dt.momentum),
        weight_decay=tr.get("weight_decay", dt.weight_decay), loss=loss,
        preserve=tr.get("preserve", dt.preserve), symmetric=tr.get("symmetric", dt.symmetric),
        buffer_size=tr.get("buffer_size", dt.buffer_size, _optional_int),
        use_buffer=tr.get("use_buffer", dt.use_buffer),
        steps_per_epoch=tr.get("steps_per_epoch", None, _optional_int),
        aug=aug, seed=run.get("seed", dt.seed), workers=E.default_workers(),
    )
    dp = V.ProbeConfig()
    probe = V.ProbeConfig(
        epochs=pr.get("epochs", dp.epochs), lr=pr.get("lr", dp.lr),
        decay_epochs=pr.get("decay_epochs", dp.decay_epochs, _ints), decay_rate=pr.get("decay_rate", dp.decay_rate),
        momentum=pr.get("momentum", dp.momentum), batch_size=pr.get("batch_size", dp.batch_size),
        source=pr.get("source", dp.source), standardize=pr.get("standardize", dp.standardize),
        seed=train.seed,
    )
    defaults = ExperimentConfig()
    cfg = ExperimentConfig(
        scenario=scenario, run_id=run.get("run_id", defaults.run_id), out=run.get("out", defaults.out),
        data=spec, model=model, train=train, probe=probe,
        joint_baseline=tr.get("joint_baseline", False),
        grid=ab.get("grid", defaults.grid), lambdas=ab.get("lambdas", defaults.lambdas, _floats),
        seeds=ab.get("seeds", None, _ints) or cmp_.get("seeds", defaults.seeds, _ints),
        modes=cmp_.get("modes", defaults.modes, _words),
    )
    for s in sections.values():
        s.check_unused()
    bad_modes = [m for m in cfg.modes if m not in L.PRESERVATION_MODES]
    if bad_modes:
        raise ConfigError(f"[compare] unknown preservation modes {bad_modes}")
    if seed is not None:
        cfg = cfg.with_seed(seed)
    if out is not None:
        cfg = replace(cfg, out=out)
    return cfg


def config_echo(cfg: ExperimentConfig) -> Dict:
    def clean(v):
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        if isinstance(v, D.Scenario):
            return v.value
        return v

    echo = {"scenario": cfg.scenario.value, "run_id": cfg.run_id, "data": asdict(cfg.data),
            "model": dict(cfg.model), "train": asdict(cfg.train), "probe": asdict(cfg.probe)}
    echo["train"].pop("workers", None)
    return clean(echo)


# ------------------------------------------------------------------- data


def _require(path: str, what: str) -> str:
    if not path:
        raise ConfigError(f"[data] {what} is required for this source")
    if not os.path.isfile(path):
        raise ConfigError(f"{what} not found: {path}")
    return path


def _limit(d: D.Dataset, per_class: Optional[int], seed: int) -> D.Dataset:
    if per_class is None:
        return d
    rng = np.random.default_rng(seed)
    keep = np.concatenate([np.sort(rng.permutation(np.flatnonzero(d.y == c))[:per_class]) for c in d.classes])
    return d.subset(np.sort(keep))


def load_datasets(spec: DataSpec) -> Tuple[D.Dataset, D.Dataset]:
    if spec.source == "synthetic":
        full = D.synth_patterns(spec.num_classes, spec.per_class, spec.size, spec.noise, spec.data_seed,
                                shift=spec.shift, background=spec.background,
                                distractor=spec.distractor)
        train, test = D.split_holdout(full, spec.test_fraction, spec.data_seed)
    elif spec.source == "idx":
        train = D.load_idx(_require(spec.train_images, "train_images"),
                           _require(spec.train_labels, "train_labels"), "train")
        test = D.load_idx(_require(spec.test_images, "test_images"),
                          _require(spec.test_labels, "test_labels"), "test")
    else:
        if not spec.train_files or not spec.test_files:
            raise ConfigError("[data] train_files and test_files are required for cifar10")
        train = D.load_cifar10_bin([_require(p, "train file") for p in spec.train_files], "train")
        test = D.load_cifar10_bin([_require(p, "test file") for p in spec.test_files], "test")
    train = _limit(train, spec.limit_per_class, spec.data_seed)
    test = _limit(test, None if spec.limit_per_class is None else max(1, spec.limit_per_class // 4),
                  spec.data_seed + 1)
    if spec.resize:
        train = D.resize_dataset(train, (spec.resize, spec.resize))
        test = D.resize_dataset(test, (spec.resize, spec.resize))
    return train, test


def build_sequence(cfg: ExperimentConfig) -> D.TaskSequence:
    train, test = load_datasets(cfg.data)
    if cfg.scenario is D.Scenario.DOMAIN_IL:
        return D.make_rotated_domains(train, cfg.data.num_tasks, cfg.data.data_seed, test)
    return D.make_class_sequence(train, D.SplitPlan(cfg.data.classes_per_task), test, cfg.scenario)


def model_config(cfg: ExperimentConfig, seq: D.TaskSequence) -> M.ModelConfig:
    return M.ModelConfig(input_dim=int(np.prod(seq.tasks[0].train.image_shape)), **cfg.model)


# ----------------------------------------------------------------- output


def atomic_write_text(path: str, text: str) -> None:
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", encoding="utf-8", newline="") as f:
        f.write(text)
    os.replace(tmp, path)


def metrics_csv(run_id: str, records: Sequence[E.EpochRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for r in records:
        w.writerow([run_id, r.task, r.epoch, repr(r.loss_asym), repr(r.loss_preserve), repr(r.loss_total),
                    repr(r.lr), f"{r.wall_ms:.3f}"])
    return buf.getvalue()


def _table(rows: List[Dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([row[c] for c in columns])
    return buf.getvalue()


# -------------------------------------------------------------- pipelines


@dataclass
class RunOutcome:
    summary: Dict
    matrix: np.ndarray
    result: E.RunResult


def execute(cfg: ExperimentConfig, seq: Optional[D.TaskSequence] = None,
            out_dir: Optional[str] = None) -> RunOutcome:
    """Train the sequence, fit the probes, and (if ``out_dir``) write every artefact."""
    seq = seq if seq is not None else build_sequence(cfg)
    mc = model_config(cfg, seq)
    ckpt_dir = None
    if out_dir:
        ckpt_dir = os.path.join(out_dir, "checkpoints")
        os.makedirs(ckpt_dir, exist_ok=True)

    def save(t, snap):
        if ckpt_dir:
            M.save_checkpoint(snap, os.path.join(ckpt_dir, f"task{t:02d}.ckpt"))

    result = E.run_sequence(seq, cfg.train, mc, on_task_end=save)
    matrix = V.accuracy_matrix(result.snapshots, seq, cfg.probe, result.buffers,
                               source="all" if cfg.probe.source == "all" else "seen")
    final = V.final_accuracy(result.snapshots[-1], seq, cfg.probe, result.buffers[-1])
    summary = {
        "run_id": cfg.run_id,
        "final_average_accuracy": final["average"],
        "per_task_accuracy": final["per_task"],
        "accuracy_matrix": matrix.tolist(),
        "off_diagonal_mean": V.off_diagonal_mean(matrix),
        "forgetting": V.forgetting(matrix),
        "buffer_occupancy": [{str(c): n for c, n in sorted(h.items())} for h in result.buffer_history],
        "config": config_echo(cfg),
    }
    if cfg.joint_baseline:
        joint = E.train_joint_baseline(seq, cfg.train, mc)
        jm = V.accuracy_matrix(joint.snapshots, seq, replace(cfg.probe, source="all"), source="all")
        summary["joint_baseline"] = {"accuracy_matrix": jm.tolist(), "off_diagonal_mean": V.off_diagonal_mean(jm)}
    if out_dir:
        atomic_write_text(os.path.join(out_dir, "metrics.csv"), metrics_csv(cfg.run_id, result.metrics))
        atomic_write_text(os.path.join(out_dir, "accuracy_matrix.csv"), V.matrix_to_csv(matrix))
        atomic_write_text(os.path.join(out_dir, "summary.json"), json.dumps(summary, indent=2, sort_keys=True))
    return RunOutcome(summary, matrix, result)


def ablation_cells(cfg: ExperimentConfig, grid: str) -> List[Tuple[str, E.TrainConfig]]:
    """Labelled training configs for one grid."""
    if grid == "ird-buffer":
        cells = []
        for label, buffered, preserve in ABLATION_CELLS:
            # without a buffer in training, asym and sym SupCon coincide; (b) is written as sym
            cells.append((label, replace(cfg.train, use_buffer=buffered, preserve=preserve,
                                         symmetric=cfg.train.symmetric if buffered else True)))
        return cells
    if grid == "lambda-sweep":
        if not cfg.lambdas:
            raise ConfigError("[ablate] lambdas is empty")
        cells = []
        for lam in cfg.lambdas:
            for sym in (True, False):
                label = f"lam={lam:g} {'sym' if sym else 'asym'}"
                cells.append((label, replace(cfg.train, preserve="ird", symmetric=sym, buffer_size=None,
                                             loss=replace(cfg.train.loss, lam=lam))))
        return cells
    raise ConfigError(f"unknown grid {grid!r}; choose from {GRIDS}")


def _mean_std(values: Sequence[float]) -> Tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std(ddof=1)) if len(arr) > 1 else 0.0


def run_cells(cfg: ExperimentConfig, cells: List[Tuple[str, E.TrainConfig]], out_dir: str,
              key: str) -> List[Dict]:
    if not cells:
        raise ConfigError("empty grid: nothing to run")
    if not cfg.seeds:
        raise ConfigError("no seeds given")
    seq = build_sequence(cfg)
    rows = []
    for label, train in cells:
        accs = []
        for seed in cfg.seeds:
            cell_cfg = replace(cfg, train=replace(train, seed=seed), probe=replace(cfg.probe, seed=seed),
                               run_id=f"{label}|seed={seed}", joint_baseline=False)
            accs.append(execute(cell_cfg, seq).summary["final_average_accuracy"])
            log.info("%s seed %d: %.4f", label, seed, accs[-1])
        mean, std = _mean_std(accs)
        rows.append({key: label, "mean": mean, "std": std, "n": len(accs),
                     "per_seed": " ".join(f"{a:.4f}" for a in accs)})
    os.makedirs(out_dir, exist_ok=True)
    return rows


def _print_rows(rows: List[Dict], key: str) -> None:
    width = max(len(r[key]) for r in rows)
    for r in rows:
        print(f"{r[key]:<{width}}  {100 * r['mean']:6.2f} ± {100 * r['std']:5.2f}  (n={r['n']})")


# ----------------------------------------------------------------- verbs


def cmd_run(cfg: ExperimentConfig, args) -> int:
    os.makedirs(cfg.out, exist_ok=True)
    outcome = execute(cfg, out_dir=cfg.out)
    print(f"final average accuracy {outcome.summary['final_average_accuracy']:.4f}")
    print(V.matrix_to_csv(outcome.matrix), end="")
    return EXIT_OK


def cmd_ablate(cfg: ExperimentConfig, args) -> int:
    grid = args.grid or cfg.grid
    rows = run_cells(cfg, ablation_cells(cfg, grid), cfg.out, "cell")
    atomic_write_text(os.path.join(cfg.out, f"ablation_{grid}.csv"),
                      _table(rows, ("cell", "mean", "std", "n", "per_seed")))
    _print_rows(rows, "cell")
    return EXIT_OK


def cmd_compare(cfg: ExperimentConfig, args) -> int:
    if not cfg.modes:
        raise ConfigError("[compare] modes is empty")
    cells = [(mode, replace(cfg.train, preserve=mode)) for mode in cfg.modes]
    rows = run_cells(cfg, cells, cfg.out, "mode")
    atomic_write_text(os.path.join(cfg.out, "preservation.csv"),
                      _table(rows, ("mode", "mean", "std", "n", "per_seed")))
    _print_rows(rows, "mode")
    return EXIT_OK


def cmd_eval_matrix(cfg: ExperimentConfig, args) -> int:
    ckpt_dir = args.checkpoints or os.path.join(cfg.out, "checkpoints")
    if not os.path.isdir(ckpt_dir):
        raise ConfigError(f"checkpoint directory not found: {ckpt_dir}")
    seq = build_sequence(cfg)
    snaps = []
    for t in range(1, seq.T + 1):
        path = os.path.join(ckpt_dir, f"task{t:02d}.ckpt")
        if not os.path.isfile(path):
            raise ConfigError(f"checkpoint not found: {path}")
        snaps.append(M.snapshot(M.load_checkpoint(path)))
    source = args.source or ("all" if cfg.probe.source == "all" else "seen")
    mat = V.accuracy_matrix(snaps, seq, cfg.probe, source=source)
    os.makedirs(cfg.out, exist_ok=True)
    atomic_write_text(os.path.join(cfg.out, f"accuracy_matrix_{source}.csv"), V.matrix_to_csv(mat))
    print(V.matrix_to_csv(mat), end="")
    print(f"off-diagonal mean {V.off_diagonal_mean(mat):.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cocl", description="Contrastive continual learning experiments")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="INI experiment config")
        p.add_argument("--seed", type=int, default=None, help="override [run] seed")
        p.add_argument("--out", default=None, help="output directory (overrides [run] out)")

    p = sub.add_parser("run", help="train one sequence and evaluate it")
    common(p)
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("ablate", help="run an ablation grid over shared seeds")
    common(p)
    p.add_argument("--grid", choices=GRIDS, default=None)
    p.set_defaults(func=cmd_ablate)
    p = sub.add_parser("compare-preservation", help="compare IRD with SEED and MSE alternatives")
    common(p)
    p.set_defaults(func=cmd_compare)
    p = sub.add_parser("eval-matrix", help="accuracy matrix from saved per-task checkpoints")
    common(p)
    p.add_argument("--checkpoints", default=None, help="directory holding taskNN.ckpt files")
    p.add_argument("--source", choices=("seen", "all"), default=None)
    p.set_defaults(func=cmd_eval_matrix)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out)
        return args.func(cfg, args)
    except DivergenceError as exc:
        print(f"error: training diverged at task {exc.task}, epoch {exc.epoch}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc.strerror or exc}: {exc.filename}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
