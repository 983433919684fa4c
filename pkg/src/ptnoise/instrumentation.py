"""Gradient-ratio probe, noise sweeps, and report files."""

from __future__ import annotations

import csv
import io
import json
import math
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import NoCleanSamples, NoNoisySamples, PtnoiseError
from .losses import LossSpec
from .methods import (
    MethodSpec,
    TrainConfig,
    build_method_state,
    evaluate_accuracy,
    loss_and_grads,
    train,
)
from .numeric import stream
from .numeric import rng as rngmod
from .world import (
    NoiseSpec,
    WorldConfig,
    generate_world,
    inject_confusion_noise,
    inject_random_noise,
    sample_dataset,
    with_seed,
    zero_shot_confusion,
)

SCHEMA_VERSION = 1
DEFAULT_RATES = (0.0, 0.125, 0.25, 0.5)
DEFAULT_SEEDS = (0, 1, 2, 3)
PROBE_SIZE = 64
CONFUSION_RUNS = 100
CSV_COLUMNS = (
    "world_seed",
    "method",
    "context_len",
    "noise_kind",
    "noise_rate",
    "loss_kind",
    "q",
    "accuracy",
    "mean_grad_ratio",
    "pseudo_precision",
    "wall_ms",
)


def _flat_norm(grads):
    if not grads:
        return 0.0
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def gradient_ratio_probe(state, spec, data, probe_size=PROBE_SIZE, loss=None, seed=0):
    """Norms of the mean-loss gradient over equal-size noisy and clean groups.

    Returns ``(noisy_norm, clean_norm, noisy_norm / clean_norm)``. The state
    is only read.
    """
    loss = loss or LossSpec()
    clean = np.flatnonzero(data.clean_flags)
    noisy = np.flatnonzero(~data.clean_flags)
    if len(noisy) == 0:
        raise NoNoisySamples("probe needs at least one mislabeled sample")
    if len(clean) == 0:
        raise NoCleanSamples("probe needs at least one clean sample")
    n = min(probe_size, len(clean), len(noisy))
    g = stream(seed, rngmod.PROBE)
    pick_c = np.sort(g.choice(clean, size=n, replace=False))
    pick_n = np.sort(g.choice(noisy, size=n, replace=False))
    _, gc = loss_and_grads(state, data.images[pick_c], data.observed_labels[pick_c], loss)
    _, gn = loss_and_grads(state, data.images[pick_n], data.observed_labels[pick_n], loss)
    noisy_norm, clean_norm = _flat_norm(gn), _flat_norm(gc)
    return noisy_norm, clean_norm, ratio_of(noisy_norm, clean_norm)


def ratio_of(noisy_norm, clean_norm):
    if clean_norm > 0:
        return noisy_norm / clean_norm
    return 0.0 if noisy_norm == 0 else math.inf


@dataclass
class RunReport:
    world_seed: int
    method: dict
    noise: dict
    loss: dict
    train: dict
    world: dict
    accuracy: float | None = None
    history: list = field(default_factory=list)
    grad_trace: list | None = None
    pseudo_precision: float | None = None
    wall_ms: int = 0
    error: str | None = None
    notes: list = field(default_factory=list)

    def mean_grad_ratio(self):
        if not self.grad_trace:
            return None
        vals = [t["ratio"] for t in self.grad_trace if t["ratio"] is not None]
        return float(np.mean(vals)) if vals else None

    def key(self):
        return (
            self.method["kind"],
            self.method.get("context_len"),
            self.noise["kind"],
            self.noise["rate"],
            self.loss["kind"],
            self.loss["q"],
        )

    def to_dict(self):
        return {
            "world_seed": self.world_seed,
            "method": self.method,
            "noise": self.noise,
            "loss": self.loss,
            "train": self.train,
            "world": self.world,
            "accuracy": self.accuracy,
            "history": self.history,
            "grad_trace": self.grad_trace,
            "pseudo_precision": self.pseudo_precision,
            "wall_ms": self.wall_ms,
            "error": self.error,
            "notes": self.notes,
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(**doc)


class Workspace:
    """Per-seed cache of worlds, splits and confusion matrices for a sweep."""

    def __init__(self, world_config: WorldConfig, confusion_runs=CONFUSION_RUNS):
        self.world_config = world_config
        self.confusion_runs = confusion_runs
        self._worlds = {}
        self._conf = {}

    def get(self, seed):
        if seed not in self._worlds:
            cfg = with_seed(self.world_config, seed)
            world = generate_world(cfg)
            self._worlds[seed] = (world, sample_dataset(world, "train"), sample_dataset(world, "test"))
        return self._worlds[seed]

    def confusion(self, seed):
        if seed not in self._conf:
            world, tr, _ = self.get(seed)
            self._conf[seed] = zero_shot_confusion(world, tr, self.confusion_runs, seed)
        return self._conf[seed]

    def noisy_train(self, seed, noise: NoiseSpec):
        _, tr, _ = self.get(seed)
        if noise.kind == "random":
            return inject_random_noise(tr, noise.rate, seed)
        conf = noise.confusion_matrix if noise.confusion_matrix is not None else self.confusion(seed)
        return inject_confusion_noise(tr, noise.rate, conf, seed)


def run_cell(ws: Workspace, seed, method: MethodSpec, noise: NoiseSpec, loss: LossSpec,
             train_config: TrainConfig, probe=False, probe_size=PROBE_SIZE):
    """Train and evaluate one (seed, method, noise, loss) combination."""
    t0 = time.perf_counter()
    cfg = TrainConfig(
        epochs=train_config.epochs,
        batch_size=train_config.batch_size,
        lr=train_config.lr,
        momentum=train_config.momentum,
        loss=loss,
        seed=seed,
    )
    report = RunReport(
        world_seed=int(seed),
        method=method.to_dict(),
        noise=noise.to_dict(),
        loss=loss.to_dict(),
        train=cfg.to_dict(),
        world=with_seed(ws.world_config, seed).to_dict(),
    )
    try:
        world, _, test = ws.get(seed)
        data = ws.noisy_train(seed, noise)
        state = build_method_state(method, world, seed)
        hook = None
        if probe and data.clean_flags.any() and (~data.clean_flags).any():
            trace = report.grad_trace = []

            def hook(st, epoch):
                gn, gc, r = gradient_ratio_probe(st, method, data, probe_size, loss, seed=_probe_seed(seed, epoch))
                trace.append({"epoch": epoch, "noisy_norm": gn, "clean_norm": gc,
                              "ratio": r if math.isfinite(r) else None})
        elif probe:
            report.notes.append("grad probe skipped: needs both clean and noisy samples")
        trained, history = train(state, method, data, cfg, probe=hook)
        report.history = history
        report.accuracy = evaluate_accuracy(trained, method, world, test)
    except (PtnoiseError, ValueError, ArithmeticError) as exc:
        report.error = f"{type(exc).__name__}: {exc}"
    report.wall_ms = int(round((time.perf_counter() - t0) * 1000))
    return report


def _probe_seed(seed, epoch):
    return int(stream(seed, rngmod.PROBE, epoch).integers(0, 2**31 - 1))


@dataclass
class SweepResult:
    reports: list
    summary: list
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "config": self.config,
            "reports": [r.to_dict() for r in self.reports],
            "summary": self.summary,
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema {doc.get('schema_version')!r}")
        return cls([RunReport.from_dict(r) for r in doc["reports"]], doc["summary"], doc.get("config", {}))

    def mean_accuracy(self, **match):
        rows = [s for s in self.summary if all(s.get(k) == v for k, v in match.items())]
        if len(rows) != 1:
            raise KeyError(f"{len(rows)} summary rows match {match}")
        return rows[0]["accuracy_mean"]


def summarize(reports):
    """Seed-averaged accuracy (mean, sample std) per non-seed coordinate."""
    groups = {}
    for r in reports:
        groups.setdefault(r.key(), []).append(r)
    out = []
    for key, rs in groups.items():
        accs = [r.accuracy for r in rs if r.accuracy is not None]
        ratios = [r.mean_grad_ratio() for r in rs if r.mean_grad_ratio() is not None]
        prec = [r.pseudo_precision for r in rs if r.pseudo_precision is not None]
        out.append({
            "method": key[0],
            "context_len": key[1],
            "noise_kind": key[2],
            "noise_rate": key[3],
            "loss_kind": key[4],
            "q": key[5],
            "n_runs": len(accs),
            "accuracy_mean": float(np.mean(accs)) if accs else None,
            "accuracy_std": statistics.stdev(accs) if len(accs) > 1 else 0.0,
            "grad_ratio_mean": float(np.mean(ratios)) if ratios else None,
            "pseudo_precision_mean": float(np.mean(prec)) if prec else None,
            "failures": len(rs) - len(accs),
        })
    return out


def run_noise_sweep(seeds, methods, noises, losses, world_config: WorldConfig | None = None,
                    train_config: TrainConfig | None = None, probe=False, probe_size=PROBE_SIZE,
                    log=None, workspace=None):
    """Every (seed, method, noise, loss) combination, trained and scored.

    A failing cell keeps its ``error`` field and the sweep moves on.
    """
    if not (seeds and methods and noises and losses):
        raise ValueError("every sweep axis needs at least one entry")
    world_config = world_config or WorldConfig()
    train_config = train_config or TrainConfig()
    ws = workspace or Workspace(world_config)
    reports = []
    for seed in seeds:
        for method in methods:
            for noise in noises:
                for loss in losses:
                    r = run_cell(ws, seed, method, noise, loss, train_config, probe, probe_size)
                    if log:
                        acc = "ERR" if r.accuracy is None else f"{r.accuracy:.4f}"
                        log(f"seed={seed} {method.label} {noise.kind}@{noise.rate} {loss.kind} acc={acc}")
                    reports.append(r)
    return SweepResult(reports, summarize(reports))


# -- files --------------------------------------------------------------------


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def report_rows(reports):
    for r in reports:
        yield [
            r.world_seed,
            r.method["kind"],
            r.method.get("context_len"),
            r.noise["kind"],
            r.noise["rate"],
            r.loss["kind"],
            r.loss["q"],
            r.accuracy,
            r.mean_grad_ratio(),
            r.pseudo_precision,
            r.wall_ms,
        ]


def render_csv(reports):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in report_rows(reports):
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def render_json(result: SweepResult):
    return json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n"


def emit_report(result, fmt, path):
    """Write ``result`` (a SweepResult or a list of RunReports) as json or csv."""
    if isinstance(result, SweepResult):
        reports = result.reports
    else:
        reports = list(result)
        result = SweepResult(reports, summarize(reports))
    if not reports:
        raise ValueError("no reports to emit")
    if fmt == "json":
        text = render_json(result)
    elif fmt == "csv":
        text = render_csv(reports)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc
    return path


def load_report(path):
    with open(path) as fh:
        return SweepResult.from_dict(json.load(fh))
