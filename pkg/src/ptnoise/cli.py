"""``ptnoise`` command line: gen, sweep, gradratio, confusion, upl, report, calibrate.

Exit status is 0 on success, 1 for a configuration error and 2 for a
runtime error. Every file written carries the effective configuration: JSON
files in a ``config`` field, CSV files in a leading ``# config=`` comment, and
dataset CSVs in a JSON sidecar.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

from . import __version__
from .calibration import calibrate_sigma
from .config import ExperimentConfig, load_config, parse_config
from .errors import ConfigError, PtnoiseError
from .instrumentation import (
    SCHEMA_VERSION,
    SweepResult,
    Workspace,
    load_report,
    render_csv,
    render_json,
    run_noise_sweep,
    summarize,
)
from .upl import UplConfig, run_upl_comparison
from .world import (
    NoiseSpec,
    generate_world,
    sample_dataset,
    with_seed,
    write_dataset_csv,
    write_sidecar,
)

COMMANDS = ("gen", "sweep", "gradratio", "confusion", "upl", "report", "calibrate")


class RunFailed(Exception):
    """Some cells failed; their reports were still written."""


def _dump(doc):
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _write_text(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _write_new(path, text):
    # world and dataset files are never overwritten
    with open(path, "x", newline="") as fh:
        fh.write(text)


def _csv_with_config(reports, config_doc):
    head = "# config=" + json.dumps(config_doc, sort_keys=True, separators=(",", ":")) + "\n"
    return head + render_csv(reports)


def _emit(out_dir, name, result: SweepResult, config_doc, command):
    result.config = {"command": command, **config_doc}
    _write_text(os.path.join(out_dir, name + ".json"), render_json(result))
    _write_text(os.path.join(out_dir, name + ".csv"), _csv_with_config(result.reports, result.config))
    failed = [r for r in result.reports if r.error]
    if failed:
        lines = [f"seed={r.world_seed} method={r.method['kind']} noise={r.noise['kind']}@{r.noise['rate']} "
                 f"loss={r.loss['kind']}: {r.error}" for r in failed]
        raise RunFailed(f"{len(failed)} cell(s) failed:\n" + "\n".join(lines))


def cmd_gen(cfg: ExperimentConfig, log):
    doc = cfg.to_dict()
    for seed in cfg.seeds:
        wcfg = with_seed(cfg.world, seed)
        world = generate_world(wcfg)
        _write_new(os.path.join(cfg.output_dir, f"world_seed{seed}.json"),
                   _dump({"config": doc, "seed": seed, "world": world.to_dict()}))
        for split in ("train", "test", "pool"):
            stem = os.path.join(cfg.output_dir, f"dataset_seed{seed}_{split}")
            if os.path.exists(stem + ".json"):
                raise FileExistsError(f"{stem}.json already exists")
            buf_path = stem + ".csv"
            if os.path.exists(buf_path):
                raise FileExistsError(f"{buf_path} already exists")
            write_dataset_csv(sample_dataset(world, split), buf_path)
            write_sidecar(stem + ".json", wcfg, seed=seed, split=split, config=doc)
        log(f"seed={seed}: world and datasets written")


def _sweep(cfg, log, noises, probe, workspace=None):
    return run_noise_sweep(cfg.seeds, cfg.methods, noises, cfg.losses, cfg.world, cfg.train,
                           probe=probe, probe_size=cfg.probe_size, log=log, workspace=workspace)


def cmd_sweep(cfg, log):
    _emit(cfg.output_dir, "sweep", _sweep(cfg, log, cfg.noise, False), cfg.to_dict(), "sweep")


def cmd_gradratio(cfg, log):
    _emit(cfg.output_dir, "gradratio", _sweep(cfg, log, cfg.noise, True), cfg.to_dict(), "gradratio")


def cmd_confusion(cfg, log):
    ws = Workspace(cfg.world, cfg.confusion_runs)
    matrices = {}
    for seed in cfg.seeds:
        matrices[str(seed)] = ws.confusion(seed).tolist()
    _write_text(os.path.join(cfg.output_dir, "confusion_matrix.json"),
                _dump({"config": {"command": "confusion", **cfg.to_dict()},
                       "schema_version": SCHEMA_VERSION, "matrices": matrices}))
    rates = sorted({n.rate for n in cfg.noise})
    noises = [NoiseSpec("confusion", r) for r in rates]
    _emit(cfg.output_dir, "confusion", _sweep(cfg, log, noises, False, ws), cfg.to_dict(), "confusion")


def cmd_upl(cfg, log):
    upl = cfg.upl or UplConfig()
    reports = run_upl_comparison(cfg.seeds, cfg.world, cfg.train, upl, log=log)
    doc = replace(cfg, upl=upl).to_dict()
    _emit(cfg.output_dir, "upl", SweepResult(reports, summarize(reports)), doc, "upl")


def cmd_calibrate(cfg, log):
    sigma, table = calibrate_sigma(cfg.world, seeds=cfg.seeds)
    for s, t, u in table:
        log(f"sigma={s:<5} template={t:.4f} truth={u:.4f}")
    _write_text(os.path.join(cfg.output_dir, "calibration.json"),
                _dump({"config": {"command": "calibrate", **cfg.to_dict()}, "sigma": sigma,
                       "table": [{"sigma": s, "template_accuracy": t, "truth_accuracy": u}
                                 for s, t, u in table]}))
    if sigma is None:
        raise RunFailed("no grid value satisfies the calibration targets")
    log(f"calibrated sigma: {sigma}")


def cmd_report(path, out_dir):
    result = load_report(path)
    stem = os.path.splitext(os.path.basename(path))[0]
    target = os.path.join(out_dir, stem + ".csv")
    _write_text(target, _csv_with_config(result.reports, result.config))
    return target


def build_parser():
    p = argparse.ArgumentParser(prog="ptnoise", description="Label-noise experiments on a synthetic prompt-tuning world.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, metavar="command")
    helps = {
        "gen": "write worlds and their train/test/pool datasets",
        "sweep": "accuracy sweep over seeds x methods x noise x losses",
        "gradratio": "sweep with the noisy/clean gradient-ratio probe",
        "confusion": "random-prompt confusion matrices, then a confusion-noise sweep",
        "upl": "zero-shot vs. UPL vs. robust UPL",
        "report": "re-render the CSV of a stored JSON report",
        "calibrate": "sweep the image noise level against the calibration targets",
    }
    for name in COMMANDS:
        sp = sub.add_parser(name, help=helps[name])
        sp.add_argument("--config", metavar="PATH", help="JSON experiment config (default: built-in defaults)")
        sp.add_argument("--out", metavar="DIR", help="output directory (overrides output_dir)")
        sp.add_argument("--seed", type=int, metavar="N", help="run this single seed instead of the config's list")
        sp.add_argument("--quiet", action="store_true", help="no progress output")
        if name == "report":
            sp.add_argument("report", metavar="JSON", help="a report written by sweep/gradratio/confusion/upl")
    return p


def _effective_config(args):
    cfg = load_config(args.config) if args.config else parse_config("{}")
    if args.out:
        cfg = replace(cfg, output_dir=args.out)
    if args.seed is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    log = (lambda msg: None) if args.quiet else (lambda msg: print(msg, file=sys.stderr, flush=True))
    try:
        cfg = _effective_config(args)
    except ConfigError as exc:
        print(f"ptnoise: config error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"ptnoise: cannot read config: {exc}", file=sys.stderr)
        return 1
    try:
        os.makedirs(cfg.output_dir, exist_ok=True)
        if args.command == "report":
            log(f"wrote {cmd_report(args.report, cfg.output_dir)}")
        else:
            globals()["cmd_" + args.command](cfg, log)
    except ConfigError as exc:
        print(f"ptnoise: config error: {exc}", file=sys.stderr)
        return 1
    except (RunFailed, PtnoiseError, OSError, ValueError, KeyError) as exc:
        print(f"ptnoise {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
