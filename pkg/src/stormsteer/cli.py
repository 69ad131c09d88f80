"""Command-line entry point: ``stormsteer <command> ...``.

Configuration precedence is flag > JSON config file > built-in default.
Every artifact-producing command writes ``<primary output>.manifest.json``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .attack import AttackConfig, AttackError, run_attack, write_trace
from .detector import DetectorConfig, detect_fields
from .fields import (
    GRAVITY, FieldFormatError, compute_stats, derive_inputs, read_field, read_mask, standardize, write_field,
    write_mask,
)
from .labels import DilationParams, dilate
from .metrics import closeness, trajectory_scores
from .render import render_svg, role_of
from .stealth import KINDS, block_features, evaluate, fit
from .surrogate import TrainConfig, TrainingDiverged, load_model, model_inputs, save_model, train
from .synth import ScenarioSpec, synth_scenario
from .targetgen import TargetGenParams, make_target
from .tracks import read_tracks, write_tracks

log = logging.getLogger("stormsteer")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

EPILOG = """exit codes:
  0  success
  2  usage error (bad flags, invalid configuration values)
  3  I/O error (missing or malformed input files, unwritable outputs)
  4  numeric failure (training or attack diverged, non-finite values)

configuration precedence: command-line flag > --config JSON > default
"""


class UsageError(Exception):
    pass


# helpers

def _load_json(path):
    if path is None:
        return {}
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise UsageError(f"{path}: configuration must be a JSON object")
    return doc


def _merge(defaults: dict, config: dict, flags: dict) -> dict:
    """flag > config > default; flags left at None do not override."""
    out = dict(defaults)
    out.update(config)
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def _write_manifest(out_path, command: str, config: dict, inputs, outputs, seed, t0: float) -> None:
    doc = {
        "command": command,
        "config": config,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "seed": seed,
        "version": __version__,
        "wall_time_s": round(time.time() - t0, 3),
    }
    with open(f"{out_path}.manifest.json", "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True, default=str)


def _map_jobs(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


# synth

def _synth_one(job):
    spec_doc, out, tracks_out = job
    spec = ScenarioSpec.from_dict(spec_doc)
    f, truth = synth_scenario(spec)
    write_field(f, out)
    if tracks_out:
        write_tracks(truth, tracks_out, role="original")
    return str(out)


def cmd_synth(a):
    t0 = time.time()
    specs = [(Path(p), _load_json(p)) for p in a.spec]
    if len(specs) == 1:
        jobs = [(specs[0][1], a.out, a.tracks)]
    else:
        outdir = Path(a.out)
        outdir.mkdir(parents=True, exist_ok=True)
        jobs = [(d, outdir / f"{p.stem}.wfld", outdir / f"{p.stem}.tracks.geojson") for p, d in specs]
    outs = _map_jobs(_synth_one, jobs, a.jobs)
    seeds = [d.get("seed", 0) for _, d in specs]
    _write_manifest(a.out, "synth", {"specs": [d for _, d in specs]}, a.spec,
                    outs + ([a.tracks] if a.tracks and len(specs) == 1 else []), seeds[0] if len(seeds) == 1 else seeds,
                    t0)


# detect

def cmd_detect(a):
    t0 = time.time()
    cfg = DetectorConfig.from_dict(_load_json(a.config))
    f = read_field(a.inp)
    mask, tracks = detect_fields(f, cfg, gravity=a.gravity)
    write_mask(mask, f.geometry, a.out_mask)
    write_tracks(tracks, a.out_tracks, role="original")
    log.info("%d track(s) detected", len(tracks))
    _write_manifest(a.out_tracks, "detect", {"detector": cfg.to_dict(), "gravity": a.gravity}, [a.inp],
                    [a.out_mask, a.out_tracks], None, t0)


# dilate

def cmd_dilate(a):
    t0 = time.time()
    p = DilationParams(a.sigma, a.radius)
    mask, g = read_mask(a.inp)
    soft = dilate(mask, p, wrap_lon=g.is_global)
    write_mask(soft, g, a.out, name="tc_label")
    _write_manifest(a.out, "dilate", dataclasses.asdict(p), [a.inp], [a.out], None, t0)


# train-surrogate

def _training_files(data_dir: Path):
    files = sorted(p for p in data_dir.glob("*.wfld") if not p.name.endswith(".mask.wfld"))
    if not files:
        raise FileNotFoundError(f"no .wfld scenario files in {data_dir}")
    return files


def cmd_train(a):
    t0 = time.time()
    conf = _load_json(a.config)
    dil = conf.pop("dilation", {"sigma": 1.0, "radius": 2})
    if a.no_dilation:
        dil = None
    elif a.dilate_radius is not None or a.dilate_sigma is not None:
        dil = _merge({"sigma": 1.0, "radius": 2}, dil or {}, {"sigma": a.dilate_sigma, "radius": a.dilate_radius})
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(conf) - known
    if unknown:
        raise UsageError(f"unknown training option(s): {sorted(unknown)}")
    conf = _merge({}, conf, {"epochs": a.epochs, "seed": a.seed, "lr": a.lr})
    if "dilations" in conf:
        conf["dilations"] = tuple(conf["dilations"])
    cfg = TrainConfig(**conf)
    det_cfg = DetectorConfig.from_dict(_load_json(a.detector_config))
    dparams = DilationParams(**dil) if dil else None

    files = _training_files(Path(a.data))
    scen = []
    for p in files:
        f = read_field(p)
        mpath = p.with_name(p.stem + ".mask.wfld")
        mask = read_mask(mpath)[0] if mpath.exists() else detect_fields(f, det_cfg, gravity=a.gravity)[0]
        scen.append((f, mask))
    field_stats = compute_stats([f for f, _ in scen])
    input_stats = compute_stats([derive_inputs(f, a.gravity).as_fields() for f, _ in scen])
    xs, ys = [], []
    for f, mask in scen:
        xs.append(model_inputs(derive_inputs(f, a.gravity), input_stats))
        ys.append(mask if dparams is None else dilate(mask, dparams, wrap_lon=f.geometry.is_global))
    model = train(np.concatenate(xs), np.concatenate(ys), cfg, input_stats=input_stats, field_stats=field_stats)
    model.meta["dilation"] = dataclasses.asdict(dparams) if dparams else None
    save_model(model, a.out)
    outputs = [a.out]
    if a.report:
        with open(a.report, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss"])
            for h in model.meta["history"]:
                w.writerow([h["epoch"], repr(float(h["train_loss"])), repr(float(h["val_loss"]))])
        outputs.append(a.report)
    config = {"train": dataclasses.asdict(cfg), "dilation": model.meta["dilation"], "gravity": a.gravity}
    _write_manifest(a.out, "train-surrogate", config, [str(p) for p in files], outputs, cfg.seed, t0)


# gen-target

def cmd_gen_target(a):
    t0 = time.time()
    p = TargetGenParams(**_merge({}, _load_json(a.config),
                                 {"gamma1": a.gamma1, "gamma2": a.gamma2, "seed": a.seed, "sample": a.sample or None}))
    tracks = read_tracks(a.tracks)
    mask, g = read_mask(a.orig_mask)
    if not tracks:
        raise UsageError(f"{a.tracks}: no tracks to steer")
    zstar, adv = make_target(mask, tracks, g, a.which, p)
    write_tracks([adv], a.out, role="adversarial")
    write_mask(zstar, g, a.out_mask)
    _write_manifest(a.out, "gen-target", {**dataclasses.asdict(p), "which": a.which}, [a.tracks, a.orig_mask],
                    [a.out, a.out_mask], p.seed, t0)


# attack

def _attack_one(job):
    inp, target, orig, model_path, cfg_doc, gravity, out, trace_out = job
    cfg = AttackConfig.from_dict(cfg_doc)
    f = read_field(inp)
    z_t = read_mask(target)[0]
    z_o = read_mask(orig)[0]
    model = load_model(model_path)
    adv, trace = run_attack(f, z_o, z_t, model, cfg, gravity)
    write_field(adv, out)
    if trace_out:
        write_trace(trace, trace_out)
    return str(out)


def cmd_attack(a):
    t0 = time.time()
    conf = _load_json(a.config)
    flags = {"method": a.method, "eta": a.eta, "delta": a.delta, "iters": a.iters, "lambda_reg": a.lambda_reg,
             "seed": a.seed}
    doc = _merge({}, conf, flags)
    if a.dilation_sigma is not None or a.dilation_radius is not None:
        doc["dilation"] = _merge({"sigma": 1.0, "radius": 1}, doc.get("dilation", {}),
                                 {"sigma": a.dilation_sigma, "radius": a.dilation_radius})
    cfg = AttackConfig.from_dict(doc)
    n = len(a.inp)
    if not (len(a.target) == len(a.orig_mask) == n):
        raise UsageError("--in, --target and --orig-mask need the same number of files")
    if n == 1:
        jobs = [(a.inp[0], a.target[0], a.orig_mask[0], a.model, cfg.to_dict(), a.gravity, a.out, a.trace)]
    else:
        outdir = Path(a.out)
        outdir.mkdir(parents=True, exist_ok=True)
        jobs = [(i, t, o, a.model, cfg.to_dict(), a.gravity, outdir / f"{Path(i).stem}.adv.wfld",
                 outdir / f"{Path(i).stem}.trace.csv" if a.trace else None)
                for i, t, o in zip(a.inp, a.target, a.orig_mask)]
    outs = _map_jobs(_attack_one, jobs, a.jobs)
    outputs = outs + ([a.trace] if a.trace and n == 1 else [])
    _write_manifest(a.out, "attack", {**cfg.to_dict(), "gravity": a.gravity},
                    list(a.inp) + list(a.target) + list(a.orig_mask) + [a.model], outputs, cfg.seed, t0)


# eval

def cmd_eval(a):
    t0 = time.time()
    pred = read_tracks(a.pred_tracks)
    targets = read_tracks(a.target_tracks)
    sc = trajectory_scores(pred, targets, a.radius, a.detect_frac)
    report = {k: _jsonable(v) for k, v in sc.to_dict().items()}
    inputs = [a.pred_tracks, a.target_tracks]
    if a.orig and a.adv:
        orig, adv = read_field(a.orig), read_field(a.adv)
        if a.model:
            stats, source = load_model(a.model).field_stats, "model"
        else:
            stats, source = compute_stats(orig), "original forecast"
        report["delta_C"] = closeness(standardize(orig, stats), standardize(adv, stats))
        report["delta_C_stats"] = source
        inputs += [a.orig, a.adv]
    with open(a.out, "w") as fh:
        json.dump(report, fh, indent=1)
    _write_manifest(a.out, "eval", {"radius_deg": a.radius, "detect_frac": a.detect_frac}, inputs, [a.out], None, t0)


# stealth

def _read_dir(dir_path):
    files = sorted(p for p in Path(dir_path).glob("*.wfld") if not p.name.endswith(".mask.wfld"))
    if not files:
        raise FileNotFoundError(f"no .wfld files in {dir_path}")
    return [read_field(p) for p in files], files


def cmd_stealth(a):
    t0 = time.time()
    fit_fields, fit_files = _read_dir(a.fit or a.clean)
    clean_fields, clean_files = _read_dir(a.clean)
    adv_fields, adv_files = _read_dir(a.adv)
    stats = compute_stats(fit_fields)
    Xfit = np.array([block_features(f, stats) for f in fit_fields])
    Xc = np.array([block_features(f, stats) for f in clean_fields])
    Xa = np.array([block_features(f, stats) for f in adv_fields])
    kinds = KINDS if a.kind == "all" else (a.kind,)
    attacker = a.attacker or Path(a.adv).name
    rows = []
    for kind in kinds:
        model = fit(kind, Xfit, contamination=a.contamination, seed=a.seed)
        r = evaluate(model, Xc, Xa)
        rows.append([kind, attacker, repr(r.precision), repr(r.recall), repr(r.f1), r.tp, r.fp, r.fn, r.tn,
                     int(r.precision_undefined)])
    with open(a.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["detector", "attacker", "precision", "recall", "F1", "tp", "fp", "fn", "tn", "precision_undefined"])
        w.writerows(rows)
    _write_manifest(a.out, "stealth", {"kinds": list(kinds), "contamination": a.contamination},
                    [str(p) for p in fit_files + clean_files + adv_files], [a.out], a.seed, t0)


# render

def cmd_render(a):
    t0 = time.time()
    sets = []
    for k, path in enumerate(a.tracks):
        tracks = read_tracks(path)
        sets.append((role_of(tracks, "original" if k == 0 else "adversarial"), tracks))
    svg = render_svg(sets, width=a.width)
    with open(a.out, "w") as fh:
        fh.write(svg)
    _write_manifest(a.out, "render", {"width": a.width}, a.tracks, [a.out], None, t0)


# parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stormsteer", description="Adversarial steering of cyclone trajectories "
                                 "through a differentiable surrogate of a rule-based detector.",
                                 epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, help):
        p = sub.add_parser(name, help=help, epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
        p.set_defaults(func=fn)
        return p

    p = add("synth", cmd_synth, "generate synthetic scenarios from JSON specs")
    p.add_argument("--spec", nargs="+", required=True, help="scenario spec JSON (several: --out is a directory)")
    p.add_argument("--out", required=True)
    p.add_argument("--tracks", help="ground-truth tracks GeoJSON (single spec only)")
    p.add_argument("--jobs", type=int, default=1)

    p = add("detect", cmd_detect, "run the rule-based cyclone detector")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--config")
    p.add_argument("--out-mask", required=True)
    p.add_argument("--out-tracks", required=True)
    p.add_argument("--gravity", type=float, default=GRAVITY)

    p = add("dilate", cmd_dilate, "kernel-dilate a binary mask into soft labels")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--radius", type=int, default=2)
    p.add_argument("--out", required=True)

    p = add("train-surrogate", cmd_train, "train the surrogate detector")
    p.add_argument("--data", required=True, help="directory of .wfld scenarios (optional <stem>.mask.wfld labels)")
    p.add_argument("--config", help="TrainConfig fields plus optional 'dilation': {sigma, radius} or null")
    p.add_argument("--detector-config")
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--dilate-sigma", type=float)
    p.add_argument("--dilate-radius", type=int)
    p.add_argument("--no-dilation", action="store_true", help="train on the raw binary masks")
    p.add_argument("--gravity", type=float, default=GRAVITY)

    p = add("gen-target", cmd_gen_target, "synthesize an adversarial target track and mask")
    p.add_argument("--tracks", required=True)
    p.add_argument("--orig-mask", required=True, help="detector mask the target is built from")
    p.add_argument("--which", type=int, default=0, help="index of the track to steer")
    p.add_argument("--config")
    p.add_argument("--gamma1", type=float)
    p.add_argument("--gamma2", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--sample", action="store_true", help="sample directions instead of argmax")
    p.add_argument("--out", required=True)
    p.add_argument("--out-mask", required=True)

    p = add("attack", cmd_attack, "perturb upstream fields toward a target mask")
    p.add_argument("--in", dest="inp", nargs="+", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--target", nargs="+", required=True)
    p.add_argument("--orig-mask", nargs="+", required=True)
    p.add_argument("--config")
    p.add_argument("--method", choices=["cyc", "cyc-no-dilation", "cyc-no-weighting", "ala", "taaowpf", "aowf"])
    p.add_argument("--eta", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--lambda", dest="lambda_reg", type=float)
    p.add_argument("--dilation-sigma", type=float)
    p.add_argument("--dilation-radius", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--trace")
    p.add_argument("--gravity", type=float, default=GRAVITY)
    p.add_argument("--jobs", type=int, default=1)

    p = add("eval", cmd_eval, "detection rate, false-alarm rate and closeness")
    p.add_argument("--pred-tracks", required=True)
    p.add_argument("--target-tracks", required=True)
    p.add_argument("--orig")
    p.add_argument("--adv")
    p.add_argument("--model", help="standardize with the surrogate's field statistics")
    p.add_argument("--radius", type=float, default=2.0)
    p.add_argument("--detect-frac", type=float, default=0.5)
    p.add_argument("--out", required=True)

    p = add("stealth", cmd_stealth, "anomaly-detector precision/recall on adversarial forecasts")
    p.add_argument("--clean", required=True)
    p.add_argument("--adv", required=True)
    p.add_argument("--fit", help="clean directory to fit detectors on (default: --clean)")
    p.add_argument("--kind", choices=list(KINDS) + ["all"], default="all")
    p.add_argument("--attacker")
    p.add_argument("--contamination", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = add("render", cmd_render, "SVG map of tracks")
    p.add_argument("--tracks", nargs="+", required=True)
    p.add_argument("--width", type=int, default=800)
    p.add_argument("--out", required=True)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    a = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if a.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        a.func(a)
    except (UsageError, TypeError) as exc:
        print(f"stormsteer {a.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FieldFormatError, json.JSONDecodeError, KeyError) as exc:
        print(f"stormsteer {a.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TrainingDiverged, AttackError, FloatingPointError) as exc:
        print(f"stormsteer {a.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"stormsteer {a.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
