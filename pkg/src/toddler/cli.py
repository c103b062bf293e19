"""Command-line entry point: dataset generation, per-stage training,
pipeline sampling, ablation sweeps, evaluation, and the session service.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error. Every
command is reproducible from its flags + config + seed.
"""

from __future__ import annotations

import argparse
import csv
import importlib.resources
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import jsonschema
import numpy as np

from . import bridge, metrics, pipeline, toyworld
from .core import ImageGrid, load_checkpoint, load_png, save_checkpoint, save_png
from .denoiser import Denoiser
from .degrade import make_plan
from .schedule import make_schedule


class ConfigError(Exception):
    """Bad config / usage; maps to exit code 2."""


DEFAULT_CONFIG = {
    "data_dir": "",
    "out_dir": "runs/default",
    "pipeline": {"n_stages": 2, "T": 10, "preset": "small",
                 "stage1_peak_variance": 0.05, "stage1_schedule": "linear"},
    "train": {"epochs": 30, "batch_size": 32, "learning_rate": 1e-3,
              "cutout_range": [0.0, 0.0], "dropout_range": [0.0, 0.0],
              "truncation_training": False, "seed": 0},
    "sampler": {"seed": 0, "steps": None, "trunc_s": 0,
                "coefficient_source": "oracle-derived"},
}


def _schema(name):
    ref = importlib.resources.files("toddler") / name
    return json.loads(ref.read_text())


def load_config(path):
    try:
        with open(path) as f:
            raw = json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"config not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    try:
        jsonschema.validate(raw, _schema("config_schema.json"))
    except jsonschema.ValidationError as e:
        raise ConfigError(f"config schema violation: {e.message}") from e
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))  # deep copy
    for key, val in raw.items():
        if isinstance(val, dict):
            cfg[key].update(val)
        else:
            cfg[key] = val
    return cfg


def resolve_data_dir(cfg, flag_value=None):
    # precedence: flag > config > env
    for cand in (flag_value, cfg.get("data_dir"),
                 os.environ.get("TODDLER_DATA_DIR")):
        if cand:
            return cand
    raise ConfigError("no data directory: pass --data-dir, set data_dir in "
                      "the config, or export TODDLER_DATA_DIR")


def specs_from_config(cfg):
    p = cfg["pipeline"]
    specs = pipeline.default_stage_specs(
        p["n_stages"], T=p["T"], preset=p.get("preset", "small"),
        stage1_peak=p.get("stage1_peak_variance", 0.05))
    kind = p.get("stage1_schedule", "linear")
    if kind != "linear":
        s1 = specs[0]
        sched = make_schedule(kind, s1.T, s1.schedule.peak_variance)
        specs[0] = pipeline.StageSpec(
            1, "sketch", sched,
            make_plan("sketch", s1.T, alpha=sched.alpha),
            "black-image", s1.preset)
    return specs


def train_config_from(cfg):
    t = cfg["train"]
    return pipeline.TrainConfig(
        epochs=t["epochs"], batch_size=t["batch_size"],
        learning_rate=t["learning_rate"],
        cutout_range=tuple(t["cutout_range"]),
        dropout_range=tuple(t["dropout_range"]),
        truncation_training=t["truncation_training"], seed=t["seed"])


def sampler_config_from(cfg, **overrides):
    s = dict(cfg["sampler"])
    s.update({k: v for k, v in overrides.items() if v is not None})
    return pipeline.SamplerConfig(
        seed=s["seed"], steps=s["steps"], trunc_s=s["trunc_s"],
        coefficient_source=s["coefficient_source"])


def load_split(data_dir):
    try:
        ds, split = toyworld.load_dataset(data_dir)
    except FileNotFoundError as e:
        raise ConfigError(f"no dataset at {data_dir} (run gen-data)") from e
    tr_idx = np.flatnonzero(split == "train")
    va_idx = np.flatnonzero(split == "val")
    tr = toyworld.Dataset(ds.rgb[tr_idx], ds.sketch[tr_idx],
                          ds.palette[tr_idx], ds.seeds[tr_idx])
    va = toyworld.Dataset(ds.rgb[va_idx], ds.sketch[va_idx],
                          ds.palette[va_idx], ds.seeds[va_idx])
    return tr, va


def _ckpt_path(out_dir, i):
    return os.path.join(out_dir, f"stage{i}.ckpt")


def load_stage_checkpoints(out_dir, specs):
    denoisers = []
    for spec in specs:
        path = _ckpt_path(out_dir, spec.index)
        if not os.path.exists(path):
            raise ConfigError(f"missing checkpoint {path} (train stage "
                              f"{spec.index} first)")
        denoisers.append(Denoiser.from_checkpoint(load_checkpoint(path)))
    return denoisers


# --- commands ------------------------------------------------------------------

def cmd_gen_data(args):
    toyworld.gen_dataset(args.n, args.seed, args.out)
    print(f"wrote {args.n} scenes to {args.out}")
    return 0


def cmd_train(args):
    cfg = load_config(args.config)
    specs = specs_from_config(cfg)
    if not (1 <= args.stage <= len(specs)):
        raise ConfigError(f"stage {args.stage} out of range for an "
                          f"{len(specs)}-stage pipeline")
    spec = specs[args.stage - 1]
    tcfg = train_config_from(cfg)
    tr, _ = load_split(resolve_data_dir(cfg, args.data_dir))
    out_dir = args.out or cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    ckpt_path = _ckpt_path(out_dir, spec.index)
    loss_path = os.path.join(out_dir, f"stage{spec.index}_loss.csv")
    denoiser, epoch0 = None, 0
    if args.resume:
        if not os.path.exists(ckpt_path):
            raise ConfigError(f"--resume but no checkpoint at {ckpt_path}")
        ckpt = load_checkpoint(ckpt_path)
        denoiser = Denoiser.from_checkpoint(ckpt)
        epoch0 = int(ckpt.metadata.get("epochs_done", 0))
    denoiser, losses = pipeline.train_stage(
        tr, spec, tcfg, stage1_spec=specs[0], denoiser=denoiser,
        progress=lambda e, l: print(f"epoch {epoch0 + e}: loss {l:.6f}",
                                    flush=True))
    meta = {"stage_index": spec.index, "stage_kind": spec.kind,
            "schedule_kind": spec.schedule.kind, "T": spec.T,
            "peak_variance": spec.schedule.peak_variance,
            "y_source": spec.y_source, "epochs_done": epoch0 + len(losses)}
    save_checkpoint(ckpt_path, denoiser.to_checkpoint(meta))
    mode = "a" if (args.resume and os.path.exists(loss_path)) else "w"
    with open(loss_path, mode, newline="") as f:
        w = csv.writer(f)
        if mode == "w":
            w.writerow(["epoch", "loss"])
        for e, l in enumerate(losses):
            w.writerow([epoch0 + e, f"{l:.8f}"])
    bridge.write_math_notes(os.path.join(out_dir, "MATH_NOTES.txt"))
    print(f"stage {spec.index} final loss {losses[-1]:.6f} -> {ckpt_path}")
    return 0


def cmd_sample(args):
    cfg = load_config(args.config)
    specs = specs_from_config(cfg)
    sampler = sampler_config_from(cfg, seed=args.seed, steps=args.steps,
                                  trunc_s=args.trunc_s)
    if sampler.trunc_s > specs[0].T:
        raise ConfigError(f"--trunc-s {sampler.trunc_s} exceeds stage-1 "
                          f"T={specs[0].T}")
    if sampler.steps is not None and sampler.steps > specs[0].T:
        raise ConfigError(f"--steps {sampler.steps} exceeds trained "
                          f"T={specs[0].T}")
    denoisers = load_stage_checkpoints(args.ckpt_dir or cfg["out_dir"], specs)
    session = pipeline.run_pipeline(denoisers, specs, sampler, batch=args.n)
    os.makedirs(args.out, exist_ok=True)
    items = []
    for j, out in enumerate(session.x_inter, start=1):
        for k in range(out.shape[0]):
            name = f"stage{j}_{k:03d}.png"
            save_png(os.path.join(args.out, name), ImageGrid(out[k]))
            items.append({"stage": j, "sample": k, "file": name})
    manifest = {"seed": sampler.seed, "steps": sampler.steps,
                "trunc_s": sampler.trunc_s, "n": args.n,
                "n_stages": len(specs), "items": items}
    with open(os.path.join(args.out, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1)
    print(f"wrote {len(items)} images to {args.out}")
    return 0


# --- ablation sweeps ------------------------------------------------------------

TRUNCATION_RATIOS = (0.0, 1 / 20, 1 / 10, 1 / 5, 2 / 5, 3 / 5, 4 / 5, 1.0)
STEP_GRID = (10, 20, 50, 100)
AUGMENT_GRID = (
    ((0.0, 0.0), (0.0, 0.0)),
    ((0.2, 0.3), (0.0, 0.0)),
    ((0.0, 0.0), (0.5, 0.7)),
    ((0.2, 0.3), (0.5, 0.7)),
)


def _nearest_contour_f1(samples, val_sketch, limit=64):
    """Mean over samples of the best F1 against a val-sketch subsample."""
    refs = val_sketch[:limit]
    scores = []
    for s in samples:
        best = max(metrics.contour_f1(s, r) for r in refs)
        scores.append(best)
    return float(np.mean(scores))


def _sample_batch(denoisers, specs, sampler, n):
    return pipeline.run_pipeline(denoisers, specs, sampler, batch=n).x_inter


def _ablate_cell(which, cfg, cell, data_dir, n_eval):
    """One isolated seeded sweep cell; returns a tidy CSV row dict."""
    tr, va = load_split(data_dir)
    seed = cell["seed"]
    tcfg = train_config_from(cfg)
    tcfg = pipeline.TrainConfig(
        epochs=tcfg.epochs, batch_size=tcfg.batch_size,
        learning_rate=tcfg.learning_rate, cutout_range=tcfg.cutout_range,
        dropout_range=tcfg.dropout_range,
        truncation_training=tcfg.truncation_training, seed=seed)

    if which == "scheduler":
        base = specs_from_config(cfg)[0]
        sched = make_schedule(cell["kind"], base.T,
                              base.schedule.peak_variance)
        spec = pipeline.StageSpec(
            1, "sketch", sched,
            make_plan("sketch", base.T, alpha=sched.alpha),
            "black-image", base.preset)
        den, _ = pipeline.train_stage(tr, spec, tcfg)
        out = _sample_batch([den], [spec],
                            pipeline.SamplerConfig(seed=seed + 1000), n_eval)
        return {"kind": cell["kind"], "seed": seed,
                "contour_f1": _nearest_contour_f1(out[0], va.sketch)}

    if which in ("steps", "train-steps-grid"):
        T = cell["train_T"]
        p = dict(cfg["pipeline"])
        p["T"] = T
        specs = specs_from_config({**cfg, "pipeline": p})
        dens = [pipeline.train_stage(tr, s, tcfg, stage1_spec=specs[0])[0]
                for s in specs]
        steps = cell.get("sample_steps")
        out = _sample_batch(dens, specs,
                            pipeline.SamplerConfig(seed=seed + 1000,
                                                   steps=steps), n_eval)
        fid = metrics.toy_frechet(out[-1], va.rgb)
        row = {"train_T": T, "seed": seed, "toy_frechet": fid}
        if which == "steps":
            row["sample_steps"] = steps
        return row

    if which == "truncation":
        specs = specs_from_config(cfg)
        tcfg = pipeline.TrainConfig(
            epochs=tcfg.epochs, batch_size=tcfg.batch_size,
            learning_rate=tcfg.learning_rate, cutout_range=tcfg.cutout_range,
            dropout_range=tcfg.dropout_range, truncation_training=True,
            seed=seed)
        dens = [pipeline.train_stage(tr, s, tcfg, stage1_spec=specs[0])[0]
                for s in specs]
        rows = []
        T1 = specs[0].T
        s_grid = sorted({int(round(r * T1)) for r in TRUNCATION_RATIOS})
        for s in s_grid:
            out = _sample_batch(dens, specs,
                                pipeline.SamplerConfig(seed=seed + 1000,
                                                       trunc_s=s), n_eval)
            rows.append({"s": s, "seed": seed,
                         "toy_frechet": metrics.toy_frechet(out[-1], va.rgb)})
        return rows

    if which == "augment":
        specs = specs_from_config(cfg)
        detail = specs[-1]
        cutout, dropout = cell["cutout"], cell["dropout"]
        tcfg = pipeline.TrainConfig(
            epochs=tcfg.epochs, batch_size=tcfg.batch_size,
            learning_rate=tcfg.learning_rate, cutout_range=tuple(cutout),
            dropout_range=tuple(dropout), seed=seed)
        den, _ = pipeline.train_stage(tr, detail, tcfg, stage1_spec=specs[0])
        n = min(n_eval, len(va))
        y = pipeline._to_condition_space(va.sketch[:n], detail.channels)
        noise = pipeline.sample_noise_fields([detail], seed + 1000, n, 32)[0][0]
        out = pipeline.run_stage(den, detail, y, y, noise)
        mse_clean = float(np.mean((out - va.rgb[:n]) ** 2))
        # robustness: same eval with half the sketch pixels dropped
        rng = pipeline.SeededRng(seed + 2000, 0)
        degraded = np.where(rng.uniform(size=va.sketch[:n].shape) < 0.5,
                            0.0, va.sketch[:n])
        yd = pipeline._to_condition_space(degraded, detail.channels)
        out_d = pipeline.run_stage(den, detail, yd, yd, noise)
        mse_degraded = float(np.mean((out_d - va.rgb[:n]) ** 2))
        return {"cutout_lo": cutout[0], "cutout_hi": cutout[1],
                "dropout_lo": dropout[0], "dropout_hi": dropout[1],
                "seed": seed, "mse_clean": mse_clean,
                "mse_degraded": mse_degraded}

    raise ConfigError(f"unknown ablation {which!r}")


def _ablation_cells(which, cfg, seeds):
    if which == "scheduler":
        return [{"kind": k, "seed": s}
                for k in ("linear", "log", "bridge") for s in seeds]
    if which == "steps":
        T = cfg["pipeline"]["T"]
        return [{"train_T": T, "sample_steps": st, "seed": s}
                for st in STEP_GRID if st <= T for s in seeds]
    if which == "train-steps-grid":
        return [{"train_T": T, "seed": s} for T in STEP_GRID for s in seeds]
    if which == "truncation":
        return [{"seed": s} for s in seeds]
    if which == "augment":
        return [{"cutout": c, "dropout": d, "seed": s}
                for c, d in AUGMENT_GRID for s in seeds]
    raise ConfigError(f"unknown ablation {which!r}")


def cmd_ablate(args):
    cfg = load_config(args.config)
    data_dir = resolve_data_dir(cfg, args.data_dir)
    seeds = list(range(args.seeds))
    cells = _ablation_cells(args.which, cfg, seeds)
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(
                _ablate_cell, [args.which] * len(cells), [cfg] * len(cells),
                cells, [data_dir] * len(cells), [args.n_eval] * len(cells)))
    else:
        results = [_ablate_cell(args.which, cfg, c, data_dir, args.n_eval)
                   for c in cells]
    rows = []
    for r in results:
        rows.extend(r if isinstance(r, list) else [r])
    if not rows:
        raise ConfigError(f"sweep {args.which!r} produced no rows for this "
                          f"config (check T against the sweep grid)")
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, f"{args.which}.csv")
    with open(out_path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=sorted(rows[0].keys()))
        w.writeheader()
        w.writerows(rows)
    print(f"wrote {len(rows)} rows to {out_path}")
    return 0


def _load_dir_images(path):
    if not os.path.isdir(path):
        raise ConfigError(f"not a directory: {path}")
    names = sorted(n for n in os.listdir(path) if n.endswith(".png"))
    return names, [load_png(os.path.join(path, n)).data for n in names]


def cmd_eval(args):
    pred_names, preds = _load_dir_images(args.pred_dir)
    ref_names, refs = _load_dir_images(args.ref_dir)
    if not preds or not refs:
        raise ConfigError("both directories must contain PNG images")
    report = {"n_pred": len(preds), "n_ref": len(refs),
              "toy_frechet": None, "mse": None, "contour_f1": None}
    try:
        report["toy_frechet"] = metrics.toy_frechet(preds, refs)
    except ValueError:
        pass  # sets smaller than the metric's minimum
    paired = [(p, r) for p, r in zip(preds, refs) if p.shape == r.shape]
    if paired:
        report["mse"] = float(np.mean([metrics.mse(p, r) for p, r in paired]))
        f1s = []
        for p, r in paired:
            if (p.shape[-1] == 1 and ImageGrid(p).is_binary()
                    and ImageGrid(r).is_binary()):
                f1s.append(metrics.contour_f1(p, r))
        if f1s:
            report["contour_f1"] = float(np.mean(f1s))
    jsonschema.validate(report, _schema("report_schema.json"))
    text = json.dumps(report, indent=1)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    print(text)
    return 0


def cmd_serve(args):
    import uvicorn

    from .service import create_app

    cfg = load_config(args.config)
    app = create_app(config=cfg, ckpt_dir=args.ckpt_dir or cfg["out_dir"],
                     sessions_dir=args.sessions_dir,
                     max_sessions=args.max_sessions,
                     frontend_dir=args.frontend_dir)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


# --- parser --------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(
        prog="toddler",
        description="staged sketch/palette/image diffusion toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a procedural toy dataset")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one pipeline stage")
    t.add_argument("--config", required=True)
    t.add_argument("--stage", type=int, required=True)
    t.add_argument("--data-dir")
    t.add_argument("--out", help="override config out_dir")
    t.add_argument("--resume", action="store_true")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="run the full pipeline")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--steps", type=int)
    s.add_argument("--trunc-s", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=1)
    s.add_argument("--ckpt-dir")
    s.set_defaults(func=cmd_sample)

    a = sub.add_parser("ablate", help="run a named sweep, emit tidy CSV")
    a.add_argument("--which", required=True,
                   choices=["scheduler", "steps", "train-steps-grid",
                            "truncation", "augment"])
    a.add_argument("--config", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--data-dir")
    a.add_argument("--seeds", type=int, default=3)
    a.add_argument("--jobs", type=int, default=1)
    a.add_argument("--n-eval", type=int, default=64)
    a.set_defaults(func=cmd_ablate)

    e = sub.add_parser("eval", help="compare two image directories")
    e.add_argument("--pred-dir", required=True)
    e.add_argument("--ref-dir", required=True)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("serve", help="run the session HTTP service")
    v.add_argument("--config", required=True)
    v.add_argument("--port", type=int, default=8000)
    v.add_argument("--host", default="127.0.0.1")
    v.add_argument("--ckpt-dir")
    v.add_argument("--sessions-dir", default="sessions")
    v.add_argument("--max-sessions", type=int, default=32)
    v.add_argument("--frontend-dir",
                   help="serve a static web UI from this directory at /")
    v.set_defaults(func=cmd_serve)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
