"""Command-line pipeline: generate, prepare, train, evaluate, analyze, plot.

All commands derive their randomness from --seed (falling back to the
FOLLOWME_SEED environment variable, then 0). Exit codes: 0 success, 1
runtime failure, 2 usage error (unknown flag, missing file, malformed
config). Config files are flat key=value text mirroring ModelConfig and
TrainConfig field names plus n_drivers for generation.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import dataio
from .baselines import KalmanConfig, KalmanPredictor
from .exceptions import FollowMeError, ParseError
from .metrics import PredictionSet, evaluate
from .model import ModelConfig, StgcnnPredictor, load_checkpoint, save_checkpoint
from .simgen import DEFAULT_N_DRIVERS, generate_dataset
from .training import TrainConfig, train, write_history
from . import analysis


class UsageError(Exception):
    """Maps to exit code 2."""


_MODEL_FIELDS = {f.name: f for f in dataclasses.fields(ModelConfig)}
_TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}
_EXTRA_KEYS = {"n_drivers"}


def parse_config_file(path) -> dict[str, str]:
    """Flat key=value lines; '#' starts a comment."""
    if not os.path.isfile(path):
        raise UsageError(f"config file not found: {path}")
    out: dict[str, str] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            known = key in _MODEL_FIELDS or key in _TRAIN_FIELDS or key in _EXTRA_KEYS
            if not known:
                raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
            out[key] = value
    return out


def _coerce(value: str, target_type):
    if target_type is bool:
        if value.lower() in ("1", "true", "yes"):
            return True
        if value.lower() in ("0", "false", "no"):
            return False
        raise UsageError(f"expected boolean, got {value!r}")
    if target_type is int:
        return int(value)
    if target_type is float:
        return float(value)
    if target_type is str:
        return value
    # kernel tuples like "3,1"
    return tuple(int(v) for v in value.split(","))


def _build_config(cls, fields, raw: dict[str, str], overrides: dict):
    kwargs = {}
    for name, f in fields.items():
        if name in raw:
            target = f.type if isinstance(f.type, type) else type(f.default)
            kwargs[name] = _coerce(raw[name], target)
    kwargs.update(overrides)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError, FollowMeError) as exc:
        raise UsageError(f"bad config: {exc}") from exc


def _seed_from(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("FOLLOWME_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"FOLLOWME_SEED must be an integer, got {env!r}") from None
    return 0


def _load_split(data_dir: str, split: str) -> dataio.WindowSet:
    path = os.path.join(data_dir, f"{split}.npz")
    if not os.path.isfile(path):
        raise UsageError(f"prepared split not found: {path}")
    return dataio.WindowSet.load(path)


def _cmd_generate(args) -> int:
    raw = parse_config_file(args.config) if args.config else {}
    n_drivers = int(raw.get("n_drivers", DEFAULT_N_DRIVERS))
    if args.drivers is not None:
        n_drivers = args.drivers
    manifest = generate_dataset(n_drivers=n_drivers, out_dir=args.out,
                                rng_seed=_seed_from(args), jobs=args.jobs)
    print(f"wrote {n_drivers * 12} scenes; manifest at {manifest}")
    return 0


def _cmd_prepare(args) -> int:
    if not os.path.isfile(os.path.join(args.data, "manifest.csv")):
        raise UsageError(f"no manifest.csv under {args.data}")
    ratios = tuple(float(r) for r in args.ratios.split(","))
    if len(ratios) != 3:
        raise UsageError("--ratios needs three comma-separated values")
    summary = dataio.prepare_dataset(
        args.data, args.out, horizon_s=args.horizon, rate_hz=args.rate,
        stride_frames=args.stride, ratios=ratios, rng_seed=_seed_from(args))
    print(f"prepared windows: {summary['counts']}")
    return 0


def _cmd_train(args) -> int:
    raw = parse_config_file(args.config) if args.config else {}
    seed = _seed_from(args)
    train_ws = _load_split(args.data, "train")
    val_ws = _load_split(args.data, "val")
    overrides = {"t_obs": train_ws.t_obs, "t_pred": train_ws.t_pred,
                 "n_max": train_ws.features.shape[3]}
    if args.no_fusion:
        overrides["use_fusion"] = False
    if args.no_triplet:
        overrides["use_triplet"] = False
    model_cfg = _build_config(ModelConfig, _MODEL_FIELDS, raw, overrides)
    t_overrides = {"seed": seed}
    if args.epochs is not None:
        t_overrides["epochs"] = args.epochs
    train_cfg = _build_config(TrainConfig, _TRAIN_FIELDS, raw, t_overrides)
    model = StgcnnPredictor(model_cfg, rng_seed=seed)
    model, history = train(train_ws, model, train_cfg,
                           val_windows=val_ws if len(val_ws) else None)
    save_checkpoint(model, args.out)
    write_history(history, args.out + ".history.csv")
    last = history[-1]
    print(f"trained {len(history)} epochs; final train_loss={last.train_loss:.6g} "
          f"val_bon_ade={last.val_bon_ade:.6g}; checkpoint at {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    ws = _load_split(args.data, args.split)
    seed = _seed_from(args)
    if args.baseline == "kalman":
        predictor = KalmanPredictor(KalmanConfig(dt=1.0 / ws.rate_hz))
        tag = "kalman"
    else:
        if not args.ckpt:
            raise UsageError("--ckpt is required unless --baseline kalman")
        if not os.path.isfile(args.ckpt):
            raise UsageError(f"checkpoint not found: {args.ckpt}")
        predictor = load_checkpoint(args.ckpt)
        tag = "model"
    report = evaluate(predictor, ws, m=args.samples, seed=seed)
    out = args.out or os.path.join(args.data, f"report_{tag}_{args.split}.txt")
    report.save(out)
    sys.stdout.write(report.to_text())
    print(f"report written to {out}")
    return 0


def _cmd_analyze_fusion(args) -> int:
    ws = _load_split(args.data, args.split)
    if not os.path.isfile(args.ckpt):
        raise UsageError(f"checkpoint not found: {args.ckpt}")
    model = load_checkpoint(args.ckpt)
    os.makedirs(args.out, exist_ok=True)
    traces, ids, cases = [], [], []
    for i in range(len(ws)):
        window, target = ws.window(i)
        _, trace = model.predict(window)
        traces.append(trace)
        ids.append(f"{ws.scene_ids[i]}:{i}")
        cases.append((window, target))
    analysis.save_traces(traces, ids, os.path.join(args.out, "traces.npz"))
    hist = analysis.contribution_histogram(traces)
    curves = analysis.contribution_magnitude_curve(traces)
    np.savetxt(os.path.join(args.out, "contribution_histogram.csv"),
               np.stack([hist.bin_edges[:-1], hist.bin_edges[1:],
                         hist.lead_counts, hist.other_counts], axis=1),
               delimiter=",", header="bin_lo,bin_hi,lead_count,other_count", comments="")
    np.savetxt(os.path.join(args.out, "contribution_magnitude.csv"),
               np.stack([np.arange(1, len(curves[0]) + 1), curves[0], curves[1]], axis=1),
               delimiter=",", header="timestep,attn_norm,ego_embed_norm", comments="")
    analysis.plot_contribution_histogram(hist, os.path.join(args.out, "contribution_histogram.png"))
    analysis.plot_magnitude_curves(*curves, os.path.join(args.out, "contribution_magnitude.png"))
    seed = _seed_from(args)
    for tag, idx in (("max_lead", hist.max_lead_trace), ("min_lead", hist.min_lead_trace)):
        window, target = ws.window(idx)
        pset = model.sample(window, m=args.samples, rng_seed=seed)
        analysis.plot_predictions([(f"{tag}_{ids[idx].replace(':', '_w')}", window, target)],
                                  {"model": [pset]}, args.out)
    print(f"fusion diagnostics written to {args.out} "
          f"(lead mean {hist.lead_strengths.mean():.4f}, "
          f"other mean {hist.other_strengths.mean():.4f})")
    return 0


def _cmd_plot(args) -> int:
    ws = _load_split(args.data, args.split)
    if not os.path.isfile(args.ckpt):
        raise UsageError(f"checkpoint not found: {args.ckpt}")
    model = load_checkpoint(args.ckpt)
    seed = _seed_from(args)
    n_cases = min(args.cases, len(ws))
    if n_cases == 0:
        raise UsageError("no windows to plot")
    picks = np.linspace(0, len(ws) - 1, n_cases).astype(int)
    kalman = KalmanPredictor(KalmanConfig(dt=1.0 / ws.rate_hz))
    cases, model_sets = [], {"model": [], "kalman": []}
    for i in picks:
        window, target = ws.window(int(i))
        cases.append((f"case{int(i):05d}_{ws.scene_ids[int(i)]}", window, target))
        model_sets["model"].append(model.sample(window, m=args.samples, rng_seed=seed + int(i)))
        mean, _ = kalman.predict_gaussian(ws.features[i][None], ws.masks[i][None], ws.t_pred)
        model_sets["kalman"].append(PredictionSet(samples=mean[0][None], window=window))
    files = analysis.plot_predictions(cases, model_sets, args.out)
    print(f"wrote {len(files)} plots to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="followme",
                                     description="Lead-following trajectory prediction pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None,
                       help="RNG seed (default: FOLLOWME_SEED env or 0)")
        p.add_argument("--jobs", type=int, default=1,
                       help="worker processes (scene generation only)")

    p = sub.add_parser("generate", help="write a synthetic scene dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--drivers", type=int, default=None,
                   help="override the configured driver count")
    common(p)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("prepare", help="resample, window, and split scenes")
    p.add_argument("--data", required=True)
    p.add_argument("--horizon", type=int, choices=(3, 5, 8), required=True)
    p.add_argument("--rate", type=float, default=10.0)
    p.add_argument("--out", required=True)
    p.add_argument("--stride", type=int, default=10)
    p.add_argument("--ratios", default="0.7,0.1,0.2")
    common(p)
    p.set_defaults(func=_cmd_prepare)

    p = sub.add_parser("train", help="train the predictor on prepared windows")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--no-fusion", action="store_true",
                   help="ablation: drop the fusion/attention path")
    p.add_argument("--no-triplet", action="store_true",
                   help="ablation: drop the triplet loss term")
    p.add_argument("--epochs", type=int, default=None)
    common(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="metric report for a checkpoint or baseline")
    p.add_argument("--ckpt", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--baseline", choices=("none", "kalman"), default="none")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--samples", type=int, default=20)
    p.add_argument("--out", default=None)
    common(p)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("analyze-fusion", help="fusion weight diagnostics and plots")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--samples", type=int, default=20)
    common(p)
    p.set_defaults(func=_cmd_analyze_fusion)

    p = sub.add_parser("plot", help="qualitative prediction plots")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--cases", type=int, default=6)
    p.add_argument("--samples", type=int, default=20)
    common(p)
    p.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc}", file=sys.stderr)
        return 2
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FollowMeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
