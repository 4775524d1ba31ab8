"""``coeffcast`` command line: synth, smooth, train-vqvae, train-predictor, infer, eval, export-mesh.

Every command takes ``--config`` (JSON) and flag overrides; flags win. Failures
print one ``error kind=<kind> message=<json string>`` line on stderr and exit 2.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import pipeline
from .coeffstream import read_coeff_file, read_manifest, smooth_sequence, write_coeff_file
from .config import MODES, RunConfig, desk_config, load_config
from .errors import CoeffcastError, DataError

log = logging.getLogger("coeffcast")


def _base_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--preset", choices=["default", "desk"], help="start from a built-in configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--mode", choices=sorted(MODES))
    common.add_argument("--epochs", type=int, help="epochs for the training stage being run")
    common.add_argument("--out", help="output directory")
    common.add_argument("--dataset", help="dataset directory or manifest.jsonl")
    common.add_argument("-v", "--verbose", action="store_true")
    return common


def build_parser():
    common = _base_parser()
    parser = argparse.ArgumentParser(prog="coeffcast", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--clips", type=int)
    p.add_argument("--frames", type=int)

    p = sub.add_parser("smooth", parents=[common], help="sliding-window smoothing of .coeff files")
    p.add_argument("inputs", nargs="+", help=".coeff files or directories")
    p.add_argument("--window", type=int)

    p = sub.add_parser("train-vqvae", parents=[common], help="train VQ-VAE(s) for the mode's streams")
    p.add_argument("--selector", choices=["head", "mouth_detail", "joint"],
                   help="train only this stream (default: every stream the mode needs)")

    sub.add_parser("train-predictor", parents=[common], help="train the window predictor(s)")

    p = sub.add_parser("infer", parents=[common], help="autoregressive inference on a split")
    p.add_argument("--split", choices=["train", "val", "test"])
    p.add_argument("--pred-dir")
    p.add_argument("--infer-mode", choices=["per_frame", "per_window"])

    p = sub.add_parser("eval", parents=[common], help="score predictions against ground truth")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--split", choices=["train", "val", "test"])

    p = sub.add_parser("export-mesh", parents=[common], help="write toy-head OBJ frames for a .coeff file")
    p.add_argument("coeff", help="input .coeff file")
    p.add_argument("--max-frames", type=int)
    p.add_argument("--detail-debug", action="store_true",
                   help="non-physical: displace along normals by the detail-latent norm")
    return parser


def resolve_config(args) -> RunConfig:
    if args.config:
        cfg = load_config(args.config)
    elif args.preset == "desk":
        cfg = desk_config()
    else:
        cfg = RunConfig()
    for key in ("seed", "mode", "out", "dataset"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    epochs = getattr(args, "epochs", None)
    if epochs is not None:
        if args.command == "train-vqvae":
            cfg.vq_epochs = epochs
        elif args.command == "train-predictor":
            cfg.predictor_epochs = epochs
    if args.command == "synth":
        if args.out is not None and args.dataset is None:
            cfg.dataset = args.out
        over = {k: v for k, v in (("clips", args.clips), ("frames", args.frames)) if v is not None}
        if args.seed is not None:
            over["seed"] = args.seed
        cfg.synth = replace(cfg.synth, **over)
        cfg.synth.validate(cfg.predictor.w)
    if args.command == "smooth" and args.window is not None:
        cfg.smoothing_window = args.window
    if args.command == "infer" and args.infer_mode:
        cfg.predictor = replace(cfg.predictor, infer_mode=args.infer_mode)
    return cfg.validate()


def _coeff_inputs(items):
    files = []
    for item in items:
        p = Path(item)
        if p.is_dir():
            files += sorted(p.glob("*.coeff"))
        elif p.is_file():
            files.append(p)
        else:
            raise DataError(f"input not found: {p}")
    return files


def cmd_synth(cfg, args):
    from .synthgen import generate_dataset

    manifest = generate_dataset(cfg.synth, cfg.dataset)
    out = Path(cfg.dataset)
    return out, {"clips": len(manifest.entries), "synth": cfg.synth.to_dict()}


def cmd_smooth(cfg, args):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for path in _coeff_inputs(args.inputs):
        seq = read_coeff_file(path)
        smoothed = smooth_sequence(seq, cfg.smoothing_window, cfg.smoothing_weights)
        target = out / path.name
        if target.resolve() == path.resolve():
            raise DataError(f"refusing to overwrite input {path}; choose another --out")
        write_coeff_file(smoothed, target)
        written.append(str(target))
    return out, {"files": written, "window": cfg.smoothing_window}


def cmd_train_vqvae(cfg, args):
    manifest = read_manifest(pipeline.manifest_path(cfg))
    selectors = [args.selector] if args.selector else list(cfg.selectors)
    summary = {}
    for selector in selectors:
        _, history = pipeline.stage_train_vqvae(cfg, selector, manifest)
        summary[selector] = {"final_loss": history["curve"][-1] if history["curve"] else None,
                             "utilization": history["utilization"]}
    return Path(cfg.out), {"vqvae": summary}


def cmd_train_predictor(cfg, args):
    _, history = pipeline.stage_train_predictor(cfg)
    return Path(cfg.out), {"final_loss": history["curve"][-1] if history["curve"] else None}


def cmd_infer(cfg, args):
    pred_dir = Path(args.pred_dir or Path(cfg.out) / "pred")
    paths = pipeline.stage_infer(cfg, split=args.split, pred_dir=pred_dir, mode=cfg.predictor.infer_mode)
    return pred_dir, {"files": len(paths), "split": args.split or cfg.infer_split}


def cmd_eval(cfg, args):
    pred_dir = Path(args.pred_dir)
    if not pred_dir.is_dir():
        raise DataError(f"prediction directory not found: {pred_dir}")
    report, _ = pipeline.stage_eval(cfg, pred_dir, split=args.split, out_dir=cfg.out)
    print(report.to_json())
    return Path(cfg.out), {"report": report.to_dict()}


def cmd_export_mesh(cfg, args):
    from .meshexport import apply_sequence, detail_debug_displacement, export_obj, toy_model

    seq = read_coeff_file(args.coeff)
    frames = np.asarray(seq.frames, dtype=np.float64)
    if args.max_frames is not None:
        frames = frames[: args.max_frames]
    model = toy_model(seed=cfg.seed)
    verts = apply_sequence(model, frames)
    if args.detail_debug:
        verts = np.stack([detail_debug_displacement(v, model.faces, f[56:]) for v, f in zip(verts, frames)])
    out = Path(cfg.out) / "mesh" / seq.clip_id
    paths = export_obj(verts, model.faces, out)
    return out, {"frames": len(paths), "input": str(args.coeff)}


COMMANDS = {
    "synth": cmd_synth,
    "smooth": cmd_smooth,
    "train-vqvae": cmd_train_vqvae,
    "train-predictor": cmd_train_predictor,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "export-mesh": cmd_export_mesh,
}


def fail(kind, message):
    print(f"error kind={kind} message={json.dumps(str(message))}", file=sys.stderr)
    return 2


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        pipeline.configure_threads()
        out_dir, extra = COMMANDS[args.command](cfg, args)
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        name = args.command.replace("-", "_")
        pipeline.write_json(out_dir / f"run_{name}.json", pipeline.run_metadata(cfg, args.command, **extra))
    except CoeffcastError as exc:
        return fail(exc.kind, exc)
    except OSError as exc:
        return fail("io", exc)
    except ValueError as exc:
        return fail("value", exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
