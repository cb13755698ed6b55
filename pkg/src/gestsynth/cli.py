"""Command-line entry point wiring all modules together.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
The SDT_THREADS environment variable caps internal parallelism.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import analysis, svg
from .core import atomic_write_text, write_gesture_file
from .data import ingest_dataset
from .errors import GestsynthError, UsageError
from .synthetic import SynthConfig, synth_dataset
from .templates import load_template_json
from .training import (
    TrainConfig,
    VaeTrainConfig,
    evaluate,
    infer,
    load_generator_checkpoint,
    load_audio_for_inference,
    resolve_template,
    train,
    train_vae,
    write_report,
)
from .vae import load_vae


def _apply_thread_cap() -> None:
    raw = os.environ.get("SDT_THREADS")
    if raw:
        try:
            threads = max(1, int(raw))
        except ValueError:
            raise UsageError(f"SDT_THREADS must be an integer, got '{raw}'") from None
        import torch

        torch.set_num_threads(threads)


def _parse_set_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _apply_overrides(config: dict, assignments: list[str]) -> dict:
    """Dotted-key overrides: --set mel.window=512 --set lr=0.001"""
    for assignment in assignments:
        if "=" not in assignment:
            raise UsageError(f"--set expects key=value, got '{assignment}'")
        dotted, raw_value = assignment.split("=", 1)
        keys = dotted.split(".")
        node = config
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise UsageError(f"--set {dotted}: '{key}' is not a section")
        node[keys[-1]] = _parse_set_value(raw_value)
    return config


def _load_config_file(path) -> dict:
    try:
        with open(path) as handle:
            return json.load(handle)
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc


def cmd_data_synth(args) -> int:
    cfg = SynthConfig(
        n_clips=args.clips,
        n_modes=args.modes,
        seed=args.seed,
        clip_frames=args.frames,
        noise_std=args.noise_std,
        test_fraction=args.test_fraction,
    )
    paths = synth_dataset(cfg, args.out)
    print(json.dumps(paths))
    return 0


def cmd_data_ingest(args) -> int:
    summary = ingest_dataset(
        args.keypoints,
        args.audio,
        args.layout,
        args.out,
        target_shoulder_width=args.shoulder_width,
        box_margin=args.margin,
        speaker_id=args.speaker,
    )
    print(json.dumps(summary))
    return 0


def cmd_train(args) -> int:
    config = _load_config_file(args.config)
    if args.variant:
        config["variant"] = args.variant
    _apply_overrides(config, args.set or [])
    result = train(TrainConfig.from_dict(config))
    print(json.dumps({"checkpoint": result.checkpoint_path, "log": result.log_path}))
    return 0


def cmd_train_vae(args) -> int:
    config = _load_config_file(args.config)
    _apply_overrides(config, args.set or [])
    result = train_vae(VaeTrainConfig.from_dict(config))
    print(json.dumps({"checkpoint": result.checkpoint_path, "log": result.log_path}))
    return 0


def cmd_infer(args) -> int:
    loaded = load_generator_checkpoint(args.ckpt)
    clip = load_audio_for_inference(args.audio)
    seq = infer(loaded, clip, args.template, windowed=args.windowed)
    write_gesture_file(seq, args.out)
    print(json.dumps({"out": args.out, "frames": seq.num_frames}))
    return 0


def cmd_eval(args) -> int:
    report = evaluate(
        args.ckpt, args.manifest, args.vae_ckpt, seed=args.seed, oracle=args.oracle
    )
    write_report(report, args.out)
    print(report.to_json())
    return 0


def _resolve_viz_template(spec: str, ckpt: str | None, dim: int) -> np.ndarray:
    if spec == "zero":
        return np.zeros(dim)
    if spec.startswith("file:"):
        return load_template_json(spec.split(":", 1)[1])
    if spec.startswith(("sample:", "id:")):
        if not ckpt:
            raise UsageError(f"template spec '{spec}' needs --ckpt to reach trained templates")
        loaded = load_generator_checkpoint(ckpt)
        vector = resolve_template(loaded, spec)
        return np.asarray(vector)
    raise UsageError(f"bad template spec '{spec}'")


def cmd_viz_templates(args) -> int:
    from .core import load_clip, read_manifest

    vae = load_vae(args.vae_ckpt)
    clips = [load_clip(e) for e in read_manifest(args.manifest)]
    gt_templates = np.stack([vae.extract_template(c.gesture) for c in clips])
    groups = {"ground_truth": gt_templates}
    if args.ckpt:
        loaded = load_generator_checkpoint(args.ckpt)
        generated = []
        for i, clip_record in enumerate(clips):
            clip = load_audio_for_inference(clip_record.audio_path)
            spec = "zero" if loaded.gen_cfg.template_mode == "none" else f"sample:{args.seed + i}"
            generated.append(infer(loaded, clip, spec))
        groups["generated"] = np.stack([vae.extract_template(s) for s in generated])
    projection = analysis.pca_project(np.concatenate(list(groups.values())), dims=2)
    payload = {"explained_variance_ratio": projection.explained_variance_ratio.tolist()}
    point_groups = {}
    offset = 0
    for name, vectors in groups.items():
        points = projection.points[offset : offset + len(vectors)]
        point_groups[name] = points
        payload[name] = points.tolist()
        offset += len(vectors)
    atomic_write_text(args.out_prefix + ".json", json.dumps(payload))
    svg.scatter_svg(args.out_prefix + ".svg", point_groups, title="template space (PCA)")
    print(json.dumps({"json": args.out_prefix + ".json", "svg": args.out_prefix + ".svg"}))
    return 0


def cmd_viz_factor(args) -> int:
    vae = load_vae(args.vae_ckpt)
    direction = analysis.top_semantic_direction(vae)
    positive, negative = analysis.decode_opposites(vae, direction.vector, args.magnitude)
    payload = {
        "direction": direction.vector.tolist(),
        "eigenvalues": direction.eigenvalues.tolist(),
        "degenerate": direction.degenerate,
        "magnitude": args.magnitude,
    }
    atomic_write_text(args.out_prefix + ".json", json.dumps(payload))
    svg.skeleton_strip_svg(
        args.out_prefix + ".svg",
        [positive, negative],
        every=args.every,
        labels=["+direction", "-direction"],
    )
    print(json.dumps({"json": args.out_prefix + ".json", "svg": args.out_prefix + ".svg",
                      "degenerate": direction.degenerate}))
    return 0


def cmd_viz_interp(args) -> int:
    vae = load_vae(args.vae_ckpt) if args.vae_ckpt else None
    if args.ckpt and args.audio:
        loaded = load_generator_checkpoint(args.ckpt)
        clip = load_audio_for_inference(args.audio)
        dim = loaded.gen_cfg.template_dim

        def decode(t):
            return infer(loaded, clip, t)

    elif vae is not None:
        dim = vae.cfg.template_dim

        def decode(t):
            return vae.decode_template(t)

    else:
        raise UsageError("viz interp needs --vae-ckpt, or --ckpt with --audio")
    t0 = _resolve_viz_template(args.start, args.ckpt, dim)
    t1 = _resolve_viz_template(args.end, args.ckpt, dim)
    sequences, alphas, diffs = analysis.interpolation_sweep(decode, t0, t1, args.steps)
    payload = {
        "alphas": alphas.tolist(),
        "mean_adjacent_diff": diffs,
        "t0": np.asarray(t0).tolist(),
        "t1": np.asarray(t1).tolist(),
    }
    atomic_write_text(args.out_prefix + ".json", json.dumps(payload))
    svg.skeleton_strip_svg(
        args.out_prefix + ".svg",
        sequences,
        every=args.every,
        labels=[f"a={a:.2f}" for a in alphas],
    )
    print(json.dumps({"json": args.out_prefix + ".json", "svg": args.out_prefix + ".svg"}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gestsynth",
        description="Co-speech gesture synthesis with learned template vectors",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    data = sub.add_parser("data", help="dataset synthesis and ingestion")
    data_sub = data.add_subparsers(dest="data_command", required=True)
    synth = data_sub.add_parser("synth", help="generate the synthetic one-to-many dataset")
    synth.add_argument("--out", required=True)
    synth.add_argument("--clips", type=int, default=200)
    synth.add_argument("--modes", type=int, default=4)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--frames", type=int, default=64)
    synth.add_argument("--noise-std", type=float, default=0.01)
    synth.add_argument("--test-fraction", type=float, default=0.2)
    synth.set_defaults(func=cmd_data_synth)

    ingest = data_sub.add_parser("ingest", help="validate, filter, and normalize keypoint files")
    ingest.add_argument("--keypoints", required=True)
    ingest.add_argument("--audio", required=True)
    ingest.add_argument("--layout", required=True)
    ingest.add_argument("--out", required=True)
    ingest.add_argument("--shoulder-width", type=float, default=1.0)
    ingest.add_argument("--margin", type=float, default=0.25)
    ingest.add_argument("--speaker", default="")
    ingest.set_defaults(func=cmd_data_ingest)

    train_p = sub.add_parser("train", help="train a generator variant")
    train_p.add_argument("--config", required=True)
    train_p.add_argument("--variant", choices=["plain", "bp_clip", "bp_frame", "vae_template"])
    train_p.add_argument("--set", action="append", metavar="KEY=VALUE",
                         help="override a config entry by dotted key")
    train_p.set_defaults(func=cmd_train)

    vae_p = sub.add_parser("train-vae", help="train the gesture VAE")
    vae_p.add_argument("--config", required=True)
    vae_p.add_argument("--set", action="append", metavar="KEY=VALUE")
    vae_p.set_defaults(func=cmd_train_vae)

    infer_p = sub.add_parser("infer", help="generate gestures from audio")
    infer_p.add_argument("--ckpt", required=True)
    infer_p.add_argument("--audio", required=True)
    infer_p.add_argument("--template", default="zero",
                         help="sample:SEED | id:CLIP | zero | file:PATH")
    infer_p.add_argument("--out", required=True)
    infer_p.add_argument("--windowed", action="store_true",
                         help="64-frame windows with an 8-frame crossfade")
    infer_p.set_defaults(func=cmd_infer)

    eval_p = sub.add_parser("eval", help="compute metrics over a manifest")
    eval_p.add_argument("--ckpt", required=True)
    eval_p.add_argument("--manifest", required=True)
    eval_p.add_argument("--vae-ckpt", required=True)
    eval_p.add_argument("--out", required=True)
    eval_p.add_argument("--seed", type=int, default=0)
    eval_p.add_argument("--oracle", action="store_true",
                        help="evaluate the ground truth against itself")
    eval_p.set_defaults(func=cmd_eval)

    viz = sub.add_parser("viz", help="template-space analysis outputs")
    viz_sub = viz.add_subparsers(dest="viz_command", required=True)

    templates_p = viz_sub.add_parser("templates", help="PCA scatter of encoded templates")
    templates_p.add_argument("--vae-ckpt", required=True)
    templates_p.add_argument("--manifest", required=True)
    templates_p.add_argument("--ckpt", help="also encode this generator's outputs")
    templates_p.add_argument("--seed", type=int, default=0)
    templates_p.add_argument("--out-prefix", required=True)
    templates_p.set_defaults(func=cmd_viz_templates)

    factor_p = viz_sub.add_parser("factor", help="top semantic direction and opposite decodes")
    factor_p.add_argument("--vae-ckpt", required=True)
    factor_p.add_argument("--magnitude", type=float, default=2.0)
    factor_p.add_argument("--every", type=int, default=8)
    factor_p.add_argument("--out-prefix", required=True)
    factor_p.set_defaults(func=cmd_viz_factor)

    interp_p = viz_sub.add_parser("interp", help="interpolation sweep between two templates")
    interp_p.add_argument("--vae-ckpt")
    interp_p.add_argument("--ckpt")
    interp_p.add_argument("--audio")
    interp_p.add_argument("--from", dest="start", required=True,
                          help="zero | file:PATH | sample:SEED | id:CLIP")
    interp_p.add_argument("--to", dest="end", required=True)
    interp_p.add_argument("--steps", type=int, default=7)
    interp_p.add_argument("--every", type=int, default=8)
    interp_p.add_argument("--out-prefix", required=True)
    interp_p.set_defaults(func=cmd_viz_interp)

    return parser


def main(argv=None) -> int:
    try:
        _apply_thread_cap()
        parser = build_parser()
        args = parser.parse_args(argv)
        return args.func(args)
    except GestsynthError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
