"""Command-line surface tying the pipeline together.

Subcommands: synth, preprocess, align, train, eval, extract, zeroshot.
Every run writes a reproducibility header (all flags, seed, versions) into
its output files, and identical flags plus an identical seed produce
byte-identical outputs in serial mode.
"""

from __future__ import annotations

import argparse
import hashlib
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .adapter import default_adapter_config
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .encoder import BfmConfig, EmbeddingBatch
from .errors import ConfigurationError, PipelineError
from .fileio import read_embeddings_text, write_embeddings_text
from .manifest import load_manifest, split_subject_independent
from .model import build_classifier
from .montage import MontageMap, format_montage_text, load_montage
from .pipeline import (
    FilterSettings,
    WindowSet,
    align_window_set,
    check_fingerprint,
    load_window_set,
    preprocess_manifest,
    save_window_set,
)
from .synthetic import SynthSpec, write_synthetic_dataset
from .training import (
    LabeledSet,
    TrainConfig,
    evaluate,
    format_metrics_report,
    predict,
    train_loop,
)
from .zeroshot import ZeroShotProtocol, run_zeroshot, subject_aggregate

MODES = ("adapter", "select", "mix", "raw")


def repro_header(command: str, args: argparse.Namespace) -> list[str]:
    lines = [
        f"eegadapt {__version__}",
        f"command = {command}",
        f"python = {platform.python_version()}",
        f"numpy = {np.__version__}",
        f"scipy = {scipy.__version__}",
    ]
    for key in sorted(vars(args)):
        if key == "func":
            continue
        lines.append(f"flag.{key} = {getattr(args, key)!r}")
    return lines


def montage_identity(montage: MontageMap) -> str:
    """Content hash naming a montage independent of where it was loaded from."""
    text = format_montage_text(montage).encode("utf-8")
    return "sha256:" + hashlib.sha256(text).hexdigest()[:16]


def _filters_from_args(args) -> FilterSettings:
    return FilterSettings(
        notch_hz=args.notch,
        notch_q=args.notch_q,
        band_low_hz=args.band_low,
        band_high_hz=args.band_high,
        band_order=args.order,
    )


def _filters_from_fingerprint(fp: dict) -> FilterSettings:
    return FilterSettings(
        notch_hz=fp["notch_hz"],
        notch_q=fp["notch_q"],
        band_low_hz=fp["band_low_hz"],
        band_high_hz=fp["band_high_hz"],
        band_order=fp["band_order"],
    )


def _write_text(path: str | None, text: str) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _add_filter_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--notch", type=float, default=50.0,
                   help="notch center frequency in Hz")
    p.add_argument("--notch-q", type=float, default=30.0,
                   help="notch quality factor")
    p.add_argument("--band-low", type=float, default=0.1,
                   help="bandpass low cutoff in Hz")
    p.add_argument("--band-high", type=float, default=75.0,
                   help="bandpass high cutoff in Hz")
    p.add_argument("--order", type=int, default=4,
                   help="Butterworth bandpass order")
    p.add_argument("--window", type=int, default=128,
                   help="non-overlapping window length in samples")


# ---------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    spec = SynthSpec(
        num_classes=args.classes,
        channels=args.channels,
        timesteps=args.timesteps,
        sample_rate_hz=args.fs,
        noise=args.noise,
        counts=(args.train, args.val, args.test),
        subjects=(args.train_subjects, args.val_subjects, args.test_subjects),
        seed=args.seed,
        label_mode=args.labels,
    )
    manifest_path = write_synthetic_dataset(args.out, spec)
    print(f"wrote {manifest_path}")
    return 0


def cmd_preprocess(args) -> int:
    manifest = load_manifest(args.manifest)
    wset = preprocess_manifest(manifest, _filters_from_args(args), args.window)
    header = {"repro": repro_header("preprocess", args)}
    save_window_set(args.out, wset, header=header)
    print(f"wrote {args.out}: {len(wset)} windows of shape "
          f"{wset.data.shape[1]}x{wset.data.shape[2]}")
    return 0


def cmd_align(args) -> int:
    wset = load_window_set(args.windows)
    if args.mode == "none":
        save_window_set(args.out, wset, header={"repro": repro_header("align", args)})
        print(f"wrote {args.out} (pass-through)")
        return 0
    montage = load_montage(args.montage)
    target_len = args.target_len or wset.data.shape[2]
    aligned = align_window_set(wset, args.mode, montage,
                               montage_identity(montage), target_len)
    save_window_set(args.out, aligned, header={"repro": repro_header("align", args)})
    print(f"wrote {args.out}: {len(aligned)} windows of shape 23x{target_len}")
    return 0


def _resolve_montage(args, manifest) -> MontageMap:
    spec = args.montage
    if spec is None:
        spec = manifest.montage if manifest is not None else "builtin-table1"
        if manifest is not None and spec != "builtin-table1":
            candidate = manifest.base_dir / spec
            if candidate.exists():
                spec = str(candidate)
    return load_montage(spec)


def _train_window_set(args) -> tuple[WindowSet, object]:
    if bool(args.windows) == bool(args.manifest):
        raise ConfigurationError("pass exactly one of --windows or --manifest")
    if args.windows:
        return load_window_set(args.windows), None
    manifest = load_manifest(args.manifest)
    if args.auto_split:
        fractions = [float(v) for v in args.auto_split.split(",")]
        manifest = split_subject_independent(manifest, fractions, seed=args.seed)
    return preprocess_manifest(manifest, _filters_from_args(args), args.window), manifest


def _subset_classes(wset: WindowSet, train_classes: str | None):
    """Restrict to a class subset and densify labels for the head."""
    if not train_classes:
        return wset.labels, dict(wset.classes), np.ones(len(wset), dtype=bool)
    keep = sorted({int(v) for v in train_classes.split(",")})
    index_to_name = {v: k for k, v in wset.classes.items()}
    unknown = [c for c in keep if c not in index_to_name]
    if unknown:
        raise ConfigurationError(f"--train-classes indices {unknown} not in manifest")
    remap = {old: new for new, old in enumerate(keep)}
    mask = np.isin(wset.labels, keep)
    labels = np.array([remap[int(v)] for v in wset.labels[mask]], dtype=np.int64)
    classes = {index_to_name[old]: new for old, new in remap.items()}
    full = np.full(len(wset), -1, dtype=np.int64)
    full[mask] = labels
    return full, classes, mask


def _choose_adapter_steps(in_timesteps: int, patch_len: int) -> int:
    cand = ((in_timesteps - 16) // patch_len) * patch_len
    while cand >= patch_len:
        try:
            default_adapter_config(1, in_timesteps, out_timesteps=cand)
            return cand
        except ConfigurationError:
            cand -= patch_len
    raise ConfigurationError(
        f"no adapter output length fits {in_timesteps} input steps with "
        f"patch length {patch_len}"
    )


def cmd_train(args) -> int:
    wset, manifest = _train_window_set(args)

    if args.mode in ("select", "mix"):
        if wset.fingerprint.get("alignment") == "none":
            montage = _resolve_montage(args, manifest)
            target_len = args.target_len or wset.data.shape[2]
            wset = align_window_set(wset, args.mode, montage,
                                    montage_identity(montage), target_len)
        elif wset.fingerprint.get("alignment") != args.mode:
            raise ConfigurationError(
                f"window set is aligned with mode "
                f"{wset.fingerprint.get('alignment')!r}, not {args.mode!r}"
            )
    wset.require_assigned()

    labels, classes, mask = _subset_classes(wset, args.train_classes)
    num_classes = len(classes)
    n, channels, timesteps = wset.data.shape

    adapter_cfg = None
    if args.mode == "adapter":
        steps = args.adapter_steps or _choose_adapter_steps(timesteps, args.patch_len)
        adapter_cfg = default_adapter_config(
            channels, timesteps, out_channels=23, out_timesteps=steps,
            hidden_maps=args.hidden_maps,
        )
        enc_channels, enc_steps, vocab = 23, steps, 23
    elif args.mode == "raw":
        if channels > 128:
            raise ConfigurationError(
                f"raw mode supports at most 128 channels, got {channels}"
            )
        enc_channels, enc_steps, vocab = channels, timesteps, 128
    else:
        enc_channels, enc_steps, vocab = channels, timesteps, 23
    if enc_steps % args.patch_len != 0:
        raise ConfigurationError(
            f"{enc_steps} timesteps not divisible by patch length "
            f"{args.patch_len}; adjust --window/--target-len/--adapter-steps"
        )

    encoder_cfg = BfmConfig(
        num_channels=enc_channels,
        num_classes=num_classes,
        patch_len=args.patch_len,
        embed_dim=args.embed_dim,
        num_layers=args.encoder_layers,
        num_heads=args.heads,
        channel_vocab=vocab,
        max_patches=enc_steps // args.patch_len,
    )
    model = build_classifier(encoder_cfg, adapter_cfg, seed=args.seed)

    def subset(split):
        split_mask = mask & np.array([s == split for s in wset.splits])
        return LabeledSet(
            x=wset.data[split_mask],
            y=labels[split_mask],
            subjects=[s for s, m in zip(wset.subjects, split_mask) if m],
        )

    train_set, val_set = subset("train"), subset("val")
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        learning_rate=args.lr,
        weight_decay=args.weight_decay,
        optimizer=args.optimizer,
        seed=args.seed,
        freeze_bfm=args.freeze_bfm,
    )
    result = train_loop(model, train_set, val_set, cfg)

    fingerprint = dict(wset.fingerprint)
    fingerprint["mode"] = args.mode
    ckpt = Checkpoint.from_model(model, classes, fingerprint)
    save_checkpoint(args.out_checkpoint, ckpt)

    header = repro_header("train", args)
    log_path = Path(str(args.out_checkpoint) + ".log.csv")
    log_lines = [f"# {line}" for line in header]
    log_lines.append("epoch,train_loss,train_acc,val_loss,val_acc")
    for ep in result.epochs:
        log_lines.append(
            f"{ep.epoch},{ep.train_loss!r},{ep.train_acc!r},"
            f"{ep.val_loss!r},{ep.val_acc!r}"
        )
    log_path.write_text("\n".join(log_lines) + "\n")

    val_report = evaluate(model, val_set)
    metrics_path = Path(str(args.out_checkpoint) + ".metrics.txt")
    metrics_path.write_text(format_metrics_report(
        val_report,
        header_lines=[f"# {line}" for line in header]
        + [f"# best_epoch = {result.best_epoch}", "# split = val"],
    ))
    print(f"wrote {args.out_checkpoint} (best epoch {result.best_epoch}, "
          f"val accuracy {result.best_val_accuracy:.4f})")
    print(f"wrote {log_path}")
    print(f"wrote {metrics_path}")
    return 0


def _eval_window_set(args, ckpt: Checkpoint) -> WindowSet:
    """Load or rebuild data with the checkpoint's preprocessing settings."""
    if bool(args.windows) == bool(args.manifest):
        raise ConfigurationError("pass exactly one of --windows or --manifest")
    fp = dict(ckpt.fingerprint)
    mode = fp.pop("mode", None)
    if args.windows:
        wset = load_window_set(args.windows)
        if fp.get("alignment") in ("select", "mix") \
                and wset.fingerprint.get("alignment") == "none":
            raise ConfigurationError(
                "checkpoint was trained on aligned data; align the window "
                "set first or pass --manifest"
            )
        check_fingerprint(fp, wset.fingerprint)
        return wset
    manifest = load_manifest(args.manifest)
    filters = _filters_from_fingerprint(fp)
    wset = preprocess_manifest(manifest, filters, fp["window_len"])
    if fp.get("alignment") in ("select", "mix"):
        montage = _resolve_montage(args, manifest)
        wset = align_window_set(wset, fp["alignment"], montage,
                                montage_identity(montage), fp["target_len"])
    check_fingerprint(fp, wset.fingerprint)
    return wset


def _remap_to_checkpoint_classes(wset: WindowSet, ckpt: Checkpoint):
    """Map data label indices onto the checkpoint's head indices."""
    name_by_data_idx = {v: k for k, v in wset.classes.items()}
    lookup = np.full(max(name_by_data_idx) + 1, -1, dtype=np.int64)
    for idx, name in name_by_data_idx.items():
        if name in ckpt.classes:
            lookup[idx] = ckpt.classes[name]
    remapped = lookup[wset.labels]
    mask = remapped >= 0
    return mask, remapped


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    wset = _eval_window_set(args, ckpt)
    mask, remapped = _remap_to_checkpoint_classes(wset, ckpt)
    if args.split != "all":
        mask = mask & np.array([s == args.split for s in wset.splits])
    if not mask.any():
        raise ConfigurationError(
            f"split {args.split!r} holds no samples of the checkpoint's classes"
        )
    data = LabeledSet(
        x=wset.data[mask],
        y=remapped[mask],
        subjects=[s for s, m in zip(wset.subjects, mask) if m],
    )
    model = ckpt.to_model()
    report = evaluate(model, data)
    header = [f"# {line}" for line in repro_header("eval", args)]
    text = format_metrics_report(report, header_lines=header)
    if args.subject_level:
        preds, probs = predict(model, data)
        subject_preds, subject_report = subject_aggregate(
            data.subjects, preds, probs, data.y
        )
        lines = ["", "subject-level:"]
        lines.append(format_metrics_report(subject_report).rstrip("\n"))
        lines.append("subjects:")
        for sp in subject_preds:
            votes = ",".join(f"{k}:{v}" for k, v in sorted(sp.vote_histogram.items()))
            lines.append(f"  {sp.subject_id} label={sp.aggregated_label} votes={votes}")
        text += "\n".join(lines) + "\n"
    _write_text(args.out, text)
    return 0


def cmd_extract(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    wset = _eval_window_set(args, ckpt)
    if args.split == "all":
        mask = np.ones(len(wset), dtype=bool)
    else:
        mask = np.array([s == args.split for s in wset.splits])
    if not mask.any():
        raise ConfigurationError(f"split {args.split!r} is empty")
    model = ckpt.to_model()
    x = wset.data[mask]
    embeddings = np.empty((x.shape[0], ckpt.encoder_config.embed_dim))
    for start in range(0, x.shape[0], 64):
        stop = min(start + 64, x.shape[0])
        embeddings[start:stop] = model.embed_batch(x[start:stop])
    write_embeddings_text(
        args.out_embeddings,
        embeddings,
        wset.labels[mask],
        [s for s, m in zip(wset.subjects, mask) if m],
        header_lines=repro_header("extract", args),
    )
    print(f"wrote {args.out_embeddings}: {x.shape[0]} embeddings of dim "
          f"{ckpt.encoder_config.embed_dim}")
    return 0


def cmd_zeroshot(args) -> int:
    emb, labels, subjects = read_embeddings_text(args.embeddings)
    held = frozenset(int(v) for v in args.held_out_classes.split(","))
    protocol = ZeroShotProtocol(
        held_out_classes=held,
        fit_fraction=args.fit_fraction,
        seed=args.seed,
    )
    batch = EmbeddingBatch(embeddings=emb, labels=labels, subject_ids=subjects)
    result = run_zeroshot(batch, protocol, knn_k=args.knn_k)
    lines = [f"# {line}" for line in repro_header("zeroshot", args)]
    lines.append("zeroshot-report v1")
    lines.append("classifier accuracy")
    for name in ("svm", "knn", "kmeans"):
        lines.append(f"{name} {result[name]!r}")
    _write_text(args.out, "\n".join(lines) + "\n")
    return 0


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eegadapt",
        description="Montage-agnostic EEG classification pipeline.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset + manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--timesteps", type=int, default=256)
    p.add_argument("--fs", type=float, default=200.0)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--train", type=int, default=800)
    p.add_argument("--val", type=int, default=200)
    p.add_argument("--test", type=int, default=200)
    p.add_argument("--train-subjects", type=int, default=8)
    p.add_argument("--val-subjects", type=int, default=2)
    p.add_argument("--test-subjects", type=int, default=2)
    p.add_argument("--labels", choices=("per-recording", "per-subject"),
                   default="per-recording")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="filter and window a manifest")
    p.add_argument("--manifest", required=True)
    _add_filter_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("align", help="map windows onto the 23-channel montage")
    p.add_argument("--windows", required=True)
    p.add_argument("--mode", choices=("select", "mix", "none"), default="select")
    p.add_argument("--montage", default="builtin-table1")
    p.add_argument("--target-len", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("train", help="train a classifier end to end")
    p.add_argument("--manifest")
    p.add_argument("--windows")
    p.add_argument("--mode", choices=MODES, required=True)
    _add_filter_flags(p)
    p.add_argument("--montage", default=None)
    p.add_argument("--target-len", type=int, default=None)
    p.add_argument("--adapter-steps", type=int, default=None)
    p.add_argument("--hidden-maps", type=int, default=64)
    p.add_argument("--embed-dim", type=int, default=32)
    p.add_argument("--encoder-layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--patch-len", type=int, default=16)
    p.add_argument("--train-classes", default=None,
                   help="comma-separated class indices to train on")
    p.add_argument("--auto-split", default=None,
                   help="subject-independent fractions, e.g. 0.6,0.2,0.2")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--optimizer", choices=("adamw", "sgd"), default="adamw")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--freeze-bfm", action="store_true")
    p.add_argument("--out-checkpoint", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--windows")
    p.add_argument("--manifest")
    p.add_argument("--montage", default=None)
    p.add_argument("--split", choices=("train", "val", "test", "all"),
                   default="test")
    p.add_argument("--subject-level", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("extract", help="export pooled embeddings as text")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--windows")
    p.add_argument("--manifest")
    p.add_argument("--montage", default=None)
    p.add_argument("--split", choices=("train", "val", "test", "all"),
                   default="all")
    p.add_argument("--out-embeddings", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("zeroshot", help="classify held-out-class embeddings")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--held-out-classes", required=True,
                   help="comma-separated class indices")
    p.add_argument("--fit-fraction", type=float, default=0.5)
    p.add_argument("--knn-k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_zeroshot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (PipelineError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
