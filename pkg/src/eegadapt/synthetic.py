"""Synthetic multichannel datasets standing in for proprietary corpora.

Each class is a mixture of sinusoids at a class-specific fundamental (plus
a 1.5x harmonic) with per-channel phase and amplitude jitter and additive
Gaussian noise. Classes are separable by spectral content, which is what
the temporal-convolution front end is built to pick up.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fileio import write_recording_binary
from .montage import TARGET_ORDER, MontageMap, MontageTarget, format_montage_text

__all__ = ["SynthSpec", "class_frequencies", "synth_recording",
           "generate_arrays", "synthetic_montage", "write_synthetic_dataset"]


@dataclass(frozen=True)
class SynthSpec:
    num_classes: int = 4
    channels: int = 16
    timesteps: int = 256
    sample_rate_hz: float = 200.0
    amplitude: float = 1.0
    noise: float = 0.3
    counts: tuple = (800, 200, 200)
    subjects: tuple = (8, 2, 2)
    seed: int = 0
    # "per-recording" rotates classes within a subject (stimulus decoding);
    # "per-subject" fixes one class per subject (clinical diagnosis).
    label_mode: str = "per-recording"


def class_frequencies(num_classes: int) -> np.ndarray:
    """Fundamentals spread over 6..38 Hz; harmonics stay inside the band
    and clear of the 50 Hz notch."""
    if num_classes == 1:
        return np.array([20.0])
    return 6.0 + np.arange(num_classes) * (32.0 / (num_classes - 1))


def synth_recording(rng: np.random.Generator, class_id: int,
                    spec: SynthSpec, subject_phase: float = 0.0) -> np.ndarray:
    freq = class_frequencies(spec.num_classes)[class_id]
    t = np.arange(spec.timesteps) / spec.sample_rate_hz
    data = np.empty((spec.channels, spec.timesteps))
    for ch in range(spec.channels):
        amp = spec.amplitude * rng.uniform(0.8, 1.2)
        phase = rng.uniform(0.0, 2.0 * np.pi) + subject_phase
        phase2 = rng.uniform(0.0, 2.0 * np.pi)
        data[ch] = (
            amp * np.sin(2.0 * np.pi * freq * t + phase)
            + 0.5 * amp * np.sin(2.0 * np.pi * 1.5 * freq * t + phase2)
            + rng.normal(0.0, spec.noise, spec.timesteps)
        )
    return data


def _split_plan(spec: SynthSpec):
    """Deterministic (split, subject, class) plan, balanced per split."""
    plan = []
    subject_counter = 0
    for split, count, n_subj in zip(("train", "val", "test"),
                                    spec.counts, spec.subjects):
        sids = [f"s{subject_counter + j:02d}" for j in range(n_subj)]
        for i in range(count):
            subj_idx = i % n_subj
            if spec.label_mode == "per-subject":
                cls = (subject_counter + subj_idx) % spec.num_classes
            else:
                cls = i % spec.num_classes
            plan.append((split, sids[subj_idx], cls))
        subject_counter += n_subj
    return plan


def generate_arrays(spec: SynthSpec):
    """In-memory dataset: {split: (x (N, C, T), y (N,), subjects)}."""
    rng = np.random.default_rng(spec.seed)
    subject_phase = {}
    out = {s: ([], [], []) for s in ("train", "val", "test")}
    for split, sid, cls in _split_plan(spec):
        if sid not in subject_phase:
            subject_phase[sid] = rng.uniform(0.0, 2.0 * np.pi)
        rec = synth_recording(rng, cls, spec, subject_phase[sid])
        xs, ys, subs = out[split]
        xs.append(rec)
        ys.append(cls)
        subs.append(sid)
    return {
        split: (np.stack(xs), np.array(ys, dtype=np.int64), subs)
        for split, (xs, ys, subs) in out.items()
    }


def synthetic_montage(channels: int, sources_per_target: int = 3) -> MontageMap:
    """A montage map whose sources are the synthetic channel labels."""
    labels = [f"ch{c:02d}" for c in range(channels)]
    targets = []
    for i, target in enumerate(TARGET_ORDER):
        sources = tuple(
            labels[(i * (j + 1) + j) % channels] for j in range(sources_per_target)
        )
        # Deduplicate while keeping order; a target must not repeat a source.
        seen = []
        for s in sources:
            if s not in seen:
                seen.append(s)
        targets.append(MontageTarget(target, tuple(seen)))
    return MontageMap(targets=tuple(targets))


def write_synthetic_dataset(out_dir: str | Path, spec: SynthSpec) -> Path:
    """Write recordings, a montage map, and a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    rec_dir = out_dir / "recordings"
    rec_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    channel_labels = [f"ch{c:02d}" for c in range(spec.channels)]
    classes = {f"class{c}": c for c in range(spec.num_classes)}

    subject_phase = {}
    entries = []
    for i, (split, sid, cls) in enumerate(_split_plan(spec)):
        if sid not in subject_phase:
            subject_phase[sid] = rng.uniform(0.0, 2.0 * np.pi)
        rec = synth_recording(rng, cls, spec, subject_phase[sid])
        rel = f"recordings/rec{i:05d}.raw"
        write_recording_binary(out_dir / rel, rec)
        entries.append({
            "path": rel,
            "format": "f32-binary",
            "channel_labels": channel_labels,
            "sample_rate_hz": spec.sample_rate_hz,
            "label": f"class{cls}",
            "subject_id": sid,
            "split": split,
        })

    montage_path = out_dir / "montage_map.txt"
    montage_path.write_text(format_montage_text(synthetic_montage(spec.channels)))
    manifest = {
        "classes": classes,
        "montage": "montage_map.txt",
        "recordings": entries,
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest_path
