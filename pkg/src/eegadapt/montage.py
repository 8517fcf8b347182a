"""Map an arbitrary source montage onto the fixed 23-channel encoder montage.

Two strategies are supported: picking the anatomically nearest source
electrode per target, or mixing a target's neighboring sources into one
composite signal by length-fitting each and concatenating on the time axis.
Lookups are by electrode label (after whitespace trimming), never by storage
position.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Recording, fit_length
from .errors import AlignmentError, DomainError, ManifestError

__all__ = [
    "MontageTarget",
    "MontageMap",
    "AlignmentMode",
    "BUILTIN_MONTAGE_TOKEN",
    "builtin_montage",
    "nearest_channel_select",
    "mix_channels",
    "parse_montage_text",
    "format_montage_text",
    "load_montage",
]

# Token accepted wherever a montage map path is expected.
BUILTIN_MONTAGE_TOKEN = "builtin-table1"

# Target labels of the 23-channel base-model montage, in canonical order.
TARGET_ORDER = (
    "FP1", "FP2", "F3", "F4", "C3", "C4", "P3", "P4", "O1", "O2",
    "F7", "F8", "T3", "T4", "T5", "T6", "A1", "A2", "FZ", "CZ",
    "PZ", "T1", "T2",
)

# Built-in source lists for a 128-channel extended 10-20 acquisition layout.
# The first source of each target is the single nearest electrode; the rest
# are its surrounding neighbors, in mixing order.
_BUILTIN_SOURCES = {
    "FP1": ("Fp1", "Afp1", "AF3", "AF7", "AFF5h"),
    "FP2": ("Fp2", "Afp2", "AF4", "AF8", "AFF6h"),
    "F3": ("F3", "F5", "F1", "FFC5h", "FFC3h"),
    "F4": ("F4", "F2", "F6", "FFC4h", "FFC6h"),
    "C3": ("C3", "C5", "C1", "CCP5h", "CCP3h"),
    "C4": ("C4", "C6", "C2", "CCP4h", "CCP6h"),
    "P3": ("P3", "P1", "P5", "CPP5h", "CPP3h"),
    "P4": ("P4", "P2", "P6", "CPP4h", "CPP6h"),
    "O1": ("O1", "POO1", "PO3", "PO7", "POO9h"),
    "O2": ("O2", "POO2", "PO4", "PO8", "POO10h"),
    "F7": ("F7", "F5", "F9", "FFT9h", "FFT7h"),
    "F8": ("F8", "F6", "F10", "FFT8h", "FFT10h"),
    "T3": ("T7", "TTP7h", "C5", "FTT7h", "FTT9h"),
    "T4": ("T8", "TTP8h", "C6", "FTT8h", "FTT10h"),
    "T5": ("TP7", "TTP7h", "CP5", "TPP7h", "TPP9h"),
    "T6": ("TP8", "TTP8h", "CP6", "TPP8h", "TPP10h"),
    "A1": ("TP9", "TP7", "T7", "FTT9h", "FT9"),
    "A2": ("TP10", "TP8", "T8", "FTT10h", "FT10"),
    "FZ": ("Fz", "AFF1h", "AFF2h", "FFC1h", "FFC2h"),
    "CZ": ("Cz", "FCC1h", "FCC2h", "CCP1h", "CCP2h"),
    "PZ": ("Pz", "CPP1h", "CPP2h", "POO1h", "PPO2h"),
    "T1": ("TTP7h", "C5", "TP7", "CP5", "CCP5h"),
    "T2": ("TTP8h", "C6", "TP8", "CP6", "CCP6h"),
}


@dataclass(frozen=True)
class MontageTarget:
    """One target channel and its ordered, nonempty source electrode list."""

    target_label: str
    sources: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "target_label", self.target_label.strip())
        sources = tuple(s.strip() for s in self.sources)
        if not sources or any(not s for s in sources):
            raise DomainError(f"target {self.target_label!r} needs nonempty sources")
        object.__setattr__(self, "sources", sources)


@dataclass(frozen=True)
class MontageMap:
    """Ordered mapping from the 23 target channels to source-label lists."""

    targets: tuple[MontageTarget, ...]

    def __post_init__(self):
        targets = tuple(self.targets)
        labels = [t.target_label for t in targets]
        if tuple(labels) != TARGET_ORDER:
            raise DomainError(
                "montage map must list exactly the 23 target channels "
                f"{TARGET_ORDER} in order, got {tuple(labels)}"
            )
        object.__setattr__(self, "targets", targets)

    def max_sources(self) -> int:
        return max(len(t.sources) for t in self.targets)


@dataclass(frozen=True)
class AlignmentMode:
    """Either nearest-source selection or composite mixing to ``target_len``."""

    kind: str  # "select" or "mix"
    target_len: int

    def __post_init__(self):
        if self.kind not in ("select", "mix"):
            raise DomainError(f"alignment kind must be 'select' or 'mix', got {self.kind!r}")
        if self.target_len < 1:
            raise DomainError(f"target_len must be >= 1, got {self.target_len}")

    def validate_for(self, montage: MontageMap) -> None:
        if self.kind == "mix" and self.target_len < montage.max_sources():
            raise DomainError(
                f"mix target_len {self.target_len} is below the largest source "
                f"count {montage.max_sources()}"
            )


def builtin_montage() -> MontageMap:
    """The built-in default map (token ``builtin-table1``)."""
    return MontageMap(
        targets=tuple(
            MontageTarget(label, _BUILTIN_SOURCES[label]) for label in TARGET_ORDER
        )
    )


def _row_lookup(rec: Recording) -> dict[str, int]:
    return {lab: i for i, lab in enumerate(rec.channel_labels)}


def nearest_channel_select(rec: Recording, montage: MontageMap,
                           target_len: int) -> Recording:
    """Build the 23-channel recording from each target's first source.

    Row i of the output is the first source electrode of target i, length
    fitted to ``target_len``. Missing electrodes raise AlignmentError naming
    the label.
    """
    rows = _row_lookup(rec)
    out = []
    for target in montage.targets:
        source = target.sources[0]
        if source not in rows:
            raise AlignmentError(
                f"recording has no electrode {source!r} needed for target "
                f"{target.target_label}"
            )
        out.append(fit_length(rec.data[rows[source]], target_len))
    return Recording(
        channel_labels=list(TARGET_ORDER),
        sample_rate_hz=rec.sample_rate_hz,
        data=np.stack(out),
        subject_id=rec.subject_id,
        label=rec.label,
    )


def mix_channels(rec: Recording, montage: MontageMap, target_len: int) -> Recording:
    """Build each target row as a time-axis concatenation of its sources.

    A target with k sources contributes floor(target_len / k) samples per
    source; the first (target_len mod k) sources get one extra sample so the
    segments sum exactly to target_len. Each segment is the source signal
    length-fitted to its segment length, concatenated in listed order.
    """
    rows = _row_lookup(rec)
    out = []
    for target in montage.targets:
        k = len(target.sources)
        if k > target_len:
            raise DomainError(
                f"target {target.target_label} has {k} sources but target_len "
                f"is only {target_len}"
            )
        base = target_len // k
        extra = target_len % k
        segments = []
        for j, source in enumerate(target.sources):
            if source not in rows:
                raise AlignmentError(
                    f"recording has no electrode {source!r} needed for target "
                    f"{target.target_label}"
                )
            seg_len = base + (1 if j < extra else 0)
            segments.append(fit_length(rec.data[rows[source]], seg_len))
        out.append(np.concatenate(segments))
    return Recording(
        channel_labels=list(TARGET_ORDER),
        sample_rate_hz=rec.sample_rate_hz,
        data=np.stack(out),
        subject_id=rec.subject_id,
        label=rec.label,
    )


def parse_montage_text(text: str) -> MontageMap:
    """Parse the plain-text map format: one ``TARGET: src1,src2,...`` per line."""
    targets = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise ManifestError(f"montage line {lineno} has no ':' separator: {raw!r}")
        label, _, rest = line.partition(":")
        sources = [s.strip() for s in rest.split(",") if s.strip()]
        if not sources:
            raise ManifestError(f"montage line {lineno} lists no sources: {raw!r}")
        targets.append(MontageTarget(label.strip(), tuple(sources)))
    return MontageMap(targets=tuple(targets))


def format_montage_text(montage: MontageMap) -> str:
    """Render a map in the plain-text format; round-trips parse_montage_text."""
    lines = [
        f"{t.target_label}: {','.join(t.sources)}" for t in montage.targets
    ]
    return "\n".join(lines) + "\n"


def load_montage(spec: str | Path) -> MontageMap:
    """Resolve a montage argument: the builtin token or a map file path."""
    if str(spec) == BUILTIN_MONTAGE_TOKEN:
        return builtin_montage()
    path = Path(spec)
    if not path.exists():
        raise ManifestError(f"montage map file not found: {path}")
    return parse_montage_text(path.read_text())
