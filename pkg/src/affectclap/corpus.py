"""Dataset machinery: manifests, synthetic corpora, and pair building.

Manifests are JSONL, one clip per line, so real datasets can be adapted
without code changes. The synthetic corpus generator emits burst trains
of harmonic tones whose pitch, intensity, burst count and phonation time
are known in closed form, which is what lets the DSP measurements be
tested against ground truth.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .acoustics import (
    AcousticProfile,
    AudioClip,
    compute_profile,
    load_wav,
    write_wav,
)
from .errors import DuplicateClipId, MalformedLine, MissingField
from .featurizers import FeaturizerConfig, encode_audio
from .model import TrainingPair
from .prompting import BinThresholds, PromptPolicy, augment_pairs
from . import featurizers

_SPLITS = ("train", "test")
_SEXES = ("male", "female")


@dataclass(frozen=True)
class ClipRecord:
    clip_id: str
    audio_path: str
    dataset: str
    split: str
    emotion: str
    sex: str | None = None

    def to_dict(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "audio_path": self.audio_path,
            "dataset": self.dataset,
            "split": self.split,
            "emotion": self.emotion,
            "sex": self.sex,
        }


def parse_manifest(path: str | Path) -> list[ClipRecord]:
    """Read and validate a JSONL manifest.

    Unknown fields are ignored; missing required fields, invalid values,
    and duplicate clip ids are rejected with the offending line number.
    """
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such manifest: {p}")
    records: list[ClipRecord] = []
    seen: set[str] = set()
    required = ("clip_id", "audio_path", "dataset", "split", "emotion")
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(),
                                  start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedLine(f"{p}:{lineno}: {exc}") from exc
        if not isinstance(obj, dict):
            raise MalformedLine(f"{p}:{lineno}: expected a JSON object")
        for name in required:
            if name not in obj or obj[name] is None or obj[name] == "":
                raise MissingField(f"{p}:{lineno}: missing field {name!r}")
        if obj["split"] not in _SPLITS:
            raise MalformedLine(
                f"{p}:{lineno}: split must be one of {_SPLITS}, "
                f"got {obj['split']!r}"
            )
        sex = obj.get("sex")
        if sex is not None and sex not in _SEXES:
            raise MalformedLine(
                f"{p}:{lineno}: sex must be male, female or null, "
                f"got {sex!r}"
            )
        clip_id = str(obj["clip_id"])
        if clip_id in seen:
            raise DuplicateClipId(f"{p}:{lineno}: duplicate clip_id "
                                  f"{clip_id!r}")
        seen.add(clip_id)
        records.append(ClipRecord(
            clip_id=clip_id,
            audio_path=str(obj["audio_path"]),
            dataset=str(obj["dataset"]),
            split=str(obj["split"]),
            emotion=str(obj["emotion"]),
            sex=sex,
        ))
    return records


def serialize_manifest(records: list[ClipRecord], path: str | Path) -> None:
    lines = [json.dumps(r.to_dict(), sort_keys=True) for r in records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- synthetic corpus --------------------------------------------------------

@dataclass(frozen=True)
class ClassArchetype:
    """Sampling ranges for one emotion class's burst trains."""

    f0_hz: tuple[float, float]
    amplitude: tuple[float, float]
    bursts_per_second: tuple[float, float]
    burst_duration_s: tuple[float, float]
    sex: str | None = None


@dataclass(frozen=True)
class SynthSpec:
    classes: dict[str, ClassArchetype]
    clips_per_class: int = 50
    duration_s: float = 2.0
    sample_rate: int = 22050
    seed: int = 0
    train_fraction: float = 0.8
    dataset: str = "synth"

    def __post_init__(self):
        if not self.classes:
            raise ValueError("spec needs at least one class")
        for label, arch in self.classes.items():
            for name, (lo, hi) in (
                ("f0_hz", arch.f0_hz),
                ("amplitude", arch.amplitude),
                ("bursts_per_second", arch.bursts_per_second),
                ("burst_duration_s", arch.burst_duration_s),
            ):
                if not (0 < lo < hi):
                    raise ValueError(
                        f"class {label!r}: {name} range must satisfy "
                        f"0 < lo < hi, got ({lo}, {hi})"
                    )
            if arch.bursts_per_second[0] * self.duration_s < 0.5:
                raise ValueError(
                    f"class {label!r}: parameters must produce at least "
                    "one burst per clip"
                )

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        classes = {
            label: ClassArchetype(
                f0_hz=tuple(a["f0_hz"]),
                amplitude=tuple(a["amplitude"]),
                bursts_per_second=tuple(a["bursts_per_second"]),
                burst_duration_s=tuple(a["burst_duration_s"]),
                sex=a.get("sex"),
            )
            for label, a in d["classes"].items()
        }
        kwargs = {k: d[k] for k in (
            "clips_per_class", "duration_s", "sample_rate", "seed",
            "train_fraction", "dataset",
        ) if k in d}
        return cls(classes=classes, **kwargs)


# Archetypes are placed so that every class is identified by at least one
# acoustically unambiguous range while other properties straddle the
# binning cutoffs, making prompt bins informative beyond the class label.
DEFAULT_CLASSES: dict[str, ClassArchetype] = {
    "anger": ClassArchetype(
        f0_hz=(215.0, 255.0),            # high pitch, identifies the class
        amplitude=(0.015, 0.075),        # straddles the 60 dB cutoff
        bursts_per_second=(2.7, 3.6),    # straddles 3.12 syll/s
        burst_duration_s=(0.20, 0.27),   # articulation straddles 4 syll/s
    ),
    "happy": ClassArchetype(
        f0_hz=(145.0, 195.0),            # straddles the 170 Hz cutoff
        amplitude=(0.15, 0.35),          # loud, identifies the class
        bursts_per_second=(3.8, 4.8),
        burst_duration_s=(0.10, 0.15),
    ),
    "sad": ClassArchetype(
        f0_hz=(100.0, 128.0),
        amplitude=(0.015, 0.04),
        bursts_per_second=(1.4, 2.2),    # slow, identifies the class
        burst_duration_s=(0.20, 0.30),   # articulation straddles 4 syll/s
    ),
    "neutral": ClassArchetype(
        f0_hz=(132.0, 162.0),            # low pitch, above sad's band
        amplitude=(0.015, 0.075),        # straddles the 60 dB cutoff
        bursts_per_second=(2.6, 3.6),    # straddles 3.12 syll/s
        burst_duration_s=(0.15, 0.20),
    ),
}

_MIN_GAP_S = 0.04
_RAMP_S = 0.005
_HARMONIC_GAINS = (1.0, 0.5, 0.25)   # fundamental, -6 dB, -12 dB
_PEAK_NORM = sum(_HARMONIC_GAINS)


@dataclass(frozen=True)
class SynthGroundTruth:
    clip_id: str
    emotion: str
    f0_hz: float
    amplitude_db: float
    burst_count: int
    phonation_time_s: float

    def to_dict(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "emotion": self.emotion,
            "f0_hz": self.f0_hz,
            "amplitude_db": self.amplitude_db,
            "burst_count": self.burst_count,
            "phonation_time_s": self.phonation_time_s,
        }


def _render_clip(arch: ClassArchetype, spec: SynthSpec,
                 rng: np.random.Generator) -> tuple[np.ndarray, dict]:
    sr = spec.sample_rate
    n_samples = int(round(spec.duration_s * sr))
    samples = np.zeros(n_samples)

    f0 = rng.uniform(*arch.f0_hz)
    amp = rng.uniform(*arch.amplitude)
    rate = rng.uniform(*arch.bursts_per_second)
    n_bursts = max(1, int(round(rate * spec.duration_s)))
    period = spec.duration_s / n_bursts
    dur_hi = min(arch.burst_duration_s[1], period - _MIN_GAP_S - 0.01)
    dur_lo = min(arch.burst_duration_s[0], dur_hi)
    dur = rng.uniform(dur_lo, dur_hi)

    total_burst_samples = 0
    for k in range(n_bursts):
        offset_max = max(0.011, period - dur - _MIN_GAP_S)
        offset = rng.uniform(0.01, offset_max)
        start = int(round((k * period + offset) * sr))
        length = int(round(dur * sr))
        if start + length > n_samples:
            length = n_samples - start
        t = np.arange(length) / sr
        tone = np.zeros(length)
        for h, gain in enumerate(_HARMONIC_GAINS, start=1):
            tone += gain * np.sin(2 * math.pi * h * f0 * t
                                  + rng.uniform(0, 2 * math.pi))
        tone *= amp / _PEAK_NORM
        ramp_n = min(int(round(_RAMP_S * sr)), length // 2)
        if ramp_n > 0:
            ramp = 0.5 * (1 - np.cos(
                math.pi * np.arange(ramp_n) / ramp_n))
            tone[:ramp_n] *= ramp
            tone[-ramp_n:] *= ramp[::-1]
        samples[start:start + length] = tone
        total_burst_samples += length

    burst_mask = samples != 0.0
    if burst_mask.any():
        rms = float(np.sqrt(np.mean(samples[burst_mask] ** 2)))
    else:  # pragma: no cover - spec validation forbids burstless clips
        rms = 0.0
    amplitude_db = 20.0 * math.log10(max(rms, 1e-12) / 2e-5)
    truth = {
        "f0_hz": f0,
        "amplitude_db": amplitude_db,
        "burst_count": n_bursts,
        "phonation_time_s": total_burst_samples / sr,
    }
    return samples, truth


def synth_corpus(
    spec: SynthSpec, out_dir: str | Path
) -> tuple[list[ClipRecord], list[SynthGroundTruth]]:
    """Generate WAVs, a manifest, and a ground-truth JSONL, deterministically.

    Writes <clip_id>.wav files plus manifest.jsonl and ground_truth.jsonl
    into out_dir; the same spec (same seed) reproduces identical bytes.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    records: list[ClipRecord] = []
    truths: list[SynthGroundTruth] = []
    n_train = int(round(spec.train_fraction * spec.clips_per_class))

    for label in sorted(spec.classes):
        arch = spec.classes[label]
        for i in range(spec.clips_per_class):
            clip_id = f"{spec.dataset}_{label}_{i:04d}"
            samples, truth = _render_clip(arch, spec, rng)
            write_wav(out / f"{clip_id}.wav", samples, spec.sample_rate)
            records.append(ClipRecord(
                clip_id=clip_id,
                audio_path=f"{clip_id}.wav",
                dataset=spec.dataset,
                split="train" if i < n_train else "test",
                emotion=label,
                sex=arch.sex,
            ))
            truths.append(SynthGroundTruth(
                clip_id=clip_id, emotion=label, **truth))

    serialize_manifest(records, out / "manifest.jsonl")
    gt_lines = [json.dumps(t.to_dict(), sort_keys=True) for t in truths]
    (out / "ground_truth.jsonl").write_text("\n".join(gt_lines) + "\n",
                                            encoding="utf-8")
    return records, truths


# -- preparation for training and evaluation --------------------------------

@dataclass(frozen=True)
class PreparedClip:
    """A manifest record with its measured profile and audio features."""

    clip_id: str
    dataset: str
    split: str
    emotion: str
    sex: str | None
    profile: AcousticProfile
    audio_vec: np.ndarray


def prepare_clips(records: list[ClipRecord], root: str | Path,
                  cfg: FeaturizerConfig | None = None) -> list[PreparedClip]:
    """Load, profile and featurize every manifest record.

    Audio paths are resolved relative to root (usually the manifest's
    directory). Pure per clip, so callers may parallelize if they wish.
    """
    cfg = cfg or FeaturizerConfig()
    root = Path(root)
    prepared = []
    for rec in records:
        clip = load_wav(root / rec.audio_path)
        clip = AudioClip(id=rec.clip_id, samples=clip.samples,
                         sample_rate=clip.sample_rate)
        profile = compute_profile(clip, cfg.profile)
        prepared.append(PreparedClip(
            clip_id=rec.clip_id,
            dataset=rec.dataset,
            split=rec.split,
            emotion=rec.emotion,
            sex=rec.sex,
            profile=profile,
            audio_vec=encode_audio(clip, profile, cfg),
        ))
    return prepared


def build_training_pairs(
    clips: list[PreparedClip],
    policy: PromptPolicy | None = None,
    thresholds: BinThresholds | None = None,
    cfg: FeaturizerConfig | None = None,
) -> list[TrainingPair]:
    """Render prompts for every clip and attach feature vectors.

    Identical prompt texts are encoded once; the per-kind order within a
    clip follows the fixed prompt order, clips keep manifest order.
    """
    cfg = cfg or FeaturizerConfig()
    text_cache: dict[str, np.ndarray] = {}
    pairs: list[TrainingPair] = []
    for clip in clips:
        for clip_id, prompt in augment_pairs(
            clip.clip_id, clip.profile, clip.emotion, clip.sex,
            policy, thresholds,
        ):
            if prompt.text not in text_cache:
                text_cache[prompt.text] = featurizers.encode_text(
                    prompt.text, cfg)
            pairs.append(TrainingPair(
                clip_id=clip_id,
                kind=prompt.kind.value,
                text=prompt.text,
                audio_vec=clip.audio_vec,
                text_vec=text_cache[prompt.text],
            ))
    return pairs


def pairs_to_jsonl(pairs: list[TrainingPair], path: str | Path) -> None:
    lines = [
        json.dumps(
            {"clip_id": p.clip_id, "kind": p.kind, "text": p.text},
            sort_keys=True,
        )
        for p in pairs
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def profiles_to_jsonl(profiles: dict[str, AcousticProfile],
                      path: str | Path) -> None:
    """One JSON object per clip, absent pitch encoded as null."""
    lines = []
    for clip_id in profiles:
        obj = {"clip_id": clip_id, **profiles[clip_id].to_dict()}
        lines.append(json.dumps(obj, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def profiles_from_jsonl(path: str | Path) -> dict[str, AcousticProfile]:
    result: dict[str, AcousticProfile] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        result[obj["clip_id"]] = AcousticProfile.from_dict(obj)
    return result
