"""Acoustic prompt generation: measured properties -> short text descriptions.

Each clip can be described five ways: by its emotion label alone, or by a
binned acoustic property ("low"/"high" pitch, intensity, speech rate,
articulation rate) prefixed to the label. Pairing one clip with every
enabled description is the augmentation step that turns one labeled clip
into up to five training pairs.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .acoustics import AcousticProfile
from .errors import MissingPitch


class PromptKind(enum.Enum):
    CLASS = "class"
    PITCH = "pitch"
    INTENSITY = "intensity"
    SPEECH_RATE = "speech-rate"
    ARTICULATION_RATE = "articulation-rate"


# fixed rendering and augmentation order
KIND_ORDER = (
    PromptKind.CLASS,
    PromptKind.PITCH,
    PromptKind.INTENSITY,
    PromptKind.SPEECH_RATE,
    PromptKind.ARTICULATION_RATE,
)

# every bin phrase the renderer can produce, keyed by kind; used by the
# retrieval-query parser to invert rendered prompts
BIN_PHRASES: dict[PromptKind, tuple[str, ...]] = {
    PromptKind.PITCH: (
        "low male pitch", "high male pitch",
        "low female pitch", "high female pitch",
        "low pitch", "high pitch",
    ),
    PromptKind.INTENSITY: ("low intensity", "high intensity"),
    PromptKind.SPEECH_RATE: ("low speech rate", "high speech rate"),
    PromptKind.ARTICULATION_RATE: (
        "low articulation rate", "high articulation rate",
    ),
}


@dataclass(frozen=True)
class Prompt:
    kind: PromptKind
    text: str


@dataclass(frozen=True)
class BinThresholds:
    """Cutoffs separating "low" from "high"; low means strictly below."""

    pitch_male_cutoff_hz: float = 132.5
    pitch_sex_boundary_hz: float = 180.0
    pitch_female_cutoff_hz: float = 210.0
    pitch_agnostic_cutoff_hz: float = 170.0
    intensity_cutoff_db: float = 60.0
    speech_rate_cutoff: float = 3.12
    articulation_rate_cutoff: float = 4.0

    def __post_init__(self):
        values = (
            self.pitch_male_cutoff_hz, self.pitch_sex_boundary_hz,
            self.pitch_female_cutoff_hz, self.pitch_agnostic_cutoff_hz,
            self.intensity_cutoff_db, self.speech_rate_cutoff,
            self.articulation_rate_cutoff,
        )
        if any(v <= 0 for v in values):
            raise ValueError("all cutoffs must be positive")
        if not (self.pitch_male_cutoff_hz < self.pitch_sex_boundary_hz
                < self.pitch_female_cutoff_hz):
            raise ValueError("pitch cutoffs must be ordered male < boundary "
                             "< female")


@dataclass(frozen=True)
class PromptPolicy:
    """Which prompt kinds a training run uses.

    With sex_aware_pitch on, pitch bins use the per-sex cutoffs whenever a
    clip's sex is known; otherwise (or when sex is unknown) the agnostic
    two-bin cutoff applies.
    """

    kinds: frozenset[PromptKind] = field(
        default_factory=lambda: frozenset(KIND_ORDER)
    )
    sex_aware_pitch: bool = True

    def __post_init__(self):
        if not self.kinds:
            raise ValueError("a prompt policy must enable at least one kind")

    @classmethod
    def parse(cls, name: str, sex_aware_pitch: bool = True) -> "PromptPolicy":
        """Build a policy from its CLI name (single kind or "augment")."""
        name = name.strip().lower()
        if name == "augment":
            return cls(frozenset(KIND_ORDER), sex_aware_pitch)
        for kind in PromptKind:
            if kind.value == name:
                return cls(frozenset([kind]), sex_aware_pitch)
        raise ValueError(f"unknown prompt policy: {name!r}")


POLICY_NAMES = tuple(k.value for k in KIND_ORDER) + ("augment",)


def normalize_label(label: str) -> str:
    """Lowercase, trim, and collapse whitespace; labels are free strings."""
    return " ".join(label.lower().split())


def _low_high(value: float, cutoff: float) -> str:
    # boundary rule everywhere: low iff strictly below the cutoff
    return "low" if value < cutoff else "high"


def bin_pitch(mean_pitch_hz: float | None, sex: str | None,
              t: BinThresholds | None = None) -> str:
    t = t or BinThresholds()
    if mean_pitch_hz is None or mean_pitch_hz <= 0:
        raise MissingPitch("clip has no voiced frames; skip the pitch prompt")
    if sex == "male":
        return f"{_low_high(mean_pitch_hz, t.pitch_male_cutoff_hz)} male pitch"
    if sex == "female":
        return (f"{_low_high(mean_pitch_hz, t.pitch_female_cutoff_hz)} "
                "female pitch")
    return f"{_low_high(mean_pitch_hz, t.pitch_agnostic_cutoff_hz)} pitch"


def bin_intensity(mean_intensity_db: float,
                  t: BinThresholds | None = None) -> str:
    t = t or BinThresholds()
    return f"{_low_high(mean_intensity_db, t.intensity_cutoff_db)} intensity"


def bin_speech_rate(rate: float, t: BinThresholds | None = None) -> str:
    t = t or BinThresholds()
    return f"{_low_high(rate, t.speech_rate_cutoff)} speech rate"


def bin_articulation_rate(rate: float, t: BinThresholds | None = None) -> str:
    t = t or BinThresholds()
    return (f"{_low_high(rate, t.articulation_rate_cutoff)} "
            "articulation rate")


def render_prompt(kind: PromptKind, profile: AcousticProfile, emotion: str,
                  sex: str | None = None,
                  policy: PromptPolicy | None = None,
                  t: BinThresholds | None = None) -> Prompt:
    """Render one prompt: the bare label for CLASS, "<bin> <label>" else."""
    t = t or BinThresholds()
    policy = policy or PromptPolicy()
    emotion = normalize_label(emotion)
    if kind is PromptKind.CLASS:
        return Prompt(kind, emotion)
    if kind is PromptKind.PITCH:
        effective_sex = sex if policy.sex_aware_pitch else None
        phrase = bin_pitch(profile.mean_pitch_hz, effective_sex, t)
    elif kind is PromptKind.INTENSITY:
        phrase = bin_intensity(profile.mean_intensity_db, t)
    elif kind is PromptKind.SPEECH_RATE:
        phrase = bin_speech_rate(profile.speech_rate, t)
    elif kind is PromptKind.ARTICULATION_RATE:
        phrase = bin_articulation_rate(profile.articulation_rate, t)
    else:  # pragma: no cover - exhaustive over PromptKind
        raise ValueError(f"unknown prompt kind: {kind}")
    return Prompt(kind, f"{phrase} {emotion}")


def augment_pairs(clip_id: str, profile: AcousticProfile, emotion: str,
                  sex: str | None = None,
                  policy: PromptPolicy | None = None,
                  t: BinThresholds | None = None) -> list[tuple[str, Prompt]]:
    """Pair a clip with every enabled prompt kind, in fixed kind order.

    The full policy yields five pairs; the pitch pair is silently omitted
    for clips with no voiced frames.
    """
    policy = policy or PromptPolicy()
    pairs = []
    for kind in KIND_ORDER:
        if kind not in policy.kinds:
            continue
        try:
            prompt = render_prompt(kind, profile, emotion, sex, policy, t)
        except MissingPitch:
            continue
        pairs.append((clip_id, prompt))
    return pairs
