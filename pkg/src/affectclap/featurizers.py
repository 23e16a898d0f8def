"""Deterministic, non-learned feature extractors for audio and text.

These stand in for frozen pretrained encoders: the audio featurizer emits
log-mel band statistics plus normalized profile scalars, the text
featurizer a signed hashed bag-of-words. Both are pure functions of their
inputs and bit-reproducible across platforms, which is what makes every
downstream training and evaluation test exactly repeatable. The config
hash is embedded in checkpoints so a model cannot silently be evaluated
against features from a different configuration.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .acoustics import AcousticProfile, AudioClip, ProfileConfig
from .errors import EmptyText

_FNV_OFFSET = 14695981039346656037
_FNV_PRIME = 1099511628211
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class FeaturizerConfig:
    n_mels: int = 32
    mel_frame_s: float = 0.025
    mel_hop_s: float = 0.010
    mel_fmin_hz: float = 0.0
    mel_fmax_hz: float = 8000.0
    log_floor: float = 1e-10
    text_dim: int = 48
    pitch_scale_hz: float = 500.0
    intensity_scale_db: float = 120.0
    rate_scale: float = 10.0
    profile: ProfileConfig = field(default_factory=ProfileConfig)

    @property
    def audio_dim(self) -> int:
        # per-band mean and std, plus four profile scalars
        return 2 * self.n_mels + 4

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int,
                   fmin_hz: float, fmax_hz: float) -> np.ndarray:
    """Triangular mel filters over rFFT bins, (n_mels, n_fft//2 + 1)."""
    fmax_hz = min(fmax_hz, sample_rate / 2)
    edges_hz = _mel_to_hz(
        np.linspace(_hz_to_mel(fmin_hz), _hz_to_mel(fmax_hz), n_mels + 2)
    )
    bin_freqs = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    fb = np.zeros((n_mels, len(bin_freqs)))
    for i in range(n_mels):
        lo, center, hi = edges_hz[i], edges_hz[i + 1], edges_hz[i + 2]
        up = (bin_freqs - lo) / max(center - lo, 1e-12)
        down = (hi - bin_freqs) / max(hi - center, 1e-12)
        fb[i] = np.maximum(0.0, np.minimum(up, down))
    return fb


def _log_mel_frames(samples: np.ndarray, sample_rate: int,
                    cfg: FeaturizerConfig) -> np.ndarray:
    flen = int(round(cfg.mel_frame_s * sample_rate))
    hop = int(round(cfg.mel_hop_s * sample_rate))
    n_frames = max(1, 1 + (len(samples) - flen) // hop)
    if len(samples) < flen:
        pad = np.zeros(flen)
        pad[:len(samples)] = samples
        samples = pad
        n_frames = 1
    frames = np.lib.stride_tricks.sliding_window_view(samples, flen)[::hop]
    frames = frames[:n_frames] * np.hanning(flen)
    n_fft = 1 << int(math.ceil(math.log2(flen)))
    power = np.abs(np.fft.rfft(frames, n_fft, axis=1)) ** 2
    fb = mel_filterbank(cfg.n_mels, n_fft, sample_rate,
                        cfg.mel_fmin_hz, cfg.mel_fmax_hz)
    mel = power @ fb.T
    return np.log(np.maximum(mel, cfg.log_floor))


def encode_audio(clip: AudioClip, profile: AcousticProfile,
                 cfg: FeaturizerConfig | None = None) -> np.ndarray:
    """Fixed-dimension audio features: mel statistics + profile scalars.

    The vector concatenates the per-band mean and standard deviation of
    the log-mel spectrogram with four normalized profile scalars (pitch,
    intensity, speech rate, articulation rate; absent pitch maps to 0).
    Trailing digital silence is stripped first so that zero-padding a clip
    does not perturb the statistics.
    """
    cfg = cfg or FeaturizerConfig()
    samples = clip.samples
    nonzero = np.nonzero(samples)[0]
    if len(nonzero) > 0:
        samples = samples[:nonzero[-1] + 1]
    log_mel = _log_mel_frames(samples, clip.sample_rate, cfg)
    stats = np.concatenate([log_mel.mean(axis=0), log_mel.std(axis=0)])

    pitch = profile.mean_pitch_hz or 0.0
    scalars = np.array([
        pitch / cfg.pitch_scale_hz,
        profile.mean_intensity_db / cfg.intensity_scale_db,
        profile.speech_rate / cfg.rate_scale,
        profile.articulation_rate / cfg.rate_scale,
    ])
    vec = np.concatenate([stats, scalars])
    if not np.all(np.isfinite(vec)):  # pragma: no cover - defensive
        raise ValueError(f"non-finite audio features for clip {clip.id!r}")
    return vec


def fnv1a_64(token: str) -> int:
    """FNV-1a 64-bit hash of a token's UTF-8 bytes."""
    h = _FNV_OFFSET
    for byte in token.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def encode_text(text: str, cfg: FeaturizerConfig | None = None) -> np.ndarray:
    """Signed hashed bag-of-words, L2-normalized.

    Tokens (lowercased, whitespace-split) are hashed with FNV-1a 64; the
    bucket is hash mod text_dim and the sign comes from bit 63, so distinct
    bin words cannot silently alias to identical vectors.
    """
    cfg = cfg or FeaturizerConfig()
    tokens = text.lower().split()
    if not tokens:
        raise EmptyText("cannot encode empty text")
    vec = np.zeros(cfg.text_dim)
    for token in tokens:
        h = fnv1a_64(token)
        sign = -1.0 if h >> 63 else 1.0
        vec[h % cfg.text_dim] += sign
    norm = np.linalg.norm(vec)
    if norm < 1e-12:
        # token signs cancelled exactly; keep a deterministic unit vector
        vec[fnv1a_64(tokens[0]) % cfg.text_dim] = 1.0
        norm = 1.0
    return vec / norm
