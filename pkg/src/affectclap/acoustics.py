"""Audio decoding and measurement of the acoustic correlates of emotion.

Measures four quantities per clip: average pitch (normalized
cross-correlation pitch tracking), average intensity (frame RMS in dB),
speech rate and articulation rate (intensity-peak syllable nuclei, de
Jong/Wempe style). All analyses share a common frame grid: frames are
centered every ``hop_s`` seconds, so tracks produced with the same hop
always align frame-for-frame.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import median_filter
from scipy.signal import find_peaks

from .errors import (
    ClipTooShort,
    EmptyAudio,
    MismatchedTracks,
    UnsupportedFormat,
)

_WAVE_FORMAT_PCM = 1
_WAVE_FORMAT_IEEE_FLOAT = 3
_MIN_SAMPLE_RATE = 8000


@dataclass(frozen=True)
class AudioClip:
    """Decoded mono waveform: samples in [-1, 1] at a fixed sample rate."""

    id: str
    samples: np.ndarray
    sample_rate: int

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class FrameTrack:
    """One value per analysis frame; NaN marks unvoiced pitch frames."""

    values: np.ndarray
    frame_hop_s: float
    frame_len_s: float

    def __len__(self) -> int:
        return len(self.values)

    @property
    def voiced_mask(self) -> np.ndarray:
        return ~np.isnan(self.values)


@dataclass(frozen=True)
class AcousticProfile:
    """Per-clip summary of the measured acoustic correlates."""

    mean_pitch_hz: float | None
    mean_intensity_db: float
    speech_rate: float
    articulation_rate: float
    syllable_count: int
    duration_s: float
    phonation_time_s: float
    voiced_fraction: float

    def to_dict(self) -> dict:
        return {
            "mean_pitch_hz": self.mean_pitch_hz,
            "mean_intensity_db": self.mean_intensity_db,
            "speech_rate": self.speech_rate,
            "articulation_rate": self.articulation_rate,
            "syllable_count": self.syllable_count,
            "duration_s": self.duration_s,
            "phonation_time_s": self.phonation_time_s,
            "voiced_fraction": self.voiced_fraction,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AcousticProfile":
        return cls(
            mean_pitch_hz=d["mean_pitch_hz"],
            mean_intensity_db=float(d["mean_intensity_db"]),
            speech_rate=float(d["speech_rate"]),
            articulation_rate=float(d["articulation_rate"]),
            syllable_count=int(d["syllable_count"]),
            duration_s=float(d["duration_s"]),
            phonation_time_s=float(d["phonation_time_s"]),
            voiced_fraction=float(d["voiced_fraction"]),
        )


@dataclass(frozen=True)
class PitchConfig:
    frame_s: float = 0.040
    hop_s: float = 0.010
    f_min_hz: float = 65.0
    f_max_hz: float = 500.0
    voicing_threshold: float = 0.45
    # a shorter-lag peak this close to the global maximum wins, which
    # suppresses octave-down errors on strongly periodic frames
    strong_peak_ratio: float = 0.85


@dataclass(frozen=True)
class IntensityConfig:
    # frame_s == hop_s tiles the clip without overlap, so sounding-frame
    # counts track segment durations to within one hop
    frame_s: float = 0.010
    hop_s: float = 0.010
    p_ref: float = 2e-5
    rel_floor_db: float = -100.0
    floor_db: float = 0.0


@dataclass(frozen=True)
class NucleiConfig:
    silence_threshold_db: float = 25.0
    min_dip_db: float = 2.0
    require_voicing: bool = True
    smooth_frames: int = 5
    # frames at or below this absolute level are silent no matter how the
    # relative threshold falls; must equal IntensityConfig.floor_db
    floor_db: float = 0.0


@dataclass(frozen=True)
class ProfileConfig:
    pitch: PitchConfig = field(default_factory=PitchConfig)
    intensity: IntensityConfig = field(default_factory=IntensityConfig)
    nuclei: NucleiConfig = field(default_factory=NucleiConfig)


# -- WAV I/O ---------------------------------------------------------------

def load_wav(path: str | Path) -> AudioClip:
    """Decode a RIFF/WAVE file (PCM16 or float32) to a mono AudioClip.

    Multichannel audio is averaged to mono; samples are scaled/clamped to
    [-1, 1]. The clip id is the file stem.
    """
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {p}")
    raw = p.read_bytes()
    if len(raw) < 12 or raw[0:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise UnsupportedFormat(f"{p}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos:pos + 4]
        (chunk_size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8:pos + 8 + chunk_size]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise UnsupportedFormat(f"{p}: truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif chunk_id == b"data":
            if len(body) < chunk_size:
                raise UnsupportedFormat(f"{p}: truncated data chunk")
            data = body
        pos += 8 + chunk_size + (chunk_size & 1)  # chunks are word-aligned

    if fmt is None or data is None:
        raise UnsupportedFormat(f"{p}: missing fmt or data chunk")
    audio_format, channels, sample_rate, _, _, bits = fmt
    if channels < 1 or sample_rate < _MIN_SAMPLE_RATE:
        raise UnsupportedFormat(
            f"{p}: unsupported channel count or sample rate ({channels} ch, "
            f"{sample_rate} Hz; need >= {_MIN_SAMPLE_RATE} Hz)"
        )

    if audio_format == _WAVE_FORMAT_PCM and bits == 16:
        x = np.frombuffer(data[:len(data) - len(data) % 2], dtype="<i2")
        x = x.astype(np.float64) / 32768.0
    elif audio_format == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        x = np.frombuffer(data[:len(data) - len(data) % 4], dtype="<f4")
        x = x.astype(np.float64)
    else:
        raise UnsupportedFormat(
            f"{p}: format code {audio_format} with {bits} bits "
            "(only PCM16 and float32 are supported)"
        )

    if channels > 1:
        x = x[:len(x) - len(x) % channels].reshape(-1, channels).mean(axis=1)
    if len(x) == 0:
        raise EmptyAudio(f"{p}: zero audio frames")
    x = np.clip(x, -1.0, 1.0)
    return AudioClip(id=p.stem, samples=x, sample_rate=int(sample_rate))


def write_wav(path: str | Path, samples: np.ndarray, sample_rate: int) -> None:
    """Write mono float samples in [-1, 1] as a 16-bit PCM WAV file."""
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    pcm = np.round(x * 32767.0).astype("<i2")
    payload = pcm.tobytes()
    header = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    header += b"fmt " + struct.pack(
        "<IHHIIHH", 16, _WAVE_FORMAT_PCM, 1, sample_rate,
        sample_rate * 2, 2, 16,
    )
    header += b"data" + struct.pack("<I", len(payload))
    Path(path).write_bytes(header + payload)


# -- framing ---------------------------------------------------------------

def _frame_signal(x: np.ndarray, sample_rate: int, frame_s: float,
                  hop_s: float, pad_mode: str) -> np.ndarray:
    """Slice a signal into frames centered every hop.

    Frame k is centered at k*hop_s; edges are padded ('constant' for
    correlation analyses, 'reflect' for level analyses so edge frames keep
    representative energy). Returns an (n_frames, frame_len) array with
    n_frames = ceil(len(x) / hop).
    """
    flen = int(round(frame_s * sample_rate))
    hop = int(round(hop_s * sample_rate))
    if flen < 1 or hop < 1:
        raise ValueError("frame and hop must be at least one sample")
    if len(x) < flen:
        raise ClipTooShort(
            f"clip of {len(x)} samples is shorter than one "
            f"{flen}-sample frame"
        )
    n_frames = math.ceil(len(x) / hop)
    left = flen // 2
    last_start = (n_frames - 1) * hop - left
    right = max(0, last_start + flen - len(x))
    padded = np.pad(x, (left, right), mode=pad_mode)
    windows = np.lib.stride_tricks.sliding_window_view(padded, flen)
    return windows[::hop][:n_frames]


# -- pitch -----------------------------------------------------------------

def pitch_track(clip: AudioClip, cfg: PitchConfig | None = None) -> FrameTrack:
    """Per-frame fundamental frequency via normalized autocorrelation.

    Each frame's autocorrelation is normalized by the energies of the two
    overlapping segments (NCCF), so a periodic frame scores close to 1 at
    its period lag regardless of amplitude. Frames whose best peak falls
    below the voicing threshold are marked NaN. Among near-maximal peaks
    the shortest lag wins, and the winning lag is refined by parabolic
    interpolation before conversion to Hz.
    """
    cfg = cfg or PitchConfig()
    sr = clip.sample_rate
    if not (0.0 < cfg.f_min_hz < cfg.f_max_hz < sr / 2):
        raise ValueError(
            f"pitch search range ({cfg.f_min_hz}, {cfg.f_max_hz}) must lie "
            f"within (0, {sr / 2})"
        )
    frames = _frame_signal(clip.samples, sr, cfg.frame_s, cfg.hop_s,
                           pad_mode="constant")
    frames = frames - frames.mean(axis=1, keepdims=True)
    n_frames, flen = frames.shape

    lag_min = max(2, int(sr / cfg.f_max_hz))
    lag_max = min(flen - 2, int(math.ceil(sr / cfg.f_min_hz)))
    if lag_max <= lag_min + 2:
        raise ValueError("frame too short for the requested pitch range")

    nfft = 1 << int(math.ceil(math.log2(2 * flen)))
    spec = np.fft.rfft(frames, nfft, axis=1)
    ac = np.fft.irfft(spec * np.conj(spec), nfft, axis=1)[:, :flen]

    sq = np.concatenate(
        [np.zeros((n_frames, 1)), np.cumsum(frames * frames, axis=1)], axis=1
    )
    total = sq[:, flen]
    lags = np.arange(flen)
    e_fwd = sq[:, flen - lags]            # energy of x[0 : flen-lag]
    e_bwd = total[:, None] - sq[:, lags]  # energy of x[lag : flen]
    denom = np.sqrt(e_fwd * e_bwd)
    nccf = np.divide(ac, denom, out=np.zeros_like(ac), where=denom > 1e-30)

    values = np.full(n_frames, np.nan)
    for i in range(n_frames):
        if total[i] < 1e-20:
            continue
        row = nccf[i]
        window = row[lag_min:lag_max + 1]
        best = float(window.max())
        if best < cfg.voicing_threshold:
            continue
        floor = max(cfg.voicing_threshold, cfg.strong_peak_ratio * best)
        interior = window[1:-1]
        is_peak = (interior >= window[:-2]) & (interior > window[2:])
        peak_idx = np.nonzero(is_peak & (interior >= floor))[0] + 1
        if len(peak_idx) == 0:
            lag = lag_min + int(window.argmax())
        else:
            lag = lag_min + int(peak_idx[0])
        # parabolic refinement on the three lags around the winner
        y0, y1, y2 = row[lag - 1], row[lag], row[lag + 1]
        den = y0 - 2.0 * y1 + y2
        delta = 0.0 if abs(den) < 1e-30 else 0.5 * (y0 - y2) / den
        delta = float(np.clip(delta, -1.0, 1.0))
        f0 = sr / (lag + delta)
        values[i] = min(max(f0, cfg.f_min_hz), cfg.f_max_hz)

    return FrameTrack(values=values, frame_hop_s=cfg.hop_s,
                      frame_len_s=cfg.frame_s)


# -- intensity -------------------------------------------------------------

def intensity_contour(clip: AudioClip,
                      cfg: IntensityConfig | None = None) -> FrameTrack:
    """Per-frame intensity: 20*log10(frame RMS / p_ref).

    The raw level is clamped at rel_floor_db relative to p_ref (so silent
    frames never produce -inf) and then at the absolute floor_db, which is
    what silent frames report under the defaults.
    """
    cfg = cfg or IntensityConfig()
    frames = _frame_signal(clip.samples, clip.sample_rate, cfg.frame_s,
                           cfg.hop_s, pad_mode="reflect")
    rms = np.sqrt(np.mean(frames * frames, axis=1))
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(rms / cfg.p_ref)
    db = np.maximum(db, max(cfg.rel_floor_db, cfg.floor_db))
    return FrameTrack(values=db, frame_hop_s=cfg.hop_s,
                      frame_len_s=cfg.frame_s)


# -- syllable nuclei -------------------------------------------------------

def _sounding_mask(intensity: FrameTrack, cfg: NucleiConfig) -> np.ndarray:
    """Frames within silence_threshold_db of the peak and above the floor."""
    values = intensity.values
    threshold = values.max() - cfg.silence_threshold_db
    return (values >= threshold) & (values > cfg.floor_db + 1e-9)


def syllable_nuclei(intensity: FrameTrack, pitch: FrameTrack,
                    cfg: NucleiConfig | None = None) -> tuple[int, float]:
    """Count syllable nuclei and total phonation time.

    A nucleus is a peak of the median-smoothed intensity contour that (a)
    falls on a sounding frame, (b) rises at least min_dip_db above the
    surrounding valleys (topographic prominence, with the clip edges
    treated as silence), and (c) coincides with a voiced pitch frame when
    require_voicing is on. Phonation time is the number of sounding frames
    times the hop.
    """
    cfg = cfg or NucleiConfig()
    if len(intensity) != len(pitch) or not math.isclose(
        intensity.frame_hop_s, pitch.frame_hop_s, rel_tol=1e-9
    ):
        raise MismatchedTracks(
            f"intensity ({len(intensity)} frames @ {intensity.frame_hop_s}s) "
            f"vs pitch ({len(pitch)} frames @ {pitch.frame_hop_s}s)"
        )
    if len(intensity) == 0:
        return 0, 0.0

    sounding = _sounding_mask(intensity, cfg)
    phonation_time_s = float(sounding.sum()) * intensity.frame_hop_s

    smoothed = median_filter(intensity.values, size=cfg.smooth_frames,
                             mode="nearest")
    pad = smoothed.min() - cfg.min_dip_db - 6.0
    padded = np.concatenate([[pad], smoothed, [pad]])
    peaks, _ = find_peaks(padded, prominence=cfg.min_dip_db)
    peaks = peaks - 1

    count = 0
    for idx in peaks:
        if not sounding[idx]:
            continue
        if cfg.require_voicing and np.isnan(pitch.values[idx]):
            continue
        count += 1
    return count, phonation_time_s


# -- profile ---------------------------------------------------------------

def compute_profile(clip: AudioClip,
                    cfg: ProfileConfig | None = None) -> AcousticProfile:
    """Compose pitch, intensity and nuclei analyses into one profile.

    Pitch is averaged over voiced frames only (None when the clip has no
    voiced frames); intensity over sounding frames (over all frames when
    nothing sounds). Speech rate divides the nucleus count by the clip
    duration, articulation rate by the phonation time.
    """
    cfg = cfg or ProfileConfig()
    pitch = pitch_track(clip, cfg.pitch)
    intensity = intensity_contour(clip, cfg.intensity)
    count, phonation_time_s = syllable_nuclei(intensity, pitch, cfg.nuclei)

    voiced = pitch.voiced_mask
    mean_pitch = float(pitch.values[voiced].mean()) if voiced.any() else None

    sounding = _sounding_mask(intensity, cfg.nuclei)
    if sounding.any():
        mean_intensity = float(intensity.values[sounding].mean())
    else:
        mean_intensity = float(intensity.values.mean())

    duration_s = clip.duration_s
    phonation_time_s = min(phonation_time_s, duration_s)
    speech_rate = count / duration_s
    articulation_rate = (
        count / phonation_time_s if phonation_time_s > 0 else 0.0
    )

    return AcousticProfile(
        mean_pitch_hz=mean_pitch,
        mean_intensity_db=mean_intensity,
        speech_rate=speech_rate,
        articulation_rate=articulation_rate,
        syllable_count=count,
        duration_s=duration_s,
        phonation_time_s=phonation_time_s,
        voiced_fraction=float(voiced.mean()),
    )
