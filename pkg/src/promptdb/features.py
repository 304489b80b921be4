"""Query-time acoustic features: WAV reading, mean pitch, speaking rate."""

from __future__ import annotations

import math
import struct
import wave
from dataclasses import dataclass

import numpy as np
from scipy.signal import find_peaks

from ._validation import normalize
from .errors import BadInput, CorruptHeader, InvalidField, IoFailure, TooShort, UnsupportedFormat

PITCH_FRAME_S = 0.040
PITCH_HOP_S = 0.010
PITCH_FMIN = 60.0
PITCH_FMAX = 400.0
VOICING_THRESHOLD = 0.5

RATE_FRAME_S = 0.020
RATE_SMOOTH = 5
RATE_PEAK_REL = 0.5
RATE_MIN_GAP_S = 0.100


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise InvalidField("samples", "need a nonempty 1-D signal")
        if not 8000 <= self.sample_rate <= 48000:
            raise UnsupportedFormat(f"sample rate {self.sample_rate} outside 8000-48000")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class QueryFeatures:
    """Features of the real-time input that the cascade compares against.

    Any subset may be present, but not none of them. Vectors are stored
    unit-normalized as float64.
    """

    speaking_rate: float | None = None
    pitch_mean_hz: float | None = None
    speaker_vec: np.ndarray | None = None
    emotion_vec: np.ndarray | None = None

    def __post_init__(self):
        if all(v is None for v in (self.speaking_rate, self.pitch_mean_hz, self.speaker_vec, self.emotion_vec)):
            raise BadInput("query carries no features")
        for name in ("speaking_rate", "pitch_mean_hz"):
            value = getattr(self, name)
            if value is not None:
                if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value) or value < 0:
                    raise InvalidField(name, "must be a finite number >= 0")
                object.__setattr__(self, name, float(value))
        for name in ("speaker_vec", "emotion_vec"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, normalize(value, name))

    @classmethod
    def from_dict(cls, obj: dict) -> QueryFeatures:
        if not isinstance(obj, dict):
            raise BadInput("query must be an object")
        unknown = set(obj) - {"speaking_rate", "pitch_mean_hz", "speaker_vec", "emotion_vec"}
        if unknown:
            raise BadInput(f"unknown query fields {sorted(unknown)}")
        return cls(**obj)

    def to_dict(self) -> dict:
        return {
            "speaking_rate": self.speaking_rate,
            "pitch_mean_hz": self.pitch_mean_hz,
            "speaker_vec": None if self.speaker_vec is None else self.speaker_vec.tolist(),
            "emotion_vec": None if self.emotion_vec is None else self.emotion_vec.tolist(),
        }


def read_wav(path) -> AudioClip:
    """Read a 16-bit PCM WAV file (mono, or stereo averaged to mono)."""
    try:
        with wave.open(str(path), "rb") as wf:
            n_ch = wf.getnchannels()
            width = wf.getsampwidth()
            sr = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except FileNotFoundError as exc:
        raise IoFailure(f"{path}: {exc.strerror}") from None
    except wave.Error as exc:
        if "unknown format" in str(exc):
            raise UnsupportedFormat(f"{path}: {exc}") from None
        raise CorruptHeader(f"{path}: {exc}") from None
    except (EOFError, struct.error) as exc:
        raise CorruptHeader(f"{path}: {exc}") from None
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from None
    if width != 2:
        raise UnsupportedFormat(f"{path}: {8 * width}-bit samples, need 16-bit PCM")
    if n_ch not in (1, 2):
        raise UnsupportedFormat(f"{path}: {n_ch} channels")
    data = np.frombuffer(raw[: len(raw) - len(raw) % (2 * n_ch)], dtype="<i2").astype(np.float64)
    if data.size == 0:
        raise CorruptHeader(f"{path}: no audio frames")
    data = data.reshape(-1, n_ch).mean(axis=1) / 32768.0
    return AudioClip(data, sr)


def write_wav(path, clip: AudioClip) -> None:
    """Write ``clip`` as mono 16-bit PCM (samples clipped to [-1, 1))."""
    pcm = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(clip.sample_rate)
        wf.writeframes(pcm.tobytes())


def _frames(x: np.ndarray, length: int, hop: int) -> np.ndarray:
    if x.size < length:
        return np.empty((0, length))
    view = np.lib.stride_tricks.sliding_window_view(x, length)[::hop]
    return view


def _frame_pitch(frames: np.ndarray, sr: int) -> np.ndarray:
    """Per-frame f0 in Hz, NaN where unvoiced."""
    lag_min = int(sr // PITCH_FMAX)
    lag_max = int(math.ceil(sr / PITCH_FMIN))
    n = frames.shape[1]
    frames = frames - frames.mean(axis=1, keepdims=True)
    lags = np.arange(lag_min - 1, lag_max + 2)
    acf = np.zeros((frames.shape[0], lags.size))
    for k, lag in enumerate(lags):
        a = frames[:, : n - lag]
        b = frames[:, lag:]
        denom = np.sqrt(np.einsum("ij,ij->i", a, a) * np.einsum("ij,ij->i", b, b))
        num = np.einsum("ij,ij->i", a, b)
        with np.errstate(invalid="ignore", divide="ignore"):
            acf[:, k] = np.where(denom > 1e-12, num / np.where(denom > 0, denom, 1.0), 0.0)

    f0 = np.full(frames.shape[0], np.nan)
    inner = slice(1, lags.size - 1)
    for i, r in enumerate(acf):
        peak = r[inner].max()
        if peak < VOICING_THRESHOLD:
            continue
        # smallest-lag local maximum close to the global one: avoids octave errors
        for k in range(1, lags.size - 1):
            if r[k] >= 0.9 * peak and r[k] >= r[k - 1] and r[k] > r[k + 1]:
                break
        else:
            k = int(np.argmax(r[inner])) + 1
        y0, y1, y2 = r[k - 1], r[k], r[k + 1]
        denom = y0 - 2.0 * y1 + y2
        shift = 0.5 * (y0 - y2) / denom if denom != 0 else 0.0
        f0[i] = sr / (lags[k] + float(np.clip(shift, -0.5, 0.5)))
    return f0


def estimate_pitch_mean(clip: AudioClip) -> float | None:
    """Mean fundamental frequency over voiced frames, or None if nothing is voiced.

    Frames are 40 ms with a 10 ms hop; each frame's normalized
    autocorrelation is searched over 60-400 Hz and the frame counts as voiced
    when the peak reaches 0.5.
    """
    if clip.duration < 0.2:
        raise TooShort(f"{clip.duration:.3f} s < 0.2 s")
    sr = clip.sample_rate
    frames = _frames(clip.samples, int(round(PITCH_FRAME_S * sr)), int(round(PITCH_HOP_S * sr)))
    f0 = _frame_pitch(frames, sr)
    voiced = f0[~np.isnan(f0)]
    if voiced.size == 0:
        return None
    return float(voiced.mean())


def energy_envelope(clip: AudioClip) -> np.ndarray:
    """Smoothed RMS envelope on 20 ms frames."""
    frame = int(round(RATE_FRAME_S * clip.sample_rate))
    n = clip.samples.size // frame
    rms = np.sqrt(np.mean(clip.samples[: n * frame].reshape(n, frame) ** 2, axis=1))
    return np.convolve(rms, np.ones(RATE_SMOOTH) / RATE_SMOOTH, mode="same")


def estimate_speech_rate(clip: AudioClip) -> float:
    """Syllable-rate proxy: envelope peaks per second."""
    if clip.duration < 0.5:
        raise TooShort(f"{clip.duration:.3f} s < 0.5 s")
    env = energy_envelope(clip)
    top = float(env.max()) if env.size else 0.0
    if top <= 0.0:
        return 0.0
    min_gap = max(1, int(round(RATE_MIN_GAP_S / RATE_FRAME_S)))
    peaks, _ = find_peaks(env, height=RATE_PEAK_REL * top, distance=min_gap)
    return peaks.size / clip.duration


def query_from_clip(clip: AudioClip) -> QueryFeatures:
    """Rate and pitch features of a clip; raises BadInput if neither is measurable."""
    rate = estimate_speech_rate(clip) if clip.duration >= 0.5 else None
    pitch = estimate_pitch_mean(clip) if clip.duration >= 0.2 else None
    return QueryFeatures(speaking_rate=rate or None, pitch_mean_hz=pitch)
