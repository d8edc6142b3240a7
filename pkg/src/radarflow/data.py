"""Radar sequence handling: synthesis, normalization, resizing, windowing, splits."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import tensorio


@dataclass
class RadarSequence:
    """A stack of radar frames (T, H, W) in native physical units.

    Values are clipped into native_range at construction, matching the usual
    quality-control treatment of out-of-range radar returns.
    """

    frames: np.ndarray
    cadence_minutes: float
    native_range: tuple
    dataset_id: str = "synthetic"

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3:
            raise ValueError(f"frames must be (T, H, W), got shape {self.frames.shape}")
        t, h, w = self.frames.shape
        if t < 1 or h < 8 or w < 8:
            raise ValueError(f"need T >= 1 and H, W >= 8, got {(t, h, w)}")
        lo, hi = self.native_range
        if not lo < hi:
            raise ValueError(f"native_range must satisfy lo < hi, got {(lo, hi)}")
        if self.cadence_minutes <= 0:
            raise ValueError("cadence_minutes must be positive")
        bad = ~np.isfinite(self.frames)
        if bad.any():
            idx = tuple(int(i) for i in np.argwhere(bad)[0])
            raise ValueError(f"non-finite frame value at index {idx}")
        self.frames = np.clip(self.frames, lo, hi)

    @property
    def shape(self):
        return self.frames.shape


@dataclass
class SequenceWindow:
    """One training/evaluation window: J conditioning frames and K targets, in [0, 1]."""

    condition: np.ndarray
    target: np.ndarray
    start: int = 0

    @property
    def j(self) -> int:
        return self.condition.shape[0]

    @property
    def k(self) -> int:
        return self.target.shape[0]


@dataclass
class SplitManifest:
    train: list = field(default_factory=list)
    val: list = field(default_factory=list)
    test: list = field(default_factory=list)

    def validate(self) -> None:
        all_idx = self.train + self.val + self.test
        if len(set(all_idx)) != len(all_idx):
            raise ValueError("split index sets overlap")
        if self.train and self.val and max(self.train) >= min(self.val):
            raise ValueError("validation indices must postdate training indices")
        if self.val and self.test and max(self.val) >= min(self.test):
            raise ValueError("test indices must postdate validation indices")


def normalize(frame: np.ndarray, native_range) -> np.ndarray:
    """Map native units linearly onto [0, 1], clipping out-of-range values."""
    lo, hi = native_range
    if not lo < hi:
        raise ValueError(f"native_range must satisfy lo < hi, got {(lo, hi)}")
    frame = np.asarray(frame, dtype=np.float64)
    bad = ~np.isfinite(frame)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ValueError(f"non-finite input value at index {idx}")
    return np.clip((frame - lo) / (hi - lo), 0.0, 1.0)


def denormalize(frame: np.ndarray, native_range) -> np.ndarray:
    lo, hi = native_range
    return lo + np.asarray(frame, dtype=np.float64) * (hi - lo)


def resize_bilinear(frame: np.ndarray, out_size=(128, 128)) -> np.ndarray:
    """Corner-aligned bilinear resize of a single (H, W) frame.

    Corner alignment makes the resize an exact identity when out_size equals
    the input size and exact on constant inputs.
    """
    frame = np.asarray(frame, dtype=np.float64)
    h, w = frame.shape
    ho, wo = out_size
    if h < 2 or w < 2:
        raise ValueError(f"input must be at least 2x2, got {(h, w)}")
    if ho < 2 or wo < 2:
        raise ValueError(f"output must be at least 2x2, got {(ho, wo)}")
    ys = np.linspace(0.0, h - 1.0, ho)
    xs = np.linspace(0.0, w - 1.0, wo)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = frame[np.ix_(y0, x0)] * (1 - wx) + frame[np.ix_(y0, x1)] * wx
    bot = frame[np.ix_(y1, x0)] * (1 - wx) + frame[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def resize_sequence(seq: RadarSequence, out_size=(128, 128)) -> RadarSequence:
    frames = np.stack([resize_bilinear(f, out_size) for f in seq.frames])
    return RadarSequence(frames, seq.cadence_minutes, seq.native_range, seq.dataset_id)


def make_windows(seq: RadarSequence, j=5, k=20, stride=1) -> list:
    """Slice a sequence into normalized (condition, target) windows.

    Window s covers frames [s*stride, s*stride + j + k); the condition frames
    strictly precede the targets. Returns [] with a warning when T < j + k.
    """
    if j < 1 or k < 1 or stride < 1:
        raise ValueError("j, k, stride must all be >= 1")
    t = seq.frames.shape[0]
    if t < j + k:
        warnings.warn(f"sequence too short for windows: T={t} < J+K={j + k}")
        return []
    norm = normalize(seq.frames, seq.native_range).astype(np.float32)
    count = (t - j - k) // stride + 1
    windows = []
    for s in range(count):
        a = s * stride
        windows.append(SequenceWindow(
            condition=norm[a:a + j].copy(),
            target=norm[a + j:a + j + k].copy(),
            start=a,
        ))
    return windows


def chronological_split(n_windows: int, fractions=(0.7, 0.1, 0.2)) -> SplitManifest:
    """Split window indices [0, n) in time order into train/val/test blocks."""
    if n_windows < 3:
        raise ValueError(f"need at least 3 windows to split, got {n_windows}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")
    n_train = max(1, int(math.floor(fractions[0] * n_windows)))
    n_val = max(1, int(math.floor(fractions[1] * n_windows)))
    n_test = n_windows - n_train - n_val
    if n_test < 1:
        n_train -= 1 - n_test
        n_test = 1
    if n_train < 1:
        raise ValueError("not enough windows for a nonempty train split")
    manifest = SplitManifest(
        train=list(range(n_train)),
        val=list(range(n_train, n_train + n_val)),
        test=list(range(n_train + n_val, n_windows)),
    )
    manifest.validate()
    return manifest


def synthesize_advection(seed, n_blobs, velocity, diffusion, decay, t, h, w,
                         native_range=(0.0, 1.0), cadence_minutes=5.0,
                         wrap=False) -> RadarSequence:
    """Gaussian blobs advected by a constant per-frame velocity.

    Each blob drifts by `velocity` pixels per frame, its spatial variance
    grows by diffusion^2 per frame, and its amplitude shrinks by `decay` per
    frame. With wrap=True blobs move on a torus, which keeps the scene
    statistics stationary for long sequences; by default they exit the frame.
    Bit-deterministic for a fixed seed.
    """
    if t < 1:
        raise ValueError("t must be >= 1")
    if diffusion < 0:
        raise ValueError("diffusion must be >= 0")
    if not 0 < decay <= 1:
        raise ValueError("decay must lie in (0, 1]")
    if n_blobs < 0:
        raise ValueError("n_blobs must be >= 0")
    vx, vy = float(velocity[0]), float(velocity[1])
    rng = np.random.default_rng(seed)
    lo, hi = native_range

    cx0 = rng.uniform(0.2 * w, 0.8 * w, size=n_blobs)
    cy0 = rng.uniform(0.2 * h, 0.8 * h, size=n_blobs)
    sigma0 = rng.uniform(min(h, w) / 12.0, min(h, w) / 6.0, size=n_blobs)
    amp0 = rng.uniform(0.6, 0.95, size=n_blobs)

    ygrid, xgrid = np.mgrid[0:h, 0:w].astype(np.float64)
    frames = np.zeros((t, h, w), dtype=np.float64)
    for step in range(t):
        field2d = np.zeros((h, w), dtype=np.float64)
        var = sigma0 ** 2 + step * diffusion ** 2
        amp = amp0 * decay ** step
        for b in range(n_blobs):
            cx = cx0[b] + step * vx
            cy = cy0[b] + step * vy
            if wrap:
                cx %= w
                cy %= h
                dx = (xgrid - cx + w / 2.0) % w - w / 2.0
                dy = (ygrid - cy + h / 2.0) % h - h / 2.0
            else:
                dx = xgrid - cx
                dy = ygrid - cy
            field2d += amp[b] * np.exp(-(dx ** 2 + dy ** 2) / (2.0 * var[b]))
        frames[step] = lo + (hi - lo) * np.clip(field2d, 0.0, 1.0)
    return RadarSequence(frames, cadence_minutes, native_range, "synthetic")


def save_sequence(directory, index: int, seq: RadarSequence):
    meta = {
        "dataset_id": seq.dataset_id,
        "cadence_minutes": seq.cadence_minutes,
        "native_range": [float(seq.native_range[0]), float(seq.native_range[1])],
    }
    return tensorio.write_event(directory, index, seq.frames.astype(np.float32), meta)


def load_sequences(directory) -> list:
    seqs = []
    for path in tensorio.list_events(directory):
        frames, meta = tensorio.read_event(path)
        seqs.append(RadarSequence(
            frames.astype(np.float64),
            meta["cadence_minutes"],
            tuple(meta["native_range"]),
            meta["dataset_id"],
        ))
    return seqs


def windows_from_directory(directory, j, k, stride=1, resize_to=()) -> list:
    """Windows from every event in a dataset directory, event order then time order."""
    windows = []
    for seq in load_sequences(directory):
        if resize_to:
            seq = resize_sequence(seq, tuple(resize_to))
        windows.extend(make_windows(seq, j=j, k=k, stride=stride))
    return windows
