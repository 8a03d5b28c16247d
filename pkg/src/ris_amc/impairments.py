"""Channel and hardware impairments, and assembly of the labelled dataset.

The chain applied to every frame is Rician fading, then clock offset
(carrier offset plus sample-rate offset), then AWGN, then unit-RMS
renormalisation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import InvalidSplit
from .sigsynth import FRAME_LENGTH, SCHEMES, LabeledFrame, ShapingConfig, synthesize_frame

# K at or above this is treated as a pure line-of-sight (non-fading) channel
PURE_LOS_K = 1e6
PARTITIONS = ("train", "val", "test")


@dataclass(frozen=True)
class ImpairmentProfile:
    snr_db: float = 10.0
    rician_k: float = 4.0
    max_doppler_hz: float = 10.0
    clock_offset_ppm: float = 5.0
    carrier_freq_hz: float = 5e9
    sample_rate_hz: float = 200e3
    n_sinusoids: int = 48

    def __post_init__(self):
        if self.rician_k < 0 or self.max_doppler_hz < 0:
            raise ValueError("rician_k and max_doppler_hz must be >= 0")
        if not self.sample_rate_hz > 2 * self.max_doppler_hz:
            raise ValueError("sample rate must exceed twice the maximum Doppler shift")
        if math.isnan(self.snr_db):
            raise ValueError("snr_db must not be NaN")

    def replace(self, **kw) -> "ImpairmentProfile":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(kw)
        return ImpairmentProfile(**d)


def fading_gain(n, k, fd, fs, rng, n_sinusoids=48, size=()):
    """Rician gain sequence of length ``n`` (leading ``size`` for batches).

    The diffuse part is a sum of equal-power sinusoids with random arrival
    angles and phases, scaled to unit power; the specular part has a random
    phase. ``k >= PURE_LOS_K`` returns all-ones.
    """
    size = tuple(np.atleast_1d(size)) if size != () else ()
    if k >= PURE_LOS_K:
        return np.ones(size + (n,), dtype=complex)
    theta = rng.uniform(0, 2 * np.pi, size)
    alpha = rng.uniform(0, 2 * np.pi, size + (n_sinusoids,))
    phi = rng.uniform(0, 2 * np.pi, size + (n_sinusoids,))
    step = np.exp(2j * np.pi * fd * np.cos(alpha) / fs)
    # successive powers of the per-sample rotation; drift is ~n*1e-16
    rot = np.empty(step.shape + (n,), dtype=complex)
    rot[..., 0] = np.exp(1j * phi)
    rot[..., 1:] = step[..., None]
    np.cumprod(rot, axis=-1, out=rot)
    diffuse = rot.sum(axis=-2) / np.sqrt(n_sinusoids)
    los = np.sqrt(k / (k + 1)) * np.exp(1j * theta)
    return los[..., None] + np.sqrt(1 / (k + 1)) * diffuse


def apply_rician(frame: LabeledFrame, k, fd, fs, rng, n_sinusoids=48) -> LabeledFrame:
    if k < 0 or fd < 0:
        raise ValueError("k and fd must be >= 0")
    g = fading_gain(len(frame), k, fd, fs, rng, n_sinusoids)
    return frame.with_samples(frame.samples * g)


def apply_clock_offset(frame: LabeledFrame, ppm, fc, fs) -> LabeledFrame:
    """Carrier offset ``ppm*fc`` followed by resampling at ``(1 + ppm)`` clock rate."""
    if abs(ppm) >= 100:
        raise ValueError("|ppm| must be below 100")
    x = frame.samples
    if ppm == 0:
        return frame.with_samples(x.copy())
    eps = ppm * 1e-6
    n = np.arange(len(x))
    y = x * np.exp(2j * np.pi * eps * fc * n / fs)
    # receiver clock runs at fs*(1+eps): its n-th sample lands at n/(1+eps)
    y = CubicSpline(n, y)(n / (1 + eps))
    return frame.with_samples(y)


def unit_noise(rng, n) -> np.ndarray:
    return (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2)


def apply_awgn(frame: LabeledFrame, snr_db, rng) -> LabeledFrame:
    """Add circular Gaussian noise at ``snr_db`` relative to the measured signal power."""
    if snr_db == math.inf:
        return frame.with_samples(frame.samples.copy())
    x = frame.samples
    p = np.mean(np.abs(x) ** 2)
    w = unit_noise(rng, len(x))
    return frame.with_samples(x + np.sqrt(p / 10 ** (snr_db / 10)) * w)


def impair_parts(frame: LabeledFrame, profile: ImpairmentProfile, rng):
    """Faded, offset signal and the unit-power noise draw that ``impair`` would add."""
    fr = apply_rician(frame, profile.rician_k, profile.max_doppler_hz, profile.sample_rate_hz, rng,
                      profile.n_sinusoids)
    fr = apply_clock_offset(fr, profile.clock_offset_ppm, profile.carrier_freq_hz, profile.sample_rate_hz)
    return fr.samples, unit_noise(rng, len(frame))


def combine_parts(signal, noise, snr_db):
    """Mix signal and unit noise at ``snr_db`` and renormalise to unit RMS.

    Works on a single frame or on a stack of frames (last axis is time);
    ``snr_db`` broadcasts over the leading axes.
    """
    snr_db = np.asarray(snr_db, dtype=float)
    p = np.mean(np.abs(signal) ** 2, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma = np.sqrt(p / 10 ** (snr_db / 10))
    sig_w = np.where(np.isneginf(snr_db), 0.0, 1.0)
    sigma = np.where(np.isneginf(snr_db), 1.0, np.where(np.isposinf(snr_db), 0.0, sigma))
    y = sig_w[..., None] * signal + sigma[..., None] * noise
    r = np.sqrt(np.mean(np.abs(y) ** 2, axis=-1, keepdims=True))
    return y / r, r[..., 0]


def impair(frame: LabeledFrame, profile: ImpairmentProfile, rng) -> LabeledFrame:
    s, w = impair_parts(frame, profile, rng)
    y, r = combine_parts(s, w, profile.snr_db)
    return frame.with_samples(y, float(r))


@dataclass(frozen=True)
class DatasetSpec:
    frames_per_class: int = 5000
    split: tuple = (0.8, 0.1, 0.1)
    profile: ImpairmentProfile = field(default_factory=ImpairmentProfile)
    shaping: ShapingConfig = field(default_factory=ShapingConfig)
    master_seed: int = 0

    def partition_sizes(self):
        if len(self.split) != 3 or any(f < 0 for f in self.split):
            raise InvalidSplit(f"split must be three non-negative fractions, got {self.split}")
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise InvalidSplit(f"split fractions sum to {sum(self.split)}, not 1")
        sizes = []
        for f in self.split:
            c = f * self.frames_per_class
            if abs(c - round(c)) > 1e-6:
                raise InvalidSplit(f"{f} x {self.frames_per_class} frames is not an integer")
            sizes.append(int(round(c)))
        if self.frames_per_class < 1:
            raise InvalidSplit("frames_per_class must be positive")
        return tuple(sizes)


@dataclass
class Dataset:
    """Impaired frames in class-major order, stored as complex64."""

    samples: np.ndarray
    labels: np.ndarray
    seeds: np.ndarray
    partition: np.ndarray
    spec: DatasetSpec

    def __len__(self):
        return len(self.labels)

    def subset(self, name):
        mask = self.partition == PARTITIONS.index(name)
        return self.samples[mask], self.labels[mask]

    def counts(self):
        """``counts[p][c]``: frames of class ``c`` in partition ``p``."""
        return {p: np.bincount(self.labels[self.partition == i], minlength=len(SCHEMES))
                for i, p in enumerate(PARTITIONS)}


def frame_seeds(master_seed, n):
    state = np.random.SeedSequence(master_seed).generate_state(n, dtype=np.uint64)
    return (state & np.uint64(2**63 - 1)).astype(np.int64)


def impairment_rng(frame_seed):
    return np.random.default_rng([int(frame_seed), 1])


def make_frame(scheme, frame_seed, spec: DatasetSpec) -> LabeledFrame:
    clean = synthesize_frame(scheme, spec.shaping, int(frame_seed))
    return impair(clean, spec.profile, impairment_rng(frame_seed))


def generate_dataset(spec: DatasetSpec) -> Dataset:
    n_train, n_val, _ = spec.partition_sizes()
    fpc = spec.frames_per_class
    n = fpc * len(SCHEMES)
    seeds = frame_seeds(spec.master_seed, n)
    labels = np.repeat(np.arange(len(SCHEMES)), fpc)
    samples = np.empty((n, FRAME_LENGTH), dtype=np.complex64)
    for i in range(n):
        samples[i] = make_frame(SCHEMES[labels[i]], seeds[i], spec).samples
    part = np.empty(n, dtype=np.int8)
    rng = np.random.default_rng([spec.master_seed, 2])
    for c in range(len(SCHEMES)):
        perm = rng.permutation(fpc) + c * fpc
        part[perm[:n_train]] = 0
        part[perm[n_train : n_train + n_val]] = 1
        part[perm[n_train + n_val :]] = 2
    return Dataset(samples, labels, seeds, part, spec)
