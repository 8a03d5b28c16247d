"""Clean complex-baseband frame synthesis for the five modulation classes."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import EmptyInput, IndivisibleBitCount

FRAME_LENGTH = 2048
SAMPLE_RATE_HZ = 200e3


class ModulationScheme(enum.Enum):
    """The five classes, in class-index order."""

    BPSK = ("BPSK", 1)
    QPSK = ("QPSK", 2)
    PSK8 = ("8PSK", 3)
    QAM16 = ("16QAM", 4)
    QAM64 = ("64QAM", 6)

    def __init__(self, display: str, bits_per_symbol: int):
        self.display = display
        self.bits_per_symbol = bits_per_symbol

    @property
    def order(self) -> int:
        return 2**self.bits_per_symbol

    @property
    def index(self) -> int:
        return SCHEMES.index(self)

    @classmethod
    def from_index(cls, i: int) -> "ModulationScheme":
        return SCHEMES[int(i)]

    @classmethod
    def parse(cls, name: str) -> "ModulationScheme":
        for s in cls:
            if name in (s.name, s.display):
                return s
        raise ValueError(f"unknown modulation {name!r}")


SCHEMES = tuple(ModulationScheme)
CLASS_NAMES = tuple(s.display for s in SCHEMES)


@dataclass(frozen=True)
class ConstellationMap:
    """``points[i]`` carries the label ``bit_labels[i]`` == binary of ``i``."""

    points: np.ndarray
    bit_labels: tuple[str, ...]

    @property
    def bits_per_symbol(self) -> int:
        return len(self.bit_labels[0])


@dataclass(frozen=True)
class ShapingConfig:
    samples_per_symbol: int = 8
    rolloff: float = 0.35
    filter_span_symbols: int = 8

    def __post_init__(self):
        if self.samples_per_symbol < 2:
            raise ValueError("samples_per_symbol must be >= 2")
        if not 0 < self.rolloff <= 1:
            raise ValueError("rolloff must be in (0, 1]")
        if self.filter_span_symbols % 2 or self.filter_span_symbols <= 0:
            raise ValueError("filter_span_symbols must be a positive even integer")
        if FRAME_LENGTH % self.samples_per_symbol:
            raise ValueError("frame length must be divisible by samples_per_symbol")

    @property
    def symbols_per_frame(self) -> int:
        return FRAME_LENGTH // self.samples_per_symbol

    @property
    def symbol_rate_hz(self) -> float:
        return SAMPLE_RATE_HZ / self.samples_per_symbol


@dataclass
class LabeledFrame:
    samples: np.ndarray
    label: ModulationScheme
    seed: int
    rms: float = 1.0

    def __len__(self):
        return len(self.samples)

    def with_samples(self, samples, rms=None) -> "LabeledFrame":
        return LabeledFrame(samples, self.label, self.seed, self.rms if rms is None else rms)


def _gray(n):
    return n ^ (n >> 1)


@lru_cache(maxsize=None)
def _constellation(scheme: ModulationScheme) -> ConstellationMap:
    k = scheme.bits_per_symbol
    m = scheme.order
    points = np.empty(m, dtype=complex)
    if scheme is ModulationScheme.BPSK:
        points[:] = [1.0, -1.0]
    elif scheme in (ModulationScheme.QPSK, ModulationScheme.PSK8):
        # point at angle index j carries Gray label gray(j); first point at pi/M
        for j in range(m):
            points[_gray(j)] = np.exp(1j * (np.pi / m + 2 * np.pi * j / m))
    else:
        half = k // 2
        side = 2**half
        levels = 2 * np.arange(side) - (side - 1)
        axis = np.empty(side)
        for j in range(side):
            axis[_gray(j)] = levels[j]
        for label in range(m):
            points[label] = axis[label >> half] + 1j * axis[label & (side - 1)]
        points /= np.sqrt(2 * (m - 1) / 3)
    points.setflags(write=False)
    labels = tuple(format(i, f"0{k}b") for i in range(m))
    return ConstellationMap(points, labels)


def gray_constellation(scheme: ModulationScheme) -> ConstellationMap:
    return _constellation(scheme)


def _bits_to_indices(bits, k):
    bits = np.asarray(bits, dtype=np.int64).ravel()
    if bits.size % k:
        raise IndivisibleBitCount(f"{bits.size} bits is not a multiple of {k}")
    weights = 1 << np.arange(k - 1, -1, -1)
    return bits.reshape(-1, k) @ weights


def modulate(bits, scheme: ModulationScheme) -> np.ndarray:
    idx = _bits_to_indices(bits, scheme.bits_per_symbol)
    return gray_constellation(scheme).points[idx]


def demap(symbols, scheme: ModulationScheme) -> np.ndarray:
    """Nearest-point hard decision, returned as a flat bit array."""
    pts = gray_constellation(scheme).points
    symbols = np.asarray(symbols).ravel()
    idx = np.argmin(np.abs(symbols[:, None] - pts[None, :]), axis=1)
    k = scheme.bits_per_symbol
    return ((idx[:, None] >> np.arange(k - 1, -1, -1)) & 1).ravel()


@lru_cache(maxsize=16)
def _rrc_taps(cfg: ShapingConfig) -> np.ndarray:
    sps, beta = cfg.samples_per_symbol, cfg.rolloff
    n = cfg.filter_span_symbols * sps
    t = (np.arange(n + 1) - n / 2) / sps
    h = np.empty_like(t)
    for i, ti in enumerate(t):
        if abs(ti) < 1e-12:
            h[i] = 1 - beta + 4 * beta / np.pi
        elif abs(abs(ti) - 1 / (4 * beta)) < 1e-9:
            h[i] = beta / np.sqrt(2) * (
                (1 + 2 / np.pi) * np.sin(np.pi / (4 * beta))
                + (1 - 2 / np.pi) * np.cos(np.pi / (4 * beta))
            )
        else:
            num = np.sin(np.pi * ti * (1 - beta)) + 4 * beta * ti * np.cos(np.pi * ti * (1 + beta))
            h[i] = num / (np.pi * ti * (1 - (4 * beta * ti) ** 2))
    h = h / np.sqrt(np.sum(h**2))
    h.setflags(write=False)
    return h


def rrc_taps(cfg: ShapingConfig) -> np.ndarray:
    """Unit-energy root-raised-cosine taps, ``span * sps + 1`` long."""
    return _rrc_taps(cfg).copy()


def pulse_shape(symbols, cfg: ShapingConfig = ShapingConfig()) -> np.ndarray:
    """Upsample and RRC-filter; symbol ``k`` peaks at sample ``k*sps + sps//2``."""
    symbols = np.asarray(symbols, dtype=complex).ravel()
    if symbols.size == 0:
        raise EmptyInput("no symbols to shape")
    sps = cfg.samples_per_symbol
    up = np.zeros(symbols.size * sps, dtype=complex)
    up[::sps] = symbols
    h = _rrc_taps(cfg)
    full = np.convolve(up, h)
    start = (len(h) - 1) // 2 - sps // 2
    return full[start : start + up.size]


def rms(x) -> float:
    return float(np.sqrt(np.mean(np.abs(x) ** 2)))


def synthesize_frame(scheme: ModulationScheme, shaping: ShapingConfig = ShapingConfig(), seed: int = 0) -> LabeledFrame:
    rng = np.random.default_rng(seed)
    nbits = shaping.symbols_per_frame * scheme.bits_per_symbol
    bits = rng.integers(0, 2, nbits)
    x = pulse_shape(modulate(bits, scheme), shaping)
    r = rms(x)
    return LabeledFrame(x / r, scheme, seed, r)
