"""Cascaded Tx -> RIS -> user channel for two side-by-side binary-phase RISs.

Coordinates: the RIS aperture lies in the x-z plane centred on the origin
and ``+y`` is its normal. An endpoint at (azimuth, elevation) = (phi, theta)
sits along ``(cos theta, sin theta cos phi, sin theta sin phi)``, so the
elevation is measured from the in-plane x axis and the default angles put
every endpoint in front of the surface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from functools import lru_cache

import numpy as np

from .errors import IndexOutOfRange
from .impairments import ImpairmentProfile, combine_parts, impair_parts
from .sigsynth import LabeledFrame

C_LIGHT = 299_792_458.0
USERS = ("user1", "user2")
ENDPOINTS = ("tx",) + USERS


def _user_index(user) -> int:
    if user in USERS:
        return USERS.index(user)
    raise ValueError(f"user must be one of {USERS}, got {user!r}")


def direction(azimuth_deg, elevation_deg) -> np.ndarray:
    phi, theta = np.radians(azimuth_deg), np.radians(elevation_deg)
    return np.array([np.cos(theta), np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi)])


@dataclass(frozen=True)
class SceneGeometry:
    """Positions, pixel grid and link budget for one Tx, two RISs and two users.

    Pixel ``n`` belongs to RIS ``n // (rows*cols)``; inside a RIS pixels are
    numbered row-major with ``cols`` along x and ``rows`` along z.
    """

    tx_angles: tuple = (0.0, 110.0)
    user1_angles: tuple = (0.0, 120.0)
    user2_angles: tuple = (0.0, 35.0)
    d0: float = 1.5
    d1: float = 2.0
    d2: float = 12.0
    rx_gain_db: tuple = (45.0, 62.0)
    tx_gain_db: float = 0.0
    carrier_freq_hz: float = 5e9
    pixel_pitch_m: float = 0.03
    rows: int = 8
    cols: int = 19
    n_ris: int = 2
    ris_gap_m: float = 0.0
    pattern_exponent: float = 1.0
    tx_power_dbm: float = 0.0
    noise_floor_dbm: float = -90.0

    def __post_init__(self):
        for name in ("d0", "d1", "d2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("tx_angles", "user1_angles", "user2_angles"):
            az, el = getattr(self, name)
            if not (-180 <= az <= 180 and 0 <= el <= 180):
                raise ValueError(f"{name}={getattr(self, name)} outside azimuth [-180, 180], elevation [0, 180]")
        if min(self.rows, self.cols, self.n_ris) < 1:
            raise ValueError("pixel grid must be non-empty")
        if len(self.rx_gain_db) != 2:
            raise ValueError("rx_gain_db needs one entry per user")
        # tuples keep the instance hashable for the path-gain cache
        for name in ("tx_angles", "user1_angles", "user2_angles", "rx_gain_db"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))

    @property
    def n_pixels(self) -> int:
        return self.rows * self.cols * self.n_ris

    @property
    def wavelength(self) -> float:
        return C_LIGHT / self.carrier_freq_hz

    def replace(self, **kw) -> "SceneGeometry":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def endpoint(self, name) -> np.ndarray:
        """Cartesian position of ``tx``, ``user1`` or ``user2``."""
        angles, dist = {
            "tx": (self.tx_angles, self.d0),
            "user1": (self.user1_angles, self.d1),
            "user2": (self.user2_angles, self.d2),
        }[name]
        return dist * direction(*angles)

    def pixel_positions(self) -> np.ndarray:
        p = self.pixel_pitch_m
        n = np.arange(self.n_pixels)
        ris, m = np.divmod(n, self.rows * self.cols)
        row, col = np.divmod(m, self.cols)
        x = ris * (self.cols * p + self.ris_gap_m) + col * p
        z = row * p
        pos = np.stack([x, np.zeros_like(x, dtype=float), z], axis=1).astype(float)
        return pos - pos.mean(axis=0)


@lru_cache(maxsize=64)
def _path_gains(geom: SceneGeometry, endpoint: str) -> np.ndarray:
    pos = geom.pixel_positions()
    delta = geom.endpoint(endpoint)[None, :] - pos
    d = np.linalg.norm(delta, axis=1)
    cos_off = delta[:, 1] / d
    pattern = np.where(cos_off > 0, np.clip(cos_off, 0, 1) ** geom.pattern_exponent, 0.0)
    lam = geom.wavelength
    a = np.sqrt(pattern) * lam / (4 * np.pi * d) * np.exp(-2j * np.pi * d / lam)
    a.setflags(write=False)
    return a


def path_gains(geom: SceneGeometry, endpoint: str) -> np.ndarray:
    """Per-pixel complex gains ``a_n`` between every pixel and ``endpoint``."""
    if endpoint not in ENDPOINTS:
        raise ValueError(f"endpoint must be one of {ENDPOINTS}")
    return _path_gains(geom, endpoint)


def pixel_path_gain(geom: SceneGeometry, pixel_index: int, endpoint: str) -> complex:
    if not 0 <= pixel_index < geom.n_pixels:
        raise IndexOutOfRange(f"pixel {pixel_index} not in [0, {geom.n_pixels})")
    return complex(path_gains(geom, endpoint)[pixel_index])


def pixel_terms(geom: SceneGeometry, user) -> np.ndarray:
    """Cascaded per-pixel contributions ``a_n(tx) * a_n(user)`` at phase state 0."""
    _user_index(user)
    return path_gains(geom, "tx") * path_gains(geom, user)


class RISConfiguration:
    """Binary phase state of every pixel: bit 0 reflects with phase 0, bit 1 with pi."""

    __slots__ = ("bits",)

    def __init__(self, bits):
        b = np.array(bits, dtype=np.uint8).reshape(-1)
        if b.size == 0 or np.any(b > 1):
            raise ValueError("bits must be a non-empty 0/1 vector")
        b.setflags(write=False)
        self.bits = b

    @classmethod
    def zeros(cls, n=304):
        return cls(np.zeros(n, dtype=np.uint8))

    @classmethod
    def random(cls, n, rng):
        return cls(rng.integers(0, 2, n, dtype=np.uint8))

    @classmethod
    def from_hex(cls, text: str, n=304):
        text = text.strip().lower().removeprefix("0x")
        if len(text) != math.ceil(n / 4):
            raise ValueError(f"expected {math.ceil(n / 4)} hex digits for {n} pixels, got {len(text)}")
        value = int(text, 16)
        if value >> n:
            raise ValueError(f"hex value has bits beyond pixel {n - 1}")
        return cls([(value >> (n - 1 - i)) & 1 for i in range(n)])

    def to_hex(self) -> str:
        n = len(self.bits)
        value = int("".join("01"[b] for b in self.bits), 2)
        return format(value, f"0{math.ceil(n / 4)}x")

    def signs(self) -> np.ndarray:
        return 1.0 - 2.0 * self.bits

    def flipped(self, i) -> "RISConfiguration":
        b = self.bits.copy()
        b[i] ^= 1
        return RISConfiguration(b)

    def key(self) -> bytes:
        return np.packbits(self.bits).tobytes() + len(self.bits).to_bytes(4, "little")

    def __len__(self):
        return len(self.bits)

    def __eq__(self, other):
        return isinstance(other, RISConfiguration) and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash(self.key())

    def __repr__(self):
        return f"RISConfiguration({self.to_hex()!r}, n={len(self)})"


def _check_size(cfg: RISConfiguration, geom: SceneGeometry):
    if len(cfg) != geom.n_pixels:
        raise ValueError(f"configuration has {len(cfg)} bits, geometry has {geom.n_pixels} pixels")


def cascaded_gain(cfg: RISConfiguration, geom: SceneGeometry, user) -> complex:
    _check_size(cfg, geom)
    return complex(np.dot(pixel_terms(geom, user), cfg.signs()))


def snr_from_gain(h, geom: SceneGeometry, user) -> float:
    """Link budget in dB; ``-inf`` when the cascaded gain vanishes."""
    mag = abs(h)
    if mag == 0:
        return -math.inf
    return (geom.tx_power_dbm + geom.tx_gain_db + 20 * math.log10(mag)
            + geom.rx_gain_db[_user_index(user)] - geom.noise_floor_dbm)


def received_snr(cfg: RISConfiguration, geom: SceneGeometry, user) -> float:
    return snr_from_gain(cascaded_gain(cfg, geom, user), geom, user)


def link_offset_db(geom: SceneGeometry, user) -> float:
    """Everything in the budget except ``20 log10 |h|``."""
    return geom.tx_power_dbm + geom.tx_gain_db + geom.rx_gain_db[_user_index(user)] - geom.noise_floor_dbm


def apply_channel(frame: LabeledFrame, cfg: RISConfiguration, geom: SceneGeometry, user, rng,
                  profile: ImpairmentProfile = ImpairmentProfile()) -> LabeledFrame:
    """``impair`` at the link-budget SNR, after rotating the frame by ``arg h``.

    The RIS gain magnitude only sets the SNR because the impaired frame is
    renormalised; its phase survives as a constant rotation.
    """
    h = cascaded_gain(cfg, geom, user)
    rot = frame.with_samples(frame.samples * np.exp(1j * np.angle(h)))
    signal, noise = impair_parts(rot, profile, rng)
    y, r = combine_parts(signal, noise, snr_from_gain(h, geom, user))
    return frame.with_samples(y, float(r))


def best_signs(terms) -> np.ndarray:
    """Sign vector maximising ``|sum(s * terms)|`` exactly.

    For the optimum there is a direction ``psi`` with every ``s_n`` equal to
    the sign of ``Re(t_n e^{-j psi})``. Those sign patterns only change when
    ``psi`` crosses ``arg t_n +- pi/2``, so testing one ``psi`` inside each of
    the 2N arcs between crossings covers every candidate.
    """
    t = np.asarray(terms, dtype=complex)
    live = np.abs(t) > 0
    if not live.any():
        return np.ones(len(t))
    ang = np.angle(t[live])
    cuts = np.sort(np.mod(np.concatenate([ang + np.pi / 2, ang - np.pi / 2]), 2 * np.pi))
    mids = (cuts + np.append(cuts[1:], cuts[0] + 2 * np.pi)) / 2
    proj = np.real(t[live][None, :] * np.exp(-1j * mids)[:, None])
    cand = np.where(proj >= 0, 1.0, -1.0)
    sums = np.abs(cand @ t[live])
    s = np.ones(len(t))
    s[live] = cand[int(np.argmax(sums))]
    return s


def optimal_config(geom: SceneGeometry, user) -> RISConfiguration:
    """The configuration with the largest ``|h|`` for one user."""
    s = best_signs(pixel_terms(geom, user))
    return RISConfiguration((s < 0).astype(np.uint8))
