"""Search over RIS phase configurations, plus the link-budget calibration.

Every objective maps a ``RISConfiguration`` to an ``Evaluation`` whose
``rank`` tuple drives accept/reject decisions; ``value`` is what gets
reported. Accuracy objectives rank by (accuracy, mean true-class
probability) so that a search sitting on the chance-level plateau still
sees which flips move it toward the signal.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field

import numpy as np

from .cnn import Model, frames_to_input
from .errors import EmptySet, SubsetTooLarge
from .impairments import ImpairmentProfile, combine_parts, frame_seeds, impair_parts
from .ris_channel import (
    USERS,
    RISConfiguration,
    SceneGeometry,
    link_offset_db,
    pixel_terms,
    snr_from_gain,
)
from .sigsynth import SCHEMES, ShapingConfig, synthesize_frame

TARGETS = USERS + ("joint-min", "joint-mean")


@dataclass(frozen=True)
class Evaluation:
    value: float
    rank: tuple
    accuracy: dict = field(default_factory=dict)
    snr_db: dict = field(default_factory=dict)


@dataclass
class TraceEntry:
    iteration: int
    config: RISConfiguration
    value: float
    best_value: float
    evaluation: Evaluation


@dataclass
class OptimizationResult:
    best_config: RISConfiguration
    best_value: float
    trace: list
    evaluations: int
    sweeps: int = 0
    flips: int = 0
    converged: bool = False

    def best_so_far(self) -> np.ndarray:
        return np.array([e.best_value for e in self.trace])

    def values(self) -> np.ndarray:
        return np.array([e.value for e in self.trace])


class Objective:
    """Cached, deterministic map from configuration to ``Evaluation``."""

    n_pixels: int

    def __init__(self):
        self._cache = {}
        self._lock = threading.Lock()
        self.evaluations = 0

    def _evaluate(self, cfg: RISConfiguration) -> Evaluation:
        raise NotImplementedError

    def score(self, cfg: RISConfiguration) -> Evaluation:
        if len(cfg) != self.n_pixels:
            raise ValueError(f"configuration has {len(cfg)} bits, objective expects {self.n_pixels}")
        key = cfg.key()
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        ev = self._evaluate(cfg)
        with self._lock:
            self.evaluations += 1
            return self._cache.setdefault(key, ev)

    def __call__(self, cfg: RISConfiguration) -> float:
        return self.score(cfg).value


class GainObjective(Objective):
    """``|h_u|``, the SNR proxy: cheap, and exactly checkable by enumeration."""

    def __init__(self, geometry: SceneGeometry, user="user1"):
        super().__init__()
        self.geometry = geometry
        self.user = user
        self.terms = pixel_terms(geometry, user)
        self.n_pixels = geometry.n_pixels

    def _evaluate(self, cfg):
        h = complex(np.dot(self.terms, cfg.signs()))
        snr = snr_from_gain(h, self.geometry, self.user)
        return Evaluation(abs(h), (abs(h),), snr_db={self.user: snr})


@dataclass
class EvalSet:
    """Clean frames used by the accuracy objective, class-major."""

    frames: list
    labels: np.ndarray
    seeds: np.ndarray

    def __len__(self):
        return len(self.frames)


def make_eval_set(frames_per_class=50, seed=1000, shaping: ShapingConfig = ShapingConfig()) -> EvalSet:
    n = frames_per_class * len(SCHEMES)
    if n == 0:
        raise EmptySet("evaluation set is empty")
    seeds = frame_seeds(seed, n)
    labels = np.repeat(np.arange(len(SCHEMES)), frames_per_class)
    frames = [synthesize_frame(SCHEMES[c], shaping, int(s)) for c, s in zip(labels, seeds)]
    return EvalSet(frames, labels, seeds)


def _user_parts(eval_set: EvalSet, profile, seed, user):
    """Faded/offset signal and unit noise for every frame, seeded per (run, user, frame)."""
    u = USERS.index(user)
    sig = np.empty((len(eval_set), len(eval_set.frames[0])), dtype=complex)
    noise = np.empty_like(sig)
    for i, fr in enumerate(eval_set.frames):
        sig[i], noise[i] = impair_parts(fr, profile, np.random.default_rng([seed, u, i]))
    return sig, noise


class AccuracyObjective(Objective):
    """Classification accuracy of ``model`` on frames sent through the RIS channel.

    With fixed ``seed`` every fading, offset and noise draw is fixed, so the
    value is a deterministic function of the configuration. Each frame is
    exactly what ``apply_channel`` would produce with the generator
    ``default_rng([seed, user_index, frame_index])``; the faded signal and
    the noise are drawn once and mixed per configuration.
    ``redraw_noise`` instead draws fresh noise on every evaluation (and
    disables the cache).
    """

    def __init__(self, model: Model, geometry: SceneGeometry, eval_set: EvalSet, target="user1",
                 profile: ImpairmentProfile = ImpairmentProfile(), seed=0, redraw_noise=False):
        super().__init__()
        if target not in TARGETS:
            raise ValueError(f"target must be one of {TARGETS}")
        if len(eval_set) == 0:
            raise EmptySet("evaluation set is empty")
        self.model = model
        self.geometry = geometry
        self.eval_set = eval_set
        self.target = target
        self.profile = profile
        self.seed = seed
        self.redraw_noise = redraw_noise
        self._noise_rng = np.random.default_rng([seed, 99])
        self.n_pixels = geometry.n_pixels
        self.users = (target,) if target in USERS else USERS
        self._terms = {u: pixel_terms(geometry, u) for u in self.users}
        self._parts = {u: _user_parts(eval_set, profile, seed, u) for u in self.users}

    def score(self, cfg):
        if self.redraw_noise:
            return self._evaluate(cfg)
        return super().score(cfg)

    def user_frames(self, cfg: RISConfiguration, user):
        h = complex(np.dot(self._terms[user], cfg.signs()))
        snr = snr_from_gain(h, self.geometry, user)
        sig, noise = self._parts[user]
        if self.redraw_noise:
            noise = (self._noise_rng.standard_normal(sig.shape)
                     + 1j * self._noise_rng.standard_normal(sig.shape)) / np.sqrt(2)
        y, _ = combine_parts(sig * np.exp(1j * np.angle(h)), noise, snr)
        return y, snr

    def _evaluate(self, cfg):
        acc, soft, snrs = {}, {}, {}
        labels = self.eval_set.labels
        for u in self.users:
            y, snrs[u] = self.user_frames(cfg, u)
            p = self.model.predict_proba(frames_to_input(y))
            acc[u] = float(np.mean(p.argmax(axis=1) == labels))
            soft[u] = float(np.mean(p[np.arange(len(labels)), labels]))
        if self.target in USERS:
            value, tie = acc[self.target], soft[self.target]
        elif self.target == "joint-min":
            value, tie = min(acc.values()), min(soft.values())
        else:
            value, tie = float(np.mean(list(acc.values()))), float(np.mean(list(soft.values())))
        return Evaluation(value, (value, tie), acc, snrs)


class _Tracker:
    def __init__(self, obj, budget):
        self.obj = obj
        self.budget = budget
        self.trace = []
        self.best = None

    @property
    def exhausted(self):
        return self.budget is not None and len(self.trace) >= self.budget

    def __call__(self, cfg):
        ev = self.obj.score(cfg)
        if self.best is None or ev.rank > self.best[1].rank:
            self.best = (cfg, ev)
        self.trace.append(TraceEntry(len(self.trace) + 1, cfg, ev.value, self.best[1].value, ev))
        return ev

    def result(self, **kw):
        return OptimizationResult(self.best[0], self.best[1].value, self.trace, len(self.trace), **kw)


def random_search(obj: Objective, n_samples: int, rng) -> OptimizationResult:
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    track = _Tracker(obj, None)
    for _ in range(n_samples):
        track(RISConfiguration.random(obj.n_pixels, rng))
    return track.result()


def greedy_bitflip(obj: Objective, init: RISConfiguration, max_sweeps: int, rng, restarts=0,
                   max_evaluations=None) -> OptimizationResult:
    """Single-bit hill climbing in seeded random sweep order.

    A flip is kept iff it strictly improves the rank. A climb ends after a
    sweep without any kept flip (a 1-flip local optimum) or after
    ``max_sweeps``; ``restarts`` further climbs start from random
    configurations. ``max_evaluations`` caps the number of objective calls,
    the initial one included. ``sweeps``, ``flips`` and ``converged`` in
    the result describe the first climb.
    """
    if max_sweeps < 1:
        raise ValueError("max_sweeps must be >= 1")
    track = _Tracker(obj, max_evaluations)
    stats = None
    for climb in range(restarts + 1):
        if track.exhausted:
            break
        cur = init if climb == 0 else RISConfiguration.random(obj.n_pixels, rng)
        cur_ev = track(cur)
        sweeps = flips = 0
        converged = False
        while sweeps < max_sweeps and not track.exhausted:
            sweeps += 1
            improved = False
            for i in rng.permutation(obj.n_pixels):
                if track.exhausted:
                    break
                cand = cur.flipped(int(i))
                ev = track(cand)
                if ev.rank > cur_ev.rank:
                    cur, cur_ev = cand, ev
                    flips += 1
                    improved = True
            if not improved and not track.exhausted:
                converged = True
                break
        if stats is None:
            stats = dict(sweeps=sweeps, flips=flips, converged=converged)
    return track.result(**(stats or {}))


def is_local_optimum(obj: Objective, cfg: RISConfiguration) -> bool:
    """True when no single flip strictly improves the rank."""
    base = obj.score(cfg).rank
    return all(obj.score(cfg.flipped(i)).rank <= base for i in range(obj.n_pixels))


STRATEGIES = ("greedy", "random")


def run_search(obj: Objective, strategy="greedy", budget=2000, max_sweeps=20, restarts=0, seed=0):
    """One seeded search run of at most ``budget`` evaluations.

    Greedy starts from a random configuration drawn from ``seed``; the sweep
    order comes from its own generator, so runs for different targets do not
    depend on each other.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}")
    rng = np.random.default_rng([seed, 3])
    if strategy == "random":
        return random_search(obj, budget, rng)
    init = RISConfiguration.random(obj.n_pixels, np.random.default_rng([seed, 4]))
    return greedy_bitflip(obj, init, max_sweeps, rng, restarts, max_evaluations=budget)


MAX_EXHAUSTIVE_BITS = 20


def exhaustive(obj: Objective, pixel_subset=None, base: RISConfiguration | None = None) -> OptimizationResult:
    """Enumerate every setting of ``pixel_subset`` (default: all pixels), others as in ``base``."""
    subset = list(range(obj.n_pixels)) if pixel_subset is None else [int(i) for i in pixel_subset]
    if len(subset) > MAX_EXHAUSTIVE_BITS:
        raise SubsetTooLarge(f"{len(subset)} free bits; at most {MAX_EXHAUSTIVE_BITS} allowed")
    if len(set(subset)) != len(subset) or any(not 0 <= i < obj.n_pixels for i in subset):
        raise ValueError("pixel_subset must hold distinct valid pixel indices")
    bits = (base.bits if base is not None else np.zeros(obj.n_pixels, dtype=np.uint8)).copy()
    track = _Tracker(obj, None)
    for combo in itertools.product((0, 1), repeat=len(subset)):
        bits[subset] = combo
        track(RISConfiguration(bits))
    return track.result(converged=True)


@dataclass
class PairTable:
    configs: list
    acc_user1: np.ndarray
    acc_user2: np.ndarray

    def both_above(self, threshold=0.8):
        ok = np.minimum(self.acc_user1, self.acc_user2) > threshold
        return [(c, a, b) for c, a, b, k in zip(self.configs, self.acc_user1, self.acc_user2, ok) if k]


def multi_user_sweep(obj_user1: AccuracyObjective, obj_user2: AccuracyObjective, configs) -> PairTable:
    """Accuracy of both users for every configuration (duplicates collapsed, order kept)."""
    if obj_user1.geometry != obj_user2.geometry or obj_user1.model is not obj_user2.model:
        raise ValueError("both objectives must share geometry and model")
    uniq = list({c.key(): c for c in configs}.values())
    a1 = np.array([obj_user1.score(c).accuracy["user1"] for c in uniq])
    a2 = np.array([obj_user2.score(c).accuracy["user2"] for c in uniq])
    return PairTable(uniq, a1, a2)


def pair_table_from_trace(result: OptimizationResult) -> PairTable:
    """Visited-config table of a joint-target run, which already scored both users."""
    seen = {}
    for e in result.trace:
        seen.setdefault(e.config.key(), e)
    entries = list(seen.values())
    return PairTable([e.config for e in entries],
                     np.array([e.evaluation.accuracy["user1"] for e in entries]),
                     np.array([e.evaluation.accuracy["user2"] for e in entries]))


def accuracy_curve(model: Model, eval_set: EvalSet, snrs_db, profile=ImpairmentProfile(), seed=0, user="user1"):
    """Accuracy at each SNR, with a random constant phase per frame."""
    sig, noise = _user_parts(eval_set, profile, seed, user)
    rot = np.exp(2j * np.pi * np.random.default_rng([seed, 7]).random(len(eval_set)))[:, None]
    out = []
    for s in snrs_db:
        y, _ = combine_parts(sig * rot, noise, s)
        p = model.predict_proba(frames_to_input(y))
        out.append(float(np.mean(p.argmax(axis=1) == eval_set.labels)))
    return np.array(out)


@dataclass
class Calibration:
    geometry: SceneGeometry
    grid_db: np.ndarray
    curve: np.ndarray
    random_snr_db: dict
    predicted_mean_accuracy: dict


def calibrate(model: Model, geometry: SceneGeometry, eval_set: EvalSet, target=0.22, n_configs=200,
              profile=ImpairmentProfile(), seed=0, grid_db=np.arange(-40.0, 20.5, 1.0)) -> Calibration:
    """Pick ``noise_floor_dbm`` so random configurations sit at chance level.

    Measures the classifier's accuracy-vs-SNR curve once, draws
    ``n_configs`` random configurations, and raises the noise floor in
    0.05 dB steps from the point where the curve is at its floor until the
    predicted mean random-configuration accuracy of every user is at most
    ``target``. That keeps the largest possible headroom for the optimiser
    while starting both users at chance.
    """
    curve = accuracy_curve(model, eval_set, grid_db, profile, seed)
    # a monotone envelope makes the interpolation well defined
    env = np.maximum.accumulate(curve)
    rng = np.random.default_rng([seed, 5])
    cfgs = [RISConfiguration.random(geometry.n_pixels, rng) for _ in range(n_configs)]
    base = geometry.replace(tx_power_dbm=0.0, noise_floor_dbm=0.0)
    rel = {}
    for u in USERS:
        t = pixel_terms(base, u)
        h = np.array([np.dot(t, c.signs()) for c in cfgs])
        with np.errstate(divide="ignore"):
            rel[u] = 20 * np.log10(np.abs(h)) + link_offset_db(base, u)

    def predicted(shift):
        return {u: float(np.mean(np.interp(rel[u] - shift, grid_db, env))) for u in USERS}

    # the noise floor relative to 0 dBm; start high enough that everything is at the bottom
    hi = max(np.median(v) for v in rel.values()) - grid_db[0]
    floor = hi
    while floor > hi - 200 and max(predicted(floor - 0.05).values()) <= target:
        floor -= 0.05
    geom = geometry.replace(tx_power_dbm=0.0, noise_floor_dbm=round(float(floor), 2))
    rel_final = {u: rel[u] - geom.noise_floor_dbm for u in USERS}
    return Calibration(geom, np.asarray(grid_db), curve, rel_final, predicted(geom.noise_floor_dbm))
