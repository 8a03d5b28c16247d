"""A 1-D CNN for I/Q frames, written directly on numpy.

Layout is channel-last, ``(batch, length, channels)``. Each block is
conv (same padding, no bias) -> batchnorm -> ReLU -> maxpool(2, 2); the
ReLU and pooling are evaluated together as ``relu(max(a, b))``, which has
the same value and the same gradient routing (ties go to the first
element) as applying them one after the other. After the last block the
default head averages over time, so the single FC layer sees one value
per channel.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import EmptySet, NonFiniteActivation, NonFiniteLoss, ShapeMismatch
from .metrics import ConfusionMatrix
from .sigsynth import FRAME_LENGTH, LabeledFrame

log = logging.getLogger(__name__)

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


HEADS = ("flatten", "mean")


@dataclass(frozen=True)
class Architecture:
    filters: tuple = (16, 24, 32, 48, 64, 96)
    kernels: tuple = (8, 8, 8, 8, 8, 8)
    in_channels: int = 2
    input_length: int = FRAME_LENGTH
    n_classes: int = 5
    # "flatten" feeds every pooled position to the FC layer, "mean" averages over time first
    head: str = "mean"

    def __post_init__(self):
        if self.head not in HEADS:
            raise ShapeMismatch(f"head must be one of {HEADS}")
        if len(self.filters) != len(self.kernels):
            raise ShapeMismatch("one kernel width per conv block is required")
        if any(f < 1 for f in self.filters) or any(k < 1 for k in self.kernels):
            raise ShapeMismatch("filter counts and kernel widths must be positive")
        if self.input_length % 2 ** len(self.filters):
            raise ShapeMismatch(f"input length {self.input_length} does not survive "
                                f"{len(self.filters)} halvings")

    @property
    def n_blocks(self) -> int:
        return len(self.filters)

    @property
    def fc_in(self) -> int:
        ch = self.filters[-1] if self.filters else self.in_channels
        if self.head == "mean":
            return ch
        return ch * self.input_length // 2**self.n_blocks

    def param_shapes(self) -> dict:
        shapes = {}
        c = self.in_channels
        for i, (f, k) in enumerate(zip(self.filters, self.kernels)):
            shapes[f"conv{i}.weight"] = (f, c, k)
            shapes[f"bn{i}.gamma"] = (f,)
            shapes[f"bn{i}.beta"] = (f,)
            c = f
        shapes["fc.weight"] = (self.n_classes, self.fc_in)
        shapes["fc.bias"] = (self.n_classes,)
        return shapes

    def to_dict(self) -> dict:
        return {"filters": list(self.filters), "kernels": list(self.kernels),
                "in_channels": self.in_channels, "input_length": self.input_length,
                "n_classes": self.n_classes, "head": self.head}

    @classmethod
    def from_dict(cls, d) -> "Architecture":
        return cls(tuple(d["filters"]), tuple(d["kernels"]), d["in_channels"],
                   d["input_length"], d["n_classes"], d.get("head", "flatten"))


@dataclass(frozen=True)
class TrainConfig:
    momentum: float = 0.9
    batch_size: int = 256
    initial_lr: float = 0.02
    lr_drop_factor: float = 10.0
    lr_drop_period_epochs: int = 9
    max_epochs: int = 12
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.initial_lr <= 0:
            raise ValueError("batch_size must be >= 1 and initial_lr > 0")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 0-based ``epoch``."""
        return self.initial_lr / self.lr_drop_factor ** (epoch // self.lr_drop_period_epochs)


@dataclass
class EpochRecord:
    epoch: int
    iterations: int
    lr: float
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


def frames_to_input(frames) -> np.ndarray:
    """Complex frames ``(b, L)`` -> float ``(b, 2, L)`` with I and Q channels."""
    frames = np.atleast_2d(np.asarray(frames))
    return np.stack([frames.real, frames.imag], axis=1).astype(np.float32)


# frames per im2col chunk; keeps the column buffers cache-resident
CHUNK = 16


def _conv(h, w):
    """Same-padded 1-D convolution of channel-last ``h`` (b, n, c) with (f, c, k) weights."""
    b, n, _ = h.shape
    wf = _flat_weight(w)
    y = np.empty((b, n, w.shape[0]), dtype=h.dtype)
    # overflow is reported by the caller's finiteness check, not as a warning
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(0, b, CHUNK):
            hc = h[i : i + CHUNK]
            y[i : i + CHUNK] = (K.im2col(hc, w.shape[2]) @ wf).reshape(len(hc), n, -1)
    return y


def _conv_backward(h, dy, w, need_input_grad=True):
    """Weight gradient (f, c, k) and, optionally, input gradient of ``_conv``."""
    b, n, c = h.shape
    f, _, k = w.shape
    wf = _flat_weight(w)
    gw = np.zeros((k * c, f), dtype=np.float64 if h.dtype == np.float64 else h.dtype)
    dh = np.empty_like(h) if need_input_grad else None
    for i in range(0, b, CHUNK):
        hc = h[i : i + CHUNK]
        dyc = dy[i : i + CHUNK].reshape(-1, f)
        gw += K.im2col(hc, k).T @ dyc
        if need_input_grad:
            dh[i : i + CHUNK] = K.col2im(dyc @ wf.T, len(hc), n, c, k)
    return np.ascontiguousarray(gw.T.reshape(f, k, c).transpose(0, 2, 1)), dh


def _flat_weight(w):
    # (f, c, k) -> (k*c, f) matching the im2col column order
    f, c, k = w.shape
    return w.transpose(0, 2, 1).reshape(f, k * c).T


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class Model:
    def __init__(self, arch: Architecture, params: dict, buffers: dict, history=None):
        self.arch = arch
        self.params = params
        self.buffers = buffers
        self.history = list(history or [])

    @property
    def dtype(self):
        return self.params["fc.weight"].dtype

    @property
    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "Model":
        return Model(self.arch, {k: v.copy() for k, v in self.params.items()},
                     {k: v.copy() for k, v in self.buffers.items()}, list(self.history))

    def astype(self, dtype) -> "Model":
        m = self.copy()
        m.params = {k: v.astype(dtype) for k, v in m.params.items()}
        m.buffers = {k: v.astype(dtype) for k, v in m.buffers.items()}
        return m

    def _check_input(self, x):
        x = np.asarray(x)
        a = self.arch
        if x.ndim != 3 or x.shape[1:] != (a.in_channels, a.input_length):
            raise ShapeMismatch(f"expected (b, {a.in_channels}, {a.input_length}), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise NonFiniteActivation("non-finite input")
        return np.ascontiguousarray(x.transpose(0, 2, 1), dtype=self.dtype)

    def logits(self, x, train=False, cache=None, codes=None):
        """Forward pass to pre-softmax scores.

        ``cache`` collects what backward needs; ``codes`` pins every
        ReLU/pooling decision (used by the gradient check).
        """
        h = self._check_input(x)
        p, buf = self.params, self.buffers
        for i in range(self.arch.n_blocks):
            b, n, _ = h.shape
            h_in = h
            y = _conv(h, p[f"conv{i}.weight"])
            # relu(max(.)) would silently swallow NaN, so check before it
            with np.errstate(over="ignore", invalid="ignore"):
                finite = np.isfinite(y.sum())
            if not finite:
                raise NonFiniteActivation(f"non-finite activation in block {i}")
            gamma, beta = p[f"bn{i}.gamma"], p[f"bn{i}.beta"]
            if train:
                mu, var = K.channel_stats(y.reshape(b * n, -1))
                cnt = b * n
                buf[f"bn{i}.running_mean"] *= 1 - BN_MOMENTUM
                buf[f"bn{i}.running_mean"] += BN_MOMENTUM * mu
                buf[f"bn{i}.running_var"] *= 1 - BN_MOMENTUM
                buf[f"bn{i}.running_var"] += BN_MOMENTUM * var * cnt / max(cnt - 1, 1)
            else:
                mu, var = buf[f"bn{i}.running_mean"], buf[f"bn{i}.running_var"]
            inv = 1.0 / np.sqrt(var + BN_EPS)
            scale = (gamma * inv).astype(self.dtype)
            shift = (beta - mu * gamma * inv).astype(self.dtype)
            if codes is None:
                h, code = K.affine_relu_pool(y, scale, shift)
            else:
                h, code = K.affine_pool_fixed(y, scale, shift, codes[i])
            if cache is not None:
                cache.append((h_in, y, mu, inv, code))
        flat = h.mean(axis=1) if self.arch.head == "mean" else h.reshape(h.shape[0], -1)
        if cache is not None:
            cache.append(flat)
        with np.errstate(over="ignore", invalid="ignore"):
            z = flat @ p["fc.weight"].T + p["fc.bias"]
        if not np.all(np.isfinite(z)):
            raise NonFiniteActivation("non-finite logits")
        return z

    def forward(self, x, mode="infer"):
        if mode not in ("train", "infer"):
            raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
        # float64 keeps every probability strictly inside (0, 1)
        return softmax(self.logits(x, train=(mode == "train")).astype(np.float64))

    def predict_proba(self, x, batch_size=16):
        # small chunks keep the im2col buffers cache-resident; infer mode is batch independent
        out = [self.forward(x[i : i + batch_size]) for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, self.arch.n_classes))

    def loss_and_grads(self, x, y, cache=None, codes=None):
        """Mean cross-entropy and its gradient, batch statistics in batchnorm."""
        cache = [] if cache is None else cache
        z = self.logits(x, train=True, cache=cache, codes=codes)
        probs = softmax(z)
        y = np.asarray(y)
        bsz = len(y)
        loss = float(-np.mean(np.log(probs[np.arange(bsz), y] + 1e-30)))
        dz = probs.copy()
        dz[np.arange(bsz), y] -= 1
        dz /= bsz
        p = self.params
        grads = {}
        flat = cache[-1]
        grads["fc.weight"] = dz.T @ flat
        grads["fc.bias"] = dz.sum(axis=0)
        last_ch = self.arch.filters[-1] if self.arch.filters else self.arch.in_channels
        if self.arch.head == "mean":
            n_last = self.arch.input_length // 2**self.arch.n_blocks
            dh = np.repeat((dz @ p["fc.weight"])[:, None, :] / n_last, n_last, axis=1)
        else:
            dh = (dz @ p["fc.weight"]).reshape(bsz, -1, last_ch)
        for i in reversed(range(self.arch.n_blocks)):
            h_in, y_conv, mu, inv, code = cache[i]
            dy, dgamma, dbeta = K.bn_relu_pool_backward(
                np.ascontiguousarray(dh), code, y_conv, mu, inv, p[f"bn{i}.gamma"])
            grads[f"bn{i}.gamma"] = dgamma.astype(self.dtype)
            grads[f"bn{i}.beta"] = dbeta.astype(self.dtype)
            gw, dh = _conv_backward(h_in, dy, p[f"conv{i}.weight"], need_input_grad=i > 0)
            grads[f"conv{i}.weight"] = gw
        return loss, grads, probs


def build_model(arch: Architecture = Architecture(), seed: int = 0, dtype=np.float32) -> Model:
    """He-uniform conv/FC weights, zero FC bias, gamma=1 and beta=0."""
    rng = np.random.default_rng(seed)
    params, buffers = {}, {}
    for name, shape in arch.param_shapes().items():
        if name.endswith(".weight"):
            fan_in = int(np.prod(shape[1:]))
            lim = np.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-lim, lim, shape).astype(dtype)
        elif name.endswith(".gamma"):
            params[name] = np.ones(shape, dtype)
        else:
            params[name] = np.zeros(shape, dtype)
    for i, f in enumerate(arch.filters):
        buffers[f"bn{i}.running_mean"] = np.zeros(f, dtype)
        buffers[f"bn{i}.running_var"] = np.ones(f, dtype)
    return Model(arch, params, buffers)


def parameter_count(arch: Architecture) -> int:
    """Closed form: sum of conv f*c*k, 2f per batchnorm, and the FC layer."""
    total, c = 0, arch.in_channels
    for f, k in zip(arch.filters, arch.kernels):
        total += f * c * k + 2 * f
        c = f
    return total + arch.fc_in * arch.n_classes + arch.n_classes


def normalize_frames(frames) -> np.ndarray:
    frames = np.atleast_2d(np.asarray(frames))
    r = np.sqrt(np.mean(np.abs(frames) ** 2, axis=1, keepdims=True))
    return frames / np.where(r > 0, r, 1)


@dataclass
class TrainResult:
    final: Model
    best: Model
    history: list = field(default_factory=list)
    best_epoch: int = 0


class SGDM:
    """Momentum update ``v = mu*v - lr*g; w += v`` applied in place to ``params``."""

    def __init__(self, params: dict, momentum=0.9):
        self.params = params
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict, lr: float):
        for name, g in grads.items():
            v = self.velocity[name]
            v *= self.momentum
            v -= lr * g
            self.params[name] += v


def _iterate_scores(model, x, y, batch_size):
    loss, correct = 0.0, 0
    for i in range(0, len(x), batch_size):
        pr = model.forward(frames_to_input(x[i : i + batch_size]))
        yb = y[i : i + batch_size]
        loss += float(-np.log(pr[np.arange(len(yb)), yb] + 1e-30).sum())
        correct += int((pr.argmax(axis=1) == yb).sum())
    return loss / len(x), correct / len(x)


def train(model: Model, dataset, cfg: TrainConfig = TrainConfig(), progress=None) -> TrainResult:
    """SGD with momentum, step learning-rate schedule, best-validation checkpoint.

    ``dataset`` is anything with ``subset("train")`` / ``subset("val")``
    returning ``(complex frames, labels)``. Partial trailing batches are
    dropped, so an epoch is ``n_train // batch_size`` iterations.
    """
    xtr, ytr = dataset.subset("train")
    xval, yval = dataset.subset("val")
    if len(xtr) == 0 or len(xval) == 0:
        raise EmptySet("train and val partitions must be non-empty")
    if ytr.min() < 0 or ytr.max() >= model.arch.n_classes:
        raise ValueError("labels out of range")
    model = model.copy()
    bs = min(cfg.batch_size, len(xtr))
    iters = len(xtr) // bs
    opt = SGDM(model.params, cfg.momentum)
    best, best_acc, best_epoch = model.copy(), -1.0, 0
    step = 0
    for epoch in range(cfg.max_epochs):
        lr = cfg.lr_at(epoch)
        order = np.random.default_rng([cfg.shuffle_seed, epoch]).permutation(len(xtr))
        tot_loss, tot_correct = 0.0, 0
        for it in range(iters):
            idx = order[it * bs : (it + 1) * bs]
            try:
                loss, grads, probs = model.loss_and_grads(frames_to_input(xtr[idx]), ytr[idx])
            except NonFiniteActivation as exc:
                raise NonFiniteLoss(step, epoch) from exc
            if not np.isfinite(loss):
                raise NonFiniteLoss(step, epoch)
            opt.step(grads, lr)
            tot_loss += loss
            tot_correct += int((probs.argmax(axis=1) == ytr[idx]).sum())
            step += 1
        val_loss, val_acc = _iterate_scores(model, xval, yval, CHUNK)
        rec = EpochRecord(epoch + 1, iters, lr, tot_loss / iters, tot_correct / (iters * bs),
                          val_loss, val_acc)
        model.history.append(rec)
        log.info("epoch %d lr %.4g loss %.4f acc %.4f val_acc %.4f", rec.epoch, lr,
                 rec.train_loss, rec.train_acc, val_acc)
        if progress is not None:
            progress(rec)
        if val_acc > best_acc:
            best, best_acc, best_epoch = model.copy(), val_acc, epoch + 1
    best.history = list(model.history)
    return TrainResult(model, best, list(model.history), best_epoch)


def gradient_check(model: Model, x, y, step=1e-4, samples_per_group=6, seed=0,
                   freeze_kinks=True, max_draws=200):
    """Compare analytic gradients with central differences on a float64 copy.

    A few random coordinates of every parameter group are probed. With
    ``freeze_kinks`` the probes reuse the base point's ReLU/pooling
    decisions, i.e. they difference the linear piece the base point lies
    on; at full frame length a 1e-4 step otherwise flips some decision for
    nearly every coordinate. Without it, probes that flip a decision are
    discarded and redrawn.

    Returns the worst group error ``max|analytic - numeric| /
    max(|analytic|, |numeric|)`` and the per-group errors.
    """
    m = model.astype(np.float64)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if len(x) > 4:
        raise ValueError("gradient check expects a batch of at most 4")
    rng = np.random.default_rng(seed)
    saved = {k: v.copy() for k, v in m.buffers.items()}
    cache = []
    _, grads, _ = m.loss_and_grads(x, y, cache)
    base = [entry[4] for entry in cache[:-1]]
    pinned = base if freeze_kinks else None

    def probe(flat, q, delta):
        orig = flat[q]
        flat[q] = orig + delta
        c = []
        loss, _, _ = m.loss_and_grads(x, y, c, codes=pinned)
        flat[q] = orig
        same = all(np.array_equal(a, e[4]) for a, e in zip(base, c[:-1]))
        return loss, same

    errors = {}
    for name, param in m.params.items():
        flat = param.reshape(-1)
        ana, num = [], []
        for q in rng.permutation(param.size)[:max_draws]:
            lp, ok_p = probe(flat, q, step)
            lm, ok_m = probe(flat, q, -step)
            if ok_p and ok_m:
                ana.append(grads[name].reshape(-1)[q])
                num.append((lp - lm) / (2 * step))
            if len(ana) == samples_per_group:
                break
        if not ana:
            raise RuntimeError(f"every probe of {name} straddles a kink")
        ana, num = np.array(ana), np.array(num)
        scale = max(np.abs(ana).max(), np.abs(num).max())
        errors[name] = float(np.abs(ana - num).max() / scale) if scale > 0 else 0.0
    m.buffers = saved
    return max(errors.values()), errors


def predict(model: Model, frame):
    """(class index, probability vector); ties resolve to the lowest index."""
    samples = frame.samples if isinstance(frame, LabeledFrame) else np.asarray(frame)
    if samples.ndim != 1 or samples.shape[0] != model.arch.input_length:
        raise ShapeMismatch(f"expected a single frame of {model.arch.input_length} samples")
    probs = model.forward(frames_to_input(normalize_frames(samples)))[0]
    return int(np.argmax(probs)), probs


def evaluate(model: Model, frames, labels, batch_size=CHUNK) -> ConfusionMatrix:
    frames = np.asarray(frames)
    labels = np.asarray(labels)
    if len(frames) == 0:
        raise EmptySet("no frames to evaluate")
    probs = model.predict_proba(frames_to_input(normalize_frames(frames)), batch_size)
    return ConfusionMatrix.from_labels(labels, probs.argmax(axis=1), model.arch.n_classes)
