"""On-disk formats: dataset container + manifest, checkpoint container, scenario files.

Dataset container (little-endian)::

    magic    8 bytes  b"RAMCDSET"
    version  uint32   1
    length   uint32   complex samples per record (2048)
    count    uint64   number of records
    records  count x length x 2 float32, I and Q interleaved

The manifest next to it is ``key=value`` text carrying the labels, seeds,
partitions and the generating spec. Checkpoints are ``b"RAMCCKPT"``, a
uint32 version, a uint32 header length, a JSON header (sorted keys) and the
named float32 arrays in header order.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import math
import struct
from pathlib import Path

import numpy as np

from .cnn import Architecture, EpochRecord, Model, TrainConfig
from .errors import FormatError, ManifestMismatch, TruncatedRecord
from .impairments import Dataset, DatasetSpec, ImpairmentProfile
from .ris_channel import SceneGeometry
from .sigsynth import CLASS_NAMES, FRAME_LENGTH, ShapingConfig

DATASET_MAGIC = b"RAMCDSET"
CHECKPOINT_MAGIC = b"RAMCCKPT"
FORMAT_VERSION = 1
_DS_HEADER = struct.Struct("<8sIIQ")
_CK_HEADER = struct.Struct("<8sII")


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _plain(obj):
    """Dataclass tree -> JSON-friendly dict (tuples become lists, inf stays a float)."""
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def config_hash(*objs) -> str:
    return _sha256(json.dumps([_plain(o) for o in objs], sort_keys=True))


# ---------------------------------------------------------------- datasets

def write_dataset(path, ds: Dataset):
    """Write ``path`` (records) and ``path.manifest``; returns the manifest path."""
    path = Path(path)
    samples = np.ascontiguousarray(ds.samples, dtype=np.complex64)
    n, length = samples.shape
    with open(path, "wb") as fh:
        fh.write(_DS_HEADER.pack(DATASET_MAGIC, FORMAT_VERSION, length, n))
        fh.write(samples.view("<f4").tobytes())
    spec = ds.spec
    lines = {
        "format": "ris-amc-dataset",
        "version": FORMAT_VERSION,
        "count": n,
        "frame_length": length,
        "classes": ",".join(CLASS_NAMES),
        "class_counts": ",".join(str(int(c)) for c in np.bincount(ds.labels, minlength=len(CLASS_NAMES))),
        "master_seed": spec.master_seed,
        "frames_per_class": spec.frames_per_class,
        "split": ",".join(repr(float(f)) for f in spec.split),
        "profile": json.dumps(_plain(spec.profile), sort_keys=True),
        "shaping": json.dumps(_plain(spec.shaping), sort_keys=True),
        "spec_sha256": config_hash(spec),
        "labels": ",".join(map(str, ds.labels.tolist())),
        "seeds": ",".join(map(str, ds.seeds.tolist())),
        "partition": ",".join(map(str, ds.partition.tolist())),
    }
    manifest = path.with_name(path.name + ".manifest")
    manifest.write_text("".join(f"{k}={v}\n" for k, v in lines.items()))
    return manifest


def read_manifest(path) -> dict:
    out = {}
    for i, line in enumerate(Path(path).read_text().splitlines()):
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"manifest line {i + 1} is not key=value")
        k, v = line.split("=", 1)
        out[k] = v
    if out.get("format") != "ris-amc-dataset":
        raise FormatError("not a ris-amc dataset manifest")
    return out


def _int_list(text):
    return np.array([int(v) for v in text.split(",")] if text else [], dtype=np.int64)


def read_dataset(path) -> Dataset:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _DS_HEADER.size:
        raise FormatError("file shorter than the dataset header")
    magic, version, length, n = _DS_HEADER.unpack_from(raw)
    if magic != DATASET_MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported dataset version {version}")
    rec = length * 8
    body = len(raw) - _DS_HEADER.size
    if body < n * rec:
        raise TruncatedRecord(body // rec)
    if body > n * rec:
        raise FormatError("trailing bytes after the last record")
    samples = np.frombuffer(raw, dtype="<f4", offset=_DS_HEADER.size, count=n * length * 2)
    samples = samples.view(np.complex64).reshape(n, length).copy()

    man = read_manifest(path.with_name(path.name + ".manifest"))
    labels, seeds, part = _int_list(man["labels"]), _int_list(man["seeds"]), _int_list(man["partition"])
    if int(man["count"]) != n or not len(labels) == len(seeds) == len(part) == n:
        raise ManifestMismatch(f"manifest lists {man['count']} records ({len(labels)} labels), file holds {n}")
    spec = DatasetSpec(
        frames_per_class=int(man["frames_per_class"]),
        split=tuple(float(v) for v in man["split"].split(",")),
        profile=ImpairmentProfile(**json.loads(man["profile"])),
        shaping=ShapingConfig(**json.loads(man["shaping"])),
        master_seed=int(man["master_seed"]),
    )
    if config_hash(spec) != man["spec_sha256"]:
        raise ManifestMismatch("spec hash does not match the manifest contents")
    return Dataset(samples, labels, seeds, part.astype(np.int8), spec)


def dataset_file_size(n_records, frame_length=FRAME_LENGTH) -> int:
    return _DS_HEADER.size + n_records * frame_length * 8


# ---------------------------------------------------------------- checkpoints

def write_checkpoint(path, model: Model, meta=None):
    names = list(model.params) + list(model.buffers)
    arrays = {**model.params, **model.buffers}
    header = {
        "format": "ris-amc-checkpoint",
        "architecture": model.arch.to_dict(),
        "params": list(model.params),
        "buffers": list(model.buffers),
        "shapes": {k: list(arrays[k].shape) for k in names},
        "history": [dataclasses.asdict(r) for r in model.history],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_CK_HEADER.pack(CHECKPOINT_MAGIC, FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for k in names:
            fh.write(np.ascontiguousarray(arrays[k], dtype="<f4").tobytes())


def read_checkpoint(path) -> tuple[Model, dict]:
    raw = Path(path).read_bytes()
    if len(raw) < _CK_HEADER.size:
        raise FormatError("file shorter than the checkpoint header")
    magic, version, hlen = _CK_HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(raw[_CK_HEADER.size : _CK_HEADER.size + hlen])
    except ValueError as exc:
        raise FormatError("malformed checkpoint header") from exc
    arch = Architecture.from_dict(header["architecture"])
    off = _CK_HEADER.size + hlen
    arrays = {}
    for k in header["params"] + header["buffers"]:
        shape = tuple(header["shapes"][k])
        count = math.prod(shape)
        if off + 4 * count > len(raw):
            raise FormatError(f"checkpoint truncated inside array {k}")
        arrays[k] = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(shape).astype(np.float32)
        off += 4 * count
    if off != len(raw):
        raise FormatError("trailing bytes after the last array")
    expected = arch.param_shapes()
    for k, shape in expected.items():
        if k not in arrays or arrays[k].shape != shape:
            raise FormatError(f"parameter {k} missing or mis-shaped for the stored architecture")
    params = {k: arrays[k] for k in header["params"]}
    buffers = {k: arrays[k] for k in header["buffers"]}
    history = [EpochRecord(**r) for r in header["history"]]
    return Model(arch, params, buffers, history), header["meta"]


# ---------------------------------------------------------------- scenarios

@dataclasses.dataclass(frozen=True)
class OptimizerSettings:
    strategy: str = "greedy"
    budget: int = 2000
    max_sweeps: int = 20
    restarts: int = 0
    eval_frames_per_class: int = 50
    report_frames_per_class: int = 100
    eval_seed: int = 1000
    pair_threshold: float = 0.8
    calibration_target: float = 0.22
    targets: tuple = ("user1", "user2", "joint-min")


@dataclasses.dataclass(frozen=True)
class Scenario:
    seed: int = 0
    dataset: DatasetSpec = DatasetSpec()
    architecture: Architecture = Architecture()
    training: TrainConfig = TrainConfig()
    geometry: SceneGeometry = SceneGeometry()
    optimizer: OptimizerSettings = OptimizerSettings()

    def sha256(self) -> str:
        return config_hash(self)


_SECTIONS = {
    "impairments": ImpairmentProfile,
    "shaping": ShapingConfig,
    "architecture": Architecture,
    "training": TrainConfig,
    "geometry": SceneGeometry,
    "optimizer": OptimizerSettings,
}


def _coerce(text: str, default):
    text = text.strip()
    if isinstance(default, bool):
        return text.lower() in ("1", "true", "yes", "on")
    if isinstance(default, tuple):
        items = [t.strip() for t in text.split(",") if t.strip()]
        if default and all(isinstance(d, str) for d in default):
            return tuple(items)
        if default and all(isinstance(d, int) for d in default):
            return tuple(int(t) for t in items)
        return tuple(float(t) for t in items)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def _section(cp, name, cls, base):
    if not cp.has_section(name):
        return base
    defaults = {f.name: getattr(base, f.name) for f in dataclasses.fields(cls)}
    kw = {}
    for key, value in cp.items(name):
        if key not in defaults:
            raise FormatError(f"unknown key {key!r} in [{name}]")
        kw[key] = _coerce(value, defaults[key])
    try:
        return dataclasses.replace(base, **kw)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"invalid [{name}] section: {exc}") from exc


def load_scenario(path) -> Scenario:
    cp = configparser.ConfigParser()
    try:
        read = cp.read(path)
    except configparser.Error as exc:
        raise FormatError(f"cannot parse scenario {path}: {exc}") from exc
    if not read:
        raise FileNotFoundError(path)
    known = set(_SECTIONS) | {"run", "dataset"}
    for s in cp.sections():
        if s not in known:
            raise FormatError(f"unknown section [{s}]")
    sc = Scenario()
    seed = cp.getint("run", "seed", fallback=sc.seed)
    profile = _section(cp, "impairments", ImpairmentProfile, ImpairmentProfile())
    shaping = _section(cp, "shaping", ShapingConfig, ShapingConfig())
    ds_base = DatasetSpec(profile=profile, shaping=shaping, master_seed=seed)
    ds_fields = {"frames_per_class": 5000, "split": (0.8, 0.1, 0.1)}
    kw = {}
    if cp.has_section("dataset"):
        for key, value in cp.items("dataset"):
            if key not in ds_fields:
                raise FormatError(f"unknown key {key!r} in [dataset]")
            kw[key] = _coerce(value, ds_fields[key])
    dataset = dataclasses.replace(ds_base, **kw)
    dataset.partition_sizes()
    return Scenario(
        seed=seed,
        dataset=dataset,
        architecture=_section(cp, "architecture", Architecture, Architecture()),
        training=_section(cp, "training", TrainConfig, TrainConfig(shuffle_seed=seed)),
        geometry=_section(cp, "geometry", SceneGeometry, SceneGeometry()),
        optimizer=_section(cp, "optimizer", OptimizerSettings, OptimizerSettings()),
    )
