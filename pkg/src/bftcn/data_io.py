"""On-disk formats (features, labels, manifests, checkpoints) and synthetic data.

Feature file ``BFTF``::

    magic  b"BFTF"
    u32    version (1)
    u64    T, u64 N_f
    f32    T*N_f values, little-endian, frame-major

Checkpoint ``BFTC``::

    magic  b"BFTC"
    u32    version (1)
    u32    header length, then that many bytes of UTF-8 JSON
    f64/f32 parameter tensors, little-endian, canonical model order
    u64    checksum: first 8 bytes of BLAKE2b over everything before it
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .metrics import Segment, frames_to_segments, segments_to_frames
from .model import ModelParameters, _param_shapes
from .window import NetworkConfig

FEATURE_MAGIC = b"BFTF"
FEATURE_VERSION = 1
CHECKPOINT_MAGIC = b"BFTC"
CHECKPOINT_VERSION = 1

DEFAULT_CLASSES = ("G0", "G1", "G2", "G3", "G4", "G5")


class FormatError(ValueError):
    """Base class for malformed-file errors."""


class BadMagic(FormatError):
    pass


class VersionMismatch(FormatError):
    pass


class TruncatedFile(FormatError):
    pass


class ChecksumMismatch(FormatError):
    pass


class LabelError(FormatError):
    pass


# -- features ----------------------------------------------------------------

def write_features(path, features) -> None:
    x = np.asarray(features)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise ValueError(f"features must be a non-empty (T, N_f) matrix, got shape {x.shape}")
    header = FEATURE_MAGIC + struct.pack("<IQQ", FEATURE_VERSION, x.shape[0], x.shape[1])
    Path(path).write_bytes(header + np.ascontiguousarray(x, dtype="<f4").tobytes())


def read_features(path) -> np.ndarray:
    """Load a feature file as a float64 (T, N_f) array."""
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != FEATURE_MAGIC:
        raise BadMagic(f"{path}: not a feature file (magic {raw[:4]!r})")
    if len(raw) < 24:
        raise TruncatedFile(f"{path}: header needs 24 bytes, file has {len(raw)}")
    version, T, nf = struct.unpack_from("<IQQ", raw, 4)
    if version != FEATURE_VERSION:
        raise VersionMismatch(f"{path}: feature format version {version}, expected {FEATURE_VERSION}")
    if T < 1 or nf < 1:
        raise FormatError(f"{path}: empty feature matrix ({T}x{nf})")
    expected = T * nf * 4
    actual = len(raw) - 24
    if actual != expected:
        raise TruncatedFile(f"{path}: payload should be {expected} bytes, found {actual}")
    return np.frombuffer(raw, dtype="<f4", offset=24).reshape(T, nf).astype(np.float64)


# -- labels ------------------------------------------------------------------

def write_labels(path, labels: Sequence, classes: Sequence[str] = DEFAULT_CLASSES,
                 fmt: str = "frames") -> None:
    """Write integer labels as class tokens, one per frame or as segments."""
    tokens = [classes[int(y)] for y in labels]
    if fmt == "frames":
        text = "".join(f"{tok}\n" for tok in tokens)
    elif fmt == "segments":
        text = "".join(f"{s.start} {s.end} {s.label}\n" for s in frames_to_segments(tokens))
    else:
        raise ValueError(f"unknown label format {fmt!r}")
    Path(path).write_text(text)


def parse_segment_lines(lines: Sequence[str], where: str = "<labels>") -> list[Segment]:
    segs = []
    for n, line in enumerate(lines, 1):
        parts = line.split()
        if len(parts) != 3:
            raise LabelError(f"{where}:{n}: expected 'start end label', got {line!r}")
        try:
            segs.append(Segment(parts[2], int(parts[0]), int(parts[1])))
        except ValueError:
            raise LabelError(f"{where}:{n}: non-integer bounds in {line!r}") from None
    return segs


def read_labels(path, classes: Sequence[str] = DEFAULT_CLASSES, fmt: str = "auto") -> np.ndarray:
    """Read a label file and map tokens to dense ids by position in ``classes``.

    ``fmt="auto"`` treats the file as segments when every line has three fields.
    """
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise LabelError(f"{path}: empty label file")
    if fmt == "auto":
        fmt = "segments" if all(len(ln.split()) == 3 for ln in lines) else "frames"
    if fmt == "segments":
        segs = parse_segment_lines(lines, str(path))
        try:
            tokens = segments_to_frames(segs)
        except ValueError as e:
            raise LabelError(f"{path}: {e}") from None
    elif fmt == "frames":
        tokens = [ln.strip() for ln in lines]
    else:
        raise ValueError(f"unknown label format {fmt!r}")
    index = {c: i for i, c in enumerate(classes)}
    unknown = sorted(set(tokens) - index.keys())
    if unknown:
        raise LabelError(f"{path}: unknown label token(s) {unknown}; classes are {list(classes)}")
    return np.array([index[t] for t in tokens], dtype=np.int64)


# -- manifests ---------------------------------------------------------------

@dataclass
class VideoEntry:
    features: Path
    labels: Path | None
    fps: float = 30.0


@dataclass
class Manifest:
    classes: list[str]
    videos: list[VideoEntry] = field(default_factory=list)

    def load(self) -> list[tuple[np.ndarray, np.ndarray]]:
        out = []
        for v in self.videos:
            if v.labels is None:
                raise FileNotFoundError(f"no label file listed for {v.features}")
            for p in (v.features, v.labels):
                if not Path(p).exists():
                    raise FileNotFoundError(f"missing file: {p}")
            x = read_features(v.features)
            y = read_labels(v.labels, self.classes)
            if len(y) != x.shape[0]:
                raise LabelError(f"{v.labels}: {len(y)} labels for {x.shape[0]} frames in {v.features}")
            out.append((x, y))
        return out


def read_manifest(path) -> Manifest:
    path = Path(path)
    d = json.loads(path.read_text())
    base = path.parent
    videos = []
    for v in d.get("videos", []):
        lab = v.get("labels")
        videos.append(VideoEntry(base / v["features"], None if lab is None else base / lab,
                                 float(v.get("fps", 30.0))))
    if not d.get("classes"):
        raise FormatError(f"{path}: manifest declares no classes")
    return Manifest(list(d["classes"]), videos)


def write_manifest(path, manifest: Manifest) -> None:
    path = Path(path)
    base = path.parent.resolve()

    def rel(p):
        p = Path(p).resolve()
        try:
            return str(p.relative_to(base))
        except ValueError:
            return str(p)

    d = {"classes": list(manifest.classes),
         "videos": [{"features": rel(v.features), "labels": None if v.labels is None else rel(v.labels),
                     "fps": v.fps} for v in manifest.videos]}
    path.write_text(json.dumps(d, indent=2) + "\n")


# -- checkpoints -------------------------------------------------------------

def _checksum(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=8).digest()


def save_checkpoint(path, model: ModelParameters, float32: bool = False) -> None:
    header = {
        "config": model.config.to_dict(),
        "n_input": model.n_input,
        "seed": model.seed,
        "dropout_p": model.dropout_p,
        "classes": model.classes,
        "dtype": "f32" if float32 else "f64",
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    dtype = "<f4" if float32 else "<f8"
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(hbytes)), hbytes]
    parts.extend(np.ascontiguousarray(v, dtype=dtype).tobytes() for v in model.params.values())
    payload = b"".join(parts)
    Path(path).write_bytes(payload + _checksum(payload))


def load_checkpoint(path) -> ModelParameters:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise BadMagic(f"{path}: not a checkpoint (magic {raw[:4]!r})")
    if len(raw) < 20:
        raise TruncatedFile(f"{path}: checkpoint is only {len(raw)} bytes")
    version, hlen = struct.unpack_from("<II", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    if 12 + hlen > len(raw) - 8:
        raise TruncatedFile(f"{path}: header of {hlen} bytes runs past the end of a {len(raw)}-byte file")
    payload, stored = raw[:-8], raw[-8:]
    intact = _checksum(payload) == stored
    try:
        header = json.loads(raw[12:12 + hlen])
        cfg = NetworkConfig.from_dict(header["config"])
        n_input = header["n_input"]
        itemsize = 4 if header["dtype"] == "f32" else 8
    except (ValueError, KeyError, TypeError) as e:
        if not intact:
            raise ChecksumMismatch(f"{path}: checksum mismatch (header unreadable)") from None
        raise FormatError(f"{path}: malformed header: {e}") from None
    shapes = [(name, shape) for name, shape, _ in _param_shapes(cfg, n_input)]
    expected = 12 + hlen + sum(int(np.prod(s)) for _, s in shapes) * itemsize
    if len(payload) != expected:
        raise TruncatedFile(f"{path}: expected {expected + 8} bytes, found {len(raw)}")
    if not intact:
        raise ChecksumMismatch(f"{path}: checksum mismatch")
    dtype = "<f4" if itemsize == 4 else "<f8"
    offset = 12 + hlen
    params = {}
    for name, shape in shapes:
        n = int(np.prod(shape))
        params[name] = np.frombuffer(raw, dtype=dtype, count=n, offset=offset).reshape(shape).astype(np.float64)
        offset += n * itemsize
    return ModelParameters(cfg, n_input, params, header["seed"], header["dropout_p"], header["classes"])


# -- synthetic data ----------------------------------------------------------

@dataclass
class SynthSpec:
    n_classes: int = 6
    t_min: int = 500
    t_max: int = 700
    transition: np.ndarray | None = None  # (C, C); default: uniform over other classes
    min_dwell: int = 20
    mean_dwell: float = 60.0  # expected segment length, including min_dwell
    class_means: np.ndarray | None = None  # (C, dim); default: seeded standard normal
    sigma: float = 1.0
    dim: int = 16
    seed: int = 0

    def resolved_transition(self) -> np.ndarray:
        C = self.n_classes
        if self.transition is None:
            P = (np.ones((C, C)) - np.eye(C)) / max(C - 1, 1)
            return P if C > 1 else np.ones((1, 1))
        return np.asarray(self.transition, dtype=float)

    def resolved_means(self) -> np.ndarray:
        if self.class_means is not None:
            return np.asarray(self.class_means, dtype=float)
        # means come from a stream separate from the per-video seed
        return np.random.default_rng([self.seed, 0xC1A55]).standard_normal((self.n_classes, self.dim))

    def validate(self) -> None:
        P = self.resolved_transition()
        if P.shape != (self.n_classes, self.n_classes):
            raise ValueError(f"transition matrix must be {self.n_classes}x{self.n_classes}")
        if np.any(P < 0) or not np.allclose(P.sum(axis=1), 1.0):
            raise ValueError("transition rows must be non-negative and sum to 1")
        if self.n_classes > 1 and np.allclose(np.diag(P), 1.0):
            raise ValueError("degenerate transition matrix: every state is absorbing")
        if self.min_dwell < 1 or self.mean_dwell < self.min_dwell:
            raise ValueError("need 1 <= min_dwell <= mean_dwell")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if not 1 <= self.t_min <= self.t_max:
            raise ValueError("need 1 <= t_min <= t_max")
        if self.resolved_means().shape != (self.n_classes, self.dim):
            raise ValueError(f"class means must be ({self.n_classes}, {self.dim})")


def generate_synthetic(spec: SynthSpec, index: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """One video: Markov label path with minimum dwell, class mean + Gaussian noise.

    Segment lengths are ``min_dwell`` plus a geometric excess with the
    configured mean. ``index`` selects an independent video from the same spec.
    """
    spec.validate()
    rng = np.random.default_rng([spec.seed, index])
    P = spec.resolved_transition()
    means = spec.resolved_means()
    T = int(rng.integers(spec.t_min, spec.t_max + 1))
    labels = np.empty(T, dtype=np.int64)
    c = int(rng.integers(spec.n_classes))
    t = 0
    extra_p = 1.0 / (spec.mean_dwell - spec.min_dwell + 1.0)
    while t < T:
        length = spec.min_dwell + int(rng.geometric(extra_p)) - 1
        labels[t:t + length] = c
        t += length
        c = int(rng.choice(spec.n_classes, p=P[c]))
    x = means[labels] + spec.sigma * rng.standard_normal((T, spec.dim))
    return x, labels


def generate_dataset(spec: SynthSpec, n_videos: int, start: int = 0):
    return [generate_synthetic(spec, start + i) for i in range(n_videos)]


def nearest_mean_accuracy(dataset, means: np.ndarray) -> float:
    """Frame accuracy of assigning each frame to the closest class mean (percent)."""
    hits = total = 0
    for x, y in dataset:
        d = ((x[:, None, :] - means[None]) ** 2).sum(axis=2)
        hits += int(np.sum(d.argmin(axis=1) == y))
        total += len(y)
    return 100.0 * hits / total


def write_dataset(directory, dataset, classes: Sequence[str] = DEFAULT_CLASSES,
                  fps: float = 30.0, label_format: str = "segments", name: str = "manifest.json") -> Path:
    """Write features/labels for every video plus a manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    videos = []
    for i, (x, y) in enumerate(dataset):
        fp = directory / f"video{i:03d}.bftf"
        lp = directory / f"video{i:03d}.txt"
        write_features(fp, x)
        write_labels(lp, y, classes, label_format)
        videos.append(VideoEntry(fp, lp, fps))
    mpath = directory / name
    write_manifest(mpath, Manifest(list(classes), videos))
    return mpath


def calibrate_sigma(spec: SynthSpec, target_accuracy: float, n_videos: int = 20,
                    lo: float = 0.0, hi: float = 20.0, iters: int = 40) -> float:
    """Noise scale at which a nearest-mean classifier scores ``target_accuracy`` percent.

    Bisects on a fixed set of label paths and unit-noise draws, so the result
    is deterministic in ``spec.seed``.
    """
    base = generate_dataset(SynthSpec(**{**spec.__dict__, "sigma": 1.0}), n_videos)
    means = spec.resolved_means()
    noise = [(x - means[y], y) for x, y in base]

    def acc(s):
        return nearest_mean_accuracy([(means[y] + s * z, y) for z, y in noise], means)

    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if acc(mid) > target_accuracy:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
