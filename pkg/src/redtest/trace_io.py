"""Activation tensors on disk, trace manifests and synthetic traces.

Tensors are stored one per file in the NPY v1.0 format.  Only little-endian
32/64-bit floats in C order are accepted; everything is promoted to float64
on read.
"""

from __future__ import annotations

import ast
import json
import math
import os
import struct
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    BadMagic,
    BadSpec,
    EmptyTensor,
    IoFailure,
    ManifestMismatch,
    NonFinite,
    RedTestError,
    TooFewSamples,
    Truncated,
    UnsupportedLayout,
)

NPY_MAGIC = b"\x93NUMPY"
HEADER_ALIGN = 64
STRUCTURE_FAMILIES = ("plain", "block")
_DTYPES = {"<f8": np.dtype("<f8"), "<f4": np.dtype("<f4")}


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ActivationMatrix:
    """One layer's intermediate representation, an ``n x p`` float64 matrix."""

    layer_name: str
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError(f"activation matrix must be 2-D, got shape {data.shape}")
        if data.size == 0:
            raise EmptyTensor(f"layer {self.layer_name!r} has an empty axis: {data.shape}")
        if not np.all(np.isfinite(data)):
            raise NonFinite(f"layer {self.layer_name!r} contains NaN or Inf")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def p(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class ModelTrace:
    """Ordered activations of one model on one fixed input batch."""

    model_name: str
    layers: tuple[ActivationMatrix, ...]
    structure_family: str = "plain"

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise ManifestMismatch("a trace needs at least one layer")
        if self.structure_family not in STRUCTURE_FAMILIES:
            raise ManifestMismatch(f"unknown structure family {self.structure_family!r}")
        n = layers[0].n
        for layer in layers:
            if layer.n != n:
                raise ManifestMismatch(
                    f"layer {layer.layer_name!r} has {layer.n} samples, expected {n}"
                )
        if n < 4:
            raise TooFewSamples(f"a trace needs at least 4 samples, got {n}")

    @property
    def batch_size(self) -> int:
        return self.layers[0].n

    @property
    def layer_names(self) -> list[str]:
        return [layer.layer_name for layer in self.layers]

    def __len__(self) -> int:
        return len(self.layers)


@dataclass(frozen=True)
class LayerEntry:
    name: str
    file: str
    shape: tuple[int, ...]


@dataclass(frozen=True)
class TraceManifest:
    model: str
    batch_size: int
    structure_family: str
    layers: tuple[LayerEntry, ...] = field(default_factory=tuple)

    @classmethod
    def from_dict(cls, obj: dict) -> "TraceManifest":
        try:
            layers = tuple(
                LayerEntry(str(e["name"]), str(e["file"]), tuple(int(s) for s in e["shape"]))
                for e in obj["layers"]
            )
            manifest = cls(
                model=str(obj["model"]),
                batch_size=int(obj["batch_size"]),
                structure_family=str(obj.get("structure_family", "plain")),
                layers=layers,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestMismatch(f"malformed manifest: {exc!r}") from exc
        if manifest.structure_family not in STRUCTURE_FAMILIES:
            raise ManifestMismatch(f"unknown structure_family {manifest.structure_family!r}")
        for e in manifest.layers:
            if not e.shape or e.shape[0] != manifest.batch_size:
                raise ManifestMismatch(
                    f"layer {e.name!r}: first axis of shape {list(e.shape)} "
                    f"does not equal batch_size {manifest.batch_size}"
                )
        return manifest

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "batch_size": self.batch_size,
            "structure_family": self.structure_family,
            "layers": [{"name": e.name, "file": e.file, "shape": list(e.shape)} for e in self.layers],
        }


# -- NPY -----------------------------------------------------------------------


def _header_text(shape: Sequence[int]) -> bytes:
    if len(shape) == 1:
        shape_repr = f"({shape[0]},)"
    else:
        shape_repr = "(" + ", ".join(str(int(s)) for s in shape) + ")"
    text = "{'descr': '<f8', 'fortran_order': False, 'shape': %s, }" % shape_repr
    # 10 bytes of prefix, then text, padding spaces and a trailing newline
    pad = -(10 + len(text) + 1) % HEADER_ALIGN
    return (text + " " * pad + "\n").encode("latin1")


def encode_tensor(tensor) -> bytes:
    """Serialize ``tensor`` as NPY v1.0 bytes with dtype ``<f8``."""
    a = np.asarray(tensor, dtype="<f8")
    if a.ndim == 0 or a.size == 0:
        raise EmptyTensor(f"cannot write tensor of shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFinite("tensor contains NaN or Inf")
    header = _header_text(a.shape)
    return NPY_MAGIC + b"\x01\x00" + struct.pack("<H", len(header)) + header + np.ascontiguousarray(a).tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    """Parse NPY v1.0 bytes into a float64 array."""
    if buf[:6] != NPY_MAGIC:
        raise BadMagic(f"bad magic {buf[:6]!r}")
    if len(buf) < 10:
        raise Truncated("file ends inside the NPY preamble")
    if tuple(buf[6:8]) != (1, 0):
        raise UnsupportedLayout(f"NPY version {buf[6]}.{buf[7]} is not supported (need 1.0)")
    (hlen,) = struct.unpack("<H", buf[8:10])
    if len(buf) < 10 + hlen:
        raise Truncated("file ends inside the NPY header")
    try:
        header = ast.literal_eval(buf[10 : 10 + hlen].decode("latin1"))
        descr = header["descr"]
        fortran = header["fortran_order"]
        shape = tuple(int(s) for s in header["shape"])
    except (ValueError, SyntaxError, KeyError, TypeError) as exc:
        raise UnsupportedLayout(f"unparseable NPY header: {exc!r}") from exc
    if fortran:
        raise UnsupportedLayout("fortran_order=True is not supported")
    if descr not in _DTYPES:
        raise UnsupportedLayout(f"dtype {descr!r} is not supported (need '<f4' or '<f8')")
    dtype = _DTYPES[descr]
    count = math.prod(shape)
    nbytes = count * dtype.itemsize
    payload = buf[10 + hlen : 10 + hlen + nbytes]
    if len(payload) < nbytes:
        raise Truncated(f"payload has {len(payload)} bytes, shape {shape} needs {nbytes}")
    a = np.frombuffer(payload, dtype=dtype, count=count).astype(np.float64).reshape(shape)
    if not np.all(np.isfinite(a)):
        raise NonFinite("tensor contains NaN or Inf")
    return a


def read_tensor(path) -> np.ndarray:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return decode_tensor(buf)


def atomic_write_bytes(path, data: bytes) -> None:
    """Write ``data`` to ``path`` via a temp file and rename."""
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def write_tensor(path, tensor) -> None:
    atomic_write_bytes(path, encode_tensor(tensor))


# -- traces --------------------------------------------------------------------


def flatten(tensor, layer_name: str = "") -> ActivationMatrix:
    """Collapse every non-batch axis of ``tensor`` in C order."""
    a = np.asarray(tensor, dtype=np.float64)
    if a.ndim < 2:
        raise UnsupportedLayout(f"need a batch axis plus at least one feature axis, got shape {a.shape}")
    if 0 in a.shape:
        raise EmptyTensor(f"tensor of shape {a.shape} has an empty axis")
    return ActivationMatrix(layer_name, a.reshape(a.shape[0], -1))


def load_manifest(manifest_path) -> TraceManifest:
    try:
        obj = json.loads(Path(manifest_path).read_text())
    except OSError as exc:
        raise IoFailure(f"cannot read manifest {manifest_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestMismatch(f"manifest {manifest_path} is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ManifestMismatch("manifest must be a JSON object")
    return TraceManifest.from_dict(obj)


def _load_layer(base: Path, entry: LayerEntry) -> ActivationMatrix:
    try:
        t = read_tensor(base / entry.file)
    except RedTestError as exc:
        raise type(exc)(f"layer {entry.name!r}: {exc}") from exc
    if tuple(t.shape) != entry.shape:
        raise ManifestMismatch(
            f"layer {entry.name!r}: manifest declares shape {list(entry.shape)}, "
            f"file holds {list(t.shape)}"
        )
    return flatten(t, entry.name)


def load_trace(manifest_path, threads: int | None = None) -> ModelTrace:
    """Load every layer listed in a manifest, flattened, in manifest order."""
    manifest = load_manifest(manifest_path)
    if not manifest.layers:
        raise ManifestMismatch("manifest lists no layers")
    base = Path(manifest_path).parent
    if threads == 1 or len(manifest.layers) == 1:
        layers = [_load_layer(base, e) for e in manifest.layers]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            layers = list(pool.map(lambda e: _load_layer(base, e), manifest.layers))
    return ModelTrace(manifest.model, tuple(layers), manifest.structure_family)


def save_trace(trace: ModelTrace, out_dir, manifest_name: str = "manifest.json") -> Path:
    """Write every layer as ``<name>.npy`` plus a manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for layer in trace.layers:
        fname = f"{layer.layer_name}.npy"
        write_tensor(out / fname, layer.data)
        entries.append(LayerEntry(layer.layer_name, fname, tuple(layer.data.shape)))
    manifest = TraceManifest(trace.model_name, trace.batch_size, trace.structure_family, tuple(entries))
    path = out / manifest_name
    atomic_write_bytes(path, (json.dumps(manifest.to_dict(), indent=2) + "\n").encode())
    return path


# -- synthetic traces ----------------------------------------------------------


@dataclass(frozen=True)
class LayerSpec:
    """Width ``p`` of a synthetic layer and its correlation ``rho`` with the previous one."""

    p: int
    rho: float = 0.0


def parse_layer_specs(text: str) -> list[LayerSpec]:
    """Parse ``"16:0,16:1,8:0.5"``; the ``:rho`` part may be omitted."""
    specs = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        p, _, rho = item.partition(":")
        try:
            specs.append(LayerSpec(int(p), float(rho) if rho else 0.0))
        except ValueError as exc:
            raise BadSpec(f"bad layer spec {item!r}") from exc
    return specs


def _orthonormal_columns(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    # sign convention makes the factorization unique
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    return q * signs


def synth_trace(
    n: int,
    layer_specs: Iterable[LayerSpec | tuple],
    seed: int,
    *,
    rotate: bool = True,
    model_name: str = "synthetic",
    structure_family: str = "plain",
) -> ModelTrace:
    """Generate a chain of Gaussian layers with controlled adjacent correlation.

    Layer 1 is i.i.d. standard normal.  Layer ``i+1`` is
    ``rho * layer_i @ W + sqrt(1 - rho**2) * G`` where ``W`` has orthonormal
    columns and ``G`` is fresh noise.  With ``rotate=False``, ``W`` is the
    leading columns of the identity.

    Randomness comes from numpy's Philox counter-based generator keyed by
    ``seed``, so the output is a pure function of the arguments.
    """
    specs = [s if isinstance(s, LayerSpec) else LayerSpec(*s) for s in layer_specs]
    if n < 4:
        raise BadSpec(f"n must be at least 4, got {n}")
    if not specs:
        raise BadSpec("need at least one layer")
    for k, s in enumerate(specs):
        if s.p < 1:
            raise BadSpec(f"layer {k + 1}: width must be positive")
        if not 0.0 <= s.rho <= 1.0:
            raise BadSpec(f"layer {k + 1}: rho={s.rho} outside [0, 1]")
        if k and s.rho > 0 and s.p > specs[k - 1].p:
            raise BadSpec(f"layer {k + 1}: width {s.p} exceeds previous width {specs[k - 1].p} with rho > 0")
    if not 0 <= seed < 2**64:
        raise BadSpec("seed must be an unsigned 64-bit integer")

    rng = np.random.Generator(np.random.Philox(seed))
    x = rng.standard_normal((n, specs[0].p))
    layers = [ActivationMatrix("layer1", x)]
    for k, s in enumerate(specs[1:], start=2):
        prev = specs[k - 2].p
        if rotate:
            w = _orthonormal_columns(rng, prev, s.p) if s.rho > 0 else None
        else:
            w = np.eye(prev, s.p)
        g = rng.standard_normal((n, s.p))
        if s.rho == 1.0:
            x = x @ w
        elif s.rho == 0.0:
            x = g
        else:
            x = s.rho * (x @ w) + math.sqrt(1.0 - s.rho**2) * g
        layers.append(ActivationMatrix(f"layer{k}", x))
    return ModelTrace(model_name, tuple(layers), structure_family)
