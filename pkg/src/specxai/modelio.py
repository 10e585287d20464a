"""Model and tensor interchange files.

A human-readable JSON manifest describes the structure; all numeric
payloads live in one raw little-endian float32 blob next to it, located
by element offsets.  The format is deliberately trivial to write from
any ecosystem, and saving a loaded model reproduces both files byte for
byte.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import DimensionError, ModelFormatError
from .netgraph import (
    AvgPool,
    Concat,
    Conv2d,
    Dense,
    Flatten,
    MaxPool,
    NetworkModel,
    ReLU,
    Residual,
    Sigmoid,
    Tanh,
)

FORMAT_VERSION = 1
_STATELESS = {"relu": ReLU, "sigmoid": Sigmoid, "tanh": Tanh, "flatten": Flatten}


class _BlobWriter:
    def __init__(self):
        self.chunks: list[np.ndarray] = []
        self.offset = 0

    def add(self, array: np.ndarray) -> dict:
        flat = np.ascontiguousarray(array, dtype="<f4").ravel()
        ref = {"offset": self.offset, "shape": list(array.shape)}
        self.chunks.append(flat)
        self.offset += flat.size
        return ref

    def add_opt(self, array):
        return None if array is None else self.add(array)

    def tobytes(self) -> bytes:
        if not self.chunks:
            return b""
        return np.concatenate(self.chunks).tobytes()


def _layer_entry(layer, blob: _BlobWriter) -> dict:
    if isinstance(layer, Dense):
        return {
            "kind": "dense",
            "weight": blob.add(layer.weight),
            "bias": blob.add_opt(layer.bias),
        }
    if isinstance(layer, Conv2d):
        return {
            "kind": "conv2d",
            "kernel": blob.add(layer.kernel),
            "bias": blob.add_opt(layer.bias),
            "stride": list(layer.stride),
            "padding": list(layer.padding),
            "dilation": list(layer.dilation),
        }
    if isinstance(layer, AvgPool):
        return {"kind": "avg_pool", "window": list(layer.window), "stride": list(layer.stride)}
    if isinstance(layer, MaxPool):
        return {"kind": "max_pool", "window": list(layer.window), "stride": list(layer.stride)}
    for kind, cls in _STATELESS.items():
        if isinstance(layer, cls):
            return {"kind": kind}
    if isinstance(layer, Residual):
        return {
            "kind": "residual",
            "skip": blob.add_opt(layer.skip),
            "inner": [_layer_entry(inner, blob) for inner in layer.inner],
        }
    if isinstance(layer, Concat):
        return {
            "kind": "concat",
            "w_a": blob.add(layer.w_a),
            "w_b": blob.add(layer.w_b),
            "bias": blob.add_opt(layer.bias),
            "branch_a": [_layer_entry(sub, blob) for sub in layer.branch_a],
            "branch_b": [_layer_entry(sub, blob) for sub in layer.branch_b],
        }
    raise ModelFormatError(f"cannot serialize layer kind {type(layer).__name__}")


def build_manifest(model: NetworkModel, blob_name: str) -> tuple[dict, bytes]:
    """Manifest dict plus the blob bytes for a model."""
    blob = _BlobWriter()
    layers = [_layer_entry(layer, blob) for layer in model.layers]
    data = blob.tobytes()
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": "model",
        "name": model.name,
        "input_shape": list(model.input_shape),
        "display_shape": None
        if model.display_shape is None
        else list(model.display_shape),
        "dtype": "float32",
        "blob": blob_name,
        "blob_elements": blob.offset,
        "blob_sha256": hashlib.sha256(data).hexdigest(),
        "layers": layers,
    }
    return manifest, data


def save_model(model: NetworkModel, path: str | Path) -> Path:
    """Write ``<path>`` (manifest) and the sibling ``.bin`` blob."""
    path = Path(path)
    blob_path = path.with_suffix(".bin")
    manifest, data = build_manifest(model, blob_path.name)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob_path.write_bytes(data)
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


class _BlobReader:
    def __init__(self, data: np.ndarray):
        self.data = data

    def get(self, ref, what: str) -> np.ndarray:
        if not isinstance(ref, dict) or "offset" not in ref or "shape" not in ref:
            raise ModelFormatError(f"malformed blob reference for {what}")
        shape = tuple(int(s) for s in ref["shape"])
        offset = int(ref["offset"])
        count = int(np.prod(shape)) if shape else 1
        if offset < 0 or offset + count > self.data.size:
            raise ModelFormatError(
                f"corrupt blob: {what} reference [{offset}, {offset + count}) "
                f"outside blob of {self.data.size} elements"
            )
        return self.data[offset : offset + count].reshape(shape)

    def get_opt(self, ref, what: str):
        return None if ref is None else self.get(ref, what)


def _entry_to_layer(entry: dict, blob: _BlobReader):
    kind = entry.get("kind")
    if kind == "dense":
        return Dense(blob.get(entry["weight"], "dense weight"),
                     blob.get_opt(entry.get("bias"), "dense bias"))
    if kind == "conv2d":
        return Conv2d(
            blob.get(entry["kernel"], "conv kernel"),
            blob.get_opt(entry.get("bias"), "conv bias"),
            stride=tuple(entry.get("stride", (1, 1))),
            padding=tuple(entry.get("padding", (0, 0))),
            dilation=tuple(entry.get("dilation", (1, 1))),
        )
    if kind == "avg_pool":
        return AvgPool(tuple(entry["window"]), tuple(entry["stride"]))
    if kind == "max_pool":
        return MaxPool(tuple(entry["window"]), tuple(entry["stride"]))
    if kind in _STATELESS:
        return _STATELESS[kind]()
    if kind == "residual":
        return Residual(
            inner=tuple(_entry_to_layer(e, blob) for e in entry["inner"]),
            skip=blob.get_opt(entry.get("skip"), "residual skip"),
        )
    if kind == "concat":
        return Concat(
            branch_a=tuple(_entry_to_layer(e, blob) for e in entry["branch_a"]),
            branch_b=tuple(_entry_to_layer(e, blob) for e in entry["branch_b"]),
            w_a=blob.get(entry["w_a"], "concat w_a"),
            w_b=blob.get(entry["w_b"], "concat w_b"),
            bias=blob.get_opt(entry.get("bias"), "concat bias"),
        )
    raise ModelFormatError(f"unknown layer kind {kind!r} in manifest")


def _read_blob(manifest: dict, manifest_path: Path) -> np.ndarray:
    blob_path = manifest_path.parent / manifest["blob"]
    try:
        raw = blob_path.read_bytes()
    except OSError as exc:
        raise ModelFormatError(f"cannot read blob {blob_path}: {exc}") from exc
    expected = int(manifest["blob_elements"])
    if len(raw) != 4 * expected:
        raise ModelFormatError(
            f"corrupt blob: expected {4 * expected} bytes, found {len(raw)}"
        )
    digest = hashlib.sha256(raw).hexdigest()
    if digest != manifest["blob_sha256"]:
        raise ModelFormatError("corrupt blob: checksum mismatch")
    return np.frombuffer(raw, dtype="<f4").astype(np.float64)


def _load_manifest(path: Path, kind: str) -> dict:
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"manifest is not valid JSON: {exc}") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(
            f"unsupported format version {version!r} (expected {FORMAT_VERSION})"
        )
    if manifest.get("kind") != kind:
        raise ModelFormatError(
            f"expected a {kind} manifest, found {manifest.get('kind')!r}"
        )
    if manifest.get("dtype") != "float32":
        raise ModelFormatError(f"unsupported dtype {manifest.get('dtype')!r}")
    return manifest


def load_model(path: str | Path) -> NetworkModel:
    """Load and validate a model manifest plus its blob."""
    path = Path(path)
    manifest = _load_manifest(path, "model")
    blob = _BlobReader(_read_blob(manifest, path))
    layers = tuple(_entry_to_layer(e, blob) for e in manifest["layers"])
    display = manifest.get("display_shape")
    try:
        return NetworkModel(
            input_shape=tuple(manifest["input_shape"]),
            layers=layers,
            name=manifest.get("name", path.stem),
            display_shape=None if display is None else tuple(display),
        )
    except DimensionError as exc:
        raise ModelFormatError(f"invalid shape chain: {exc}") from exc


def save_tensor(array: np.ndarray, path: str | Path) -> Path:
    """Write a tensor manifest (``.sxt``) and its sibling blob."""
    path = Path(path)
    array = np.asarray(array, dtype=np.float64)
    blob_path = path.with_suffix(".bin")
    data = np.ascontiguousarray(array, dtype="<f4").ravel().tobytes()
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": "tensor",
        "dtype": "float32",
        "shape": list(array.shape),
        "blob": blob_path.name,
        "blob_elements": int(array.size),
        "blob_sha256": hashlib.sha256(data).hexdigest(),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    blob_path.write_bytes(data)
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def load_tensor(path: str | Path) -> np.ndarray:
    path = Path(path)
    manifest = _load_manifest(path, "tensor")
    data = _read_blob(manifest, path)
    return data.reshape(tuple(manifest["shape"]))
