"""Single-file checkpoint container.

Layout::

    b"SNNT" | u32 format version | u64 manifest length | manifest | payload

All integers are little-endian. The manifest is UTF-8 JSON with sorted keys
and no insignificant whitespace; its ``tensors`` entry lists every stored
array as ``{"name", "shape", "offset", "nbytes"}`` with offsets relative to
the payload start. The payload is the concatenation of those arrays as
row-major little-endian float32, in directory order. Because the manifest
encoding is canonical and the payload is raw bytes, save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from ..anchors.model import AnchorModel, AnchorSpec
from ..errors import ContractError
from ..numerics import Tensor
from ..stitching.enumerate import WindowSpec
from ..stitching.layer import StitchingLayer
from ..stitching.space import StitchConfig, StitchSpace, build_space

MAGIC = b"SNNT"
VERSION = 1
_HEADER = struct.Struct("<4sIQ")
_DTYPE = np.dtype("<f4")


def encode_manifest(manifest: dict) -> bytes:
    return json.dumps(manifest, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def write_container(path, manifest: dict, tensors: dict[str, np.ndarray], force: bool = False) -> Path:
    """Write ``tensors`` (in insertion order) and ``manifest`` to ``path``."""
    path = Path(path)
    if path.exists() and not force:
        raise ContractError(f"{path} exists; pass --force to overwrite")
    directory, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype != np.float32:
            raise ContractError(f"tensor {name!r} has dtype {arr.dtype}; checkpoints store float32 only")
        raw = np.ascontiguousarray(arr, dtype=_DTYPE).tobytes()
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    if "tensors" in manifest:
        raise ContractError("manifest key 'tensors' is reserved for the tensor directory")
    body = encode_manifest({**manifest, "tensors": directory})
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, len(body)))
        f.write(body)
        for raw in chunks:
            f.write(raw)
    os.replace(tmp, path)
    return path


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Inverse of :func:`write_container`; validates header and byte counts."""
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise ContractError(f"{path}: truncated header")
    magic, version, mlen = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ContractError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise ContractError(f"{path}: unsupported format version {version}")
    start = _HEADER.size + mlen
    if start > len(blob):
        raise ContractError(f"{path}: manifest length {mlen} runs past end of file")
    manifest = json.loads(blob[_HEADER.size:start].decode("utf-8"))
    payload = memoryview(blob)[start:]
    tensors, expected = {}, 0
    for entry in manifest.pop("tensors"):
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * _DTYPE.itemsize
        if entry["nbytes"] != nbytes or entry["offset"] != expected:
            raise ContractError(f"{path}: tensor {entry['name']!r} directory entry inconsistent with shape {shape}")
        if entry["offset"] + nbytes > len(payload):
            raise ContractError(f"{path}: tensor {entry['name']!r} runs past end of payload")
        raw = payload[entry["offset"]:entry["offset"] + nbytes]
        tensors[entry["name"]] = np.frombuffer(raw, dtype=_DTYPE).reshape(shape).astype(np.float32)
        expected += nbytes
    if expected != len(payload):
        raise ContractError(f"{path}: payload has {len(payload) - expected} trailing bytes")
    return manifest, tensors


# -- anchors -------------------------------------------------------------------------


def _anchor_entry(model: AnchorModel) -> dict:
    return {"spec": model.spec.to_dict(), "provenance": model.provenance}


def _anchor_tensors(models: list[AnchorModel]) -> dict[str, np.ndarray]:
    out = {}
    for m in models:
        for k, p in m.named_parameters():
            out[f"anchor.{m.spec.name}.{k}"] = p.data
    return out


def _anchors_from(entries: list[dict], tensors: dict[str, np.ndarray]) -> list[AnchorModel]:
    models = []
    for e in entries:
        spec = AnchorSpec.from_dict(e["spec"])
        prefix = f"anchor.{spec.name}."
        arrays = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
        models.append(AnchorModel.from_arrays(spec, arrays, e["provenance"]))
    return models


def save_anchors(path, models: list[AnchorModel], extra: dict | None = None, force: bool = False) -> Path:
    names = [m.spec.name for m in models]
    if len(set(names)) != len(names):
        raise ContractError(f"anchor names must be unique, got {names}")
    manifest = {"kind": "anchors", "anchors": [_anchor_entry(m) for m in models], "extra": extra or {}}
    return write_container(path, manifest, _anchor_tensors(models), force)


def load_anchors(path) -> tuple[list[AnchorModel], dict]:
    manifest, tensors = read_container(path)
    if manifest.get("kind") != "anchors":
        raise ContractError(f"{path}: expected an anchors checkpoint, found {manifest.get('kind')!r}")
    return _anchors_from(manifest["anchors"], tensors), manifest["extra"]


# -- stitch spaces ---------------------------------------------------------------------


def save_space(path, space: StitchSpace, extra: dict | None = None, force: bool = False) -> Path:
    """One file holding every anchor, every stitching layer and the config table."""
    manifest = {
        "kind": "space",
        "anchors": [_anchor_entry(a) for a in space.anchors],
        "window": {"kernel": space.window.kernel, "stride": space.window.stride},
        "nearest_only": space.nearest_only,
        "direction": space.direction,
        "configs": [c.to_dict() for c in space.configs],
        "layers": [
            {
                "layer_id": l.layer_id, "pair": l.pair, "stage": l.stage, "window_id": l.window_id,
                "init_method": l.init_method, "ls_residual": l.ls_residual, "notes": list(l.notes),
            }
            for l in space.layers
        ],
        "extra": extra or {},
    }
    tensors = _anchor_tensors(space.anchors)
    for l in space.layers:
        tensors[f"stitch.{l.layer_id}.weight"] = l.weight.data
        tensors[f"stitch.{l.layer_id}.bias"] = l.bias.data
    return write_container(path, manifest, tensors, force)


def load_space(path) -> tuple[StitchSpace, dict]:
    manifest, tensors = read_container(path)
    if manifest.get("kind") != "space":
        raise ContractError(f"{path}: expected a space checkpoint, found {manifest.get('kind')!r}")
    anchors = _anchors_from(manifest["anchors"], tensors)
    window = WindowSpec(**manifest["window"])
    configs = [StitchConfig(**c) for c in manifest["configs"]]
    # the stored table must be exactly what enumeration produces for these anchors
    fresh = build_space(anchors, window, manifest["nearest_only"], manifest["direction"])
    if [c.to_dict() for c in fresh.configs] != manifest["configs"]:
        raise ContractError(f"{path}: config table does not match enumeration of its anchors")
    layers = []
    for meta in manifest["layers"]:
        lid = meta["layer_id"]
        layers.append(StitchingLayer(
            lid, meta["pair"], meta["stage"], meta["window_id"],
            weight=Tensor(tensors[f"stitch.{lid}.weight"], requires_grad=True, name=f"stitch.{lid}.weight"),
            bias=Tensor(tensors[f"stitch.{lid}.bias"], requires_grad=True, name=f"stitch.{lid}.bias"),
            init_method=meta["init_method"], ls_residual=meta["ls_residual"], notes=list(meta["notes"]),
        ))
    space = StitchSpace(fresh.anchors, configs, layers, window, manifest["nearest_only"], manifest["direction"])
    return space, manifest["extra"]


def stored_parameter_count(path) -> int:
    """Total number of scalars in a checkpoint's payload."""
    _, tensors = read_container(path)
    return sum(t.size for t in tensors.values())
