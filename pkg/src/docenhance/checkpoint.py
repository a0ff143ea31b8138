"""Versioned checkpoint container.

Byte layout (all integers little-endian)::

    offset  size  field
    0       8     magic b"DOCENHCK"
    8       4     u32 format version (currently 1)
    12      8     u64 header length H
    20      H     UTF-8 JSON header
    20+H    ...   payload: raw tensor blobs, concatenated

The header holds ``config`` (the run configuration snapshot), ``iteration``,
``meta`` (free-form JSON such as RNG and optimizer hyperparameters) and
``tensors``: a list of ``{name, dtype, shape, offset, nbytes}`` entries with
offsets relative to the start of the payload. ``dtype`` is one of ``f32``
(IEEE-754 binary32), ``i64`` or ``u8``; floating-point state is always stored
as 32-bit floats, so a float32 model round-trips exactly.

Tensor names are namespaced: ``model/<param>``, ``adam/<param>/<slot>``,
``crnn/<param>`` and ``rng/torch``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .data.io import atomic_write_bytes

MAGIC = b"DOCENHCK"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")
_DTYPES = {"f32": np.dtype("<f4"), "i64": np.dtype("<i8"), "u8": np.dtype("u1")}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: dict
    iteration: int = 0
    tensors: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    version: int = VERSION

    def subset(self, prefix: str) -> dict:
        """Tensors under ``prefix/`` with the prefix stripped."""
        p = prefix + "/"
        return {k[len(p):]: v for k, v in self.tensors.items() if k.startswith(p)}


def _dtype_tag(arr: np.ndarray) -> str:
    if arr.dtype.kind == "f":
        return "f32"
    if arr.dtype.kind in "iu" and arr.dtype != np.uint8:
        return "i64"
    if arr.dtype == np.uint8 or arr.dtype == np.bool_:
        return "u8"
    raise CheckpointError(f"unsupported dtype {arr.dtype}")


def encode(ckpt: Checkpoint) -> bytes:
    index, blobs, offset = [], [], 0
    for name in sorted(ckpt.tensors):
        t = ckpt.tensors[name]
        arr = t.detach().cpu().numpy() if torch.is_tensor(t) else np.asarray(t)
        tag = _dtype_tag(arr)
        data = np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes()
        index.append({"name": name, "dtype": tag, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = {"config": ckpt.config, "iteration": int(ckpt.iteration), "meta": ckpt.meta, "tensors": index}
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return _PREFIX.pack(MAGIC, ckpt.version, len(hbytes)) + hbytes + b"".join(blobs)


def decode(buf: bytes) -> Checkpoint:
    if len(buf) < _PREFIX.size:
        raise CheckpointError("file too short for a checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(buf)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = _PREFIX.size
    try:
        header = json.loads(buf[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    payload = memoryview(buf)[start + hlen:]
    tensors = {}
    for e in header["tensors"]:
        dt = _DTYPES[e["dtype"]]
        if e["offset"] + e["nbytes"] > len(payload):
            raise CheckpointError(f"truncated blob for {e['name']}")
        arr = np.frombuffer(payload[e["offset"]:e["offset"] + e["nbytes"]], dtype=dt)
        tensors[e["name"]] = arr.reshape(e["shape"]).copy()
    return Checkpoint(config=header["config"], iteration=header["iteration"], tensors=tensors,
                      meta=header.get("meta", {}), version=version)


def save(path, ckpt: Checkpoint):
    atomic_write_bytes(path, encode(ckpt))


def load(path) -> Checkpoint:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode(buf)


# ---------------------------------------------------------------------------
# training-state helpers


def _module_tensors(prefix: str, module: torch.nn.Module) -> dict:
    return {f"{prefix}/{k}": v for k, v in module.state_dict().items()}


def _load_module(module: torch.nn.Module, tensors: dict, what: str):
    ref = module.state_dict()
    missing = sorted(set(ref) - set(tensors))
    extra = sorted(set(tensors) - set(ref))
    if missing or extra:
        raise CheckpointError(f"{what} parameters do not match the configuration "
                              f"(missing {missing[:3]}, unexpected {extra[:3]})")
    state = {}
    for k, v in tensors.items():
        if tuple(v.shape) != tuple(ref[k].shape):
            raise CheckpointError(f"{what} parameter {k} has shape {tuple(v.shape)}, expected {tuple(ref[k].shape)}")
        state[k] = torch.from_numpy(np.asarray(v)).to(ref[k].dtype)
    module.load_state_dict(state)


def pack_training(state, config: dict, data_rng: Optional[np.random.Generator] = None, crnn=None) -> Checkpoint:
    """Snapshot a :class:`~docenhance.diffusion.TrainState` (plus optional CRNN)."""
    tensors = _module_tensors("model", state.model)
    for name, p in state.model.named_parameters():
        slots = state.optimizer.state.get(p)
        for slot, v in (slots or {}).items():
            tensors[f"adam/{name}/{slot}"] = torch.as_tensor(v).reshape(tuple(v.shape) if torch.is_tensor(v) else ())
    tensors["rng/torch"] = state.generator.get_state()
    meta = {"seed": state.seed}
    if data_rng is not None:
        meta["data_rng"] = data_rng.bit_generator.state
    if crnn is not None:
        tensors.update(_module_tensors("crnn", crnn))
        meta["crnn_config"] = crnn.cfg.to_dict()
    return Checkpoint(config=config, iteration=state.iteration, tensors=tensors, meta=meta)


def load_model(ckpt: Checkpoint, model: torch.nn.Module):
    _load_module(model, ckpt.subset("model"), "model")
    return model


def restore_training(ckpt: Checkpoint, state, data_rng: Optional[np.random.Generator] = None):
    """Load weights, Adam moments and RNG streams into a freshly created state."""
    load_model(ckpt, state.model)
    adam = ckpt.subset("adam")
    for name, p in state.model.named_parameters():
        slots = {k.split("/")[-1]: v for k, v in adam.items() if k.rsplit("/", 1)[0] == name}
        if slots:
            state.optimizer.state[p] = {k: torch.from_numpy(np.asarray(v)).to(torch.float32) for k, v in slots.items()}
    state.generator.set_state(torch.from_numpy(ckpt.tensors["rng/torch"]).to(torch.uint8))
    state.iteration = int(ckpt.iteration)
    state.seed = int(ckpt.meta.get("seed", state.seed))
    if data_rng is not None and "data_rng" in ckpt.meta:
        data_rng.bit_generator.state = ckpt.meta["data_rng"]
    return state


def load_crnn(ckpt: Checkpoint):
    """Rebuild the recognizer stored in ``ckpt`` or return None."""
    from .ocr.crnn import CRNN, CRNNConfig

    if "crnn_config" not in ckpt.meta:
        return None
    model = CRNN(CRNNConfig(**ckpt.meta["crnn_config"]))
    _load_module(model, ckpt.subset("crnn"), "crnn")
    model.eval()
    return model


def pack_crnn(crnn, config: Optional[dict] = None) -> Checkpoint:
    return Checkpoint(config=config or {}, tensors=_module_tensors("crnn", crnn),
                      meta={"crnn_config": crnn.cfg.to_dict()})
