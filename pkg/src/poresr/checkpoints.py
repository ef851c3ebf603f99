"""Bit-exact checkpoint serialization for models, optimizers and RNG state.

The on-disk format is deliberately timestamp-free so identical states produce
identical bytes: each blob is MAGIC | uint64 header length | JSON header
(array names, dtypes, shapes, sorted) | raw little-endian payload | sha256 of
everything before the digest. Metadata lives in a sorted-key JSON file.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, Tuple

import numpy as np
import torch

from . import networks

MAGIC = b"PSRBLOB1"
FORMAT_VERSION = 1

MODEL_REGISTRY = {
    "SRGenerator": (networks.SRGenerator, networks.GeneratorSpec),
    "QualityDiscriminator": (networks.QualityDiscriminator, networks.DiscriminatorSpec),
    "SiameseVerifier": (networks.SiameseVerifier, networks.VerifierSpec),
    "PoreDetector": (networks.PoreDetector, networks.PoreDetectorSpec),
}


class CheckpointError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# array blobs


def write_blob(path, arrays: Dict[str, np.ndarray]) -> None:
    names = sorted(arrays)
    header = {
        name: {
            "dtype": np.asarray(arrays[name]).dtype.str,
            "shape": list(np.asarray(arrays[name]).shape),
        }
        for name in names
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, len(header_bytes).to_bytes(8, "little"), header_bytes]
    for name in names:
        arr = np.asarray(arrays[name])
        # force little-endian, C-order payload so bytes are platform-stable
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        chunks.append(np.ascontiguousarray(le).tobytes())
    body = b"".join(chunks)
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def read_blob(path) -> Dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 8 + 32 or not data.startswith(MAGIC):
        raise CheckpointError(f"not a checkpoint blob: {path}")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"checksum mismatch in {path}")
    hlen = int.from_bytes(body[len(MAGIC) : len(MAGIC) + 8], "little")
    hstart = len(MAGIC) + 8
    header = json.loads(body[hstart : hstart + hlen].decode("utf-8"))
    out = {}
    pos = hstart + hlen
    for name in sorted(header):
        dtype = np.dtype(header[name]["dtype"])
        shape = tuple(header[name]["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = dtype.itemsize * count
        arr = np.frombuffer(body, dtype=dtype, count=count, offset=pos)
        out[name] = arr.reshape(shape).copy()
        pos += nbytes
    if pos != len(body):
        raise CheckpointError(f"trailing bytes in {path}")
    return out


# ---------------------------------------------------------------------------
# tree flattening (optimizer state dicts hold nested containers and tensors)


def flatten_tree(obj: Any, prefix: str, arrays: Dict[str, np.ndarray]) -> Any:
    """Convert a nested container into a JSON skeleton, extracting tensors
    and ndarrays into `arrays` under keys derived from `prefix`."""
    if isinstance(obj, torch.Tensor):
        key = f"{prefix}#{len(arrays)}"
        arrays[key] = obj.detach().cpu().numpy().copy()
        return {"__tensor__": key}
    if isinstance(obj, np.ndarray):
        key = f"{prefix}#{len(arrays)}"
        arrays[key] = obj.copy()
        return {"__ndarray__": key}
    if isinstance(obj, dict):
        return {
            "__map__": [
                [k, flatten_tree(v, prefix, arrays)] for k, v in obj.items()
            ]
        }
    if isinstance(obj, (list, tuple)):
        return {
            "__seq__": [flatten_tree(v, prefix, arrays) for v in obj],
            "tuple": isinstance(obj, tuple),
        }
    if obj is None or isinstance(obj, (bool, int, float, str)):
        return obj
    raise CheckpointError(f"cannot serialize {type(obj).__name__} in checkpoint")


def unflatten_tree(node: Any, arrays: Dict[str, np.ndarray]) -> Any:
    if isinstance(node, dict):
        if "__tensor__" in node:
            return torch.from_numpy(arrays[node["__tensor__"]].copy())
        if "__ndarray__" in node:
            return arrays[node["__ndarray__"]].copy()
        if "__map__" in node:
            return {
                (tuple(k) if isinstance(k, list) else k): unflatten_tree(v, arrays)
                for k, v in node["__map__"]
            }
        if "__seq__" in node:
            seq = [unflatten_tree(v, arrays) for v in node["__seq__"]]
            return tuple(seq) if node.get("tuple") else seq
    return node


# ---------------------------------------------------------------------------
# whole-state checkpoints


def _model_arrays(module: torch.nn.Module) -> Dict[str, np.ndarray]:
    return {name: t.detach().cpu().numpy().copy()
            for name, t in module.state_dict().items()}


def save_checkpoint(state, directory) -> Path:
    """Write one blob per model/optimizer plus metadata.json; returns the dir.

    `state` is a training.TrainState. Byte-for-byte identical states write
    byte-for-byte identical files.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta: Dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "epoch": int(state.epoch),
        "global_step": int(state.global_step),
        "counters": {k: int(v) for k, v in sorted(state.counters.items())},
        "models": {},
        "optimizers": {},
        "numpy_rng": state.rng.bit_generator.state,
        "loss_records": state.loss_records,
    }
    for name in sorted(state.models):
        module = state.models[name]
        write_blob(directory / f"model_{name}.blob", _model_arrays(module))
        meta["models"][name] = {
            "class": type(module).__name__,
            "spec": asdict(module.spec),
            "arch_hash": networks.architecture_hash(module),
        }
    for name in sorted(state.optimizers):
        arrays: Dict[str, np.ndarray] = {}
        skeleton = flatten_tree(state.optimizers[name].state_dict(), "opt", arrays)
        arrays["__skeleton__"] = np.frombuffer(
            json.dumps(skeleton, sort_keys=True).encode("utf-8"), dtype=np.uint8
        ).copy()
        write_blob(directory / f"optim_{name}.blob", arrays)
        meta["optimizers"][name] = {"model": name}
    write_blob(
        directory / "rng.blob",
        {"torch_rng": torch.get_rng_state().numpy().copy()},
    )
    (directory / "metadata.json").write_text(
        json.dumps(meta, sort_keys=True, indent=1), encoding="utf-8"
    )
    return directory


def _rebuild_model(entry: Dict[str, Any]) -> torch.nn.Module:
    cls_name = entry["class"]
    if cls_name not in MODEL_REGISTRY:
        raise CheckpointError(f"unknown model class {cls_name!r} in checkpoint")
    cls, spec_cls = MODEL_REGISTRY[cls_name]
    spec_dict = dict(entry["spec"])
    for key, value in spec_dict.items():
        if isinstance(value, list):
            spec_dict[key] = tuple(
                tuple(v) if isinstance(v, list) else v for v in value
            )
    return cls(spec_cls(**spec_dict))


def load_checkpoint(directory, models: Dict[str, torch.nn.Module] = None):
    """Restore a training.TrainState; pass `models` to load into existing
    modules (their architecture hashes must match the stored ones)."""
    from .training import TrainState  # deferred to avoid an import cycle

    directory = Path(directory)
    meta_path = directory / "metadata.json"
    if not meta_path.exists():
        raise CheckpointError(f"no metadata.json under {directory}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format {meta.get('format_version')} unsupported "
            f"(expected {FORMAT_VERSION})"
        )

    restored_models: Dict[str, torch.nn.Module] = {}
    for name, entry in meta["models"].items():
        if models is not None and name in models:
            module = models[name]
            got = networks.architecture_hash(module)
            if got != entry["arch_hash"]:
                raise CheckpointError(
                    f"architecture mismatch for {name!r}: checkpoint "
                    f"{entry['arch_hash'][:12]} vs model {got[:12]}"
                )
        else:
            module = _rebuild_model(entry)
        arrays = read_blob(directory / f"model_{name}.blob")
        sd = {k: torch.from_numpy(v.copy()) for k, v in arrays.items()}
        module.load_state_dict(sd)
        restored_models[name] = module

    optimizers: Dict[str, torch.optim.Optimizer] = {}
    for name in meta["optimizers"]:
        arrays = read_blob(directory / f"optim_{name}.blob")
        skeleton = json.loads(bytes(arrays.pop("__skeleton__")).decode("utf-8"))
        sd = unflatten_tree(skeleton, arrays)
        opt = torch.optim.Adam(restored_models[name].parameters())
        opt.load_state_dict(sd)
        optimizers[name] = opt

    rng = np.random.default_rng()
    rng.bit_generator.state = meta["numpy_rng"]
    torch_rng = read_blob(directory / "rng.blob")["torch_rng"]
    torch.set_rng_state(torch.from_numpy(torch_rng.copy()))

    return TrainState(
        models=restored_models,
        optimizers=optimizers,
        epoch=int(meta["epoch"]),
        global_step=int(meta["global_step"]),
        rng=rng,
        loss_records=list(meta["loss_records"]),
        counters={k: int(v) for k, v in meta["counters"].items()},
    )
