"""Directory checkpoints: a text manifest plus one raw array blob.

The manifest (`manifest.txt`) carries the step, the config fingerprint, and
one line per array with name, dtype, shape, byte offset, byte count, and a
sha256 of the bytes. `arrays.bin` holds the arrays little-endian, packed in
sorted-name order. The format is diffable and readable from any language.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FORMAT_TAG = "mscheck1"
_DTYPES = {"<f8": np.dtype("<f8"), "<i8": np.dtype("<i8")}


class CheckpointError(RuntimeError):
    pass


@dataclass
class CheckpointData:
    arrays: dict
    step: int
    config_fingerprint: str


def _as_saveable(array: np.ndarray) -> np.ndarray:
    a = np.asarray(array)
    if a.dtype.kind == "f":
        return np.ascontiguousarray(a, dtype="<f8")
    if a.dtype.kind in "iub":
        return np.ascontiguousarray(a, dtype="<i8")
    raise CheckpointError(f"unsupported dtype {a.dtype} for checkpointing")


def save_checkpoint(path, arrays: dict, step: int, config_fingerprint: str) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    lines = [f"format = {FORMAT_TAG}",
             f"step = {step}",
             f"config_fingerprint = {config_fingerprint}",
             "arrays"]
    blob = bytearray()
    for name in sorted(arrays):
        a = _as_saveable(arrays[name])
        raw = a.tobytes()
        digest = hashlib.sha256(raw).hexdigest()
        shape = ",".join(str(s) for s in a.shape)
        lines.append(f"{name}\t{a.dtype.str}\t{shape}\t{len(blob)}\t{len(raw)}\t{digest}")
        blob.extend(raw)
    (path / "arrays.bin").write_bytes(bytes(blob))
    (path / "manifest.txt").write_text("\n".join(lines) + "\n")


def checkpoint_exists(path) -> bool:
    path = Path(path)
    return (path / "manifest.txt").is_file() and (path / "arrays.bin").is_file()


def load_checkpoint(path) -> CheckpointData:
    path = Path(path)
    manifest = path / "manifest.txt"
    if not manifest.is_file():
        raise CheckpointError(f"no checkpoint at {path}")
    lines = manifest.read_text().splitlines()
    header = {}
    body_start = None
    for i, line in enumerate(lines):
        if line.strip() == "arrays":
            body_start = i + 1
            break
        key, _, value = line.partition("=")
        header[key.strip()] = value.strip()
    if body_start is None:
        raise CheckpointError(f"{manifest}: missing arrays section")
    if header.get("format") != FORMAT_TAG:
        raise CheckpointError(f"{manifest}: unknown format {header.get('format')!r}")
    blob = (path / "arrays.bin").read_bytes()
    arrays = {}
    for line in lines[body_start:]:
        if not line.strip():
            continue
        name, dtype, shape_s, offset_s, nbytes_s, digest = line.split("\t")
        if dtype not in _DTYPES:
            raise CheckpointError(f"{manifest}: unknown dtype {dtype} for {name}")
        offset, nbytes = int(offset_s), int(nbytes_s)
        raw = blob[offset:offset + nbytes]
        if hashlib.sha256(raw).hexdigest() != digest:
            raise CheckpointError(f"checksum mismatch for array {name!r} in {path}")
        shape = tuple(int(s) for s in shape_s.split(",") if s)
        arrays[name] = np.frombuffer(raw, dtype=_DTYPES[dtype]).reshape(shape).copy()
    return CheckpointData(arrays, int(header["step"]), header["config_fingerprint"])


def require_fingerprint(data: CheckpointData, expected: str) -> None:
    if data.config_fingerprint != expected:
        raise CheckpointError(
            "config fingerprint mismatch: checkpoint was written with "
            f"{data.config_fingerprint}, current config is {expected}")


def params_arrays(params: dict) -> dict:
    """Snapshot parameter tensors as plain arrays keyed by name."""
    return {name: np.array(p.data, dtype=np.float64) for name, p in params.items()}


def load_into_params(params: dict, arrays: dict) -> None:
    """Copy checkpoint arrays into live tensors by name. Every parameter must
    be present with a matching shape; offenders are reported together."""
    missing = sorted(name for name in params if name not in arrays)
    mismatched = sorted(name for name in params if name in arrays
                        and arrays[name].shape != params[name].data.shape)
    if missing or mismatched:
        raise CheckpointError(
            f"incompatible checkpoint: missing={missing}, shape_mismatch={mismatched}")
    for name, p in params.items():
        p.data = np.array(arrays[name], dtype=np.float64)
