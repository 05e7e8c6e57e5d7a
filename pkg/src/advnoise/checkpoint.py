"""Binary model checkpoints.

Layout (all integers little-endian):

    bytes 0-3    magic ``ADVN``
    bytes 4-7    format version (u32)
    bytes 8-15   header length H (u64)
    bytes 16-    JSON header: model spec, epoch, rng state, noise switch,
                 coefficient scales/velocities, and a tensor manifest of
                 (name, kind, dtype, shape, offset-into-payload) entries
    then         raw float64 tensor payloads, back to back
    last 32      SHA-256 of everything before the trailer

A checkpoint restores a model bit for bit: parameters, noise coefficients
and their velocities, the rng state, and the noise-enabled switch, plus
optimizer velocities for resuming training.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .nn import Model, ModelSpec, build
from .rng import Rng

MAGIC = b"ADVN"
VERSION = 1
_DTYPE = "<f8"
_TRAILER = 32


@dataclass
class CheckpointBundle:
    """Everything a checkpoint restores: the rebuilt model, the epoch
    counter to resume from, and optimizer velocities keyed by parameter
    name."""

    model: Model
    epoch: int
    optimizer_state: dict = field(default_factory=dict)


def save_checkpoint(path, model: Model, epoch: int = 0,
                    optimizer=None) -> None:
    """Write the model (and optional optimizer state) to ``path``."""
    manifest = []
    chunks = []
    offset = 0

    def add(name: str, kind: str, array: np.ndarray) -> None:
        nonlocal offset
        raw = np.ascontiguousarray(array, dtype=_DTYPE).tobytes()
        manifest.append({"name": name, "kind": kind, "dtype": _DTYPE,
                         "shape": list(np.shape(array)), "offset": offset})
        chunks.append(raw)
        offset += len(raw)

    for name, param in model.parameters():
        add(name, "param", param.data)
    if optimizer is not None:
        for name, velocity in optimizer.state_dict().items():
            add(name, "velocity", velocity)

    header = {
        "model_spec": model.spec.to_dict(),
        "epoch": int(epoch),
        "rng_state": list(model.rng.state),
        "noise_enabled": bool(model.noise_enabled),
        "coefficients": {
            name: {"scale": coeff.value, "velocity": coeff.velocity}
            for name, coeff in model.coefficients()
        },
        "tensors": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    body = b"".join([MAGIC, struct.pack("<I", VERSION),
                     struct.pack("<Q", len(header_bytes)), header_bytes,
                     *chunks])
    digest = hashlib.sha256(body).digest()
    Path(path).write_bytes(body + digest)


def load_checkpoint(path) -> CheckpointBundle:
    """Read, verify, and rebuild a checkpoint written by save_checkpoint."""
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise CheckpointError(
            f"{path}: truncated before the fixed header; need 16 bytes, "
            f"file ends at offset {len(data)}")
    if data[:4] != MAGIC:
        raise CheckpointError(
            f"{path}: bad magic {data[:4]!r} at offset 0 "
            f"(expected {MAGIC!r})")
    version = struct.unpack("<I", data[4:8])[0]
    if version != VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {version} "
            f"(this build reads version {VERSION})")
    header_len = struct.unpack("<Q", data[8:16])[0]
    header_end = 16 + header_len
    if len(data) < header_end + _TRAILER:
        raise CheckpointError(
            f"{path}: truncated inside the header; header runs to offset "
            f"{header_end} but file ends at offset {len(data) - _TRAILER} "
            f"before the trailer")
    try:
        header = json.loads(data[16:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(
            f"{path}: corrupt header at offset 16: {exc}") from None

    payload = data[header_end:-_TRAILER]
    payload_len = sum(
        int(np.prod(entry["shape"])) * 8 for entry in header["tensors"])
    expected_total = header_end + payload_len + _TRAILER
    if len(data) != expected_total:
        raise CheckpointError(
            f"{path}: payload truncated or padded; manifest implies the file "
            f"ends at offset {expected_total}, found {len(data)}")
    digest = hashlib.sha256(data[:-_TRAILER]).digest()
    if digest != data[-_TRAILER:]:
        raise CheckpointError(
            f"{path}: checksum mismatch in trailer at offset "
            f"{len(data) - _TRAILER}")

    arrays: dict[str, np.ndarray] = {}
    velocities: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        if entry["dtype"] != _DTYPE:
            raise CheckpointError(
                f"{path}: tensor {entry['name']!r} has unsupported dtype "
                f"{entry['dtype']!r}")
        count = int(np.prod(entry["shape"]))
        start = entry["offset"]
        try:
            array = np.frombuffer(payload, dtype=_DTYPE, count=count,
                                  offset=start).reshape(entry["shape"]).copy()
        except ValueError as exc:
            raise CheckpointError(
                f"{path}: tensor {entry['name']!r} at payload offset {start} "
                f"does not fit the file: {exc}") from None
        if entry["kind"] == "velocity":
            velocities[entry["name"]] = array
        else:
            arrays[entry["name"]] = array

    spec = ModelSpec.from_dict(header["model_spec"])
    model = build(spec, Rng(0))
    for name, param in model.parameters():
        if name not in arrays:
            raise CheckpointError(
                f"{path}: manifest is missing parameter {name!r}")
        if list(param.shape) != list(arrays[name].shape):
            raise CheckpointError(
                f"{path}: parameter {name!r} has shape "
                f"{list(arrays[name].shape)} on disk but the spec builds "
                f"{list(param.shape)}")
        param.data = arrays[name]
    saved_coeffs = header["coefficients"]
    for name, coeff in model.coefficients():
        if name not in saved_coeffs:
            raise CheckpointError(
                f"{path}: header is missing noise coefficient {name!r}")
        entry = saved_coeffs[name]
        coeff.scale.data = np.asarray(float(entry["scale"]))
        coeff.velocity = float(entry["velocity"])
    model.rng = Rng.from_state(tuple(header["rng_state"]))
    model.noise_enabled = bool(header["noise_enabled"])
    return CheckpointBundle(model=model, epoch=int(header["epoch"]),
                            optimizer_state=velocities)
