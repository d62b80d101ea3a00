"""Checkpoint container: named parameter arrays behind a JSON metadata
header, with a payload hash. Round trips are bit-exact."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import TrainingConfig
from .errors import CorruptCheckpoint, VersionMismatch
from .system import GENERATOR_SPECS, StylemarkSystem, build_system

MAGIC = b"STYMARK1"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    config: TrainingConfig
    arrays: dict[str, np.ndarray]
    stage: str = "init"
    iteration: int = 0
    best_metrics: dict = field(default_factory=dict)
    generator_specs: dict[str, float] = field(default_factory=lambda: dict(GENERATOR_SPECS))

    @property
    def checkpoint_id(self) -> str:
        return _payload_digest(self.arrays)[:16]

    def encoder_array_bytes(self) -> bytes:
        """Raw bytes of the embedding network's arrays (freeze contract)."""
        chunks = [
            name.encode() + np.ascontiguousarray(self.arrays[name]).tobytes()
            for name in sorted(self.arrays)
            if name.startswith("encoder.")
        ]
        return b"".join(chunks)


def system_arrays(system: StylemarkSystem) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for prefix, module in system.modules().items():
        for key, tensor in module.state_dict().items():
            out[f"{prefix}.{key}"] = tensor.detach().cpu().numpy().copy()
    return out


def checkpoint_from_system(
    system: StylemarkSystem,
    stage: str,
    iteration: int,
    best_metrics: dict | None = None,
) -> Checkpoint:
    return Checkpoint(
        config=system.config,
        arrays=system_arrays(system),
        stage=stage,
        iteration=iteration,
        best_metrics=dict(best_metrics or {}),
        generator_specs=dict(system.generator_specs or GENERATOR_SPECS),
    )


def system_from_checkpoint(ckpt: Checkpoint) -> StylemarkSystem:
    system = build_system(ckpt.config, ckpt.generator_specs)
    _load_arrays_into(system, ckpt.arrays)
    return system.eval_mode()


def _load_arrays_into(system: StylemarkSystem, arrays: dict[str, np.ndarray]) -> None:
    for prefix, module in system.modules().items():
        state = {}
        for key in module.state_dict():
            name = f"{prefix}.{key}"
            if name not in arrays:
                raise VersionMismatch(f"checkpoint missing array {name}")
            state[key] = torch.from_numpy(arrays[name].copy())
        module.load_state_dict(state)


def _payload_digest(arrays: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(arrays):
        h.update(name.encode())
        h.update(np.ascontiguousarray(arrays[name]).tobytes())
    return h.hexdigest()


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    names = sorted(ckpt.arrays)
    payload_parts = []
    array_meta = []
    for name in names:
        arr = np.ascontiguousarray(ckpt.arrays[name])
        raw = arr.tobytes()
        array_meta.append(
            {"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape), "nbytes": len(raw)}
        )
        payload_parts.append(raw)
    payload = b"".join(payload_parts)
    header = {
        "format_version": FORMAT_VERSION,
        "config": ckpt.config.to_dict(),
        "generator_specs": ckpt.generator_specs,
        "stage": ckpt.stage,
        "iteration": ckpt.iteration,
        "best_metrics": ckpt.best_metrics,
        "arrays": array_meta,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


def load_checkpoint(path: str | Path, expect_length: int | None = None) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 8 or raw[: len(MAGIC)] != MAGIC:
        raise CorruptCheckpoint(f"{path}: bad magic or truncated file")
    (header_len,) = struct.unpack("<Q", raw[len(MAGIC) : len(MAGIC) + 8])
    header_end = len(MAGIC) + 8 + header_len
    if len(raw) < header_end:
        raise CorruptCheckpoint(f"{path}: truncated header")
    try:
        header = json.loads(raw[len(MAGIC) + 8 : header_end].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"{path}: unreadable header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise VersionMismatch(
            f"{path}: format_version {header.get('format_version')} != {FORMAT_VERSION}"
        )
    payload = raw[header_end:]
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CorruptCheckpoint(f"{path}: payload hash mismatch")
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for meta in header["arrays"]:
        n = meta["nbytes"]
        chunk = payload[offset : offset + n]
        if len(chunk) != n:
            raise CorruptCheckpoint(f"{path}: truncated payload at {meta['name']}")
        arrays[meta["name"]] = np.frombuffer(chunk, dtype=np.dtype(meta["dtype"])).reshape(
            meta["shape"]
        ).copy()
        offset += n
    config = TrainingConfig.from_dict(header["config"])
    if expect_length is not None and config.watermark_length != expect_length:
        raise VersionMismatch(
            f"{path}: checkpoint watermark length {config.watermark_length} "
            f"!= expected {expect_length}"
        )
    return Checkpoint(
        config=config,
        arrays=arrays,
        stage=header["stage"],
        iteration=header["iteration"],
        best_metrics=header["best_metrics"],
        generator_specs=header["generator_specs"],
    )
