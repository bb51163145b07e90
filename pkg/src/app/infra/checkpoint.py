"""
Бинарный чекпоинт:

    b"DGN1" | u32 длина заголовка | JSON-заголовок (UTF-8) | u64 длина payload | payload | u32 CRC-32(payload)

Все целые little-endian. Payload: safetensors (float32) с тензорами модели,
состояниями цепочек и моментами оптимизатора.
"""
import json
import logging
import os
import struct
import tempfile
import zlib
from pathlib import Path
from typing import Union

import numpy as np
from safetensors.numpy import load as st_load, save as st_save

from src.app.core.schemas import ArchitectureConfig
from src.app.domain.entities.chain_store import ChainStore
from src.app.domain.entities.model_params import ModelParams
from src.app.domain.entities.train_result import OptimizerState, TrainResult
from src.app.domain.enums import TrainMode
from src.app.domain.errors import (
    CheckpointError,
    ChecksumMismatchError,
    UnknownMagicError,
    VersionSkewError,
)

log = logging.getLogger(__name__)

MAGIC = b"DGN1"
FORMAT_VERSION = 1
STORED_DTYPE = np.dtype("<f4")

CHAINS_APPEARANCE = "chains.appearance"
CHAINS_GEOMETRIC = "chains.geometric"
OPTIM_M = "optim.m."
OPTIM_V = "optim.v."

PathLike = Union[str, os.PathLike]


def _header(result: TrainResult, downcast: bool) -> dict:
    params = result.params
    arch = params.architecture
    return {
        "format_version": FORMAT_VERSION,
        "architecture": arch.to_json_dict(),
        "alpha": arch.alpha,
        "sigma": params.sigma,
        "max_displacement": params.max_displacement,
        "zero_displacement": params.zero_displacement,
        "d_a": arch.d_a,
        "d_g": arch.d_g,
        "iteration": int(result.iteration),
        "seed": int(result.seed),
        "mode": str(result.mode),
        "dtype": str(params.dtype),
        "downcast": downcast,
        "chain_ids": result.chains.ids(),
        "chain_seed": result.chains.seed,
        "chain_dtype": str(result.chains.dtype),
        "optimizer": {"step": int(result.optimizer.step)},
    }


def _payload(result: TrainResult) -> dict[str, np.ndarray]:
    tensors = {name: t for name, t in result.params.tensors.items()}
    ids, z_a, z_g = result.chains.as_arrays()
    if ids:
        tensors[CHAINS_APPEARANCE] = z_a
        tensors[CHAINS_GEOMETRIC] = z_g
    for name, m in result.optimizer.m.items():
        tensors[OPTIM_M + name] = m
    for name, v in result.optimizer.v.items():
        tensors[OPTIM_V + name] = v
    return {name: np.ascontiguousarray(t, dtype=STORED_DTYPE) for name, t in tensors.items()}


def checkpoint_save(path: PathLike, result: TrainResult) -> Path:
    path = Path(path)
    downcast = result.params.dtype != np.float32
    payload = st_save(_payload(result))
    header = json.dumps(_header(result, downcast), sort_keys=True).encode("utf-8")

    blob = b"".join([
        MAGIC,
        struct.pack("<I", len(header)),
        header,
        struct.pack("<Q", len(payload)),
        payload,
        struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF),
    ])

    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    log.info("checkpoint saved: %s (iteration %d, %d bytes)", path, result.iteration, len(blob))
    return path


def _read(data: bytes, offset: int, size: int, path: Path, what: str) -> bytes:
    if offset + size > len(data):
        raise ChecksumMismatchError(f"{path}: truncated while reading {what}")
    return data[offset:offset + size]


def checkpoint_load(path: PathLike) -> TrainResult:
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError as e:
        raise CheckpointError(f"checkpoint not found: {path}") from e

    if len(data) < len(MAGIC) or data[:len(MAGIC)] != MAGIC:
        raise UnknownMagicError(f"{path}: not a checkpoint (magic {data[:len(MAGIC)]!r})")
    off = len(MAGIC)
    (header_len,) = struct.unpack("<I", _read(data, off, 4, path, "header length"))
    off += 4
    raw_header = _read(data, off, header_len, path, "header")
    off += header_len
    try:
        header = json.loads(raw_header.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ChecksumMismatchError(f"{path}: corrupt header") from e
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionSkewError(f"{path}: format version {version}, this build reads {FORMAT_VERSION}")

    (payload_len,) = struct.unpack("<Q", _read(data, off, 8, path, "payload length"))
    off += 8
    payload = _read(data, off, payload_len, path, "payload")
    off += payload_len
    (crc,) = struct.unpack("<I", _read(data, off, 4, path, "checksum"))
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise ChecksumMismatchError(f"{path}: payload checksum mismatch")

    tensors = st_load(payload)
    dtype = np.dtype(header["dtype"])
    params_tensors: dict[str, np.ndarray] = {}
    m: dict[str, np.ndarray] = {}
    v: dict[str, np.ndarray] = {}
    for name, t in tensors.items():
        if name.startswith(OPTIM_M):
            m[name[len(OPTIM_M):]] = t.astype(dtype)
        elif name.startswith(OPTIM_V):
            v[name[len(OPTIM_V):]] = t.astype(dtype)
        elif name not in (CHAINS_APPEARANCE, CHAINS_GEOMETRIC):
            params_tensors[name] = t.astype(dtype)

    params = ModelParams(
        tensors=params_tensors,
        architecture=ArchitectureConfig.create(**header["architecture"]),
        sigma=float(header["sigma"]),
        max_displacement=float(header["max_displacement"]),
        zero_displacement=bool(header.get("zero_displacement", False)),
    )
    chain_dtype = np.dtype(header.get("chain_dtype", "float32"))
    ids = list(header["chain_ids"])
    if ids:
        chains = ChainStore.from_arrays(
            ids,
            tensors[CHAINS_APPEARANCE].astype(chain_dtype),
            tensors[CHAINS_GEOMETRIC].astype(chain_dtype),
            seed=int(header["chain_seed"]),
        )
    else:
        chains = ChainStore(header["d_a"], header["d_g"], seed=int(header["chain_seed"]), dtype=chain_dtype)

    log.info("checkpoint loaded: %s (iteration %d)", path, header["iteration"])
    return TrainResult(
        params=params,
        chains=chains,
        iteration=int(header["iteration"]),
        optimizer=OptimizerState(step=int(header["optimizer"]["step"]), m=m, v=v),
        seed=int(header["seed"]),
        mode=TrainMode(header["mode"]),
    )


def read_header(path: PathLike) -> dict:
    """Только заголовок, без проверки payload."""
    path = Path(path)
    with path.open("rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise UnknownMagicError(f"{path}: not a checkpoint")
        (header_len,) = struct.unpack("<I", f.read(4))
        return json.loads(f.read(header_len).decode("utf-8"))


class FileCheckpointRepo:
    def __init__(self, directory: PathLike):
        self.directory = Path(directory)

    def path(self, name: str) -> Path:
        return self.directory / f"{name}.dgn"

    def save(self, name: str, result: TrainResult) -> Path:
        return checkpoint_save(self.path(name), result)

    def load(self, name: str) -> TrainResult:
        return checkpoint_load(self.path(name))
