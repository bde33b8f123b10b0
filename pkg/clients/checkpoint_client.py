# /clients/checkpoint_client.py

"""
가중치 컨테이너 입출력.

파일 구조 (리틀 엔디언):
    magic b"PNETCKPT" | u32 버전 | u32 길이 + JSON 설정 블록 | u32 텐서 수
    | 텐서마다 [u16 이름 길이, 이름, u8 dtype 길이, dtype, u8 차원 수, u32 × 차원, u64 바이트 수, 원본 바이트]
    | sha256(앞의 모든 바이트) 32바이트
읽을 때는 체크섬 → magic → 버전 순서로 검사합니다.
"""

import hashlib
import json
import logging
import os
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from core.errors import CorruptionError, SchemaError, VersionError
from core.policy import PolicyWeights, RLConfig
from core.prednet import NetConfig, NetWeights
from core.raster import GridSpec

logger = logging.getLogger(__name__)

MAGIC = b"PNETCKPT"
CONTAINER_VERSION = 1
_DIGEST = 32


def _tuplify(value):
    if isinstance(value, list):
        return tuple(_tuplify(v) for v in value)
    return value


def pack_container(header: dict, tensors: dict[str, np.ndarray], version: int = CONTAINER_VERSION) -> bytes:
    parts = [MAGIC, struct.pack("<I", version)]
    block = json.dumps(header, sort_keys=True).encode("utf-8")
    parts += [struct.pack("<I", len(block)), block, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.require(tensors[name], requirements="C")
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw_name = name.encode("utf-8")
        dtype = arr.dtype.str.encode("ascii")
        data = arr.tobytes()
        parts += [struct.pack("<H", len(raw_name)), raw_name, struct.pack("<B", len(dtype)), dtype,
                  struct.pack("<B", arr.ndim), struct.pack(f"<{arr.ndim}I", *arr.shape),
                  struct.pack("<Q", len(data)), data]
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptionError(f"{self.path}: truncated container")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def unpack_container(data: bytes, path="<bytes>") -> tuple[dict, dict[str, np.ndarray]]:
    """
    Raises:
        CorruptionError: 체크섬 불일치 또는 잘린 파일.
        VersionError: 지원하지 않는 컨테이너 버전.
    """
    if len(data) < len(MAGIC) + 4 + _DIGEST:
        raise CorruptionError(f"{path}: file too short to be a weight container")
    body, digest = data[:-_DIGEST], data[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptionError(f"{path}: checksum mismatch")
    reader = _Reader(body, path)
    if reader.take(len(MAGIC)) != MAGIC:
        raise SchemaError(f"{path}: not a weight container (bad magic)", location="offset 0")
    (version,) = reader.unpack("<I")
    if version != CONTAINER_VERSION:
        raise VersionError(version, CONTAINER_VERSION)
    (n_block,) = reader.unpack("<I")
    header = json.loads(reader.take(n_block).decode("utf-8"))
    (count,) = reader.unpack("<I")
    tensors = {}
    for _ in range(count):
        (n_name,) = reader.unpack("<H")
        name = reader.take(n_name).decode("utf-8")
        (n_dtype,) = reader.unpack("<B")
        dtype = np.dtype(reader.take(n_dtype).decode("ascii"))
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I") if ndim else ()
        (nbytes,) = reader.unpack("<Q")
        tensors[name] = np.frombuffer(reader.take(nbytes), dtype=dtype).reshape(shape).copy()
    return header, tensors


def net_config_to_dict(config: NetConfig) -> dict:
    return asdict(config)


def net_config_from_dict(data: dict) -> NetConfig:
    data = {k: _tuplify(v) for k, v in data.items()}
    data["grid"] = GridSpec(**data["grid"])
    return NetConfig(**data)


class CheckpointClient:
    """
    NetWeights와 PolicyWeights를 같은 버전 있는 이진 컨테이너로 저장하고 읽습니다.
    쓰기는 임시 파일을 거쳐 원자적으로 교체합니다.
    """

    def _write(self, path: Path, payload: bytes) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(payload)
        os.replace(tmp, path)
        return path

    def _read(self, path: Path, kind: str) -> tuple[dict, dict[str, np.ndarray]]:
        if not path.exists():
            raise FileNotFoundError(f"weight file not found: {path}")
        header, tensors = unpack_container(path.read_bytes(), path)
        if header.get("kind") != kind:
            raise SchemaError(f"{path}: expected {kind} weights, found {header.get('kind')!r}", location="config")
        return header, tensors

    def save_weights(self, weights: NetWeights, path: str | Path, meta: dict | None = None) -> Path:
        header = {"kind": "net", "config": net_config_to_dict(weights.config), "meta": meta or {}}
        path = self._write(Path(path), pack_container(header, weights.params))
        logger.info("saved network weights to %s", path)
        return path

    def load_weights(self, path: str | Path) -> NetWeights:
        header, tensors = self._read(Path(path), "net")
        return NetWeights(net_config_from_dict(header["config"]), tensors)

    def read_meta(self, path: str | Path) -> dict:
        header, _ = unpack_container(Path(path).read_bytes(), path)
        return header.get("meta", {})

    def save_policy(self, weights: PolicyWeights, path: str | Path, meta: dict | None = None) -> Path:
        header = {"kind": "policy", "config": asdict(weights.config), "latent_shape": list(weights.latent_shape),
                  "log_temperature": weights.log_temperature, "meta": meta or {}}
        tensors = {f"online/{k}": v for k, v in weights.params.items()}
        tensors.update({f"target/{k}": v for k, v in weights.target.items()})
        path = self._write(Path(path), pack_container(header, tensors))
        logger.info("saved policy weights to %s", path)
        return path

    def load_policy(self, path: str | Path) -> PolicyWeights:
        header, tensors = self._read(Path(path), "policy")
        config = RLConfig(**{k: _tuplify(v) for k, v in header["config"].items()})
        params = {k.split("/", 1)[1]: v for k, v in tensors.items() if k.startswith("online/")}
        target = {k.split("/", 1)[1]: v for k, v in tensors.items() if k.startswith("target/")}
        return PolicyWeights(config, tuple(header["latent_shape"]), params, target, float(header["log_temperature"]))
