"""
Checkpoint container for trained networks.

Layout (little-endian):

    magic b"VLGC", version u16, step u32
    config      u32 length + UTF-8 key=value lines (model.* and metadata)
    tensors     u32 count, then per tensor: name (u16 length + UTF-8),
                ndim u16, dims u32 each, float32 row-major payload

Optimizer moments travel as ``adam.m.<name>`` / ``adam.v.<name>`` tensors.
"""

import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .keyvalue import KeyValueError, dataclass_from_values, dataclass_lines, parse_lines
from .network import ModelConfig, ModelConfigError, VoxelGrounder, assign_parameters, named_tensors

logger = logging.getLogger(__name__)


CHECKPOINT_MAGIC = b'VLGC'
CHECKPOINT_VERSION = 1
_PREAMBLE = struct.Struct('<4sHI')
_U16 = struct.Struct('<H')
_U32 = struct.Struct('<I')
_FLOAT32 = np.dtype('<f4')
MOMENT_PREFIXES = ('adam.m.', 'adam.v.')


class CheckpointError(ValueError):
    """A checkpoint file that cannot be decoded."""


@dataclass
class Checkpoint:
    params: VoxelGrounder
    step: int
    metadata: dict[str, str] = field(default_factory=dict)
    moments: dict[str, torch.Tensor] = field(default_factory=dict)

    @property
    def config(self) -> ModelConfig:
        return self.params.config


def _pack_text(text: str, length_struct: struct.Struct) -> bytes:
    encoded = text.encode('utf-8')
    return length_struct.pack(len(encoded)) + encoded


def _pack_tensor(name: str, tensor: torch.Tensor) -> bytes:
    array = tensor.detach().cpu().numpy().astype(_FLOAT32)
    header = _pack_text(name, _U16) + _U16.pack(array.ndim)
    header += b''.join(_U32.pack(dim) for dim in array.shape)
    return header + array.tobytes()


def save_checkpoint(
    path,
    params: VoxelGrounder,
    step: int,
    metadata: dict[str, str] | None = None,
    moments: dict[str, torch.Tensor] | None = None,
) -> None:
    """Write params (and optional optimizer moments) atomically."""
    path = Path(path)
    lines = dataclass_lines('model', params.config)
    lines += [f"{key}={value}" for key, value in (metadata or {}).items()]

    tensors = dict(named_tensors(params))
    tensors.update(moments or {})

    chunks = [
        _PREAMBLE.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, step),
        _pack_text('\n'.join(lines) + '\n', _U32),
        _U32.pack(len(tensors)),
    ]
    chunks.extend(_pack_tensor(name, tensor) for name, tensor in tensors.items())

    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, 'wb') as handle:
            for chunk in chunks:
                handle.write(chunk)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    logger.info(f"Saved checkpoint {path}", extra={'step': step, 'tensors': len(tensors)})


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = memoryview(data)
        self.offset = 0
        self.path = path

    def take(self, size: int) -> memoryview:
        if self.offset + size > len(self.data):
            raise CheckpointError(f"{self.path}: checkpoint truncated at offset {self.offset}")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: struct.Struct):
        return fmt.unpack(self.take(fmt.size))

    def text(self, length_struct: struct.Struct) -> str:
        (length,) = self.unpack(length_struct)
        start = self.offset
        try:
            return bytes(self.take(length)).decode('utf-8')
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"{self.path}: text at offset {start} is not valid UTF-8") from exc


def load_checkpoint(path) -> Checkpoint:
    """Rebuild the float32 network, metadata and moments stored at path."""
    data = Path(path).read_bytes()
    reader = _Reader(data, path)
    magic, version, step = reader.unpack(_PREAMBLE)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic bytes)")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")

    try:
        values = parse_lines(reader.text(_U32), str(path))
        config = dataclass_from_values(ModelConfig, values, 'model')
    except (KeyValueError, ModelConfigError) as exc:
        raise CheckpointError(f"{path}: bad model config: {exc}") from exc
    metadata = {key: value for key, value in values.items() if not key.startswith('model.')}

    (count,) = reader.unpack(_U32)
    tensors = {}
    for _ in range(count):
        name = reader.text(_U16)
        (ndim,) = reader.unpack(_U16)
        shape = tuple(reader.unpack(_U32)[0] for _ in range(ndim))
        size = int(np.prod(shape, dtype=np.int64))
        payload = np.frombuffer(reader.take(size * _FLOAT32.itemsize), dtype=_FLOAT32)
        tensors[name] = torch.from_numpy(payload.astype(np.float32).reshape(shape))
    if reader.offset != len(reader.data):
        raise CheckpointError(f"{path}: trailing bytes after the last tensor")

    params = VoxelGrounder(config)
    missing = [name for name, _ in params.named_parameters() if name not in tensors]
    if missing:
        raise CheckpointError(f"{path}: missing tensors {', '.join(missing)}")
    try:
        assign_parameters(params, tensors)
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc

    moments = {name: tensor for name, tensor in tensors.items() if name.startswith(MOMENT_PREFIXES)}
    return Checkpoint(params=params, step=step, metadata=metadata, moments=moments)
