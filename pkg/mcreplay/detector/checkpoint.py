"""
ModelParams binary container.

Layout, all integers big endian:

    >4I   prefix 0x4D435250 ("MCRP"), version, tensor count, order length
    >BB10Id
          mode code, position code, C, P, N, M, freq maps, freq width,
          freq pool, embed dim, hidden, layers, segment seconds
    >nI   channel order (1-based)
    per tensor:
      >HB  name length, ndim
      name (utf-8), >{ndim}I shape, payload as >f8
    >2I   crc32 of everything above, suffix 0x0000AA55
"""
import binascii
import logging
import struct
from collections import OrderedDict
from pathlib import Path
from typing import List, Tuple

import numpy as np

from ..const import MODES, POSITIONS
from .backbone import Architecture, ModelParams, validate_architecture
from .errors import DimensionError, ParseError, UnsupportedFormatError
from .tensor import Tensor
from .wav import PathLike

_LOGGER = logging.getLogger(__name__)

CONTAINER_HEADER_FMT = ">4I"  # prefix, version, tensors, order length
ARCH_FMT = ">BB10Id"
TENSOR_HEADER_FMT = ">HB"  # name length, ndim
CONTAINER_END_FMT = ">2I"  # crc, suffix
PREFIX_VALUE = 0x4D435250
SUFFIX_VALUE = 0x0000AA55
VERSION = 1
PAYLOAD_DTYPE = ">f8"


def _pack_arch(arch: Architecture) -> bytes:
    return struct.pack(
        ARCH_FMT,
        MODES.index(arch.mode),
        POSITIONS.index(arch.position),
        arch.channels,
        arch.filters,
        arch.filter_length,
        arch.frame_length,
        arch.freq_maps,
        arch.freq_width,
        arch.freq_pool,
        arch.embed_dim,
        arch.hidden,
        arch.layers,
        arch.segment_s,
    ) + struct.pack(f">{len(arch.channel_order)}I", *arch.channel_order)


def encode_params(params: ModelParams) -> bytes:
    buffer = struct.pack(
        CONTAINER_HEADER_FMT,
        PREFIX_VALUE,
        VERSION,
        len(params.tensors),
        len(params.arch.channel_order),
    ) + _pack_arch(params.arch)
    for name, tensor in params.tensors.items():
        encoded = name.encode("utf-8")
        buffer += struct.pack(TENSOR_HEADER_FMT, len(encoded), len(tensor.shape))
        buffer += encoded + struct.pack(f">{len(tensor.shape)}I", *tensor.shape)
        buffer += np.ascontiguousarray(tensor.values, dtype=PAYLOAD_DTYPE).tobytes()
    return buffer + struct.pack(
        CONTAINER_END_FMT, binascii.crc32(buffer) & 0xFFFFFFFF, SUFFIX_VALUE
    )


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.offset = 0

    def unpack(self, fmt: str) -> Tuple:
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.data):
            raise ParseError(f"checkpoint truncated at byte {self.offset}")
        values = struct.unpack(fmt, self.data[self.offset : self.offset + size])
        self.offset += size
        return values

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise ParseError(f"checkpoint truncated at byte {self.offset}")
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk


def decode_params(data: bytes) -> ModelParams:
    end_len = struct.calcsize(CONTAINER_END_FMT)
    if len(data) < struct.calcsize(CONTAINER_HEADER_FMT) + end_len:
        raise ParseError("checkpoint too short")
    crc, suffix = struct.unpack(CONTAINER_END_FMT, data[-end_len:])
    body = data[:-end_len]
    if suffix != SUFFIX_VALUE:
        raise ParseError(f"bad checkpoint suffix 0x{suffix:08x}")
    if binascii.crc32(body) & 0xFFFFFFFF != crc:
        raise ParseError("checkpoint CRC mismatch")
    reader = _Reader(body)
    prefix, version, count, order_len = reader.unpack(CONTAINER_HEADER_FMT)
    if prefix != PREFIX_VALUE:
        raise ParseError(f"not a checkpoint (prefix 0x{prefix:08x})")
    if version != VERSION:
        raise UnsupportedFormatError(f"checkpoint version {version}, expected {VERSION}")
    mode, position, *dims, segment_s = reader.unpack(ARCH_FMT)
    if mode >= len(MODES) or position >= len(POSITIONS):
        raise ParseError(f"unknown mode/position codes {mode}/{position}")
    order = reader.unpack(f">{order_len}I")
    C, P, N, M, K, W, pool, E, H, L = dims
    arch = validate_architecture(
        Architecture(MODES[mode], C, P, N, M, K, W, pool, E, H, L, tuple(order), segment_s, POSITIONS[position])
    )
    tensors: "OrderedDict[str, Tensor]" = OrderedDict()
    for _ in range(count):
        name_len, ndim = reader.unpack(TENSOR_HEADER_FMT)
        name = reader.take(name_len).decode("utf-8")
        shape: List[int] = list(reader.unpack(f">{ndim}I"))
        size = int(np.prod(shape, dtype=np.int64))
        payload = np.frombuffer(reader.take(size * 8), dtype=PAYLOAD_DTYPE)
        values = payload.astype(np.float64).reshape(shape)
        tensors[name] = Tensor(values, requires_grad=True, name=name)
    if reader.offset != len(body):
        raise ParseError(f"{len(body) - reader.offset} trailing bytes in checkpoint")
    try:
        return ModelParams(arch, tensors)
    except DimensionError as exc:
        raise ParseError(f"checkpoint tensors do not match the header: {exc}") from exc


def save_params(path: PathLike, params: ModelParams):
    data = encode_params(params)
    Path(path).write_bytes(data)
    _LOGGER.debug("Saved %r (%d bytes) to %s", params, len(data), path)


def load_params(path: PathLike) -> ModelParams:
    return decode_params(Path(path).read_bytes())
