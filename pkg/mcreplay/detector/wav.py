import logging
import struct
from pathlib import Path
from typing import NamedTuple, Tuple, Union

import numpy as np

from .errors import ParseError, UnsupportedFormatError

_LOGGER = logging.getLogger(__name__)

PathLike = Union[str, Path]

# RIFF/WAVE layout, little endian
RIFF_HEADER_FMT = "<4sI4s"  # "RIFF", size, "WAVE"
CHUNK_HEADER_FMT = "<4sI"  # id, size
FMT_BODY_FMT = "<HHIIHH"  # tag, channels, rate, byte rate, block align, bits
EXTENSIBLE_FMT = "<HHI16s"  # cbSize, valid bits, channel mask, sub-format GUID

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE
# trailing 14 bytes of KSDATAFORMAT_SUBTYPE_* GUIDs
GUID_TAIL = b"\x00\x00\x00\x00\x10\x00\x80\x00\x00\xaa\x00\x38\x9b\x71"

SUPPORTED_BIT_DEPTHS = {16: "<i2", 32: "<i4"}
MAX_CHANNELS = 8


class WavFormat(NamedTuple):
    channels: int
    sample_rate: int
    bit_depth: int

    @property
    def block_align(self) -> int:
        return self.channels * self.bit_depth // 8


def _read_struct(fmt: str, data: bytes, offset: int) -> Tuple:
    size = struct.calcsize(fmt)
    if offset + size > len(data):
        raise ParseError(f"truncated header at byte {offset}")
    return struct.unpack(fmt, data[offset : offset + size])


def _parse_fmt(body: bytes) -> WavFormat:
    tag, channels, rate, _, block_align, bits = _read_struct(FMT_BODY_FMT, body, 0)
    if tag == WAVE_FORMAT_EXTENSIBLE:
        _, _, _, guid = _read_struct(EXTENSIBLE_FMT, body, struct.calcsize(FMT_BODY_FMT))
        if guid[2:] != GUID_TAIL:
            raise UnsupportedFormatError("unknown WAVE_FORMAT_EXTENSIBLE sub-format")
        tag = struct.unpack("<H", guid[:2])[0]
    if tag == WAVE_FORMAT_IEEE_FLOAT:
        raise UnsupportedFormatError("IEEE float WAV is not accepted, integer PCM only")
    if tag != WAVE_FORMAT_PCM:
        raise UnsupportedFormatError(f"unsupported WAV codec 0x{tag:04x}")
    if bits not in SUPPORTED_BIT_DEPTHS:
        raise UnsupportedFormatError(f"unsupported bit depth {bits}")
    if not 1 <= channels <= MAX_CHANNELS:
        raise UnsupportedFormatError(f"unsupported channel count {channels}")
    fmt = WavFormat(channels, rate, bits)
    if block_align != fmt.block_align:
        raise ParseError(f"block align {block_align} inconsistent with {fmt}")
    return fmt


def decode_wav(data: bytes) -> Tuple[WavFormat, np.ndarray]:
    """Parse RIFF/WAVE bytes into its format and a (C, T) float64 array in [-1, 1)."""
    riff, _, wave = _read_struct(RIFF_HEADER_FMT, data, 0)
    if riff != b"RIFF" or wave != b"WAVE":
        raise ParseError("not a RIFF/WAVE file")
    offset = struct.calcsize(RIFF_HEADER_FMT)
    header_len = struct.calcsize(CHUNK_HEADER_FMT)
    fmt = None
    while offset + header_len <= len(data):
        chunk_id, size = _read_struct(CHUNK_HEADER_FMT, data, offset)
        body = data[offset + header_len : offset + header_len + size]
        if chunk_id == b"fmt ":
            fmt = _parse_fmt(body)
        elif chunk_id == b"data":
            if fmt is None:
                raise ParseError("data chunk before fmt chunk")
            if len(body) < size:
                _LOGGER.warning("data chunk truncated: %d of %d bytes", len(body), size)
            usable = len(body) - len(body) % fmt.block_align
            ints = np.frombuffer(body[:usable], dtype=SUPPORTED_BIT_DEPTHS[fmt.bit_depth])
            samples = ints.reshape(-1, fmt.channels).T.astype(np.float64)
            return fmt, samples / float(2 ** (fmt.bit_depth - 1))
        # chunks are word aligned
        offset += header_len + size + (size & 1)
    raise ParseError("no data chunk" if fmt is not None else "no fmt chunk")


def encode_wav(samples: np.ndarray, sample_rate: int, bit_depth: int) -> bytes:
    """Quantize (C, T) samples in [-1, 1) to integer PCM and pack a RIFF/WAVE file."""
    if bit_depth not in SUPPORTED_BIT_DEPTHS:
        raise UnsupportedFormatError(f"unsupported bit depth {bit_depth}")
    samples = np.atleast_2d(samples)
    channels = samples.shape[0]
    if not 1 <= channels <= MAX_CHANNELS:
        raise UnsupportedFormatError(f"unsupported channel count {channels}")
    fmt = WavFormat(channels, int(sample_rate), bit_depth)
    full_scale = 2 ** (bit_depth - 1)
    ints = np.clip(np.round(samples * full_scale), -full_scale, full_scale - 1)
    payload = ints.T.astype(SUPPORTED_BIT_DEPTHS[bit_depth]).tobytes()
    fmt_body = struct.pack(
        FMT_BODY_FMT,
        WAVE_FORMAT_PCM,
        fmt.channels,
        fmt.sample_rate,
        fmt.sample_rate * fmt.block_align,
        fmt.block_align,
        fmt.bit_depth,
    )
    chunks = (
        struct.pack(CHUNK_HEADER_FMT, b"fmt ", len(fmt_body))
        + fmt_body
        + struct.pack(CHUNK_HEADER_FMT, b"data", len(payload))
        + payload
        + (b"\x00" if len(payload) & 1 else b"")
    )
    return struct.pack(RIFF_HEADER_FMT, b"RIFF", 4 + len(chunks), b"WAVE") + chunks


def read_wav_file(path: PathLike) -> Tuple[WavFormat, np.ndarray]:
    return decode_wav(Path(path).read_bytes())


def write_wav_file(path: PathLike, samples: np.ndarray, sample_rate: int, bit_depth: int):
    Path(path).write_bytes(encode_wav(samples, sample_rate, bit_depth))
