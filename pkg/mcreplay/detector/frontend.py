"""
Learnable filter-and-sum front end.

Each frame x (C, M) goes through a bank of P filters per channel,
``y[p] = sum_c conv1d_valid(x[c], h[c, p])``; the map y (P, M - N + 1) is
max-pooled over time and rectified into the frame vector z (P,). The
steering delay of a classic filter-and-sum beamformer has no parameter of
its own; the filters absorb it.
"""
import logging
from pathlib import Path
from typing import NamedTuple, Union

import numpy as np

from .errors import DimensionError, InputError
from .tensor import Tensor, filter_and_sum, max_pool, relu, reshape
from .utils import SeedLike, as_seed_sequence
from .wav import PathLike

_LOGGER = logging.getLogger(__name__)

# filter length to frame length ratio of the reference front end (630 / 882)
FILTER_RATIO = 5 / 7


class FilterBank(NamedTuple):
    h: Tensor  # (C, P, N)

    @property
    def channels(self) -> int:
        return self.h.shape[0]

    @property
    def filters(self) -> int:
        return self.h.shape[1]

    @property
    def length(self) -> int:
        return self.h.shape[2]


class FrontEndOutput(NamedTuple):
    y: Tensor  # (P, L) or (F, P, L)
    z: Tensor  # (P,) or (F, P)


def filter_length_for(frame_length: int) -> int:
    """882 -> 630, 320 -> 229."""
    return int(round(frame_length * FILTER_RATIO))


def make_bank(h: Union[Tensor, np.ndarray], requires_grad: bool = True) -> FilterBank:
    tensor = h if isinstance(h, Tensor) else Tensor(h, requires_grad=requires_grad, name="frontend.h")
    if len(tensor.shape) != 3 or min(tensor.shape) < 1:
        raise DimensionError(f"filter bank must be (C, P, N), got {tensor.shape}")
    return FilterBank(tensor)


def init_bank(channels: int, filters: int, length: int, seed: SeedLike) -> FilterBank:
    """Uniform in [-a, a] with a = sqrt(6 / (C*N + P))."""
    if min(channels, filters, length) < 1:
        raise InputError(f"bank dimensions must be >= 1, got {(channels, filters, length)}")
    bound = np.sqrt(6.0 / (channels * length + filters))
    rng = np.random.default_rng(as_seed_sequence(seed))
    values = rng.uniform(-bound, bound, size=(channels, filters, length))
    return make_bank(values)


def single_channel_equivalence_bank(g: FilterBank, channels: int) -> FilterBank:
    """
    Spread a single-channel bank over ``channels`` inputs as h[c, p] = g[p] / C.
    On identical channels this bank reproduces the single-channel output.
    """
    if g.channels != 1:
        raise DimensionError(f"expected a single-channel bank, got {g.channels} channels")
    if channels < 1:
        raise InputError(f"channel count must be >= 1, got {channels}")
    if channels == 1:
        return g
    values = np.repeat(g.h.values / channels, channels, axis=0)
    return make_bank(values, requires_grad=g.h.requires_grad)


def forward_frames(frames: Union[Tensor, np.ndarray], bank: FilterBank) -> FrontEndOutput:
    """Batched front end: frames (F, C, M) -> y (F, P, L), z (F, P)."""
    frames = frames if isinstance(frames, Tensor) else Tensor(frames)
    if len(frames.shape) != 3:
        raise DimensionError(f"frames must be (F, C, M), got {frames.shape}")
    if frames.shape[1] != bank.channels:
        raise DimensionError(
            f"frame has {frames.shape[1]} channels, bank expects {bank.channels}"
        )
    if bank.length >= frames.shape[2]:
        raise DimensionError(
            f"filter length {bank.length} must be shorter than frame length {frames.shape[2]}"
        )
    y = filter_and_sum(frames, bank.h)
    F, P, L = y.shape
    z = reshape(relu(max_pool(y, L)), (F, P))
    return FrontEndOutput(y, z)


def forward_frame(frame: Union[Tensor, np.ndarray], bank: FilterBank) -> FrontEndOutput:
    frame = frame if isinstance(frame, Tensor) else Tensor(frame)
    if len(frame.shape) != 2:
        raise DimensionError(f"frame must be (C, M), got {frame.shape}")
    C, M = frame.shape
    out = forward_frames(reshape(frame, (1, C, M)), bank)
    _, P, L = out.y.shape
    return FrontEndOutput(reshape(out.y, (P, L)), reshape(out.z, (P,)))


def dump_time_frequency(y: Union[Tensor, np.ndarray], path: PathLike):
    """
    Write a (P, L) map as text: a ``# rows cols`` header, then one row per
    filter with L space separated values.
    """
    values = y.values if isinstance(y, Tensor) else np.asarray(y, dtype=np.float64)
    if values.ndim != 2:
        raise DimensionError(f"time-frequency dump expects (P, L), got {values.shape}")
    rows = [" ".join(repr(float(v)) for v in row) for row in values]
    Path(path).write_text(
        f"# {values.shape[0]} {values.shape[1]}\n" + "\n".join(rows) + "\n", encoding="utf-8"
    )
    _LOGGER.debug("Dumped %dx%d map to %s", values.shape[0], values.shape[1], path)


def load_time_frequency(path: PathLike) -> np.ndarray:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    rows, cols = (int(v) for v in lines[0].lstrip("#").split())
    values = np.array([[float(v) for v in line.split()] for line in lines[1 : rows + 1]])
    return values.reshape(rows, cols)
