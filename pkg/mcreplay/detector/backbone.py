"""
Everything after the front end: frequency convolution over the P axis,
frame embedding, the LSTM stack over frames and the two-class head.
"""
import logging
from collections import OrderedDict
from typing import Dict, Iterator, List, NamedTuple, Sequence, Tuple, Union

import numpy as np

from ..const import (
    LABEL_GENUINE,
    LABEL_REPLAYED,
    MODE_DUMMY,
    MODE_MULTICHANNEL,
    MODE_SINGLE,
    MODES,
    POSITION_BEGINNING,
    POSITIONS,
)
from .audio import AudioClip, frame, frame_length_for, replicate_channels, select_channels, select_segment
from .errors import ConfigurationError, DimensionError
from .frontend import FilterBank, filter_length_for, forward_frames, single_channel_equivalence_bank
from .tensor import (
    FlatView,
    LSTMWeights,
    Tensor,
    conv1d_maps,
    linear,
    lstm_cell,
    max_pool,
    relu,
    reshape,
    softmax,
    take,
)
from .utils import SeedLike, as_seed_sequence, derive_rng, stable_hash

_LOGGER = logging.getLogger(__name__)

CLASS_INDEX = {LABEL_GENUINE: 0, LABEL_REPLAYED: 1}


class ModelConfig(NamedTuple):
    """User-facing model knobs; ``channel_order`` empty means all channels in file order."""

    mode: str = MODE_MULTICHANNEL
    filters: int = 64
    filter_length: int = 0  # 0: derived from the frame length
    freq_maps: int = 256
    freq_width: int = 8
    freq_pool: int = 3
    embed_dim: int = 256
    hidden: int = 832
    layers: int = 3
    channel_order: Tuple[int, ...] = ()
    segment_s: float = 1.0
    position: str = POSITION_BEGINNING


class Architecture(NamedTuple):
    mode: str
    channels: int
    filters: int
    filter_length: int
    frame_length: int
    freq_maps: int
    freq_width: int
    freq_pool: int
    embed_dim: int
    hidden: int
    layers: int
    channel_order: Tuple[int, ...]
    segment_s: float
    position: str

    @property
    def conv_width(self) -> int:
        return self.filters - self.freq_width + 1

    @property
    def pool_window(self) -> int:
        # a conv map narrower than the pool window is pooled globally
        return min(self.freq_pool, self.conv_width)

    @property
    def pooled_width(self) -> int:
        return self.conv_width // self.pool_window

    @property
    def frame_width(self) -> int:
        return self.frame_length - self.filter_length + 1


def validate_architecture(arch: Architecture) -> Architecture:
    if arch.mode not in MODES:
        raise ConfigurationError(f"unknown model mode {arch.mode!r}")
    if arch.position not in POSITIONS:
        raise ConfigurationError(f"unknown segment position {arch.position!r}")
    if arch.filters < arch.freq_width:
        raise ConfigurationError(
            f"{arch.filters} filters per channel cannot feed a width-{arch.freq_width} frequency convolution"
        )
    if not 1 <= arch.filter_length < arch.frame_length:
        raise ConfigurationError(
            f"filter length {arch.filter_length} must be in [1, {arch.frame_length})"
        )
    if min(arch.freq_maps, arch.freq_width, arch.freq_pool, arch.embed_dim, arch.hidden, arch.layers) < 1:
        raise ConfigurationError(f"non-positive layer size in {arch}")
    if arch.channels != len(arch.channel_order) or arch.channels < 1:
        raise ConfigurationError(f"channel order {arch.channel_order} for {arch.channels} channels")
    if arch.mode == MODE_SINGLE and arch.channels != 1:
        raise ConfigurationError("single-channel mode takes exactly one channel")
    return arch


def resolve_architecture(config: ModelConfig, sample_rate: int, available_channels: int) -> Architecture:
    """Bind model knobs to a corpus: frame length from the rate, channel order from the array."""
    order = tuple(config.channel_order) or tuple(range(1, available_channels + 1))
    bad = [i for i in order if not 1 <= i <= available_channels]
    if bad or len(set(order)) != len(order):
        raise ConfigurationError(
            f"channel order {order} invalid for a {available_channels}-channel corpus"
        )
    if config.mode == MODE_SINGLE:
        order = order[:1]
    frame_length = frame_length_for(sample_rate)
    return validate_architecture(
        Architecture(
            mode=config.mode,
            channels=len(order),
            filters=config.filters,
            filter_length=config.filter_length or filter_length_for(frame_length),
            frame_length=frame_length,
            freq_maps=config.freq_maps,
            freq_width=config.freq_width,
            freq_pool=config.freq_pool,
            embed_dim=config.embed_dim,
            hidden=config.hidden,
            layers=config.layers,
            channel_order=order,
            segment_s=float(config.segment_s),
            position=config.position,
        )
    )


def parameter_shapes(arch: Architecture) -> "OrderedDict[str, Tuple[int, ...]]":
    shapes: "OrderedDict[str, Tuple[int, ...]]" = OrderedDict()
    shapes["frontend.h"] = (arch.channels, arch.filters, arch.filter_length)
    shapes["freq.kernel"] = (arch.freq_maps, arch.freq_width)
    shapes["freq.bias"] = (arch.freq_maps,)
    shapes["embed.weight"] = (arch.embed_dim, arch.freq_maps * arch.pooled_width)
    shapes["embed.bias"] = (arch.embed_dim,)
    for layer in range(arch.layers):
        inputs = arch.embed_dim if layer == 0 else arch.hidden
        shapes[f"lstm.{layer}.w_ih"] = (4 * arch.hidden, inputs)
        shapes[f"lstm.{layer}.w_hh"] = (4 * arch.hidden, arch.hidden)
        shapes[f"lstm.{layer}.bias"] = (4 * arch.hidden,)
    shapes["head.weight"] = (2, arch.hidden)
    shapes["head.bias"] = (2,)
    return shapes


class ModelParams:
    """Named, ordered parameter tensors plus the architecture they realize."""

    def __init__(self, arch: Architecture, tensors: Dict[str, Tensor]) -> None:
        expected = parameter_shapes(arch)
        if list(tensors) != list(expected):
            raise DimensionError(f"parameter names {list(tensors)} != {list(expected)}")
        for name, shape in expected.items():
            if tensors[name].shape != shape:
                raise DimensionError(f"{name}: shape {tensors[name].shape}, expected {shape}")
        self.arch = arch
        self.tensors: "OrderedDict[str, Tensor]" = OrderedDict(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    @property
    def bank(self) -> FilterBank:
        return FilterBank(self.tensors["frontend.h"])

    def lstm(self, layer: int) -> LSTMWeights:
        return LSTMWeights(
            self.tensors[f"lstm.{layer}.w_ih"],
            self.tensors[f"lstm.{layer}.w_hh"],
            self.tensors[f"lstm.{layer}.bias"],
        )

    @property
    def parameter_count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def flat_view(self) -> FlatView:
        return FlatView(self.tensors.values())

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.arch,
            OrderedDict(
                (name, Tensor(t.values.copy(), requires_grad=t.requires_grad, name=name))
                for name, t in self.tensors.items()
            ),
        )

    def __repr__(self):
        return f"ModelParams({self.arch.mode}, C={self.arch.channels}, P={self.arch.filters}, {self.parameter_count} values)"


def _uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_params(arch: Architecture, seed: SeedLike) -> ModelParams:
    """
    Fan-based uniform weights, zero biases except the LSTM forget gate at 1.0.
    Every tensor draws from its own stream keyed by (seed, slot).
    """
    arch = validate_architecture(arch)
    seeds = as_seed_sequence(seed)
    tensors: "OrderedDict[str, Tensor]" = OrderedDict()
    for slot, (name, shape) in enumerate(parameter_shapes(arch).items()):
        rng = derive_rng(*seeds, slot)
        if name == "frontend.h":
            C, P, N = shape
            values = _uniform(rng, shape, C * N, P)
        elif name == "freq.kernel":
            values = _uniform(rng, shape, arch.freq_width, arch.freq_maps)
        elif name.endswith("bias"):
            values = np.zeros(shape)
            if name.startswith("lstm."):
                values[arch.hidden : 2 * arch.hidden] = 1.0
        else:
            values = _uniform(rng, shape, shape[1], shape[0])
        tensors[name] = Tensor(values, requires_grad=True, name=name)
    return ModelParams(arch, tensors)


def parameter_count_of(arch: Architecture) -> int:
    return sum(int(np.prod(shape)) for shape in parameter_shapes(arch).values())


def architecture_hash(params: Union[ModelParams, Architecture]) -> str:
    """Hash of parameter names and shapes; values and mode do not enter."""
    if isinstance(params, Architecture):
        shapes = parameter_shapes(params).items()
    else:
        shapes = ((name, t.shape) for name, t in params.tensors.items())
    return stable_hash([[name, list(shape)] for name, shape in shapes])


def equivalent_dummy(single: ModelParams, channels: int) -> ModelParams:
    """
    Dummy-multichannel model that scores replicated input exactly like
    ``single`` scores channel 1: bank spread by 1/C, backbone shared.
    """
    if single.arch.channels != 1:
        raise ConfigurationError("equivalent_dummy expects a single-channel model")
    bank = single_channel_equivalence_bank(single.bank, channels)
    arch = single.arch._replace(
        mode=MODE_DUMMY, channels=channels, channel_order=tuple(range(1, channels + 1))
    )
    tensors = OrderedDict(single.tensors)
    tensors["frontend.h"] = Tensor(bank.h.values, requires_grad=True, name="frontend.h")
    return ModelParams(arch, tensors)


# -- forward -----------------------------------------------------------------


def frame_embed(z: Tensor, params: ModelParams) -> Tensor:
    """z (P,) or (R, P) -> o (E,) or (R, E)."""
    arch = params.arch
    single = len(z.shape) == 1
    rows = reshape(z, (1, z.shape[0])) if single else z
    P = rows.shape[1]
    if P < arch.freq_width:
        raise ConfigurationError(f"z of width {P} is narrower than the frequency kernel")
    maps = conv1d_maps(rows, params["freq.kernel"], params["freq.bias"])
    pooled = max_pool(maps, arch.pool_window)
    R, K, W = pooled.shape
    flat = reshape(pooled, (R, K * W))
    o = relu(linear(flat, params["embed.weight"], params["embed.bias"]))
    return reshape(o, (arch.embed_dim,)) if single else o


def sequence_classify(o_seq: Tensor, params: ModelParams) -> Tensor:
    """o_seq (F, E) or (B, F, E) -> logits (2,) or (B, 2) from the last frame of the top layer."""
    arch = params.arch
    if len(o_seq.shape) not in (2, 3):
        raise DimensionError(f"frame sequence must be (F, E) or (B, F, E), got {o_seq.shape}")
    frames = o_seq.shape[-2]
    if frames < 1:
        raise DimensionError("empty frame sequence")
    state_shape = o_seq.shape[:-2] + (arch.hidden,)
    h = [Tensor(np.zeros(state_shape)) for _ in range(arch.layers)]
    c = [Tensor(np.zeros(state_shape)) for _ in range(arch.layers)]
    for t in range(frames):
        x_t = take(o_seq, t, axis=-2)
        for layer in range(arch.layers):
            h[layer], c[layer] = lstm_cell(x_t, h[layer], c[layer], params.lstm(layer))
            x_t = h[layer]
    return linear(h[-1], params["head.weight"], params["head.bias"])


def forward_logits(frames: np.ndarray, params: ModelParams) -> Tensor:
    """frames (B, F, C, M) -> logits (B, 2)."""
    if frames.ndim != 4:
        raise DimensionError(f"frames must be (B, F, C, M), got {frames.shape}")
    B, F, C, M = frames.shape
    front = forward_frames(frames.reshape(B * F, C, M), params.bank)
    o = frame_embed(front.z, params)
    return sequence_classify(reshape(o, (B, F, params.arch.embed_dim)), params)


def prepare_clip(clip: AudioClip, arch: Architecture) -> AudioClip:
    """Channels the model mode consumes, in order."""
    if arch.mode == MODE_MULTICHANNEL:
        if max(arch.channel_order) > clip.channels:
            raise ConfigurationError(
                f"model reads channels {arch.channel_order}, clip has {clip.channels}"
            )
        return select_channels(clip, arch.channel_order)
    if clip.channels < 1:
        raise ConfigurationError("clip has no channels")
    if arch.mode == MODE_DUMMY:
        return replicate_channels(clip, arch.channels)
    return select_channels(clip, [arch.channel_order[0]])


def clip_frames(clip: AudioClip, arch: Architecture) -> np.ndarray:
    """(F, C, M) model input for one clip."""
    if frame_length_for(clip.sample_rate) != arch.frame_length:
        raise ConfigurationError(
            f"clip at {clip.sample_rate} Hz does not match frame length {arch.frame_length}"
        )
    segment = select_segment(prepare_clip(clip, arch), arch.segment_s, arch.position)
    return frame(segment).frames


def score_frames(frames: np.ndarray, params: ModelParams) -> np.ndarray:
    """Replay probabilities for a batch (B, F, C, M)."""
    logits = forward_logits(frames, params)
    return softmax(logits.values)[:, CLASS_INDEX[LABEL_REPLAYED]]


def score(clip: AudioClip, params: ModelParams) -> float:
    """softmax(logits)[replayed]: probability that the clip is a replay."""
    return float(score_frames(clip_frames(clip, params.arch)[None], params)[0])


def score_clips(clips: Sequence[AudioClip], params: ModelParams, batch: int = 32) -> List[float]:
    out: List[float] = []
    for start in range(0, len(clips), batch):
        chunk = np.stack([clip_frames(c, params.arch) for c in clips[start : start + batch]])
        out.extend(float(s) for s in score_frames(chunk, params))
    return out


def describe_shapes(
    params: Union[ModelParams, Architecture], frames: int = 1
) -> "OrderedDict[str, Tuple[int, ...]]":
    """Per-stage shapes of one frame through the network."""
    arch = params if isinstance(params, Architecture) else params.arch
    stages: "OrderedDict[str, Tuple[int, ...]]" = OrderedDict()
    stages["frame"] = (arch.channels, arch.frame_length)
    stages["y"] = (arch.filters, arch.frame_width)
    stages["z"] = (arch.filters,)
    stages["freq_conv"] = (arch.freq_maps, arch.conv_width)
    stages["freq_pool"] = (arch.freq_maps, arch.pooled_width)
    stages["embed"] = (arch.embed_dim,)
    stages["lstm"] = (frames, arch.hidden)
    stages["logits"] = (2,)
    return stages
