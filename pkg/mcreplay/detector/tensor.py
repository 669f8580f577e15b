"""
Minimal reverse-mode differentiation over numpy arrays.

Operations executed inside an active ``Graph`` are recorded on its tape in
creation order, which is a topological order; ``Graph.backward`` walks the
tape in exact reverse. Outside a graph the same functions run as plain
numpy kernels and nothing is recorded, which is how inference runs.
"""
import logging
from typing import (
    Callable,
    Dict,
    Iterable,
    List,
    NamedTuple,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np
import scipy.fft
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, InputError, NumericError
from .utils import SeedLike, worker_count

_LOGGER = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, Sequence[float], float]
Backward = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


def _check_finite(values: np.ndarray, where: str):
    if not np.all(np.isfinite(values)):
        raise NumericError(f"{where}: non-finite values")


class Tensor:
    __slots__ = ("values", "requires_grad", "grad", "name")

    def __init__(
        self,
        values: ArrayLike,
        *,
        requires_grad: bool = False,
        name: Optional[str] = None,
        dtype: Optional[np.dtype] = None,
    ) -> None:
        if dtype is None and isinstance(values, np.ndarray) and values.dtype.kind == "f":
            array = values
        else:
            array = np.asarray(values, dtype=dtype or np.float64)
        _check_finite(array, name or "tensor")
        self.values: np.ndarray = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return int(self.values.size)

    @property
    def dtype(self) -> np.dtype:
        return self.values.dtype

    def item(self) -> float:
        return float(self.values.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.values, name=self.name)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __repr__(self):
        label = f"{self.name}, " if self.name else ""
        return f"Tensor({label}shape={self.shape}, requires_grad={self.requires_grad})"


class Node(NamedTuple):
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: Backward


_ACTIVE: List["Graph"] = []


def current_graph() -> Optional["Graph"]:
    return _ACTIVE[-1] if _ACTIVE else None


class Graph:
    """Tape of op records for one forward pass."""

    def __init__(self) -> None:
        self.nodes: List[Node] = []
        self._produced: Dict[int, Tensor] = {}
        self._leaves: Dict[int, Tensor] = {}

    def __enter__(self) -> "Graph":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)

    @property
    def leaves(self) -> List[Tensor]:
        return list(self._leaves.values())

    def record(self, op: str, inputs: Tuple[Tensor, ...], output: Tensor, backward: Backward):
        for tensor in inputs:
            key = id(tensor)
            if tensor.requires_grad and key not in self._produced:
                self._leaves.setdefault(key, tensor)
        self._produced[id(output)] = output
        self.nodes.append(Node(op, inputs, output, backward))

    def backward(self, loss: Tensor):
        if loss.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
        for node in reversed(self.nodes):
            upstream = grads.pop(id(node.output), None)
            if upstream is None:
                continue
            for tensor, grad in zip(node.inputs, node.backward(upstream)):
                if grad is None or not tensor.requires_grad:
                    continue
                if grad.shape != tensor.shape:
                    raise DimensionError(
                        f"{node.op}: gradient shape {grad.shape} != {tensor.shape}"
                    )
                _check_finite(grad, f"{node.op} backward")
                key = id(tensor)
                grads[key] = grad if key not in grads else grads[key] + grad
        for key, leaf in self._leaves.items():
            grad = grads.get(key)
            if grad is None:
                grad = np.zeros_like(leaf.values)
            leaf.grad = grad if leaf.grad is None else leaf.grad + grad


def _as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _emit(op: str, inputs: Tuple[Tensor, ...], values: np.ndarray, backward: Backward) -> Tensor:
    _check_finite(values, op)
    graph = current_graph()
    tracked = graph is not None and any(t.requires_grad for t in inputs)
    out = Tensor(values, requires_grad=tracked)
    if tracked:
        graph.record(op, inputs, out, backward)
    return out


def _same_shape(op: str, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape {a.shape} does not match {b.shape}")


_PATTERNS: List["BranchPattern"] = []


class BranchPattern:
    """Branches taken by the piecewise ops (ReLU masks, max-pool argmaxes) during a forward pass."""

    def __init__(self) -> None:
        self.branches: List[np.ndarray] = []

    def __enter__(self) -> "BranchPattern":
        _PATTERNS.append(self)
        return self

    def __exit__(self, *exc):
        _PATTERNS.remove(self)

    def matches(self, other: "BranchPattern") -> bool:
        return len(self.branches) == len(other.branches) and all(
            np.array_equal(a, b) for a, b in zip(self.branches, other.branches)
        )


def _note_branch(branch: np.ndarray):
    for pattern in _PATTERNS:
        pattern.branches.append(branch)


# -- elementwise -------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("add", a, b)
    return _emit("add", (a, b), a.values + b.values, lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("mul", a, b)
    av, bv = a.values, b.values
    return _emit("mul", (a, b), av * bv, lambda g: (g * bv, g * av))


def relu(x: Tensor) -> Tensor:
    """max(0, x); the subgradient at 0 is 0."""
    x = _as_tensor(x)
    mask = x.values > 0
    if _PATTERNS:
        _note_branch(mask)
    return _emit("relu", (x,), np.where(mask, x.values, 0).astype(x.dtype), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    v = x.values
    # split by sign so exp never overflows
    e = np.exp(-np.abs(v))
    out = np.where(v >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype)
    return _emit("sigmoid", (x,), out, lambda g: (g * out * (1 - out),))


def tanh(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.values)
    return _emit("tanh", (x,), out, lambda g: (g * (1 - out * out),))


def total(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    shape, dtype = x.shape, x.dtype
    return _emit(
        "total",
        (x,),
        np.asarray(x.values.sum(), dtype=dtype),
        lambda g: (np.full(shape, g, dtype=dtype),),
    )


# -- shape -------------------------------------------------------------------


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    original = x.shape
    try:
        values = x.values.reshape(tuple(shape))
    except ValueError as exc:
        raise DimensionError(f"reshape {original} -> {tuple(shape)}") from exc
    return _emit("reshape", (x,), values, lambda g: (g.reshape(original),))


def take(x: Tensor, index: int, axis: int = 0) -> Tensor:
    """Select one position along ``axis`` and drop that axis."""
    x = _as_tensor(x)
    shape, dtype = x.shape, x.dtype
    axis = axis % len(shape)
    if not 0 <= index < shape[axis]:
        raise DimensionError(f"take: index {index} out of range for axis of {shape[axis]}")

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        selector = [slice(None)] * len(shape)
        selector[axis] = index
        full[tuple(selector)] = g
        return (full,)

    return _emit("take", (x,), np.take(x.values, index, axis=axis), backward)


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    x = _as_tensor(x)
    shape, dtype = x.shape, x.dtype
    if not 0 <= start < stop <= shape[-1]:
        raise DimensionError(f"slice [{start}:{stop}] outside last axis of {shape[-1]}")

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        full[..., start:stop] = g
        return (full,)

    return _emit("slice", (x,), x.values[..., start:stop], backward)


# -- linear algebra ----------------------------------------------------------


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ W.T + b`` for ``x`` of shape (in,) or (batch, in)."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    if weight.values.ndim != 2 or x.values.ndim not in (1, 2) or x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear: x {x.shape} incompatible with W {weight.shape}")
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise DimensionError(f"linear: bias {bias.shape} for W {weight.shape}")
    xv, wv = x.values, weight.values
    out = xv @ wv.T
    if bias is not None:
        out = out + bias.values

    def backward(g):
        grad_x = g @ wv
        grad_w = np.outer(g, xv) if xv.ndim == 1 else g.T @ xv
        grad_b = None if bias is None else (g if g.ndim == 1 else g.sum(axis=0))
        return (grad_x, grad_w, grad_b)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _emit("linear", inputs, out, backward)


# -- convolution -------------------------------------------------------------


def conv1d_valid(signal: Tensor, kernel: Tensor) -> Tensor:
    """
    True convolution, no padding: ``out[i] = sum_j kernel[j] * signal[i + N - 1 - j]``
    for i in [0, T - N], i.e. ``numpy.convolve(signal, kernel, "valid")``.
    """
    signal, kernel = _as_tensor(signal), _as_tensor(kernel)
    if signal.values.ndim != 1 or kernel.values.ndim != 1:
        raise DimensionError("conv1d_valid expects 1-D signal and kernel")
    T, N = signal.shape[0], kernel.shape[0]
    if not T >= N >= 1:
        raise DimensionError(f"conv1d_valid: signal length {T} < kernel length {N}")
    sv, kv = signal.values, kernel.values

    def backward(g):
        grad_signal = np.convolve(g, kv[::-1], "full")
        grad_kernel = np.correlate(sv, g, "valid")[::-1]
        return (grad_signal, grad_kernel)

    return _emit("conv1d_valid", (signal, kernel), np.convolve(sv, kv, "valid"), backward)


def _fft_size(M: int, N: int) -> int:
    return scipy.fft.next_fast_len(max(M + N - 1, 2 * M - N), real=True)


def filter_and_sum(frames: Tensor, bank: Tensor) -> Tensor:
    """
    Multichannel filter-and-sum over a batch of frames.

    frames (F, C, M) and bank (C, P, N) give (F, P, M - N + 1) with
    ``out[f, p] = sum_c conv1d_valid(frames[f, c], bank[c, p])``, computed
    in the frequency domain.
    """
    frames, bank = _as_tensor(frames), _as_tensor(bank)
    if frames.values.ndim != 3 or bank.values.ndim != 3:
        raise DimensionError("filter_and_sum expects frames (F, C, M) and bank (C, P, N)")
    F, C, M = frames.shape
    Cb, P, N = bank.shape
    if C != Cb:
        raise DimensionError(f"filter_and_sum: {C} input channels, bank has {Cb}")
    if N > M:
        raise DimensionError(f"filter_and_sum: filter length {N} > frame length {M}")
    L = M - N + 1
    n = _fft_size(M, N)
    workers = worker_count()
    xv, hv = frames.values, bank.values
    X = scipy.fft.rfft(xv, n, axis=-1, workers=workers)
    H = scipy.fft.rfft(hv, n, axis=-1, workers=workers)
    # (K, F, C) @ (K, C, P) -> (K, F, P)
    Y = np.matmul(X.transpose(2, 0, 1), H.transpose(2, 0, 1)).transpose(1, 2, 0)
    out = scipy.fft.irfft(Y, n, axis=-1, workers=workers)[..., N - 1 : M]
    out = np.ascontiguousarray(out, dtype=xv.dtype)
    need_x, need_h = frames.requires_grad, bank.requires_grad

    def backward(g):
        grad_x = grad_h = None
        if need_x:
            G = scipy.fft.rfft(g, n, axis=-1, workers=workers)
            R = scipy.fft.rfft(hv[..., ::-1], n, axis=-1, workers=workers)
            # (K, F, P) @ (K, P, C) -> (K, F, C)
            DX = np.matmul(G.transpose(2, 0, 1), R.transpose(2, 1, 0)).transpose(1, 2, 0)
            grad_x = scipy.fft.irfft(DX, n, axis=-1, workers=workers)[..., :M]
            grad_x = np.ascontiguousarray(grad_x, dtype=xv.dtype)
        if need_h:
            GR = scipy.fft.rfft(g[..., ::-1], n, axis=-1, workers=workers)
            # (K, C, F) @ (K, F, P) -> (K, C, P)
            DH = np.matmul(X.transpose(2, 1, 0), GR.transpose(2, 0, 1)).transpose(1, 2, 0)
            corr = scipy.fft.irfft(DH, n, axis=-1, workers=workers)[..., L - 1 : L - 1 + N]
            grad_h = np.ascontiguousarray(corr[..., ::-1], dtype=hv.dtype)
        return (grad_x, grad_h)

    return _emit("filter_and_sum", (frames, bank), out, backward)


def conv1d_maps(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """
    Valid convolution of single-map rows with a bank of kernels.

    x (B, D), kernels (K, W), bias (K,) -> (B, K, D - W + 1), same orientation
    as ``conv1d_valid``.
    """
    x, kernels, bias = _as_tensor(x), _as_tensor(kernels), _as_tensor(bias)
    if x.values.ndim != 2 or kernels.values.ndim != 2 or bias.shape != (kernels.shape[0],):
        raise DimensionError(
            f"conv1d_maps: x {x.shape}, kernels {kernels.shape}, bias {bias.shape}"
        )
    B, D = x.shape
    K, W = kernels.shape
    if D < W:
        raise DimensionError(f"conv1d_maps: input width {D} < kernel width {W}")
    Lo = D - W + 1
    windows = sliding_window_view(x.values, W, axis=1)  # (B, Lo, W)
    flipped = kernels.values[:, ::-1]
    out = (windows @ flipped.T).transpose(0, 2, 1) + bias.values[None, :, None]
    dtype = x.dtype

    def backward(g):
        gt = g.transpose(0, 2, 1)  # (B, Lo, K)
        grad_k = np.einsum("blk,blw->kw", gt, windows)[:, ::-1]
        grad_windows = gt @ flipped  # (B, Lo, W)
        grad_x = np.zeros((B, D), dtype=dtype)
        for w in range(W):
            grad_x[:, w : w + Lo] += grad_windows[:, :, w]
        return (grad_x, np.ascontiguousarray(grad_k), g.sum(axis=(0, 2)))

    return _emit("conv1d_maps", (x, kernels, bias), np.ascontiguousarray(out), backward)


def max_pool(x: Tensor, window: int, stride: Optional[int] = None) -> Tensor:
    """
    Max over windows of the last axis. Gradients route to the argmax; ties go
    to the lowest index.
    """
    x = _as_tensor(x)
    stride = window if stride is None else stride
    L = x.shape[-1]
    if window < 1 or stride < 1:
        raise DimensionError("max_pool: window and stride must be >= 1")
    if window > L:
        raise DimensionError(f"max_pool: window {window} > length {L}")
    Lo = (L - window) // stride + 1
    windows = sliding_window_view(x.values, window, axis=-1)[..., ::stride, :][..., :Lo, :]
    arg = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]
    shape, dtype = x.shape, x.dtype
    positions = arg + np.arange(Lo) * stride
    if _PATTERNS:
        _note_branch(positions)

    def backward(g):
        rows = int(np.prod(shape[:-1], dtype=np.int64))
        full = np.zeros((rows, L), dtype=dtype)
        np.add.at(
            full,
            (np.arange(rows)[:, None], positions.reshape(rows, Lo)),
            g.reshape(rows, Lo),
        )
        return (full.reshape(shape),)

    return _emit("max_pool", (x,), np.ascontiguousarray(out), backward)


# -- recurrent ---------------------------------------------------------------


class LSTMWeights(NamedTuple):
    """Gate rows are stacked in the order input, forget, candidate, output."""

    w_ih: Tensor
    w_hh: Tensor
    bias: Tensor

    @property
    def hidden_size(self) -> int:
        return self.w_hh.shape[1]

    @property
    def input_size(self) -> int:
        return self.w_ih.shape[1]


def lstm_cell(
    x_t: Tensor, h_prev: Tensor, c_prev: Tensor, params: LSTMWeights
) -> Tuple[Tensor, Tensor]:
    """Standard LSTM step without peepholes or projection."""
    x_t, h_prev, c_prev = _as_tensor(x_t), _as_tensor(h_prev), _as_tensor(c_prev)
    H = params.hidden_size
    if (
        params.w_hh.shape != (4 * H, H)
        or params.w_ih.shape[0] != 4 * H
        or params.bias.shape != (4 * H,)
    ):
        raise DimensionError(
            f"lstm_cell: inconsistent weights {params.w_ih.shape}, "
            f"{params.w_hh.shape}, {params.bias.shape}"
        )
    if h_prev.shape != c_prev.shape or h_prev.shape[-1] != H:
        raise DimensionError(f"lstm_cell: state shapes {h_prev.shape}, {c_prev.shape}, H={H}")
    if x_t.shape[:-1] != h_prev.shape[:-1]:
        raise DimensionError(f"lstm_cell: batch of x {x_t.shape} vs h {h_prev.shape}")
    gates = add(linear(x_t, params.w_ih, params.bias), linear(h_prev, params.w_hh))
    i = sigmoid(slice_last(gates, 0, H))
    f = sigmoid(slice_last(gates, H, 2 * H))
    g = tanh(slice_last(gates, 2 * H, 3 * H))
    o = sigmoid(slice_last(gates, 3 * H, 4 * H))
    c_t = add(mul(f, c_prev), mul(i, g))
    h_t = mul(o, tanh(c_t))
    return h_t, c_t


# -- loss --------------------------------------------------------------------


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(
    logits: Tensor,
    target: Union[int, Sequence[int], np.ndarray],
    class_weight: Union[float, Sequence[float], np.ndarray] = 1.0,
) -> Tensor:
    """
    Weighted cross-entropy ``-w * log softmax(logits)[target]``.

    A batch of logits (B, K) gives the batch mean of the per-row weighted
    losses; a single row of logits (K,) gives that row's loss.
    """
    logits = _as_tensor(logits)
    single = logits.values.ndim == 1
    lv = logits.values[None, :] if single else logits.values
    if lv.ndim != 2:
        raise DimensionError(f"softmax_cross_entropy: logits of shape {logits.shape}")
    B, K = lv.shape
    targets = np.broadcast_to(np.asarray(target, dtype=np.int64), (B,))
    weights = np.broadcast_to(np.asarray(class_weight, dtype=lv.dtype), (B,))
    if np.any(targets < 0) or np.any(targets >= K):
        raise InputError(f"softmax_cross_entropy: targets outside [0, {K})")
    shifted = lv - lv.max(axis=1, keepdims=True)
    sumexp = np.exp(shifted).sum(axis=1)
    log_probs = shifted[np.arange(B), targets] - np.log(sumexp)
    loss = np.asarray(-(weights * log_probs).sum() / B, dtype=lv.dtype)
    probs = np.exp(shifted) / sumexp[:, None]
    onehot = np.zeros_like(probs)
    onehot[np.arange(B), targets] = 1

    def backward(g):
        grad = g * weights[:, None] * (probs - onehot) / B
        return (grad[0] if single else grad,)

    return _emit("softmax_cross_entropy", (logits,), loss, backward)


# -- finite-difference checking ---------------------------------------------


class FlatView:
    """Flat, ordered view over the elements of a list of tensors."""

    def __init__(self, tensors: Iterable[Tensor]) -> None:
        self.tensors: List[Tensor] = list(tensors)
        self._offsets = np.cumsum([0] + [t.size for t in self.tensors])

    @property
    def size(self) -> int:
        return int(self._offsets[-1])

    def _locate(self, index: int) -> Tuple[Tensor, int]:
        if not 0 <= index < self.size:
            raise DimensionError(f"flat index {index} outside [0, {self.size})")
        slot = int(np.searchsorted(self._offsets, index, side="right")) - 1
        return self.tensors[slot], index - int(self._offsets[slot])

    def get(self, index: int) -> float:
        tensor, local = self._locate(index)
        return float(tensor.values.flat[local])

    def set(self, index: int, value: float):
        tensor, local = self._locate(index)
        np.put(tensor.values, local, value)

    def values(self) -> np.ndarray:
        if not self.tensors:
            return np.zeros(0)
        return np.concatenate([t.values.reshape(-1) for t in self.tensors])

    def grads(self) -> np.ndarray:
        if not self.tensors:
            return np.zeros(0)
        return np.concatenate(
            [
                (t.grad if t.grad is not None else np.zeros_like(t.values)).reshape(-1)
                for t in self.tensors
            ]
        )

    def assign(self, flat: np.ndarray):
        if flat.shape != (self.size,):
            raise DimensionError(f"flat vector of shape {flat.shape}, expected ({self.size},)")
        for tensor, start, stop in zip(self.tensors, self._offsets[:-1], self._offsets[1:]):
            chunk = flat[start:stop].reshape(tensor.shape).astype(tensor.dtype)
            _check_finite(chunk, tensor.name or "parameter")
            tensor.values = chunk

    def zero_grad(self):
        for tensor in self.tensors:
            tensor.zero_grad()


class GradCheckReport(NamedTuple):
    max_rel_error: float
    coordinates: np.ndarray
    analytic: np.ndarray
    numeric: np.ndarray
    skipped: int = 0


def grad_check(
    f: Callable[[], Tensor],
    params: Union[FlatView, Sequence[Tensor]],
    eps: float = 1e-5,
    *,
    coords: Optional[int] = None,
    seed: SeedLike = 0,
    floor: float = 1e-8,
) -> GradCheckReport:
    """
    Compare backward gradients of the scalar ``f()`` against central
    differences at sampled coordinates of ``params``.

    The relative error is ``|a - n| / max(|a|, |n|, floor)``. A coordinate
    whose +eps or -eps evaluation takes a different ReLU or max-pool branch
    than the unperturbed pass straddles a kink or a pooling tie; it is
    skipped and another one is drawn in its place.
    """
    view = params if isinstance(params, FlatView) else FlatView(params)
    view.zero_grad()
    with Graph() as graph, BranchPattern() as base:
        loss = f()
        graph.backward(loss)
    analytic_all = view.grads()
    order = np.arange(view.size)
    wanted = view.size
    if coords is not None and coords < view.size:
        order = np.random.default_rng(seed).permutation(view.size)
        wanted = coords
    kept: List[int] = []
    numeric: List[float] = []
    skipped = 0
    for index in order.tolist():
        if len(kept) == wanted:
            break
        original = view.get(index)
        view.set(index, original + eps)
        with BranchPattern() as upper:
            plus = f().item()
        view.set(index, original - eps)
        with BranchPattern() as lower:
            minus = f().item()
        view.set(index, original)
        if not (base.matches(upper) and base.matches(lower)):
            skipped += 1
            continue
        kept.append(index)
        numeric.append((plus - minus) / (2 * eps))
    ranked = np.argsort(kept, kind="stable")
    coordinates = np.asarray(kept, dtype=np.int64)[ranked]
    numeric_at = np.asarray(numeric, dtype=np.float64)[ranked]
    analytic = analytic_all[coordinates]
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric_at)), floor)
    rel = np.abs(analytic - numeric_at) / denom
    worst = float(rel.max()) if len(rel) else 0.0
    _LOGGER.debug(
        "grad_check over %d coordinates (%d skipped at kinks): max rel error %.3e",
        len(rel),
        skipped,
        worst,
    )
    return GradCheckReport(worst, coordinates, analytic, numeric_at, skipped)
