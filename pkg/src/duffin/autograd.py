"""Small reverse-mode automatic differentiation engine on top of numpy.

Plain ``np.ndarray`` values play the role of real tensors. Images are batched
and channel-last: ``(batch, rows, cols, channels)``. A :class:`Tensor` wraps an
array together with its gradient slot, its parents in the computation graph
and the closure that maps an upstream gradient to parent contributions.

Every layer primitive used by the model lives here as a plain function that
takes and returns :class:`Tensor` objects.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

DTYPE = np.float32


class GraphError(RuntimeError):
    """Raised for malformed computation graphs (cycles, non-scalar roots)."""


class Tensor:
    """A value node in a computation graph.

    Args:
        data: array holding the value. Stored as given (float32 by default
            for anything that is not already floating point).
        requires_grad: whether gradients should flow into this node.
        parents: nodes this value was computed from.
        backward: closure ``g -> tuple`` returning one gradient (or ``None``)
            per parent.
        name: optional label, used by parameter stores.
    """

    __slots__ = ("data", "requires_grad", "parents", "_backward", "name", "_grad", "has_grad")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: Sequence["Tensor"] = (),
        backward: Callable | None = None,
        name: str | None = None,
    ):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.parents = tuple(parents)
        self._backward = backward
        self.name = name
        self._grad = None
        self.has_grad = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value: np.ndarray) -> None:
        self._grad = value

    def zero_grad(self) -> None:
        self._grad = None
        self.has_grad = False

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{label})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(as_tensor(other), -1.0))

    def __neg__(self):
        return mul(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, parents=parents if needs else (), backward=backward if needs else None)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ----------------------------------------------------------------------------
# elementwise and structural ops
# ----------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    """Broadcasting elementwise product."""
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(a.data * b.data, (a, b), backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape

    def backward(g):
        return (g.reshape(old),)

    return _node(x.data.reshape(shape), (x,), backward)


def flatten(x: Tensor) -> Tensor:
    """Row-major flatten of every axis except the batch axis."""
    return reshape(x, (x.shape[0], -1))


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the last (channel) axis; ``a`` channels come first."""
    if a.shape[:-1] != b.shape[:-1]:
        raise ValueError(f"spatial mismatch in concat: {a.shape} vs {b.shape}")
    ca = a.shape[-1]

    def backward(g):
        return g[..., :ca], g[..., ca:]

    return _node(np.concatenate([a.data, b.data], axis=-1), (a, b), backward)


def channel_scale(x: Tensor, weights: Tensor) -> Tensor:
    """Multiply channel ``k`` of an image by ``weights[..., k]``.

    ``weights`` is ``(batch, 1, 1, C)`` or ``(1, 1, C)``.
    """
    if weights.shape[-1] != x.shape[-1]:
        raise ValueError(f"channel-count mismatch: {x.shape[-1]} vs {weights.shape[-1]}")
    if weights.shape[-3:-1] != (1, 1):
        raise ValueError(f"weights must be 1x1 spatially, got {weights.shape}")
    return mul(x, weights)


def straight_through(x: Tensor, fn: Callable[[np.ndarray], np.ndarray]) -> Tensor:
    """Forward ``fn(x)``, backward the identity."""

    def backward(g):
        return (g,)

    return _node(np.asarray(fn(x.data), dtype=x.data.dtype), (x,), backward)


# ----------------------------------------------------------------------------
# activations
# ----------------------------------------------------------------------------


def leaky_relu(x: Tensor, alpha: float = 0.3) -> Tensor:
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    slope = np.where(x.data >= 0, 1.0, alpha).astype(x.data.dtype)

    def backward(g):
        return (g * slope,)

    return _node(x.data * slope, (x,), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return _node(np.where(mask, x.data, 0).astype(x.data.dtype), (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    y = expit(x.data)

    def backward(g):
        return (g * y * (1 - y),)

    return _node(y, (x,), backward)


def activation(kind: str, x: Tensor, alpha: float = 0.3) -> Tensor:
    if kind == "leaky_relu":
        return leaky_relu(x, alpha)
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


# ----------------------------------------------------------------------------
# pooling
# ----------------------------------------------------------------------------


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel mean over the spatial axes: ``(B,H,W,C) -> (B,1,1,C)``."""
    B, H, W, C = x.shape
    scale = 1.0 / (H * W)

    def backward(g):
        return (np.broadcast_to(g * scale, x.shape).astype(x.data.dtype),)

    return _node(x.data.mean(axis=(1, 2), keepdims=True), (x,), backward)


def global_max_pool(x: Tensor) -> Tensor:
    """Per-channel maximum; ties share the gradient equally."""
    out = x.data.max(axis=(1, 2), keepdims=True)

    def backward(g):
        mask = (x.data == out).astype(x.data.dtype)
        mask /= mask.sum(axis=(1, 2), keepdims=True)
        return (mask * g,)

    return _node(out, (x,), backward)


def global_pool(kind: str, x: Tensor) -> Tensor:
    if kind == "avg":
        return global_avg_pool(x)
    if kind == "max":
        return global_max_pool(x)
    raise ValueError(f"unknown pooling {kind!r}")


# ----------------------------------------------------------------------------
# linear layers
# ----------------------------------------------------------------------------


def dense(x: Tensor, weights: Tensor, bias: Tensor | None = None) -> Tensor:
    """Fully connected layer, ``out[b, j] = sum_i w[j, i] * x[b, i] + bias[j]``.

    ``weights`` is ``(out_features, in_features)``.
    """
    if x.data.ndim != 2:
        raise ValueError(f"dense expects (batch, features), got {x.shape}")
    if weights.shape[1] != x.shape[1]:
        raise ValueError(f"dimension mismatch: weights {weights.shape} vs input {x.shape}")
    if bias is not None and bias.shape != (weights.shape[0],):
        raise ValueError(f"bias shape {bias.shape} does not match {weights.shape[0]} outputs")
    out = x.data @ weights.data.T
    if bias is not None:
        out = out + bias.data
    parents = (x, weights) if bias is None else (x, weights, bias)

    def backward(g):
        gx = g @ weights.data if x.requires_grad else None
        gw = g.T @ x.data if weights.requires_grad else None
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    return _node(out, parents, backward)


def conv2d(
    x: Tensor,
    kernels: Tensor,
    bias: Tensor | None = None,
    stride: tuple[int, int] = (1, 1),
    padding: tuple[int, int] = (0, 0),
) -> Tensor:
    """2D cross-correlation with zero padding.

    Args:
        x: ``(B, H, W, Cin)`` input.
        kernels: ``(kh, kw, Cin, Cout)``.
        bias: ``(Cout,)`` or None.
        stride: ``(sh, sw)``, must divide the padded extent exactly.
        padding: ``(ph, pw)`` zeros added on both sides.
    """
    if x.data.ndim != 4:
        raise ValueError(f"conv2d expects (B, H, W, C), got {x.shape}")
    B, H, W, Cin = x.shape
    kh, kw, kcin, Cout = kernels.shape
    if kcin != Cin:
        raise ValueError(f"kernel expects {kcin} input channels, input has {Cin}")
    sh, sw = stride
    ph, pw = padding
    if sh < 1 or sw < 1 or ph < 0 or pw < 0:
        raise ValueError("stride must be positive and padding non-negative")
    Hp, Wp = H + 2 * ph, W + 2 * pw
    if kh > Hp or kw > Wp:
        raise ValueError(f"kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
    if (Hp - kh) % sh or (Wp - kw) % sw:
        raise ValueError(f"stride {stride} does not divide padded extent {Hp}x{Wp} minus kernel {kh}x{kw}")
    Ho, Wo = (Hp - kh) // sh + 1, (Wp - kw) // sw + 1

    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0))) if (ph or pw) else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::sh, ::sw]
    # (B, Ho, Wo, Cin, kh, kw) -> rows ordered (kh, kw, Cin) to match the kernel layout
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(B * Ho * Wo, kh * kw * Cin)
    wmat = kernels.data.reshape(kh * kw * Cin, Cout)
    out = cols @ wmat
    if bias is not None:
        if bias.shape != (Cout,):
            raise ValueError(f"bias shape {bias.shape} does not match {Cout} kernels")
        out += bias.data
    out = out.reshape(B, Ho, Wo, Cout)
    parents = (x, kernels) if bias is None else (x, kernels, bias)

    def backward(g):
        g2 = g.reshape(-1, Cout)
        gk = (cols.T @ g2).reshape(kernels.shape) if kernels.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ wmat.T).reshape(B, Ho, Wo, kh, kw, Cin)
            dxp = np.zeros((B, Hp, Wp, Cin), dtype=dcols.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i : i + sh * Ho : sh, j : j + sw * Wo : sw, :] += dcols[:, :, :, i, j, :]
            gx = dxp[:, ph : ph + H, pw : pw + W, :]
        grads = [gx, gk]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    return _node(out, parents, backward)


def conv1d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, padding: int | None = None) -> Tensor:
    """Same-length 1D cross-correlation along the channel axis.

    ``x`` is ``(B, 1, 1, C)`` (a pooled channel vector) and ``kernel`` has odd
    length ``k``. Padding must be ``(k - 1) // 2`` so the output keeps ``C``.
    """
    k = kernel.shape[0]
    if kernel.data.ndim != 1 or k % 2 == 0:
        raise ValueError(f"conv1d kernel must be 1D with odd length, got {kernel.shape}")
    half = (k - 1) // 2
    if padding is None:
        padding = half
    if padding != half:
        raise ValueError(f"padding {padding} breaks the same-length contract for k={k}")
    shape = x.shape
    C = shape[-1]
    v = x.data.reshape(-1, C)
    vp = np.pad(v, ((0, 0), (half, half)))
    win = sliding_window_view(vp, k, axis=1)  # (N, C, k)
    out = win @ kernel.data
    if bias is not None:
        out = out + bias.data
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def backward(g):
        g2 = g.reshape(-1, C)
        gk = np.einsum("nck,nc->k", win, g2) if kernel.requires_grad else None
        gx = None
        if x.requires_grad:
            gp = np.zeros_like(vp)
            for j in range(k):
                gp[:, j : j + C] += g2 * kernel.data[j]
            gx = gp[:, half : half + C].reshape(shape)
        grads = [gx, gk]
        if bias is not None:
            grads.append(np.atleast_1d(g2.sum()).astype(bias.data.dtype).reshape(bias.shape))
        return tuple(grads)

    return _node(out.reshape(shape), parents, backward)


# ----------------------------------------------------------------------------
# batch normalisation
# ----------------------------------------------------------------------------


@dataclass
class BatchNormState:
    """Per-channel running statistics of one batch-norm layer.

    ``updates`` counts train-mode calls; inference before the first update is
    an error.
    """

    mean: Tensor
    var: Tensor
    updates: Tensor
    momentum: float = 0.9


def batch_norm(
    x: Tensor,
    state: BatchNormState,
    zeta: float = 1e-5,
    training: bool = True,
    scale: Tensor | None = None,
    shift: Tensor | None = None,
) -> Tensor:
    """Normalise every channel (last axis) with batch or running statistics.

    In training mode the running statistics are updated as
    ``running = momentum * running + (1 - momentum) * batch``. ``scale`` and
    ``shift`` are optional learned per-channel parameters applied afterwards.
    """
    if zeta <= 0:
        raise ValueError("zeta must be positive")
    if (scale is None) != (shift is None):
        raise ValueError("scale and shift must be given together")
    axes = tuple(range(x.data.ndim - 1))
    if training:
        mu = x.data.mean(axis=axes)
        centered = x.data - mu
        var = (centered * centered).mean(axis=axes)
        m = state.momentum
        state.mean.data[...] = m * state.mean.data + (1 - m) * mu
        state.var.data[...] = m * state.var.data + (1 - m) * var
        state.updates.data[...] += 1
        invstd = 1.0 / np.sqrt(var + zeta)
        xhat = centered * invstd
        n = x.data.size // x.shape[-1]

        def dx(g):
            gsum = g.sum(axis=axes)
            gxsum = (g * xhat).sum(axis=axes)
            return invstd / n * (n * g - gsum - xhat * gxsum)

    else:
        if state.updates.data.item() < 1:
            raise RuntimeError("batch_norm inference before running statistics were populated")
        invstd = (1.0 / np.sqrt(state.var.data + zeta)).astype(x.data.dtype)
        xhat = (x.data - state.mean.data.astype(x.data.dtype)) * invstd

        def dx(g):
            return g * invstd

    if scale is None:

        def backward(g):
            return (dx(g),)

        return _node(xhat, (x,), backward)

    def backward_affine(g):
        gx = dx(g * scale.data) if x.requires_grad else None
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _node(xhat * scale.data + shift.data, (x, scale, shift), backward_affine)


# ----------------------------------------------------------------------------
# losses and backprop
# ----------------------------------------------------------------------------


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean over the batch of per-sample squared Frobenius errors."""
    target = target.data if isinstance(target, Tensor) else np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target
    n = pred.shape[0]
    loss = np.asarray((diff * diff).sum() / n, dtype=pred.data.dtype)

    def backward(g):
        return ((2.0 / n) * g * diff,)

    return _node(loss, (pred,), backward)


def sum_all(x: Tensor) -> Tensor:
    def backward(g):
        return (np.broadcast_to(g, x.shape).astype(x.data.dtype),)

    return _node(np.asarray(x.data.sum(), dtype=x.data.dtype), (x,), backward)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    state: dict[int, int] = {}  # 1 = on stack, 2 = done
    stack: list[tuple[Tensor, int]] = [(root, 0)]
    while stack:
        node, i = stack.pop()
        if i == 0:
            if state.get(id(node)) == 2:
                continue
            state[id(node)] = 1
        if i < len(node.parents):
            stack.append((node, i + 1))
            child = node.parents[i]
            s = state.get(id(child))
            if s == 1:
                raise GraphError("cycle detected in computation graph")
            if s is None and child.requires_grad:
                stack.append((child, 0))
        else:
            state[id(node)] = 2
            order.append(node)
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad."""
    if loss.data.size != 1:
        raise GraphError(f"backward needs a scalar root, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topological_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.has_grad:
                node.grad = node.grad + g
            else:
                node.grad = np.array(g, dtype=node.data.dtype, copy=True).reshape(node.shape)
            node.has_grad = True
            continue
        for parent, pg in zip(node.parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ----------------------------------------------------------------------------
# parameters and optimisation
# ----------------------------------------------------------------------------


class ParameterStore:
    """Ordered, uniquely named collection of tensors.

    Trainable parameters and non-trainable buffers (batch-norm statistics)
    live side by side; iteration follows creation order.
    """

    def __init__(self):
        self._items: OrderedDict[str, Tensor] = OrderedDict()

    def add(self, name: str, value, trainable: bool = True) -> Tensor:
        if name in self._items:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, copy=True), requires_grad=trainable, name=name)
        self._items[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._items[name]

    def __contains__(self, name: str) -> bool:
        return name in self._items

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self._items.values())

    def __len__(self) -> int:
        return len(self._items)

    def names(self) -> list[str]:
        return list(self._items)

    def items(self):
        return self._items.items()

    def trainable(self) -> list[Tensor]:
        return [t for t in self._items.values() if t.requires_grad]

    def zero_grad(self) -> None:
        for t in self._items.values():
            t.zero_grad()

    def astype(self, dtype) -> None:
        """Cast every stored value in place (used by gradient checks)."""
        for t in self._items.values():
            t.data = t.data.astype(dtype)
            t.zero_grad()


@dataclass
class Adam:
    """Adam with bias correction; moments persist across :meth:`step` calls."""

    params: ParameterStore
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, lr: float) -> None:
        trainable = self.params.trainable()
        missing = [p.name for p in trainable if not p.has_grad]
        if missing:
            raise RuntimeError(f"adam step with unpopulated gradients: {missing[:3]}")
        b1, b2 = self.betas
        self.t += 1
        c1 = 1 - b1**self.t
        c2 = 1 - b2**self.t
        for p in trainable:
            g = p.grad
            m = self.m.get(p.name)
            if m is None:
                m = self.m[p.name] = np.zeros_like(p.data)
                self.v[p.name] = np.zeros_like(p.data)
            v = self.v[p.name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)


def adam_step(optimizer: Adam, lr: float) -> None:
    optimizer.step(lr)


# ----------------------------------------------------------------------------
# finite-difference verification
# ----------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict[str, float]
    tolerance: float
    checked: int = 0
    skipped_kinks: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def grad_check(
    build_loss: Callable[[], Tensor],
    params: Sequence[Tensor] | ParameterStore,
    tolerance: float = 1e-4,
    step: float = 1e-4,
    max_entries: int | None = None,
    seed: int = 0,
    floor: float = 1e-6,
    kink_threshold: float | None = None,
) -> GradCheckReport:
    """Compare ``backward`` against central finite differences in float64.

    ``build_loss`` must rebuild the graph from the current parameter values
    every time it is called. Parameters are cast to float64 for the check and
    restored afterwards. ``max_entries`` samples that many coordinates per
    tensor (all of them when None). The error of each tensor is
    ``||analytic - numeric|| / max(||analytic||, ||numeric||, floor)``; the
    floor keeps gradients that vanish analytically (a bias feeding a batch
    norm) from reporting round-off as error.

    With ``kink_threshold`` set, a coordinate whose forward and backward
    one-sided differences disagree by more than that fraction of their size
    is skipped (and counted): the loss has a ReLU or max-pool kink inside
    the stencil, where no derivative exists to compare against.
    """
    tensors = params.trainable() if isinstance(params, ParameterStore) else list(params)
    saved = [(t.data, t.requires_grad) for t in tensors]
    rng = np.random.default_rng(seed)
    per_param: dict[str, float] = {}
    checked = skipped = 0
    try:
        for t in tensors:
            t.data = t.data.astype(np.float64)
            t.requires_grad = True
            t.zero_grad()
        loss = build_loss()
        f0 = float(loss.data)
        backward(loss)
        analytic = [t.grad.copy() for t in tensors]
        for idx, (t, ga) in enumerate(zip(tensors, analytic)):
            flat = t.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                coords = rng.choice(flat.size, size=max_entries, replace=False)
            num = np.empty(len(coords))
            keep = np.ones(len(coords), dtype=bool)
            for n, c in enumerate(coords):
                orig = flat[c]
                flat[c] = orig + step
                fp = float(build_loss().data)
                flat[c] = orig - step
                fm = float(build_loss().data)
                flat[c] = orig
                num[n] = (fp - fm) / (2 * step)
                if kink_threshold is not None:
                    d_plus, d_minus = (fp - f0) / step, (f0 - fm) / step
                    if abs(d_plus - d_minus) > kink_threshold * max(abs(d_plus), abs(d_minus), floor):
                        keep[n] = False
            ana = ga.reshape(-1)[coords][keep]
            num = num[keep]
            checked += int(keep.sum())
            skipped += int((~keep).sum())
            denom = max(np.linalg.norm(ana), np.linalg.norm(num), floor)
            per_param[t.name or f"param{idx}"] = float(np.linalg.norm(ana - num) / denom)
    finally:
        for t, (data, req) in zip(tensors, saved):
            t.data = data
            t.requires_grad = req
            t.zero_grad()
    worst = max(per_param.values()) if per_param else 0.0
    return GradCheckReport(worst, per_param, tolerance, checked, skipped)
