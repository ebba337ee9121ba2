"""
Tensor Core with Reverse-Mode Autodiff

A small dense-tensor layer over numpy arrays: the forward ops a transformer
needs, a tape-free reverse pass over the recorded graph, the Adam optimizer
with warmup and the binary parameter checkpoint format.

Rules:
- Broadcasting is limited to bias-style operands over trailing dimensions;
  anything else needs an explicit reshape.
- Every op checks its output for NaN/Inf and raises NonFiniteError naming
  the op.
- Training runs in float32; ``precision(np.float64)`` switches newly created
  tensors to float64 for gradient checks.
"""

import json
import logging
import struct
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from errors import DataError, NonFiniteError, NumericError, ShapeError

logger = logging.getLogger(__name__)

_state = threading.local()

CHECKPOINT_VERSION = 1


def default_dtype() -> np.dtype:
    return getattr(_state, 'dtype', np.float32)


def grad_enabled() -> bool:
    return getattr(_state, 'grad_enabled', True)


@contextmanager
def precision(dtype):
    """Create tensors in another float type inside the block."""
    previous = default_dtype()
    _state.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _state.dtype = previous


@contextmanager
def no_grad():
    """Run ops without recording the graph (decoding, evaluation)."""
    previous = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Tensor:
    """
    Dense array plus autodiff bookkeeping.

    Leaves created with requires_grad=True are parameters; their ``grad`` is
    filled by backward(). Interior nodes keep their parents and a closure
    mapping the output gradient to one gradient per parent.
    """

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: str = "",
        _parents: Tuple['Tensor', ...] = (),
        _backward: Optional[BackwardFn] = None,
        op: str = "leaf"
    ):
        array = np.asarray(data)
        if not np.issubdtype(array.dtype, np.floating) or op == "leaf":
            array = array.astype(default_dtype(), copy=False)
        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self.op = op
        self._parents = _parents
        self._backward = _backward
        self._consumed = False

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def detach(self) -> 'Tensor':
        return Tensor(self.data.copy(), requires_grad=False, name=self.name)

    def __repr__(self) -> str:
        label = f" '{self.name}'" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other: 'Tensor') -> 'Tensor':
        return add(self, other)

    def __mul__(self, other: Union['Tensor', float]) -> 'Tensor':
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __matmul__(self, other: 'Tensor') -> 'Tensor':
        return matmul(self, other)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def parameter(data, name: str = "") -> Tensor:
    return Tensor(np.array(data, dtype=default_dtype()), requires_grad=True, name=name)


def _check_finite(array: np.ndarray, op: str):
    if not np.all(np.isfinite(array)):
        raise NonFiniteError(op)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn, op: str) -> Tensor:
    _check_finite(data, op)
    if grad_enabled() and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward, op=op)
    return Tensor(data, requires_grad=False, op=op)


def _sum_to_trailing(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Reduce a gradient over the leading axes a bias operand was broadcast along."""
    lead = grad.ndim - len(shape)
    if lead > 0:
        grad = grad.sum(axis=tuple(range(lead)))
    return grad.reshape(shape)


def _is_trailing(shape: Tuple[int, ...], full: Tuple[int, ...]) -> bool:
    return len(shape) <= len(full) and tuple(full[len(full) - len(shape):]) == tuple(shape)


# ==================== FORWARD OPS ====================

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    (..., n, k) @ (k, m), or batched (..., n, k) @ (..., k, m) with equal
    leading dimensions.
    """
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch dimensions differ, {a.shape} vs {b.shape}")

    out = np.matmul(a.data, b.data)

    def backward(g):
        grad_a = np.matmul(g, np.swapaxes(b.data, -1, -2))
        if b.ndim == 2:
            k, m = b.shape
            grad_b = a.data.reshape(-1, k).T @ g.reshape(-1, m)
        else:
            grad_b = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return grad_a, grad_b

    return _make(out, (a, b), backward, "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; b may also be a bias over a's trailing dimensions."""
    if a.shape != b.shape and not _is_trailing(b.shape, a.shape):
        raise ShapeError(f"add: cannot add shape {b.shape} to {a.shape}")
    out = a.data + b.data

    def backward(g):
        return g, _sum_to_trailing(g, b.shape)

    return _make(out, (a, b), backward, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; b may be a scale over a's trailing dimensions."""
    if a.shape != b.shape and not _is_trailing(b.shape, a.shape):
        raise ShapeError(f"mul: cannot multiply shape {a.shape} by {b.shape}")
    out = a.data * b.data

    def backward(g):
        return g * b.data, _sum_to_trailing(g * a.data, b.shape)

    return _make(out, (a, b), backward, "mul")


def scale(a: Tensor, factor: float) -> Tensor:
    out = a.data * a.data.dtype.type(factor)

    def backward(g):
        return (g * factor,)

    return _make(out, (a,), backward, "scale")


def relu(x: Tensor) -> Tensor:
    positive = x.data > 0
    out = np.where(positive, x.data, 0).astype(x.data.dtype)

    def backward(g):
        return (g * positive,)

    return _make(out, (x,), backward, "relu")


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis (rows)."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    out = exp / exp.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (x,), backward, "softmax")


def layer_norm(
    x: Tensor,
    gamma: Optional[Tensor] = None,
    beta: Optional[Tensor] = None,
    eps: float = 1e-5
) -> Tensor:
    """Normalize the last axis to zero mean and unit variance, then apply gamma/beta."""
    width = x.shape[-1]
    for p, label in ((gamma, 'gamma'), (beta, 'beta')):
        if p is not None and p.shape != (width,):
            raise ShapeError(f"layer_norm: {label} shape {p.shape} != ({width},)")

    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat
    if gamma is not None:
        out = out * gamma.data
    if beta is not None:
        out = out + beta.data

    parents = [x] + [p for p in (gamma, beta) if p is not None]

    def backward(g):
        gx = g * gamma.data if gamma is not None else g
        grad_x = inv / width * (
            width * gx
            - gx.sum(axis=-1, keepdims=True)
            - xhat * (gx * xhat).sum(axis=-1, keepdims=True)
        )
        grads = [grad_x]
        if gamma is not None:
            grads.append(_sum_to_trailing(g * xhat, gamma.shape))
        if beta is not None:
            grads.append(_sum_to_trailing(g, beta.shape))
        return tuple(grads)

    return _make(out.astype(x.data.dtype, copy=False), parents, backward, "layer_norm")


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of a (V, D) table; output shape is ids.shape + (D,)."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embedding_lookup: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(
            f"embedding_lookup: ids out of range [0, {table.shape[0]}): "
            f"min {ids.min()}, max {ids.max()}"
        )
    out = table.data[ids]

    def backward(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (grad,)

    return _make(out, (table,), backward, "embedding_lookup")


def cross_entropy(
    logits: Tensor,
    targets: np.ndarray,
    ignore_index: Optional[int] = None,
    reduction: str = "mean"
) -> Tensor:
    """
    Softmax cross entropy of (N, V) logits against N integer targets.

    Positions equal to ignore_index contribute neither loss nor gradient.
    ``mean`` averages over the remaining positions; with none left the loss
    is 0.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    if reduction not in ("mean", "sum"):
        raise NumericError(f"cross_entropy: unknown reduction '{reduction}'")

    valid = np.ones(targets.shape, dtype=bool) if ignore_index is None else targets != ignore_index
    safe_targets = np.where(valid, targets, 0)
    if valid.any() and (safe_targets[valid].min() < 0 or safe_targets[valid].max() >= logits.shape[1]):
        raise ShapeError(f"cross_entropy: target id outside [0, {logits.shape[1]})")

    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    log_probs = shifted - log_norm
    picked = log_probs[np.arange(len(targets)), safe_targets]
    count = int(valid.sum())
    denom = max(count, 1) if reduction == "mean" else 1
    total = -(picked * valid).sum() / denom
    out = np.asarray(total, dtype=logits.data.dtype)

    def backward(g):
        probs = np.exp(log_probs)
        probs[np.arange(len(targets)), safe_targets] -= 1.0
        probs *= valid[:, None]
        return (probs * (g / denom),)

    return _make(out, (logits,), backward, "cross_entropy")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    original = x.shape
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"reshape: cannot view {original} as {tuple(shape)}")

    def backward(g):
        return (g.reshape(original),)

    return _make(out, (x,), backward, "reshape")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for {x.ndim}-D tensor")
    inverse = tuple(np.argsort(axes))
    out = np.transpose(x.data, axes)

    def backward(g):
        return (np.transpose(g, inverse),)

    return _make(out, (x,), backward, "transpose")


def masked_fill(x: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace positions where mask is True; mask broadcasts against x."""
    try:
        full = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    except ValueError:
        raise ShapeError(f"masked_fill: mask {np.shape(mask)} does not fit {x.shape}")
    out = np.where(full, x.data.dtype.type(value), x.data)

    def backward(g):
        return (np.where(full, 0, g).astype(g.dtype, copy=False),)

    return _make(out, (x,), backward, "masked_fill")


def dropout(x: Tensor, p: float, rng: Optional[np.random.Generator], training: bool = True) -> Tensor:
    """Inverted dropout; identity when not training or p == 0."""
    if not training or p <= 0.0 or rng is None:
        return x
    if p >= 1.0:
        raise NumericError(f"dropout probability must be < 1, got {p}")
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / x.data.dtype.type(1.0 - p)
    out = x.data * keep

    def backward(g):
        return (g * keep,)

    return _make(out, (x,), backward, "dropout")


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.data.dtype)

    def backward(g):
        return (np.broadcast_to(g, x.shape).astype(x.data.dtype),)

    return _make(out, (x,), backward, "sum")


def mean_all(x: Tensor) -> Tensor:
    return scale(sum_all(x), 1.0 / max(x.size, 1))


# ==================== BACKWARD ====================

def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, params: Optional[Iterable[Tensor]] = None) -> Dict[int, np.ndarray]:
    """
    Propagate gradients from a scalar loss to every reachable leaf.

    Gradients accumulate into ``leaf.grad``. When ``params`` is given, those
    the loss does not reach get a zero gradient. A graph can be walked once;
    a second call raises NumericError.

    Returns:
        Mapping id(leaf) -> gradient for the leaves reached
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise NumericError("backward called twice on the same graph without rebuilding it")

    reached: Dict[int, np.ndarray] = {}
    if loss.requires_grad:
        grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(_topological_order(loss)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                reached[id(node)] = node.grad
                continue
            for parent, parent_grad in zip(node._parents, node._backward(g)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = parent_grad if key not in grads else grads[key] + parent_grad
            node._backward = None
            node._parents = ()
    loss._consumed = True

    for p in params or ():
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
    return reached


def zero_grads(params: Iterable[Tensor]):
    for p in params:
        p.grad = None


def gradient_check(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-6
) -> float:
    """
    Largest relative error between backward() and central differences.

    Run under ``precision(np.float64)``; ``fn`` rebuilds the graph from the
    current input values on every call.
    """
    zero_grads(inputs)
    backward(fn(), inputs)
    analytic = [p.grad.copy() for p in inputs]

    worst = 0.0
    for p, grad in zip(inputs, analytic):
        flat = p.data.reshape(-1)
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            with no_grad():
                plus = fn().item()
            flat[i] = saved - eps
            with no_grad():
                minus = fn().item()
            flat[i] = saved
            numeric[i] = (plus - minus) / (2 * eps)
        denom = np.maximum(np.abs(numeric) + np.abs(grad.reshape(-1)), 1e-8)
        err = float(np.max(np.abs(numeric - grad.reshape(-1)) / denom)) if flat.size else 0.0
        worst = max(worst, err)
    return worst


# ==================== ADAM ====================

@dataclass
class AdamState:
    """Adam moments keyed by parameter name, plus schedule settings."""
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    warmup_steps: int = 400
    step: int = 0
    skipped_steps: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_config(cls, optim: Mapping[str, float]) -> 'AdamState':
        return cls(
            lr=float(optim.get('lr', 5e-4)),
            beta1=float(optim.get('beta1', 0.9)),
            beta2=float(optim.get('beta2', 0.98)),
            eps=float(optim.get('eps', 1e-9)),
            warmup_steps=int(optim.get('warmup_steps', 400)),
        )

    def effective_lr(self, step: int) -> float:
        """Linear warmup to ``lr`` then inverse square-root decay; constant without warmup."""
        if self.warmup_steps <= 0 or step <= 0:
            return self.lr
        return self.lr * min(step / self.warmup_steps, (self.warmup_steps / step) ** 0.5)

    def hyperparameters(self) -> Dict[str, float]:
        return {
            'lr': self.lr,
            'beta1': self.beta1,
            'beta2': self.beta2,
            'eps': self.eps,
            'warmup_steps': self.warmup_steps,
        }

    def to_dict(self) -> Dict:
        return {**self.hyperparameters(), 'step': self.step, 'skipped_steps': self.skipped_steps}

    def copy(self) -> 'AdamState':
        return AdamState(
            **self.hyperparameters(),
            step=self.step,
            skipped_steps=self.skipped_steps,
            first_moment={k: v.copy() for k, v in self.first_moment.items()},
            second_moment={k: v.copy() for k, v in self.second_moment.items()},
        )


def adam_step(
    params: Mapping[str, Tensor],
    grads: Optional[Mapping[str, np.ndarray]],
    state: AdamState
) -> bool:
    """
    One bias-corrected Adam update, in place.

    Args:
        params: Named parameters
        grads: Named gradients; None reads each parameter's ``grad``
        state: Moments and schedule, updated in place

    Returns:
        True if applied; False when a gradient was non-finite and the step
        was skipped
    """
    named_grads: Dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = grads[name] if grads is not None and name in grads else p.grad
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ShapeError(f"adam_step: gradient for {name} has shape {g.shape}, parameter {p.shape}")
        named_grads[name] = g

    for name, g in named_grads.items():
        if not np.all(np.isfinite(g)):
            state.skipped_steps += 1
            logger.warning(f"[NUMERICS] Non-finite gradient in {name}; skipping step {state.step + 1}")
            return False

    state.step += 1
    t = state.step
    lr = state.effective_lr(t)
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t

    for name, p in params.items():
        g = named_grads[name]
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None or m.shape != p.shape:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.first_moment[name] = m
        state.second_moment[name] = v
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        p.data -= update.astype(p.data.dtype, copy=False)
    return True


# ==================== CHECKPOINT ====================

def save_parameters(path: Union[str, Path], arrays: Mapping[str, np.ndarray]):
    """
    Write named arrays to one binary file.

    Layout: version byte, little-endian uint32 header length, UTF-8 JSON
    header ``[{name, shape, dtype}, ...]``, then each buffer in header order
    as little-endian row-major bytes.
    """
    header = []
    buffers = []
    for name, array in arrays.items():
        array = np.asarray(array)
        le = array.astype(array.dtype.newbyteorder('<'), copy=False)
        header.append({'name': name, 'shape': list(array.shape), 'dtype': le.dtype.str})
        buffers.append(np.ascontiguousarray(le).tobytes())

    encoded = json.dumps(header).encode('utf-8')
    filepath = Path(path)
    filepath.parent.mkdir(parents=True, exist_ok=True)
    with open(filepath, 'wb') as f:
        f.write(struct.pack('<B', CHECKPOINT_VERSION))
        f.write(struct.pack('<I', len(encoded)))
        f.write(encoded)
        for buf in buffers:
            f.write(buf)
    logger.debug(f"[NUMERICS] Saved {len(header)} arrays to {filepath}")


def load_parameters(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    """Read a file written by save_parameters, preserving name order."""
    filepath = Path(path)
    try:
        with open(filepath, 'rb') as f:
            content = f.read()
    except OSError as e:
        raise DataError(f"Cannot read checkpoint {filepath}: {e}")

    if len(content) < 5:
        raise DataError(f"Checkpoint {filepath} is truncated")
    version = content[0]
    if version != CHECKPOINT_VERSION:
        raise DataError(f"Checkpoint {filepath} has version {version}, expected {CHECKPOINT_VERSION}")
    (header_len,) = struct.unpack_from('<I', content, 1)
    offset = 5 + header_len
    try:
        header = json.loads(content[5:offset].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"Checkpoint {filepath} has a corrupt header: {e}")

    arrays: Dict[str, np.ndarray] = {}
    for entry in header:
        dtype = np.dtype(entry['dtype'])
        shape = tuple(entry['shape'])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if offset + nbytes > len(content):
            raise DataError(f"Checkpoint {filepath} ends inside tensor '{entry['name']}'")
        array = np.frombuffer(content, dtype=dtype, count=int(np.prod(shape, dtype=np.int64)), offset=offset)
        arrays[entry['name']] = array.reshape(shape).astype(dtype.newbyteorder('='))
        offset += nbytes
    return arrays
