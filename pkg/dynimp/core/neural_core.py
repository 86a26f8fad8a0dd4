"""
Dense and LSTM kernels with hand-derived gradients, a central-difference
gradient checker and an Adam optimizer, all on float64 numpy arrays.

LSTM gates (per step, element-wise products written *):

    I_t  = sigmoid(w_i x_t + u_i h_{t-1} + b_i)      input gate
    F_t  = sigmoid(w_g x_t + u_g h_{t-1} + b_g)      forget gate
    C~_t = tanh   (w_c x_t + u_c h_{t-1} + b_c)      candidate
    Y_t  = sigmoid(w_o x_t + u_o h_{t-1} + b_o)      output gate
    c_t  = c_{t-1} * F_t + C~_t * I_t
    h_t  = Y_t * tanh(c_t)

Every kernel accepts a single vector (D,) or a batch (B, D); sequences are
(T, D) or (B, T, D) with time on the second-to-last axis.
"""
from dataclasses import dataclass, field, fields
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, Field
from scipy.special import expit

from dynimp.exceptions import GradCheckError, NonDeterministicClosureError, ShapeMismatchError

ParamDict = Dict[str, np.ndarray]

GATES = ("i", "g", "c", "o")
FORGET_BIAS = 1.0


def _outer_sum(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """sum over leading axes of a[..., :, None] * b[..., None, :]"""
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])


@dataclass
class LstmParams:
    w_i: np.ndarray
    w_g: np.ndarray
    w_c: np.ndarray
    w_o: np.ndarray
    u_i: np.ndarray
    u_g: np.ndarray
    u_c: np.ndarray
    u_o: np.ndarray
    b_i: np.ndarray
    b_g: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray

    def __post_init__(self):
        hidden, inputs = self.w_i.shape
        for gate in GATES:
            if getattr(self, f"w_{gate}").shape != (hidden, inputs):
                raise ShapeMismatchError(f"w_{gate} is not {hidden}x{inputs}")
            if getattr(self, f"u_{gate}").shape != (hidden, hidden):
                raise ShapeMismatchError(f"u_{gate} is not {hidden}x{hidden}")
            if getattr(self, f"b_{gate}").shape != (hidden,):
                raise ShapeMismatchError(f"b_{gate} is not of length {hidden}")

    @property
    def hidden_size(self) -> int:
        return self.w_i.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_i.shape[1]

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int) -> "LstmParams":
        shapes = {"w": (hidden_size, input_size), "u": (hidden_size, hidden_size), "b": (hidden_size,)}
        return cls(**{f"{kind}_{gate}": np.zeros(shape) for kind, shape in shapes.items() for gate in GATES})

    @classmethod
    def initialize(cls, input_size: int, hidden_size: int, rng: np.random.Generator) -> "LstmParams":
        """Uniform(+-1/sqrt(fan_in)) weights, zero biases except the forget gate at 1."""
        bound = 1.0 / np.sqrt(input_size + hidden_size)
        params = cls.zeros(input_size, hidden_size)
        for gate in GATES:
            setattr(params, f"w_{gate}", rng.uniform(-bound, bound, (hidden_size, input_size)))
            setattr(params, f"u_{gate}", rng.uniform(-bound, bound, (hidden_size, hidden_size)))
        params.b_g = np.full(hidden_size, FORGET_BIAS)
        return params

    def named(self, prefix: str = "") -> ParamDict:
        return {f"{prefix}{f.name}": getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_named(cls, named: ParamDict, prefix: str = "") -> "LstmParams":
        return cls(**{f.name: named[f"{prefix}{f.name}"] for f in fields(cls)})


@dataclass
class DenseParams:
    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ShapeMismatchError(f"dense weight {self.W.shape} and bias {self.b.shape} disagree")

    @classmethod
    def zeros(cls, input_size: int, output_size: int) -> "DenseParams":
        return cls(np.zeros((output_size, input_size)), np.zeros(output_size))

    @classmethod
    def initialize(cls, input_size: int, output_size: int, rng: np.random.Generator) -> "DenseParams":
        bound = 1.0 / np.sqrt(input_size)
        return cls(rng.uniform(-bound, bound, (output_size, input_size)), np.zeros(output_size))

    def named(self, prefix: str = "") -> ParamDict:
        return {f"{prefix}W": self.W, f"{prefix}b": self.b}

    @classmethod
    def from_named(cls, named: ParamDict, prefix: str = "") -> "DenseParams":
        return cls(named[f"{prefix}W"], named[f"{prefix}b"])


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden_size: int, batch_shape: Tuple[int, ...] = ()) -> "LstmState":
        return cls(np.zeros(batch_shape + (hidden_size,)), np.zeros(batch_shape + (hidden_size,)))


@dataclass
class GateCache:
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    g: np.ndarray
    c_hat: np.ndarray
    o: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray


def lstm_cell_forward(params: LstmParams, x_t: np.ndarray, prev: LstmState) -> Tuple[LstmState, GateCache]:
    if x_t.shape[-1] != params.input_size:
        raise ShapeMismatchError(f"input has {x_t.shape[-1]} features, cell expects {params.input_size}")
    if prev.h.shape[-1] != params.hidden_size or prev.c.shape != prev.h.shape:
        raise ShapeMismatchError(f"state {prev.h.shape}/{prev.c.shape} does not match hidden size {params.hidden_size}")

    def pre(gate: str) -> np.ndarray:
        return (x_t @ getattr(params, f"w_{gate}").T + prev.h @ getattr(params, f"u_{gate}").T
                + getattr(params, f"b_{gate}"))

    i = expit(pre("i"))
    g = expit(pre("g"))
    c_hat = np.tanh(pre("c"))
    o = expit(pre("o"))
    c = prev.c * g + c_hat * i
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return LstmState(h, c), GateCache(x_t, prev.h, prev.c, i, g, c_hat, o, c, tanh_c)


def lstm_sequence_forward(
    params: LstmParams, xs: np.ndarray, init: Optional[LstmState] = None
) -> Tuple[np.ndarray, List[GateCache], LstmState]:
    """Runs the cell over the time axis; returns hidden states, caches and the final state."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim < 2 or xs.shape[-2] < 1:
        raise ShapeMismatchError(f"sequence of shape {xs.shape} has no time axis")
    state = init or LstmState.zeros(params.hidden_size, xs.shape[:-2])
    caches: List[GateCache] = []
    hs = []
    for t in range(xs.shape[-2]):
        state, cache = lstm_cell_forward(params, xs[..., t, :], state)
        caches.append(cache)
        hs.append(state.h)
    return np.stack(hs, axis=-2), caches, state


def lstm_backward(
    params: LstmParams, caches: Sequence[GateCache], dhs: np.ndarray
) -> Tuple[LstmParams, np.ndarray]:
    """Backpropagation through time.

    `dhs` holds dL/dh_t for every step (same layout as the forward hidden
    states). Returns parameter gradients and dL/dx_t for every step.
    """
    if dhs.shape[-2] != len(caches) or dhs.shape[-1] != params.hidden_size:
        raise ShapeMismatchError(f"upstream gradient {dhs.shape} does not match {len(caches)} cached steps")
    grads = LstmParams.zeros(params.input_size, params.hidden_size)
    dxs = np.zeros(dhs.shape[:-1] + (params.input_size,))
    dh_next = np.zeros_like(dhs[..., 0, :])
    dc_next = np.zeros_like(dh_next)
    for t in reversed(range(len(caches))):
        cache = caches[t]
        dh = dhs[..., t, :] + dh_next
        do = dh * cache.tanh_c
        dc = dc_next + dh * cache.o * (1.0 - cache.tanh_c ** 2)
        pre_grads = {
            "i": dc * cache.c_hat * cache.i * (1.0 - cache.i),
            "g": dc * cache.c_prev * cache.g * (1.0 - cache.g),
            "c": dc * cache.i * (1.0 - cache.c_hat ** 2),
            "o": do * cache.o * (1.0 - cache.o),
        }
        dx = np.zeros_like(cache.x)
        dh_prev = np.zeros_like(dh)
        for gate, da in pre_grads.items():
            w, u = getattr(params, f"w_{gate}"), getattr(params, f"u_{gate}")
            setattr(grads, f"w_{gate}", getattr(grads, f"w_{gate}") + _outer_sum(da, cache.x))
            setattr(grads, f"u_{gate}", getattr(grads, f"u_{gate}") + _outer_sum(da, cache.h_prev))
            setattr(grads, f"b_{gate}", getattr(grads, f"b_{gate}") + da.reshape(-1, params.hidden_size).sum(axis=0))
            dx = dx + da @ w
            dh_prev = dh_prev + da @ u
        dxs[..., t, :] = dx
        dh_next = dh_prev
        dc_next = dc * cache.g
    return grads, dxs


ACTIVATIONS: Dict[str, Tuple[Callable[[np.ndarray], np.ndarray], Callable[[np.ndarray], np.ndarray]]] = {
    # name -> (function, derivative expressed through the output)
    "identity": (lambda a: a, lambda y: np.ones_like(y)),
    "sigmoid": (expit, lambda y: y * (1.0 - y)),
    "tanh": (np.tanh, lambda y: 1.0 - y * y),
}


@dataclass
class DenseCache:
    x: np.ndarray
    y: np.ndarray
    activation: str


def dense_forward(params: DenseParams, x: np.ndarray, activation: str = "identity") -> Tuple[np.ndarray, DenseCache]:
    if x.shape[-1] != params.W.shape[1]:
        raise ShapeMismatchError(f"input has {x.shape[-1]} features, layer expects {params.W.shape[1]}")
    fn, _ = ACTIVATIONS[activation]
    y = fn(x @ params.W.T + params.b)
    return y, DenseCache(x, y, activation)


def dense_backward(params: DenseParams, cache: DenseCache, dy: np.ndarray) -> Tuple[DenseParams, np.ndarray]:
    if dy.shape != cache.y.shape:
        raise ShapeMismatchError(f"upstream gradient {dy.shape} does not match output {cache.y.shape}")
    _, derivative = ACTIVATIONS[cache.activation]
    da = dy * derivative(cache.y)
    grads = DenseParams(_outer_sum(da, cache.x), da.reshape(-1, params.W.shape[0]).sum(axis=0))
    return grads, da @ params.W


@dataclass(frozen=True)
class GradCheckEntry:
    name: str
    index: Tuple[int, ...]
    analytic: float
    numeric: float
    rel_error: float


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    checked: int
    tolerance: float
    worst: List[GradCheckEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


LossClosure = Callable[[ParamDict], Tuple[float, ParamDict]]


def grad_check(
    closure: LossClosure,
    params: ParamDict,
    epsilon: float = 1e-5,
    tolerance: float = 1e-4,
    samples: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    floor: float = 1e-6,
    report_worst: int = 5,
) -> GradCheckReport:
    """Compares analytic gradients against central differences.

    `closure(params)` returns (loss, gradients). The relative error of an
    entry is |a - n| / max(|a|, |n|, floor). With `samples`, that many
    entries are drawn at random instead of checking all of them.
    """
    if epsilon <= 0.0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    loss, grads = closure(params)
    repeat, _ = closure(params)
    if loss != repeat:
        raise NonDeterministicClosureError(f"closure returned {loss!r} then {repeat!r} for identical parameters")
    missing = set(params) - set(grads)
    if missing:
        raise GradCheckError(f"closure returned no gradient for {sorted(missing)}")

    entries = [(name, idx) for name in sorted(params) for idx in np.ndindex(params[name].shape)]
    if samples is not None and samples < len(entries):
        rng = rng or np.random.default_rng(0)
        picked = rng.choice(len(entries), size=samples, replace=False)
        entries = [entries[i] for i in sorted(picked)]

    results: List[GradCheckEntry] = []
    for name, idx in entries:
        original = params[name]
        shifted = dict(params)
        bumped = original.copy()
        bumped[idx] = original[idx] + epsilon
        shifted[name] = bumped
        loss_plus, _ = closure(shifted)
        bumped = original.copy()
        bumped[idx] = original[idx] - epsilon
        shifted[name] = bumped
        loss_minus, _ = closure(shifted)
        numeric = (loss_plus - loss_minus) / (2.0 * epsilon)
        analytic = float(grads[name][idx])
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        results.append(GradCheckEntry(name, tuple(int(i) for i in idx), analytic, numeric, rel))

    results.sort(key=lambda e: e.rel_error, reverse=True)
    report = GradCheckReport(
        max_rel_error=results[0].rel_error if results else 0.0,
        checked=len(results),
        tolerance=tolerance,
        worst=results[:report_worst],
    )
    logger.debug(f"Gradient check over {report.checked} entries: max relative error {report.max_rel_error:.3e}")
    return report


class AdamConfig(BaseModel):
    lr: float = Field(1e-3, gt=0.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)


@dataclass
class AdamState:
    m: ParamDict
    v: ParamDict
    step: int = 0

    @classmethod
    def zeros_like(cls, params: ParamDict) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(
    params: ParamDict, grads: ParamDict, state: AdamState, hyper: AdamConfig
) -> Tuple[ParamDict, AdamState]:
    """One bias-corrected Adam update; inputs are left untouched."""
    if set(params) != set(grads):
        raise ShapeMismatchError(f"gradient names {sorted(grads)} do not match parameters {sorted(params)}")
    step = state.step + 1
    new_params, m, v = {}, {}, {}
    correction1 = 1.0 - hyper.beta1 ** step
    correction2 = 1.0 - hyper.beta2 ** step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeMismatchError(f"gradient of {name} has shape {g.shape}, parameter {p.shape}")
        m[name] = hyper.beta1 * state.m[name] + (1.0 - hyper.beta1) * g
        v[name] = hyper.beta2 * state.v[name] + (1.0 - hyper.beta2) * g * g
        m_hat = m[name] / correction1
        v_hat = v[name] / correction2
        new_params[name] = p - hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.eps)
    return new_params, AdamState(m, v, step)


def clip_global_norm(grads: ParamDict, max_norm: float) -> Tuple[ParamDict, float]:
    """Rescales all gradients together so their joint L2 norm is at most max_norm."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if norm <= max_norm or norm == 0.0:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm
