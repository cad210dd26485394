"""Parameterized layers, losses and the Adam optimizer."""

from __future__ import annotations

import contextlib
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, InvalidArgumentError, OptimizerError, VocabularyError

logger = logging.getLogger(__name__)

LEAKY_SLOPE = 0.2
BN_EPS = 1e-5
BN_MOMENTUM = 0.9


class Parameter:
    """A named trainable tensor."""

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = Tensor(np.array(value, dtype=np.float64), requires_grad=True)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def grad(self) -> Optional[np.ndarray]:
        return self.value.grad

    def zero_grad(self) -> None:
        self.value.grad = None

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


class Module:
    """Container of parameters, buffers and child modules.

    Parameter paths are dotted (``encoders.text.lstm.W_ih``). Buffers hold
    non-trainable state that must survive a checkpoint, such as running
    statistics.
    """

    def __init__(self) -> None:
        self.training = True
        self._parameters: Dict[str, Parameter] = {}
        self._buffers: Dict[str, np.ndarray] = {}
        self._modules: Dict[str, "Module"] = {}

    def add_parameter(self, name: str, value: np.ndarray) -> Parameter:
        if name in self._parameters or name in self._modules:
            raise InvalidArgumentError(f"duplicate parameter name '{name}'")
        param = Parameter(name, value)
        self._parameters[name] = param
        return param

    def add_module(self, name: str, module: "Module") -> "Module":
        if name in self._parameters or name in self._modules:
            raise InvalidArgumentError(f"duplicate module name '{name}'")
        self._modules[name] = module
        for path, param in module.named_parameters(f"{name}."):
            param.name = path
        return module

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = np.array(value, dtype=np.float64)

    def buffer(self, name: str) -> np.ndarray:
        return self._buffers[name]

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        if name not in self._buffers:
            raise InvalidArgumentError(f"unknown buffer '{name}'")
        self._buffers[name] = np.array(value, dtype=np.float64)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, param in self._parameters.items():
            yield prefix + name, param
        for name, module in self._modules.items():
            yield from module.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, "Module", str]]:
        for name in self._buffers:
            yield prefix + name, self, name
        for child_name, module in self._modules.items():
            yield from module.named_buffers(f"{prefix}{child_name}.")

    def parameters(self) -> List[Parameter]:
        return [param for _, param in self.named_parameters()]

    def bind_names(self) -> None:
        """Store each parameter's full dotted path in ``Parameter.name``."""
        for name, param in self.named_parameters():
            param.name = name

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for module in self._modules.values():
            module.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {name: param.value.data.copy() for name, param in self.named_parameters()}
        for name, owner, key in self.named_buffers():
            state[name] = owner.buffer(key).copy()
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        expected = dict(self.named_parameters())
        buffers = {name: (owner, key) for name, owner, key in self.named_buffers()}
        missing = (set(expected) | set(buffers)) - set(state)
        if missing:
            raise InvalidArgumentError(f"state is missing entries: {sorted(missing)}")
        for name, param in expected.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != param.shape:
                raise DimensionError(
                    f"parameter '{name}' has shape {param.shape}, state holds {value.shape}"
                )
            param.value.data = value.copy()
        for name, (owner, key) in buffers.items():
            owner.set_buffer(key, state[name])


@contextlib.contextmanager
def frozen(module: Module) -> Iterator[None]:
    """Temporarily stop a module's parameters from collecting gradients."""
    params = module.parameters()
    flags = [p.value.requires_grad for p in params]
    for p in params:
        p.value.requires_grad = False
    try:
        yield
    finally:
        for p, flag in zip(params, flags):
            p.value.requires_grad = flag


def count_parameters(network: Module) -> int:
    return int(np.sum([p.value.size for p in network.parameters()], dtype=np.int64))


def uniform_init(rng: np.random.Generator, fan_in: int, shape: Tuple[int, ...]) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


# affine

def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise DimensionError(f"affine: input {x.shape} does not match weight {weight.shape}")
    if bias.shape != (weight.shape[1],):
        raise DimensionError(f"affine: bias {bias.shape} does not match weight {weight.shape}")
    return ad.matmul(x, weight) + bias


class Affine(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = self.add_parameter("W", uniform_init(rng, in_features, (in_features, out_features)))
        self.bias = self.add_parameter("b", np.zeros(out_features))

    def __call__(self, x: Tensor) -> Tensor:
        return affine(x, self.weight.value, self.bias.value)


class Embedding(Module):
    def __init__(self, num_embeddings: int, dim: int, rng: np.random.Generator):
        super().__init__()
        self.num_embeddings = num_embeddings
        self.dim = dim
        self.table = self.add_parameter("E", rng.normal(0.0, 1.0 / np.sqrt(dim), size=(num_embeddings, dim)))

    def __call__(self, ids: np.ndarray) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.num_embeddings):
            raise VocabularyError(
                f"token id out of range [0, {self.num_embeddings}): min {ids.min()}, max {ids.max()}"
            )
        return ad.take_rows(self.table.value, ids)


# recurrent cell

@dataclass
class LSTMParams:
    w_ih: Tensor
    w_hh: Tensor
    bias: Tensor


def lstm_step(x_t: Tensor, h: Tensor, c: Tensor, params: LSTMParams) -> Tuple[Tensor, Tensor]:
    """One LSTM step with gate layout (i, f, g, o) along the last axis."""
    hidden = h.shape[1]
    if params.w_ih.shape != (x_t.shape[1], 4 * hidden) or params.w_hh.shape != (hidden, 4 * hidden):
        raise DimensionError(
            f"lstm_step: x {x_t.shape}, h {h.shape} incompatible with "
            f"W_ih {params.w_ih.shape}, W_hh {params.w_hh.shape}"
        )
    if c.shape != h.shape or x_t.shape[0] != h.shape[0]:
        raise DimensionError(f"lstm_step: x {x_t.shape}, h {h.shape}, c {c.shape} disagree")
    gates = ad.matmul(x_t, params.w_ih) + ad.matmul(h, params.w_hh) + params.bias
    i = ad.sigmoid(ad.narrow(gates, 0, hidden, axis=1))
    f = ad.sigmoid(ad.narrow(gates, hidden, hidden, axis=1))
    g = ad.tanh(ad.narrow(gates, 2 * hidden, hidden, axis=1))
    o = ad.sigmoid(ad.narrow(gates, 3 * hidden, hidden, axis=1))
    c_next = f * c + i * g
    h_next = o * ad.tanh(c_next)
    return h_next, c_next


class LSTMCell(Module):
    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        super().__init__()
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.w_ih = self.add_parameter("W_ih", uniform_init(rng, hidden_size, (input_size, 4 * hidden_size)))
        self.w_hh = self.add_parameter("W_hh", uniform_init(rng, hidden_size, (hidden_size, 4 * hidden_size)))
        bias = np.zeros(4 * hidden_size)
        bias[hidden_size:2 * hidden_size] = 1.0
        self.bias = self.add_parameter("b", bias)

    @property
    def params(self) -> LSTMParams:
        return LSTMParams(self.w_ih.value, self.w_hh.value, self.bias.value)

    def initial_state(self, batch: int) -> Tuple[Tensor, Tensor]:
        zeros = np.zeros((batch, self.hidden_size))
        return Tensor(zeros), Tensor(zeros.copy())

    def __call__(self, x_t: Tensor, h: Tensor, c: Tensor) -> Tuple[Tensor, Tensor]:
        return lstm_step(x_t, h, c, self.params)


# normalization and regularization

def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, training: bool,
               running_mean: np.ndarray, running_var: np.ndarray) -> Tuple[Tensor, np.ndarray, np.ndarray]:
    """Normalize over the batch axis; returns the output and the updated running statistics."""
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise DimensionError(f"batch_norm: input {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    if not training:
        scale = 1.0 / np.sqrt(running_var + BN_EPS)
        return (x - running_mean) * scale * gamma + beta, running_mean, running_var
    if x.shape[0] < 2:
        raise DimensionError(f"batch_norm: train mode needs at least 2 samples, got {x.shape[0]}")
    mu = ad.mean(x, axis=0, keepdims=True)
    centered = x - mu
    var = ad.mean(centered * centered, axis=0, keepdims=True)
    normalized = centered * ad.power(var + BN_EPS, -0.5)
    new_mean = BN_MOMENTUM * running_mean + (1.0 - BN_MOMENTUM) * mu.data[0]
    new_var = BN_MOMENTUM * running_var + (1.0 - BN_MOMENTUM) * var.data[0]
    return normalized * gamma + beta, new_mean, new_var


class BatchNorm(Module):
    def __init__(self, dim: int):
        super().__init__()
        self.gamma = self.add_parameter("gamma", np.ones(dim))
        self.beta = self.add_parameter("beta", np.zeros(dim))
        self.register_buffer("running_mean", np.zeros(dim))
        self.register_buffer("running_var", np.ones(dim))

    def __call__(self, x: Tensor) -> Tensor:
        out, new_mean, new_var = batch_norm(
            x, self.gamma.value, self.beta.value, self.training,
            self.buffer("running_mean"), self.buffer("running_var"),
        )
        if self.training and ad.is_grad_enabled():
            self.set_buffer("running_mean", new_mean)
            self.set_buffer("running_var", new_var)
        return out


def dropout(x: Tensor, p: float, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout; identity in eval mode or for p == 0."""
    if not 0.0 <= p < 1.0:
        raise InvalidArgumentError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise InvalidArgumentError("dropout in train mode needs a random generator")
    keep = (rng.random(x.shape) >= p).astype(np.float64) / (1.0 - p)
    return x * keep


# losses

def softmax_cross_entropy(logits: Tensor, targets: Sequence[int],
                          ignore_index: Optional[int] = None) -> Tensor:
    """Mean negative log-likelihood over targets that are not ``ignore_index``."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise DimensionError(f"cross entropy: logits {logits.shape} vs targets {targets.shape}")
    valid = np.ones_like(targets, dtype=bool) if ignore_index is None else targets != ignore_index
    vocab = logits.shape[1]
    if np.any((targets[valid] < 0) | (targets[valid] >= vocab)):
        raise InvalidArgumentError(f"cross entropy: target outside [0, {vocab})")
    count = int(valid.sum())
    if count == 0:
        return ad.make_result("cross_entropy", np.array(0.0), (logits,),
                              lambda g: (np.zeros_like(logits.data),))

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.nonzero(valid)[0]
    loss = -log_probs[rows, targets[rows]].sum() / count

    def rule(g: np.ndarray) -> Tuple[np.ndarray]:
        grad = np.exp(log_probs)
        grad[rows, targets[rows]] -= 1.0
        grad[~valid] = 0.0
        return (grad * (g / count),)

    return ad.make_result("cross_entropy", np.array(loss), (logits,), rule)


def multiclass_hinge(logits: Tensor, targets: Sequence[int], margin: float = 1.0) -> Tensor:
    """Mean over samples of sum_{j != y} max(0, margin + s_j - s_y)."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise DimensionError(f"hinge: logits {logits.shape} vs targets {targets.shape}")
    if np.any((targets < 0) | (targets >= logits.shape[1])):
        raise InvalidArgumentError(f"hinge: target outside [0, {logits.shape[1]})")
    onehot = np.eye(logits.shape[1])[targets]
    correct = ad.sum(logits * onehot, axis=1, keepdims=True)
    violations = ad.leaky_relu(logits - correct + margin, alpha=0.0) * (1.0 - onehot)
    return ad.mean(ad.sum(violations, axis=1))


# optimizer

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[Parameter], state: AdamState) -> None:
    """Bias-corrected Adam update. Gradients are left in place."""
    names = [param.name for param in params]
    if len(set(names)) != len(names):
        raise OptimizerError("adam_step: duplicate parameter names")
    for param in params:
        if param.grad is None:
            raise OptimizerError(f"parameter '{param.name}' has no gradient")
    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for param in params:
        grad = param.grad
        m = state.m.get(param.name, np.zeros_like(grad))
        v = state.v.get(param.name, np.zeros_like(grad))
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.m[param.name] = m
        state.v[param.name] = v
        update = state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        param.value.data = param.value.data - update


class Adam:
    def __init__(self, params: Sequence[Parameter], lr: float = 1e-3,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise InvalidArgumentError("Adam: parameter names must be unique")
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def step(self) -> None:
        adam_step(self.params, self.state)

    def zero_grad(self) -> None:
        for param in self.params:
            param.zero_grad()
