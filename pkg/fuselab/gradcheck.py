"""Central finite-difference gradient checks for ops and composed layers."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoders import LatentBundle
from .fusion import AutoFusionNet, autofuse
from .gan_fusion import GanFusionModule, discriminator_loss, gan_forward, generator_loss
from .heads import AttentiveDecoder, decode_step
from .layers import LSTMParams, Module, affine, batch_norm, lstm_step, softmax_cross_entropy
from .state import Modality

logger = logging.getLogger(__name__)

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4
ABSOLUTE_FLOOR = 1e-7

TensorFn = Callable[[List[Tensor]], Tensor]


@dataclass
class GradcheckResult:
    name: str
    max_rel_error: float
    passed: bool
    trials: int = 0


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(|a|, |n|); entries closer than 1e-7 count as exact."""
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    errors = np.where(diff < ABSOLUTE_FLOOR, 0.0, diff / np.where(scale > 0, scale, 1.0))
    return float(errors.max()) if errors.size else 0.0


def check_gradients(fn: TensorFn, arrays: Sequence[np.ndarray], rng: np.random.Generator,
                    h: float = DEFAULT_STEP) -> float:
    """Compare backward() against central differences of sum(fn(x) * R) for a random R."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    ad.reset_graph()
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(tensors)
    weights = rng.normal(size=out.shape)
    ad.backward(ad.sum(out * weights))
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    def objective(values: List[np.ndarray]) -> float:
        with ad.no_grad():
            return float(np.sum(fn([Tensor(v) for v in values]).data * weights))

    worst = 0.0
    for k, base in enumerate(arrays):
        numeric = np.zeros_like(base)
        for index in np.ndindex(base.shape):
            shifted = [a.copy() for a in arrays]
            shifted[k][index] = base[index] + h
            plus = objective(shifted)
            shifted[k][index] = base[index] - h
            minus = objective(shifted)
            numeric[index] = (plus - minus) / (2.0 * h)
        worst = max(worst, relative_error(analytic[k], numeric))
    return worst


def module_fn(module: Module, params: Sequence[str], body: Callable[[List[Tensor]], Tensor],
              n_inputs: int) -> TensorFn:
    """Treat named module parameters as extra inputs of ``body``."""
    lookup = dict(module.named_parameters())

    def fn(tensors: List[Tensor]) -> Tensor:
        for name, tensor in zip(params, tensors[n_inputs:]):
            lookup[name].value = tensor
        return body(tensors[:n_inputs])

    return fn


def _away_from_zero(x: np.ndarray, margin: float = 0.1) -> np.ndarray:
    return x + np.where(x >= 0, margin, -margin)


# case builders: rng -> (fn, arrays)

CaseBuilder = Callable[[np.random.Generator], Tuple[TensorFn, List[np.ndarray]]]


def _binary(op: Callable) -> CaseBuilder:
    def build(rng):
        return (lambda t: op(t[0], t[1])), [rng.normal(size=(3, 4)), rng.normal(size=(4,))]
    return build


def _unary(op: Callable, transform: Callable[[np.ndarray], np.ndarray] = lambda x: x) -> CaseBuilder:
    def build(rng):
        return (lambda t: op(t[0])), [transform(rng.normal(size=(3, 4)))]
    return build


def _div(rng):
    return (lambda t: ad.div(t[0], t[1])), [rng.normal(size=(3, 4)), _away_from_zero(rng.normal(size=(3, 4)), 0.5)]


def _matmul(rng):
    return (lambda t: ad.matmul(t[0], t[1])), [rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 4, 5))]


def _concat(rng):
    return (lambda t: ad.concat(t, axis=1)), [rng.normal(size=(3, 2)), rng.normal(size=(3, 4))]


def _softmax(rng):
    mask = np.ones((3, 5), dtype=bool)
    mask[:, 3:] = rng.random((3, 2)) < 0.5
    return (lambda t: ad.softmax(t[0], axis=1, mask=mask)), [rng.normal(size=(3, 5))]


def _max(rng):
    return (lambda t: ad.max(t[0], axis=1)), [rng.normal(size=(3, 5))]


def _clamp(rng):
    x = rng.uniform(-2.0, 2.0, size=(3, 4))
    x = np.where(np.abs(np.abs(x) - 1.0) < 0.05, x * 1.2, x)
    return (lambda t: ad.clamp(t[0], -1.0, 1.0)), [x]


def _cross_entropy(rng):
    targets = rng.integers(0, 5, size=4)
    targets[0] = 0
    return (lambda t: softmax_cross_entropy(t[0], targets, ignore_index=0)), [rng.normal(size=(4, 5))]


def _affine(rng):
    return (lambda t: affine(t[0], t[1], t[2])), [
        rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=(2,)),
    ]


def _lstm(rng):
    hidden = 3

    def fn(t):
        h, c = lstm_step(t[0], t[1], t[2], LSTMParams(t[3], t[4], t[5]))
        return ad.concat([h, c], axis=1)

    return fn, [
        rng.normal(size=(2, 4)), rng.normal(size=(2, hidden)), rng.normal(size=(2, hidden)),
        0.5 * rng.normal(size=(4, 4 * hidden)), 0.5 * rng.normal(size=(hidden, 4 * hidden)),
        rng.normal(size=(4 * hidden,)),
    ]


def _batch_norm(rng):
    running = (np.zeros(3), np.ones(3))

    def fn(t):
        out, _, _ = batch_norm(t[0], t[1], t[2], True, *running)
        return out

    return fn, [5.0 * rng.normal(size=(6, 3)), rng.normal(size=(3,)), rng.normal(size=(3,))]


def _attention_step(rng):
    decoder = AttentiveDecoder(7, 4, 5, 3, 6, rng, attention=True)
    params = [name for name, _ in decoder.named_parameters() if name != "embedding.E"]
    prev = rng.integers(0, 7, size=2)
    mask = np.array([[True, True, True, False], [True, True, False, False]])

    def body(t):
        step = decode_step(decoder, prev, t[0], t[1], t[2], t[3], mask)
        return ad.concat([step.logits, step.h], axis=1)

    arrays = [rng.normal(size=(2, 5)), rng.normal(size=(2, 5)), rng.normal(size=(2, 3)),
              rng.normal(size=(2, 4, 6))]
    arrays += [p.value.data.copy() for name, p in decoder.named_parameters() if name in params]
    return module_fn(decoder, params, body, 4), arrays


def _autofuse(rng):
    net = AutoFusionNet([3, 4], 5, rng)
    params = [name for name, _ in net.named_parameters()]

    def body(t):
        out = autofuse(net, t)
        return ad.concat([ad.reshape(out.z_fuse, (-1,)), ad.reshape(out.j_fusion, (1,))], axis=0)

    arrays = [rng.normal(size=(4, 3)), rng.normal(size=(4, 4))]
    arrays += [p.value.data.copy() for _, p in net.named_parameters()]
    return module_fn(net, params, body, 2), arrays


def _gan_parts(rng):
    dims = {Modality.VIDEO: 3, Modality.SPEECH: 4, Modality.TEXT: 5}
    module = GanFusionModule(Modality.TEXT, [Modality.VIDEO, Modality.SPEECH], dims, 4, 2, 3, rng)
    latents = [rng.normal(size=(4, 3)), rng.normal(size=(4, 4)), rng.normal(size=(4, 5))]
    noise_seed = int(rng.integers(0, 2 ** 31))

    def forward(t):
        bundle = LatentBundle(
            {Modality.VIDEO: t[0], Modality.SPEECH: t[1], Modality.TEXT: t[2]},
            text_states=ad.reshape(t[2], (4, 1, 5)), text_mask=np.ones((4, 1), dtype=bool),
        )
        return gan_forward(module, bundle, np.random.default_rng(noise_seed), 0.5)

    return module, latents, forward


def _gan_generator(rng):
    module, latents, forward = _gan_parts(rng)
    named = [(name, p) for name, p in module.named_parameters() if not name.startswith("D.")]

    def body(t):
        out = forward(t)
        return ad.reshape(generator_loss(module, out.z_g) + out.j_reconstruction, (1,))

    arrays = latents + [p.value.data.copy() for _, p in named]
    return module_fn(module, [name for name, _ in named], body, 3), arrays


def _gan_discriminator(rng):
    module, latents, forward = _gan_parts(rng)
    with ad.no_grad():
        out = forward([Tensor(x) for x in latents])
    named = [(name, p) for name, p in module.named_parameters() if name.startswith("D.")]

    def body(t):
        return ad.reshape(discriminator_loss(module, out.z_tr, out.z_g), (1,))

    arrays = [p.value.data.copy() for _, p in named]
    return module_fn(module, [name for name, _ in named], body, 0), arrays


CASES: Dict[str, CaseBuilder] = {
    "add": _binary(ad.add),
    "sub": _binary(ad.sub),
    "mul": _binary(ad.mul),
    "div": _div,
    "power": _unary(lambda a: ad.power(a, 3.0)),
    "tanh": _unary(ad.tanh),
    "sigmoid": _unary(ad.sigmoid),
    "leaky_relu": _unary(ad.leaky_relu, _away_from_zero),
    "exp": _unary(ad.exp),
    "log": _unary(ad.log, lambda x: np.abs(x) + 0.5),
    "clamp": _clamp,
    "matmul": _matmul,
    "concat": _concat,
    "sum": _unary(lambda a: ad.sum(a, axis=0)),
    "mean": _unary(lambda a: ad.mean(a, axis=1, keepdims=True)),
    "max": _max,
    "softmax": _softmax,
    "log_softmax": _unary(lambda a: ad.log_softmax(a, axis=1)),
    "cross_entropy": _cross_entropy,
    "affine": _affine,
    "lstm_step": _lstm,
    "batch_norm": _batch_norm,
    "attention_step": _attention_step,
    "autofuse": _autofuse,
    "gan_generator": _gan_generator,
    "gan_discriminator": _gan_discriminator,
}


def run_gradcheck(names: Optional[Sequence[str]] = None, trials: int = 10, seed: int = 0,
                  tolerance: float = DEFAULT_TOLERANCE) -> List[GradcheckResult]:
    """Run each named case ``trials`` times with fresh random inputs."""
    results = []
    for name in names or sorted(CASES):
        if name not in CASES:
            raise KeyError(f"unknown gradcheck case '{name}'")
        worst = 0.0
        for trial in range(trials):
            rng = np.random.default_rng([seed, trial, len(name)])
            fn, arrays = CASES[name](rng)
            worst = max(worst, check_gradients(fn, arrays, rng))
        result = GradcheckResult(name, worst, worst < tolerance, trials)
        logger.info(f"gradcheck {name}: max relative error {worst:.2e} ({'ok' if result.passed else 'FAIL'})")
        results.append(result)
    return results
