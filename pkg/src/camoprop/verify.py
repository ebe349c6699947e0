"""Finite-difference verification suite over every differentiable op and
the composed forward passes (fusion, affinity, total loss).

Each check builds a scalar function whose gradient is informative for the
op under test (outputs are contracted against a fixed random projection so
softmax-style invariances cannot hide a wrong rule) and compares the tape
gradients against central differences at eps=1e-5.
"""

from __future__ import annotations

import numpy as np

from . import losses
from . import tensor as T
from .propagation import MemoryAffinity, PropagationConfig, TemporalFusion
from .stubs import MaskPrediction
from .tensor import GradcheckReport, Tensor, gradcheck

EPS = 1e-5
TOL = 1e-4


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.PCG64([seed, 0xC4EC]))


def _weighted_sum(w: np.ndarray):
    wt = Tensor(w)

    def reduce(out: Tensor) -> Tensor:
        return T.tsum(T.mul(out, wt))
    return reduce


# -- per-op checks -----------------------------------------------------


def check_matmul(seed: int) -> GradcheckReport:
    r = _rng(seed)
    a = Tensor(r.normal(size=(4, 5)))
    b = Tensor(r.normal(size=(5, 2)))
    red = _weighted_sum(r.normal(size=(4, 2)))
    return gradcheck(lambda x, y: red(T.matmul(x, y)), [a, b], EPS, TOL)


def check_softmax_rows(seed: int) -> GradcheckReport:
    r = _rng(seed)
    x = Tensor(r.normal(size=(3, 7)))
    red = _weighted_sum(r.normal(size=(3, 7)))
    return gradcheck(lambda t: red(T.softmax_rows(t)), [x], EPS, TOL)


def check_layer_norm(seed: int) -> GradcheckReport:
    r = _rng(seed)
    x = Tensor(r.normal(size=(2, 4, 8)))
    gain = Tensor(r.normal(1.0, 0.2, size=8))
    bias = Tensor(r.normal(0.0, 0.2, size=8))
    red = _weighted_sum(r.normal(size=(2, 4, 8)))
    return gradcheck(lambda a, g, b: red(T.layer_norm(a, g, b, 1e-5)),
                     [x, gain, bias], EPS, TOL)


def check_linear(seed: int) -> GradcheckReport:
    r = _rng(seed)
    x = Tensor(r.normal(size=(3, 4, 5)))
    w = Tensor(r.normal(size=(5, 6)))
    b = Tensor(r.normal(size=6))
    red = _weighted_sum(r.normal(size=(3, 4, 6)))
    return gradcheck(lambda a, ww, bb: red(T.linear(a, ww, bb)),
                     [x, w, b], EPS, TOL)


def check_concat(seed: int) -> GradcheckReport:
    r = _rng(seed)
    a = Tensor(r.normal(size=(2, 3)))
    b = Tensor(r.normal(size=(2, 5)))
    red = _weighted_sum(r.normal(size=(2, 8)))
    return gradcheck(lambda x, y: red(T.concat([x, y], axis=1)), [a, b], EPS, TOL)


def _elementwise_check(seed: int, fn, positive: bool = False,
                       shape=(3, 4)) -> GradcheckReport:
    r = _rng(seed)
    data = r.normal(size=shape)
    if positive:
        data = np.abs(data) + 0.5
    x = Tensor(data)
    red = _weighted_sum(r.normal(size=shape))
    return gradcheck(lambda t: red(fn(t)), [x], EPS, TOL)


def check_add(seed: int) -> GradcheckReport:
    r = _rng(seed)
    a = Tensor(r.normal(size=(3, 4)))
    b = Tensor(r.normal(size=(3, 4)))
    red = _weighted_sum(r.normal(size=(3, 4)))
    return gradcheck(lambda x, y: red(T.add(x, y)), [a, b], EPS, TOL)


def check_sub(seed: int) -> GradcheckReport:
    r = _rng(seed)
    a = Tensor(r.normal(size=(3, 4)))
    b = Tensor(r.normal(size=(3, 4)))
    red = _weighted_sum(r.normal(size=(3, 4)))
    return gradcheck(lambda x, y: red(T.sub(x, y)), [a, b], EPS, TOL)


def check_mul(seed: int) -> GradcheckReport:
    r = _rng(seed)
    a = Tensor(r.normal(size=(3, 4)))
    b = Tensor(r.normal(size=(3, 4)))
    red = _weighted_sum(r.normal(size=(3, 4)))
    return gradcheck(lambda x, y: red(T.mul(x, y)), [a, b], EPS, TOL)


def check_div(seed: int) -> GradcheckReport:
    r = _rng(seed)
    a = Tensor(r.normal(size=(3, 4)))
    b = Tensor(np.abs(r.normal(size=(3, 4))) + 1.0)
    red = _weighted_sum(r.normal(size=(3, 4)))
    return gradcheck(lambda x, y: red(T.div(x, y)), [a, b], EPS, TOL)


def check_scalar_broadcast(seed: int) -> GradcheckReport:
    r = _rng(seed)
    a = Tensor(r.normal(size=(3, 4)))
    s = Tensor(r.normal())
    red = _weighted_sum(r.normal(size=(3, 4)))
    return gradcheck(lambda x, y: red(T.mul(T.add(x, y), y)), [a, s], EPS, TOL)


def check_sigmoid(seed: int) -> GradcheckReport:
    return _elementwise_check(seed, T.sigmoid)


def check_gelu(seed: int) -> GradcheckReport:
    return _elementwise_check(seed, T.gelu)


def check_relu(seed: int) -> GradcheckReport:
    # keep values away from the kink, where finite differences are invalid
    r = _rng(seed)
    data = r.normal(size=(3, 4))
    data = np.where(np.abs(data) < 0.05, 0.5, data)
    x = Tensor(data)
    red = _weighted_sum(r.normal(size=(3, 4)))
    return gradcheck(lambda t: red(T.relu(t)), [x], EPS, TOL)


def check_softplus(seed: int) -> GradcheckReport:
    return _elementwise_check(seed, T.softplus)


def check_log(seed: int) -> GradcheckReport:
    return _elementwise_check(seed, T.log, positive=True)


def check_exp(seed: int) -> GradcheckReport:
    return _elementwise_check(seed, T.exp)


def check_pow_const(seed: int) -> GradcheckReport:
    return _elementwise_check(seed, lambda t: T.pow_const(t, 2.5), positive=True)


def check_scale_addc(seed: int) -> GradcheckReport:
    return _elementwise_check(seed, lambda t: T.add_const(T.scale(t, -1.7), 0.3))


def check_neg(seed: int) -> GradcheckReport:
    return _elementwise_check(seed, T.neg)


def check_sum(seed: int) -> GradcheckReport:
    r = _rng(seed)
    x = Tensor(r.normal(size=(3, 4)))
    return gradcheck(lambda t: T.tsum(t), [x], EPS, TOL)


def check_mean(seed: int) -> GradcheckReport:
    r = _rng(seed)
    x = Tensor(r.normal(size=(3, 4)))
    return gradcheck(lambda t: T.scale(T.tmean(t), 3.3), [x], EPS, TOL)


def check_reshape_transpose(seed: int) -> GradcheckReport:
    r = _rng(seed)
    x = Tensor(r.normal(size=(2, 3, 4)))
    red = _weighted_sum(r.normal(size=(4, 6)))

    def f(t):
        return red(T.reshape(T.transpose(t, (2, 0, 1)), (4, 6)))
    return gradcheck(f, [x], EPS, TOL)


# -- composed checks ---------------------------------------------------

_TINY = PropagationConfig(embed_dim=4, attn_dim=4, affinity_dim=4, grid=2)


def check_fusion_forward(seed: int) -> GradcheckReport:
    r = _rng(seed)
    fusion = TemporalFusion(_TINY, r)
    cur = Tensor(r.normal(size=(4, 2, 2)))
    mem_img = Tensor(r.normal(size=(2, 4, 2, 2)))
    mem_mask = Tensor(r.normal(size=(2, 4, 2, 2)))
    red = _weighted_sum(r.normal(size=(4, 2, 2)))
    params = list(fusion.named_params().values())

    def f(c, mi, mm, *_params):
        return red(fusion(c, mi, mm))
    return gradcheck(f, [cur, mem_img, mem_mask] + params, EPS, TOL)


def check_affinity_forward(seed: int) -> GradcheckReport:
    r = _rng(seed)
    affinity = MemoryAffinity(_TINY, r)
    cur = Tensor(r.normal(size=(4, 2, 2)))
    fused = Tensor(r.normal(size=(4, 2, 2)))
    mem_img = Tensor(r.normal(size=(2, 4, 2, 2)))
    mem_mask = Tensor(r.normal(size=(2, 4, 2, 2)))
    red = _weighted_sum(r.normal(size=(4, 2, 2)))
    params = list(affinity.named_params().values())

    def f(c, fu, mi, mm, *_params):
        return red(affinity(c, fu, mi, mm))
    return gradcheck(f, [cur, fused, mem_img, mem_mask] + params, EPS, TOL)


def check_total_loss(seed: int) -> GradcheckReport:
    r = _rng(seed)
    logits_data = r.normal(scale=2.0, size=(5, 5))
    # keep logits away from the IoU binarization threshold so the detached
    # reference IoU is locally constant under the probe perturbations
    logits_data = np.where(np.abs(logits_data) < 0.05, 0.4, logits_data)
    target = (r.random(size=(5, 5)) > 0.6).astype(np.float64)
    logits = Tensor(logits_data)
    iou_pred_raw = Tensor(r.normal())

    def f(lg, ip):
        pred = MaskPrediction(logits=lg, iou_pred=T.sigmoid(ip))
        return losses.total_loss(pred, target)
    return gradcheck(f, [logits, iou_pred_raw], EPS, TOL)


OP_CHECKS = {
    "matmul": check_matmul,
    "softmax_rows": check_softmax_rows,
    "layer_norm": check_layer_norm,
    "linear": check_linear,
    "concat": check_concat,
    "add": check_add,
    "sub": check_sub,
    "mul": check_mul,
    "div": check_div,
    "scalar_broadcast": check_scalar_broadcast,
    "sigmoid": check_sigmoid,
    "gelu": check_gelu,
    "relu": check_relu,
    "softplus": check_softplus,
    "log": check_log,
    "exp": check_exp,
    "pow_const": check_pow_const,
    "scale_add_const": check_scale_addc,
    "neg": check_neg,
    "sum": check_sum,
    "mean": check_mean,
    "reshape_transpose": check_reshape_transpose,
    "fusion_forward": check_fusion_forward,
    "affinity_forward": check_affinity_forward,
    "total_loss": check_total_loss,
}


def run_suite(seeds: range | list[int] = range(5)) -> dict[str, float]:
    """Worst relative error per check across seeds."""
    worst: dict[str, float] = {}
    for name, fn in OP_CHECKS.items():
        errs = [fn(seed).max_rel_err for seed in seeds]
        worst[name] = max(errs)
    return worst
