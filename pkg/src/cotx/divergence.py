"""Donsker-Varadhan estimation of KL divergence from samples.

    KL(rho || mu) = sup_g  E_rho[g] - log E_mu[exp g]

applied jointly on (x, z) rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import gaussflow as gf
from .core import ConditionedDataset, DimensionError, DivergenceError, NumericalError, fit_scaling

DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class DVObjectiveValue:
    mean_g_source: float
    log_mean_exp_target: float
    value: float

    def to_json(self) -> dict:
        return {"mean_g_source": self.mean_g_source,
                "log_mean_exp_target": self.log_mean_exp_target,
                "value": self.value}


def log_mean_exp(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=np.float64)
    top = float(values.max())
    return top + math.log(float(np.mean(np.exp(values - top))))


def softmax_weights(values: np.ndarray) -> np.ndarray:
    """Gradient of log_mean_exp with respect to each value."""
    e = np.exp(values - values.max())
    return e / e.sum()


def dv_value(g_source: np.ndarray, g_target: np.ndarray) -> DVObjectiveValue:
    if not (np.all(np.isfinite(g_source)) and np.all(np.isfinite(g_target))):
        raise NumericalError("test function is not finite on every sample")
    mean_g = float(np.mean(g_source))
    lme = log_mean_exp(g_target)
    return DVObjectiveValue(mean_g, lme, mean_g - lme)


def dv_objective(g: Callable, source: ConditionedDataset, target: ConditionedDataset) -> DVObjectiveValue:
    """Evaluate the DV functional for a vectorized test function ``g(points, covariates)``."""
    if source.dims != target.dims:
        raise DimensionError(f"source dims {source.dims} differ from target dims {target.dims}")
    gs = np.asarray(g(source.points, source.covariates), dtype=np.float64).reshape(-1)
    gt = np.asarray(g(target.points, target.covariates), dtype=np.float64).reshape(-1)
    return dv_value(gs, gt)


# ---------------------------------------------------------------- gradient ascent


@dataclass(frozen=True)
class AscentConfig:
    step: float = 1.0
    iterations: int = 100
    n_centers: int | None = None
    seed: int = 0
    min_step: float = 1e-8


def ascend(value_and_grad, params, step: float, iterations: int, min_step: float = 1e-8):
    """Full-batch gradient ascent with best-iterate tracking.

    ``value_and_grad(params)`` returns ``(value, gradient dict)``. A step that
    fails to improve the value is rejected and the step size halved for the
    rest of the run. Parameter blocks may rescale the step per group through
    ``step_scales()`` (a fixed diagonal preconditioner) or map the gradient
    to a search direction through ``precondition(grads)``. Returns (best
    params, best value).
    """
    best = params
    scales = params.step_scales() if hasattr(params, "step_scales") else {}
    best_val, grads = value_and_grad(params)
    for _ in range(iterations):
        if step < min_step:
            break
        arrays = best.arrays()
        direction = best.precondition(grads) if hasattr(best, "precondition") else grads
        cand = best.updated({k: arrays[k] + (step * scales.get(k, 1.0)) * direction[k] for k in direction})
        try:
            val, cand_grads = value_and_grad(cand)
        except DivergenceError:
            raise
        except (NumericalError, FloatingPointError):
            val = -math.inf
        if val > best_val:
            best, best_val, grads = cand, val, cand_grads
        else:
            step *= 0.5
    return best, best_val


def dv_test_value_and_grad(q: gf.GaussTestParams, src_y, src_z, tgt_y, tgt_z):
    """DV functional of the gaussflow test function and its parameter gradient."""
    ks = gf.kernel_matrix(src_y, src_z, q.centers_x, q.centers_z, q.d)
    kt = gf.kernel_matrix(tgt_y, tgt_z, q.centers_x, q.centers_z, q.d)
    g_s = gf.test_function(q, src_y, src_z, gg=ks)
    g_t = gf.test_function(q, tgt_y, tgt_z, gg=kt)
    obj = dv_value(g_s, g_t)
    n = src_y.shape[0]
    gs = gf.test_param_gradient(q, src_y, src_z, np.full(n, 1.0 / n), gg=ks)
    gt = gf.test_param_gradient(q, tgt_y, tgt_z, -softmax_weights(g_t), gg=kt)
    return obj, {k: gs[k] + gt[k] for k in gs}


def dv_test_value(q: gf.GaussTestParams, src_y, src_z, tgt_y, tgt_z) -> DVObjectiveValue:
    return dv_value(gf.test_function(q, src_y, src_z), gf.test_function(q, tgt_y, tgt_z))


@dataclass(frozen=True)
class KLEstimate:
    value: float
    objective: DVObjectiveValue
    test_params: gf.GaussTestParams | None = None

    @property
    def negative(self) -> bool:
        return self.value < 0

    def __float__(self):
        return self.value

    def to_json(self) -> dict:
        doc = self.objective.to_json()
        doc.update(estimate=self.value, negative=self.negative)
        return doc


def estimate_kl(source: ConditionedDataset, target: ConditionedDataset,
                cfg: AscentConfig = AscentConfig(), test: gf.GaussTestParams | None = None) -> KLEstimate:
    """Maximize the DV functional over the gaussflow test family.

    Both samples are mapped by one pooled affine standardization first; KL is
    invariant under it. Ascent starts from g = 0 (value 0) unless ``test`` is
    given, and never accepts a worse iterate, so the result is at least the
    starting value. Finite samples can still make the true KL estimate
    negative; ``KLEstimate.negative`` flags that.
    """
    if source.dims != target.dims:
        raise DimensionError(f"source dims {source.dims} differ from target dims {target.dims}")
    dx = source.dims[0]
    pooled = np.vstack([source.joint(), target.joint()])
    scaling = fit_scaling(pooled, pooled.std(axis=0) > 0)
    S = scaling.apply(source.joint())
    T = scaling.apply(target.joint())
    sy, sz, ty, tz = S[:, :dx], S[:, dx:], T[:, :dx], T[:, dx:]
    std_target = ConditionedDataset(ty, tz)

    if test is None:
        K = min(cfg.n_centers or gf.default_centers(target.n), target.n)
        _, test = gf.init_params(K, source.dims, std_target, rng=np.random.default_rng(cfg.seed))

    def value_and_grad(q):
        obj, grad = dv_test_value_and_grad(q, sy, sz, ty, tz)
        if obj.value > DIVERGENCE_LIMIT:
            raise DivergenceError(f"DV ascent diverged (value {obj.value:.3g})")
        return obj.value, grad

    q, _ = ascend(value_and_grad, test, cfg.step, cfg.iterations, cfg.min_step)
    obj = dv_test_value(q, sy, sz, ty, tz)
    return KLEstimate(obj.value, obj, q)
