"""Adversarial fitting of conditional transport maps.

Each outer step raises the penalty weight, lets the test function climb the
Donsker-Varadhan functional against the current images of the source, then
fits a fresh elementary map (started at the identity) by descent on

    mean c(T(x_i, z_i), x_i) + lam * mean g(T(x_i, z_i), z_i)

and composes it onto the map. The log-mean-exp target term of the sample
objective does not depend on T and drops out of the descent.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import composeflow as cf
from . import gaussflow as gf
from .core import (CONTINUOUS, ComposedMap, ConditionedDataset, DataError, DimensionError,
                   DivergenceError, NumericalError, ScalingParams, fit_scaling, fmt,
                   quadratic_cost_rows)
from .divergence import (AscentConfig, DVObjectiveValue, ascend, dv_test_value_and_grad,
                         dv_value, estimate_kl, softmax_weights)

FAMILIES = ("gaussflow", "composeflow")
OBJECTIVE_LIMIT = 1e9
# largest per-sample move of one elementary map (standardized units). For
# gaussflow the descent objective is unbounded below when g has negative
# curvature; for composeflow its minimizer sits near x - lam * v, which runs
# away once lam is large and the test slope v has not yet shrunk
MAX_DISPLACEMENT = 1.0


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MinimaxConfig:
    lambda0: float = 1.0
    lambda_growth: float = 1.05
    lambda_max: float = 1e4
    outer_steps: int = 300
    inner_ascent_steps: int = 10
    inner_descent_steps: int = 5
    step_g: float = 1.0
    step_T: float = 0.05
    kl_tolerance: float = 1e-3
    seed: int = 0
    # not tied to the loop structure above; defaults chosen for this package
    n_centers: int | None = None
    kl_check_every: int = 50
    kl_iterations: int = 50
    standardize: bool = True
    delta: float = 0.5
    # train the multiplicative (a2) composeflow coefficients too; off by
    # default because products of z terms compound across layers
    compose_multiplicative: bool = False

    def __post_init__(self):
        if not self.lambda0 > 0:
            raise ConfigError("lambda0 must be positive")
        if not self.lambda_growth >= 1:
            raise ConfigError("lambda_growth must be at least 1")
        if not self.lambda_max >= self.lambda0:
            raise ConfigError("lambda_max must be at least lambda0")
        for name in ("outer_steps", "inner_ascent_steps", "inner_descent_steps", "kl_check_every",
                     "kl_iterations"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if not (self.step_g > 0 and self.step_T > 0):
            raise ConfigError("step sizes must be positive")
        if not self.kl_tolerance >= 0:
            raise ConfigError("kl_tolerance must be nonnegative")
        if self.n_centers is not None and int(self.n_centers) < 1:
            raise ConfigError("n_centers must be at least 1")
        if not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)")

    @classmethod
    def from_dict(cls, doc: dict) -> "MinimaxConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class StepRecord:
    step: int
    lam: float
    cost_term: float
    dv_term: float
    objective: float
    kl_estimate: float = math.nan


@dataclass
class FitDiagnostics:
    records: list[StepRecord] = field(default_factory=list)
    final_kl_estimate: float = math.nan
    stopped_early: bool = False

    COLUMNS = ("step", "lambda", "cost_term", "dv_term", "objective", "kl_estimate")

    def rows(self):
        for r in self.records:
            yield [r.step, r.lam, r.cost_term, r.dv_term, r.objective, r.kl_estimate]

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for row in self.rows():
                w.writerow([row[0]] + [fmt(v) for v in row[1:]])


def lambda_at(step: int, cfg: MinimaxConfig) -> float:
    if step < 0:
        raise ValueError("step must be nonnegative")
    # log-space comparison avoids overflow of growth**step
    if step * math.log(cfg.lambda_growth) >= math.log(cfg.lambda_max / cfg.lambda0):
        return float(cfg.lambda_max)
    return min(cfg.lambda0 * cfg.lambda_growth ** step, cfg.lambda_max)


def sample_objective(images, g: Callable, source: ConditionedDataset, target: ConditionedDataset,
                     lam: float) -> tuple[float, float, float]:
    """(objective, cost term, DV term) of the sample minimax objective.

    ``images`` are T(x_i, z_i) for the source rows and ``g(points, covariates)``
    is a vectorized test function.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    images = np.asarray(images, dtype=np.float64).reshape(source.points.shape)
    cost = float(np.mean(quadratic_cost_rows(images, source.points)))
    gs = np.asarray(g(images, source.covariates), dtype=np.float64).reshape(-1)
    gt = np.asarray(g(target.points, target.covariates), dtype=np.float64).reshape(-1)
    dv = dv_value(gs, gt).value
    obj = cost + lam * dv
    if not math.isfinite(obj):
        raise NumericalError("sample objective is not finite")
    return obj, cost, dv


# ---------------------------------------------------------------- fitting sessions


class _Block:
    """Named arrays stepped by ``ascend``; entries where ``mask`` is false stay put."""

    def __init__(self, arrays: dict, mask: dict | None = None):
        self._arrays = arrays
        self.mask = mask

    def arrays(self) -> dict:
        return self._arrays

    def updated(self, arrays: dict) -> "_Block":
        return _Block(dict(arrays), self.mask)

    def __getitem__(self, key):
        return self._arrays[key]

    def precondition(self, grads: dict) -> dict:
        if self.mask is None:
            return grads
        return {k: grads[k] * self.mask[k] for k in grads}


def _compose_mask(L: int, names, multiplicative: bool) -> dict:
    """Trainable entries: every a1, and a2 only when ``multiplicative``."""
    out = {}
    for name in names:
        out[name + "a1"] = np.ones(L + 2)
        out[name + "a2"] = np.full(L + 2, 1.0 if multiplicative else 0.0)
    return out


def _descend(value_and_grad, params, step, iterations):
    def negated(p):
        val, grad = value_and_grad(p)
        return -val, {k: -v for k, v in grad.items()}

    best, val = ascend(negated, params, step, iterations)
    return best, -val


class _GaussSession:
    def __init__(self, x0, z, y, zy, cfg: MinimaxConfig, rng):
        self.x0, self.z, self.y, self.zy, self.cfg = x0, z, y, zy, cfg
        self.x = x0.copy()
        target = ConditionedDataset(y, zy)
        K = min(cfg.n_centers or gf.default_centers(target.n), target.n)
        _, self.q = gf.init_params(K, (x0.shape[1], z.shape[1]), target, rng=rng, delta=cfg.delta)

    def ascent(self) -> float:
        q, val = ascend(lambda q: self._dv(q), self.q, self.cfg.step_g, self.cfg.inner_ascent_steps)
        self.q = q
        return val

    def _dv(self, q):
        obj, grad = dv_test_value_and_grad(q, self.x, self.z, self.y, self.zy)
        return obj.value, grad

    def descent(self, lam: float):
        """Gradient descent on a fresh elementary map started at the identity.

        The objective is divided by (1 + lam) so one step size serves the
        whole lambda schedule. Steps that break convexity or move a sample
        further than MAX_DISPLACEMENT count as rejected.
        """
        q, x, x0, z, n = self.q, self.x, self.x0, self.z, self.x.shape[0]
        p0 = gf.identity_map_params(q.centers_x, q.centers_z, q.d, self.cfg.delta)
        norm = 1.0 / (1.0 + lam)
        # the map's centers are frozen during descent, so its kernel is too
        gx = gf.kernel_matrix(x, z, p0.centers_x, p0.centers_z, p0.d)

        def value_and_grad(p):
            if gf.convexity_margin(p) < 0:
                raise NumericalError("step leaves the convex cone")
            e = gf.elementary_map(p, x, z, gg=gx)
            if not np.max(np.abs(e - x)) <= MAX_DISPLACEMENT:
                raise NumericalError("step moves a sample too far")
            ge = gf.kernel_matrix(e, z, q.centers_x, q.centers_z, q.d)
            cost = 0.5 * np.sum((e - x0) ** 2) / n
            val = (cost + lam * np.mean(gf.test_function(q, e, z, gg=ge))) * norm
            r = ((e - x0) + lam * gf.test_grad_y(q, e, z, gg=ge)) * (norm / n)
            return val, gf.map_param_gradient(p, x, z, r, gg=gx)

        p, _ = _descend(value_and_grad, p0, self.cfg.step_T, self.cfg.inner_descent_steps)
        self.x = gf.elementary_map(p, x, z, gg=gx)
        return p

    def test_values(self):
        return gf.test_function(self.q, self.x, self.z), gf.test_function(self.q, self.y, self.zy)


class _ComposeSession:
    def __init__(self, x0, z, y, zy, cfg: MinimaxConfig, rng):
        if x0.shape[1] != 1:
            raise DimensionError("composeflow maps need a scalar response (d_x = 1)")
        self.x0, self.y, self.cfg = x0[:, 0], y[:, 0], cfg
        self.x = self.x0.copy()
        self.n = x0.shape[0]
        self.zall = np.vstack([z, zy])
        self.state = cf.ComposeFlowState.initial(self.zall.shape[0], z.shape[1])

    def _test_state(self, blk):
        return replace(self.state, beta=cf.ComposeCoeffs(blk["beta_a1"], blk["beta_a2"]),
                       eta=cf.ComposeCoeffs(blk["eta_a1"], blk["eta_a2"]))

    def ascent(self) -> float:
        self.state = self.state.fresh_step()
        st = self.state
        n, x, y = self.n, self.x, self.y
        blk = _Block({"beta_a1": st.beta.a1, "beta_a2": st.beta.a2,
                      "eta_a1": st.eta.a1, "eta_a2": st.eta.a2},
                     _compose_mask(st.L, ("beta_", "eta_"), self.cfg.compose_multiplicative))

        def value_and_grad(b):
            s = self._test_state(b)
            _, v_new, w_new = cf.step_values(s, self.zall)
            gs = v_new[:n] * x + w_new[:n]
            gt = v_new[n:] * y + w_new[n:]
            obj = dv_value(gs, gt)
            p = softmax_weights(gt)
            dv = np.concatenate([x / n, -p * y])
            dw = np.concatenate([np.full(n, 1.0 / n), -p])
            _, gb, ge = cf.coeff_gradient(s, self.zall, dv=dv, dw=dw)
            return obj.value, {"beta_a1": gb["a1"], "beta_a2": gb["a2"],
                               "eta_a1": ge["a1"], "eta_a2": ge["a2"]}

        blk, val = ascend(value_and_grad, blk, self.cfg.step_g, self.cfg.inner_ascent_steps)
        self.state = self._test_state(blk)
        _, self.v_new, self.w_new = cf.step_values(self.state, self.zall)
        return val

    def descent(self, lam: float):
        n, x, x0 = self.n, self.x, self.x0
        v_src, w_src = self.v_new[:n], self.w_new[:n]
        norm = 1.0 / (1.0 + lam)
        L = self.state.L
        blk = _Block({"a1": np.zeros(L + 2), "a2": np.zeros(L + 2)},
                     _compose_mask(L, ("",), self.cfg.compose_multiplicative))
        pad = np.zeros(self.zall.shape[0] - n)

        def value_and_grad(b):
            s = replace(self.state, alpha=cf.ComposeCoeffs(b["a1"], b["a2"]))
            u_new = cf.step_values(s, self.zall)[0][:n]
            if not np.max(np.abs(u_new)) <= MAX_DISPLACEMENT:
                raise NumericalError("step moves a sample too far")
            t = x + u_new
            val = (0.5 * np.mean((t - x0) ** 2) + lam * np.mean(v_src * t + w_src)) * norm
            r = ((t - x0) + lam * v_src) * (norm / n)
            ga, _, _ = cf.coeff_gradient(s, self.zall, du=np.concatenate([r, pad]))
            return val, ga

        blk, _ = _descend(value_and_grad, blk, self.cfg.step_T, self.cfg.inner_descent_steps)
        self.state = replace(self.state, alpha=cf.ComposeCoeffs(blk["a1"], blk["a2"]))
        layer = cf.ComposeLayer(self.state.alpha, self.state.beta, self.state.eta)
        self.state = cf.advance(self.state, self.zall)
        self.x = x + self.state.u[:n]
        return layer

    def test_values(self):
        n = self.n
        return self.state.v[:n] * self.x + self.state.w[:n], self.state.v[n:] * self.y + self.state.w[n:]

    @property
    def images(self):
        return self.x[:, None]


def _images(session) -> np.ndarray:
    return session.images if isinstance(session, _ComposeSession) else session.x


def _scalings(source: ConditionedDataset, target: ConditionedDataset, standardize: bool):
    dx, dz = source.dims
    if not standardize:
        return ScalingParams.identity(dx), ScalingParams.identity(dz)
    pooled_x = np.vstack([source.points, target.points])
    pooled_z = np.vstack([source.covariates, target.covariates])
    sel_x = pooled_x.std(axis=0) > 0
    sel_z = np.array([k == CONTINUOUS for k in source.covariate_kinds], bool) & (pooled_z.std(axis=0) > 0)
    return fit_scaling(pooled_x, sel_x), fit_scaling(pooled_z, sel_z)


def fit(source: ConditionedDataset, target: ConditionedDataset, family: str = "gaussflow",
        cfg: MinimaxConfig = MinimaxConfig(), log: Callable[[StepRecord], None] | None = None
        ) -> tuple[ComposedMap, FitDiagnostics]:
    """Fit a conditional transport map from ``source`` to ``target``."""
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")
    if source.dims != target.dims:
        raise DimensionError(f"source dims {source.dims} differ from target dims {target.dims}")
    if family == "composeflow" and source.dims[0] != 1:
        raise DimensionError("composeflow maps need a scalar response (d_x = 1)")

    sx, sz = _scalings(source, target, cfg.standardize)
    x0, z = sx.apply(source.points), sz.apply(source.covariates)
    y, zy = sx.apply(target.points), sz.apply(target.covariates)
    rng = np.random.default_rng(cfg.seed)
    session_cls = _GaussSession if family == "gaussflow" else _ComposeSession
    session = session_cls(x0, z, y, zy, cfg, rng)

    tmap = ComposedMap(source.dims, [], (sx, sz) if cfg.standardize else None)
    diag = FitDiagnostics()
    std_target = ConditionedDataset(y, zy)
    kl_cfg = AscentConfig(step=1.0, iterations=cfg.kl_iterations, n_centers=cfg.n_centers, seed=cfg.seed)

    def kl_now() -> float:
        pushed = ConditionedDataset(_images(session), z)
        return estimate_kl(pushed, std_target, kl_cfg).value

    for step in range(cfg.outer_steps):
        kl = math.nan
        if step % cfg.kl_check_every == 0:
            kl = kl_now()
            if kl < cfg.kl_tolerance:
                diag.stopped_early = True
                diag.final_kl_estimate = kl
                break
        lam = lambda_at(step, cfg)
        session.ascent()
        layer = session.descent(lam)
        tmap.append(layer)

        gs, gt = session.test_values()
        cost = float(np.mean(quadratic_cost_rows(_images(session), x0)))
        dv = dv_value(gs, gt).value
        obj = cost + lam * dv
        rec = StepRecord(step, lam, cost, dv, obj, kl)
        diag.records.append(rec)
        if log is not None:
            log(rec)
        if not math.isfinite(obj) or abs(obj) > OBJECTIVE_LIMIT:
            raise DivergenceError(f"objective diverged at step {step} (value {obj!r})", diag)
    else:
        diag.final_kl_estimate = kl_now()
    return tmap, diag


def fit_unconditional(source: ConditionedDataset, target: ConditionedDataset, family: str = "gaussflow",
                      cfg: MinimaxConfig = MinimaxConfig(), log=None) -> tuple[ComposedMap, FitDiagnostics]:
    """Plain transport between the responses, ignoring any covariates."""
    return fit(source.drop_covariates(), target.drop_covariates(), family, cfg, log)
