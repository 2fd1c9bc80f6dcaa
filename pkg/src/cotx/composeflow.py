"""Extended map composition for scalar responses.

Maps are z-dependent rigid translations T(x, z) = x + U(z) and test functions
are affine in y, g(y, z) = V(z) y + W(z). Nonlinear z-dependence comes from
iterating the composition function

    F(a, z, v, u) = (a1_0 + a1_1:L . z + a1_{L+1} u) + (a2_0 + a2_1:L . z + a2_{L+1} u) v

with per-sample accumulators updated as

    v' = F(beta, z, v, u),   w' = F(eta, z, w, 0),   u' = F(alpha, z, u, v)

all from the previous (u, v, w). The map increment of a step is u'.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import DataError, DimensionError


@dataclass(frozen=True, eq=False)
class ComposeCoeffs:
    a1: np.ndarray
    a2: np.ndarray

    def __post_init__(self):
        a1 = np.asarray(self.a1, dtype=np.float64).reshape(-1)
        a2 = np.asarray(self.a2, dtype=np.float64).reshape(-1)
        if a1.shape != a2.shape or a1.size < 2:
            raise DimensionError("a1 and a2 must both have length L + 2")
        if not (np.all(np.isfinite(a1)) and np.all(np.isfinite(a2))):
            raise DataError("composition coefficients must be finite")
        object.__setattr__(self, "a1", a1)
        object.__setattr__(self, "a2", a2)

    @property
    def L(self) -> int:
        return self.a1.size - 2

    @classmethod
    def zeros(cls, L: int) -> "ComposeCoeffs":
        return cls(np.zeros(L + 2), np.zeros(L + 2))

    @classmethod
    def carry(cls, L: int) -> "ComposeCoeffs":
        """Coefficients with a2_0 = 1: F returns its third argument unchanged."""
        a2 = np.zeros(L + 2)
        a2[0] = 1.0
        return cls(np.zeros(L + 2), a2)

    def arrays(self) -> dict:
        return {"a1": self.a1, "a2": self.a2}

    def updated(self, arrays: dict) -> "ComposeCoeffs":
        return ComposeCoeffs(arrays["a1"], arrays["a2"])


def _zmatrix(z, L: int) -> np.ndarray:
    Z = np.asarray(z, dtype=np.float64)
    if Z.ndim <= 1:
        Z = Z.reshape(1, -1) if Z.size else np.zeros((1, 0))
    if Z.shape[1] != L:
        raise DimensionError(f"covariates have {Z.shape[1]} columns, coefficients expect L = {L}")
    return Z


def _features(Z: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Rows [1, z_1..z_L, u]: the bracket features of F."""
    return np.hstack([np.ones((Z.shape[0], 1)), Z, u.reshape(-1, 1)])


def compose_f(c: ComposeCoeffs, z, v, u):
    Z = _zmatrix(z, c.L)
    n = Z.shape[0]
    v = np.broadcast_to(np.asarray(v, dtype=np.float64), (n,)) if np.ndim(v) == 0 else np.asarray(v, dtype=np.float64)
    u = np.broadcast_to(np.asarray(u, dtype=np.float64), (n,)) if np.ndim(u) == 0 else np.asarray(u, dtype=np.float64)
    if v.shape != (n,) or u.shape != (n,):
        raise DimensionError("v and u must have one entry per covariate row")
    phi = _features(Z, u)
    out = phi @ c.a1 + (phi @ c.a2) * v
    return float(out[0]) if np.ndim(z) <= 1 else out


@dataclass(frozen=True, eq=False)
class ComposeFlowState:
    alpha: ComposeCoeffs
    beta: ComposeCoeffs
    eta: ComposeCoeffs
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    step: int = 0

    def __post_init__(self):
        for name in ("u", "v", "w"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1)
            object.__setattr__(self, name, arr)
        if not (self.u.shape == self.v.shape == self.w.shape):
            raise DimensionError("u, v, w must have the same length")
        if not (self.alpha.L == self.beta.L == self.eta.L):
            raise DimensionError("coefficient blocks disagree on L")

    @property
    def L(self) -> int:
        return self.alpha.L

    @classmethod
    def initial(cls, n: int, L: int) -> "ComposeFlowState":
        zero = np.zeros(n)
        return cls(ComposeCoeffs.zeros(L), ComposeCoeffs.carry(L), ComposeCoeffs.carry(L),
                   zero, zero.copy(), zero.copy(), 0)

    def fresh_step(self) -> "ComposeFlowState":
        """Reset the per-step coefficients: alpha = 0, beta and eta carry v and w forward."""
        L = self.L
        return replace(self, alpha=ComposeCoeffs.zeros(L), beta=ComposeCoeffs.carry(L),
                       eta=ComposeCoeffs.carry(L))

    def select(self, idx) -> "ComposeFlowState":
        return replace(self, u=self.u[idx], v=self.v[idx], w=self.w[idx])


def _check(state: ComposeFlowState, Z) -> np.ndarray:
    Z = _zmatrix(Z, state.L)
    if Z.shape[0] != state.u.shape[0]:
        raise DimensionError(f"state tracks {state.u.shape[0]} samples, got {Z.shape[0]} covariate rows")
    return Z


def step_values(state: ComposeFlowState, Z) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(u', v', w') computed from the current coefficients and the old accumulators."""
    Z = _check(state, Z)
    zero = np.zeros_like(state.u)
    v_new = compose_f(state.beta, Z, state.v, state.u)
    w_new = compose_f(state.eta, Z, state.w, zero)
    u_new = compose_f(state.alpha, Z, state.u, state.v)
    return u_new, v_new, w_new


def advance(state: ComposeFlowState, Z) -> ComposeFlowState:
    u_new, v_new, w_new = step_values(state, Z)
    return replace(state, u=u_new, v=v_new, w=w_new, step=state.step + 1)


def eval_map(state: ComposeFlowState, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape != state.u.shape:
        raise DimensionError(f"{x.size} points for {state.u.size} accumulators")
    return x + state.u


def eval_test(state: ComposeFlowState, y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape != state.v.shape:
        raise DimensionError(f"{y.size} points for {state.v.size} accumulators")
    return state.v * y + state.w


def coeff_gradient(state: ComposeFlowState, Z, du=None, dv=None, dw=None) -> tuple[dict, dict, dict]:
    """One-step gradients of sum(du*u' + dv*v' + dw*w') w.r.t. alpha, beta and eta.

    The old accumulators are constants here; no gradient flows into past steps.
    """
    Z = _check(state, Z)
    n = Z.shape[0]

    def signal(s):
        if s is None:
            return np.zeros(n)
        s = np.asarray(s, dtype=np.float64).reshape(-1)
        if s.shape != (n,):
            raise DimensionError(f"downstream signal has {s.size} entries, expected {n}")
        return s

    du, dv, dw = signal(du), signal(dv), signal(dw)

    def grad(mult, inner, sig):
        phi = _features(Z, inner)
        return {"a1": phi.T @ sig, "a2": phi.T @ (sig * mult)}

    return (grad(state.u, state.v, du),
            grad(state.v, state.u, dv),
            grad(state.w, np.zeros(n), dw))


@dataclass(frozen=True, eq=False)
class ComposeLayer:
    """One fitted step of a composeflow map, replayable on new covariates.

    Evaluation threads the (u, v) accumulators through consecutive layers; w
    never feeds back into the map and is not replayed.
    """

    alpha: ComposeCoeffs
    beta: ComposeCoeffs
    eta: ComposeCoeffs

    kind = "composeflow"

    @property
    def dims(self) -> tuple[int, int]:
        return 1, self.alpha.L

    def apply(self, x, z, carry):
        n = x.shape[0]
        u, v = carry if carry is not None else (np.zeros(n), np.zeros(n))
        u_new = compose_f(self.alpha, z, u, v)
        v_new = compose_f(self.beta, z, v, u)
        return x + u_new[:, None], (u_new, v_new)

    def to_params(self) -> dict:
        return {
            "L": self.alpha.L,
            "alpha_a1": self.alpha.a1.tolist(), "alpha_a2": self.alpha.a2.tolist(),
            "beta_a1": self.beta.a1.tolist(), "beta_a2": self.beta.a2.tolist(),
            "eta_a1": self.eta.a1.tolist(), "eta_a2": self.eta.a2.tolist(),
        }

    @classmethod
    def from_params(cls, params: dict, dims) -> "ComposeLayer":
        try:
            layer = cls(ComposeCoeffs(params["alpha_a1"], params["alpha_a2"]),
                        ComposeCoeffs(params["beta_a1"], params["beta_a2"]),
                        ComposeCoeffs(params["eta_a1"], params["eta_a2"]))
        except KeyError as exc:
            raise DataError(f"malformed composeflow layer: missing {exc}") from None
        if int(params.get("L", layer.alpha.L)) != layer.alpha.L or layer.dims != tuple(dims):
            raise DimensionError(f"composeflow layer dims {layer.dims} differ from map dims {tuple(dims)}")
        return layer
