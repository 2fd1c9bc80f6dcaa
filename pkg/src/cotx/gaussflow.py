"""Evolving Gaussian mixture flows.

Each elementary map is the x-gradient of a potential

    Phi(x, z) = (c0 + C1^T z) . x + 1/2 x^T C2(z) x
                + sum_i a_i^2 (|x|^2 / (4 d^2) - G(z, mz_i) G(x, m_i))
                + sum_i b_i^2 (|x|^2 / (4 d^2) + G(z, mz_i) G(x, m_i))

with C2(z) = C20^T C20 + (C21 . z)^2 I and G the RBF kernel of bandwidth d.
The matching test function is an RBF expansion plus a z-modulated quadratic
in y whose centers move during ascent. Map centers are frozen copies of the
test-function centers from the previous step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial.distance import pdist

from .core import ConditionedDataset, DataError, DimensionError

# max eigenvalue of the Hessian of G is KAPPA / d^2, reached at |x - m|^2 = 3 d^2
KAPPA = 2.0 * math.exp(-1.5)
# pdist beyond this many rows runs on an evenly spaced row subsample
MAX_PDIST_ROWS = 6000
MAX_DEFAULT_CENTERS = 25


def rbf(x, m, d: float) -> float:
    """exp(-|x - m|^2 / (2 d^2))"""
    if not d > 0:
        raise ValueError("bandwidth must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    m = np.atleast_1d(np.asarray(m, dtype=np.float64))
    if x.shape != m.shape:
        raise DimensionError(f"rbf arguments differ in shape: {x.shape} vs {m.shape}")
    diff = x - m
    return math.exp(-float(diff @ diff) / (2.0 * d * d))


def _sqdist(a: np.ndarray, m: np.ndarray) -> np.ndarray:
    # |a|^2 - 2 a.m + |m|^2 keeps the work in one matrix product; clipped at 0 against cancellation
    sq = a @ m.T
    sq *= -2.0
    sq += np.einsum("nd,nd->n", a, a)[:, None]
    sq += np.einsum("kd,kd->k", m, m)[None, :]
    return np.maximum(sq, 0.0, out=sq)


def kernel_matrix(x, z, centers_x, centers_z, d: float) -> np.ndarray:
    """n x K matrix of G(z_n, mz_k) G(x_n, m_k)."""
    if centers_z.shape[1]:
        arg = _sqdist(np.hstack([x, z]), np.hstack([centers_x, centers_z]))
    else:
        arg = _sqdist(x, centers_x)
    arg *= -0.5 / (d * d)
    # far-away pairs would underflow to subnormals, which exp handles very slowly
    far = arg < -700.0
    np.maximum(arg, -700.0, out=arg)
    out = np.exp(arg, out=arg)
    out[far] = 0.0
    return out


def select_bandwidth(target: ConditionedDataset, K: int) -> float:
    """Quantile at level 1/K of the pairwise distances of the rows ``[y, z]``.

    Linear interpolation between order statistics at plotting position
    (k - 1) / (N - 1), i.e. numpy's default quantile method.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    rows = target.joint()
    if rows.shape[0] < 2:
        raise DataError("bandwidth selection needs at least two rows")
    if rows.shape[0] > MAX_PDIST_ROWS:
        idx = np.linspace(0, rows.shape[0] - 1, MAX_PDIST_ROWS).round().astype(int)
        rows = rows[idx]
    dist = pdist(rows)
    d = float(np.quantile(dist, 1.0 / K))
    if not d > 0:
        # heavy ties; fall back to the smallest positive distance
        pos = dist[dist > 0]
        if not pos.size:
            raise DataError("all target rows coincide; bandwidth undefined")
        d = float(pos.min())
    return d


def default_centers(m: int) -> int:
    return min(MAX_DEFAULT_CENTERS, math.ceil(math.sqrt(m)))


# ---------------------------------------------------------------- parameter blocks


@dataclass(frozen=True, eq=False)
class GaussFlowParams:
    """Parameters of one elementary map (the potential Phi)."""

    c0: np.ndarray
    C1: np.ndarray
    C20: np.ndarray
    C21: np.ndarray
    a: np.ndarray
    b: np.ndarray
    centers_x: np.ndarray
    centers_z: np.ndarray
    d: float
    delta: float = 0.5

    kind = "gaussflow"
    trainable = ("c0", "C1", "C20", "C21", "a", "b")

    def __post_init__(self):
        if not self.d > 0:
            raise ValueError("bandwidth must be positive")
        if self.a.shape[0] < 1:
            raise ValueError("need at least one Gaussian center")

    @property
    def dims(self) -> tuple[int, int]:
        return self.centers_x.shape[1], self.centers_z.shape[1]

    @property
    def K(self) -> int:
        return self.a.shape[0]

    def arrays(self) -> dict:
        return {k: getattr(self, k) for k in self.trainable}

    def step_scales(self) -> dict:
        # amplitudes live on the scale of d
        return {"a": self.d * self.d, "b": self.d * self.d}

    def updated(self, arrays: dict) -> "GaussFlowParams":
        arrays = dict(arrays)
        if "C20" in arrays:
            arrays["C20"] = np.tril(arrays["C20"])
        return replace(self, **arrays)

    def apply(self, x, z, carry):
        return elementary_map(self, x, z), carry

    def to_params(self) -> dict:
        dx = self.dims[0]
        return {
            "c0": self.c0.tolist(),
            "C1": self.C1.ravel().tolist(),
            "C20": self.C20[np.tril_indices(dx)].tolist(),
            "C21": self.C21.tolist(),
            "a": self.a.tolist(),
            "b": self.b.tolist(),
            "centers_x": self.centers_x.ravel().tolist(),
            "centers_z": self.centers_z.ravel().tolist(),
            "d": float(self.d),
            "delta": float(self.delta),
        }

    @classmethod
    def from_params(cls, params: dict, dims) -> "GaussFlowParams":
        dx, dz = dims
        try:
            a = np.asarray(params["a"], dtype=np.float64)
            K = a.size
            C20 = np.zeros((dx, dx))
            C20[np.tril_indices(dx)] = params["C20"]
            return cls(
                c0=np.asarray(params["c0"], dtype=np.float64).reshape(dx),
                C1=np.asarray(params["C1"], dtype=np.float64).reshape(dz, dx),
                C20=C20,
                C21=np.asarray(params["C21"], dtype=np.float64).reshape(dz),
                a=a,
                b=np.asarray(params["b"], dtype=np.float64).reshape(K),
                centers_x=np.asarray(params["centers_x"], dtype=np.float64).reshape(K, dx),
                centers_z=np.asarray(params["centers_z"], dtype=np.float64).reshape(K, dz),
                d=float(params["d"]),
                delta=float(params["delta"]),
            )
        except (KeyError, ValueError) as exc:
            raise DataError(f"malformed gaussflow layer: {exc}") from None


@dataclass(frozen=True, eq=False)
class GaussTestParams:
    """Parameters of the test function g; centers are free ascent variables."""

    alpha: np.ndarray
    beta0: np.ndarray
    beta1: np.ndarray
    beta2: np.ndarray
    beta3: np.ndarray
    centers_x: np.ndarray
    centers_z: np.ndarray
    d: float

    trainable = ("alpha", "beta0", "beta1", "beta2", "beta3", "centers_x", "centers_z")

    def __post_init__(self):
        if not self.d > 0:
            raise ValueError("bandwidth must be positive")

    @property
    def dims(self) -> tuple[int, int]:
        return self.centers_x.shape[1], self.centers_z.shape[1]

    def arrays(self) -> dict:
        return {k: getattr(self, k) for k in self.trainable}

    def step_scales(self) -> dict:
        return {"centers_x": self.d * self.d, "centers_z": self.d * self.d}

    def updated(self, arrays: dict) -> "GaussTestParams":
        arrays = dict(arrays)
        if "beta2" in arrays:
            b2 = arrays["beta2"]
            arrays["beta2"] = 0.5 * (b2 + b2.T)
        if "beta3" in arrays:
            b3 = arrays["beta3"]
            arrays["beta3"] = 0.5 * (b3 + b3.transpose(0, 2, 1))
        return replace(self, **arrays)

    @classmethod
    def zeros(cls, centers_x, centers_z, d: float) -> "GaussTestParams":
        K, dx = centers_x.shape
        dz = centers_z.shape[1]
        return cls(np.zeros(K), np.zeros(dx), np.zeros((dz, dx)), np.zeros((dx, dx)),
                   np.zeros((dz, dx, dx)), np.array(centers_x, dtype=np.float64),
                   np.array(centers_z, dtype=np.float64), float(d))


def identity_map_params(centers_x, centers_z, d: float, delta: float = 0.5) -> GaussFlowParams:
    """Map parameters whose gradient map is exactly the identity.

    C20 = sqrt(1 - delta) I gives C20^T C20 = (1 - delta) I, and a_i^2 = b_i^2 =
    d^2 delta / K makes the quadratic parts of the Gaussian terms contribute
    delta * x while the paired bumps cancel.
    """
    K, dx = centers_x.shape
    dz = centers_z.shape[1]
    amp = math.sqrt(d * d * delta / K)
    return GaussFlowParams(
        c0=np.zeros(dx),
        C1=np.zeros((dz, dx)),
        C20=math.sqrt(1.0 - delta) * np.eye(dx),
        C21=np.zeros(dz),
        a=np.full(K, amp),
        b=np.full(K, amp),
        centers_x=np.array(centers_x, dtype=np.float64),
        centers_z=np.array(centers_z, dtype=np.float64),
        d=float(d),
        delta=float(delta),
    )


def init_params(K: int, dims, target: ConditionedDataset, prev_test: GaussTestParams | None = None,
                rng: np.random.Generator | None = None, d: float | None = None,
                delta: float = 0.5) -> tuple[GaussFlowParams, GaussTestParams]:
    """Identity map parameters plus a test function (warm-started when ``prev_test`` is given)."""
    if K < 1:
        raise ValueError("K must be at least 1")
    dx, dz = dims
    if prev_test is not None:
        if prev_test.dims != (dx, dz):
            raise DimensionError("previous test parameters have the wrong dims")
        cx, cz, d = prev_test.centers_x, prev_test.centers_z, prev_test.d
        test = prev_test
    else:
        if target.dims != (dx, dz):
            raise DimensionError(f"target dims {target.dims} differ from {(dx, dz)}")
        if K > target.n:
            raise DataError(f"cannot sample {K} centers from {target.n} target rows")
        rng = rng if rng is not None else np.random.default_rng(0)
        idx = np.sort(rng.choice(target.n, size=K, replace=False))
        cx, cz = target.points[idx], target.covariates[idx]
        if d is None:
            d = select_bandwidth(target, K)
        test = GaussTestParams.zeros(cx, cz, d)
    return identity_map_params(cx, cz, d, delta), test


# ---------------------------------------------------------------- potential and map


def _c2_scalar(p: GaussFlowParams, z: np.ndarray) -> np.ndarray:
    s = z @ p.C21 if p.C21.size else np.zeros(z.shape[0])
    return s * s


def _rows(x, z, p):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x.reshape(1, -1) if single else x
    if z is None:
        Z = np.zeros((X.shape[0], 0))
    else:
        Z = np.asarray(z, dtype=np.float64)
        if Z.ndim == 1:
            Z = Z.reshape(X.shape[0], -1) if Z.size else np.zeros((X.shape[0], 0))
    if X.ndim != 2 or Z.ndim != 2 or Z.shape[0] != X.shape[0] or (X.shape[1], Z.shape[1]) != tuple(p.dims):
        raise DimensionError(f"inputs have shapes {X.shape} and {Z.shape}, parameters expect dims {tuple(p.dims)}")
    return X, Z, single


def potential(p: GaussFlowParams, x, z=None):
    X, Z, single = _rows(x, z, p)
    d2 = p.d * p.d
    gg = kernel_matrix(X, Z, p.centers_x, p.centers_z, p.d)
    lin = X @ p.c0 + np.einsum("nj,ji,ni->n", Z, p.C1, X)
    A = p.C20.T @ p.C20
    sqx = np.einsum("ni,ni->n", X, X)
    quad = 0.5 * (np.einsum("ni,ij,nj->n", X, A, X) + _c2_scalar(p, Z) * sqx)
    a2, b2 = p.a * p.a, p.b * p.b
    bumps = (a2.sum() + b2.sum()) * sqx / (4.0 * d2) + gg @ (b2 - a2)
    out = lin + quad + bumps
    return float(out[0]) if single else out


def elementary_map(p: GaussFlowParams, x, z=None, gg=None):
    """E(x, z) = grad_x Phi(x, z). ``gg`` may pass a precomputed kernel matrix."""
    X, Z, single = _rows(x, z, p)
    d2 = p.d * p.d
    if gg is None:
        gg = kernel_matrix(X, Z, p.centers_x, p.centers_z, p.d)
    a2, b2 = p.a * p.a, p.b * p.b
    c = b2 - a2
    A = p.C20.T @ p.C20
    out = p.c0 + Z @ p.C1 + X @ A
    out = out + (_c2_scalar(p, Z) + (a2.sum() + b2.sum()) / (2.0 * d2))[:, None] * X
    gc = gg * c
    out = out - (X * gc.sum(axis=1)[:, None] - gc @ p.centers_x) / d2
    return out[0] if single else out


def potential_hessian(p: GaussFlowParams, x, z=None) -> np.ndarray:
    """Hessian of Phi in x, shape (n, d_x, d_x)."""
    X, Z, single = _rows(x, z, p)
    d2 = p.d * p.d
    n, dx = X.shape
    gg = kernel_matrix(X, Z, p.centers_x, p.centers_z, p.d)
    a2, b2 = p.a * p.a, p.b * p.b
    c = b2 - a2
    eye = np.eye(dx)
    base = p.C20.T @ p.C20
    diag = _c2_scalar(p, Z) + (a2.sum() + b2.sum()) / (2.0 * d2)
    H = np.broadcast_to(base, (n, dx, dx)) + diag[:, None, None] * eye
    diff = X[:, None, :] - p.centers_x[None, :, :]
    w = gg * c / d2
    outer = np.einsum("nk,nki,nkj->nij", w, diff, diff) / d2
    H = H + outer - w.sum(axis=1)[:, None, None] * eye
    return H[0] if single else H


def convexity_margin(p: GaussFlowParams) -> float:
    """Lower bound on the smallest Hessian eigenvalue of Phi over all (x, z).

    The Hessian of G(x, m) has eigenvalues in [-1/d^2, KAPPA/d^2], so a bump
    with net weight c = b^2 - a^2 can lower the spectrum by at most c/d^2
    (c > 0) or |c| KAPPA/d^2 (c < 0). The (C21 . z)^2 term only adds.
    """
    d2 = p.d * p.d
    a2, b2 = p.a * p.a, p.b * p.b
    c = b2 - a2
    loss = np.where(c > 0, c, -c * KAPPA) / d2
    base = np.linalg.eigvalsh(p.C20.T @ p.C20)[0]
    return float(base + np.sum((a2 + b2) / (2.0 * d2) - loss))


def map_param_gradient(p: GaussFlowParams, x, z, downstream, gg=None) -> dict:
    """Gradient of sum_n downstream_n . E(x_n, z_n) w.r.t. the trainable map parameters."""
    X, Z, _ = _rows(x, z, p)
    R = np.atleast_2d(np.asarray(downstream, dtype=np.float64))
    if R.shape != X.shape:
        raise DimensionError(f"downstream has shape {R.shape}, expected {X.shape}")
    d2 = p.d * p.d
    if gg is None:
        gg = kernel_matrix(X, Z, p.centers_x, p.centers_z, p.d)
    rx = np.einsum("ni,ni->n", R, X)
    rdiff = rx[:, None] - R @ p.centers_x.T  # r_n . (x_n - m_k)
    s = Z @ p.C21 if p.C21.size else np.zeros(X.shape[0])
    base = rx.sum() / (2.0 * d2)
    bump = np.einsum("nk,nk->k", gg, rdiff) / d2
    sym = X.T @ R
    return {
        "c0": R.sum(axis=0),
        "C1": Z.T @ R,
        "C20": np.tril(p.C20 @ (sym + sym.T)),
        "C21": 2.0 * (rx * s) @ Z if Z.shape[1] else np.zeros(0),
        "a": 2.0 * p.a * (base + bump),
        "b": 2.0 * p.b * (base - bump),
    }


# ---------------------------------------------------------------- test function


def _quad_coeffs(q: GaussTestParams, Z: np.ndarray) -> np.ndarray:
    """Per-row matrix beta2 + sum_i beta3_i z_i, shape (n, dx, dx)."""
    return q.beta2[None] + np.einsum("ni,ijk->njk", Z, q.beta3)


def test_function(q: GaussTestParams, y, z=None, gg=None):
    Y, Z, single = _rows(y, z, q)
    if gg is None:
        gg = kernel_matrix(Y, Z, q.centers_x, q.centers_z, q.d)
    lin = Y @ q.beta0 + np.einsum("nj,ji,ni->n", Z, q.beta1, Y)
    quad = np.einsum("ni,nij,nj->n", Y, _quad_coeffs(q, Z), Y)
    out = gg @ q.alpha + lin + quad
    return float(out[0]) if single else out


test_function.__test__ = False


def test_grad_y(q: GaussTestParams, y, z=None, gg=None) -> np.ndarray:
    """Gradient of g in its first argument, shape (n, d_x)."""
    Y, Z, single = _rows(y, z, q)
    if gg is None:
        gg = kernel_matrix(Y, Z, q.centers_x, q.centers_z, q.d)
    w = gg * q.alpha
    out = -(Y * w.sum(axis=1)[:, None] - w @ q.centers_x) / (q.d * q.d)
    out = out + q.beta0 + Z @ q.beta1
    Q = _quad_coeffs(q, Z)
    out = out + np.einsum("nij,nj->ni", Q + Q.transpose(0, 2, 1), Y)
    return out[0] if single else out


test_grad_y.__test__ = False


def test_param_gradient(q: GaussTestParams, y, z, weights, gg=None) -> dict:
    """Gradient of sum_n weights_n g(y_n, z_n) w.r.t. every test parameter, centers included."""
    Y, Z, _ = _rows(y, z, q)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.shape[0] != Y.shape[0]:
        raise DimensionError(f"{w.shape[0]} weights for {Y.shape[0]} rows")
    d2 = q.d * q.d
    if gg is None:
        gg = kernel_matrix(Y, Z, q.centers_x, q.centers_z, q.d)
    wg = gg * w[:, None]
    coef = wg * q.alpha  # n x K
    csum = coef.sum(axis=0)
    wy = Y * w[:, None]
    return {
        "alpha": wg.sum(axis=0),
        "beta0": wy.sum(axis=0),
        "beta1": Z.T @ wy,
        "beta2": wy.T @ Y,
        "beta3": np.einsum("ni,nj,nk->ijk", Z, wy, Y),
        "centers_x": (coef.T @ Y - csum[:, None] * q.centers_x) / d2,
        "centers_z": (coef.T @ Z - csum[:, None] * q.centers_z) / d2,
    }


test_param_gradient.__test__ = False
