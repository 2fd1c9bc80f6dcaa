"""Random parameter states shared by the gradient and convexity suites."""

import math
from dataclasses import replace

import numpy as np

from cotx import gaussflow as gf

from _fd import fd_gradient, rel_error


def random_map_params(rng, dx=2, dz=1, K=4, spread=1.0):
    d = rng.uniform(0.5, 1.5)
    p = gf.identity_map_params(rng.normal(size=(K, dx)), rng.normal(size=(K, dz)), d)
    amp = math.sqrt(d * d * 0.5 / K)
    return p.updated({
        "c0": spread * rng.normal(size=dx),
        "C1": spread * rng.normal(size=(dz, dx)),
        "C20": np.tril(math.sqrt(0.5) * np.eye(dx) + 0.3 * spread * rng.normal(size=(dx, dx))),
        "C21": 0.5 * spread * rng.normal(size=dz),
        "a": amp * (1 + 0.3 * spread * rng.normal(size=K)),
        "b": amp * (1 + 0.3 * spread * rng.normal(size=K)),
    })


def reachable_map_params(rng, dx=2, dz=1, K=4):
    """Random states the optimizer could accept: the convexity margin is nonnegative."""
    while True:
        p = random_map_params(rng, dx, dz, K)
        if gf.convexity_margin(p) >= 0:
            return p


def random_test_params(rng, dx=2, dz=1, K=4):
    b2 = rng.normal(size=(dx, dx))
    b3 = rng.normal(size=(dz, dx, dx))
    return gf.GaussTestParams(
        alpha=rng.normal(size=K), beta0=rng.normal(size=dx), beta1=rng.normal(size=(dz, dx)),
        beta2=0.1 * (b2 + b2.T), beta3=0.1 * (b3 + b3.transpose(0, 2, 1)),
        centers_x=rng.normal(size=(K, dx)), centers_z=rng.normal(size=(K, dz)), d=rng.uniform(0.5, 1.5))


def map_gradient_error(rng) -> float:
    p = random_map_params(rng, 2, 2, 4)
    x, z = rng.normal(size=(15, 2)), rng.normal(size=(15, 2))
    r = rng.normal(size=(15, 2))

    def f(arrays):
        return float(np.sum(r * gf.elementary_map(replace(p, **arrays), x, z)))

    lower = {"C20": [i * 2 + j for i in range(2) for j in range(i + 1)]}
    return rel_error(gf.map_param_gradient(p, x, z, r), fd_gradient(f, p.arrays(), entries=lower))


def g_gradient_error(rng) -> float:
    q = random_test_params(rng, 2, 2, 4)
    y, z = rng.normal(size=(15, 2)), rng.normal(size=(15, 2))
    w = rng.normal(size=15)

    def f(arrays):
        return float(np.sum(w * gf.test_function(replace(q, **arrays), y, z)))

    return rel_error(gf.test_param_gradient(q, y, z, w), fd_gradient(f, q.arrays()))


def dv_gradient_error(rng) -> float:
    """DV functional of the gaussflow test family (log-mean-exp term included)."""
    from cotx.divergence import dv_test_value, dv_test_value_and_grad

    q = random_test_params(rng, 1, 1, 3)
    sy, sz = rng.normal(size=(20, 1)), rng.normal(size=(20, 1))
    ty, tz = rng.normal(1, 1, size=(25, 1)), rng.normal(size=(25, 1))

    def f(arrays):
        return dv_test_value(replace(q, **arrays), sy, sz, ty, tz).value

    _, grad = dv_test_value_and_grad(q, sy, sz, ty, tz)
    return rel_error(grad, fd_gradient(f, q.arrays()))


def log_mean_exp_gradient_error(rng) -> float:
    from cotx.divergence import log_mean_exp, softmax_weights

    v = 3 * rng.normal(size=30)
    num = fd_gradient(lambda a: log_mean_exp(a["v"]), {"v": v})
    return rel_error({"v": softmax_weights(v)}, num)


def random_compose_state(rng, n=12, L=2):
    from cotx import composeflow as cf

    coeff = lambda: cf.ComposeCoeffs(rng.normal(size=L + 2), rng.normal(size=L + 2))
    return cf.ComposeFlowState(coeff(), coeff(), coeff(), rng.normal(size=n), rng.normal(size=n),
                               rng.normal(size=n), 3)


def compose_gradient_error(rng) -> float:
    from cotx import composeflow as cf

    state = random_compose_state(rng)
    n, L = state.u.size, state.L
    Z = rng.normal(size=(n, L))
    du, dv, dw = rng.normal(size=(3, n))
    arrays = {f"{blk}_{k}": getattr(getattr(state, blk), k) for blk in ("alpha", "beta", "eta") for k in ("a1", "a2")}

    def f(a):
        s = replace(state, **{blk: cf.ComposeCoeffs(a[f"{blk}_a1"], a[f"{blk}_a2"]) for blk in ("alpha", "beta", "eta")})
        u, v, w = cf.step_values(s, Z)
        return float(du @ u + dv @ v + dw @ w)

    ga, gb, ge = cf.coeff_gradient(state, Z, du, dv, dw)
    analytic = {f"{blk}_{k}": g[k] for blk, g in (("alpha", ga), ("beta", gb), ("eta", ge)) for k in ("a1", "a2")}
    return rel_error(analytic, fd_gradient(f, arrays))
