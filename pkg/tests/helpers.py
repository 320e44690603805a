"""Shared numeric oracles for the test suite; independent of the library paths."""

import numpy as np


def project_simplex_bisect(z, iters=200):
    """Simplex projection by bisecting on the threshold tau.

    Solves sum_i max(z_i - tau, 0) = 1 for tau; independent of the
    sort/cumsum route used by the production sparsemax.
    """
    z = np.asarray(z, dtype=np.float64)
    lo = z.max() - 1.0
    hi = z.max()
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if np.maximum(z - mid, 0.0).sum() > 1.0:
            lo = mid
        else:
            hi = mid
    tau = 0.5 * (lo + hi)
    return np.maximum(z - tau, 0.0)


def project_simplex_qp(z):
    """Simplex projection as an explicit QP, solved with SLSQP."""
    from scipy.optimize import minimize

    z = np.asarray(z, dtype=np.float64)
    m = z.size
    res = minimize(
        lambda p: 0.5 * np.sum((p - z) ** 2),
        x0=np.full(m, 1.0 / m),
        jac=lambda p: p - z,
        bounds=[(0.0, None)] * m,
        constraints=[{"type": "eq", "fun": lambda p: p.sum() - 1.0}],
        method="SLSQP",
        options={"ftol": 1e-14, "maxiter": 300},
    )
    assert res.success, res.message
    return res.x


def central_diff(f, x, h=1e-6):
    """Central finite-difference gradient of scalar f at x (elementwise)."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def rel_err(a, b, floor=1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return np.max(np.abs(a - b) / denom)
