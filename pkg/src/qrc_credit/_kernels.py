"""Compiled inner loops for the statevector and spin integrators.

Basis convention: bit i of the basis index is the occupation of atom i
(0 = ground, 1 = Rydberg).
"""

from __future__ import annotations

import numpy as np
from numba import njit

# allow reassociation so dot-product loops vectorise; keeps inf/nan semantics
_REDUCE = {"reassoc", "contract", "nsz"}


@njit(cache=True)
def apply_h(psi, diag, w, n, out):
    """out = H psi with H = diag + (w/2) sum_i |0_i><1_i| + (conj(w)/2) sum_i |1_i><0_i|."""
    half = 0.5 * w
    half_c = 0.5 * np.conj(w)
    dim = psi.shape[0]
    for b in range(dim):
        acc = diag[b] * psi[b]
        for i in range(n):
            m = 1 << i
            if b & m:
                acc += half_c * psi[b ^ m]
            else:
                acc += half * psi[b ^ m]
        out[b] = acc


@njit(cache=True)
def chebyshev_propagate(psi, diag, w, n, center, radius, coeffs):
    """Sum_k coeffs[k] T_k((H - center) / radius) psi, via the three-term recurrence."""
    dim = psi.shape[0]
    prev = psi.copy()
    cur = np.empty(dim, dtype=np.complex128)
    nxt = np.empty(dim, dtype=np.complex128)
    hv = np.empty(dim, dtype=np.complex128)
    result = coeffs[0] * psi
    if coeffs.shape[0] == 1:
        return result
    apply_h(prev, diag, w, n, hv)
    inv_r = 1.0 / radius
    for b in range(dim):
        cur[b] = (hv[b] - center * prev[b]) * inv_r
        result[b] += coeffs[1] * cur[b]
    for k in range(2, coeffs.shape[0]):
        apply_h(cur, diag, w, n, hv)
        ck = coeffs[k]
        for b in range(dim):
            nxt[b] = 2.0 * (hv[b] - center * cur[b]) * inv_r - prev[b]
            result[b] += ck * nxt[b]
        prev, cur, nxt = cur, nxt, prev
    return result


@njit(cache=True)
def _deriv(psi, diag_a, diag_b, frac, w, n, out):
    dim = psi.shape[0]
    d = np.empty(dim)
    for b in range(dim):
        d[b] = diag_a[b] + frac * (diag_b[b] - diag_a[b])
    apply_h(psi, d, w, n, out)
    for b in range(dim):
        out[b] = -1j * out[b]


@njit(cache=True)
def rk4_segment(psi, diag_a, diag_b, om_a, om_b, ph_a, ph_b, n, duration, nsteps):
    """Classic RK4 over one segment on which every drive varies linearly.

    ``diag_a``/``diag_b`` are the diagonal of H at the segment ends, ``om``
    and ``ph`` the Rabi amplitude and phase at the ends.
    """
    dim = psi.shape[0]
    h = duration / nsteps
    k1 = np.empty(dim, dtype=np.complex128)
    k2 = np.empty(dim, dtype=np.complex128)
    k3 = np.empty(dim, dtype=np.complex128)
    k4 = np.empty(dim, dtype=np.complex128)
    tmp = np.empty(dim, dtype=np.complex128)
    y = psi.copy()
    for s in range(nsteps):
        f0 = s / nsteps
        fm = (s + 0.5) / nsteps
        f1 = (s + 1.0) / nsteps
        w0 = (om_a + f0 * (om_b - om_a)) * np.exp(1j * (ph_a + f0 * (ph_b - ph_a)))
        wm = (om_a + fm * (om_b - om_a)) * np.exp(1j * (ph_a + fm * (ph_b - ph_a)))
        w1 = (om_a + f1 * (om_b - om_a)) * np.exp(1j * (ph_a + f1 * (ph_b - ph_a)))
        _deriv(y, diag_a, diag_b, f0, w0, n, k1)
        for b in range(dim):
            tmp[b] = y[b] + 0.5 * h * k1[b]
        _deriv(tmp, diag_a, diag_b, fm, wm, n, k2)
        for b in range(dim):
            tmp[b] = y[b] + 0.5 * h * k2[b]
        _deriv(tmp, diag_a, diag_b, fm, wm, n, k3)
        for b in range(dim):
            tmp[b] = y[b] + h * k3[b]
        _deriv(tmp, diag_a, diag_b, f1, w1, n, k4)
        for b in range(dim):
            y[b] += h / 6.0 * (k1[b] + 2.0 * k2[b] + 2.0 * k3[b] + k4[b])
    return y


# ---------------------------------------------------------------- linear models
# Labels are +-1; ``sw`` holds per-sample weights. Visit order is reshuffled every
# epoch by numba's own generator, seeded per call, so runs are reproducible.


@njit(cache=True, fastmath=_REDUCE)
def perceptron_epochs(X, y, sw, eta, epochs, seed):
    np.random.seed(seed)
    n, d = X.shape
    w = np.zeros(d)
    b = 0.0
    for e in range(epochs):
        order = np.random.permutation(n)
        for p in range(n):
            i = order[p]
            m = b
            for j in range(d):
                m += w[j] * X[i, j]
            if y[i] * m <= 0.0:
                step = eta * sw[i] * y[i]
                for j in range(d):
                    w[j] += step * X[i, j]
                b += step
    return w, b


@njit(cache=True, fastmath=_REDUCE)
def sgd_hinge_epochs(X, y, sw, alpha, t0, epochs, seed):
    """Plain SGD on hinge + (alpha/2)|w|^2 with eta_t = 1 / (alpha (t0 + t))."""
    np.random.seed(seed)
    n, d = X.shape
    w = np.zeros(d)
    b = 0.0
    t = 0.0
    for e in range(epochs):
        order = np.random.permutation(n)
        for p in range(n):
            i = order[p]
            eta = 1.0 / (alpha * (t0 + t))
            m = b
            for j in range(d):
                m += w[j] * X[i, j]
            shrink = 1.0 - eta * alpha
            for j in range(d):
                w[j] *= shrink
            if y[i] * m < 1.0:
                step = eta * sw[i] * y[i]
                for j in range(d):
                    w[j] += step * X[i, j]
                b += step
            t += 1.0
    return w, b


@njit(cache=True, fastmath=_REDUCE)
def svm_dual_cd(X, y, upper, seed, tol, max_pass, history):
    """Dual coordinate descent for min 1/2 a'Qa - sum a, 0 <= a_i <= upper_i.

    ``X`` carries a trailing constant column so the bias is part of w.
    Returns (w, alpha, passes, relative gap); ``history[p]`` receives the dual
    objective after pass p.
    """
    n, d = X.shape
    alpha = np.zeros(n)
    w = np.zeros(d)
    qii = np.empty(n)
    for i in range(n):
        s = 0.0
        for j in range(d):
            s += X[i, j] * X[i, j]
        qii[i] = s
    np.random.seed(seed)
    gap = np.inf
    passes = 0
    for p in range(max_pass):
        order = np.random.permutation(n)
        for q in range(n):
            i = order[q]
            if qii[i] == 0.0:
                continue
            g = 0.0
            for j in range(d):
                g += w[j] * X[i, j]
            g = y[i] * g - 1.0
            new = alpha[i] - g / qii[i]
            if new < 0.0:
                new = 0.0
            elif new > upper[i]:
                new = upper[i]
            delta = new - alpha[i]
            if delta != 0.0:
                alpha[i] = new
                step = delta * y[i]
                for j in range(d):
                    w[j] += step * X[i, j]
        passes = p + 1
        ww = 0.0
        for j in range(d):
            ww += w[j] * w[j]
        hinge = 0.0
        asum = 0.0
        for i in range(n):
            m = 0.0
            for j in range(d):
                m += w[j] * X[i, j]
            loss = 1.0 - y[i] * m
            if loss > 0.0:
                hinge += upper[i] * loss
            asum += alpha[i]
        primal = 0.5 * ww + hinge
        dual = asum - 0.5 * ww
        history[p] = 0.5 * ww - asum
        gap = (primal - dual) / max(abs(primal), 1e-300)
        if gap <= tol:
            break
    return w, alpha, passes, gap


@njit(cache=True)
def knn_vote(nn_labels, k):
    """Majority of the first k neighbour labels; ties go to the nearest neighbour's label."""
    m = nn_labels.shape[0]
    out = np.empty(m, dtype=np.int64)
    for r in range(m):
        ones = 0
        for c in range(k):
            ones += nn_labels[r, c]
        zeros = k - ones
        if ones > zeros:
            out[r] = 1
        elif zeros > ones:
            out[r] = 0
        else:
            out[r] = nn_labels[r, 0]
    return out
