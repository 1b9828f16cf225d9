"""Independent brute-force references used by the test-suite."""

from __future__ import annotations

import itertools

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

_N = np.array([[0, 0], [0, 1]], dtype=complex)
_I = np.eye(2, dtype=complex)


def embed(op, site, n):
    """Operator on ``site`` with bit i of the basis index = atom i (atom 0 is the last kron factor)."""
    mats = [op if k == site else _I for k in reversed(range(n))]
    out = mats[0]
    for m in mats[1:]:
        out = np.kron(out, m)
    return out


def dense_hamiltonian(positions, omega, phi, detunings, c6):
    n = len(positions)
    h = np.zeros((2**n, 2**n), dtype=complex)
    for i in range(n):
        flip = np.array([[0, np.exp(1j * phi)], [np.exp(-1j * phi), 0]])
        h += omega / 2 * embed(flip, i, n)
        h -= detunings[i] * embed(_N, i, n)
    for i, j in itertools.combinations(range(n), 2):
        r = abs(positions[i] - positions[j])
        h += c6 / r**6 * embed(_N, i, n) @ embed(_N, j, n)
    return h


def dense_evolve(sample, program, c6, times):
    """Piecewise integration: expm on constant pieces, DOP853 at tight tolerance on ramps."""
    n = sample.n_atoms

    def ham(t):
        return dense_hamiltonian(sample.positions, float(program.rabi(t)), float(program.phase(t)),
                                 program.detunings(t), c6)

    marks = sorted(set(program.breakpoints()) | set(times) | {0.0})
    marks = [m for m in marks if m <= max(times) + 1e-15]
    psi = np.zeros(2**n, dtype=complex)
    psi[0] = 1
    out = {}
    for a, b in zip(marks[:-1], marks[1:]):
        ha, hb = ham(a), ham(b)
        if np.allclose(ha, hb, atol=0, rtol=0):
            psi = expm(-1j * (b - a) * ha) @ psi
        else:
            sol = solve_ivp(lambda t, y: -1j * (ham(t) @ y), (a, b), psi, method="DOP853",
                            rtol=1e-13, atol=1e-13)
            psi = sol.y[:, -1]
        out[b] = psi.copy()
    return [out[t] for t in times]


def dense_features(psi, n):
    """<Z_i>, <Z_i Z_j> via explicit operator matrices."""
    z = [np.eye(2**n) - 2 * embed(_N, i, n) for i in range(n)]
    vals = [np.vdot(psi, z[i] @ psi).real for i in range(n)]
    vals += [np.vdot(psi, z[i] @ z[j] @ psi).real for i, j in itertools.combinations(range(n), 2)]
    return np.array(vals)


def euler_spins(positions, program, c6, times, dt=1e-6):
    """Explicit Euler with renormalisation on the classical spin equations, tiny step."""
    pos = np.asarray(positions, dtype=float)
    n = len(pos)
    v = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                v[i, j] = c6 / abs(pos[i] - pos[j]) ** 6
    s = np.tile([0.0, 0.0, -1.0], (n, 1))
    out = []
    t = 0.0
    for target in times:
        steps = int(round((target - t) / dt))
        for _ in range(steps):
            om = float(program.rabi(t))
            delta = program.detunings(t)
            b = np.zeros((n, 3))
            b[:, 0] = om / 2
            b[:, 2] = -delta / 2 + v @ (1 + s[:, 2]) / 4
            s = s + dt * 2 * np.cross(b, s)
            s /= np.linalg.norm(s, axis=1, keepdims=True)
            t += dt
        t = target
        out.append(s.copy())
    return out


def subgradient_oracle(X, y, C, sw, iters=200_000):
    """Long-run subgradient descent on the (bias-regularised) weighted hinge primal."""
    ys = np.where(y == 1, 1.0, -1.0)
    Xa = np.hstack([X, np.ones((len(X), 1))])
    theta = np.zeros(Xa.shape[1])
    best = np.inf
    for t in range(1, iters + 1):
        active = ys * (Xa @ theta) < 1
        g = theta - C * (Xa[active].T @ (sw[active] * ys[active]))
        theta -= g / (t + 10)
        value = 0.5 * theta @ theta + C * np.sum(sw * np.maximum(0, 1 - ys * (Xa @ theta)))
        best = min(best, value)
    return best
