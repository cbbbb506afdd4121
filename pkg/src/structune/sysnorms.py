"""System norms and pole-region requirements.

Three requirement functionals are evaluated here:

* H2 norm from the controllability Gramian (two Lyapunov solves give both
  Gramians when gradients are needed),
* H-infinity norm by the Hamiltonian level-set iteration
  (Bruinsma/Steinbuch, Boyd/Balakrishnan),
* a signed violation of a pole-region goal (min decay, min damping,
  max natural frequency).

All functions are pure and safe for concurrent evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NoConvergence, NonzeroFeedthrough, SingularR, Unstable
from .ss_core import Spectrum, StateSpace, freq_response, spectral_abscissa

__all__ = [
    "HinfResult",
    "PoleGoal",
    "h2_norm",
    "gramians",
    "hinf_norm",
    "pole_region_violation",
    "sigma_max",
]

# iteration cap for the level-set loop
_MAX_LEVEL_ITERS = 50
# relative threshold identifying near-peak frequencies
_PEAK_RTOL = 1e-6


def sigma_max(mat: np.ndarray) -> float:
    """Largest singular value; 0 for an empty matrix."""
    if mat.size == 0:
        return 0.0
    return float(np.linalg.svd(mat, compute_uv=False)[0])


@dataclass(frozen=True)
class HinfResult:
    """H-infinity value plus the frequencies where the peak is active."""

    value: float
    peak_frequencies: tuple
    converged: bool
    iterations: int


@dataclass(frozen=True)
class PoleGoal:
    """Pole-region goal: decay >= min_decay, damping ratio >= min_damping,
    natural frequency <= max_frequency."""

    min_decay: float
    min_damping: float
    max_frequency: float

    def __post_init__(self):
        if self.min_decay < 0:
            raise ValueError("min_decay must be >= 0")
        if not 0.0 <= self.min_damping < 1.0:
            raise ValueError("min_damping must be in [0, 1)")
        if not self.max_frequency > 0:
            raise ValueError("max_frequency must be > 0")


def _lyap(a: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Solve a X + X a' + q = 0 for symmetric q.

    Schur-based direct solve; a Kronecker-product solve backs it up for
    small systems if the residual is off.
    """
    n = a.shape[0]
    x = None
    try:
        x = scipy.linalg.solve_continuous_lyapunov(a, -q)
    except Exception:
        x = None
    if x is not None:
        res = np.linalg.norm(a @ x + x @ a.T + q)
        scale = 1.0 + np.linalg.norm(q) + np.linalg.norm(a) * np.linalg.norm(x)
        if res <= 1e-8 * scale:
            return 0.5 * (x + x.T)
    if n > 30:
        raise NoConvergence("Lyapunov solve failed and system too large for fallback")
    eye = np.eye(n)
    lhs = np.kron(eye, a) + np.kron(a, eye)
    vec = np.linalg.solve(lhs, -q.flatten(order="F"))
    x = vec.reshape((n, n), order="F")
    return 0.5 * (x + x.T)


def gramians(sys: StateSpace):
    """Controllability and observability Gramians (X, Y) of a stable system."""
    if sys.nx == 0:
        z = np.zeros((0, 0))
        return z, z
    if spectral_abscissa(sys) >= 0:
        raise Unstable("Gramians require a stable system")
    x = _lyap(sys.a, sys.b @ sys.b.T)
    y = _lyap(sys.a.T, sys.c.T @ sys.c)
    return x, y


def h2_norm(sys: StateSpace) -> float:
    """H2 norm: sqrt(trace(C X C')) with X the controllability Gramian."""
    if np.any(sys.d != 0.0):
        raise NonzeroFeedthrough("continuous-time H2 norm is infinite for d != 0")
    if sys.nx == 0:
        return 0.0
    if spectral_abscissa(sys) >= 0:
        raise Unstable("H2 norm requested for an unstable system")
    x = _lyap(sys.a, sys.b @ sys.b.T)
    val2 = float(np.trace(sys.c @ x @ sys.c.T))
    return math.sqrt(max(val2, 0.0))


def _hamiltonian_crossings(sys: StateSpace, gamma: float, rel_tol: float):
    """Frequencies where sigma_max(G(jw)) crosses level gamma.

    Returned as a sorted array of nonnegative frequencies read off the
    imaginary-axis eigenvalues of the level-set Hamiltonian.
    """
    a, b, c, d = sys.a, sys.b, sys.c, sys.d
    for _ in range(3):
        r = gamma**2 * np.eye(sys.nu) - d.T @ d
        if sys.nu == 0:
            return np.array([])
        if np.linalg.eigvalsh(r).min() <= 1e-12 * gamma**2:
            gamma *= 1.0 + 10.0 * rel_tol
            continue
        rinv = np.linalg.inv(r)
        m = a + b @ rinv @ d.T @ c
        n = sys.nx
        ham = np.zeros((2 * n, 2 * n))
        ham[:n, :n] = m
        ham[:n, n:] = b @ rinv @ b.T
        ham[n:, :n] = -c.T @ (np.eye(sys.ny) + d @ rinv @ d.T) @ c
        ham[n:, n:] = -m.T
        eigs = np.linalg.eigvals(ham)
        thresh = 1e-8 * (1.0 + np.linalg.norm(ham, "fro"))
        on_axis = eigs[np.abs(eigs.real) <= thresh]
        ws = np.unique(np.abs(on_axis.imag))
        # merge numerically identical frequencies
        if ws.size > 1:
            keep = [ws[0]]
            for w in ws[1:]:
                if w - keep[-1] > 1e-12 * (1.0 + w):
                    keep.append(w)
            ws = np.asarray(keep)
        return ws
    raise SingularR("gamma^2 I - D'D remained indefinite after inflation")


def hinf_norm(sys: StateSpace, rel_tol: float = 1e-8) -> HinfResult:
    """H-infinity norm by the Hamiltonian level-set iteration.

    The returned value satisfies ``true <= value <= true * (1 + 2 rel_tol)``
    up to eigensolver accuracy.  ``peak_frequencies`` lists the sampled
    frequencies whose gain comes within a relative 1e-6 of the peak; a pure
    feedthrough peak is reported at frequency ``inf``.
    """
    if not 1e-12 <= rel_tol <= 1e-2:
        raise ValueError("rel_tol must lie in [1e-12, 1e-2]")
    if sys.nx > 0 and spectral_abscissa(sys) >= 0:
        raise Unstable("H-infinity norm requested for an unstable system")

    d_gain = sigma_max(sys.d)
    if sys.nx == 0:
        return HinfResult(d_gain, (0.0,), True, 0)

    evals: dict[float, float] = {}

    def gain(w: float) -> float:
        if w not in evals:
            evals[w] = sigma_max(freq_response(sys, w))
        return evals[w]

    candidates = {0.0}
    for lam in np.linalg.eigvals(sys.a):
        candidates.add(float(abs(lam)))
        if abs(lam.imag) > 1e-12:
            candidates.add(float(abs(lam.imag)))
    glb = max([d_gain] + [gain(w) for w in sorted(candidates)])
    if glb <= 1e-300:
        return HinfResult(0.0, (0.0,), True, 0)

    converged = False
    iterations = 0
    for iterations in range(1, _MAX_LEVEL_ITERS + 1):
        gamma = (1.0 + 2.0 * rel_tol) * glb
        ws = _hamiltonian_crossings(sys, gamma, rel_tol)
        if ws.size == 0:
            converged = True
            break
        if ws.size == 1:
            mids = [float(ws[0])]
        else:
            mids = [float(0.5 * (ws[i] + ws[i + 1])) for i in range(ws.size - 1)]
        new = max(gain(w) for w in mids)
        if new <= glb * (1.0 + 0.01 * rel_tol):
            # tangency: the level cuts the gain curve but sampling cannot
            # improve the bound any further
            converged = True
            break
        glb = max(glb, new)
    if not converged:
        raise NoConvergence("level-set iteration exhausted its budget")

    value = glb * (1.0 + rel_tol)
    finite_best = max(evals.values())
    if d_gain > finite_best * (1.0 + 1e-9):
        peaks = (math.inf,)
    else:
        near = sorted(w for w, s in evals.items() if s >= (1.0 - _PEAK_RTOL) * finite_best)
        peaks = []
        for w in near:
            if peaks and w - peaks[-1] <= 1e-6 * (1.0 + w):
                # keep the better representative of a cluster
                if evals[w] > evals[peaks[-1]]:
                    peaks[-1] = w
            else:
                peaks.append(w)
        peaks = tuple(peaks)
    return HinfResult(float(value), peaks, converged, iterations)


def pole_region_violation(spectrum: Spectrum, goal: PoleGoal):
    """Signed worst violation of a pole-region goal.

    For each eigenvalue the three signed terms are::

        re(lam) + min_decay
        re(lam) + min_damping * |lam|
        |lam| - max_frequency

    The goal holds iff the maximum over all eigenvalues and terms is <= 0.
    Returns ``(violation, active_indices)`` where the active set collects
    eigenvalues within 1e-8 of the worst value.
    """
    lam = np.asarray(spectrum.eigenvalues, dtype=complex)
    if lam.size == 0:
        raise ValueError("pole goal needs a nonempty spectrum")
    mag = np.abs(lam)
    terms = np.stack(
        [
            lam.real + goal.min_decay,
            lam.real + goal.min_damping * mag,
            mag - goal.max_frequency,
        ]
    )
    per_eig = terms.max(axis=0)
    v = float(per_eig.max())
    active = [int(i) for i in np.flatnonzero(per_eig >= v - 1e-8)]
    return v, active
