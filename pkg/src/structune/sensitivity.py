"""Gradients and Clarke subgradients of the requirement functionals.

Derivatives of the closed loop with respect to the tunable vector are
obtained by the product rule through the loop-closing formulas, then chained
into the H-infinity peak gains, the H2 norm, or the active pole-region
terms.  Every formula here is gated by finite-difference tests rather than
trusted blindly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .controller_structures import ParamJacobian
from .errors import NonzeroFeedthrough, ResolventSingular, Unstable
from .ss_core import PartitionedPlant, StateSpace, lft_lower, spectral_abscissa
from .sysnorms import PoleGoal, gramians, h2_norm

__all__ = [
    "Subgradient",
    "closed_loop_jacobian",
    "slice_quads",
    "hinf_subgradients",
    "h2_gradient",
    "pole_subgradients",
    "finite_diff_gradient",
]

# singular-value gap below which a peak is flagged as degenerate
_SVD_GAP_RTOL = 1e-9
# left/right eigenvector alignment below which an eigenvalue counts as defective
_DEFECTIVE_TOL = 1e-8


@dataclass(frozen=True)
class Subgradient:
    """One Clarke subgradient with a descriptor of the active source."""

    vector: np.ndarray
    source: str

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=float).ravel().copy()
        if v.size and not np.isfinite(v).all():
            raise ValueError("subgradient has non-finite entries")
        v.flags.writeable = False
        object.__setattr__(self, "vector", v)


def closed_loop_jacobian(p: PartitionedPlant, k: StateSpace, jac: ParamJacobian):
    """Derivative quadruples of the closed loop (A,B,C,D) per parameter.

    Differentiates the loop-closing formulas, including the dependence of
    the feedthrough-loop inverses on D_K.
    """
    # recompute the pieces of the interconnection (also re-checks posedness)
    lft_lower(p, k)
    delta1 = np.linalg.inv(np.eye(p.nu) - k.d @ p.d22)
    delta2 = np.linalg.inv(np.eye(p.ny) - p.d22 @ k.d)
    n, m = p.nstates, k.nx
    ntot = n + m

    b2d1 = p.b2 @ delta1
    d12d1 = p.d12 @ delta1
    d2c2 = delta2 @ p.c2
    d2d21 = delta2 @ p.d21
    d22ck = p.d22 @ k.c

    out = []
    for idx in range(jac.n):
        da_k, db_k, dc_k, dd_k = jac.quads[idx]
        dA = np.zeros((ntot, ntot))
        dB = np.zeros((ntot, p.nw))
        dC = np.zeros((p.nz, ntot))
        dD = np.zeros((p.nz, p.nw))

        if dd_k is not None:
            ddel1 = delta1 @ dd_k @ p.d22 @ delta1
            ddel2 = delta2 @ p.d22 @ dd_k @ delta2
            # pieces that see D_K directly or through the loop inverses
            term = ddel1 @ k.d + delta1 @ dd_k
            dA[:n, :n] += p.b2 @ term @ p.c2
            dA[:n, n:] += p.b2 @ ddel1 @ k.c
            dA[n:, :n] += k.b @ ddel2 @ p.c2
            dA[n:, n:] += k.b @ ddel2 @ d22ck
            dB[:n] += p.b2 @ term @ p.d21
            dB[n:] += k.b @ ddel2 @ p.d21
            dC[:, :n] += p.d12 @ term @ p.c2
            dC[:, n:] += p.d12 @ ddel1 @ k.c
            dD += p.d12 @ term @ p.d21

        if da_k is not None:
            dA[n:, n:] += da_k
        if db_k is not None:
            dA[n:, :n] += db_k @ d2c2
            dA[n:, n:] += db_k @ delta2 @ d22ck
            dB[n:] += db_k @ d2d21
        if dc_k is not None:
            dA[:n, n:] += b2d1 @ dc_k
            dA[n:, n:] += k.b @ delta2 @ p.d22 @ dc_k
            dC[:, n:] += d12d1 @ dc_k

        out.append((dA, dB, dC, dD))
    return out


def slice_quads(quads, z_idx=None, w_idx=None):
    """Restrict closed-loop derivative quadruples to an output/input channel."""
    if z_idx is None and w_idx is None:
        return quads
    out = []
    for da, db, dc, dd in quads:
        if w_idx is not None:
            db = db[:, w_idx]
            dd = dd[:, w_idx]
        if z_idx is not None:
            dc = dc[z_idx, :]
            dd = dd[z_idx, :]
        out.append((da, db, dc, dd))
    return out


def hinf_subgradients(clp: StateSpace, dquads, peaks) -> list:
    """Subgradients of the H-infinity norm, one per active peak frequency.

    At each active frequency the derivative of the largest singular value
    is Re(u' dT v) with (u, v) the leading singular pair.  Multiple active
    frequencies yield multiple subgradients; their convex hull spans the
    relevant part of the Clarke subdifferential.
    """
    if clp.nx > 0 and spectral_abscissa(clp) >= 0:
        raise Unstable("subgradients of the peak gain need a stable loop")
    subs = []
    for omega in peaks:
        if np.isinf(omega):
            t = clp.d.astype(complex)
            rb = None
            cr = None
        else:
            m = 1j * omega * np.eye(clp.nx) - clp.a
            smin = np.linalg.svd(m, compute_uv=False)[-1] if clp.nx else 1.0
            if clp.nx and smin <= 1e-12 * (1.0 + abs(omega) + np.linalg.norm(clp.a, "fro")):
                raise ResolventSingular(f"peak frequency {omega} sits on a pole")
            rb = np.linalg.solve(m, clp.b.astype(complex)) if clp.nx else None
            cr = np.linalg.solve(m.T, clp.c.T.astype(complex)).T if clp.nx else None
            t = (clp.c @ rb if clp.nx else 0.0) + clp.d

        u_mat, s, vh = np.linalg.svd(t)
        u = u_mat[:, 0]
        v = vh[0].conj()
        degenerate = s.size > 1 and (s[0] - s[1]) < _SVD_GAP_RTOL * max(s[0], 1e-300)

        g = np.zeros(len(dquads))
        for k, (da, db, dc, dd) in enumerate(dquads):
            dt = np.zeros((clp.ny, clp.nu), dtype=complex)
            if dd is not None:
                dt = dt + dd
            if not np.isinf(omega) and clp.nx:
                if dc is not None:
                    dt = dt + dc @ rb
                if da is not None:
                    dt = dt + cr @ da @ rb
                if db is not None:
                    dt = dt + cr @ db
            g[k] = float(np.real(u.conj() @ dt @ v))
        source = f"hinf:omega={omega:.9g}"
        if degenerate:
            source += ":degenerate"
        subs.append(Subgradient(g, source))
    return subs


def h2_gradient(clp: StateSpace, dquads) -> Subgradient:
    """Gradient of the H2 norm through both Gramians.

    d(||T||^2)/dx = tr(Y (dA X + X dA' + dB B' + B dB')) + tr(dC X C' + C X dC'),
    returned for the norm itself (divided by 2 ||T||).
    """
    if np.any(clp.d != 0.0):
        raise NonzeroFeedthrough("H2 gradient needs d = 0")
    for _, _, _, dd in dquads:
        if dd is not None and np.any(dd != 0.0):
            raise NonzeroFeedthrough("H2 gradient needs d(D)/dx = 0")
    norm = h2_norm(clp)
    n = len(dquads)
    if norm == 0.0:
        return Subgradient(np.zeros(n), "h2")
    x_gram, y_gram = gramians(clp)
    g = np.zeros(n)
    for k, (da, db, dc, _) in enumerate(dquads):
        acc = 0.0
        if da is not None:
            acc += np.trace(y_gram @ (da @ x_gram + x_gram @ da.T))
        if db is not None:
            acc += np.trace(y_gram @ (db @ clp.b.T + clp.b @ db.T))
        if dc is not None:
            acc += np.trace(dc @ x_gram @ clp.c.T + clp.c @ x_gram @ dc.T)
        g[k] = float(acc) / (2.0 * norm)
    return Subgradient(g, "h2")


def _term_values(lam: complex, goal: PoleGoal):
    mag = abs(lam)
    return (
        lam.real + goal.min_decay,
        lam.real + goal.min_damping * mag,
        mag - goal.max_frequency,
    )


_TERM_NAMES = ("decay", "damping", "frequency")


def pole_subgradients(clp: StateSpace, dquads, goal: PoleGoal, active) -> list:
    """Subgradients of the pole-region violation for the active eigenvalues.

    Uses dlam = w' dA v with left/right eigenvectors normalized to w'v = 1;
    a defective eigenvalue (near-orthogonal pair) falls back to a flagged
    forward-difference subgradient.
    """
    if clp.nx < 1:
        raise ValueError("pole subgradients need a dynamic closed loop")
    w_all, vl, vr = scipy.linalg.eig(clp.a, left=True, right=True)
    subs = []
    for idx in active:
        lam = w_all[idx]
        w = vl[:, idx]
        v = vr[:, idx]
        align = w.conj() @ v
        if abs(align) < _DEFECTIVE_TOL:
            subs.append(_fd_pole_subgradient(clp, dquads, goal, idx))
            continue
        w = w / np.conj(align)  # now w' v = 1
        dlam = np.array(
            [w.conj() @ da @ v if da is not None else 0.0 for (da, _, _, _) in dquads]
        )
        terms = _term_values(lam, goal)
        worst = max(terms)
        mag = abs(lam)
        for t_idx, t_val in enumerate(terms):
            if t_val < worst - 1e-8:
                continue
            if t_idx == 0:
                g = dlam.real
            elif t_idx == 1:
                radial = np.real(np.conj(lam) * dlam) / max(mag, 1e-300)
                g = dlam.real + goal.min_damping * radial
            else:
                g = np.real(np.conj(lam) * dlam) / max(mag, 1e-300)
            subs.append(
                Subgradient(g, f"pole:idx={idx}:{_TERM_NAMES[t_idx]}")
            )
    return subs


def _fd_pole_subgradient(clp, dquads, goal, idx, h: float = 1e-7) -> Subgradient:
    """Forward-difference fallback for a defective active eigenvalue."""
    from .ss_core import Spectrum
    from .sysnorms import pole_region_violation

    base_spec = Spectrum.from_eigenvalues(np.linalg.eigvals(clp.a))
    v0, _ = pole_region_violation(base_spec, goal)
    g = np.zeros(len(dquads))
    for k, (da, _, _, _) in enumerate(dquads):
        if da is None or not np.any(da):
            continue
        eigs = np.linalg.eigvals(clp.a + h * da)
        v1, _ = pole_region_violation(Spectrum.from_eigenvalues(eigs), goal)
        g[k] = (v1 - v0) / h
    return Subgradient(g, f"pole:idx={idx}:fd")


def finite_diff_gradient(f, x, h=None) -> np.ndarray:
    """Central finite differences of a scalar function.

    The default step is 1e-6 * (1 + |x_k|) per coordinate; evaluation
    failures propagate to the caller.
    """
    x = np.asarray(x, dtype=float).ravel()
    n = x.size
    if h is None:
        steps = 1e-6 * (1.0 + np.abs(x))
    else:
        steps = np.full(n, float(h)) if np.isscalar(h) else np.asarray(h, float)
    g = np.zeros(n)
    for k in range(n):
        e = np.zeros(n)
        e[k] = steps[k]
        g[k] = (f(x + e) - f(x - e)) / (2.0 * steps[k])
    return g
