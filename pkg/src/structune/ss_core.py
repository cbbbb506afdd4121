"""Dense real state-space systems and their interconnection algebra.

Continuous-time LTI systems are stored as plain real matrices.  All types
are immutable values and every operation is a pure function, so everything
here is safe to call concurrently.  Interconnections keep the full state of
every participant: the systems handled here are small and a reduction pass
would only blur numerical cross-checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, IllPosed, ResolventSingular

__all__ = [
    "StateSpace",
    "PartitionedPlant",
    "Spectrum",
    "lft_lower",
    "closed_pair",
    "freq_response",
    "poles",
    "compose",
    "spectral_abscissa",
    "ss_to_json",
    "ss_from_json",
    "plant_to_json",
    "plant_from_json",
]

# Relative floor for smallest singular values of algebraic-loop matrices.
_WELLPOSED_RTOL = 1e-10


def _check_finite(arr, name):
    if arr.size and not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def _freeze(arr):
    arr = np.ascontiguousarray(arr, dtype=float)
    arr.flags.writeable = False
    return arr


def _as_square(value, name):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {arr.shape}")
    return _check_finite(arr, name)


@dataclass(frozen=True)
class StateSpace:
    """Realization (a, b, c, d) of ``xdot = a x + b u``, ``y = c x + d u``.

    ``nx = 0`` is allowed and denotes a pure gain ``d``.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        a = _as_square(self.a, "a")
        nx = a.shape[0]

        b = np.asarray(self.b, dtype=float)
        if b.ndim == 0:
            b = b.reshape(1, 1)
        elif b.ndim == 1:
            b = b.reshape(-1, 1)
        if b.ndim != 2 or b.shape[0] != nx:
            raise DimensionMismatch(f"b must have {nx} rows, got shape {b.shape}")

        c = np.asarray(self.c, dtype=float)
        if c.ndim == 0:
            c = c.reshape(1, 1)
        elif c.ndim == 1:
            c = c.reshape(1, -1)
        if c.ndim != 2 or c.shape[1] != nx:
            raise DimensionMismatch(f"c must have {nx} columns, got shape {c.shape}")

        nu, ny = b.shape[1], c.shape[0]
        if self.d is None:
            d = np.zeros((ny, nu))
        else:
            d = np.asarray(self.d, dtype=float)
            if d.ndim == 0:
                d = np.full((ny, nu), float(d)) if ny == nu == 1 else d.reshape(1, 1)
            elif d.ndim == 1:
                d = d.reshape(1, -1) if ny == 1 else d.reshape(-1, 1)
        if d.shape != (ny, nu):
            raise DimensionMismatch(f"d must have shape {(ny, nu)}, got {d.shape}")

        _check_finite(b, "b")
        _check_finite(d, "d")
        object.__setattr__(self, "a", _freeze(a))
        object.__setattr__(self, "b", _freeze(b))
        object.__setattr__(self, "c", _freeze(c))
        object.__setattr__(self, "d", _freeze(d))

    @property
    def nx(self) -> int:
        return self.a.shape[0]

    @property
    def nu(self) -> int:
        return self.b.shape[1]

    @property
    def ny(self) -> int:
        return self.c.shape[0]

    @classmethod
    def static(cls, d) -> "StateSpace":
        """Pure gain: zero states, ``y = d u``."""
        d = np.atleast_2d(np.asarray(d, dtype=float))
        ny, nu = d.shape
        return cls(np.zeros((0, 0)), np.zeros((0, nu)), np.zeros((ny, 0)), d)

    @classmethod
    def zero(cls, ny: int, nu: int) -> "StateSpace":
        return cls.static(np.zeros((ny, nu)))

    def scaled(self, alpha: float) -> "StateSpace":
        """Same dynamics, output scaled by ``alpha``."""
        return StateSpace(self.a, self.b, alpha * self.c, alpha * self.d)

    def __repr__(self):  # keep reprs short; matrices can be large
        return f"StateSpace(nx={self.nx}, nu={self.nu}, ny={self.ny})"


@dataclass(frozen=True)
class PartitionedPlant:
    """Plant with the exogenous/control input and performance/measurement
    output partition::

        xdot = a x  + b1 w  + b2 u
        z    = c1 x + d11 w + d12 u
        y    = c2 x + d21 w + d22 u
    """

    a: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    d11: np.ndarray
    d12: np.ndarray
    d21: np.ndarray
    d22: np.ndarray

    def __post_init__(self):
        a = _as_square(self.a, "a")
        n = a.shape[0]

        def shaped(value, rows, cols, name, rows_known=True):
            arr = np.atleast_2d(np.asarray(value, dtype=float))
            want = (rows, cols)
            if (rows is not None and arr.shape[0] != rows) or (
                cols is not None and arr.shape[1] != cols
            ):
                raise DimensionMismatch(
                    f"{name} must have shape {want}, got {arr.shape}"
                )
            return _check_finite(arr, name)

        b1 = shaped(self.b1, n, None, "b1")
        b2 = shaped(self.b2, n, None, "b2")
        nw, nu = b1.shape[1], b2.shape[1]
        c1 = shaped(self.c1, None, n, "c1")
        c2 = shaped(self.c2, None, n, "c2")
        nz, ny = c1.shape[0], c2.shape[0]
        d11 = shaped(self.d11, nz, nw, "d11")
        d12 = shaped(self.d12, nz, nu, "d12")
        d21 = shaped(self.d21, ny, nw, "d21")
        d22 = shaped(self.d22, ny, nu, "d22")

        for name, arr in (
            ("a", a), ("b1", b1), ("b2", b2), ("c1", c1), ("c2", c2),
            ("d11", d11), ("d12", d12), ("d21", d21), ("d22", d22),
        ):
            object.__setattr__(self, name, _freeze(arr))

    @property
    def nstates(self) -> int:
        return self.a.shape[0]

    @property
    def nw(self) -> int:
        return self.b1.shape[1]

    @property
    def nu(self) -> int:
        return self.b2.shape[1]

    @property
    def nz(self) -> int:
        return self.c1.shape[0]

    @property
    def ny(self) -> int:
        return self.c2.shape[0]

    def __repr__(self):
        return (
            f"PartitionedPlant(n={self.nstates}, nw={self.nw}, nu={self.nu},"
            f" nz={self.nz}, ny={self.ny})"
        )


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalue set of a system matrix plus its spectral abscissa."""

    eigenvalues: np.ndarray
    abscissa: float

    @classmethod
    def from_eigenvalues(cls, eigs) -> "Spectrum":
        eigs = np.asarray(eigs, dtype=complex)
        # deterministic order: by real part, then imaginary part
        order = np.lexsort((eigs.imag, eigs.real))
        eigs = eigs[order]
        eigs.flags.writeable = False
        absc = float(eigs.real.max()) if eigs.size else float("-inf")
        return cls(eigs, absc)

    def __len__(self):
        return len(self.eigenvalues)


def _guard_loop_matrix(loop: np.ndarray, product: np.ndarray, what: str):
    """Raise IllPosed when a feedthrough loop matrix is numerically singular."""
    if loop.shape[0] == 0:
        return
    smin = np.linalg.svd(loop, compute_uv=False)[-1]
    scale = 1.0 + (np.linalg.norm(product, 2) if product.size else 0.0)
    if smin <= _WELLPOSED_RTOL * scale:
        raise IllPosed(f"{what}: smallest singular value {smin:.3e} below threshold")


def lft_lower(p: PartitionedPlant, k: StateSpace) -> StateSpace:
    """Close the (u, y) ports of ``p`` with ``u = K y`` and return the w -> z map.

    Sign conventions are carried entirely by the plant matrices; the
    well-posedness guard rejects a singular ``I - D_K D22``.
    """
    if k.nu != p.ny or k.ny != p.nu:
        raise DimensionMismatch(
            f"controller is {k.ny}x{k.nu}, plant loop ports want {p.nu}x{p.ny}"
        )
    prod = k.d @ p.d22
    loop = np.eye(p.nu) - prod
    _guard_loop_matrix(loop, prod, "I - D_K D22")
    delta1 = np.linalg.inv(loop)
    delta2 = np.linalg.inv(np.eye(p.ny) - p.d22 @ k.d)

    n, m = p.nstates, k.nx
    kdc2 = k.d @ p.c2
    kdd21 = k.d @ p.d21

    acl = np.zeros((n + m, n + m))
    acl[:n, :n] = p.a + p.b2 @ delta1 @ kdc2
    acl[:n, n:] = p.b2 @ delta1 @ k.c
    acl[n:, :n] = k.b @ delta2 @ p.c2
    acl[n:, n:] = k.a + k.b @ delta2 @ p.d22 @ k.c

    bcl = np.zeros((n + m, p.nw))
    bcl[:n] = p.b1 + p.b2 @ delta1 @ kdd21
    bcl[n:] = k.b @ delta2 @ p.d21

    ccl = np.zeros((p.nz, n + m))
    ccl[:, :n] = p.c1 + p.d12 @ delta1 @ kdc2
    ccl[:, n:] = p.d12 @ delta1 @ k.c

    dcl = p.d11 + p.d12 @ delta1 @ kdd21
    return StateSpace(acl, bcl, ccl, dcl)


def closed_pair(m: StateSpace, n: StateSpace):
    """Negative feedback of ``n`` around ``m``: returns ``M (I + N M)^{-1}``
    together with the spectrum of the interconnection's A-matrix.

    Internal stability of the pair is equivalent to ``spectrum.abscissa < 0``.
    """
    if m.ny != n.nu or n.ny != m.nu:
        raise DimensionMismatch(
            f"cannot close {m.ny}x{m.nu} with {n.ny}x{n.nu} in feedback"
        )
    prod = n.d @ m.d
    loop = np.eye(m.nu) + prod
    _guard_loop_matrix(loop, prod, "I + D_N D_M")
    f = np.linalg.inv(loop)                      # (I + D_N D_M)^-1
    e = np.linalg.inv(np.eye(m.ny) + m.d @ n.d)  # (I + D_M D_N)^-1

    n1, n2 = m.nx, n.nx
    a = np.zeros((n1 + n2, n1 + n2))
    a[:n1, :n1] = m.a - m.b @ f @ n.d @ m.c
    a[:n1, n1:] = -m.b @ f @ n.c
    a[n1:, :n1] = n.b @ e @ m.c
    a[n1:, n1:] = n.a - n.b @ e @ m.d @ n.c

    b = np.zeros((n1 + n2, m.nu))
    b[:n1] = m.b @ f
    b[n1:] = n.b @ e @ m.d

    c = np.zeros((m.ny, n1 + n2))
    c[:, :n1] = e @ m.c
    c[:, n1:] = -e @ m.d @ n.c

    d = e @ m.d
    sys = StateSpace(a, b, c, d)
    if n1 + n2:
        spec = Spectrum.from_eigenvalues(np.linalg.eigvals(a))
    else:
        spec = Spectrum.from_eigenvalues([])
    return sys, spec


def freq_response(sys: StateSpace, omega: float) -> np.ndarray:
    """Evaluate ``C (j w I - A)^{-1} B + D`` at frequency ``omega`` [rad/s]."""
    if sys.nx == 0:
        return sys.d.astype(complex)
    m = 1j * omega * np.eye(sys.nx) - sys.a
    smin = np.linalg.svd(m, compute_uv=False)[-1]
    scale = 1.0 + abs(omega) + np.linalg.norm(sys.a, "fro")
    if smin <= 1e-12 * scale:
        raise ResolventSingular(f"resolvent nearly singular at omega={omega}")
    x = np.linalg.solve(m, sys.b.astype(complex))
    return sys.c @ x + sys.d


def poles(sys: StateSpace) -> Spectrum:
    """Eigenvalues of the A-matrix.  Requires at least one state."""
    if sys.nx < 1:
        raise DimensionMismatch("a static system has no poles")
    # eigensolver failures propagate as LinAlgError; never swallowed
    eigs = np.linalg.eigvals(sys.a)
    return Spectrum.from_eigenvalues(eigs)


def spectral_abscissa(sys: StateSpace) -> float:
    """Max real part of the poles; ``-inf`` for a static system."""
    if sys.nx == 0:
        return float("-inf")
    return float(np.linalg.eigvals(sys.a).real.max())


def _series_pair(s1: StateSpace, s2: StateSpace) -> StateSpace:
    # signal order: u -> s1 -> s2 -> y
    if s2.nu != s1.ny:
        raise DimensionMismatch(
            f"series: {s1.ny} outputs feeding {s2.nu} inputs"
        )
    n1, n2 = s1.nx, s2.nx
    a = np.zeros((n1 + n2, n1 + n2))
    a[:n1, :n1] = s1.a
    a[n1:, :n1] = s2.b @ s1.c
    a[n1:, n1:] = s2.a
    b = np.zeros((n1 + n2, s1.nu))
    b[:n1] = s1.b
    b[n1:] = s2.b @ s1.d
    c = np.zeros((s2.ny, n1 + n2))
    c[:, :n1] = s2.d @ s1.c
    c[:, n1:] = s2.c
    return StateSpace(a, b, c, s2.d @ s1.d)


def _stack_diag(mats):
    rows = sum(m.shape[0] for m in mats)
    cols = sum(m.shape[1] for m in mats)
    out = np.zeros((rows, cols))
    r = c = 0
    for m in mats:
        out[r : r + m.shape[0], c : c + m.shape[1]] = m
        r += m.shape[0]
        c += m.shape[1]
    return out


def compose(mode: str, systems) -> StateSpace:
    """Stack realizations.

    modes:
      series     -- output of systems[i] feeds systems[i+1]
      parallel   -- shared input, outputs stacked vertically
      block_diag -- independent inputs and outputs on the diagonal
      sum        -- shared input, outputs added (transfer matrices add)
    """
    systems = list(systems)
    if not systems:
        raise DimensionMismatch("compose needs at least one system")
    if mode == "series":
        out = systems[0]
        for s in systems[1:]:
            out = _series_pair(out, s)
        return out
    if mode == "block_diag":
        return StateSpace(
            _stack_diag([s.a for s in systems]),
            _stack_diag([s.b for s in systems]),
            _stack_diag([s.c for s in systems]),
            _stack_diag([s.d for s in systems]),
        )
    if mode == "parallel":
        nu = systems[0].nu
        if any(s.nu != nu for s in systems):
            raise DimensionMismatch("parallel: all systems must share input width")
        return StateSpace(
            _stack_diag([s.a for s in systems]),
            np.vstack([s.b for s in systems]),
            _stack_diag([s.c for s in systems]),
            np.vstack([s.d for s in systems]),
        )
    if mode == "sum":
        nu, ny = systems[0].nu, systems[0].ny
        if any(s.nu != nu or s.ny != ny for s in systems):
            raise DimensionMismatch("sum: all systems must share dimensions")
        return StateSpace(
            _stack_diag([s.a for s in systems]),
            np.vstack([s.b for s in systems]),
            np.hstack([s.c for s in systems]),
            sum(s.d for s in systems),
        )
    raise ValueError(f"unknown compose mode {mode!r}")


# ---------------------------------------------------------------------------
# JSON system format: nested row-major arrays of finite doubles.

def ss_to_json(sys: StateSpace) -> dict:
    return {
        "A": sys.a.tolist(),
        "B": sys.b.tolist(),
        "C": sys.c.tolist(),
        "D": sys.d.tolist(),
    }


def ss_from_json(obj: dict) -> StateSpace:
    try:
        return StateSpace(
            np.asarray(obj["A"], dtype=float),
            np.asarray(obj["B"], dtype=float),
            np.asarray(obj["C"], dtype=float),
            np.asarray(obj["D"], dtype=float),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"bad state-space object: {exc}") from exc


def plant_to_json(p: PartitionedPlant) -> dict:
    return {
        "A": p.a.tolist(),
        "B1": p.b1.tolist(),
        "B2": p.b2.tolist(),
        "C1": p.c1.tolist(),
        "C2": p.c2.tolist(),
        "D11": p.d11.tolist(),
        "D12": p.d12.tolist(),
        "D21": p.d21.tolist(),
        "D22": p.d22.tolist(),
        "nw": p.nw,
        "nu": p.nu,
        "nz": p.nz,
        "ny": p.ny,
    }


def plant_from_json(obj: dict) -> PartitionedPlant:
    try:
        plant = PartitionedPlant(
            np.asarray(obj["A"], dtype=float),
            np.asarray(obj["B1"], dtype=float),
            np.asarray(obj["B2"], dtype=float),
            np.asarray(obj["C1"], dtype=float),
            np.asarray(obj["C2"], dtype=float),
            np.asarray(obj["D11"], dtype=float),
            np.asarray(obj["D12"], dtype=float),
            np.asarray(obj["D21"], dtype=float),
            np.asarray(obj["D22"], dtype=float),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"bad plant object: {exc}") from exc
    for dim in ("nw", "nu", "nz", "ny"):
        if dim in obj and int(obj[dim]) != getattr(plant, dim):
            raise ValueError(f"declared {dim}={obj[dim]} disagrees with matrices")
    return plant
