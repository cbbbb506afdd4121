"""Differentiable controller parameterizations.

Each structure maps a low-dimensional tunable vector x to a controller
realization (A_K, B_K, C_K, D_K) together with exact analytic derivatives.
The derivative container stores one (possibly sparse) quadruple per
parameter; the sparsity pattern never depends on x.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BoundViolation, DimensionMismatch, MissingScheduleValue
from .ss_core import StateSpace, compose

__all__ = [
    "ParamVector",
    "ParamJacobian",
    "StructureSpec",
    "StaticGain",
    "RealizablePid",
    "ObserverBased",
    "FullOrder",
    "Decentralized",
    "FirstOrderFilter",
    "PolynomialScheduled",
    "FixedBlock",
    "assemble",
    "jacobian",
    "init_params",
    "structure_to_json",
    "structure_from_json",
]

TAU_MIN = 1e-4     # lower bound for the realizable-PID filter constant
TAU_ZERO = 1e-2    # value the "zeros" init snaps tau to


@dataclass(frozen=True)
class ParamVector:
    """Tunable parameter vector with optional per-entry box bounds."""

    x: np.ndarray
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).ravel().copy()
        x.flags.writeable = False
        object.__setattr__(self, "x", x)
        for name in ("lo", "hi"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float).ravel().copy()
                if v.shape != x.shape:
                    raise DimensionMismatch(f"{name} must match x in length")
                v.flags.writeable = False
            object.__setattr__(self, name, v)

    def __len__(self):
        return self.x.size

    def check_bounds(self, slack: float = 1e-12):
        if self.lo is not None and np.any(self.x < self.lo - slack):
            raise BoundViolation("parameter below its lower bound")
        if self.hi is not None and np.any(self.x > self.hi + slack):
            raise BoundViolation("parameter above its upper bound")


@dataclass
class ParamJacobian:
    """Per-parameter derivative quadruples d(A_K,B_K,C_K,D_K)/dx_k.

    ``quads[k]`` is a 4-tuple whose entries are dense arrays or None
    (meaning identically zero).
    """

    n: int
    nk: int
    nu: int
    ny: int
    quads: list

    def dense(self, k: int):
        da, db, dc, dd = self.quads[k]
        return (
            da if da is not None else np.zeros((self.nk, self.nk)),
            db if db is not None else np.zeros((self.nk, self.ny)),
            dc if dc is not None else np.zeros((self.nu, self.nk)),
            dd if dd is not None else np.zeros((self.nu, self.ny)),
        )


def _xarr(x):
    if isinstance(x, ParamVector):
        return x.x
    return np.asarray(x, dtype=float).ravel()


class StructureSpec:
    """Base class for controller parameterizations."""

    needs_schedule = False

    def parameter_count(self) -> int:
        raise NotImplementedError

    def default_bounds(self):
        n = self.parameter_count()
        return np.full(n, -np.inf), np.full(n, np.inf)

    def _assemble(self, x, schedule_value):
        raise NotImplementedError

    def _jacobian_quads(self, x, schedule_value):
        raise NotImplementedError

    def io_dims(self):
        """(controller outputs nu, controller inputs ny)."""
        raise NotImplementedError

    def state_dim(self) -> int:
        raise NotImplementedError

    def to_json(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class StaticGain(StructureSpec):
    """Static output feedback u = D_K y; x fills D_K row-major."""

    nu: int
    ny: int

    def parameter_count(self):
        return self.nu * self.ny

    def io_dims(self):
        return self.nu, self.ny

    def state_dim(self):
        return 0

    def _assemble(self, x, schedule_value):
        return StateSpace.static(x.reshape(self.nu, self.ny))

    def _jacobian_quads(self, x, schedule_value):
        quads = []
        for k in range(self.nu * self.ny):
            dd = np.zeros((self.nu, self.ny))
            dd[k // self.ny, k % self.ny] = 1.0
            quads.append((None, None, None, dd))
        return quads

    def to_json(self):
        return {"type": "static", "nu": self.nu, "ny": self.ny}


@dataclass(frozen=True)
class RealizablePid(StructureSpec):
    """Realizable PID with filtered derivative.

    Realization::

        A_K = [[0, 0], [0, -1/tau]]      B_K = [1, -kd/tau]'
        C_K = [ki, 1/tau]                D_K = kp + kd/tau

    x is (tau, kp, ki, kd) with tau tunable (bounded below by TAU_MIN),
    or (kp, ki, kd) with tau fixed.  ``kd_fixed`` freezes the derivative
    gain (used by the premade 2-DOF arrangement where the feedback block
    is a pure PI).
    """

    tau_tunable: bool = True
    tau: float | None = None
    kd_fixed: float | None = None

    def __post_init__(self):
        if not self.tau_tunable and self.tau is None:
            raise ValueError("fixed-tau PID needs a tau value")
        if self.tau is not None and self.tau < TAU_MIN:
            raise ValueError(f"tau must be >= {TAU_MIN}")

    def parameter_count(self):
        n = 3 if self.kd_fixed is None else 2
        return n + (1 if self.tau_tunable else 0)

    def io_dims(self):
        return 1, 1

    def state_dim(self):
        return 2

    def default_bounds(self):
        lo, hi = super().default_bounds()
        if self.tau_tunable:
            lo = lo.copy()
            lo[0] = TAU_MIN
        return lo, hi

    def _split(self, x):
        i = 0
        if self.tau_tunable:
            tau = float(x[0])
            i = 1
        else:
            tau = float(self.tau)
        kp, ki = float(x[i]), float(x[i + 1])
        kd = float(self.kd_fixed) if self.kd_fixed is not None else float(x[i + 2])
        return tau, kp, ki, kd

    def _assemble(self, x, schedule_value):
        tau, kp, ki, kd = self._split(x)
        if tau < TAU_MIN:
            raise BoundViolation(f"tau={tau} below {TAU_MIN}")
        a = np.array([[0.0, 0.0], [0.0, -1.0 / tau]])
        b = np.array([[1.0], [-kd / tau]])
        c = np.array([[ki, 1.0 / tau]])
        d = np.array([[kp + kd / tau]])
        return StateSpace(a, b, c, d)

    def _jacobian_quads(self, x, schedule_value):
        tau, kp, ki, kd = self._split(x)
        quads = []
        if self.tau_tunable:
            it2 = 1.0 / tau**2
            da = np.array([[0.0, 0.0], [0.0, it2]])
            db = np.array([[0.0], [kd * it2]])
            dc = np.array([[0.0, -it2]])
            dd = np.array([[-kd * it2]])
            quads.append((da, db, dc, dd))
        quads.append((None, None, None, np.array([[1.0]])))            # kp
        quads.append((None, None, np.array([[1.0, 0.0]]), None))      # ki
        if self.kd_fixed is None:                                      # kd
            quads.append(
                (
                    None,
                    np.array([[0.0], [-1.0 / tau]]),
                    None,
                    np.array([[1.0 / tau]]),
                )
            )
        return quads

    def to_json(self):
        out = {"type": "pid", "tau_tunable": self.tau_tunable}
        if self.tau is not None:
            out["tau"] = self.tau
        if self.kd_fixed is not None:
            out["kd_fixed"] = self.kd_fixed
        return out


@dataclass(frozen=True, eq=False)
class ObserverBased(StructureSpec):
    """Observer-based controller on fixed plant data (A, B2, C2).

    x packs the state-feedback gain Kc (nu x nk, row-major) followed by
    the estimator gain Kf (nk x ny, row-major); the realization is
    (A - B2 Kc - Kf C2, Kf, -Kc, 0).
    """

    a: np.ndarray
    b2: np.ndarray
    c2: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a", np.atleast_2d(np.asarray(self.a, float)))
        object.__setattr__(self, "b2", np.atleast_2d(np.asarray(self.b2, float)))
        object.__setattr__(self, "c2", np.atleast_2d(np.asarray(self.c2, float)))
        if self.a.shape[0] != self.a.shape[1]:
            raise DimensionMismatch("A must be square")
        if self.b2.shape[0] != self.a.shape[0] or self.c2.shape[1] != self.a.shape[0]:
            raise DimensionMismatch("B2/C2 must match A")

    @property
    def nk(self):
        return self.a.shape[0]

    def parameter_count(self):
        nu, ny = self.io_dims()
        return self.nk * nu + ny * self.nk

    def io_dims(self):
        return self.b2.shape[1], self.c2.shape[0]

    def state_dim(self):
        return self.nk

    def _split(self, x):
        nu, ny = self.io_dims()
        nk = self.nk
        kc = x[: nu * nk].reshape(nu, nk)
        kf = x[nu * nk :].reshape(nk, ny)
        return kc, kf

    def _assemble(self, x, schedule_value):
        kc, kf = self._split(x)
        a = self.a - self.b2 @ kc - kf @ self.c2
        return StateSpace(a, kf, -kc, np.zeros((kc.shape[0], kf.shape[1])))

    def _jacobian_quads(self, x, schedule_value):
        nu, ny = self.io_dims()
        nk = self.nk
        quads = []
        for idx in range(nu * nk):
            e = np.zeros((nu, nk))
            e[idx // nk, idx % nk] = 1.0
            quads.append((-self.b2 @ e, None, -e, None))
        for idx in range(nk * ny):
            e = np.zeros((nk, ny))
            e[idx // ny, idx % ny] = 1.0
            quads.append((-e @ self.c2, e, None, None))
        return quads

    def to_json(self):
        return {
            "type": "observer",
            "A": self.a.tolist(),
            "B2": self.b2.tolist(),
            "C2": self.c2.tolist(),
        }


@dataclass(frozen=True)
class FullOrder(StructureSpec):
    """Unstructured controller of order nk; x fills A_K, B_K, C_K, D_K."""

    nk: int
    nu: int
    ny: int

    def parameter_count(self):
        return self.nk**2 + self.nk * self.ny + self.nk * self.nu + self.ny * self.nu

    def io_dims(self):
        return self.nu, self.ny

    def state_dim(self):
        return self.nk

    def _split(self, x):
        nk, nu, ny = self.nk, self.nu, self.ny
        i = 0
        a = x[i : i + nk * nk].reshape(nk, nk); i += nk * nk
        b = x[i : i + nk * ny].reshape(nk, ny); i += nk * ny
        c = x[i : i + nu * nk].reshape(nu, nk); i += nu * nk
        d = x[i : i + nu * ny].reshape(nu, ny)
        return a, b, c, d

    def _assemble(self, x, schedule_value):
        a, b, c, d = self._split(x)
        return StateSpace(a, b, c, d)

    def _jacobian_quads(self, x, schedule_value):
        nk, nu, ny = self.nk, self.nu, self.ny
        quads = []
        shapes = [
            ((nk, nk), 0),
            ((nk, ny), 1),
            ((nu, nk), 2),
            ((nu, ny), 3),
        ]
        for shape, slot in shapes:
            for idx in range(shape[0] * shape[1]):
                e = np.zeros(shape)
                e[idx // shape[1], idx % shape[1]] = 1.0
                quad = [None, None, None, None]
                quad[slot] = e
                quads.append(tuple(quad))
        return quads

    def to_json(self):
        return {"type": "full_order", "nk": self.nk, "nu": self.nu, "ny": self.ny}


@dataclass(frozen=True)
class Decentralized(StructureSpec):
    """Block-diagonal aggregation of child structures."""

    children: tuple

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        if not self.children:
            raise ValueError("decentralized structure needs children")

    @property
    def needs_schedule(self):
        return any(c.needs_schedule for c in self.children)

    def parameter_count(self):
        return sum(c.parameter_count() for c in self.children)

    def io_dims(self):
        dims = [c.io_dims() for c in self.children]
        return sum(d[0] for d in dims), sum(d[1] for d in dims)

    def state_dim(self):
        return sum(c.state_dim() for c in self.children)

    def default_bounds(self):
        los, his = zip(*(c.default_bounds() for c in self.children))
        return np.concatenate(los), np.concatenate(his)

    def _child_slices(self):
        out = []
        i = 0
        for c in self.children:
            n = c.parameter_count()
            out.append((c, slice(i, i + n)))
            i += n
        return out

    def _assemble(self, x, schedule_value):
        parts = [
            c._assemble(x[s], schedule_value if c.needs_schedule else None)
            for c, s in self._child_slices()
        ]
        return compose("block_diag", parts)

    def _jacobian_quads(self, x, schedule_value):
        nk, nu, ny = self.state_dim(), *self.io_dims()
        quads = []
        s_off = u_off = y_off = 0
        for c, sl in self._child_slices():
            cq = c._jacobian_quads(x[sl], schedule_value if c.needs_schedule else None)
            cnk = c.state_dim()
            cnu, cny = c.io_dims()
            for da, db, dc, dd in cq:
                ea = eb = ec = ed = None
                if da is not None:
                    ea = np.zeros((nk, nk))
                    ea[s_off : s_off + cnk, s_off : s_off + cnk] = da
                if db is not None:
                    eb = np.zeros((nk, ny))
                    eb[s_off : s_off + cnk, y_off : y_off + cny] = db
                if dc is not None:
                    ec = np.zeros((nu, nk))
                    ec[u_off : u_off + cnu, s_off : s_off + cnk] = dc
                if dd is not None:
                    ed = np.zeros((nu, ny))
                    ed[u_off : u_off + cnu, y_off : y_off + cny] = dd
                quads.append((ea, eb, ec, ed))
            s_off += cnk
            u_off += cnu
            y_off += cny
        return quads

    def to_json(self):
        return {
            "type": "decentralized",
            "children": [c.to_json() for c in self.children],
        }


@dataclass(frozen=True)
class FirstOrderFilter(StructureSpec):
    """Unity-DC-gain low-pass a/(s+a), realized as (-a, a, 1, 0); x = (a,)."""

    def parameter_count(self):
        return 1

    def io_dims(self):
        return 1, 1

    def state_dim(self):
        return 1

    def _assemble(self, x, schedule_value):
        a = float(x[0])
        return StateSpace(np.array([[-a]]), np.array([[a]]), np.array([[1.0]]), None)

    def _jacobian_quads(self, x, schedule_value):
        return [
            (np.array([[-1.0]]), np.array([[1.0]]), None, None),
        ]

    def to_json(self):
        return {"type": "filter1"}


@dataclass(frozen=True, eq=False)
class PolynomialScheduled(StructureSpec):
    """Static gain scheduled polynomially in a measured parameter q.

    D_K(q, x) = base + sum_{j=1..degree} (q - q0)^j K_j(x), each K_j a
    nu x ny gain filled row-major; x stacks K_1, ..., K_degree.
    """

    base: np.ndarray
    degree: int
    q0: float

    needs_schedule = True

    def __post_init__(self):
        base = np.atleast_2d(np.asarray(self.base, dtype=float))
        object.__setattr__(self, "base", base)
        if self.degree < 1:
            raise ValueError("degree must be >= 1")

    def parameter_count(self):
        return self.degree * self.base.size

    def io_dims(self):
        return self.base.shape

    def state_dim(self):
        return 0

    def _assemble(self, x, schedule_value):
        if schedule_value is None:
            raise MissingScheduleValue("scheduled gain needs a schedule value q")
        nu, ny = self.base.shape
        d = self.base.copy()
        dq = schedule_value - self.q0
        for j in range(1, self.degree + 1):
            block = x[(j - 1) * nu * ny : j * nu * ny].reshape(nu, ny)
            d = d + dq**j * block
        return StateSpace.static(d)

    def _jacobian_quads(self, x, schedule_value):
        if schedule_value is None:
            raise MissingScheduleValue("scheduled gain needs a schedule value q")
        nu, ny = self.base.shape
        dq = schedule_value - self.q0
        quads = []
        for j in range(1, self.degree + 1):
            w = dq**j
            for idx in range(nu * ny):
                if w == 0.0:
                    quads.append((None, None, None, np.zeros((nu, ny))))
                else:
                    e = np.zeros((nu, ny))
                    e[idx // ny, idx % ny] = w
                    quads.append((None, None, None, e))
        return quads

    def to_json(self):
        return {
            "type": "poly_scheduled",
            "base": self.base.tolist(),
            "degree": self.degree,
            "q0": self.q0,
        }


@dataclass(frozen=True, eq=False)
class FixedBlock(StructureSpec):
    """A frozen realization with no tunable parameters."""

    system: StateSpace

    def parameter_count(self):
        return 0

    def io_dims(self):
        return self.system.ny, self.system.nu

    def state_dim(self):
        return self.system.nx

    def _assemble(self, x, schedule_value):
        return self.system

    def _jacobian_quads(self, x, schedule_value):
        return []

    def to_json(self):
        return {
            "type": "fixed",
            "A": self.system.a.tolist(),
            "B": self.system.b.tolist(),
            "C": self.system.c.tolist(),
            "D": self.system.d.tolist(),
        }


def _validated_x(spec: StructureSpec, x) -> np.ndarray:
    if isinstance(x, ParamVector):
        x.check_bounds()
        arr = x.x
    else:
        arr = np.asarray(x, dtype=float).ravel()
        lo, hi = spec.default_bounds()
        if np.any(arr < lo - 1e-12) or np.any(arr > hi + 1e-12):
            raise BoundViolation("parameter vector violates the structure bounds")
    if arr.size != spec.parameter_count():
        raise DimensionMismatch(
            f"structure expects {spec.parameter_count()} parameters, got {arr.size}"
        )
    return arr


def assemble(spec: StructureSpec, x, schedule_value: float | None = None) -> StateSpace:
    """Build the controller realization K(x) (optionally at schedule value q)."""
    arr = _validated_x(spec, x)
    if spec.needs_schedule and schedule_value is None:
        raise MissingScheduleValue("this structure requires a schedule value")
    return spec._assemble(arr, schedule_value)


def jacobian(spec: StructureSpec, x, schedule_value: float | None = None) -> ParamJacobian:
    """Exact derivatives of the realization with respect to each parameter."""
    arr = _validated_x(spec, x)
    if spec.needs_schedule and schedule_value is None:
        raise MissingScheduleValue("this structure requires a schedule value")
    quads = spec._jacobian_quads(arr, schedule_value)
    nu, ny = spec.io_dims()
    return ParamJacobian(len(quads), spec.state_dim(), nu, ny, quads)


def init_params(spec: StructureSpec, strategy="zeros", seed=None, given=None) -> ParamVector:
    """Initial parameter vector: 'zeros' (bound-respecting), 'given' or 'random'.

    Random draws are uniform on [-1, 1], clipped to the bounds, and fully
    determined by the seed.
    """
    lo, hi = spec.default_bounds()
    n = spec.parameter_count()
    if strategy == "zeros":
        x = np.zeros(n)
        # snap bounded-below entries (the PID tau) to a safe interior value
        snap = lo > 0
        x[snap] = np.maximum(lo[snap], TAU_ZERO)
        x = np.clip(x, lo, hi)
    elif strategy == "given":
        if given is None:
            raise ValueError("strategy 'given' needs a vector")
        x = np.asarray(given, dtype=float).ravel()
        if x.size != n:
            raise DimensionMismatch(f"expected {n} parameters, got {x.size}")
        if np.any(x < lo - 1e-12) or np.any(x > hi + 1e-12):
            raise BoundViolation("given initial vector violates bounds")
    elif strategy == "random":
        rng = np.random.default_rng(seed)
        x = np.clip(rng.uniform(-1.0, 1.0, size=n), lo, hi)
        snap = lo > 0
        x[snap] = np.maximum(x[snap], np.minimum(TAU_ZERO + lo[snap], hi[snap]))
    else:
        raise ValueError(f"unknown init strategy {strategy!r}")
    return ParamVector(x, lo, hi)


def structure_to_json(spec: StructureSpec) -> dict:
    return spec.to_json()


def structure_from_json(obj: dict) -> StructureSpec:
    kind = obj.get("type")
    if kind == "static":
        return StaticGain(int(obj["nu"]), int(obj["ny"]))
    if kind == "pid":
        return RealizablePid(
            tau_tunable=bool(obj.get("tau_tunable", True)),
            tau=obj.get("tau"),
            kd_fixed=obj.get("kd_fixed"),
        )
    if kind == "observer":
        return ObserverBased(
            np.asarray(obj["A"], float),
            np.asarray(obj["B2"], float),
            np.asarray(obj["C2"], float),
        )
    if kind == "full_order":
        return FullOrder(int(obj["nk"]), int(obj["nu"]), int(obj["ny"]))
    if kind == "decentralized":
        return Decentralized(tuple(structure_from_json(c) for c in obj["children"]))
    if kind == "filter1":
        return FirstOrderFilter()
    if kind == "poly_scheduled":
        return PolynomialScheduled(
            np.asarray(obj["base"], float), int(obj["degree"]), float(obj["q0"])
        )
    if kind == "fixed":
        return FixedBlock(
            StateSpace(
                np.asarray(obj["A"], float),
                np.asarray(obj["B"], float),
                np.asarray(obj["C"], float),
                np.asarray(obj["D"], float),
            )
        )
    raise ValueError(f"unknown structure type {kind!r}")
