"""Delay networks and the boundary-controlled wave benchmark.

The plant here is a 1-D wave equation with anti-stable boundary damping
(parameter q > 0, q != 1) and velocity actuation at the opposite end.
Prestabilizing with a static velocity loop splits the resulting transfer
into a one-state rational part plus a stable remainder made of integrators
and pure transport delays.  This module builds those pieces, reassembles
implementable controllers from a finite-dimensional design gain, and
simulates closed loops two independent ways:

* a delay-network integrator (RK4 states, ring-buffered delays, linear
  interpolation, instantaneous couplings resolved by one linear solve), and
* a leapfrog PDE scheme at unit CFL ratio, which propagates the interior
  exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import (
    AlgebraicLoop,
    CFLViolation,
    DimensionMismatch,
    QEqualsOne,
    StepTooLarge,
)
from .ss_core import StateSpace

__all__ = [
    "DelayNetwork",
    "NetworkSimulator",
    "WaveScenario",
    "build_gtilde",
    "build_phi",
    "recover_controller",
    "wave_closed_loop_network",
    "simulate_network",
    "simulate_wave_pde",
    "network_freq_response",
    "boundary_transfer",
    "prestabilized_transfer",
    "verify_decomposition",
    "write_trace_csv",
    "PRESTAB_GAIN",
]

# static prestabilizing loop: velocity feedback at the actuated boundary
PRESTAB_GAIN = (0.0, 0.0, 1.0)


def _coupling(q: float) -> float:
    """Reflection-ratio constant (1+q)/(1-q) of the damped boundary."""
    if not (q > 0.0) or q == 1.0:
        raise QEqualsOne("boundary damping parameter must satisfy q > 0, q != 1")
    return (1.0 + q) / (1.0 - q)


# ---------------------------------------------------------------------------
# delay networks


@dataclass
class _Block:
    kind: str                     # 'ss' | 'delay' | 'gain'
    sys: StateSpace | None = None
    theta: float = 0.0
    gain: np.ndarray | None = None

    @property
    def in_dim(self):
        if self.kind == "ss":
            return self.sys.nu
        if self.kind == "delay":
            return self.gain.shape[0]  # width stored as identity
        return self.gain.shape[1]

    @property
    def out_dim(self):
        if self.kind == "ss":
            return self.sys.ny
        if self.kind == "delay":
            return self.gain.shape[0]
        return self.gain.shape[0]

    @property
    def feedthrough(self):
        if self.kind == "ss":
            return self.sys.d
        if self.kind == "delay":
            return np.zeros_like(self.gain)
        return self.gain


class DelayNetwork:
    """Interconnection of rational blocks, pure delays and static gains.

    Signals are summed at block inputs and at named external outputs; edge
    weights are matrices (None means identity).  Every instantaneous loop
    must be well posed: the global feedthrough loop matrix is required to
    be invertible, which the standard constructions here guarantee by
    routing every feedback path through a strictly proper block or a delay.
    """

    def __init__(self):
        self.blocks: dict[str, _Block] = {}
        self.edges: list = []  # (src, dst, weight)
        self.inputs: dict[str, int] = {}
        self.outputs: dict[str, int] = {}

    # -- construction -----------------------------------------------------
    def add_input(self, name: str, dim: int = 1):
        self._fresh(name, self.inputs)
        self.inputs[name] = int(dim)

    def add_output(self, name: str, dim: int = 1):
        self._fresh(name, self.outputs)
        self.outputs[name] = int(dim)

    def add_ss(self, name: str, sys: StateSpace):
        self._fresh(name, self.blocks)
        self.blocks[name] = _Block("ss", sys=sys)

    def add_delay(self, name: str, theta: float, width: int = 1):
        if theta <= 0:
            raise ValueError("delays must be strictly positive")
        self._fresh(name, self.blocks)
        self.blocks[name] = _Block("delay", theta=float(theta), gain=np.eye(width))

    def add_gain(self, name: str, gain):
        self._fresh(name, self.blocks)
        self.blocks[name] = _Block("gain", gain=np.atleast_2d(np.asarray(gain, float)))

    def _fresh(self, name, table):
        if name in self.blocks or name in self.inputs or name in self.outputs:
            raise ValueError(f"name {name!r} already used")

    def connect(self, src, dst, weight=None):
        """Route src -> dst; src is ('in', name) or ('blk', name), dst is
        ('blk', name) or ('out', name).  weight has shape (dst_dim, src_dim)."""
        src_dim = self._port_dim(src, out_side=True)
        dst_dim = self._port_dim(dst, out_side=False)
        if weight is None:
            if src_dim != dst_dim:
                raise DimensionMismatch(
                    f"identity edge {src}->{dst} needs equal dims ({src_dim}, {dst_dim})"
                )
            w = np.eye(src_dim)
        else:
            w = np.atleast_2d(np.asarray(weight, float))
            if w.shape != (dst_dim, src_dim):
                raise DimensionMismatch(
                    f"edge {src}->{dst} weight must be {(dst_dim, src_dim)}, got {w.shape}"
                )
        self.edges.append((src, dst, w))

    def _port_dim(self, ref, out_side: bool) -> int:
        kind, name = ref
        if kind == "in":
            if not out_side:
                raise ValueError("external inputs are sources only")
            return self.inputs[name]
        if kind == "out":
            if out_side:
                raise ValueError("external outputs are sinks only")
            return self.outputs[name]
        if kind != "blk":
            raise ValueError(f"bad port kind {kind!r}")
        block = self.blocks[name]
        return block.out_dim if out_side else block.in_dim

    def embed(self, other: "DelayNetwork", prefix: str):
        """Merge another network, exposing its external ports as identity
        gain blocks named ``prefix + port``."""
        rename = {}
        for name, block in other.blocks.items():
            new = prefix + name
            rename[name] = new
            self.blocks[new] = block
        ports = {}
        for name, dim in other.inputs.items():
            pname = prefix + name
            self.add_gain(pname, np.eye(dim))
            ports[("in", name)] = ("blk", pname)
        for name, dim in other.outputs.items():
            pname = prefix + name
            self.add_gain(pname, np.eye(dim))
            ports[("out", name)] = ("blk", pname)
        for src, dst, w in other.edges:
            src2 = ports.get(src, ("blk", rename.get(src[1], src[1])) if src[0] == "blk" else src)
            dst2 = ports.get(dst, ("blk", rename.get(dst[1], dst[1])) if dst[0] == "blk" else dst)
            self.edges.append((src2, dst2, w))
        return ports

    # -- analysis ----------------------------------------------------------
    def min_delay(self) -> float:
        thetas = [b.theta for b in self.blocks.values() if b.kind == "delay"]
        return min(thetas) if thetas else math.inf

    def has_delay_free_cycle(self) -> bool:
        """True when some feedback cycle passes only through instantaneous
        feedthroughs (no strictly proper block, no delay on the cycle)."""
        instant = {
            name
            for name, b in self.blocks.items()
            if np.any(b.feedthrough != 0.0)
        }
        adj = {name: set() for name in instant}
        for src, dst, w in self.edges:
            if src[0] == "blk" and dst[0] == "blk":
                if src[1] in instant and dst[1] in instant and np.any(w != 0.0):
                    adj[src[1]].add(dst[1])
        color = {}

        def dfs(u):
            color[u] = 1
            for v in adj[u]:
                if color.get(v, 0) == 1:
                    return True
                if color.get(v, 0) == 0 and dfs(v):
                    return True
            color[u] = 2
            return False

        return any(color.get(u, 0) == 0 and dfs(u) for u in adj)

    def _layout(self):
        names = list(self.blocks)
        out_off, in_off = {}, {}
        o = i = 0
        for n in names:
            b = self.blocks[n]
            out_off[n] = slice(o, o + b.out_dim)
            in_off[n] = slice(i, i + b.in_dim)
            o += b.out_dim
            i += b.in_dim
        ein_off = {}
        e = 0
        for n, d in self.inputs.items():
            ein_off[n] = slice(e, e + d)
            e += d
        eout_off = {}
        eo = 0
        for n, d in self.outputs.items():
            eout_off[n] = slice(eo, eo + d)
            eo += d
        return names, out_off, in_off, ein_off, eout_off, o, i, e, eo

    def _matrices(self):
        names, out_off, in_off, ein_off, eout_off, n_out, n_in, n_ein, n_eout = self._layout()
        win_blk = np.zeros((n_in, n_out))
        win_ext = np.zeros((n_in, n_ein))
        wout_blk = np.zeros((n_eout, n_out))
        wout_ext = np.zeros((n_eout, n_ein))
        for src, dst, w in self.edges:
            if dst[0] == "blk":
                rows = in_off[dst[1]]
                if src[0] == "blk":
                    win_blk[rows, out_off[src[1]]] += w
                else:
                    win_ext[rows, ein_off[src[1]]] += w
            else:
                rows = eout_off[dst[1]]
                if src[0] == "blk":
                    wout_blk[rows, out_off[src[1]]] += w
                else:
                    wout_ext[rows, ein_off[src[1]]] += w
        dblk = np.zeros((n_out, n_in))
        for n in names:
            b = self.blocks[n]
            dblk[out_off[n], in_off[n]] = b.feedthrough
        return names, out_off, in_off, win_blk, win_ext, wout_blk, wout_ext, dblk


def network_freq_response(net: DelayNetwork, s: complex) -> np.ndarray:
    """Transfer matrix of the network at complex frequency s
    (external outputs stacked over external inputs)."""
    names, out_off, in_off, win_blk, win_ext, wout_blk, wout_ext, _ = net._matrices()
    n_out = win_blk.shape[1]
    hblk = np.zeros((n_out, win_blk.shape[0]), dtype=complex)
    for n in names:
        b = net.blocks[n]
        if b.kind == "ss":
            h = _ss_transfer(b.sys, s)
        elif b.kind == "delay":
            h = np.exp(-s * b.theta) * b.gain
        else:
            h = b.gain.astype(complex)
        hblk[out_off[n], in_off[n]] = h
    lhs = np.eye(n_out, dtype=complex) - hblk @ win_blk
    try:
        y = np.linalg.solve(lhs, hblk @ win_ext)
    except np.linalg.LinAlgError as exc:
        raise AlgebraicLoop(f"network response singular at s={s}") from exc
    return wout_blk @ y + wout_ext


def _ss_transfer(sys: StateSpace, s: complex) -> np.ndarray:
    if sys.nx == 0:
        return sys.d.astype(complex)
    m = s * np.eye(sys.nx) - sys.a
    return sys.c @ np.linalg.solve(m, sys.b.astype(complex)) + sys.d


class NetworkSimulator:
    """Fixed-step integrator for a delay network.

    States advance with classical RK4; each delay keeps its input history on
    the step grid and serves stage reads by linear interpolation.  The
    instantaneous couplings form one constant linear system that is factored
    once.  Per step the caller first ``record``s the signals at the current
    grid time (pushing delay histories), then ``advance``s the states.
    """

    def __init__(self, net: DelayNetwork, dt: float, n_steps: int):
        if dt <= 0:
            raise ValueError("dt must be positive")
        theta_min = net.min_delay()
        if dt > theta_min / 10.0 + 1e-15:
            raise StepTooLarge(
                f"dt={dt} exceeds a tenth of the shortest delay {theta_min}"
            )
        self.net = net
        self.dt = float(dt)
        (
            self._names,
            self._out_off,
            self._in_off,
            self._win_blk,
            self._win_ext,
            self._wout_blk,
            self._wout_ext,
            self._dblk,
        ) = net._matrices()
        n_out = self._win_blk.shape[1]
        loop = np.eye(n_out) - self._dblk @ self._win_blk
        if n_out:
            smin = np.linalg.svd(loop, compute_uv=False)[-1]
            if smin <= 1e-12 * (1.0 + np.linalg.norm(loop)):
                raise AlgebraicLoop("instantaneous network loop is singular")
        self._loop_lu = scipy.linalg.lu_factor(loop) if n_out else None

        self._ss_names = [n for n in self._names if net.blocks[n].kind == "ss"]
        self._x_off = {}
        nx = 0
        for n in self._ss_names:
            b = net.blocks[n]
            self._x_off[n] = slice(nx, nx + b.sys.nx)
            nx += b.sys.nx
        self.x = np.zeros(nx)

        self._delay_names = [n for n in self._names if net.blocks[n].kind == "delay"]
        self._hist = {
            n: np.zeros((n_steps + 3, net.blocks[n].in_dim)) for n in self._delay_names
        }
        self._written = -1

    # -- signal algebra ----------------------------------------------------
    def _delay_read(self, name: str, t: float) -> np.ndarray:
        hist = self._hist[name]
        if t < -1e-12:
            return np.zeros(hist.shape[1])
        pos = t / self.dt
        i0 = int(math.floor(pos + 1e-9))
        frac = pos - i0
        if frac < 1e-9:
            return hist[min(i0, self._written)]
        i1 = min(i0 + 1, self._written)
        i0 = min(i0, self._written)
        return (1.0 - frac) * hist[i0] + frac * hist[i1]

    def _offsets(self, t: float, x: np.ndarray) -> np.ndarray:
        offs = np.zeros(self._win_blk.shape[1])
        for n in self._names:
            b = self.net.blocks[n]
            if b.kind == "ss" and b.sys.nx:
                offs[self._out_off[n]] = b.sys.c @ x[self._x_off[n]]
            elif b.kind == "delay":
                offs[self._out_off[n]] = self._delay_read(n, t - b.theta)
        return offs

    def _signals(self, t: float, x: np.ndarray, uext: np.ndarray):
        rhs = self._offsets(t, x) + self._dblk @ (self._win_ext @ uext)
        y = scipy.linalg.lu_solve(self._loop_lu, rhs) if self._loop_lu else rhs
        u = self._win_blk @ y + self._win_ext @ uext
        return y, u

    def external_gain(self) -> np.ndarray:
        """Constant instantaneous map from external inputs to outputs."""
        rhs = self._dblk @ self._win_ext
        y = scipy.linalg.lu_solve(self._loop_lu, rhs) if self._loop_lu else rhs
        return self._wout_blk @ y + self._wout_ext

    def output_offset(self, t: float) -> np.ndarray:
        """External outputs with the external inputs clamped to zero."""
        offs = self._offsets(t, self.x)
        y = scipy.linalg.lu_solve(self._loop_lu, offs) if self._loop_lu else offs
        return self._wout_blk @ y

    def record(self, t: float, uext) -> np.ndarray:
        """Resolve signals at grid time t, push delay histories, and return
        the external outputs."""
        uext = np.atleast_1d(np.asarray(uext, float))
        y, u = self._signals(t, self.x, uext)
        idx = int(round(t / self.dt))
        for n in self._delay_names:
            self._hist[n][idx] = u[self._in_off[n]]
        self._written = max(self._written, idx)
        return self._wout_blk @ y + self._wout_ext @ uext

    def _deriv(self, t: float, x: np.ndarray, uext: np.ndarray) -> np.ndarray:
        _, u = self._signals(t, x, uext)
        dx = np.zeros_like(x)
        for n in self._ss_names:
            b = self.net.blocks[n].sys
            if b.nx:
                dx[self._x_off[n]] = b.a @ x[self._x_off[n]] + b.b @ u[self._in_off[n]]
        return dx

    def advance(self, t: float, uext_fn):
        """One RK4 step from t to t + dt; uext_fn(tau) supplies the external
        inputs at the stage times."""
        dt = self.dt
        x = self.x
        k1 = self._deriv(t, x, np.atleast_1d(np.asarray(uext_fn(t), float)))
        k2 = self._deriv(
            t + dt / 2, x + dt / 2 * k1,
            np.atleast_1d(np.asarray(uext_fn(t + dt / 2), float)),
        )
        k3 = self._deriv(
            t + dt / 2, x + dt / 2 * k2,
            np.atleast_1d(np.asarray(uext_fn(t + dt / 2), float)),
        )
        k4 = self._deriv(
            t + dt, x + dt * k3, np.atleast_1d(np.asarray(uext_fn(t + dt), float))
        )
        self.x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def simulate_network(net: DelayNetwork, inputs: dict, dt: float, horizon: float):
    """Integrate the network over [0, horizon] from rest.

    ``inputs`` maps each external input name to a callable of time.  Returns
    a dict of sampled traces keyed by the declared output and input names
    (1-wide signals are flattened).
    """
    n_steps = int(round(horizon / dt))
    sim = NetworkSimulator(net, dt, n_steps)
    in_names = list(net.inputs)
    for n in in_names:
        if n not in inputs:
            raise ValueError(f"missing input signal {n!r}")

    def uext(t):
        return np.concatenate(
            [np.atleast_1d(np.asarray(inputs[n](t), float)) for n in in_names]
        ) if in_names else np.zeros(0)

    t_grid = np.arange(n_steps + 1) * dt
    outs = {n: np.zeros((n_steps + 1, d)) for n, d in net.outputs.items()}
    ins = {n: np.zeros((n_steps + 1, d)) for n, d in net.inputs.items()}
    off = {}
    o = 0
    for n, d in net.outputs.items():
        off[n] = slice(o, o + d)
        o += d
    for k in range(n_steps + 1):
        t = k * dt
        u_now = uext(t)
        y = sim.record(t, u_now)
        for n in net.outputs:
            outs[n][k] = y[off[n]]
        i = 0
        for n, d in net.inputs.items():
            ins[n][k] = u_now[i : i + d]
            i += d
        if k < n_steps:
            sim.advance(t, uext)
    traces = {"t": t_grid}
    for n, arr in outs.items():
        traces[n] = arr[:, 0] if arr.shape[1] == 1 else arr
    for n, arr in ins.items():
        traces[n] = arr[:, 0] if arr.shape[1] == 1 else arr
    return traces


# ---------------------------------------------------------------------------
# wave benchmark pieces


def build_gtilde(q: float) -> StateSpace:
    """One-state rational part of the prestabilized boundary plant.

    Realization: xdot = u, y1 = y2 = x / (1 - q), y3 = u / 2.  The first two
    rows coincide for every q.
    """
    _coupling(q)  # validates q
    c = 1.0 / (1.0 - q)
    return StateSpace(
        np.array([[0.0]]),
        np.array([[1.0]]),
        np.array([[c], [c], [0.0]]),
        np.array([[0.0], [0.0], [0.5]]),
    )


def _phi_rows(net: DelayNetwork, q: float, src, prefix: str):
    """Add the stable delay remainder driven by ``src``.

    Rows: -(1 - e^{-s})/(s (1-q)),  -Q (1 - e^{-2s})/(2 s),  (Q/2) e^{-2s}
    with Q the boundary reflection constant.  Returns [(source, gain), ...]
    for the three scalar rows.
    """
    big_q = _coupling(q)
    d1, d2 = prefix + "delay1", prefix + "delay2"
    i1, i2 = prefix + "int1", prefix + "int2"
    net.add_delay(d1, 1.0)
    net.add_delay(d2, 2.0)
    c1 = -1.0 / (1.0 - q)
    net.add_ss(i1, StateSpace(np.zeros((1, 1)), np.ones((1, 1)),
                              np.array([[c1]]), None))
    net.add_ss(i2, StateSpace(np.zeros((1, 1)), np.ones((1, 1)),
                              np.array([[-big_q / 2.0]]), None))
    one = np.array([[1.0]])
    net.connect(src, ("blk", d1), one)
    net.connect(src, ("blk", d2), one)
    net.connect(src, ("blk", i1), one)
    net.connect(("blk", d1), ("blk", i1), -one)
    net.connect(src, ("blk", i2), one)
    net.connect(("blk", d2), ("blk", i2), -one)
    return [
        (("blk", i1), 1.0),
        (("blk", i2), 1.0),
        (("blk", d2), big_q / 2.0),
    ]


def build_phi(q: float) -> DelayNetwork:
    """Stable infinite-dimensional remainder as a delay network (1 in, 3 out)."""
    net = DelayNetwork()
    net.add_input("u", 1)
    net.add_output("y", 3)
    rows = _phi_rows(net, q, ("in", "u"), "phi_")
    for i, (src, gain) in enumerate(rows):
        w = np.zeros((3, 1))
        w[i, 0] = gain
        net.connect(src, ("out", "y"), w)
    return net


def _column(i: int, gain: float, rows: int = 3) -> np.ndarray:
    w = np.zeros((rows, 1))
    w[i, 0] = gain
    return w


def recover_controller(k_tilde: StateSpace, q: float,
                       prestab_gain=PRESTAB_GAIN,
                       phi_network: DelayNetwork | None = None) -> DelayNetwork:
    """Implementable controller from a design gain: maps measurements e (3)
    to the actuator signal u (1) with

        u = K0 e + v,    v = k_tilde (e + Phi v).

    ``phi_network`` overrides the standard delay remainder (it must map one
    input to three outputs); passing a zero network collapses the result to
    the plain sum K0 + k_tilde.
    """
    if k_tilde.ny != 1 or k_tilde.nu != 3:
        raise DimensionMismatch("design gain must map 3 measurements to 1 actuator")
    k0 = np.asarray(prestab_gain, float).reshape(1, 3)
    net = DelayNetwork()
    net.add_input("e", 3)
    net.add_output("u", 1)
    net.add_ss("ktilde", k_tilde)
    net.connect(("in", "e"), ("blk", "ktilde"))
    if phi_network is None:
        rows = _phi_rows(net, q, ("blk", "ktilde"), "phi_")
        for i, (src, gain) in enumerate(rows):
            net.connect(src, ("blk", "ktilde"), _column(i, gain))
    else:
        ports = net.embed(phi_network, "phi_")
        (pin,) = [v for k, v in ports.items() if k[0] == "in"]
        (pout,) = [v for k, v in ports.items() if k[0] == "out"]
        net.connect(("blk", "ktilde"), pin, np.ones((1, 1)))
        net.connect(pout, ("blk", "ktilde"))
    net.connect(("blk", "ktilde"), ("out", "u"), np.ones((1, 1)))
    net.connect(("in", "e"), ("out", "u"), k0)
    if net.has_delay_free_cycle():
        raise AlgebraicLoop("recovered controller contains a delay-free cycle")
    return net


def wave_closed_loop_network(q_plant: float, k_tilde: StateSpace,
                             q_controller: float,
                             prestab_gain=PRESTAB_GAIN,
                             ref_select=(1.0, 0.0, 0.0)) -> DelayNetwork:
    """Finite-network model of the full closed loop, reference to (y, u).

    The plant is the prestabilized model (rational part plus delay
    remainder at ``q_plant``); the controller reassembles the design gain
    through its own delay remainder at ``q_controller``.  The reported u is
    the physical actuator signal, including the prestabilizing loop.
    """
    k0 = np.asarray(prestab_gain, float).reshape(1, 3)
    sel = np.asarray(ref_select, float).reshape(3, 1)
    net = DelayNetwork()
    net.add_input("r", 1)
    net.add_output("y", 3)
    net.add_output("u", 1)

    # vsum carries the prestabilized-plant input: r * (K0 sel) - controller branch
    net.add_gain("vsum", np.ones((1, 1)))
    net.add_ss("gt", build_gtilde(q_plant))
    net.add_gain("ysum", np.eye(3))
    net.connect(("blk", "vsum"), ("blk", "gt"), np.ones((1, 1)))
    net.connect(("blk", "gt"), ("blk", "ysum"))
    plant_rows = _phi_rows(net, q_plant, ("blk", "vsum"), "phip_")
    for i, (src, gain) in enumerate(plant_rows):
        net.connect(src, ("blk", "ysum"), _column(i, gain))

    # controller branch: v_k = k_tilde (e + Phi_c v_k), e = y - r sel
    net.add_ss("kt", k_tilde)
    net.connect(("blk", "ysum"), ("blk", "kt"))
    net.connect(("in", "r"), ("blk", "kt"), -sel)
    ctrl_rows = _phi_rows(net, q_controller, ("blk", "kt"), "phic_")
    for i, (src, gain) in enumerate(ctrl_rows):
        net.connect(src, ("blk", "kt"), _column(i, gain))

    net.connect(("in", "r"), ("blk", "vsum"), (k0 @ sel).reshape(1, 1))
    net.connect(("blk", "kt"), ("blk", "vsum"), -np.ones((1, 1)))

    net.connect(("blk", "ysum"), ("out", "y"))
    net.connect(("blk", "vsum"), ("out", "u"), np.ones((1, 1)))
    net.connect(("blk", "ysum"), ("out", "u"), -k0)
    return net


# ---------------------------------------------------------------------------
# exact transfer functions (independent closed forms)


def boundary_transfer(q: float, s: complex) -> np.ndarray:
    """Exact transfer of the wave plant: (position at damped end, position
    and velocity at the actuated end) over the actuation input."""
    _coupling(q)
    den = (1.0 - q) * np.exp(s) - (1.0 + q) * np.exp(-s)
    g0 = ((1.0 - q) + (1.0 + q)) / (s * den)
    g1 = ((1.0 - q) * np.exp(s) + (1.0 + q) * np.exp(-s)) / (s * den)
    return np.array([g0, g1, s * g1])


def prestabilized_transfer(q: float, s: complex) -> np.ndarray:
    """Closed form of the plant after the static velocity prestabilization."""
    g = boundary_transfer(q, s)
    return g / (1.0 + g[2])


def verify_decomposition(q: float, n_points: int = 20, seed: int = 0) -> float:
    """Max relative error of (rational part + delay remainder) against the
    closed-form prestabilized transfer on random imaginary frequencies."""
    gt = build_gtilde(q)
    phi = build_phi(q)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_points):
        w = rng.uniform(0.05, 10.0)
        s = 1j * w
        model = _ss_transfer(gt, s)[:, 0] + network_freq_response(phi, s)[:, 0]
        exact = prestabilized_transfer(q, s)
        worst = max(worst, float(np.max(np.abs(model - exact)) / np.max(np.abs(exact))))
    return worst


# ---------------------------------------------------------------------------
# leapfrog PDE simulator


def _unit_step(t: float) -> float:
    return 1.0 if t >= 0.0 else 0.0


@dataclass
class WaveScenario:
    """Wave simulation setup: boundary damping q, grid, horizon, initial
    profiles, and the reference injected at the controller input."""

    q: float
    n_grid: int = 400
    horizon: float = 20.0
    displacement: object = None   # callable xi -> float, default zero
    velocity: object = None       # callable xi -> float, default zero
    reference: object = None      # callable t -> float, default unit step
    ref_select: tuple = (1.0, 0.0, 0.0)

    def __post_init__(self):
        _coupling(self.q)
        if self.n_grid < 50:
            raise ValueError("wave grid needs at least 50 intervals")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")


def simulate_wave_pde(scenario: WaveScenario, controller: DelayNetwork | None = None,
                      dt: float | None = None):
    """Leapfrog simulation of the boundary-controlled wave equation.

    The scheme runs at unit CFL ratio (dt equals the grid spacing), which
    makes the interior update exact.  Boundary ghost nodes come from central
    differencing of the two boundary conditions; the velocity output uses a
    centered time difference, and the resulting instantaneous coupling with
    the controller feedthrough is resolved by a scalar solve each step.  The
    controller network advances in lock-step at dt.
    """
    n = scenario.n_grid
    dx = 1.0 / n
    if dt is not None and abs(dt - dx) > 1e-12 * dx:
        raise CFLViolation(f"dt must equal the grid spacing {dx}, got {dt}")
    dt = dx
    q = scenario.q
    steps = int(round(scenario.horizon / dt))

    xi = np.linspace(0.0, 1.0, n + 1)
    disp = scenario.displacement or (lambda s: 0.0)
    velo = scenario.velocity or (lambda s: 0.0)
    ref = scenario.reference or _unit_step
    sel = np.asarray(scenario.ref_select, float)

    f = np.array([float(disp(s)) for s in xi])
    gvel = np.array([float(velo(s)) for s in xi])

    # time-reversed start keeps the unit-CFL update exact for zero velocity
    x_prev = np.empty(n + 1)
    x_prev[1:-1] = 0.5 * (f[2:] + f[:-2]) - dt * gvel[1:-1]
    x_prev[0] = f[0] - dt * gvel[0]
    x_prev[-1] = f[-1] - dt * gvel[-1]
    x_cur = f.copy()

    sim = None
    dgain = np.zeros(3)
    if controller is not None:
        sim = NetworkSimulator(controller, dt, steps)
        dgain = sim.external_gain()[0]

    t_out = np.arange(steps + 1) * dt
    y1 = np.zeros(steps + 1)
    y2 = np.zeros(steps + 1)
    y3 = np.zeros(steps + 1)
    u_out = np.zeros(steps + 1)
    r_out = np.zeros(steps + 1)

    e_prev = np.zeros(3)
    for k in range(steps + 1):
        t = k * dt
        rv = float(ref(t))
        a_coef = (x_cur[n - 1] - x_prev[n]) / dt
        if sim is not None:
            h = float(sim.output_offset(t)[0])
            den = 1.0 + dgain[2]  # dx/dt = 1 at unit CFL
            if abs(den) < 1e-10:
                raise AlgebraicLoop("controller feedthrough closes a singular loop")
            u = (
                -dgain[0] * (x_cur[0] - rv * sel[0])
                - dgain[1] * (x_cur[n] - rv * sel[1])
                - dgain[2] * (a_coef - rv * sel[2])
                - h
            ) / den
        else:
            u = 0.0
        y3_now = a_coef + u
        e_now = np.array([x_cur[0], x_cur[n], y3_now]) - rv * sel

        y1[k], y2[k], y3[k] = x_cur[0], x_cur[n], y3_now
        u_out[k], r_out[k] = u, rv

        if sim is not None:
            sim.record(t, e_now)
            if k < steps:
                slope = (e_now - e_prev) / dt if k > 0 else np.zeros(3)
                base = e_now.copy()
                sim.advance(t, lambda tau: base + (tau - t) * slope)
            e_prev = e_now

        if k < steps:
            x_next = np.empty(n + 1)
            x_next[1:-1] = x_cur[2:] + x_cur[:-2] - x_prev[1:-1]
            x_next[0] = (2.0 * x_cur[1] - (1.0 + q) * x_prev[0]) / (1.0 - q)
            x_next[-1] = 2.0 * x_cur[n - 1] - x_prev[n] + 2.0 * dx * u
            x_prev, x_cur = x_cur, x_next

    return {
        "t": t_out, "y1": y1, "y2": y2, "y3": y3, "u": u_out, "r": r_out,
    }


def write_trace_csv(path, t, y1, y2, y3, u, r=None):
    """One row per step: t,y1,y2,y3,u[,r], 12 significant digits."""
    cols = [t, y1, y2, y3, u]
    header = "t,y1,y2,y3,u"
    if r is not None:
        cols.append(r)
        header += ",r"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row in zip(*cols):
            fh.write(",".join(f"{v:.12g}" for v in row) + "\n")
