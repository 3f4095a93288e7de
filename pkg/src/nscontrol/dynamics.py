"""Time integration of the truncated controlled Navier-Stokes system.

The integrator is a Lawson (integrating-factor) RK4 scheme: the viscous
semigroup is applied exactly mode-wise, the advection term and forcing are
treated explicitly, so the step size is constrained by accuracy only.
Control discontinuities are honoured by snapping integration steps to the
signals' breakpoints; piecewise-constant signals are resolved through the
midpoint of the current smooth segment, so stage evaluations at a segment's
right endpoint use the left-limit value.
"""

from __future__ import annotations

import bisect
import csv
import io
import json
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.interpolate import CubicSpline

from nscontrol.errors import NegativeTime
from nscontrol.spectral import (
    FourierField,
    Truncation,
    bilinear_B,
    bilinear_B_diag,
    field_to_dict,
    get_truncation,
    heat_semigroup,
    l2_norm,
    sobolev_norm,
    stokes_apply,
    vnorm,
)


@dataclass
class SolverConfig:
    nu: float
    T: float
    dt: float | None = None
    tolerance: float = 1e-6
    blowup_guard: float = 1e6
    min_substeps: int = 1

    def __post_init__(self):
        if self.dt is None:
            self.dt = self.T / 100.0
        if not (0 < self.dt <= self.T):
            raise ValueError("dt must lie in (0, T]")
        if self.nu <= 0:
            raise ValueError("viscosity must be positive")


# ---------------------------------------------------------------------------
# Control signals
# ---------------------------------------------------------------------------


class ControlSignal:
    """Time-parameterized field-valued function with an analytic derivative.

    ``tmid`` is an optional hint used by piecewise-constant signals to
    resolve which interval a stage evaluation belongs to.
    """

    trunc: Truncation

    def value(self, t: float, tmid: float | None = None) -> FourierField:
        raise NotImplementedError

    def derivative(self, t: float, tmid: float | None = None) -> FourierField:
        raise NotImplementedError

    def breakpoints(self) -> list:
        """Interior discontinuity times."""
        return []


class ZeroControl(ControlSignal):
    def __init__(self, trunc: Truncation):
        self.trunc = trunc
        self._zero = FourierField.zero(trunc)

    def value(self, t, tmid=None):
        return self._zero

    def derivative(self, t, tmid=None):
        return self._zero


class ConstantControl(ControlSignal):
    def __init__(self, field: FourierField):
        self.trunc = field.trunc
        self.field = field
        self._zero = FourierField.zero(field.trunc)

    def value(self, t, tmid=None):
        return self.field

    def derivative(self, t, tmid=None):
        return self._zero


class SmoothControl(ControlSignal):
    """Closed-form signal given by callables t -> FourierField."""

    def __init__(self, trunc, value_fn, deriv_fn=None, breaks=()):
        self.trunc = trunc
        self._value_fn = value_fn
        self._deriv_fn = deriv_fn
        self._breaks = sorted(breaks)

    def value(self, t, tmid=None):
        return self._value_fn(t)

    def derivative(self, t, tmid=None):
        if self._deriv_fn is None:
            raise NotImplementedError("signal has no derivative")
        return self._deriv_fn(t)

    def breakpoints(self):
        return list(self._breaks)


class PiecewiseConstantControl(ControlSignal):
    """Constant fields on the intervals defined by ``edges``."""

    def __init__(self, edges, fields):
        if len(fields) != len(edges) - 1:
            raise ValueError("need one field per interval")
        self.edges = np.asarray(edges, dtype=float)
        self.fields = list(fields)
        self.trunc = fields[0].trunc
        self._zero = FourierField.zero(self.trunc)

    def _index(self, t):
        i = bisect.bisect_right(self.edges, t) - 1
        return min(max(i, 0), len(self.fields) - 1)

    def value(self, t, tmid=None):
        return self.fields[self._index(tmid if tmid is not None else t)]

    def derivative(self, t, tmid=None):
        return self._zero

    def breakpoints(self):
        return [float(e) for e in self.edges[1:-1]]


class ConvexCombinationControl(ControlSignal):
    """Element of P_s(J_T, A): convex weights over a fixed vertex set,
    constant on each of the s uniform subintervals of [0, T]."""

    def __init__(self, vertices, weights, T: float):
        weights = np.asarray(weights, dtype=float)
        if weights.shape[0] != len(vertices):
            raise ValueError("weight matrix must have one row per vertex")
        if np.any(weights < -1e-12):
            raise ValueError("convex weights must be nonnegative")
        colsum = weights.sum(axis=0)
        if np.max(np.abs(colsum - 1.0)) > 1e-9:
            raise ValueError("convex weights must sum to one on every interval")
        self.vertices = list(vertices)
        self.weights = np.clip(weights, 0.0, None)
        self.T = float(T)
        self.s = weights.shape[1]
        self.trunc = vertices[0].trunc
        self._zero = FourierField.zero(self.trunc)
        self._cache = {}

    def interval_of(self, t) -> int:
        r = int(math.floor(t / self.T * self.s))
        return min(max(r, 0), self.s - 1)

    def field_on_interval(self, r: int) -> FourierField:
        if r not in self._cache:
            acc = FourierField.zero(self.trunc)
            for l, v in enumerate(self.vertices):
                w = self.weights[l, r]
                if w != 0.0:
                    acc = acc + w * v
            self._cache[r] = acc
        return self._cache[r]

    def value(self, t, tmid=None):
        return self.field_on_interval(self.interval_of(tmid if tmid is not None else t))

    def derivative(self, t, tmid=None):
        return self._zero

    def breakpoints(self):
        return [r * self.T / self.s for r in range(1, self.s)]


class OscillatingShiftControl(ControlSignal):
    """Duty-cycle shift: a 1-periodic switch among vectors, compressed k times.

    On [t0, t1] the signal takes value ``vectors[i]`` while the periodic phase
    k (t - t0) / (t1 - t0) mod 1 lies in the i-th duty window of length
    ``durations[i]`` (the durations sum to one).
    """

    def __init__(self, vectors, durations, k: int, t0: float, t1: float):
        durations = np.asarray(durations, dtype=float)
        if np.any(durations < -1e-12):
            raise ValueError("durations must be nonnegative")
        if abs(durations.sum() - 1.0) > 1e-9:
            raise ValueError("durations must sum to one")
        self.vectors = list(vectors)
        self.durations = np.clip(durations, 0.0, None)
        self.cum = np.concatenate([[0.0], np.cumsum(self.durations)])
        self.cum[-1] = 1.0
        self.k = int(k)
        self.t0 = float(t0)
        self.t1 = float(t1)
        self.trunc = vectors[0].trunc
        self._zero = FourierField.zero(self.trunc)

    def _phase_index(self, t) -> int:
        span = self.t1 - self.t0
        phase = (t - self.t0) / span * self.k
        frac = phase - math.floor(phase)
        i = bisect.bisect_right(self.cum, frac) - 1
        return min(max(i, 0), len(self.vectors) - 1)

    def value(self, t, tmid=None):
        return self.vectors[self._phase_index(tmid if tmid is not None else t)]

    def derivative(self, t, tmid=None):
        return self._zero

    def breakpoints(self):
        span = self.t1 - self.t0
        pts = []
        for p in range(self.k):
            for c in self.cum[:-1]:
                t = self.t0 + (p + c) * span / self.k
                if self.t0 < t < self.t1:
                    pts.append(t)
        return sorted(set(pts))


class ConcatenatedControl(ControlSignal):
    """Signals glued over consecutive intervals [edges[i], edges[i+1])."""

    def __init__(self, edges, pieces):
        if len(pieces) != len(edges) - 1:
            raise ValueError("need one piece per interval")
        self.edges = [float(e) for e in edges]
        self.pieces = list(pieces)
        self.trunc = pieces[0].trunc

    def _piece(self, t):
        i = bisect.bisect_right(self.edges, t) - 1
        return self.pieces[min(max(i, 0), len(self.pieces) - 1)]

    def value(self, t, tmid=None):
        return self._piece(tmid if tmid is not None else t).value(t, tmid)

    def derivative(self, t, tmid=None):
        return self._piece(tmid if tmid is not None else t).derivative(t, tmid)

    def breakpoints(self):
        pts = set(self.edges[1:-1])
        for p in self.pieces:
            pts.update(p.breakpoints())
        lo, hi = self.edges[0], self.edges[-1]
        return sorted(t for t in pts if lo < t < hi)


class RampedControl(ControlSignal):
    """Continuous version of a piecewise-constant signal.

    Each jump is replaced by a linear transition over a window centred at
    the jump time; window half-widths are a fixed fraction of the distance
    to the neighbouring jumps, so windows never overlap and the derivative
    is exact (constant slope inside windows, zero outside).
    """

    def __init__(self, inner: ControlSignal, T: float, ramp_frac: float = 0.5):
        if not 0 < ramp_frac < 1:
            raise ValueError("ramp_frac must lie in (0, 1)")
        self.trunc = inner.trunc
        self.T = float(T)
        jumps = [b for b in inner.breakpoints() if 0.0 < b < T]
        edges = [0.0] + jumps + [T]
        self.pieces = [
            inner.value(0.5 * (a + b), 0.5 * (a + b)) for a, b in zip(edges[:-1], edges[1:])
        ]
        self.jumps = jumps
        self.halves = [
            ramp_frac * 0.5 * min(tj - edges[i], edges[i + 2] - tj)
            for i, tj in enumerate(jumps)
        ]
        self._zero = FourierField.zero(self.trunc)

    def _locate(self, t):
        """Index of the jump whose ramp window contains t, else the piece
        index holding t (encoded as ('ramp', j) or ('flat', i))."""
        i = bisect.bisect_right(self.jumps, t)
        if i > 0 and t < self.jumps[i - 1] + self.halves[i - 1]:
            return ("ramp", i - 1)
        if i < len(self.jumps) and t >= self.jumps[i] - self.halves[i]:
            return ("ramp", i)
        return ("flat", i)

    def value(self, t, tmid=None):
        kind, j = self._locate(t)
        if kind == "flat":
            return self.pieces[j]
        tj, hw = self.jumps[j], self.halves[j]
        w = (t - (tj - hw)) / (2.0 * hw)
        w = min(max(w, 0.0), 1.0)
        return (1.0 - w) * self.pieces[j] + w * self.pieces[j + 1]

    def derivative(self, t, tmid=None):
        kind, j = self._locate(t)
        if kind == "flat":
            return self._zero
        hw = self.halves[j]
        return (1.0 / (2.0 * hw)) * (self.pieces[j + 1] - self.pieces[j])

    def breakpoints(self):
        pts = []
        for tj, hw in zip(self.jumps, self.halves):
            pts.extend((tj - hw, tj, tj + hw))
        return sorted(set(pts))


class SummedControl(ControlSignal):
    def __init__(self, signals, coeffs=None):
        self.signals = list(signals)
        self.coeffs = list(coeffs) if coeffs is not None else [1.0] * len(signals)
        self.trunc = signals[0].trunc

    def value(self, t, tmid=None):
        acc = FourierField.zero(self.trunc)
        for c, s in zip(self.coeffs, self.signals):
            acc = acc + c * s.value(t, tmid).extend_to(self.trunc)
        return acc

    def derivative(self, t, tmid=None):
        acc = FourierField.zero(self.trunc)
        for c, s in zip(self.coeffs, self.signals):
            acc = acc + c * s.derivative(t, tmid).extend_to(self.trunc)
        return acc

    def breakpoints(self):
        pts = set()
        for s in self.signals:
            pts.update(s.breakpoints())
        return sorted(pts)


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------


@dataclass
class Trajectory:
    times: np.ndarray
    states: list
    success: bool = True
    failure: str | None = None

    @property
    def final_state(self) -> FourierField:
        return self.states[-1]

    def energies(self) -> np.ndarray:
        return np.array([l2_norm(u) ** 2 for u in self.states])

    def vnorms(self) -> np.ndarray:
        return np.array([vnorm(u) for u in self.states])

    def xt_norm(self) -> float:
        """Surrogate for the C(J,V) + L2(J,U) solution norm."""
        vs = self.vnorms()
        h2 = np.array([sobolev_norm(u, 2.0) ** 2 for u in self.states])
        return float(np.max(vs) + np.sqrt(np.trapezoid(h2, self.times)))

    def require_success(self):
        if not self.success:
            from nscontrol.errors import BlowUp

            raise BlowUp(self.failure or "integration failed")
        return self

    def interpolant(self, breaks=()) -> "TrajectoryInterpolant":
        return TrajectoryInterpolant(self, breaks)

    def to_csv(self, modes=()) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        header = ["t", "energy", "vnorm"] + [
            f"re_k{k[0]}_{k[1]}_{k[2]}_c{j}" for k in modes for j in range(3)
        ]
        writer.writerow(header)
        for t, u in zip(self.times, self.states):
            row = [f"{t:.12g}", f"{l2_norm(u) ** 2:.12g}", f"{vnorm(u):.12g}"]
            for k in modes:
                amp = u.amplitude(k)
                row.extend(f"{float(a.real):.12g}" for a in amp)
            writer.writerow(row)
        return buf.getvalue()

    def snapshots(self, at_times) -> dict:
        out = {}
        for t in at_times:
            i = int(np.argmin(np.abs(self.times - t)))
            out[f"{self.times[i]:.12g}"] = field_to_dict(self.states[i])
        return out


class TrajectoryInterpolant:
    """Per-segment cubic interpolation of a sampled trajectory.

    Segments are delimited by the supplied breakpoints so that splines never
    straddle a control discontinuity.
    """

    def __init__(self, traj: Trajectory, breaks=()):
        self.trunc = traj.states[0].trunc
        times = np.asarray(traj.times)
        coeffs = np.array([u.coeffs for u in traj.states])  # (n, M, 3) complex
        edges = [times[0]] + [b for b in sorted(breaks) if times[0] < b < times[-1]] + [times[-1]]
        self.edges = np.array(edges)
        self.splines = []
        flat = coeffs.reshape(len(times), -1)
        data = np.concatenate([flat.real, flat.imag], axis=1)
        for a, b in zip(edges[:-1], edges[1:]):
            mask = (times >= a - 1e-12) & (times <= b + 1e-12)
            ts = times[mask]
            ys = data[mask]
            ts, idx = np.unique(ts, return_index=True)
            ys = ys[idx]
            if len(ts) < 2:
                raise ValueError("segment has too few samples to interpolate")
            kind = min(3, len(ts) - 1)
            self.splines.append(CubicSpline(ts, ys, axis=0) if kind >= 2 else _Linear(ts, ys))

    def _segment(self, t):
        i = bisect.bisect_right(self.edges, t) - 1
        return self.splines[min(max(i, 0), len(self.splines) - 1)]

    def _to_field(self, data) -> FourierField:
        n = data.shape[0] // 2
        c = data[:n] + 1j * data[n:]
        return FourierField(self.trunc, c.reshape(self.trunc.n_reps, 3))

    def state(self, t, tmid=None) -> FourierField:
        seg = self._segment(tmid if tmid is not None else t)
        return self._to_field(seg(t))

    def state_derivative(self, t, tmid=None) -> FourierField:
        seg = self._segment(tmid if tmid is not None else t)
        return self._to_field(seg.derivative()(t))


class _Linear:
    def __init__(self, ts, ys):
        self.ts = ts
        self.ys = ys

    def __call__(self, t):
        w = (t - self.ts[0]) / (self.ts[1] - self.ts[0])
        return (1 - w) * self.ys[0] + w * self.ys[1]

    def derivative(self):
        slope = (self.ys[1] - self.ys[0]) / (self.ts[1] - self.ts[0])
        return lambda t: slope


# ---------------------------------------------------------------------------
# Core integrator
# ---------------------------------------------------------------------------


def _time_grid(T: float, dt: float, breakpoints, min_substeps: int = 1) -> list:
    """Segment edges snapped to discontinuities, each segment subdivided."""
    pts = [0.0, T]
    for b in breakpoints:
        if 1e-14 < b < T - 1e-14:
            pts.append(float(b))
    pts = sorted(set(pts))
    grid = [0.0]
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(min_substeps, int(math.ceil((b - a) / dt - 1e-12)))
        for j in range(1, n + 1):
            grid.append(a + (b - a) * j / n)
    return grid


def _lawson_rk4(u0, rhs, grid, cfg: SolverConfig, project=None):
    """Integrating-factor RK4 for du/dt = -nu L u + rhs(t, u, tmid)."""
    states = [u0]
    u = u0
    success = True
    failure = None
    for a, b in zip(grid[:-1], grid[1:]):
        h = b - a
        tm = 0.5 * (a + b)
        E_half = lambda w: heat_semigroup(w, 0.5 * h, cfg.nu)
        E_full = lambda w: heat_semigroup(w, h, cfg.nu)
        f1 = rhs(a, u, tm)
        u2 = E_half(u + (0.5 * h) * f1)
        f2 = rhs(tm, u2, tm)
        u3 = E_half(u) + (0.5 * h) * f2
        f3 = rhs(tm, u3, tm)
        u4 = E_full(u) + h * E_half(f3)
        f4 = rhs(b, u4, tm)
        u = E_full(u) + (h / 6.0) * (
            E_full(f1) + 2.0 * E_half(f2) + 2.0 * E_half(f3) + f4
        )
        if project is not None:
            u = project(u)
        vn = vnorm(u)
        if not np.isfinite(vn):
            success, failure = False, "non-finite state"
        elif vn > cfg.blowup_guard:
            success, failure = False, f"V-norm guard exceeded ({vn:.3e})"
        states.append(u)
        if not success:
            return Trajectory(np.array(grid[: len(states)]), states, False, failure)
    return Trajectory(np.array(grid), states, success, failure)


def _as_signal(sig, trunc) -> ControlSignal:
    if sig is None:
        return ZeroControl(trunc)
    if isinstance(sig, FourierField):
        return ConstantControl(sig.extend_to(trunc))
    return sig


def integrate_ns(
    u0: FourierField,
    h: ControlSignal | None,
    eta: ControlSignal | None,
    cfg: SolverConfig,
) -> Trajectory:
    """Controlled Navier-Stokes: du/dt + nu L u + B(u) = h(t) + eta(t)."""
    trunc = u0.trunc
    h = _as_signal(h, trunc)
    eta = _as_signal(eta, trunc)
    grid = _time_grid(cfg.T, cfg.dt, h.breakpoints() + eta.breakpoints(), cfg.min_substeps)

    def rhs(t, u, tmid):
        force = h.value(t, tmid).extend_to(trunc) + eta.value(t, tmid).extend_to(trunc)
        return force - bilinear_B_diag(u)

    return _lawson_rk4(u0, rhs, grid, cfg)


def integrate_perturbed(
    v: ControlSignal | None,
    f: ControlSignal | None,
    w0: FourierField,
    E,
    cfg: SolverConfig,
) -> Trajectory:
    """Complement dynamics dw/dt + nu Q L w + Q(B(w) + B(v,w) + B(w,v)) = f.

    ``E`` may be None (or empty), in which case Q is the identity and the
    equation reduces to the full system linearised around v.  States are
    re-projected onto the complement after every step.
    """
    trunc = w0.trunc
    v = _as_signal(v, trunc)
    f = _as_signal(f, trunc)
    has_E = E is not None and E.dim > 0
    if has_E:
        E = E.extend_to(trunc)
        if E.dim and l2_norm(E.project(w0)) > 1e-9 * max(1.0, l2_norm(w0)):
            raise ValueError("w0 must be orthogonal to E")
        Q = E.complement
        P = E.project
    else:
        Q = lambda u: u
        P = None

    def rhs(t, w, tmid):
        vt = v.value(t, tmid).extend_to(trunc)
        nl = bilinear_B_diag(w) + bilinear_B(vt, w) + bilinear_B(w, vt)
        out = f.value(t, tmid).extend_to(trunc) - Q(nl)
        if P is not None:
            # integrating factor uses the full semigroup; add back the
            # E-component of nu L w so the linear part is exactly nu Q L w
            out = out + cfg.nu * P(stokes_apply(w))
        return out

    grid = _time_grid(cfg.T, cfg.dt, v.breakpoints() + f.breakpoints(), cfg.min_substeps)
    project = Q if has_E else None
    return _lawson_rk4(Q(w0) if has_E else w0, rhs, grid, cfg, project=project)


def integrate_shifted(
    u0: FourierField,
    h: ControlSignal | None,
    eta: ControlSignal | None,
    zeta: ControlSignal | None,
    cfg: SolverConfig,
    rewritten: bool = False,
) -> Trajectory:
    """Shifted system du/dt + nu L(u + zeta) + B(u + zeta) = h + eta.

    With ``rewritten`` the right-hand side is assembled from the expanded
    form B(u) + B(u, zeta) + B(zeta, u) + B(zeta); the two formulations are
    algebraically identical and serve as a consistency check.
    """
    trunc = u0.trunc
    h = _as_signal(h, trunc)
    eta = _as_signal(eta, trunc)
    zeta = _as_signal(zeta, trunc)

    def rhs(t, u, tmid):
        zt = zeta.value(t, tmid).extend_to(trunc)
        force = h.value(t, tmid).extend_to(trunc) + eta.value(t, tmid).extend_to(trunc)
        force = force - cfg.nu * stokes_apply(zt)
        if rewritten:
            nl = (
                bilinear_B_diag(u)
                + bilinear_B(u, zt)
                + bilinear_B(zt, u)
                + bilinear_B_diag(zt)
            )
        else:
            nl = bilinear_B_diag(u + zt)
        return force - nl

    grid = _time_grid(
        cfg.T, cfg.dt, h.breakpoints() + eta.breakpoints() + zeta.breakpoints(), cfg.min_substeps
    )
    return _lawson_rk4(u0, rhs, grid, cfg)


def duhamel(f: ControlSignal, nu: float, T: float, samples_per_segment: int = 8) -> Trajectory:
    """Mode-wise Duhamel integral of the heat semigroup against f.

    Exact when f is piecewise constant between its breakpoints; smooth
    signals are resolved by subdividing each segment and treating the
    midpoint value as constant (second order).
    """
    if T < 0:
        raise NegativeTime("horizon must be nonnegative")
    trunc = f.trunc
    ksq = trunc.ksq
    grid = _time_grid(T, T / max(samples_per_segment, 1), f.breakpoints(), 1) if T > 0 else [0.0]
    coeffs = np.zeros((trunc.n_reps, 3), dtype=np.complex128)
    states = [FourierField.zero(trunc)]
    for a, b in zip(grid[:-1], grid[1:]):
        dt = b - a
        g = f.value(0.5 * (a + b), 0.5 * (a + b)).coeffs
        decay = np.exp(-nu * ksq * dt)[:, None]
        gain = ((1.0 - np.exp(-nu * ksq * dt)) / (nu * ksq))[:, None]
        coeffs = coeffs * decay + gain * g
        states.append(FourierField(trunc, coeffs.copy()))
    return Trajectory(np.array(grid), states)


def lipschitz_probe(
    v: ControlSignal | None,
    f: ControlSignal | None,
    w0: FourierField,
    E,
    cfg: SolverConfig,
    scales=(1e-2, 1e-3, 1e-4),
    seed: int = 0,
    linearized: bool = False,
) -> list:
    """Empirical Lipschitz ratios of the complement resolving operator.

    Perturbs (v, f, w0) jointly by random directions of each given size and
    reports ||delta w||_{X_T} / sigma; failures are reported as data.
    """
    from nscontrol.spectral import random_field

    trunc = w0.trunc
    base = integrate_perturbed(v, f, w0, E, cfg)
    base.require_success()
    rng = np.random.default_rng(seed)

    def unit(field):
        n = l2_norm(field)
        return (1.0 / n) * field if n > 0 else field

    dv = unit(random_field(trunc, rng))
    dfld = unit(random_field(trunc, rng))
    dw = unit(random_field(trunc, rng))
    if E is not None and E.dim > 0:
        Ew = E.extend_to(trunc)
        dfld = unit(Ew.complement(dfld))
        dw = unit(Ew.complement(dw))
    rows = []
    for sigma in scales:
        vp = SummedControl([_as_signal(v, trunc), ConstantControl(sigma * dv)])
        fp = SummedControl([_as_signal(f, trunc), ConstantControl(sigma * dfld)])
        wp = w0 + sigma * dw
        if linearized:
            vp = _as_signal(v, trunc)
        pert = integrate_perturbed(vp, fp, wp, E, cfg)
        if not pert.success:
            rows.append({"sigma": sigma, "ratio": float("nan"), "success": False})
            continue
        diff = Trajectory(
            base.times,
            [a - b for a, b in zip(pert.states, base.states)],
        )
        rows.append({"sigma": sigma, "ratio": diff.xt_norm() / sigma, "success": True})
    return rows
