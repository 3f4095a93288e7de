"""Exact controllability in a finite-dimensional projection.

Given a projection P_F onto a low-dimensional subspace F, the endpoint map
of the synthesis pipeline induces a map Phi on F-coefficient vectors.  If
Phi stays uniformly close to the identity on a ball (verified on a probe
grid), a damped fixed-point iteration steers the projected endpoint
exactly onto a requested target, and a grid sweep certifies that the whole
shrunken ball is covered -- including under small continuous disturbances
of the endpoint map.
"""

from __future__ import annotations

import concurrent.futures
import json
import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from nscontrol.errors import ConfigError, HypothesisFailed, NoConvergence
from nscontrol.dynamics import ControlSignal, SolverConfig
from nscontrol.spectral import FourierField, field_to_vec, vec_to_field, vnorm
from nscontrol.subspaces import ModeSubspace
from nscontrol.synthesis import CascadeConfig, SynthesisResult, cascade_synthesize


@dataclass
class ProjectionTarget:
    """Target data for projection-exact control.

    F is the projected subspace, y_hat the requested F-coefficient vector,
    R the radius of the ball on which the endpoint map is probed.  By
    default the projection onto F is orthogonal; a non-orthogonal
    projection (onto F along a complement) may be supplied as a matrix
    acting on stacked real coefficient vectors.
    """

    F: ModeSubspace
    y_hat: np.ndarray
    R: float
    P_matrix: np.ndarray | None = None

    def __post_init__(self):
        self.y_hat = np.asarray(self.y_hat, dtype=float)
        if self.y_hat.shape != (self.F.dim,):
            raise ConfigError("y_hat must have one entry per F basis field")
        if self.P_matrix is not None:
            P = np.asarray(self.P_matrix, dtype=float)
            n = 6 * self.F.trunc.n_reps
            if P.shape != (n, n):
                raise ConfigError("P_matrix must act on full coefficient vectors")
            if np.max(np.abs(P @ P - P)) > 1e-10:
                raise ConfigError("P_matrix is not idempotent")
            for b in self.F.basis:
                v = field_to_vec(b)
                if np.max(np.abs(P @ v - v)) > 1e-10:
                    raise ConfigError("P_matrix is not the identity on F")
            self.P_matrix = P

    def lift(self, coords: np.ndarray) -> FourierField:
        return self.F.from_coefficients(np.asarray(coords, dtype=float))

    def project_coords(self, u: FourierField) -> np.ndarray:
        """F-coefficients of P_F u."""
        u = u.extend_to(self.F.trunc)
        if self.P_matrix is None:
            return self.F.coefficients(self.F.project(u))
        pu = vec_to_field(self.P_matrix @ field_to_vec(u), self.F.trunc)
        return self.F.coefficients(pu)


@dataclass
class FixedPointTrace:
    iterates: list = dc_field(default_factory=list)
    residuals: list = dc_field(default_factory=list)
    damping: list = dc_field(default_factory=list)
    converged: bool = False

    def to_json(self) -> str:
        return json.dumps(
            {
                "iterates": [list(map(float, it)) for it in self.iterates],
                "residuals": [float(r) for r in self.residuals],
                "damping": [float(d) for d in self.damping],
                "converged": self.converged,
            },
            sort_keys=True,
        )


def phi_map(
    u_hat_coords: np.ndarray,
    u0: FourierField,
    target: ProjectionTarget,
    E: ModeSubspace,
    ccfg: CascadeConfig,
    scfg: SolverConfig,
    h: ControlSignal | None = None,
) -> np.ndarray:
    """Projected endpoint of the cascade aimed at the lifted target."""
    coords, _ = _phi_with_result(u_hat_coords, u0, target, E, ccfg, scfg, h)
    return coords


def _phi_with_result(u_hat_coords, u0, target, E, ccfg, scfg, h):
    u_hat = target.lift(u_hat_coords)
    result = cascade_synthesize(u0, u_hat, E, ccfg, scfg, h=h)
    return target.project_coords(result.trajectory.final_state), result


def probe_grid(dim: int, R: float) -> list:
    """Deterministic probe points: the center plus the 2^dim cube corners
    scaled onto the sphere of radius R."""
    pts = [np.zeros(dim)]
    for mask in range(2**dim):
        s = np.array([1.0 if mask >> i & 1 else -1.0 for i in range(dim)])
        pts.append(R * s / np.sqrt(dim))
    return pts

def measure_probe_gap(
    u0, target, E, ccfg, scfg, h=None, phi_fn=None
) -> float:
    """sup over the probe grid of ||Phi(u_hat) - u_hat||."""
    gap = 0.0
    for p in probe_grid(target.F.dim, target.R):
        if phi_fn is not None:
            img = np.asarray(phi_fn(p), dtype=float)
        else:
            img = phi_map(p, u0, target, E, ccfg, scfg, h)
        gap = max(gap, float(np.linalg.norm(img - p)))
    return gap


def fixed_point_refine(
    y_hat: np.ndarray,
    u0: FourierField,
    target: ProjectionTarget,
    E: ModeSubspace,
    ccfg: CascadeConfig,
    scfg: SolverConfig,
    h: ControlSignal | None = None,
    max_iter: int = 20,
    damping: float = 1.0,
    tol: float = 1e-3,
    eps_probe: float | None = None,
    disturbance=None,
    phi_fn=None,
):
    """Steer the projected endpoint exactly onto y_hat.

    Iterates u_{n+1} = u_n + theta (y_hat - Phi(u_n)) with theta halved
    whenever the residual increases.  eps_probe, if not supplied, is
    measured on the deterministic probe grid first; the iteration requires
    ||y_hat|| <= R - eps_probe.  phi_fn substitutes the endpoint map (for
    diagnostics); the real map synthesizes a control per evaluation.

    Returns (synthesis result for the final iterate, FixedPointTrace).
    """
    if not 0 < damping <= 1:
        raise ConfigError("damping must lie in (0, 1]")
    y_hat = np.asarray(y_hat, dtype=float)
    if eps_probe is None:
        eps_probe = measure_probe_gap(u0, target, E, ccfg, scfg, h, phi_fn=phi_fn)
    if eps_probe >= target.R:
        raise HypothesisFailed(
            f"probe gap {eps_probe:.3g} is not below the ball radius {target.R:.3g}"
        )
    if np.linalg.norm(y_hat) > target.R - eps_probe + 1e-12:
        raise HypothesisFailed(
            f"target norm {np.linalg.norm(y_hat):.3g} exceeds the certified "
            f"radius {target.R - eps_probe:.3g}"
        )
    scale = max(1.0, float(np.linalg.norm(y_hat)))
    theta = damping
    u_n = y_hat.copy()
    trace = FixedPointTrace()
    best = None
    for _ in range(max_iter):
        if phi_fn is not None:
            coords, result = np.asarray(phi_fn(u_n), dtype=float), None
        else:
            coords, result = _phi_with_result(u_n, u0, target, E, ccfg, scfg, h)
        if disturbance is not None:
            coords = coords + disturbance(u_n)
        resid = float(np.linalg.norm(coords - y_hat))
        trace.iterates.append(u_n.copy())
        trace.residuals.append(resid)
        trace.damping.append(theta)
        if best is None or resid < best[0]:
            best = (resid, result)
        if resid <= tol * scale:
            trace.converged = True
            return result, trace
        if len(trace.residuals) >= 2 and resid > trace.residuals[-2]:
            theta = theta / 2.0
        u_n = u_n + theta * (y_hat - coords)
    raise NoConvergence(trace, message=f"no convergence in {max_iter} iterations "
                        f"(best residual {best[0]:.3g})")


@dataclass
class CoverageReport:
    rows: list  # dicts: y coords, residual, iterations, wall_time, converged
    eps_probe: float
    disturbed: bool

    @property
    def coverage(self) -> float:
        if not self.rows:
            return 1.0
        return sum(1 for r in self.rows if r["converged"]) / len(self.rows)

    def to_csv(self) -> str:
        if not self.rows:
            return "y,residual,iterations,wall_time,converged\n"
        lines = ["y,residual,iterations,wall_time,converged"]
        for r in self.rows:
            ystr = ";".join(f"{c:.12g}" for c in r["y"])
            lines.append(
                f"{ystr},{r['residual']:.12g},{r['iterations']},"
                f"{r['wall_time']:.6g},{int(r['converged'])}"
            )
        return "\n".join(lines) + "\n"


def surjectivity_probe(
    u0: FourierField,
    target: ProjectionTarget,
    E: ModeSubspace,
    ccfg: CascadeConfig,
    scfg: SolverConfig,
    h: ControlSignal | None = None,
    grid_n: int = 5,
    tol: float = 1e-3,
    max_iter: int = 20,
    disturbance=None,
    jobs: int = 1,
    phi_fn=None,
) -> CoverageReport:
    """Coverage sweep of the shrunken ball B_F(R - eps_probe).

    Runs fixed_point_refine on every grid point of an axis-aligned grid
    intersected with the shrunken ball; optionally with a continuous
    disturbance added to the endpoint map (its sup-norm should stay below
    eps_probe / 2 for the covered-ball guarantee to persist).
    """
    dim = target.F.dim
    if dim > 3:
        raise ConfigError("surjectivity_probe supports dim F <= 3")
    eps_probe = measure_probe_gap(u0, target, E, ccfg, scfg, h, phi_fn=phi_fn)
    r = target.R - eps_probe
    if r <= 0:
        return CoverageReport([], eps_probe, disturbance is not None)
    axes = [np.linspace(-r, r, grid_n)] * dim
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    pts = [p for p in pts if np.linalg.norm(p) <= r + 1e-12]

    def run_point(p):
        t0 = time.perf_counter()
        try:
            _, trace = fixed_point_refine(
                p, u0, target, E, ccfg, scfg, h,
                max_iter=max_iter, tol=tol, eps_probe=eps_probe,
                disturbance=disturbance, phi_fn=phi_fn,
            )
            resid, iters, conv = trace.residuals[-1], len(trace.residuals), True
        except NoConvergence as exc:
            trace = exc.trace
            resid, iters, conv = min(trace.residuals), len(trace.residuals), False
        return {
            "y": [float(c) for c in p],
            "residual": float(resid),
            "iterations": iters,
            "wall_time": time.perf_counter() - t0,
            "converged": conv,
        }

    if jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(run_point, pts))
    else:
        rows = [run_point(p) for p in pts]
    return CoverageReport(rows, eps_probe, disturbance is not None)
