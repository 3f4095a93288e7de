"""Finite-dimensional subspace algebra and the saturation operator.

A ModeSubspace is an orthonormal list of divergence-free fields.  The
saturation step enlarges a subspace by certified directions built from
symmetric advection cross terms; certification means a cone decomposition
over the original subspace exists for both signs of the direction, which
keeps the computed chain inside the true saturation subspaces
(approximation from below).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.optimize import nnls

from nscontrol.errors import NotRepresentable, WeightOverflow
from nscontrol.spectral import (
    FourierField,
    Truncation,
    bilinear_B,
    bilinear_B_diag,
    field_from_dict,
    field_to_dict,
    field_to_vec,
    get_truncation,
    inner,
    l2_norm,
    random_field,
    stokes_apply,
    trig_mode,
    vec_to_field,
)

ORTHO_TOL = 1e-10
RANK_CUTOFF = 1e-8
CONE_TOL = 1e-9


def orthonormalize(fields, trunc: Truncation, cutoff: float = RANK_CUTOFF):
    """Modified Gram-Schmidt with one re-orthogonalization pass.

    Vectors whose residual drops below ``cutoff`` relative to the largest
    input norm are treated as dependent and dropped.
    """
    if not fields:
        return []
    vecs = [field_to_vec(f.extend_to(trunc)) for f in fields]
    scale = max(np.linalg.norm(v) for v in vecs)
    if scale == 0.0:
        return []
    basis = []
    for v in vecs:
        w = v.copy()
        for _ in range(2):
            for b in basis:
                w -= (b @ w) * b
        norm = np.linalg.norm(w)
        if norm > cutoff * scale:
            basis.append(w / norm)
    return [vec_to_field(b, trunc) for b in basis]


class ModeSubspace:
    """Subspace of the divergence-free space with an orthonormal basis."""

    def __init__(self, trunc: Truncation, basis, label: str = "", check: bool = True):
        self.trunc = trunc
        self.basis = [b.extend_to(trunc) for b in basis]
        self.label = label
        if self.basis:
            self._mat = np.array([field_to_vec(b) for b in self.basis])
        else:
            self._mat = np.zeros((0, trunc.n_reps * 6))
        if check and self.basis:
            gram = self._mat @ self._mat.T
            if np.max(np.abs(gram - np.eye(self.dim))) > ORTHO_TOL:
                raise ValueError("basis is not orthonormal within tolerance")

    @classmethod
    def from_spanning(cls, trunc: Truncation, fields, label: str = "") -> "ModeSubspace":
        return cls(trunc, orthonormalize(fields, trunc), label=label, check=False)

    @property
    def dim(self) -> int:
        return len(self.basis)

    def extend_to(self, trunc: Truncation) -> "ModeSubspace":
        if trunc == self.trunc:
            return self
        return ModeSubspace(trunc, self.basis, label=self.label, check=False)

    def coefficients(self, u: FourierField) -> np.ndarray:
        """Orthogonal-projection coefficients of u in this basis."""
        return self._mat @ field_to_vec(u.extend_to(self.trunc))

    def from_coefficients(self, coeffs) -> FourierField:
        x = self._mat.T @ np.asarray(coeffs, dtype=float)
        return vec_to_field(x, self.trunc)

    def project(self, u: FourierField) -> FourierField:
        return self.from_coefficients(self.coefficients(u))

    def complement(self, u: FourierField) -> FourierField:
        u = u.extend_to(self.trunc)
        return u - self.project(u)

    def residual(self, u: FourierField) -> float:
        """Distance from u to the subspace."""
        return l2_norm(self.complement(u))

    def contains(self, u: FourierField, tol: float = 1e-8) -> bool:
        scale = max(l2_norm(u), 1e-300)
        return self.residual(u) <= tol * scale

    def project_vec(self, x: np.ndarray) -> np.ndarray:
        return self._mat.T @ (self._mat @ x)

    def __repr__(self):
        tag = f" '{self.label}'" if self.label else ""
        return f"ModeSubspace(dim={self.dim}, K={self.trunc.radius}{tag})"


def project_onto(u: FourierField, S: ModeSubspace) -> FourierField:
    return S.project(u)


def _polarization_pair(k):
    k = np.asarray(k, dtype=float)
    helper = np.array([1.0, 0, 0]) if abs(k[0]) < max(abs(k[1]), abs(k[2]), 0.5) else np.array([0, 1.0, 0])
    p1 = np.cross(k, helper)
    p1 /= np.linalg.norm(p1)
    p2 = np.cross(k, p1)
    p2 /= np.linalg.norm(p2)
    return p1, p2


def shell_subspace(n_shell: int, trunc: Truncation) -> ModeSubspace:
    """Span of all polarization modes with 1 <= |k|^2 <= n_shell.

    Per representative wavevector this contributes cos/sin times two
    polarizations, four orthonormal fields.
    """
    fields = []
    for k in trunc.reps:
        ksq = int(k @ k)
        if ksq < 1 or ksq > n_shell:
            continue
        p1, p2 = _polarization_pair(k)
        for p in (p1, p2):
            for kind in ("cos", "sin"):
                fields.append(trig_mode(trunc, k, p, kind))
    return ModeSubspace(trunc, fields, label=f"shell|k|^2<={n_shell}")


# ---------------------------------------------------------------------------
# Cone decompositions
# ---------------------------------------------------------------------------


@dataclass
class GeneratorPolicy:
    """Finite generating set for cone decompositions.

    Signed combinations of at most ``max_nonzero`` basis fields with
    coefficients in {-1, 0, 1}; since B is quadratic, generators equal up
    to sign are merged.
    """

    max_nonzero: int = 2

    def generators(self, basis) -> list:
        gens = list(basis)
        if self.max_nonzero >= 2:
            n = len(basis)
            for i in range(n):
                for j in range(i + 1, n):
                    gens.append(basis[i] + basis[j])
                    gens.append(basis[i] - basis[j])
        return gens


@dataclass
class ConeDecomposition:
    """Certificate target = base - sum_j alpha_j B(zeta_j), alpha_j >= 0."""

    target: FourierField
    base: FourierField
    pairs: list  # [(zeta, alpha)]
    residual: float
    convexified: list = dc_field(default_factory=list)  # [(zeta, lam)]
    nu: float | None = None

    def check_cone_identity(self, tol: float = CONE_TOL) -> float:
        trunc = self.target.trunc
        acc = self.base.extend_to(trunc)
        for zeta, alpha in self.pairs:
            acc = acc - alpha * bilinear_B_diag(zeta, extend=True).extend_to(trunc)
        err = l2_norm(self.target - acc)
        scale = max(l2_norm(self.target), 1.0)
        if err > tol * scale:
            raise AssertionError(f"cone identity residual {err:.3e}")
        return err

    def convexified_residual(self, u: FourierField, nu: float) -> float:
        """Residual of B(u) - target = sum_j lam_j (B(u + zeta_j) + nu L zeta_j) - base."""
        radius = max(
            u.trunc.radius,
            self.target.trunc.radius,
            max((z.trunc.radius for z, _ in self.convexified), default=1),
        )
        work = get_truncation(radius)
        big = get_truncation(2 * radius)
        uu = u.extend_to(work)
        lhs = bilinear_B_diag(uu, extend=True) - self.target.extend_to(big)
        rhs = -1.0 * self.base.extend_to(big)
        for zeta, lam in self.convexified:
            z = zeta.extend_to(work)
            rhs = rhs + lam * (
                bilinear_B_diag(uu + z, extend=True) + nu * stokes_apply(z).extend_to(big)
            )
        return l2_norm(lhs - rhs)


def _cone_columns(E: ModeSubspace, policy: GeneratorPolicy, work: Truncation):
    """Generators and their E-complement B-image vectors on ``work``."""
    gens = policy.generators(E.basis)
    E_work = E.extend_to(work)
    cols = []
    kept = []
    for zeta in gens:
        img = bilinear_B_diag(zeta, extend=True).extend_to(work)
        q = E_work.complement(img)
        v = field_to_vec(q)
        if np.linalg.norm(v) > 1e-14:
            cols.append(v)
            kept.append(zeta)
    if cols:
        return kept, np.array(cols).T, E_work
    return kept, np.zeros((work.n_reps * 6, 0)), E_work


def cone_decompose(
    eta1: FourierField,
    E: ModeSubspace,
    policy: GeneratorPolicy | None = None,
    tol: float = CONE_TOL,
) -> ConeDecomposition:
    """Solve eta1 = base - sum alpha_j B(zeta_j) by nonnegative least squares.

    The generators zeta_j range over the policy's finite set; failure to
    reach the tolerance raises NotRepresentable, signalling the caller to
    enlarge the policy.
    """
    policy = policy or GeneratorPolicy()
    work = get_truncation(max(2 * E.trunc.radius, eta1.trunc.radius))
    gens, A, E_work = _cone_columns(E, policy, work)
    target = eta1.extend_to(work)
    b = field_to_vec(E_work.complement(target))
    scale = max(l2_norm(eta1), 1e-300)
    if A.shape[1] == 0 or np.linalg.norm(b) <= tol * scale:
        base = E_work.project(target)
        resid = l2_norm(target - base)
        if resid > tol * scale:
            raise NotRepresentable(resid)
        return ConeDecomposition(target, base, [], resid)
    # reduce to the span of the columns and the target for speed
    basis, _ = np.linalg.qr(np.column_stack([A, b]))
    alpha, _ = nnls(-(basis.T @ A), basis.T @ b)
    resid_vec = b + A @ alpha
    resid = float(np.linalg.norm(resid_vec))
    if resid > tol * scale:
        raise NotRepresentable(resid)
    pairs = []
    acc = target
    for zeta, a in zip(gens, alpha):
        if a > 1e-13:
            zb = bilinear_B_diag(zeta, extend=True).extend_to(work)
            acc = acc + float(a) * zb
            pairs.append((zeta, float(a)))
    base = E_work.project(acc)
    final = l2_norm(target - (base - _cone_sum(pairs, work)))
    return ConeDecomposition(target, base, pairs, final)


def _cone_sum(pairs, work: Truncation) -> FourierField:
    acc = FourierField.zero(work)
    for zeta, a in pairs:
        acc = acc + a * bilinear_B_diag(zeta, extend=True).extend_to(work)
    return acc


def derive_convexified(
    d: ConeDecomposition, nu: float, verify: bool = True, n_checks: int = 20
) -> ConeDecomposition:
    """Fill the convexified form used by the relaxation step.

    Each cone pair (zeta, alpha) becomes the signed pair +-zeta' with equal
    weight lam, zeta' = sqrt(alpha / (2 lam)) zeta, so advection cross terms
    and the nu L zeta terms cancel; a zero-vector slack entry tops the
    weights up to one.
    """
    p = len(d.pairs)
    work = d.target.trunc
    if p == 0:
        conv = [(FourierField.zero(work), 1.0)]
    else:
        lam = 1.0 / (4.0 * p)
        slack = 1.0 - 2.0 * p * lam
        if slack < -1e-12:
            raise WeightOverflow("convexified weights exceed one")
        conv = []
        for zeta, alpha in d.pairs:
            zp = float(np.sqrt(alpha / (2.0 * lam))) * zeta
            conv.append((zp, lam))
            conv.append((-1.0 * zp, lam))
        conv.append((FourierField.zero(work), slack))
    out = ConeDecomposition(d.target, d.base, d.pairs, d.residual, convexified=conv, nu=nu)
    if verify:
        rng = np.random.default_rng(20210905)
        small = get_truncation(max(1, work.radius // 2))
        scale = max(l2_norm(d.target), 1.0)
        for _ in range(n_checks):
            u = random_field(small, rng)
            err = out.convexified_residual(u, nu)
            if err > CONE_TOL * max(scale, l2_norm(u) ** 2):
                raise AssertionError(f"convexified identity residual {err:.3e}")
    return out


# ---------------------------------------------------------------------------
# Saturation
# ---------------------------------------------------------------------------


def saturation_step(
    E: ModeSubspace,
    policy: GeneratorPolicy | None = None,
    certify: bool = True,
    tol: float = CONE_TOL,
) -> ModeSubspace:
    """One step of the saturation chain: certified enlargement of E.

    Candidate directions are the symmetric cross terms B(bi, bj) + B(bj, bi)
    of basis fields, taken untruncated.  With ``certify`` on, a candidate
    direction is kept only when both of its signs lie in the cone
    { -sum alpha_j B(zeta_j) } modulo E, which guarantees the round-trip
    property: every new basis field admits a cone decomposition over E.
    """
    if E.dim == 0:
        raise ValueError("saturation step requires a nonempty subspace")
    policy = policy or GeneratorPolicy()
    work = get_truncation(2 * E.trunc.radius)
    E_work = E.extend_to(work)

    crosses = []
    n = E.dim
    for i in range(n):
        for j in range(i, n):
            if i == j:
                img = bilinear_B_diag(E.basis[i], extend=True)
                img = 2.0 * img
            else:
                img = bilinear_B(E.basis[i], E.basis[j], extend=True) + bilinear_B(
                    E.basis[j], E.basis[i], extend=True
                )
            crosses.append(E_work.complement(img))
    candidates = orthonormalize(crosses, work)
    if not candidates:
        return ModeSubspace(work, E_work.basis, label=E.label, check=False)

    if certify:
        _, A, _ = _cone_columns(E, policy, work)
        if A.shape[1] == 0:
            kept = []
        else:
            span, _ = np.linalg.qr(
                np.column_stack([A] + [field_to_vec(g) for g in candidates])
            )
            Ared = span.T @ A
            kept = []
            for g in candidates:
                b = span.T @ field_to_vec(g)
                ok = True
                for sign in (1.0, -1.0):
                    _, resid = nnls(-Ared, sign * b)
                    if resid > tol:
                        ok = False
                        break
                if ok:
                    kept.append(g)
        candidates = kept

    return ModeSubspace(work, E_work.basis + candidates, label=E.label, check=False)


@dataclass
class CoverageReport:
    rows: list  # [(k, dim, covered_fraction)]
    covered_at: int | None

    @property
    def covered(self) -> bool:
        return self.covered_at is not None

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["k", "dim", "covered_fraction"])
        for row in self.rows:
            writer.writerow([row[0], row[1], f"{row[2]:.6f}"])
        return buf.getvalue()


def _covered_fraction(E: ModeSubspace, target: ModeSubspace, tol: float) -> float:
    if target.dim == 0:
        return 1.0
    work = get_truncation(max(E.trunc.radius, target.trunc.radius))
    E_big = E.extend_to(work)
    hits = sum(1 for b in target.basis if E_big.residual(b.extend_to(work)) < tol)
    return hits / target.dim


def saturation_sequence(
    E0: ModeSubspace,
    k_max: int,
    target: ModeSubspace,
    policy: GeneratorPolicy | None = None,
    certify: bool = True,
    cover_tol: float = 1e-8,
):
    """Chain E_0 within E_1 within ... and coverage of the target subspace.

    Stops early once the target is covered (every target basis field has
    projection residual below ``cover_tol``).
    """
    chain = [E0]
    rows = []
    covered_at = None
    frac = _covered_fraction(E0, target, cover_tol)
    rows.append((0, E0.dim, frac))
    if frac == 1.0:
        covered_at = 0
    k = 0
    while covered_at is None and k < k_max:
        k += 1
        nxt = saturation_step(chain[-1], policy=policy, certify=certify)
        chain.append(nxt)
        frac = _covered_fraction(nxt, target, cover_tol)
        rows.append((k, nxt.dim, frac))
        if frac == 1.0:
            covered_at = k
    return chain, CoverageReport(rows, covered_at)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def subspace_to_dict(S: ModeSubspace) -> dict:
    return {
        "truncation": S.trunc.radius,
        "label": S.label,
        "basis": [field_to_dict(b) for b in S.basis],
    }


def subspace_from_dict(data: dict) -> ModeSubspace:
    trunc = get_truncation(int(data["truncation"]))
    basis = [field_from_dict(d).extend_to(trunc) for d in data["basis"]]
    return ModeSubspace(trunc, basis, label=data.get("label", ""))
