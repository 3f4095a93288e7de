"""Fourier-space representation of divergence-free fields on the 3-torus.

The torus has period 2*pi in each coordinate, so lattice frequencies are
integer 3-vectors.  A field is stored through the complex coefficients of
one representative per +/-k pair; the conjugate coefficient is implicit,
which makes the reality condition structural.  With the volume-averaged
L2 pairing, ||u||^2 equals the sum of |c(k)|^2 over the full (both-signs)
mode set, i.e. twice the sum over stored representatives.
"""

from __future__ import annotations

import functools
import itertools
import json

import numpy as np

from nscontrol import kernels
from nscontrol.errors import (
    NegativeTime,
    RealityViolation,
    TruncationMismatch,
)

INCOMPRESSIBILITY_TOL = 1e-12
REALITY_TOL = 1e-10


def _is_representative(k) -> bool:
    """One canonical member per +/-k pair: first nonzero component positive."""
    for c in k:
        if c > 0:
            return True
        if c < 0:
            return False
    return False


class Truncation:
    """Cube truncation max_i |k_i| <= K, zero mode excluded.

    Holds the canonical representative ordering and the dense lookup table
    used by the convolution kernel.
    """

    def __init__(self, radius: int):
        if radius < 1:
            raise ValueError("truncation radius must be a positive integer")
        self.radius = int(radius)
        reps = [
            k
            for k in itertools.product(range(-radius, radius + 1), repeat=3)
            if _is_representative(k)
        ]
        reps.sort()
        self.reps = np.array(reps, dtype=np.int64)
        self.n_reps = len(reps)
        self.ksq = np.sum(self.reps**2, axis=1).astype(np.float64)
        self._rep_index = {tuple(k): i for i, k in enumerate(reps)}
        self._rep_table = None

    @property
    def full_modes(self) -> np.ndarray:
        return np.vstack([self.reps, -self.reps])

    def rep_table(self) -> np.ndarray:
        """Dense (2K+1)^3 map from shifted wavevector to representative row."""
        if self._rep_table is None:
            side = 2 * self.radius + 1
            table = -np.ones((side, side, side), dtype=np.int64)
            shifted = self.reps + self.radius
            table[shifted[:, 0], shifted[:, 1], shifted[:, 2]] = np.arange(self.n_reps)
            self._rep_table = table
        return self._rep_table

    def rep_row(self, k) -> tuple[int, bool]:
        """Return (row, conjugate_flag) locating wavevector k."""
        k = tuple(int(c) for c in k)
        if k in self._rep_index:
            return self._rep_index[k], False
        mk = tuple(-c for c in k)
        if mk in self._rep_index:
            return self._rep_index[mk], True
        raise KeyError(k)

    def contains(self, k) -> bool:
        return max(abs(int(c)) for c in k) <= self.radius and any(c != 0 for c in k)

    def __eq__(self, other):
        return isinstance(other, Truncation) and other.radius == self.radius

    def __hash__(self):
        return hash(("Truncation", self.radius))

    def __repr__(self):
        return f"Truncation(K={self.radius})"


@functools.lru_cache(maxsize=None)
def get_truncation(radius: int) -> Truncation:
    return Truncation(radius)


class FourierField:
    """Divergence-free velocity field as representative Fourier coefficients.

    ``coeffs`` has shape (n_reps, 3), complex; row i is the amplitude of the
    representative wavevector ``trunc.reps[i]``.  Instances are immutable.
    """

    __slots__ = ("trunc", "coeffs")

    def __init__(self, trunc: Truncation, coeffs: np.ndarray, validate: bool = False):
        coeffs = np.asarray(coeffs, dtype=np.complex128)
        if coeffs.shape != (trunc.n_reps, 3):
            raise ValueError(f"coefficient array must have shape ({trunc.n_reps}, 3)")
        self.trunc = trunc
        self.coeffs = coeffs
        self.coeffs.setflags(write=False)
        if validate:
            self.check_divergence_free()

    @classmethod
    def zero(cls, trunc: Truncation) -> "FourierField":
        return cls(trunc, np.zeros((trunc.n_reps, 3), dtype=np.complex128))

    @classmethod
    def from_modes(cls, trunc: Truncation, modes: dict, validate: bool = True) -> "FourierField":
        """Build a field from a map wavevector -> complex amplitude.

        Entries may be given for either or both members of a +/-k pair; when
        both are present they must be complex conjugates within REALITY_TOL.
        """
        coeffs = np.zeros((trunc.n_reps, 3), dtype=np.complex128)
        seen: dict[int, np.ndarray] = {}
        scale = max(
            (float(np.max(np.abs(np.asarray(a)))) for a in modes.values()), default=1.0
        )
        scale = scale or 1.0
        for k, amp in modes.items():
            amp = np.asarray(amp, dtype=np.complex128)
            if all(int(c) == 0 for c in k):
                raise ValueError("zero mode is excluded by the zero-mean convention")
            if not trunc.contains(k):
                continue
            row, conj = trunc.rep_row(k)
            value = np.conj(amp) if conj else amp
            if row in seen:
                if np.max(np.abs(seen[row] - value)) > REALITY_TOL * scale:
                    raise RealityViolation(f"conjugate symmetry broken at k={tuple(k)}")
            else:
                seen[row] = value
                coeffs[row] = value
        return cls(trunc, coeffs, validate=validate)

    def check_divergence_free(self, tol: float = INCOMPRESSIBILITY_TOL):
        norm = np.linalg.norm(self.coeffs)
        if norm == 0.0:
            return
        div = np.einsum("ij,ij->i", self.trunc.reps.astype(np.complex128), self.coeffs)
        if np.max(np.abs(div)) > tol * norm:
            raise ValueError("field is not divergence-free within tolerance")

    @property
    def full_coeffs(self) -> np.ndarray:
        return np.vstack([self.coeffs, np.conj(self.coeffs)])

    def amplitude(self, k) -> np.ndarray:
        row, conj = self.trunc.rep_row(k)
        return np.conj(self.coeffs[row]) if conj else self.coeffs[row].copy()

    def extend_to(self, trunc: Truncation) -> "FourierField":
        """Embed into a larger cube truncation."""
        if trunc == self.trunc:
            return self
        if trunc.radius < self.trunc.radius:
            raise TruncationMismatch("cannot extend into a smaller truncation")
        coeffs = np.zeros((trunc.n_reps, 3), dtype=np.complex128)
        for i, k in enumerate(self.trunc.reps):
            row, conj = trunc.rep_row(k)
            coeffs[row] = np.conj(self.coeffs[i]) if conj else self.coeffs[i]
        return FourierField(trunc, coeffs)

    def restrict_to(self, trunc: Truncation) -> "FourierField":
        """Drop modes outside a smaller cube truncation."""
        if trunc == self.trunc:
            return self
        coeffs = np.zeros((trunc.n_reps, 3), dtype=np.complex128)
        for i, k in enumerate(self.trunc.reps):
            if trunc.contains(k):
                row, conj = trunc.rep_row(k)
                coeffs[row] = np.conj(self.coeffs[i]) if conj else self.coeffs[i]
        return FourierField(trunc, coeffs)

    def evaluate(self, x, y, z) -> np.ndarray:
        """Evaluate the real-space field at points of broadcastable shape.

        Returns an array of shape broadcast(x, y, z).shape + (3,).  Intended
        for oracles and diagnostics, not for production inner loops.
        """
        x, y, z = np.broadcast_arrays(np.asarray(x), np.asarray(y), np.asarray(z))
        out = np.zeros(x.shape + (3,), dtype=np.float64)
        for i, k in enumerate(self.trunc.reps):
            phase = np.exp(1j * (k[0] * x + k[1] * y + k[2] * z))
            # c e^{ikx} + conj adds twice the real part
            out += 2.0 * np.real(phase[..., None] * self.coeffs[i][None, ...])
        return out

    # -- arithmetic ---------------------------------------------------------

    def _binary(self, other, op):
        if not isinstance(other, FourierField):
            return NotImplemented
        if other.trunc != self.trunc:
            raise TruncationMismatch("fields live on different truncations")
        return FourierField(self.trunc, op(self.coeffs, other.coeffs))

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, c):
        return FourierField(self.trunc, self.coeffs * float(c))

    __rmul__ = __mul__

    def __neg__(self):
        return FourierField(self.trunc, -self.coeffs)

    def __repr__(self):
        return f"FourierField(K={self.trunc.radius}, ||.||={l2_norm(self):.4g})"


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------


def _leray_rows(reps: np.ndarray, ksq: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    kdot = np.einsum("ij,ij->i", reps.astype(np.complex128), coeffs)
    return coeffs - (kdot / ksq)[:, None] * reps


def leray_project(raw: dict, trunc: Truncation) -> FourierField:
    """Project raw coefficients onto their divergence-free part.

    ``raw`` maps wavevectors to complex 3-vectors and must satisfy the
    conjugate-symmetry condition; the zero mode and modes outside the
    truncation are dropped.
    """
    coeffs = np.zeros((trunc.n_reps, 3), dtype=np.complex128)
    seen: dict[int, np.ndarray] = {}
    scale = max((float(np.max(np.abs(np.asarray(a)))) for a in raw.values()), default=1.0)
    scale = scale or 1.0
    for k, amp in raw.items():
        amp = np.asarray(amp, dtype=np.complex128)
        if all(int(c) == 0 for c in k):
            continue
        if not trunc.contains(k):
            continue
        row, conj = trunc.rep_row(k)
        value = np.conj(amp) if conj else amp
        if row in seen and np.max(np.abs(seen[row] - value)) > REALITY_TOL * scale:
            raise RealityViolation(f"conjugate symmetry broken at k={tuple(k)}")
        seen[row] = value
        coeffs[row] = value
    coeffs = _leray_rows(trunc.reps, trunc.ksq, coeffs)
    return FourierField(trunc, coeffs)


def stokes_apply(u: FourierField) -> FourierField:
    """Stokes operator: multiply each mode by |k|^2."""
    return FourierField(u.trunc, u.coeffs * u.trunc.ksq[:, None])


def heat_semigroup(u: FourierField, t: float, nu: float = 1.0) -> FourierField:
    """Viscous semigroup: multiply each mode by exp(-nu t |k|^2)."""
    if t < 0:
        raise NegativeTime(f"semigroup time {t} is negative")
    return FourierField(u.trunc, u.coeffs * np.exp(-nu * t * u.trunc.ksq)[:, None])


def bilinear_B(u: FourierField, v: FourierField, extend: bool = False) -> FourierField:
    """Advection term B(u, v) = Leray{(u . grad) v} by exact convolution.

    The result is re-truncated to the working cube (Galerkin convention)
    unless ``extend`` is set, in which case the full doubled-support image
    is returned on the 2K cube.
    """
    if u.trunc != v.trunc:
        raise TruncationMismatch("fields live on different truncations")
    trunc = u.trunc
    out_trunc = get_truncation(2 * trunc.radius) if extend else trunc
    raw = kernels.advection_convolve(
        trunc.full_modes,
        u.full_coeffs,
        trunc.full_modes,
        v.full_coeffs,
        out_trunc.rep_table(),
        out_trunc.radius,
        out_trunc.n_reps,
    )
    coeffs = _leray_rows(out_trunc.reps, out_trunc.ksq, raw)
    return FourierField(out_trunc, coeffs)


def bilinear_B_diag(u: FourierField, extend: bool = False) -> FourierField:
    """B(u) = B(u, u)."""
    return bilinear_B(u, u, extend=extend)


def sobolev_norm(u: FourierField, s: float = 0.0) -> float:
    """Spectral H^s norm, ( sum_k |k|^{2s} |c(k)|^2 )^{1/2} over the full set."""
    weights = u.trunc.ksq**s if s != 0.0 else np.ones_like(u.trunc.ksq)
    return float(np.sqrt(2.0 * np.sum(weights * np.sum(np.abs(u.coeffs) ** 2, axis=1))))


def l2_norm(u: FourierField) -> float:
    return sobolev_norm(u, 0.0)


def vnorm(u: FourierField) -> float:
    """H^1 norm; the accuracy metric for endpoint targets."""
    return sobolev_norm(u, 1.0)


def inner(u: FourierField, v: FourierField) -> float:
    """Volume-averaged L2 pairing."""
    if u.trunc != v.trunc:
        raise TruncationMismatch("fields live on different truncations")
    return float(2.0 * np.real(np.sum(u.coeffs * np.conj(v.coeffs))))


# ---------------------------------------------------------------------------
# Flat real-vector view (used by the subspace algebra)
# ---------------------------------------------------------------------------


def field_to_vec(u: FourierField) -> np.ndarray:
    """Real vector whose euclidean inner product matches ``inner``."""
    c = u.coeffs.ravel()
    return np.sqrt(2.0) * np.concatenate([c.real, c.imag])


def vec_to_field(x: np.ndarray, trunc: Truncation) -> FourierField:
    n = trunc.n_reps * 3
    x = np.asarray(x, dtype=np.float64) / np.sqrt(2.0)
    c = (x[:n] + 1j * x[n:]).reshape(trunc.n_reps, 3)
    return FourierField(trunc, c)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def field_to_dict(u: FourierField) -> dict:
    entries = []
    for i, k in enumerate(u.trunc.reps):
        c = u.coeffs[i]
        if np.all(c == 0):
            continue
        entries.append(
            {
                "k": [int(v) for v in k],
                "re": [float(v) for v in c.real],
                "im": [float(v) for v in c.imag],
            }
        )
    return {"truncation": u.trunc.radius, "modes": entries}


def field_from_dict(data: dict) -> FourierField:
    trunc = get_truncation(int(data["truncation"]))
    modes = {}
    for entry in data["modes"]:
        k = tuple(int(v) for v in entry["k"])
        modes[k] = np.array(entry["re"], dtype=float) + 1j * np.array(entry["im"], dtype=float)
    field = FourierField.from_modes(trunc, modes, validate=False)
    field.check_divergence_free(tol=1e-10)
    return field


def save_field(u: FourierField, path):
    with open(path, "w") as fh:
        json.dump(field_to_dict(u), fh, indent=2, sort_keys=True)


def load_field(path) -> FourierField:
    with open(path) as fh:
        return field_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Test helpers
# ---------------------------------------------------------------------------


def random_field(trunc: Truncation, rng: np.random.Generator, decay: float = 0.0) -> FourierField:
    """Random divergence-free field with optional |k|^-decay spectral falloff."""
    c = rng.standard_normal((trunc.n_reps, 3)) + 1j * rng.standard_normal((trunc.n_reps, 3))
    if decay > 0:
        c = c * (trunc.ksq ** (-decay / 2.0))[:, None]
    coeffs = _leray_rows(trunc.reps, trunc.ksq, c)
    return FourierField(trunc, coeffs)


def trig_mode(trunc: Truncation, k, polarization, kind: str = "cos") -> FourierField:
    """Unit-norm real Fourier mode cos(k.x) p or sin(k.x) p, p orthogonal to k."""
    p = np.asarray(polarization, dtype=np.float64)
    k_arr = np.asarray(k, dtype=np.float64)
    if abs(float(p @ k_arr)) > 1e-12:
        raise ValueError("polarization must be orthogonal to the wavevector")
    p = p / np.linalg.norm(p)
    if kind == "cos":
        amp = p / np.sqrt(2.0) + 0j
    elif kind == "sin":
        amp = -1j * p / np.sqrt(2.0)
    else:
        raise ValueError("kind must be 'cos' or 'sin'")
    coeffs = np.zeros((trunc.n_reps, 3), dtype=np.complex128)
    row, conj = trunc.rep_row(k)
    coeffs[row] = np.conj(amp) if conj else amp
    return FourierField(trunc, coeffs)
