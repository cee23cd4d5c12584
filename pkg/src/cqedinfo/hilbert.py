"""Truncated Hilbert space of one cavity mode and one two-level atom.

Tensor ordering is fixed as ``field (x) atom`` everywhere in the package: the
joint basis index of ``|n>|s>`` is ``2*n + s`` with ``s = 0`` for the ground
state ``|g>`` and ``s = 1`` for the excited state ``|e>``.  Use
:func:`joint_index` rather than re-deriving this.

All value types are immutable; their arrays are marked read-only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln
from scipy.stats import poisson

from .errors import TruncationError

ATOM_DIM = 2
GROUND = 0
EXCITED = 1

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-10
POSITIVITY_TOL = 1e-8
NORM_TOL = 1e-8
EIGEN_FLOOR = 1e-12


def joint_index(n: int, s: int) -> int:
    """Basis index of ``|n>_field (x) |s>_atom``."""
    return ATOM_DIM * n + s


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FockSpec:
    """Field truncation: Fock levels ``0..n_max`` are retained."""

    n_max: int

    def __post_init__(self):
        if int(self.n_max) != self.n_max or self.n_max < 1:
            raise ValueError(f"n_max must be an integer >= 1, got {self.n_max!r}")

    @property
    def field_dim(self) -> int:
        return self.n_max + 1

    @property
    def dim(self) -> int:
        return ATOM_DIM * (self.n_max + 1)

    @classmethod
    def for_amplitude(cls, amplitude: complex, rule: str = "recommended") -> "FockSpec":
        """Pick a truncation adequate for a coherent state of ``amplitude``.

        ``rule="recommended"`` gives ``ceil(|a|^2 + 10|a| + 10)``;
        ``rule="minimal"`` gives the smallest ``n_max`` whose retained
        Poisson weight passes the ``1e-8`` norm test (used to keep dense
        solves and long trajectories affordable).
        """
        r = abs(amplitude)
        if rule == "recommended":
            return cls(max(1, math.ceil(r * r + 10 * r + 10)))
        if rule == "minimal":
            return cls(minimal_n_max(amplitude))
        raise ValueError(f"unknown truncation rule {rule!r}")


def minimal_n_max(amplitude: complex, tol: float = NORM_TOL) -> int:
    mean = abs(amplitude) ** 2
    n = max(1, int(mean))
    # half-tolerance margin keeps the coefficient-sum test clear of roundoff at the boundary
    while poisson.sf(n, mean) > 0.5 * tol:
        n += 1
    return n


@dataclass(frozen=True)
class Operator:
    matrix: np.ndarray
    spec: FockSpec

    def __post_init__(self):
        m = _frozen(self.matrix)
        if m.shape != (self.spec.dim, self.spec.dim):
            raise ValueError(f"operator shape {m.shape} does not match dimension {self.spec.dim}")
        object.__setattr__(self, "matrix", m)

    @property
    def dag(self) -> "Operator":
        return Operator(self.matrix.conj().T, self.spec)

    def __matmul__(self, other: "Operator") -> "Operator":
        return Operator(self.matrix @ other.matrix, self.spec)


@dataclass(frozen=True)
class PureState:
    """Normalized state vector.

    ``space`` is ``"joint"`` for atom-field states and ``"field"`` for the
    bare field factor returned by :func:`coherent_state`.
    """

    vector: np.ndarray
    spec: FockSpec
    space: str = "joint"

    def __post_init__(self):
        v = _frozen(self.vector)
        expected = self.spec.dim if self.space == "joint" else self.spec.field_dim
        if v.shape != (expected,):
            raise ValueError(f"state has shape {v.shape}, expected ({expected},)")
        if abs(np.linalg.norm(v) - 1.0) > NORM_TOL:
            raise ValueError(f"state norm {np.linalg.norm(v)!r} differs from 1")
        object.__setattr__(self, "vector", v)

    def projector(self) -> "DensityMatrix":
        return DensityMatrix(np.outer(self.vector, self.vector.conj()), self.spec, validate=False)


def is_positive(matrix: np.ndarray, tol: float = POSITIVITY_TOL) -> bool:
    """True when the smallest eigenvalue of a Hermitian matrix exceeds ``-tol``."""
    try:
        np.linalg.cholesky(matrix + tol * np.eye(matrix.shape[-1]))
    except np.linalg.LinAlgError:
        return False
    return True


@dataclass(frozen=True)
class DensityMatrix:
    matrix: np.ndarray
    spec: FockSpec
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        m = _frozen(self.matrix)
        if m.shape != (self.spec.dim, self.spec.dim):
            raise ValueError(f"density matrix shape {m.shape} does not match dimension {self.spec.dim}")
        object.__setattr__(self, "matrix", m)
        if self.validate:
            check_density_matrix(m)

    def expect(self, op: Operator | np.ndarray) -> complex:
        mat = op.matrix if isinstance(op, Operator) else op
        return complex(np.trace(self.matrix @ mat))


def check_density_matrix(m: np.ndarray) -> None:
    dev = np.max(np.abs(m - m.conj().T))
    if dev > HERMITIAN_TOL:
        raise ValueError(f"matrix is not Hermitian (max deviation {dev:.3e})")
    tr = np.trace(m)
    if abs(tr - 1.0) > TRACE_TOL:
        raise ValueError(f"trace {tr!r} differs from 1")
    if not is_positive(m):
        lo = np.linalg.eigvalsh(m)[0]
        raise ValueError(f"matrix is not positive (minimum eigenvalue {lo:.3e})")


def field_annihilation(n_max: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, n_max + 1, dtype=float)), 1).astype(complex)


def make_annihilation(spec: FockSpec) -> Operator:
    """Cavity lowering operator ``a (x) 1_atom``."""
    return Operator(np.kron(field_annihilation(spec.n_max), np.eye(ATOM_DIM)), spec)


def make_sigma(spec: FockSpec) -> Operator:
    """Atomic lowering operator ``1_field (x) |g><e|``."""
    s = np.zeros((ATOM_DIM, ATOM_DIM), dtype=complex)
    s[GROUND, EXCITED] = 1.0
    return Operator(np.kron(np.eye(spec.field_dim), s), spec)


def make_sigma_z(spec: FockSpec) -> Operator:
    """``|e><e| - |g><g|`` on the atom."""
    sz = np.diag([-1.0, 1.0]).astype(complex)
    return Operator(np.kron(np.eye(spec.field_dim), sz), spec)


def coherent_coefficients(amplitude: complex, n_max: int) -> np.ndarray:
    """Unnormalized truncated coherent-state coefficients, log-space stable."""
    n = np.arange(n_max + 1)
    if amplitude == 0:
        c = np.zeros(n_max + 1, dtype=complex)
        c[0] = 1.0
        return c
    r, theta = abs(amplitude), np.angle(amplitude)
    log_mag = -0.5 * r * r + n * math.log(r) - 0.5 * gammaln(n + 1)
    return np.exp(log_mag) * np.exp(1j * n * theta)


def coherent_state(amplitude: complex, spec: FockSpec) -> PureState:
    """Field coherent state ``|alpha>`` truncated to ``spec``.

    Raises :class:`TruncationError` when the retained norm falls short of
    ``1 - 1e-8``; otherwise the vector is renormalized.
    """
    c = coherent_coefficients(amplitude, spec.n_max)
    norm_sq = float(np.vdot(c, c).real)
    if norm_sq < 1.0 - NORM_TOL:
        raise TruncationError(
            f"n_max={spec.n_max} keeps only {norm_sq:.10f} of |alpha={amplitude:.4g}>; "
            f"need n_max >= {minimal_n_max(amplitude)}"
        )
    return PureState(c / math.sqrt(norm_sq), spec, space="field")


def atom_superposition(sign: int) -> np.ndarray:
    """``(|g> + sign*i|e>)/sqrt(2)``."""
    v = np.zeros(ATOM_DIM, dtype=complex)
    v[GROUND] = 1.0
    v[EXCITED] = 1j * sign
    return v / math.sqrt(2.0)


def dressed_state(sign: int, amplitude: complex, spec: FockSpec) -> PureState:
    """``|alpha;+> = |alpha>(|g>+i|e>)/sqrt2`` or ``|alpha*;-> = |alpha*>(|g>-i|e>)/sqrt2``.

    For ``sign=-1`` the field amplitude is the conjugate of ``amplitude``.
    """
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    field_amp = amplitude if sign == 1 else np.conj(amplitude)
    f = coherent_state(field_amp, spec).vector
    return PureState(np.kron(f, atom_superposition(sign)), spec)


def entropy_from_eigenvalues(w, floor: float = EIGEN_FLOOR):
    """``-sum w ln w`` over the last axis, dropping eigenvalues at or below ``floor``."""
    w = np.asarray(w, dtype=float)
    safe = np.where(w > floor, w, 1.0)
    h = -np.sum(np.where(w > floor, safe * np.log(safe), 0.0), axis=-1)
    h = np.maximum(h, 0.0)
    return float(h) if h.ndim == 0 else h


def von_neumann_entropy(rho: DensityMatrix | np.ndarray) -> float:
    """``-tr(rho ln rho)`` in nats, from the spectrum.

    Eigenvalues at or below ``1e-12`` count as exact zeros.
    """
    m = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
    return entropy_from_eigenvalues(np.linalg.eigvalsh(0.5 * (m + m.conj().T)))


def trace_norm(m: np.ndarray) -> float:
    """Sum of singular values."""
    return float(np.sum(np.linalg.svd(m, compute_uv=False)))


def trace_distance(rho: DensityMatrix | np.ndarray, sigma: DensityMatrix | np.ndarray) -> float:
    a = rho.matrix if isinstance(rho, DensityMatrix) else rho
    b = sigma.matrix if isinstance(sigma, DensityMatrix) else sigma
    diff = a - b
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (diff + diff.conj().T)))))
