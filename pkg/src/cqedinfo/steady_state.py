"""Strong-driving steady state: closed form and Liouvillian null space."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .dynamics import SystemParams, liouvillian_apply, measurement_apply
from .errors import ConvergenceError, DomainError
from .hilbert import (
    DensityMatrix,
    FockSpec,
    PureState,
    dressed_state,
    make_annihilation,
    make_sigma,
    trace_distance,
    trace_norm,
)

RESIDUAL_TOL = 1e-8
DENSE_LIMIT = 1024
DEGENERACY_COND = 1e12


def _check_domain(p: SystemParams) -> float:
    x = p.g / (2.0 * p.E)
    if not x < 1.0:
        raise DomainError(f"strong-driving amplitude requires g < 2E (g={p.g}, E={p.E})")
    return x


def analytic_alpha(p: SystemParams) -> complex:
    """Field amplitude of the strong-driving steady state.

    ``alpha = (E/kappa) [1 - x^2 + i x sqrt(1 - x^2)]`` with ``x = g/(2E)``.
    """
    x = _check_domain(p)
    one_minus_x2 = (1.0 - x) * (1.0 + x)
    scale = p.E / p.kappa
    return complex(scale * one_minus_x2, scale * x * math.sqrt(one_minus_x2))


def spec_for(p: SystemParams, rule: str = "recommended") -> SystemParams:
    """Copy of ``p`` with the truncation chosen for its steady-state amplitude."""
    return p.with_(spec=FockSpec.for_amplitude(analytic_alpha(p), rule))


def dressed_basis(p: SystemParams) -> tuple[PureState, PureState]:
    """``(|alpha;+>, |alpha*;->)`` for the amplitude of ``p``."""
    alpha = analytic_alpha(p)
    return dressed_state(+1, alpha, p.spec), dressed_state(-1, alpha, p.spec)


def rho_ss_analytic(p: SystemParams) -> DensityMatrix:
    """Equal mixture of the two dressed branches."""
    plus, minus = dressed_basis(p)
    m = 0.5 * (np.outer(plus.vector, plus.vector.conj()) + np.outer(minus.vector, minus.vector.conj()))
    return DensityMatrix(m, p.spec)


def liouvillian_superoperator(p: SystemParams) -> sp.csr_matrix:
    """Sparse matrix of ``L`` acting on column-stacked ``vec(rho)``.

    Assembled from the explicit operator matrices with
    ``vec(A X B) = (B^T kron A) vec(X)``, independent of the slicing kernels
    used for time stepping.
    """
    A = sp.csr_matrix(make_annihilation(p.spec).matrix)
    S = sp.csr_matrix(make_sigma(p.spec).matrix)
    Ad = A.conj().T.tocsr()
    X = p.E * (Ad - A) + p.g * (Ad @ S - S.conj().T @ A)
    N = Ad @ A
    eye = sp.identity(p.dim, dtype=complex, format="csr")
    sup = sp.kron(eye, X) - sp.kron(X.T, eye)
    sup = sup + p.kappa * (2.0 * sp.kron(A.conj(), A) - sp.kron(eye, N) - sp.kron(N.T, eye))
    return sup.tocsr()


def _unvec(v: np.ndarray, d: int) -> np.ndarray:
    return v.reshape(d, d, order="F")


@dataclass(frozen=True)
class NullSpace:
    """Numerical kernel of the Liouvillian.

    ``basis`` holds Hermitian, unit-trace-normalized operators where the trace
    is nonzero; ``gaps`` are the singular values (or eigenvalue moduli)
    classified as zero.
    """

    basis: tuple
    gaps: tuple
    method: str

    @property
    def dimension(self) -> int:
        return len(self.basis)


class DegenerateSteadyState(ConvergenceError):
    """The Liouvillian kernel has more than one dimension; see ``null_space``."""

    def __init__(self, null_space: NullSpace):
        super().__init__(f"steady state is not unique: null space has dimension {null_space.dimension}")
        self.null_space = null_space


def liouvillian_null_space(p: SystemParams, tol: float = 1e-9, dense_limit: int = DENSE_LIMIT) -> NullSpace:
    """Kernel of ``L`` as an explicit (possibly multi-dimensional) result.

    Dense SVD when ``dim^2 <= dense_limit``; otherwise shift-invert Arnoldi on
    the sparse superoperator.
    """
    d = p.dim
    sup = liouvillian_superoperator(p)
    if d * d <= dense_limit:
        _, s, vh = np.linalg.svd(sup.toarray())
        scale = s[0]
        mask = s < tol * scale
        vecs = vh[mask].conj()
        gaps = tuple(float(x) for x in s[mask])
        method = "dense-svd"
    else:
        k = min(8, d * d - 2)
        vals, vecs_t = spla.eigs(sup.tocsc(), k=k, sigma=1e-10, which="LM")
        scale = spla.norm(sup, 1)
        mask = np.abs(vals) < tol * scale
        vecs = vecs_t[:, mask].T
        gaps = tuple(float(x) for x in np.abs(vals[mask]))
        method = "sparse-shift-invert"
    basis = []
    for v in vecs:
        m = _unvec(v, d)
        tr = np.trace(m)
        if abs(tr) > 1e-12:
            m = m / tr
        basis.append(0.5 * (m + m.conj().T))
    return NullSpace(tuple(basis), gaps, method)


def rho_ss_numeric(p: SystemParams, dense_limit: int = DENSE_LIMIT) -> DensityMatrix:
    """Unit-trace solution of ``L(rho) = 0`` with residual below ``1e-8``.

    Small systems use the dense null space directly.  Larger ones solve the
    sparse system in which the ``(0, 0)`` balance row, redundant because
    ``L`` preserves the trace, is replaced by the trace condition.  Raises
    :class:`DegenerateSteadyState` when the kernel is multi-dimensional and
    :class:`ConvergenceError` when it is empty or the residual check fails.
    Results are cached; ``phi`` and ``eta`` do not enter ``L`` and are not
    part of the cache key.  The returned state is immutable.
    """
    return _rho_ss_numeric(p.with_(phi=0.0, eta=1.0), dense_limit)


@functools.lru_cache(maxsize=8)
def _rho_ss_numeric(p: SystemParams, dense_limit: int) -> DensityMatrix:
    d = p.dim
    if d * d <= dense_limit:
        ns = liouvillian_null_space(p, dense_limit=dense_limit)
        if ns.dimension == 0:
            raise ConvergenceError("Liouvillian has no numerical null space")
        if ns.dimension > 1:
            raise DegenerateSteadyState(ns)
        rho = ns.basis[0]
    else:
        sup = liouvillian_superoperator(p).tolil()
        trace_row = np.zeros(d * d, dtype=complex)
        trace_row[np.arange(d) * (d + 1)] = 1.0
        sup[0, :] = trace_row
        rhs = np.zeros(d * d, dtype=complex)
        rhs[0] = 1.0
        csc = sup.tocsc()
        try:
            lu = spla.splu(csc)
            cond = spla.norm(csc, 1) * _inverse_norm_estimate(lu, d * d)
        except RuntimeError:
            cond = np.inf
        if not cond < DEGENERACY_COND:
            ns = liouvillian_null_space(p, dense_limit=dense_limit)
            if ns.dimension > 1:
                raise DegenerateSteadyState(ns)
            raise ConvergenceError(f"bordered Liouvillian is singular (condition estimate {cond:.3e})")
        rho = _unvec(lu.solve(rhs), d)
        rho = 0.5 * (rho + rho.conj().T)
        rho = rho / np.trace(rho).real
    residual = liouvillian_residual(rho, p)
    if not np.isfinite(residual) or residual > RESIDUAL_TOL:
        raise ConvergenceError(f"steady-state residual {residual:.3e} exceeds {RESIDUAL_TOL}")
    return DensityMatrix(rho, p.spec)


def _inverse_norm_estimate(lu, n: int) -> float:
    inv = spla.LinearOperator(
        (n, n),
        matvec=lu.solve,
        rmatvec=lambda x: lu.solve(x, trans="H"),
        dtype=complex,
    )
    return float(spla.onenormest(inv))


def liouvillian_residual(rho, p: SystemParams) -> float:
    """Trace norm of ``L(rho)``."""
    return trace_norm(liouvillian_apply(rho, p))


def commutator_norm(a: np.ndarray, b: np.ndarray) -> float:
    return trace_norm(a @ b - b @ a)


@dataclass
class SteadyStateReport:
    params: SystemParams
    rho_analytic: DensityMatrix = field(repr=False)
    rho_numeric: DensityMatrix = field(repr=False)
    trace_distance: float
    liouvillian_residual_analytic: float
    liouvillian_residual_numeric: float

    def as_row(self) -> dict:
        p = self.params
        return {
            "E": p.E,
            "g": p.g,
            "kappa": p.kappa,
            "eta": p.eta,
            "phi": p.phi,
            "n_max": p.spec.n_max,
            "trace_distance": self.trace_distance,
            "residual_analytic": self.liouvillian_residual_analytic,
            "residual_numeric": self.liouvillian_residual_numeric,
        }


def steady_state_report(p: SystemParams) -> SteadyStateReport:
    analytic = rho_ss_analytic(p)
    numeric = rho_ss_numeric(p)
    return SteadyStateReport(
        params=p,
        rho_analytic=analytic,
        rho_numeric=numeric,
        trace_distance=trace_distance(analytic, numeric),
        liouvillian_residual_analytic=liouvillian_residual(analytic, p),
        liouvillian_residual_numeric=liouvillian_residual(numeric, p),
    )


def measurement_commutator(p: SystemParams) -> float:
    """``|| [M(rho_ss), rho_ss] ||_1`` at the analytic steady state."""
    rho = rho_ss_analytic(p).matrix
    return commutator_norm(measurement_apply(rho, p), rho)
