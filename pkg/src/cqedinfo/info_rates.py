"""Rate of information gain about the atom-cavity state.

Four routes to the same quantity, the mean rate of change of the von Neumann
entropy of the conditioned state:

* :func:`rate_RQ`, the closed form at the strong-driving steady state;
* :func:`entropy_rate_diagonal`, ``-sum_k b_k^2 / (2 a_k)`` for a state and
  backaction that share an eigenbasis;
* :func:`entropy_rate_series`, the power series in ``rho - 1`` that needs no
  commutation assumption;
* :func:`entropy_rate_monte_carlo`, direct sampling of the one-step entropy
  change.

:func:`entropy_rate_finite_difference` and
:func:`entropy_rate_divided_difference` are independent oracles for the
series: the first uses only eigenvalue-based entropies, the second the
closed-form first and second derivatives of ``-tr(rho ln rho)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .dynamics import SystemParams, liouvillian_apply, make_rng, measurement_apply
from .errors import DomainError
from .hilbert import EIGEN_FLOOR, entropy_from_eigenvalues, trace_norm, von_neumann_entropy
from .steady_state import dressed_basis, rho_ss_analytic

DEFAULT_SERIES_TERMS = 200


def _one_minus_x2(p: SystemParams) -> float:
    x = p.g / (2.0 * p.E)
    if not x < 1.0:
        raise DomainError(f"requires g < 2E (g={p.g}, E={p.E})")
    return (1.0 - x) * (1.0 + x)


@dataclass(frozen=True)
class DiagonalPair:
    """Nonzero eigenvalues ``a`` of a state and the matching diagonal ``b`` of its backaction."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if a.shape != b.shape or a.ndim != 1:
            raise ValueError("a and b must be 1-d arrays of equal length")
        if np.any(a <= 0):
            raise ValueError("all a_k must be positive")
        if abs(a.sum() - 1.0) > 1e-10:
            raise ValueError(f"a must sum to 1 (got {a.sum()!r})")
        if abs(b.sum()) > 1e-8:
            raise ValueError(f"b must sum to 0 (got {b.sum()!r})")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)


def entropy_rate_diagonal(d: DiagonalPair) -> float:
    """``<dH/dt> = -sum_k b_k^2 / (2 a_k)``."""
    return float(-np.sum(d.b**2 / (2.0 * d.a)))


def m_diagonal_ss(p: SystemParams) -> DiagonalPair:
    """Closed-form pair at the strong-driving steady state.

    ``a = (1/2, 1/2)``, ``b = +-g sin(phi) sqrt(eta/(2 kappa) (1 - (g/2E)^2))``.
    """
    b = p.g * math.sin(p.phi) * math.sqrt(p.eta / (2.0 * p.kappa) * _one_minus_x2(p))
    return DiagonalPair(np.array([0.5, 0.5]), np.array([b, -b]))


def rate_RQ(p: SystemParams) -> float:
    """``R_Q = (g^2 eta / kappa) (1 - (g/2E)^2) sin^2(phi)``."""
    return p.g**2 * p.eta / p.kappa * _one_minus_x2(p) * math.sin(p.phi) ** 2


def common_eigenbasis(rho: np.ndarray, other: np.ndarray, floor: float = EIGEN_FLOOR, degeneracy_tol: float = 1e-9):
    """Eigenpairs of ``rho`` on its support, rotated inside degenerate blocks to diagonalize ``other``.

    Returns ``(eigenvalues, vectors)`` with vectors as columns.
    """
    w, v = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    keep = w > floor
    w, v = w[keep], v[:, keep]
    start = 0
    while start < len(w):
        stop = start + 1
        while stop < len(w) and w[stop] - w[start] < degeneracy_tol:
            stop += 1
        if stop - start > 1:
            block = v[:, start:stop]
            sub = block.conj().T @ other @ block
            _, u = np.linalg.eigh(0.5 * (sub + sub.conj().T))
            v[:, start:stop] = block @ u
        start = stop
    return w, v


def diagonal_pair(rho: np.ndarray, m_rho: np.ndarray, floor: float = EIGEN_FLOOR) -> DiagonalPair:
    """Build ``(a, b)`` from a state and its backaction.

    ``a`` are the support eigenvalues renormalized to sum 1; ``b`` the
    diagonal of ``m_rho`` in the same basis, shifted by a uniform-in-``a``
    amount so that it sums to zero after the kernel has been discarded.
    """
    rho = np.asarray(rho)
    m_rho = np.asarray(m_rho)
    w, v = common_eigenbasis(rho, m_rho, floor)
    b = np.real(np.einsum("ik,ij,jk->k", v.conj(), m_rho, v))
    a = w / w.sum()
    b = b - a * b.sum()
    return DiagonalPair(a, b)


def dressed_projection(matrix: np.ndarray, p: SystemParams) -> np.ndarray:
    """2x2 matrix of ``matrix`` in the basis ``(|alpha;+>, |alpha*;->)``."""
    plus, minus = dressed_basis(p)
    basis = np.column_stack([plus.vector, minus.vector])
    return basis.conj().T @ matrix @ basis


class SeriesResult(NamedTuple):
    value: float
    last_term: float
    n_terms: int
    support_dim: int


def entropy_rate_series(
    rho: np.ndarray,
    L_rho: np.ndarray,
    M_rho: np.ndarray,
    n_terms: int = DEFAULT_SERIES_TERMS,
    floor: float = EIGEN_FLOOR,
) -> SeriesResult:
    """Partial sum of the power-series entropy rate through order ``n_terms``.

    With ``t = rho - 1`` the ``n``-th term is

        (-1)^n / n * tr( [(n+1) t^n + n t^(n-1)] L
                         + sum_{s<n}   (s+1) t^s M t^(n-1-s) M
                         + sum_{s<n-1} (s+1) t^s M t^(n-2-s) M ).

    The traces are evaluated in the eigenbasis of ``rho`` restricted to its
    support (eigenvalues above ``floor``), where each one becomes a weighted
    sum over eigenvalue pairs.  ``last_term`` is ``|term_{n_terms}|``, the
    truncation indicator.
    """
    if n_terms < 1:
        raise ValueError("n_terms must be >= 1")
    rho = np.asarray(rho)
    w, v = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    keep = w > floor
    w, v = w[keep], v[:, keep]
    t = w - 1.0
    Lt = v.conj().T @ np.asarray(L_rho) @ v
    Mt = v.conj().T @ np.asarray(M_rho) @ v
    l_diag = np.diag(Lt)
    mm = Mt * Mt.T  # M_ij M_ji

    k = len(t)
    ti = t[:, None]
    tj = t[None, :]
    pow_prev = np.ones(k)  # t^(n-1)
    xi_pow = np.ones((k, 1))  # t_i^m for the recurrence
    f_prev2 = np.zeros((k, k))  # F_{n-2}
    f_prev = np.ones((k, k))  # F_{n-1}, F_0 = 1
    total = 0.0 + 0.0j
    term = 0.0
    for n in range(1, n_terms + 1):
        pow_n = pow_prev * t
        lin = np.sum(((n + 1) * pow_n + n * pow_prev) * l_diag)
        quad = np.sum((f_prev + f_prev2) * mm)
        term = (-1) ** n / n * (lin + quad)
        total += term
        # F_m(x, y) = sum_{s=0}^{m} (s+1) x^s y^(m-s) obeys F_m = y F_{m-1} + (m+1) x^m
        xi_pow = xi_pow * ti
        f_next = tj * f_prev + (n + 1) * xi_pow
        f_prev2, f_prev = f_prev, f_next
        pow_prev = pow_n
    return SeriesResult(float(np.real(total)), float(abs(term)), n_terms, k)


def _fd_quotient(rho, L_rho, M_rho, h):
    h0 = von_neumann_entropy(rho)
    sq = math.sqrt(h)
    up = rho + L_rho * h + M_rho * sq
    dn = rho + L_rho * h - M_rho * sq
    return (0.5 * (von_neumann_entropy(up) + von_neumann_entropy(dn)) - h0) / h


def entropy_rate_finite_difference(rho: np.ndarray, L_rho: np.ndarray, M_rho: np.ndarray, h: float = 1e-6) -> float:
    """Richardson-extrapolated ``<H(rho + delta) - H(rho)> / dt`` with ``dW = +-sqrt(dt)``.

    The two-point noise reproduces ``<dW> = 0`` and ``<dW^2> = dt``; odd
    orders cancel in the average, so the quotient is linear in ``dt`` to
    leading order and ``2 f(h/2) - f(h)`` removes that term.  Valid for
    full-rank ``rho``.
    """
    rho, L_rho, M_rho = (np.asarray(x) for x in (rho, L_rho, M_rho))
    return 2.0 * _fd_quotient(rho, L_rho, M_rho, h / 2) - _fd_quotient(rho, L_rho, M_rho, h)


def entropy_rate_divided_difference(
    rho: np.ndarray, L_rho: np.ndarray, M_rho: np.ndarray, floor: float = EIGEN_FLOOR
) -> float:
    """``-tr(L ln rho) - 1/2 sum_ij K_ij |M_ij|^2`` in the eigenbasis of ``rho``.

    ``K_ij = (ln a_i - ln a_j) / (a_i - a_j)``, with ``1/a_i`` on the
    diagonal.  Restricted to the support of ``rho``.
    """
    rho = np.asarray(rho)
    w, v = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    keep = w > floor
    w, v = w[keep], v[:, keep]
    lt = np.real(np.diag(v.conj().T @ np.asarray(L_rho) @ v))
    mt = v.conj().T @ np.asarray(M_rho) @ v
    lw = np.log(w)
    dw = np.subtract.outer(w, w)
    close = np.abs(dw) <= 1e-12 * np.maximum.outer(w, w)
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.where(close, 2.0 / np.add.outer(w, w), np.subtract.outer(lw, lw) / dw)
    return float(-np.sum(lw * lt) - 0.5 * np.sum(k * np.abs(mt) ** 2))


@dataclass(frozen=True)
class EntropyRateEstimate:
    estimate: float
    std_error: float
    leakage_norm: float
    n_traj: int
    delta_t: float


def entropy_rate_monte_carlo(
    p: SystemParams, n_traj: int = 10_000, delta_t: float = 1e-4, seed=0
) -> EntropyRateEstimate:
    """Sample ``[H(rho + delta) - H(rho)] / dt`` at the analytic steady state.

    ``delta = L(rho) dt + M(rho) dW`` with independent ``dW ~ N(0, dt)``.
    Entropies are taken in the two-dimensional dressed subspace (hermitized
    and renormalized there).  The part of ``delta`` outside that subspace is
    reported as ``leakage_norm``, the trace norm for a one-sigma draw.
    """
    if n_traj < 1000:
        raise ValueError("n_traj must be >= 1000")
    if delta_t <= 0:
        raise ValueError("delta_t must be positive")
    rho = rho_ss_analytic(p).matrix
    L_rho = liouvillian_apply(rho, p)
    M_rho = measurement_apply(rho, p)
    plus, minus = dressed_basis(p)
    basis = np.column_stack([plus.vector, minus.vector])
    r2 = basis.conj().T @ rho @ basis
    l2 = basis.conj().T @ L_rho @ basis
    m2 = basis.conj().T @ M_rho @ basis

    dW = make_rng(seed).normal(0.0, math.sqrt(delta_t), size=n_traj)
    blocks = r2[None] + l2[None] * delta_t + m2[None] * dW[:, None, None]
    blocks = 0.5 * (blocks + np.conj(np.swapaxes(blocks, -1, -2)))
    blocks /= np.trace(blocks, axis1=-2, axis2=-1).real[:, None, None]
    h = entropy_from_eigenvalues(np.linalg.eigvalsh(blocks))
    h0 = von_neumann_entropy(r2 / np.trace(r2).real)
    samples = (h - h0) / delta_t

    proj = basis @ basis.conj().T
    delta = L_rho * delta_t + M_rho * math.sqrt(delta_t)
    leakage = trace_norm(delta - proj @ delta @ proj)
    return EntropyRateEstimate(
        estimate=float(np.mean(samples)),
        std_error=float(np.std(samples, ddof=1) / math.sqrt(n_traj)),
        leakage_norm=leakage,
        n_traj=n_traj,
        delta_t=delta_t,
    )
