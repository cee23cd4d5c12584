"""Unconditional and homodyne-conditioned evolution of the driven atom-cavity system.

Conventions
-----------
Units: the cavity field decay rate ``kappa`` is the frequency unit (it stays an
explicit parameter).  The generator is

    L(rho) = [E(a^+ - a) + g(a^+ sigma - sigma^+ a), rho]
             + kappa (2 a rho a^+ - a^+ a rho - rho a^+ a)

The dissipator carries the factor 2 on the jump term: with it the empty
driven cavity relaxes to ``|E/kappa>`` and ``<a>`` decays at rate ``kappa``,
which is what the strong-driving amplitude formula requires.  The homodyne
backaction is

    M(rho) = sqrt(2 kappa eta) (e^{-i phi} a rho + e^{i phi} rho a^+ - <X_phi> rho)

with ``X_phi = e^{-i phi} a + e^{i phi} a^+``, and the record increment is
``dq = 2 kappa eta <X_phi> dt + sqrt(2 kappa eta) dW``.

The stochastic master equation is integrated with Euler-Maruyama in the Ito
sense.  Operators act through index slicing instead of matrix products, so
every step costs O(d^2) and works on stacks of density matrices
(``shape (..., d, d)``).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from . import __version__
from .errors import DomainError, StabilityError
from .hilbert import (
    ATOM_DIM,
    DensityMatrix,
    FockSpec,
    Operator,
    is_positive,
)

RNG_ALGORITHM = "numpy.random.Philox (Philox4x64-10, counter-based)"
DEFAULT_DT = 1e-3
TRACE_DRIFT_LIMIT = 1e-3


@dataclass(frozen=True)
class SystemParams:
    """Physical parameters plus truncation.

    When ``spec`` is omitted the recommended truncation for the empty-cavity
    amplitude ``E/kappa`` is used; that bound covers the strong-driving
    amplitude, whose modulus never exceeds ``E/kappa``.
    """

    E: float
    g: float
    kappa: float = 1.0
    eta: float = 1.0
    phi: float = 0.0
    spec: FockSpec | None = None

    def __post_init__(self):
        if not self.E > 0:
            raise DomainError(f"E must be > 0, got {self.E}")
        if not self.g >= 0:
            raise DomainError(f"g must be >= 0, got {self.g}")
        if not self.kappa > 0:
            raise DomainError(f"kappa must be > 0, got {self.kappa}")
        if not 0 < self.eta <= 1:
            raise DomainError(f"eta must lie in (0, 1], got {self.eta}")
        if self.spec is None:
            object.__setattr__(self, "spec", FockSpec.for_amplitude(self.E / self.kappa))

    @property
    def strong_driving(self) -> bool:
        return self.g / (2.0 * self.E) < 1.0

    @property
    def dim(self) -> int:
        return self.spec.dim

    def with_(self, **changes) -> "SystemParams":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["n_max"] = self.spec.n_max
        del d["spec"]
        return d


def _dag(x: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(x, -1, -2))


def _trace(x: np.ndarray) -> np.ndarray:
    return np.trace(x, axis1=-2, axis2=-1)


class _Generators:
    """Left actions of ``a``, ``a^+``, ``sigma``, ``sigma^+`` by slicing.

    Row index ``2n + s`` (field (x) atom).  ``a`` maps row ``2(n+1)+s`` to
    ``2n+s`` with weight ``sqrt(n+1)``; ``sigma = |g><e|`` maps row ``2n+1``
    to ``2n``.
    """

    def __init__(self, p: SystemParams):
        self.p = p
        n = np.arange(p.spec.field_dim)
        self.dim = p.spec.dim
        self.sq = np.repeat(np.sqrt(n[1:].astype(float)), ATOM_DIM)[:, None]
        number = np.repeat(n.astype(float), ATOM_DIM)
        self.number_sum = number[:, None] + number[None, :]
        self.c_meas = math.sqrt(2.0 * p.kappa * p.eta)
        self.phase = np.exp(-1j * p.phi)

    def lower(self, x):
        out = np.zeros_like(x)
        out[..., :-2, :] = self.sq * x[..., 2:, :]
        return out

    def raise_(self, x):
        out = np.zeros_like(x)
        out[..., 2:, :] = self.sq * x[..., :-2, :]
        return out

    def sigma(self, x):
        out = np.zeros_like(x)
        out[..., 0::2, :] = x[..., 1::2, :]
        return out

    def sigma_dag(self, x):
        out = np.zeros_like(x)
        out[..., 1::2, :] = x[..., 0::2, :]
        return out

    def liouvillian(self, rho, a_rho=None):
        p = self.p
        if a_rho is None:
            a_rho = self.lower(rho)
        x_rho = p.E * (self.raise_(rho) - a_rho) + p.g * (self.raise_(self.sigma(rho)) - self.sigma_dag(a_rho))
        # the coupling operator is anti-Hermitian, so rho X = -(X rho)^+
        out = x_rho + _dag(x_rho)
        out += p.kappa * (2.0 * self.lower(_dag(a_rho)) - self.number_sum * rho)
        return out

    def quadrature_mean(self, rho, a_rho=None):
        """``tr[rho (e^{-i phi} a + e^{i phi} a^+)]`` for Hermitian ``rho``."""
        if a_rho is None:
            a_rho = self.lower(rho)
        return 2.0 * np.real(self.phase * _trace(a_rho))

    def measurement(self, rho, a_rho=None):
        if a_rho is None:
            a_rho = self.lower(rho)
        x = self.quadrature_mean(rho, a_rho)
        m = self.phase * a_rho
        m = m + _dag(m) - np.asarray(x)[..., None, None] * rho
        return self.c_meas * m


def _matrix(rho, p: SystemParams) -> np.ndarray:
    m = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
    if m.shape[-2:] != (p.dim, p.dim):
        raise ValueError(f"state dimension {m.shape[-2:]} does not match parameters ({p.dim})")
    return m


def liouvillian_apply(rho: DensityMatrix | np.ndarray, p: SystemParams) -> np.ndarray:
    """Unconditional generator ``L(rho)`` for Hermitian ``rho``; accepts stacks of matrices."""
    return _Generators(p).liouvillian(_matrix(rho, p))


def measurement_apply(rho: DensityMatrix | np.ndarray, p: SystemParams) -> np.ndarray:
    """Homodyne backaction ``M(rho)``.  Assumes ``tr rho = 1``."""
    return _Generators(p).measurement(_matrix(rho, p))


def liouvillian_dense(p: SystemParams, a: Operator, sigma: Operator) -> Callable[[np.ndarray], np.ndarray]:
    """Reference ``L`` built from explicit operator matrices (slow, for cross-checks)."""
    A, S = a.matrix, sigma.matrix
    Ad = A.conj().T
    X = p.E * (Ad - A) + p.g * (Ad @ S - S.conj().T @ A)
    num = Ad @ A

    def apply(rho):
        return X @ rho - rho @ X + p.kappa * (2 * A @ rho @ Ad - num @ rho - rho @ num)

    return apply


def photocurrent_increment(rho: DensityMatrix | np.ndarray, p: SystemParams, dt: float, dW) -> float | np.ndarray:
    """Photocharge increment ``dq`` for the same ``dW`` that drives the state update."""
    gen = _Generators(p)
    x = gen.quadrature_mean(_matrix(rho, p))
    return 2.0 * p.kappa * p.eta * x * dt + gen.c_meas * np.asarray(dW)


@dataclass
class StepDiagnostics:
    steps: int = 0
    clipped: int = 0
    max_trace_drift: float = 0.0


def _non_positive(stack: np.ndarray, offset: int = 0) -> list[int]:
    """Indices of stack members failing the positivity test, by bisection.

    Batched Cholesky is far cheaper than eigendecomposition, and failures
    are rare, so halving the stack until the culprits are isolated beats
    decomposing every member.
    """
    if is_positive(stack):
        return []
    if len(stack) == 1:
        return [offset]
    half = len(stack) // 2
    return _non_positive(stack[:half], offset) + _non_positive(stack[half:], offset + half)


def _em_update(gen: _Generators, rho: np.ndarray, dt: float, dW, diag: StepDiagnostics, step=None):
    """One Euler-Maruyama step on a single matrix or a stack.

    Returns ``(new_rho, dq)``.
    """
    a_rho = gen.lower(rho)
    dW = np.asarray(dW, dtype=float)
    x = gen.quadrature_mean(rho, a_rho)
    dq = 2.0 * gen.p.kappa * gen.p.eta * x * dt + gen.c_meas * dW
    new = rho + gen.liouvillian(rho, a_rho) * dt + gen.measurement(rho, a_rho) * dW[..., None, None]
    new = 0.5 * (new + _dag(new))
    tr = _trace(new).real
    drift = float(np.max(np.abs(tr - 1.0)))
    # written so that a non-finite state also trips the check
    if not drift <= TRACE_DRIFT_LIMIT:
        raise StabilityError(f"trace drifted by {drift:.3e} in one step (dt={dt})", step)
    diag.max_trace_drift = max(diag.max_trace_drift, drift)
    new = new / np.asarray(tr)[..., None, None]
    stack = new.reshape(-1, gen.dim, gen.dim)
    bad = _non_positive(stack)
    if bad:
        w, v = np.linalg.eigh(stack[bad])
        w = np.clip(w, 0.0, None)
        fixed = (v * w[:, None, :]) @ _dag(v)
        stack[bad] = fixed / _trace(fixed).real[:, None, None]
        diag.clipped += len(bad)
    diag.steps += stack.shape[0]
    return stack.reshape(new.shape), dq


def sme_step(
    rho: DensityMatrix | np.ndarray,
    p: SystemParams,
    dt: float,
    dW: float,
    diagnostics: StepDiagnostics | None = None,
) -> DensityMatrix:
    """``rho + L(rho) dt + M(rho) dW``, hermitized and renormalized.

    Negative eigenvalues below ``-1e-8`` are clipped to zero and counted in
    ``diagnostics``.  Raises :class:`StabilityError` when the trace moves by
    more than ``1e-3`` before renormalization.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    diag = diagnostics if diagnostics is not None else StepDiagnostics()
    new, _ = _em_update(_Generators(p), _matrix(rho, p), dt, dW, diag)
    return DensityMatrix(new, p.spec, validate=False)


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    return np.random.Generator(np.random.Philox(int(seed)))


def _seed_label(seed) -> str | int:
    if isinstance(seed, np.random.SeedSequence):
        return f"{seed.entropy}/{'.'.join(map(str, seed.spawn_key))}"
    return int(seed)


def n_steps_for(t_final: float, dt: float) -> int:
    # guard against t_final/dt landing a hair above an integer
    return max(1, math.ceil(t_final / dt - 1e-9))


@dataclass
class TrajectoryRecord:
    """One seeded SME realization.

    ``noise[k]`` is the Wiener increment of step ``k`` and ``charge[k]`` the
    matching photocharge increment.  ``states`` are snapshots taken every
    ``store_every`` steps (index 0 is the initial state); ``monitors`` hold
    scalar functions of the state sampled on the grid ``monitor_steps``.
    """

    params: SystemParams
    dt: float
    seed: int | str
    noise: np.ndarray
    charge: np.ndarray
    states: list = field(default_factory=list)
    state_steps: list = field(default_factory=list)
    monitors: dict = field(default_factory=dict)
    monitor_steps: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    n_clipped: int = 0
    max_trace_drift: float = 0.0
    final_state: DensityMatrix | None = None

    def __post_init__(self):
        if len(self.noise) != len(self.charge):
            raise ValueError("noise and charge records must have equal length")

    @property
    def n_steps(self) -> int:
        return len(self.noise)

    @property
    def clip_fraction(self) -> float:
        return self.n_clipped / max(1, self.n_steps)

    def metadata(self) -> dict:
        return {
            "params": self.params.as_dict(),
            "dt": self.dt,
            "seed": self.seed,
            "n_steps": self.n_steps,
            "n_clipped": self.n_clipped,
            "code_version": __version__,
            "rng": RNG_ALGORITHM,
        }


def simulate_trajectory(
    rho0: DensityMatrix | np.ndarray,
    p: SystemParams,
    t_final: float,
    dt: float = DEFAULT_DT,
    seed=0,
    store_every: int | None = None,
    monitors: Mapping[str, Callable[[np.ndarray], float]] | None = None,
    monitor_every: int = 1,
) -> TrajectoryRecord:
    """Integrate one homodyne trajectory from ``rho0`` for ``ceil(t_final/dt)`` steps.

    The record is a deterministic function of ``seed``.
    """
    if t_final <= 0:
        raise ValueError("t_final must be positive")
    if dt <= 0:
        raise ValueError("dt must be positive")
    n_steps = n_steps_for(t_final, dt)
    rng = make_rng(seed)
    noise = rng.normal(0.0, math.sqrt(dt), size=n_steps)
    charge = np.empty(n_steps)
    gen = _Generators(p)
    diag = StepDiagnostics()
    rho = np.array(_matrix(rho0, p), dtype=complex)
    monitors = dict(monitors or {})
    mon_values = {k: [] for k in monitors}
    mon_steps = []
    states, state_steps = [], []

    def observe(k, r):
        if store_every and k % store_every == 0:
            states.append(DensityMatrix(r.copy(), p.spec, validate=False))
            state_steps.append(k)
        if monitors and k % monitor_every == 0:
            mon_steps.append(k)
            for name, fn in monitors.items():
                mon_values[name].append(fn(r))

    observe(0, rho)
    for k in range(n_steps):
        rho, charge[k] = _em_update(gen, rho, dt, noise[k], diag, step=k)
        observe(k + 1, rho)
    return TrajectoryRecord(
        params=p,
        dt=dt,
        seed=_seed_label(seed),
        noise=noise,
        charge=charge,
        states=states,
        state_steps=state_steps,
        monitors={k: np.asarray(v) for k, v in mon_values.items()},
        monitor_steps=np.asarray(mon_steps, dtype=int),
        n_clipped=diag.clipped,
        max_trace_drift=diag.max_trace_drift,
        final_state=DensityMatrix(rho, p.spec, validate=False),
    )


@dataclass
class EnsembleResult:
    """Final-time observables of ``n_traj`` independent trajectories."""

    observables: dict
    mean_state: np.ndarray
    n_clipped: int
    n_steps: int

    def mean(self, name: str) -> complex:
        return complex(np.mean(self.observables[name]))

    def std_error(self, name: str) -> float:
        v = np.asarray(self.observables[name])
        spread = np.hypot(np.std(v.real, ddof=1), np.std(v.imag, ddof=1))
        return float(spread / math.sqrt(len(v)))


def simulate_ensemble(
    rho0: DensityMatrix | np.ndarray,
    p: SystemParams,
    t_final: float,
    n_traj: int,
    dt: float = DEFAULT_DT,
    seed=0,
    observables: Mapping[str, Operator | np.ndarray] | None = None,
    batch: int = 256,
) -> EnsembleResult:
    """Run independent trajectories in vectorized batches.

    Trajectory ``i`` draws its noise from ``SeedSequence(seed).spawn(n_traj)[i]``.
    """
    n_steps = n_steps_for(t_final, dt)
    children = np.random.SeedSequence(int(seed)).spawn(n_traj)
    gen = _Generators(p)
    diag = StepDiagnostics()
    ops = {k: (v.matrix if isinstance(v, Operator) else np.asarray(v)) for k, v in (observables or {}).items()}
    values = {k: np.empty(n_traj, dtype=complex) for k in ops}
    mean_state = np.zeros((p.dim, p.dim), dtype=complex)
    base = _matrix(rho0, p)
    for start in range(0, n_traj, batch):
        stop = min(n_traj, start + batch)
        noise = np.stack([make_rng(c).normal(0.0, math.sqrt(dt), size=n_steps) for c in children[start:stop]])
        rho = np.broadcast_to(base, (stop - start, p.dim, p.dim)).copy()
        for k in range(n_steps):
            rho, _ = _em_update(gen, rho, dt, noise[:, k], diag, step=k)
        for name, op in ops.items():
            values[name][start:stop] = np.einsum("bij,ji->b", rho, op)
        mean_state += rho.sum(axis=0)
    return EnsembleResult(values, mean_state / n_traj, diag.clipped, n_steps)


def integrate_unconditional(
    rho0: DensityMatrix | np.ndarray, p: SystemParams, t_final: float, dt: float = DEFAULT_DT
) -> np.ndarray:
    """Classical RK4 for ``d rho/dt = L(rho)``; the oracle for ensemble means."""
    gen = _Generators(p)
    rho = np.array(_matrix(rho0, p), dtype=complex)
    n = n_steps_for(t_final, dt)
    h = t_final / n
    for _ in range(n):
        k1 = gen.liouvillian(rho)
        k2 = gen.liouvillian(rho + 0.5 * h * k1)
        k3 = gen.liouvillian(rho + 0.5 * h * k2)
        k4 = gen.liouvillian(rho + h * k3)
        rho = rho + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return rho


def photocurrent_record(
    rho: DensityMatrix | np.ndarray, p: SystemParams, dt: float, n_steps: int, n_traj: int, seed=0
) -> np.ndarray:
    """Photocharge increments at a frozen state, shape ``(n_traj, n_steps)``.

    Isolates the record model from state evolution: every increment is
    conditioned on the same ``rho``.
    """
    x = _Generators(p).quadrature_mean(_matrix(rho, p))
    children = np.random.SeedSequence(int(seed)).spawn(n_traj)
    dW = np.stack([make_rng(c).normal(0.0, math.sqrt(dt), size=n_steps) for c in children])
    return 2.0 * p.kappa * p.eta * x * dt + math.sqrt(2.0 * p.kappa * p.eta) * dW


def write_record(record: TrajectoryRecord, path: str | Path, fmt: str = "text") -> Path:
    """Serialize ``(step, dW, dq)`` rows with a metadata header.

    ``fmt="text"`` writes CSV with ``#``-prefixed header lines; ``"binary"``
    writes a NumPy ``.npz`` archive whose ``metadata`` entry is JSON.
    """
    path = Path(path)
    meta = record.metadata()
    if fmt == "text":
        with path.open("w", newline="") as fh:
            for key, value in meta.items():
                fh.write(f"# {key}: {json.dumps(value, sort_keys=True)}\n")
            fh.write("step,dW,dq\n")
            for k, (w, q) in enumerate(zip(record.noise, record.charge)):
                fh.write(f"{k},{float(w)!r},{float(q)!r}\n")
    elif fmt == "binary":
        with path.open("wb") as fh:
            np.savez(fh, metadata=np.array(json.dumps(meta, sort_keys=True)), dW=record.noise, dq=record.charge)
    else:
        raise ValueError(f"unknown record format {fmt!r}")
    return path


def read_record(path: str | Path) -> tuple[dict, np.ndarray, np.ndarray]:
    """Inverse of :func:`write_record`: ``(metadata, dW, dq)``."""
    path = Path(path)
    with path.open("rb") as fh:
        magic = fh.read(2)
    if magic == b"PK":
        with np.load(path) as z:
            return json.loads(str(z["metadata"])), z["dW"], z["dq"]
    meta, rows = {}, []
    with path.open() as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                meta[key.strip()] = json.loads(value)
            elif line.startswith("step"):
                continue
            elif line.strip():
                _, w, q = line.split(",")
                rows.append((float(w), float(q)))
    arr = np.array(rows).reshape(-1, 2)
    return meta, arr[:, 0], arr[:, 1]
