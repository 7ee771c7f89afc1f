"""Dantzig selector with an overcomplete dictionary, solved by POA.

The problem solved is::

    minimize ||c||_1  subject to  ||D^{-1} B^H X^T (X B c - y)||_inf <= delta

with ``D = diag(||(XB)_j||_2)``. Writing ``A = D^{-1} B^H X^T X B`` and
``gamma = D^{-1} B^H X^T y`` the constraint reads ``|A c - gamma|_i <= delta``
for every ``i``, and POA iterates::

    c[k+1]   = soft(c[k] - (lam/alpha) A^H (2 tau[k] - tau[k-1]), 1/alpha)
    tau[k+1] = (I - P)(A c[k+1] + tau[k])

where ``P`` projects componentwise onto the disks ``|v_i - gamma_i| <= delta``
and ``lam = 0.999 alpha / ||A||^2``. The final iterate is debiased by a least
squares refit on its support.
"""

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable
from enum import Enum

import numpy as np
from scipy.sparse.linalg import LinearOperator, aslinearoperator

from .dictionary import Dictionary
from .errors import DimensionError, NoConvergence, SingularNormalization

__all__ = [
    "StopReason",
    "Problem",
    "Precomputed",
    "SolverConfig",
    "SolverState",
    "Solution",
    "assemble",
    "spectral_bound",
    "soft_threshold",
    "project_feasible",
    "initial_state",
    "iterate",
    "solve",
    "debias",
    "default_delta",
    "scaled_alpha",
    "TRACE_FIELDS",
]

logger = logging.getLogger(__name__)

DENSE_MAX_Q = 4096
# Below this size a dense product beats the per-call overhead of the transforms.
DENSE_AUTO_Q = 512
_TINY = np.finfo(float).tiny
TRACE_FIELDS = ("k", "l1_norm", "feasibility_gap", "support_size")


class StopReason(str, Enum):
    RESIDUAL_TOLERANCE = "ResidualTolerance"
    SUPPORT_STATIONARY = "SupportStationary"
    MAX_ITER = "MaxIter"


@dataclass(frozen=True, eq=False)
class Problem:
    X: np.ndarray
    B: Dictionary
    y: np.ndarray
    delta: float

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def q(self):
        return self.B.q


@dataclass(frozen=True, eq=False)
class Precomputed:
    """Quantities derived from a :class:`Problem`.

    Attributes
    ----------
    d : ndarray
        Column norms of ``X B`` (the diagonal of ``D``).
    gamma : ndarray
        ``D^{-1} B^H X^T y``.
    A : LinearOperator
        ``c -> D^{-1} B^H X^T X B c``; ``A.rmatvec`` applies ``A^H``.
    a_norm : float
        Upper bound on the spectral norm of ``A``.
    mode : str
        ``"operator"`` (chained fast transforms) or ``"dense"``.
    matvec, rmatvec : callable
        The unchecked products behind ``A``, used by the iteration loop to
        skip ``LinearOperator`` validation on every step.
    """

    d: np.ndarray
    gamma: np.ndarray
    A: LinearOperator
    a_norm: float
    mode: str
    matvec: Callable = field(default=None, repr=False)
    rmatvec: Callable = field(default=None, repr=False)

    def __post_init__(self):
        if self.matvec is None:
            object.__setattr__(self, "matvec", self.A.matvec)
        if self.rmatvec is None:
            object.__setattr__(self, "rmatvec", self.A.rmatvec)

    @property
    def q(self):
        return self.gamma.shape[0]


def scaled_alpha(pre, scale=1.0):
    """Data-scaled ``alpha = scale * ||A|| / ||gamma||_inf``.

    Makes the iteration invariant to rescaling ``y``; falls back to `scale`
    when ``gamma = 0``.
    """
    g = float(np.max(np.abs(pre.gamma))) if pre.q else 0.0
    if g == 0.0 or pre.a_norm == 0.0:
        return float(scale)
    return float(scale) * pre.a_norm / g


def default_delta(sigma, q):
    """Universal threshold ``sigma * sqrt(2 ln q)``."""
    return float(sigma) * np.sqrt(2.0 * np.log(q))


def _real_matmul(X, v):
    # Avoids numpy upcasting the real matrix to complex on every product.
    if np.iscomplexobj(v) and v.ndim == 1:
        pairs = np.ascontiguousarray(v, dtype=complex).view(float).reshape(-1, 2)
        return np.ascontiguousarray(X @ pairs).view(complex).ravel()
    if np.iscomplexobj(v):
        return X @ v.real + 1j * (X @ v.imag)
    return X @ v


def _sensing_dictionary_product(X, B):
    # X B = (B^H X^T)^H for real X; uses the blocks' fast adjoints.
    return np.ascontiguousarray(B.adjoint(X.T).conj().T)


def assemble(X, B, y, delta, mode="auto", power_tol=1e-7, power_iters=5000):
    """Build the :class:`Problem` and its :class:`Precomputed` quantities.

    Parameters
    ----------
    X : array_like or SensingMatrix
        Real ``n x p`` sensing matrix.
    B : Dictionary
        ``p x q`` dictionary.
    y : array_like
        Observations of length ``n``.
    delta : float
        Constraint radius, ``delta >= 0``.
    mode : {"auto", "operator", "dense"}
        How ``A`` is applied. ``"operator"`` chains ``B, X, X^T, B^H, D^{-1}``;
        ``"dense"`` materializes the ``q x q`` matrix. ``"auto"`` picks dense
        when ``q <= 512`` or ``q^2 <= 4 n p``.

    Raises
    ------
    SingularNormalization
        If some column of ``X B`` has norm ``<= 1e-14``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[1] != B.p:
        raise DimensionError(f"sensing matrix {X.shape} does not match dictionary p={B.p}")
    if y.ndim != 1 or y.shape[0] != X.shape[0]:
        raise DimensionError(f"observation length {y.shape} does not match n={X.shape[0]}")
    if not delta >= 0:
        raise ValueError(f"delta must be nonnegative, got {delta}")
    if mode == "auto":
        small = B.q <= DENSE_AUTO_Q or B.q ** 2 <= 4 * X.shape[0] * X.shape[1]
        mode = "dense" if small else "operator"
    if mode not in ("operator", "dense"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "dense" and B.q > DENSE_MAX_Q:
        raise ValueError(f"dense mode is limited to q <= {DENSE_MAX_Q}")

    M = _sensing_dictionary_product(X, B)
    d = np.linalg.norm(M, axis=0)
    bad = np.flatnonzero(d <= 1e-14)
    if bad.size:
        raise SingularNormalization(
            f"{bad.size} column(s) of XB have zero norm (first index {bad[0]})")
    real = B.is_real and not np.iscomplexobj(y)
    dtype = float if real else complex
    if real:
        M = M.real

    gamma = B.adjoint(_real_matmul(X.T, y)) / d
    gamma = gamma.real if real else gamma.astype(complex)

    q = B.q
    if mode == "dense":
        # A = D^-1 H with H = M^H M Hermitian, so A^H w = H (w / d) and one
        # stored matrix serves both products.
        H = M.conj().T @ M

        def matvec(c):
            return (H @ c) / d

        def rmatvec(w):
            return H @ (w / d)

        A = LinearOperator((q, q), matvec=matvec, rmatvec=rmatvec, dtype=dtype)
    else:
        Xt = np.ascontiguousarray(X.T)

        def matvec(c):
            out = B.adjoint(_real_matmul(Xt, _real_matmul(X, B.apply(c)))) / d
            return out.real if real and np.isrealobj(c) else out

        def rmatvec(w):
            out = B.adjoint(_real_matmul(Xt, _real_matmul(X, B.apply(w / d))))
            return out.real if real and np.isrealobj(w) else out

        A = LinearOperator((q, q), matvec=matvec, rmatvec=rmatvec, dtype=dtype)

    a_norm = spectral_bound(A, tol=power_tol, max_power_iters=power_iters)
    problem = Problem(X, B, y, float(delta))
    return problem, Precomputed(d, gamma, A, a_norm, mode, matvec, rmatvec)


def spectral_bound(A, tol=1e-7, max_power_iters=5000, seed=0):
    """Upper bound ``1.001 * ||A||_2`` by power iteration on ``A^H A``.

    Raises
    ------
    NoConvergence
        If the Rayleigh quotient has not settled to relative `tol` within
        `max_power_iters` iterations.
    """
    op = aslinearoperator(A)
    q = op.shape[1]
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(q)
    if np.issubdtype(op.dtype, np.complexfloating):
        v = v + 1j * rng.standard_normal(q)
    v /= np.linalg.norm(v)
    prev = 0.0
    for _ in range(max_power_iters):
        av = op.matvec(v)
        sq = np.vdot(av, av).real
        if sq == 0.0:
            return 0.0
        w = op.rmatvec(av)
        nw = np.linalg.norm(w)
        # ||A v||^2 is the Rayleigh quotient of A^H A at unit v.
        if abs(sq - prev) <= tol * sq:
            return (1.0 + 1e-3) * float(np.sqrt(max(sq, nw)))
        prev = sq
        v = w / nw
    raise NoConvergence(f"power iteration did not converge in {max_power_iters} steps")


def soft_threshold(u, lam):
    """Complex soft-thresholding ``max(|u| - lam, 0) * u / |u|`` (``0 -> 0``)."""
    u = np.asarray(u)
    mag = np.abs(u)
    # The floor on the divisor only matters where the numerator is already 0.
    scale = np.maximum(mag - lam, 0.0) / np.maximum(mag, _TINY)
    return scale * u


def project_feasible(u, gamma, delta):
    """Project each ``u_i`` onto the disk ``|v - gamma_i| <= delta``."""
    r = np.asarray(u) - gamma
    # delta / max(|r|, delta) is min(1, delta/|r|). The floor only bites when
    # r = 0, where the shrink factor multiplies zero anyway.
    shrink = delta / np.maximum(np.maximum(np.abs(r), delta), _TINY)
    return gamma + shrink * r


@dataclass(frozen=True, eq=False)
class SolverConfig:
    alpha: float = 1.0
    epsilon: float = 1e-4
    eta: int = 20
    max_iter: int = 50_000

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if int(self.eta) != self.eta or self.eta < 1:
            raise ValueError("eta must be a positive integer")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ValueError("max_iter must be a positive integer")

    def step(self, a_norm):
        """``lam / alpha``; strictly below ``1 / ||A||^2``."""
        return 0.999 / a_norm ** 2

    def with_overrides(self, **kwargs):
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})


@dataclass(frozen=True, eq=False)
class SolverState:
    c: np.ndarray
    tau: np.ndarray
    tau_prev: np.ndarray
    k: int
    support_age: int
    ac: np.ndarray  # A @ c, reused by the dual update and the stopping test
    nonzero: np.ndarray = None  # c != 0, compared against the next iterate


@dataclass(frozen=True, eq=False)
class Solution:
    c_raw: np.ndarray
    c_hat: np.ndarray
    support: np.ndarray
    iterations: int
    stop_reason: StopReason
    elapsed: float


def initial_state(pre):
    """The POA starting point ``c = tau = tau_prev = 0``."""
    zero = np.zeros(pre.q, dtype=pre.A.dtype)
    return SolverState(zero, zero, zero, 0, 0, zero, np.zeros(pre.q, dtype=bool))


def iterate(state, pre, cfg, delta):
    """One POA step from `state`; returns the next :class:`SolverState`."""
    ratio = cfg.step(pre.a_norm)
    c = soft_threshold(
        state.c - ratio * pre.rmatvec(2.0 * state.tau - state.tau_prev),
        1.0 / cfg.alpha)
    ac = pre.matvec(c)
    v = ac + state.tau
    tau = v - project_feasible(v, pre.gamma, delta)
    nonzero = c != 0
    prev = state.c != 0 if state.nonzero is None else state.nonzero
    age = 0 if (nonzero ^ prev).any() else state.support_age + 1
    return SolverState(c, tau, state.tau, state.k + 1, age, ac, nonzero)


def _write_trace(writer, state, pre, delta):
    gap = max(float(np.max(np.abs(state.ac - pre.gamma))) - delta, 0.0)
    writer.writerow([state.k, repr(float(np.sum(np.abs(state.c)))), repr(gap),
                     int(np.count_nonzero(state.c))])


def solve(problem, pre, cfg=SolverConfig(), trace=None):
    """Run POA until a stopping criterion holds, then debias.

    Stops when ``||A c - gamma||_inf / max(||c||_2, 1) <= epsilon``, when the
    support of ``c`` has not changed for `eta` iterations, or at `max_iter`.
    An empty support only counts as stationary when ``c = 0`` is feasible.

    Parameters
    ----------
    trace : file-like, optional
        Text stream receiving a CSV header and one row per iteration with
        the columns in :data:`TRACE_FIELDS`.
    """
    start = time.perf_counter()
    delta = problem.delta
    writer = None
    if trace is not None:
        writer = csv.writer(trace, lineterminator="\n")
        writer.writerow(TRACE_FIELDS)

    state = initial_state(pre)
    if pre.a_norm == 0.0:
        reason = StopReason.RESIDUAL_TOLERANCE
    else:
        zero_feasible = float(np.max(np.abs(pre.gamma))) <= delta
        reason = None
        if np.max(np.abs(pre.gamma)) <= cfg.epsilon:
            reason = StopReason.RESIDUAL_TOLERANCE
        while reason is None:
            state = iterate(state, pre, cfg, delta)
            if writer is not None:
                _write_trace(writer, state, pre, delta)
            resid = np.abs(state.ac - pre.gamma).max()
            c_norm = np.sqrt(np.vdot(state.c, state.c).real)
            if resid <= cfg.epsilon * max(c_norm, 1.0):
                reason = StopReason.RESIDUAL_TOLERANCE
            elif state.support_age >= cfg.eta and (zero_feasible or np.any(state.c)):
                reason = StopReason.SUPPORT_STATIONARY
            elif state.k >= cfg.max_iter:
                reason = StopReason.MAX_ITER
    if reason is StopReason.MAX_ITER:
        logger.warning("POA hit max_iter=%d without meeting a stopping rule", cfg.max_iter)

    c_raw = state.c
    c_hat = debias(c_raw, problem.X, problem.B, problem.y)
    return Solution(c_raw, c_hat, np.flatnonzero(c_raw), state.k, reason,
                    time.perf_counter() - start)


def debias(c_raw, X, B, y, rcond=1e-12):
    """Least-squares refit ``argmin ||X^T (X B_S c - y)||_2`` on ``S = supp(c_raw)``.

    Entries outside the support are zero. An empty support returns zeros.
    """
    c_raw = np.asarray(c_raw)
    X = np.asarray(X, dtype=float)
    support = np.flatnonzero(c_raw)
    real = B.is_real and not np.iscomplexobj(y)
    out = np.zeros(B.q, dtype=float if real else complex)
    if support.size == 0:
        return out
    G = X.T @ (X @ B.columns(support))
    sol, *_ = np.linalg.lstsq(G, X.T @ y, rcond=rcond)
    out[support] = sol.real if real else sol
    return out
