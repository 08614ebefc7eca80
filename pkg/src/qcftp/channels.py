"""Quantum channels, the classical chains they induce, lumping and stability.

Channels are stored as dense d^2 x d^2 superoperators acting on row-major
vectorized matrices, so ``vec(A X B) = kron(A, B.T) @ vec(X)``.  Stochastic
matrices are row-stochastic: ``pi[i, j]`` is the probability of moving from
``i`` to ``j``.
"""
from __future__ import annotations

import itertools

import numpy as np

from .errors import NotLumpableError, NotPrimitiveError, ValidationError
from .spectral import SpectralDecomposition, gibbs_state, trace_distance

DEFAULT_TOL = 1e-9
CP_TOL = 1e-10


class QuantumChannel:
    """A linear map on d x d matrices, held as its superoperator matrix."""

    def __init__(self, superop):
        superop = np.asarray(superop, dtype=complex)
        n = superop.shape[0]
        d = int(round(np.sqrt(n)))
        if superop.shape != (n, n) or d * d != n:
            raise ValidationError("superoperator must be d^2 x d^2")
        self.superop = superop
        self.dim = d

    @classmethod
    def from_kraus(cls, kraus):
        kraus = [np.asarray(k, dtype=complex) for k in kraus]
        if not kraus:
            raise ValidationError("need at least one Kraus operator")
        return cls(sum(np.kron(k, k.conj()) for k in kraus))

    @classmethod
    def identity(cls, d):
        return cls(np.eye(d * d, dtype=complex))

    @classmethod
    def unitary(cls, u):
        return cls.from_kraus([u])

    @classmethod
    def depolarizing(cls, d):
        """X -> tr(X) I/d."""
        vi = np.eye(d, dtype=complex).reshape(-1)
        return cls(np.outer(vi, vi) / d)

    def __call__(self, x):
        d = self.dim
        return (self.superop @ np.asarray(x, dtype=complex).reshape(-1)).reshape(d, d)

    def adjoint(self) -> "QuantumChannel":
        """Hilbert-Schmidt adjoint T*."""
        return QuantumChannel(self.superop.conj().T)

    def choi(self) -> np.ndarray:
        d = self.dim
        return self.superop.reshape(d, d, d, d).transpose(2, 0, 3, 1).reshape(d * d, d * d)

    def is_trace_preserving(self, tol=DEFAULT_TOL) -> bool:
        eye = np.eye(self.dim)
        return bool(np.max(np.abs(self.adjoint()(eye) - eye)) <= tol)

    def is_completely_positive(self, tol=CP_TOL) -> bool:
        j = self.choi()
        return bool(np.linalg.eigvalsh(0.5 * (j + j.conj().T)).min() >= -tol)


def _proj_vecs(basis):
    # columns: vec(|psi_k><psi_k|)
    return np.einsum("ak,bk->abk", basis, basis.conj()).reshape(-1, basis.shape[1])


def induced_transition_matrix(t: QuantumChannel, sd: SpectralDecomposition, basis=None) -> np.ndarray:
    """pi[i, j] = tr(T(|psi_i><psi_i|) |psi_j><psi_j|) in the given eigenbasis."""
    basis = sd.basis if basis is None else np.asarray(basis, dtype=complex)
    v = _proj_vecs(basis)
    pi = np.real(v.conj().T @ t.superop @ v).T
    return pi


def is_eigenbasis_preserving(t: QuantumChannel, sd: SpectralDecomposition, beta, tol=DEFAULT_TOL) -> bool:
    projs = sd.projectors
    for p in projs:
        tp = t(p)
        for q in projs:
            if np.max(np.abs(tp @ q - q @ tp)) > tol:
                return False
    sigma = gibbs_state(sd, beta)
    return trace_distance(t(sigma), sigma) <= tol


def check_stochastic(pi, tol=1e-12) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    if pi.ndim != 2 or pi.shape[0] != pi.shape[1] or pi.shape[0] == 0:
        raise ValidationError("transition matrix must be square and non-empty")
    if pi.min() < -tol:
        raise ValidationError("transition matrix has negative entries")
    dev = np.max(np.abs(pi.sum(axis=1) - 1))
    if dev > tol:
        raise ValidationError(f"rows must sum to 1 (max deviation {dev:.3e})")
    return pi


def _class_mass(pi, partition):
    # cm[l, k] = mass of row l landing in class k
    return np.stack([pi[:, list(c)].sum(axis=1) for c in partition], axis=1)


def _check_partition(partition, n):
    flat = sorted(itertools.chain.from_iterable(partition))
    if flat != list(range(n)) or any(len(c) == 0 for c in partition):
        raise ValidationError("partition must split the states into disjoint non-empty classes")


def _lump_violation(pi, partition):
    cm = _class_mass(pi, partition)
    worst, pair = 0.0, None
    for a, cls in enumerate(partition):
        rows = cm[list(cls)]
        spread = rows.max(axis=0) - rows.min(axis=0)
        k = int(np.argmax(spread))
        if spread[k] > worst:
            worst, pair = float(spread[k]), (a, k)
    return worst, pair, cm


def is_lumpable_chain(pi, partition, tol=DEFAULT_TOL) -> bool:
    """Row-sum criterion: every state of a class sends equal mass to each class."""
    pi = np.asarray(pi, dtype=float)
    _check_partition(partition, pi.shape[0])
    worst, _, _ = _lump_violation(pi, partition)
    return worst <= tol


def lump(pi, partition, tol=DEFAULT_TOL) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    _check_partition(partition, pi.shape[0])
    worst, pair, cm = _lump_violation(pi, partition)
    if worst > tol:
        raise NotLumpableError(
            f"chain is not lumpable: class {pair[0]} rows disagree on mass into class "
            f"{pair[1]} by {worst:.3e}", worst_pair=pair, violation=worst)
    return np.stack([cm[c[0]] for c in partition])


def energy_partition(sd: SpectralDecomposition):
    return [list(np.nonzero(sd.level_of_state == i)[0]) for i in range(sd.n_levels)]


def metropolis_chain(sd: SpectralDecomposition, beta) -> np.ndarray:
    """Uniform-proposal Metropolis kernel on the d eigenstates.

    Propose any of the d states (the current one included) uniformly, accept
    with min(1, exp(-beta (E_j - E_i))); rejected mass stays put.
    """
    e = sd.state_energies
    d = e.size
    with np.errstate(over="ignore"):
        acc = np.minimum(1.0, np.exp(-beta * (e[None, :] - e[:, None])))
    pi = acc / d
    np.fill_diagonal(pi, 0.0)
    pi[np.diag_indices(d)] = 1.0 - pi.sum(axis=1)
    return pi


def metropolis_lumped(sd: SpectralDecomposition, beta) -> np.ndarray:
    """The lumped Metropolis chain on levels, without building the d x d chain."""
    e = sd.energies
    with np.errstate(over="ignore"):
        acc = np.minimum(1.0, np.exp(-beta * (e[None, :] - e[:, None])))
    pi = acc * sd.multiplicities[None, :] / sd.dim
    np.fill_diagonal(pi, 0.0)
    pi[np.diag_indices(e.size)] = 1.0 - pi.sum(axis=1)
    return pi


def classical_lift(pi, basis) -> QuantumChannel:
    """Measure in ``basis`` and re-prepare: T(X) = sum pi[i,j] <i|X|i> |j><j|.

    Equivalent to the Kraus family sqrt(pi[i,j]) |psi_j><psi_i|.
    """
    v = _proj_vecs(np.asarray(basis, dtype=complex))
    return QuantumChannel(v @ np.asarray(pi, dtype=float).T @ v.conj().T)


def metropolis_channel(sd: SpectralDecomposition, beta):
    """Metropolis chain on the eigenstates and its quantum lift.

    Returns ``(channel, pi)`` where ``pi`` is the d x d chain in the order of
    ``sd.basis``.
    """
    pi = metropolis_chain(sd, beta)
    return classical_lift(pi, sd.basis), pi


def stationary_distribution(pi) -> np.ndarray:
    """Unique stationary row vector of a primitive chain, by a direct solve."""
    pi = np.asarray(pi, dtype=float)
    n = pi.shape[0]
    a = pi.T - np.eye(n)
    a[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    mu = np.linalg.solve(a, b)
    # one step of refinement tightens the solve to ~1e-15
    r = b - a @ mu
    mu = mu + np.linalg.solve(a, r)
    return mu


def is_primitive(pi, tol=DEFAULT_TOL) -> bool:
    pi = np.asarray(pi, dtype=float)
    evals, evecs = np.linalg.eig(pi.T)
    unit = np.abs(np.abs(evals) - 1.0) <= tol
    if unit.sum() != 1:
        return False
    v = np.real(evecs[:, np.argmax(unit)])
    v = v / v.sum()
    return bool(np.all(v > tol))


def detailed_balance_classical(pi, mu, tol=DEFAULT_TOL) -> bool:
    flow = np.asarray(mu)[:, None] * np.asarray(pi)
    return bool(np.max(np.abs(flow - flow.T)) <= tol)


def _psd_sqrt(sigma):
    w, v = np.linalg.eigh(0.5 * (sigma + sigma.conj().T))
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T


def detailed_balance_quantum(t: QuantumChannel, sigma, tol=DEFAULT_TOL) -> bool:
    """T(s X s) == s T*(X) s for s = sigma^(1/2), on every matrix unit X."""
    s = _psd_sqrt(np.asarray(sigma, dtype=complex))
    sandwich = np.kron(s, s.T)
    lhs = t.superop @ sandwich
    rhs = sandwich @ t.superop.conj().T
    return bool(np.max(np.abs(lhs - rhs)) <= tol)


def fundamental_matrix(pi) -> np.ndarray:
    """(I - pi^T + mu 1^T)^(-1), acting on column distributions."""
    pi = np.asarray(pi, dtype=float)
    if not is_primitive(pi):
        raise NotPrimitiveError("kappa needs a primitive chain")
    n = pi.shape[0]
    mu = stationary_distribution(pi)
    return np.linalg.inv(np.eye(n) - pi.T + np.outer(mu, np.ones(n)))


def kappa(pi) -> float:
    """Stability constant: the l1 -> l1 norm of the fundamental matrix on zero-sum vectors.

    The zero-sum l1 unit ball is the convex hull of (e_i - e_j)/2, so the
    supremum of the convex ratio is reached on one of those vertices.
    """
    m = fundamental_matrix(pi)
    n = m.shape[0]
    if n == 1:
        # empty supremum; a one-state chain is the rank-one chain
        return 1.0
    best = 0.0
    for i in range(n):
        cols = np.abs(m[:, [i]] - m).sum(axis=0)
        cols[i] = 0.0
        best = max(best, cols.max() / 2)
    return float(best)


def one_to_one_distance(pi_a, pi_b) -> float:
    """max_i sum_j |pi_a[i,j] - pi_b[i,j]|."""
    diff = np.asarray(pi_a, dtype=float) - np.asarray(pi_b, dtype=float)
    return float(np.abs(diff).sum(axis=1).max())


def pinch(x, sd: SpectralDecomposition) -> np.ndarray:
    """Q(X) = sum_i tr(P_i X) P_i / |S_i|."""
    x = np.asarray(x, dtype=complex)
    out = np.zeros_like(x)
    for p, m in zip(sd.projectors, sd.multiplicities):
        out += np.trace(p @ x) * p / m
    return out
