"""Hamiltonians, spectral decompositions, Gibbs states and spectral coverings.

Everything here works on dense matrices: the point of the package is exact
computation at desk scale (d up to a few hundred), not scalability.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import CoveringInfeasible, ValidationError

HERMITIAN_TOL = 1e-10


@dataclass(frozen=True)
class SpectralDecomposition:
    """A Hamiltonian resolved into distinct energy levels.

    ``basis`` is a unitary whose columns are eigenvectors, ordered so that the
    states of level 0 come first, then level 1, and so on.  ``level_of_state``
    maps each basis column to its level index.
    """

    energies: np.ndarray
    multiplicities: np.ndarray
    basis: np.ndarray
    level_of_state: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.energies, dtype=float)
        m = np.asarray(self.multiplicities, dtype=int)
        if e.ndim != 1 or e.shape != m.shape or e.size == 0:
            raise ValidationError("energies and multiplicities must be equal-length, non-empty")
        if np.any(m < 1):
            raise ValidationError("multiplicities must be positive")
        if e.size > 1 and np.any(np.diff(e) <= 0):
            raise ValidationError("energies must be strictly increasing")
        object.__setattr__(self, "energies", e)
        object.__setattr__(self, "multiplicities", m)
        object.__setattr__(self, "level_of_state", np.asarray(self.level_of_state, dtype=int))
        if self.basis.shape != (self.dim, self.dim):
            raise ValidationError("basis must be d x d with d = sum of multiplicities")

    @classmethod
    def from_levels(cls, energies, multiplicities=None, basis=None):
        """Build a decomposition directly from (energy, multiplicity) data.

        Without an explicit basis the eigenvectors are the computational
        basis, so the Hamiltonian is diagonal.
        """
        energies = np.asarray(energies, dtype=float)
        if multiplicities is None:
            multiplicities = np.ones(energies.size, dtype=int)
        multiplicities = np.asarray(multiplicities, dtype=int)
        d = int(multiplicities.sum())
        if basis is None:
            basis = np.eye(d, dtype=complex)
        levels = np.repeat(np.arange(energies.size), multiplicities)
        return cls(energies, multiplicities, np.asarray(basis, dtype=complex), levels)

    @property
    def dim(self) -> int:
        return int(self.multiplicities.sum())

    @property
    def n_levels(self) -> int:
        return int(self.energies.size)

    @cached_property
    def state_energies(self) -> np.ndarray:
        return self.energies[self.level_of_state]

    @cached_property
    def projectors(self) -> tuple:
        out = []
        for i in range(self.n_levels):
            v = self.basis[:, self.level_of_state == i]
            out.append(v @ v.conj().T)
        return tuple(out)

    def hamiltonian(self) -> np.ndarray:
        b = self.basis
        return (b * self.state_energies) @ b.conj().T


@dataclass(frozen=True)
class SpectralCovering:
    """Disjoint open intervals (center - eps, center + eps) covering the spectrum.

    ``assignment[i]`` is the covering class of energy level ``i``.
    """

    centers: np.ndarray
    eps: float
    assignment: np.ndarray

    @property
    def size(self) -> int:
        return int(len(self.centers))

    def class_sizes(self, sd: SpectralDecomposition) -> np.ndarray:
        return np.bincount(self.assignment, weights=sd.multiplicities,
                           minlength=self.size).astype(int)

    def contains(self, value: float):
        """Index of the interval holding ``value``, or None."""
        hit = np.nonzero(np.abs(self.centers - value) < self.eps)[0]
        return int(hit[0]) if hit.size else None


def parse_hamiltonian(spec: dict, group_tol=None) -> SpectralDecomposition:
    """Decode the JSON Hamiltonian form (``dense`` or ``spectrum``)."""
    if "dense" in spec:
        dense = spec["dense"]
        re = np.asarray(dense["re"], dtype=float)
        im = np.asarray(dense.get("im", np.zeros_like(re)), dtype=float)
        if re.ndim != 2 or re.shape[0] != re.shape[1] or re.shape != im.shape:
            raise ValidationError("dense Hamiltonian must be a square matrix with matching re/im")
        return decompose(re + 1j * im, group_tol)
    if "spectrum" in spec:
        levels = spec["spectrum"]
        if not levels:
            raise ValidationError("spectrum must list at least one level")
        e = [float(lv["energy"]) for lv in levels]
        m = [int(lv.get("multiplicity", 1)) for lv in levels]
        if min(m) < 1:
            raise ValidationError("multiplicities must be positive")
        return from_spectrum(e, m, group_tol)
    raise ValidationError("Hamiltonian spec needs a 'dense' or 'spectrum' key")


def from_spectrum(energies, multiplicities, group_tol=None) -> SpectralDecomposition:
    """Diagonal Hamiltonian from an unsorted list of levels; merges duplicates."""
    e = np.asarray(energies, dtype=float)
    m = np.asarray(multiplicities, dtype=int)
    order = np.argsort(e, kind="stable")
    return decompose(np.diag(np.repeat(e[order], m[order])).astype(complex), group_tol)


def _default_group_tol(evals):
    return 1e-10 * max(float(evals[-1] - evals[0]), 1.0)


def decompose(h, group_tol=None, herm_tol=HERMITIAN_TOL) -> SpectralDecomposition:
    """Spectral decomposition of a dense Hermitian matrix.

    Eigenvalues closer than ``group_tol`` to their neighbour are merged into
    one level (chained, so a run of close eigenvalues becomes one level).
    """
    h = np.asarray(h, dtype=complex)
    if h.ndim != 2 or h.shape[0] != h.shape[1] or h.shape[0] == 0:
        raise ValidationError("Hamiltonian must be a non-empty square matrix")
    dev = np.max(np.abs(h - h.conj().T))
    if dev > herm_tol * (1.0 + np.max(np.abs(h))):
        raise ValidationError(f"Hamiltonian is not Hermitian (max |H - H^dag| = {dev:.3e})")
    h = 0.5 * (h + h.conj().T)
    evals, evecs = np.linalg.eigh(h)
    if group_tol is None:
        group_tol = _default_group_tol(evals)
    if group_tol < 0:
        raise ValidationError("group_tol must be non-negative")

    starts = [0]
    for k in range(1, evals.size):
        if evals[k] - evals[k - 1] > group_tol:
            starts.append(k)
    bounds = starts + [evals.size]
    energies = np.array([evals[a:b].mean() for a, b in zip(bounds[:-1], bounds[1:])])
    mult = np.diff(bounds)
    levels = np.repeat(np.arange(len(mult)), mult)
    return SpectralDecomposition(energies, mult, evecs, levels)


def _boltzmann(energies, beta):
    # shift by the ground energy so large beta does not underflow everything
    return np.exp(-beta * (energies - energies.min()))


def gibbs_weights(sd: SpectralDecomposition, beta: float) -> np.ndarray:
    """Per-state Gibbs probabilities in the eigenbasis order of ``sd.basis``."""
    _check_beta(beta)
    w = _boltzmann(sd.state_energies, beta)
    return w / w.sum()


def gibbs_state(sd: SpectralDecomposition, beta: float) -> np.ndarray:
    w = gibbs_weights(sd, beta)
    b = sd.basis
    rho = (b * w) @ b.conj().T
    return 0.5 * (rho + rho.conj().T)


def gibbs_lumped(sd: SpectralDecomposition, beta: float) -> np.ndarray:
    """Gibbs mass of each energy level, |S_i| exp(-beta E_i) / Z."""
    _check_beta(beta)
    w = sd.multiplicities * _boltzmann(sd.energies, beta)
    return w / w.sum()


def _check_beta(beta):
    if not np.isfinite(beta):
        raise ValidationError("beta must be finite")


def build_covering(sd: SpectralDecomposition, eps: float) -> SpectralCovering:
    """Greedy ascending eps-spectral covering.

    A new class is opened whenever the next level no longer fits in an open
    interval of half-width ``eps`` together with the first level of the
    current class.  Centers are midpoints of each class's extreme energies.
    """
    if not eps > 0:
        raise ValidationError("eps must be positive")
    e = sd.energies
    classes = [[0]]
    for k in range(1, e.size):
        if e[k] - e[classes[-1][0]] < 2 * eps:
            classes[-1].append(k)
        else:
            classes.append([k])
    centers = np.array([0.5 * (e[c[0]] + e[c[-1]]) for c in classes])
    gaps = np.diff(centers)
    if gaps.size and gaps.min() < 2 * eps:
        k = int(np.argmin(gaps))
        raise CoveringInfeasible(
            f"intervals around centers {centers[k]:.6g} and {centers[k + 1]:.6g} "
            f"overlap for eps={eps:.6g}; increase eps")
    assignment = np.empty(e.size, dtype=int)
    for ci, c in enumerate(classes):
        assignment[c] = ci
    return SpectralCovering(centers, float(eps), assignment)


def covered_decomposition(sd: SpectralDecomposition, cov: SpectralCovering) -> SpectralDecomposition:
    """The Hamiltonian with every level replaced by its covering center.

    Its Gibbs state is the block-uniform state the covering-lumped sampler
    produces; its levels are the covering classes.
    """
    return SpectralDecomposition(
        np.asarray(cov.centers, dtype=float),
        cov.class_sizes(sd),
        sd.basis,
        cov.assignment[sd.level_of_state],
    )


def check_density_matrix(rho, tol=1e-9):
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValidationError("density matrix must be square")
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        raise ValidationError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1) > tol:
        raise ValidationError("density matrix does not have unit trace")
    if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() < -tol:
        raise ValidationError("density matrix is not positive semidefinite")
    return rho


def trace_distance(a, b) -> float:
    """Unnormalized trace norm ||a - b||_1 (equals 2 for orthogonal states)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValidationError("states must have the same dimension")
    return float(np.linalg.svd(a - b, compute_uv=False).sum())


def relative_entropy(a, b, tol=1e-12) -> float:
    """Umegaki relative entropy D(a||b) in nats.

    Returns ``inf`` when ``a`` has weight outside the support of ``b``.
    Computed through the eigendecomposition of ``b``, which covers both the
    commuting and the non-commuting case without a matrix logarithm.
    """
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.shape != b.shape:
        raise ValidationError("states must have the same dimension")
    pa = np.linalg.eigvalsh(0.5 * (a + a.conj().T))
    pa = pa[pa > tol]
    lb, vb = np.linalg.eigh(0.5 * (b + b.conj().T))
    # weight of a along each eigenvector of b
    w = np.real(np.einsum("ki,kl,li->i", vb.conj(), a, vb))
    null = lb <= tol
    if np.any(w[null] > tol):
        return float("inf")
    keep = ~null
    val = np.sum(pa * np.log(pa)) - np.sum(w[keep] * np.log(lb[keep]))
    return float(max(val, 0.0))
