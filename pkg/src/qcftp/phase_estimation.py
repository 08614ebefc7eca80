"""Exact outcome model for t-qubit phase estimation and the label-noise it causes.

Energies are mapped affinely to phases in [0, 1); an outcome m of the t-bit
register reads as the phase m / 2^t.  Labels are covering classes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DeadLabelError, ValidationError
from .spectral import SpectralCovering, SpectralDecomposition

EXACT_T_MAX = 16
_CHUNK = 1 << 16


@dataclass(frozen=True)
class PEConfig:
    """Register size plus the affine map phase = scale * energy + offset."""

    t: int
    scale: float = 1.0
    offset: float = 0.0
    margin: float = 0.1

    def __post_init__(self):
        if int(self.t) != self.t or self.t < 1:
            raise ValidationError("t must be a positive integer")
        if not self.scale > 0:
            raise ValidationError("scale must be positive")
        if not 0 < self.margin < 1:
            raise ValidationError("margin must lie in (0, 1)")

    @classmethod
    def fit(cls, sd: SpectralDecomposition, t: int, margin: float = 0.1):
        """Map [E_min, E_max] onto [0, 1 - margin]."""
        lo, hi = float(sd.energies[0]), float(sd.energies[-1])
        scale = (1.0 - margin) / (hi - lo) if hi > lo else 1.0
        return cls(t=t, scale=scale, offset=-lo * scale, margin=margin)

    @property
    def n_outcomes(self) -> int:
        return 1 << self.t

    def phase(self, energy):
        return self.scale * np.asarray(energy, dtype=float) + self.offset

    def energy(self, phase):
        return (np.asarray(phase, dtype=float) - self.offset) / self.scale

    def check(self, sd: SpectralDecomposition):
        ph = self.phase(sd.energies)
        if ph.min() < -1e-12 or ph.max() > 1 - self.margin + 1e-12:
            raise ValidationError(
                f"scaled spectrum [{ph.min():.4g}, {ph.max():.4g}] leaves [0, {1 - self.margin:.4g}]")
        return self


def _kernel(delta, n):
    # sin^2(pi n delta) / (n^2 sin^2(pi delta)), with the removable singularity at integers
    delta = np.asarray(delta, dtype=float)
    s = np.sin(np.pi * delta)
    small = np.abs(s) < 1e-15
    safe = np.where(small, 1.0, s)
    p = np.sin(np.pi * n * delta) ** 2 / (n * n * safe * safe)
    return np.where(small, 1.0, p)


def pe_distribution(phase: float, t: int) -> np.ndarray:
    """Outcome probabilities of textbook phase estimation on an eigenstate."""
    if t > EXACT_T_MAX:
        raise ValidationError(f"exact outcome vector limited to t <= {EXACT_T_MAX}")
    n = 1 << t
    m = np.arange(n)
    return _kernel(phase - m / n, n)


def _outcome_mass(phase, t, outcomes):
    n = 1 << t
    total = 0.0
    for a in range(0, outcomes.size, _CHUNK):
        total += _kernel(phase - outcomes[a:a + _CHUNK] / n, n).sum()
    return total


def assign_label(m: int, cov: SpectralCovering, cfg: PEConfig) -> int:
    """Covering interval holding the outcome's energy; else the nearest center.

    Nearest is measured on the phase circle; ties go to the lower index.
    """
    return int(assign_labels(cov, cfg, np.array([m]))[0])


def assign_labels(cov: SpectralCovering, cfg: PEConfig, outcomes=None) -> np.ndarray:
    n = cfg.n_outcomes
    if outcomes is None:
        outcomes = np.arange(n)
    ph = np.asarray(outcomes, dtype=float) / n
    energy = cfg.energy(ph)
    inside = np.abs(energy[:, None] - cov.centers[None, :]) < cov.eps
    cph = cfg.phase(cov.centers)
    dist = np.abs(ph[:, None] - cph[None, :]) % 1.0
    dist = np.minimum(dist, 1.0 - dist)
    # argmin returns the first minimum, which is the lower index on ties
    nearest = np.argmin(dist, axis=1)
    return np.where(inside.any(axis=1), np.argmax(inside, axis=1), nearest)


def confusion_forward(sd: SpectralDecomposition, cov: SpectralCovering, cfg: PEConfig) -> np.ndarray:
    """Xi'[i, j] = P(label j | true class i), averaging class levels by multiplicity."""
    k = cov.size
    sizes = cov.class_sizes(sd)
    labels = assign_labels(cov, cfg)
    out = np.zeros((k, k))
    if cfg.t <= EXACT_T_MAX:
        for lvl, (e, mult) in enumerate(zip(sd.energies, sd.multiplicities)):
            p = pe_distribution(float(cfg.phase(e)), cfg.t)
            out[cov.assignment[lvl]] += mult * np.bincount(labels, weights=p, minlength=k)
    else:
        groups = [np.nonzero(labels == j)[0] for j in range(k)]
        for lvl, (e, mult) in enumerate(zip(sd.energies, sd.multiplicities)):
            ph = float(cfg.phase(e))
            for j, g in enumerate(groups):
                out[cov.assignment[lvl], j] += mult * _outcome_mass(ph, cfg.t, g)
    return out / sizes[:, None]


def confusion_backward(xi_fwd, sd_or_sizes) -> np.ndarray:
    """Bayes inversion: Xi[i, j] = P(true class j | label i) under the prior |S_j|/d."""
    xi_fwd = np.asarray(xi_fwd, dtype=float)
    sizes = np.asarray(getattr(sd_or_sizes, "multiplicities", sd_or_sizes), dtype=float)
    prior = sizes / sizes.sum()
    joint = prior[:, None] * xi_fwd  # joint[j, i] = P(true j, label i)
    col = joint.sum(axis=0)
    dead = np.nonzero(col <= 0)[0]
    if dead.size:
        raise DeadLabelError(f"label {int(dead[0])} is never assigned", label=int(dead[0]))
    return (joint / col[None, :]).T


def symmetric_flip(k: int, eta: float) -> np.ndarray:
    """Label kept with probability 1 - eta, else moved uniformly to another label."""
    if k == 1:
        return np.ones((1, 1))
    return (1 - eta) * np.eye(k) + eta / (k - 1) * (np.ones((k, k)) - np.eye(k))


@dataclass(frozen=True)
class ConfusionModel:
    xi_fwd: np.ndarray
    xi_bwd: np.ndarray
    delta: np.ndarray | None = None

    @property
    def xi(self) -> float:
        return float(np.min(np.diag(self.xi_bwd)))

    @property
    def xi_forward(self) -> float:
        return float(np.min(np.diag(self.xi_fwd)))

    @classmethod
    def from_forward(cls, xi_fwd, sizes, delta=None):
        return cls(np.asarray(xi_fwd, dtype=float), confusion_backward(xi_fwd, sizes), delta)

    @classmethod
    def identity(cls, k):
        return cls(np.eye(k), np.eye(k))

    @classmethod
    def from_pe(cls, sd, cov, cfg):
        fwd = confusion_forward(sd, cov, cfg)
        return cls(fwd, confusion_backward(fwd, cov.class_sizes(sd)), delta_matrix(sd, cov, cfg))

    def label_chain(self, pi) -> np.ndarray:
        """Transition matrix seen on labels: Xi pi Xi' (label -> true -> true' -> label')."""
        return self.xi_bwd @ np.asarray(pi) @ self.xi_fwd


def delta_matrix(sd: SpectralDecomposition, cov: SpectralCovering, cfg: PEConfig) -> np.ndarray:
    """Delta[i, j]: least circular grid distance from a class-i spectrum point to an
    outcome lying in class j's interval.  ``inf`` if that interval holds no outcome.
    """
    n = cfg.n_outcomes
    k = cov.size
    grid_energy = cfg.energy(np.arange(n) / n)
    x = n * cfg.phase(sd.energies)
    out = np.full((k, k), np.inf)
    for j in range(k):
        ys = np.nonzero(np.abs(grid_energy - cov.centers[j]) < cov.eps)[0]
        if ys.size == 0:
            continue
        for i in range(k):
            xi = x[cov.assignment == i]
            diff = np.abs(xi[:, None] - ys[None, :]) % n
            out[i, j] = np.minimum(diff, n - diff).min()
    np.fill_diagonal(out, 0.0)
    return out


def misclassification_bound(i, j, eps, cfg: PEConfig, delta) -> float:
    """Upper bound on P(label j | true class i), i != j: (2^(t+1) eps + 1) / Delta^2.

    ``eps`` is in energy units and converted to phase units through ``cfg``.
    """
    d = float(np.asarray(delta)[i, j]) if np.ndim(delta) else float(delta)
    if d == 0:
        return float("inf")
    return (2.0 ** (cfg.t + 1) * eps * cfg.scale + 1.0) / d ** 2


def xi_lower_bound(sd, cov, cfg, delta_target, delta=None) -> float:
    """Lower bound on xi from the misclassification bounds and class sizes."""
    if delta is None:
        delta = delta_matrix(sd, cov, cfg)
    sizes = cov.class_sizes(sd).astype(float)
    good = 1.0 - delta_target
    count = 2.0 ** (cfg.t + 1) * cov.eps * cfg.scale + 1.0
    best = 1.0
    for j in range(cov.size):
        leak = sum(sizes[l] / delta[l, j] ** 2 for l in range(cov.size) if l != j)
        best = min(best, good / (good + count * leak / sizes[j]))
    return best


def faulty_pe_total_bound(xi, xi_fwd, kappa) -> float:
    """Output-distribution error bound for noisy labels, evaluated term by term."""
    inner = (1 - xi * xi_fwd) + (1 - xi) * xi_fwd + xi * (1 - xi_fwd) + (1 - xi) * (1 - xi_fwd)
    return 1 - xi_fwd + 2 * (kappa + 2) * inner


def qubits_for_accuracy(n_bits: int, delta: float) -> int:
    """t = n + ceil(log2(2 + 1/(2 delta))) register size for n-bit accuracy w.p. 1 - delta."""
    return n_bits + math.ceil(math.log2(2 + 1 / (2 * delta)))
