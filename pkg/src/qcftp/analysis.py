"""Exact evaluators for the quantitative guarantees, each paired with what it predicts."""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from .channels import check_stochastic, is_primitive, kappa, one_to_one_distance, stationary_distribution
from .errors import NotPrimitiveError, ValidationError
from .phase_estimation import ConfusionModel, faulty_pe_total_bound
from .spectral import (SpectralCovering, SpectralDecomposition, covered_decomposition, gibbs_state,
                       relative_entropy, trace_distance)

PHI_EXACT_MAX = 22
PHI_RATIONAL_MAX = 16
PHI_CROSSCHECK_MIN = 15
NUMERIC_SLACK = 1e-12
TMIX_THRESHOLD = 2 * math.exp(-1)


@dataclass
class BoundReport:
    """A predicted upper bound next to the quantity it bounds.

    ``passed`` is None for informational reports that predict a scale rather
    than an inequality.
    """

    name: str
    predicted: float
    measured: float | None
    instance: dict = field(default_factory=dict)
    passed: bool | None = None
    extra: dict = field(default_factory=dict)
    tolerance: float = NUMERIC_SLACK

    @property
    def margin(self):
        return None if self.measured is None else self.predicted - self.measured

    @classmethod
    def check(cls, name, predicted, measured, instance=None, tolerance=NUMERIC_SLACK, extra=None):
        return cls(name, float(predicted), float(measured), instance or {},
                   bool(measured <= predicted + tolerance), extra or {}, tolerance)

    def to_dict(self):
        out = asdict(self)
        out["margin"] = self.margin
        return out


# -- mixing ------------------------------------------------------------------

def t_mix(pi, max_steps=10**6) -> int:
    """Least n with max_i ||pi^n[i] - mu||_1 <= 2/e.

    Point masses suffice for the supremum over starting laws because the
    distance is convex in the start and pi^n acts affinely.
    """
    pi = check_stochastic(pi, tol=1e-9)
    if not is_primitive(pi):
        raise NotPrimitiveError("mixing time needs a primitive chain")
    mu = stationary_distribution(pi)
    p = pi.copy()
    for n in range(1, max_steps + 1):
        if np.abs(p - mu[None, :]).sum(axis=1).max() <= TMIX_THRESHOLD:
            return n
        p = p @ pi
    raise ValidationError(f"chain did not mix within {max_steps} steps")


# -- coupon collector ----------------------------------------------------------

def _rational(x):
    if isinstance(x, (int, Fraction)):
        return Fraction(x)
    return Fraction(float(x)).limit_denominator(10**9)


def _check_probs(q):
    q = np.asarray(q, dtype=float)
    if q.ndim != 1 or q.size == 0 or np.any(q <= 0):
        raise ValidationError("q must be a non-empty vector of positive weights")
    return q


def phi_exact(q) -> float:
    """Expected draws until every class is seen, by inclusion-exclusion.

    E = sum over proper subsets J of (-1)^(k-1-|J|) / (1 - Q_J).  Weights
    are normalized first.  Up to 16 classes the alternating sum runs in exact
    rational arithmetic (float inputs are read as the nearest fraction with
    denominator <= 1e9), so symmetric cases come out exact; beyond that it
    uses compensated float summation and is checked against Monte Carlo.
    """
    qf = _check_probs(q)
    k = qf.size
    if k > PHI_EXACT_MAX:
        raise ValidationError(
            f"inclusion-exclusion needs 2^{k} terms; use phi_bound for more than {PHI_EXACT_MAX} classes")
    if k <= PHI_RATIONAL_MAX:
        w = [_rational(x) for x in (q if not isinstance(q, np.ndarray) else q.tolist())]
        total_w = sum(w)
        w = [x / total_w for x in w]
        sub = [Fraction(0)]
        for x in w:
            sub += [s + x for s in sub]
        full = (1 << k) - 1
        acc = Fraction(0)
        for mask in range(full):
            term = 1 / (1 - sub[mask])
            acc += term if (k - 1 - bin(mask).count("1")) % 2 == 0 else -term
        return float(acc)
    qf = qf / qf.sum()
    sub = np.zeros(1)
    size = np.zeros(1, dtype=int)
    for x in qf:
        sub = np.concatenate([sub, sub + x])
        size = np.concatenate([size, size + 1])
    sub, size = sub[:-1], size[:-1]
    sign = np.where((k - 1 - size) % 2 == 0, 1.0, -1.0)
    val = math.fsum(sign / (1.0 - sub))
    if k >= PHI_CROSSCHECK_MIN:
        mc, se = phi_monte_carlo(qf, 20000, np.random.default_rng(0), return_se=True)
        if abs(mc - val) > 6 * se:
            warnings.warn(f"inclusion-exclusion value {val:.6g} disagrees with Monte Carlo "
                          f"{mc:.6g} +- {se:.2g}; the alternating sum lost precision", RuntimeWarning)
    return val


def phi_monte_carlo(q, trials, rng, return_se=False):
    """Mean number of i.i.d. draws from q until all classes appear."""
    q = _check_probs(q)
    q = q / q.sum()
    k = q.size
    full = (1 << k) - 1
    cum = np.cumsum(q)
    cum[-1] = 2.0
    seen = np.zeros(trials, dtype=np.int64)
    counts = np.zeros(trials, dtype=np.int64)
    active = np.arange(trials)
    while active.size:
        draws = np.searchsorted(cum, rng.random(active.size), side="right")
        seen[active] |= np.left_shift(1, draws)
        counts[active] += 1
        active = active[seen[active] != full]
    mean = float(counts.mean())
    if return_se:
        return mean, float(counts.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return mean


def harmonic(n: int) -> float:
    return math.fsum(1.0 / i for i in range(1, n + 1))


def phi_bound(d_prime: int, r) -> float:
    """r * H_{d'}: valid whenever every class holds at least d/r states."""
    if d_prime < 1:
        raise ValidationError("d' must be positive")
    return float(r) * harmonic(d_prime)


def r_of(sizes) -> float:
    """Smallest r with |S_i| >= d/r for all classes."""
    sizes = np.asarray(sizes, dtype=float)
    return float(sizes.sum() / sizes.min())


def runtime_prediction(t_mix_value, d_prime, phi) -> float:
    """Constant-free product t_mix * d' * phi for the expected cost per sample."""
    return float(t_mix_value) * d_prime * float(phi)


def runtime_report(pi_lumped, sizes, measured=None) -> BoundReport:
    sizes = np.asarray(sizes)
    q = sizes / sizes.sum()
    tm = t_mix(pi_lumped)
    phi = phi_exact(q) if q.size <= PHI_EXACT_MAX else phi_bound(q.size, r_of(sizes))
    pred = runtime_prediction(tm, q.size, phi)
    return BoundReport("runtime_prediction", pred, None if measured is None else float(measured),
                       {"d_prime": int(q.size), "d": int(sizes.sum())}, None,
                       {"t_mix": tm, "phi": phi})


def first_sample_cost_monte_carlo(q, pi, runs, rng) -> np.ndarray:
    """Measurements spent before the first emitted sample, simulated directly.

    Independent of the graph engine: draw successor maps column by column
    until the composed labelling is constant (depth c, label l), then draw the
    i.i.d. observation stream until every class has been seen c times (time
    T), then wait for a fresh observation of l.  Each observation up to and
    including the certifying one costs two measurements (the label and its
    successor), each later miss costs two, and the final hit costs one.
    """
    q = _check_probs(q)
    q = q / q.sum()
    pi = check_stochastic(pi, tol=1e-9)
    k = q.size
    pcum = np.cumsum(pi, axis=1)
    pcum[:, -1] = 2.0
    qcum = np.cumsum(q)
    qcum[-1] = 2.0
    out = np.empty(runs, dtype=np.int64)
    for r in range(runs):
        labels = np.arange(k)
        depth = 0
        while np.any(labels != labels[0]):
            succ = (pcum < rng.random(k)[:, None]).sum(axis=1)
            labels = labels[succ]
            depth += 1
        # the identity column is never checked, so a single class still costs one column
        depth = max(depth, 1)
        lab = int(labels[0])
        counts = np.zeros(k, dtype=np.int64)
        t = 0
        while counts.min() < depth:
            obs = np.searchsorted(qcum, rng.random(256), side="right")
            for x in obs:
                t += 1
                counts[x] += 1
                if counts.min() >= depth:
                    break
        wait = rng.geometric(q[lab])
        out[r] = 2 * t + 2 * (wait - 1) + 1
    return out


# -- lumping, stability, noise ------------------------------------------------------

def pinsker_lumping_bound(sd: SpectralDecomposition, cov: SpectralCovering, beta) -> BoundReport:
    """Trace distance between the Gibbs state and the covering-lumped output state.

    The lumped state is the Gibbs state of the Hamiltonian with each level
    moved to its covering center.  Passes when both the trace distance is at
    most sqrt(4 eps beta) and the relative entropy at most 2 beta eps.
    """
    if beta < 0:
        raise ValidationError("beta must be non-negative")
    rho = gibbs_state(sd, beta)
    rho_cov = gibbs_state(covered_decomposition(sd, cov), beta)
    dist = trace_distance(rho, rho_cov)
    rel = relative_entropy(rho, rho_cov)
    pred = math.sqrt(4 * cov.eps * beta)
    rel_bound = 2 * beta * cov.eps
    ok = dist <= pred + NUMERIC_SLACK and rel <= rel_bound + NUMERIC_SLACK
    return BoundReport("pinsker_lumping", pred, dist,
                       {"d": sd.dim, "d_prime": cov.size, "eps": cov.eps, "beta": float(beta)},
                       bool(ok), {"relative_entropy": rel, "relative_entropy_bound": rel_bound})


def stability_report(pi, pi_perturbed, sd=None, beta=None) -> BoundReport:
    """||mu - mu'||_1 against (kappa(pi) + 2) * ||pi - pi'||_{1->1}."""
    pi = check_stochastic(pi, tol=1e-9)
    pi_perturbed = check_stochastic(pi_perturbed, tol=1e-9)
    if not is_primitive(pi_perturbed):
        raise NotPrimitiveError("perturbed chain is not primitive")
    k = kappa(pi)
    eps = one_to_one_distance(pi, pi_perturbed)
    measured = float(np.abs(stationary_distribution(pi) - stationary_distribution(pi_perturbed)).sum())
    inst = {"n_states": int(pi.shape[0]), "eps": eps}
    if beta is not None:
        inst["beta"] = float(beta)
    return BoundReport.check("stability", (k + 2) * eps, measured, inst, extra={"kappa": k})


def faulty_pe_report(pi, confusion: ConfusionModel) -> BoundReport:
    """Exact output deviation caused by label noise, against the noisy-label bound.

    Certified labels follow the stationary law mu' of the label chain; the
    output class behind a label is resolved through the Bayes matrix, so the
    sampler outputs mu' Xi.  The figure for mu' Xi' is reported alongside.
    """
    pi = check_stochastic(pi, tol=1e-9)
    mu = stationary_distribution(pi)
    label_chain = confusion.label_chain(pi)
    if not is_primitive(label_chain):
        raise NotPrimitiveError("label chain is not primitive")
    mu_lab = stationary_distribution(label_chain)
    out = mu_lab @ confusion.xi_bwd
    measured = float(np.abs(mu - out).sum())
    k = kappa(pi)
    pred = faulty_pe_total_bound(confusion.xi, confusion.xi_forward, k)
    alt = float(np.abs(mu - mu_lab @ confusion.xi_fwd).sum())
    return BoundReport.check("faulty_pe", pred, measured,
                             {"n_classes": int(pi.shape[0]), "xi": confusion.xi,
                              "xi_forward": confusion.xi_forward},
                             extra={"kappa": k, "label_distribution_deviation": float(np.abs(mu - mu_lab).sum()),
                                    "forward_pushed_deviation": alt})


def empirical_tv(samples, reference):
    """Sum |p_hat - p| against ``reference`` with a 3-sigma multinomial radius.

    The radius is 3 * sum_i sqrt(p_i (1 - p_i) / N).
    """
    samples = np.asarray(samples, dtype=int)
    ref = np.asarray(reference, dtype=float)
    if samples.size == 0:
        raise ValidationError("no samples")
    if samples.min() < 0 or samples.max() >= ref.size:
        raise ValidationError("sample outside the reference support")
    n = samples.size
    freq = np.bincount(samples, minlength=ref.size) / n
    tv = float(np.abs(freq - ref).sum())
    radius = float(3 * np.sqrt(ref * (1 - ref) / n).sum())
    return tv, radius
