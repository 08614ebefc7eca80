"""Voter coupling-from-the-past engines.

``classical_voter_cftp`` runs the column-by-column classical procedure on a
chain whose successor we can sample from any state.  ``quantum_voter_cftp``
drives the same label-propagation graph from a measurement oracle that can
only hand out a transition for whichever energy class the maximally mixed
state happens to collapse into.

Column depths are stored as non-negative integers: depth c is the column at
time -c, so depth 0 is the identity-labelled origin.
"""
from __future__ import annotations

import time
from bisect import bisect_right
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import CftpAbort, ValidationError
from .spectral import SpectralDecomposition

DEFAULT_DEPTH_CAP = 10**6
DEFAULT_BUDGET = 10**9


def _cumulative(rows):
    out = []
    for row in np.atleast_2d(np.asarray(rows, dtype=float)):
        c = np.cumsum(row)
        c /= c[-1]
        c[-1] = 2.0  # uniforms are < 1, so the last bin always catches rounding slack
        out.append(c.tolist())
    return out


class _Uniforms:
    """Block-buffered stream of U[0, 1) draws from one generator."""

    def __init__(self, gen: np.random.Generator, block=4096):
        self.gen = gen
        self.block = block
        self.buf = []
        self.pos = 0

    def __call__(self) -> float:
        if self.pos == len(self.buf):
            self.buf = self.gen.random(self.block).tolist()
            self.pos = 0
        u = self.buf[self.pos]
        self.pos += 1
        return u


# -- classical -----------------------------------------------------------------

def _matrix_successor(pi):
    pi = np.asarray(pi, dtype=float)
    cum = np.cumsum(pi, axis=1)
    cum[:, -1] = 2.0

    def step(rng):
        u = rng.random(pi.shape[0])
        return (cum < u[:, None]).sum(axis=1)

    return pi.shape[0], step


def classical_voter_cftp(successor, rng, n_states=None, depth_cap=DEFAULT_DEPTH_CAP,
                         return_depth=False):
    """One exact draw from the stationary law of a chain, by voter CFTP.

    ``successor`` is either a row-stochastic matrix or a callable
    ``successor(i, rng) -> j`` (then ``n_states`` is required).  Each round
    draws one successor per state for a fresh, older column and copies labels
    through it; the common label of the first constant column is returned.
    """
    if callable(successor):
        if n_states is None:
            raise ValidationError("n_states is required with a callable successor")

        def step(r):
            return np.array([successor(i, r) for i in range(n_states)])
    else:
        n_states, step = _matrix_successor(successor)
    labels = np.arange(n_states)
    depth = 0
    while np.any(labels != labels[0]):
        if depth >= depth_cap:
            raise CftpAbort(f"no coalescence within {depth_cap} columns",
                            stats={"columns": depth, "distinct_labels": int(np.unique(labels).size)})
        labels = labels[step(rng)]
        depth += 1
    return (int(labels[0]), depth) if return_depth else int(labels[0])


# -- measurement model ---------------------------------------------------------

class Povm:
    """Positive operators summing to the identity."""

    def __init__(self, elements, tol=1e-9):
        els = [np.asarray(f, dtype=complex) for f in elements]
        if not els:
            raise ValidationError("POVM needs at least one element")
        d = els[0].shape[0]
        for f in els:
            if f.shape != (d, d) or np.max(np.abs(f - f.conj().T)) > tol:
                raise ValidationError("POVM elements must be Hermitian d x d matrices")
            if np.linalg.eigvalsh(0.5 * (f + f.conj().T)).min() < -1e-10:
                raise ValidationError("POVM element is not positive semidefinite")
        if np.max(np.abs(sum(els) - np.eye(d))) > tol:
            raise ValidationError("POVM elements do not sum to the identity")
        self.elements = els

    @classmethod
    def projective(cls, sd: SpectralDecomposition):
        return cls(sd.projectors)

    def class_probabilities(self, sd: SpectralDecomposition) -> np.ndarray:
        """probs[j, m] = tr(F_m P_j) / |S_j|: outcome law on the class-j state."""
        out = np.array([[np.real(np.trace(f @ p)) / m for f in self.elements]
                        for p, m in zip(sd.projectors, sd.multiplicities)])
        out = np.clip(out, 0.0, None)
        return out / out.sum(axis=1, keepdims=True)


def povm_measure(j, povm: Povm, sd: SpectralDecomposition, rng) -> int:
    p = povm.class_probabilities(sd)[j]
    return int(rng.choice(p.size, p=p))


class MeasurementOracle:
    """Simulated quantum side of the sampler.

    Ideal mode emits true energy classes.  Noisy mode hides the true class
    behind the forward confusion matrix Xi' (true -> label); a successor call
    first resolves the true class behind the given label through the Bayes
    matrix Xi.  Physics draws and label-noise draws come from separate
    streams, so identity confusion matrices reproduce ideal-mode traces.
    """

    def __init__(self, q, chain, confusion=None, seed=None, povm_probs=None):
        q = np.asarray(q, dtype=float)
        chain = np.asarray(chain, dtype=float)
        if chain.shape != (q.size, q.size):
            raise ValidationError("chain and initial law disagree on the number of classes")
        self.n_classes = q.size
        self.q = q / q.sum()
        self.chain = chain
        self.confusion = confusion
        if not isinstance(seed, np.random.SeedSequence):
            seed = np.random.SeedSequence(seed)
        phys, noise = seed.spawn(2)
        self._u = _Uniforms(np.random.default_rng(phys))
        self._v = _Uniforms(np.random.default_rng(noise))
        self._q_cum = _cumulative(self.q)[0]
        self._pi_cum = _cumulative(chain)
        if confusion is not None:
            self._fwd_cum = _cumulative(confusion.xi_fwd)
            self._bwd_cum = _cumulative(confusion.xi_bwd)
        self._povm_cum = None if povm_probs is None else _cumulative(povm_probs)
        self._true = None

    def _emit(self, true):
        self._true = true
        if self.confusion is None:
            return true
        return bisect_right(self._fwd_cum[true], self._v())

    def sample_initial(self) -> int:
        return self._emit(bisect_right(self._q_cum, self._u()))

    def sample_successor(self, label: int) -> int:
        true = label
        if self.confusion is not None:
            true = bisect_right(self._bwd_cum[label], self._v())
        return self._emit(bisect_right(self._pi_cum[true], self._u()))

    def measure_povm(self) -> int:
        """Measure the POVM on the state left by the most recent phase estimation.

        Without a POVM this reads off the true class of that state.
        """
        if self._povm_cum is None:
            return self._true
        return bisect_right(self._povm_cum[self._true], self._u())


def build_oracle(sd: SpectralDecomposition, chain, confusion=None, seed=None, povm=None):
    """Oracle over the levels of ``sd``: initial law |S_i|/d, successors from ``chain``."""
    q = sd.multiplicities / sd.dim
    probs = None if povm is None else povm.class_probabilities(sd)
    return MeasurementOracle(q, chain, confusion, seed, probs)


# -- label graph -----------------------------------------------------------------

@dataclass
class RunStats:
    measurements: int = 0
    channel_uses: int = 0
    iterations: int = 0
    columns_completed: int = 0
    certifications: int = 0
    max_depth: int = 0
    max_columns_held: int = 0
    sample_depths: list = field(default_factory=list)
    wall_time: float = 0.0

    def as_dict(self, timing=True):
        out = {
            "measurements": self.measurements,
            "channel_uses": self.channel_uses,
            "iterations": self.iterations,
            "columns_completed": self.columns_completed,
            "certifications": self.certifications,
            "max_depth": self.max_depth,
            "max_columns_held": self.max_columns_held,
        }
        if timing:
            out["wall_time"] = self.wall_time
        return out


class CftpGraph:
    """Label-propagation graph over depth x classes.

    Labels use the alphabet {0, 1, ..., k}: 0 is "unlabelled" and class c
    carries label c + 1.  Each state's next free vertex is tracked by a
    frontier pointer, so a column is complete exactly when every frontier
    has moved past it.  With ``prune`` the graph keeps only the deepest
    complete column and the columns below it, which is all later steps read.
    """

    def __init__(self, n_classes: int, depth_cap=DEFAULT_DEPTH_CAP, prune=False):
        self.k = n_classes
        self.depth_cap = depth_cap
        self.prune = prune
        self.columns_completed = 0
        self.max_depth = 0
        self.max_columns_held = 1
        self._reset()

    def _reset(self):
        k = self.k
        self.base = 0  # depth of self.labels[0]
        self.labels = [list(range(1, k + 1))]
        self.succ = [[-1] * k]
        self.preds = [[[] for _ in range(k)]]
        self.zeros = [0]
        self.frontier = [1] * k
        self.complete = 0  # deepest complete depth

    def column(self, depth):
        """Labels at ``depth`` (None if pruned away)."""
        idx = depth - self.base
        if idx < 0:
            return None
        if idx >= len(self.labels):
            return [0] * self.k
        return list(self.labels[idx])

    def edge(self, depth, state):
        idx = depth - self.base
        if idx < 0 or idx >= len(self.succ):
            return -1
        return self.succ[idx][state]

    @property
    def depth(self):
        return self.base + len(self.labels) - 1

    def _grow(self, idx):
        k = self.k
        while len(self.labels) <= idx:
            self.labels.append([0] * k)
            self.succ.append([-1] * k)
            self.preds.append([[] for _ in range(k)])
            self.zeros.append(k)
        self.max_columns_held = max(self.max_columns_held, len(self.labels))

    def add_transition(self, i: int, j: int):
        """Record an observed move i -> j at state i's frontier.

        Returns ``(class, depth)`` if a column became constant, else None.
        """
        c = self.frontier[i]
        if c > self.depth_cap:
            raise CftpAbort(f"depth cap {self.depth_cap} exceeded")
        self.frontier[i] = c + 1
        idx = c - self.base
        self._grow(idx)
        self.max_depth = max(self.max_depth, c)
        self.succ[idx][i] = j
        self.preds[idx - 1][j].append(i)
        lab = self.labels[idx - 1][j]
        if lab:
            self._propagate(idx, i, lab)
        if c == self.complete + 1:
            return self._advance_complete()
        return None

    def _propagate(self, idx, i, lab):
        labels, preds, zeros = self.labels, self.preds, self.zeros
        stack = [(idx, i)]
        while stack:
            col, s = stack.pop()
            labels[col][s] = lab
            zeros[col] -= 1
            if col + 1 < len(labels):
                for p in preds[col][s]:
                    stack.append((col + 1, p))

    def _advance_complete(self):
        new = min(self.frontier) - 1
        while self.complete < new:
            self.complete += 1
            self.columns_completed += 1
            col = self.labels[self.complete - self.base]
            first = col[0]
            if all(x == first for x in col):
                depth = self.complete
                self._reset()
                return first - 1, depth
        if self.prune and self.complete > self.base:
            cut = self.complete - self.base
            del self.labels[:cut], self.succ[:cut], self.preds[:cut], self.zeros[:cut]
            self.base = self.complete
        return None


def quantum_voter_cftp(oracle: MeasurementOracle, n: int, depth_cap=DEFAULT_DEPTH_CAP,
                       budget=DEFAULT_BUDGET, reuse_successor=False, prune=False,
                       graph: CftpGraph | None = None, on_certify=None, progress=None):
    """Draw ``n`` perfect samples through the label graph.

    Each round prepares the maximally mixed state and reads a label i.  If a
    certified-but-unused sample with label i is pending, the POVM is measured
    on that state and the sample is emitted.  Otherwise the channel is
    applied, the next label j is read and the move i -> j is added to the
    graph; a constant column certifies its label.

    Pending certificates form a multiset: each is consumed by exactly one
    measurement.  Returns ``(samples, stats)``.
    """
    if n < 0:
        raise ValidationError("sample count must be non-negative")
    k = oracle.n_classes
    g = graph if graph is not None else CftpGraph(k, depth_cap=depth_cap, prune=prune)
    pending = [deque() for _ in range(k)]
    stats = RunStats()
    samples = []
    t0 = time.perf_counter()
    initial = oracle.sample_initial
    successor = oracle.sample_successor
    add = g.add_transition

    def consume(label):
        samples.append(oracle.measure_povm())
        stats.sample_depths.append(pending[label].popleft())
        if progress is not None:
            progress(len(samples))

    try:
        while len(samples) < n:
            if stats.measurements >= budget:
                raise CftpAbort(f"measurement budget {budget} exhausted")
            stats.iterations += 1
            stats.measurements += 1
            i = initial()
            if pending[i]:
                consume(i)
                continue
            j = successor(i)
            stats.measurements += 1
            stats.channel_uses += 1
            cert = add(i, j)
            if cert is not None:
                stats.certifications += 1
                pending[cert[0]].append(cert[1])
                if on_certify is not None:
                    on_certify(g, cert)
            if reuse_successor and pending[j] and len(samples) < n:
                consume(j)
    except CftpAbort as exc:
        _finish(stats, g, t0)
        exc.stats = stats
        raise
    _finish(stats, g, t0)
    return samples, stats


def _finish(stats, g, t0):
    stats.columns_completed = g.columns_completed
    stats.max_depth = g.max_depth
    stats.max_columns_held = g.max_columns_held
    stats.wall_time = time.perf_counter() - t0
