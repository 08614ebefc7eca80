"""End-to-end acceptance checks, one test per criterion.

Each test prints a PASS/FAIL line; the terminal summary repeats them all.
"""
import json
import time

import numpy as np
import pytest

from qcftp.analysis import (empirical_tv, faulty_pe_report, phi_bound, phi_exact, phi_monte_carlo,
                            pinsker_lumping_bound, r_of, stability_report)
from qcftp.cftp import Povm, build_oracle, classical_voter_cftp, quantum_voter_cftp
from qcftp.channels import (detailed_balance_classical, energy_partition, fundamental_matrix,
                            induced_transition_matrix, is_lumpable_chain, kappa, lump, metropolis_chain,
                            metropolis_channel, metropolis_lumped, one_to_one_distance,
                            stationary_distribution)
from qcftp.cli import main
from qcftp.phase_estimation import (ConfusionModel, PEConfig, assign_labels, confusion_forward, delta_matrix,
                                    misclassification_bound, pe_distribution, qubits_for_accuracy,
                                    symmetric_flip)
from qcftp.spectral import SpectralDecomposition, build_covering, from_spectrum, gibbs_lumped


def report(log, ok):
    print(f"criterion {log.number} {'PASS' if ok else 'FAIL'}: {log.title} ({'; '.join(log.details)})")


def band_check(samples, p):
    """Per-class 3-sigma multinomial check; returns (ok, max |freq - p|, max 3 sigma)."""
    n = len(samples)
    p = np.asarray(p)
    freq = np.bincount(samples, minlength=p.size) / n
    three = 3 * np.sqrt(p * (1 - p) / n)
    return bool(np.all(np.abs(freq - p) <= three)), float(np.abs(freq - p).max()), float(three.max())


def test_criterion_01_perfect_sampling(criterion):
    with criterion(1, "quantum voter CFTP matches the lumped Gibbs law") as log:
        sd = SpectralDecomposition.from_levels([0.0, 1.0, 2.0], [2, 1, 1])
        beta = 1.0
        channel, _ = metropolis_channel(sd, beta)
        chain = lump(induced_transition_matrix(channel, sd), energy_partition(sd))
        mu = gibbs_lumped(sd, beta)
        oracle = build_oracle(sd, chain, seed=20240601, povm=Povm.projective(sd))
        t0 = time.perf_counter()
        samples, stats = quantum_voter_cftp(oracle, 100_000)
        elapsed = time.perf_counter() - t0
        ok, dev, three = band_check(samples, mu)
        tv, radius = empirical_tv(samples, mu)
        log.note(f"max dev {dev:.4f} <= 3sigma {three:.4f}, tv {tv:.4f} <= {radius:.4f}, {elapsed:.1f}s")
        report(log, ok and tv <= radius and elapsed <= 60)
        assert ok and tv <= radius
        assert elapsed <= 60


def test_criterion_02_classical_baseline(criterion):
    with criterion(2, "classical voter CFTP on a 2-state chain") as log:
        pi = np.array([[0.75, 0.25], [0.5, 0.5]])
        mu = np.linalg.solve(np.array([[0.25, -0.5], [1.0, 1.0]]), [0.0, 1.0])  # (pi^T - I) row + normalization
        assert np.allclose(mu, [2 / 3, 1 / 3])
        rng = np.random.default_rng(7)
        samples = [classical_voter_cftp(pi, rng) for _ in range(200_000)]
        ok, dev, three = band_check(samples, mu)
        log.note(f"max dev {dev:.4f} <= 3sigma {three:.4f}")
        report(log, ok)
        assert ok


def test_criterion_03_lumping_exactness(criterion):
    with criterion(3, "Metropolis lumping, lumped stationary law and detailed balance") as log:
        rng = np.random.default_rng(3)
        worst = [0.0, 0.0, 0.0]
        for _ in range(10):
            n_levels = int(rng.integers(2, 6))
            mults = rng.integers(1, 4, size=n_levels)
            while mults.sum() > 12:
                mults[np.argmax(mults)] -= 1
            energies = np.sort(rng.choice(np.linspace(-2, 2, 81), size=n_levels, replace=False))
            beta = float(rng.uniform(0.1, 3.0))
            sd = SpectralDecomposition.from_levels(energies, mults)
            full = metropolis_chain(sd, beta)
            part = energy_partition(sd)
            assert is_lumpable_chain(full, part, tol=1e-12)
            lumped = lump(full, part, tol=1e-12)
            w = mults * np.exp(-beta * energies)
            ref = w / w.sum()
            mu = stationary_distribution(lumped)
            flow = ref[:, None] * lumped
            worst[0] = max(worst[0], np.abs(mu - ref).max())
            worst[1] = max(worst[1], np.abs(flow - flow.T).max())
            assert np.abs(mu - ref).max() <= 1e-10
            assert detailed_balance_classical(lumped, ref, tol=1e-10)
        log.note(f"stationary err {worst[0]:.1e}, balance err {worst[1]:.1e}")
        report(log, True)


def test_criterion_04_coupon_collector(criterion):
    with criterion(4, "coupon-collector formula and its upper bound") as log:
        assert phi_exact([0.5, 0.5]) == 3.0
        assert phi_exact([1 / 3, 1 / 3, 1 / 3]) == 5.5
        vectors = [[0.5, 0.5], [1 / 3] * 3, [0.2] * 5, [0.7, 0.2, 0.1], [0.4, 0.3, 0.15, 0.1, 0.05]]
        rng = np.random.default_rng(4)
        worst = 0.0
        for q in vectors:
            exact = phi_exact(q)
            mc = phi_monte_carlo(q, 10**6, rng)
            worst = max(worst, abs(mc / exact - 1))
            assert abs(mc / exact - 1) < 0.005
            r = 1 / min(q)
            assert exact <= phi_bound(len(q), r)
        sizes = np.array([6, 3, 2, 1])
        assert phi_exact(sizes) <= phi_bound(4, r_of(sizes))
        log.note(f"worst relative MC gap {worst:.4f}")
        report(log, True)


def test_criterion_05_pinsker(criterion):
    with criterion(5, "covering-lumped state obeys the Pinsker bounds") as log:
        rng = np.random.default_rng(5)
        margin = np.inf
        count = 0
        while count < 50:
            n = int(rng.integers(2, 7))
            energies = np.sort(rng.uniform(0, 2, size=n))
            mults = rng.integers(1, 3, size=n)
            sd = from_spectrum(energies, mults)
            eps = float(rng.uniform(0.01, 0.4))
            try:
                cov = build_covering(sd, eps)
            except ValueError:
                continue
            for beta in (0.1, 1.0, 5.0):
                rep = pinsker_lumping_bound(sd, cov, beta)
                assert rep.passed, rep
                margin = min(margin, rep.margin)
            count += 1
        log.note(f"150 reports, smallest margin {margin:.3e}")
        report(log, True)


def test_criterion_06_stability(criterion):
    with criterion(6, "stationary-law perturbation bound") as log:
        rng = np.random.default_rng(6)
        ratio = 0.0
        for _ in range(50):
            n = int(rng.integers(2, 6))
            pi = rng.random((n, n)) + 0.02
            pi /= pi.sum(axis=1, keepdims=True)
            target = float(rng.uniform(0.001, 0.05))
            direction = rng.normal(size=(n, n))
            direction -= direction.mean(axis=1, keepdims=True)
            step = target / np.abs(direction).sum(axis=1).max()
            pert = pi + step * direction
            assert pert.min() >= 0
            assert one_to_one_distance(pi, pert) <= 0.05 + 1e-12
            rep = stability_report(pi, pert)
            assert rep.passed, rep
            ratio = max(ratio, rep.measured / rep.predicted)
        log.note(f"largest measured/predicted {ratio:.3f}")
        report(log, True)


def test_criterion_07_faulty_pe(criterion):
    with criterion(7, "label-noise bound and Bayes confusion matrix") as log:
        instances = [SpectralDecomposition.from_levels([0.0, 1.0], [2, 1]),
                     SpectralDecomposition.from_levels([0.0, 0.5, 1.5], [1, 2, 1])]
        worst = 0.0
        for sd in instances:
            pi = metropolis_lumped(sd, 1.0)
            for eta in (0.001, 0.01, 0.05):
                model = ConfusionModel.from_forward(symmetric_flip(sd.n_levels, eta), sd.multiplicities)
                rep = faulty_pe_report(pi, model)
                assert rep.passed, rep
                worst = max(worst, rep.measured / rep.predicted)
        # Bayes matrix from a phase-estimation model against conditional frequencies
        sd = from_spectrum([0.0, 0.37, 1.0], [2, 1, 1])
        cov = build_covering(sd, 0.1)
        cfg = PEConfig.fit(sd, 4, 0.2)
        model = ConfusionModel.from_pe(sd, cov, cfg)
        labels_of = assign_labels(cov, cfg)
        rng = np.random.default_rng(77)
        shots = 10**6
        sizes = cov.class_sizes(sd)
        true = rng.choice(3, size=shots, p=sizes / sizes.sum())
        label = np.empty(shots, dtype=int)
        for c in range(3):
            sel = true == c
            p = pe_distribution(float(cfg.phase(sd.energies[c])), cfg.t)
            label[sel] = labels_of[rng.choice(p.size, size=int(sel.sum()), p=p)]
        for lab in range(3):
            got = true[label == lab]
            freq = np.bincount(got, minlength=3) / got.size
            sigma = np.sqrt(model.xi_bwd[lab] * (1 - model.xi_bwd[lab]) / got.size)
            assert np.all(np.abs(freq - model.xi_bwd[lab]) <= 3 * sigma + 1e-12)
        log.note(f"largest measured/predicted {worst:.3f}; Bayes matrix within 3 sigma")
        report(log, True)


def test_criterion_08_phase_estimation(criterion):
    with criterion(8, "phase-estimation outcome model") as log:
        grid = np.linspace(0, 1, 1000, endpoint=False)
        worst = 0.0
        for t in range(1, 13):
            for ph in grid:
                worst = max(worst, abs(pe_distribution(ph, t).sum() - 1))
            for m in range(0, 1 << t, max(1, (1 << t) // 64)):
                p = pe_distribution(m / (1 << t), t)
                assert p[m] == pytest.approx(1.0, abs=1e-12)
        assert worst <= 1e-12
        for n_bits, delta in [(4, 0.1), (6, 0.05)]:
            t = qubits_for_accuracy(n_bits, delta)
            n = 1 << t
            m = np.arange(n)
            for ph in grid:
                d = np.abs(m / n - ph)
                d = np.minimum(d, 1 - d)
                assert pe_distribution(ph, t)[d < 2.0 ** -n_bits].sum() >= 1 - delta
        for energies, mults, eps, t, margin in [([0.0, 0.04, 0.5, 1.0], [2, 1, 1, 3], 0.2, 8, 1 / 3),
                                                ([0.0, 0.37, 0.5, 1.0], [1, 1, 1, 1], 0.05, 8, 0.1),
                                                ([0.0, 0.123, 0.571, 0.91], [1, 2, 1, 1], 0.06, 7, 0.1)]:
            sd = from_spectrum(energies, mults)
            cov = build_covering(sd, eps)
            cfg = PEConfig.fit(sd, t, margin)
            xi = confusion_forward(sd, cov, cfg)
            delta = delta_matrix(sd, cov, cfg)
            for i in range(cov.size):
                for j in range(cov.size):
                    if i != j:
                        assert xi[i, j] <= misclassification_bound(i, j, eps, cfg, delta)
        log.note(f"max |sum - 1| = {worst:.1e}")
        report(log, True)


def _power_series_fundamental(pi, v, tol=1e-15):
    # on zero-sum vectors the fundamental matrix is sum_n (pi^T)^n
    total = v.copy()
    term = v.copy()
    for _ in range(100000):
        term = pi.T @ term
        total += term
        if np.abs(term).sum() < tol:
            break
    return total


def test_criterion_09_kappa(criterion):
    with criterion(9, "stability constant oracle") as log:
        mu = np.array([0.1, 0.2, 0.3, 0.4])
        assert kappa(np.tile(mu, (4, 1))) == 1.0
        rng = np.random.default_rng(9)
        worst = 0.0
        for _ in range(20):
            n = int(rng.integers(2, 6))
            pi = rng.random((n, n)) ** 3 + 0.01
            pi /= pi.sum(axis=1, keepdims=True)
            k = kappa(pi)
            m = fundamental_matrix(pi)
            dirs = rng.normal(size=(10_000, n))
            dirs -= dirs.mean(axis=1, keepdims=True)
            search = (np.abs(dirs @ m.T).sum(axis=1) / np.abs(dirs).sum(axis=1)).max()
            assert k >= search - 1e-12
            best = 0.0
            eye = np.eye(n)
            for i in range(n):
                for j in range(i + 1, n):
                    v = (eye[i] - eye[j]) / 2
                    best = max(best, np.abs(_power_series_fundamental(pi, v)).sum())
            assert abs(best - k) <= 1e-9
            worst = max(worst, abs(best - k))
        log.note(f"vertex optimum vs power series max gap {worst:.1e}")
        report(log, True)


def _mean_cost(sd, beta, runs, seed0):
    pi = metropolis_lumped(sd, beta)
    return float(np.mean([quantum_voter_cftp(build_oracle(sd, pi, seed=(seed0, s)), 1)[1].measurements
                          for s in range(runs)]))


def test_criterion_10_runtime_scaling(criterion):
    with criterion(10, "measurement cost: flat for degenerate family, superlinear otherwise") as log:
        flat = [_mean_cost(from_spectrum([0.0, 1.0], [d // 2, d // 2]), 1.0, 2000, d) for d in (4, 16, 64)]
        ratio = max(flat) / min(flat)
        grow = [_mean_cost(SpectralDecomposition.from_levels(np.linspace(0, 1, d)), 1.0, 600, 1000 + d)
                for d in (3, 5, 8)]
        per_d = [c / d for c, d in zip(grow, (3, 5, 8))]
        log.note(f"degenerate means {[round(x, 1) for x in flat]} ratio {ratio:.3f}; "
                 f"non-degenerate cost/d {[round(x, 1) for x in per_d]}")
        ok = ratio <= 1.25 and per_d[0] < per_d[1] < per_d[2]
        report(log, ok)
        assert ratio <= 1.25
        assert per_d[0] < per_d[1] < per_d[2]


def test_criterion_11_determinism_and_memory(criterion, tmp_path):
    with criterion(11, "byte-identical outputs and pruned engine equivalence") as log:
        manifest = {
            "hamiltonian": {"spectrum": [{"energy": 0.0, "multiplicity": 2}, {"energy": 1.0},
                                         {"energy": 2.0}]},
            "channel": {"metropolis": {}}, "noise": {"flip": 0.02}, "beta": 1.0,
            "samples": 500, "seed": 123456789,
        }
        path = tmp_path / "run.json"
        path.write_text(json.dumps(manifest, indent=2))
        blobs = []
        for k in range(2):
            out = tmp_path / f"out{k}.json"
            assert main(["sample", "--manifest", str(path), "--out", str(out)]) == 0
            blobs.append(out.read_bytes())
        assert blobs[0] == blobs[1]
        sd = SpectralDecomposition.from_levels([0.0, 0.4, 1.0, 1.7], [1, 2, 1, 1])
        pi = metropolis_lumped(sd, 0.8)
        model = ConfusionModel.from_forward(symmetric_flip(4, 0.01), sd.multiplicities)
        a, sa = quantum_voter_cftp(build_oracle(sd, pi, model, seed=99), 5000)
        b, sb = quantum_voter_cftp(build_oracle(sd, pi, model, seed=99), 5000, prune=True)
        assert a == b and sa.sample_depths == sb.sample_depths
        log.note(f"columns held {sa.max_columns_held} unpruned vs {sb.max_columns_held} pruned")
        report(log, True)
