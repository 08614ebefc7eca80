"""Command-line front end: ``qcftp {sample,classical,validate,analyze} --manifest FILE``.

Exit codes: 0 success, 1 invalid input or failed validation, 2 sampler abort.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis
from .cftp import (DEFAULT_BUDGET, DEFAULT_DEPTH_CAP, Povm, RunStats, build_oracle, classical_voter_cftp,
                   quantum_voter_cftp)
from .channels import (QuantumChannel, check_stochastic, classical_lift, detailed_balance_classical,
                       detailed_balance_quantum, energy_partition, induced_transition_matrix,
                       is_eigenbasis_preserving, is_lumpable_chain, is_primitive, lump,
                       metropolis_lumped, stationary_distribution)
from .errors import CftpAbort, CoveringInfeasible, DeadLabelError, NotLumpableError, NotPrimitiveError, \
    ValidationError
from .phase_estimation import ConfusionModel, PEConfig, symmetric_flip
from .spectral import (SpectralDecomposition, build_covering, covered_decomposition, gibbs_lumped,
                       gibbs_state, parse_hamiltonian)

EXIT_OK, EXIT_INVALID, EXIT_ABORT = 0, 1, 2
REPORTS = ("pinsker", "stability", "faulty_pe", "runtime", "phi")


class ManifestError(ValidationError):
    def __init__(self, key, message):
        super().__init__(message)
        self.key = key


@dataclass
class Manifest:
    path: Path
    text: str
    data: dict
    sha256: str
    seed: int = 0
    beta: float = 0.0
    samples: int = 0
    depth_cap: int = DEFAULT_DEPTH_CAP
    budget: int = DEFAULT_BUDGET
    extra: dict = field(default_factory=dict)

    def line_of(self, key):
        if key is None:
            return 1
        m = re.search(r'"%s"\s*:' % re.escape(key), self.text)
        return self.text.count("\n", 0, m.start()) + 1 if m else 1


def load_manifest(path) -> Manifest:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ManifestError(None, f"cannot read manifest: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        err = ManifestError(None, f"invalid JSON: {exc.msg}")
        err.lineno = exc.lineno
        raise err from None
    if not isinstance(data, dict):
        raise ManifestError(None, "manifest must be a JSON object")
    m = Manifest(path, text, data, hashlib.sha256(text.encode()).hexdigest())
    if "seed" not in data:
        raise ManifestError(None, "manifest needs an explicit integer 'seed'")
    m.seed = _int(data, "seed", minimum=0)
    m.beta = float(data.get("beta", 0.0))
    if not np.isfinite(m.beta) or m.beta < 0:
        raise ManifestError("beta", "beta must be a finite non-negative number")
    m.samples = _int(data, "samples", default=0, minimum=0)
    m.depth_cap = _int(data, "depth_cap", default=DEFAULT_DEPTH_CAP, minimum=1)
    m.budget = _int(data, "budget", default=DEFAULT_BUDGET, minimum=1)
    return m


def _int(data, key, default=None, minimum=None):
    if key not in data:
        if default is None:
            raise ManifestError(None, f"missing '{key}'")
        return default
    val = data[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)) or int(val) != val:
        raise ManifestError(key, f"'{key}' must be an integer")
    val = int(val)
    if minimum is not None and val < minimum:
        raise ManifestError(key, f"'{key}' must be >= {minimum}")
    return val


def _matrix(obj, key):
    try:
        if isinstance(obj, dict):
            re_ = np.asarray(obj["re"], dtype=float)
            im = np.asarray(obj.get("im", np.zeros_like(re_)), dtype=float)
            return re_ + 1j * im
        return np.asarray(obj, dtype=float)
    except (KeyError, TypeError, ValueError):
        raise ManifestError(key, f"'{key}' holds a malformed matrix") from None


# -- building the physical setup ---------------------------------------------------

@dataclass
class Setup:
    sd: SpectralDecomposition  # levels the sampler works on (covered if a covering is used)
    sd_true: SpectralDecomposition
    chain: np.ndarray  # lumped chain over classes
    channel: QuantumChannel | None
    confusion: ConfusionModel | None
    povm: Povm | None
    covering: object = None


def _hamiltonian(m: Manifest):
    spec = m.data.get("hamiltonian")
    if spec is None:
        raise ManifestError(None, "missing 'hamiltonian'")
    if isinstance(spec, str):
        p = (m.path.parent / spec)
        if not p.exists():
            raise ManifestError("hamiltonian", f"referenced file {spec} does not exist")
        try:
            spec = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ManifestError("hamiltonian", f"{spec}: invalid JSON: {exc.msg}") from None
    try:
        return parse_hamiltonian(spec)
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError("hamiltonian", str(exc) or "malformed Hamiltonian") from None


def _covering(m: Manifest, sd):
    if "covering_eps" not in m.data:
        return None
    eps = m.data["covering_eps"]
    try:
        return build_covering(sd, float(eps))
    except (CoveringInfeasible, ValidationError, TypeError, ValueError) as exc:
        raise ManifestError("covering_eps", str(exc)) from None


def _state_chain(level_chain, sd):
    # spread each level-to-level probability evenly over the target level's states
    lv = sd.level_of_state
    return level_chain[np.ix_(lv, lv)] / sd.multiplicities[lv][None, :]


def _channel(m: Manifest, sd):
    """Returns (channel or None, lumped chain over sd's levels)."""
    spec = m.data.get("channel", {"metropolis": {}})
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ManifestError("channel", "channel must name exactly one of metropolis, stochastic, kraus")
    kind, body = next(iter(spec.items()))
    if kind == "metropolis":
        chain = metropolis_lumped(sd, m.beta)
        return classical_lift(_state_chain(chain, sd), sd.basis), chain
    if kind == "stochastic":
        pi = _matrix(body, "channel").real
        try:
            check_stochastic(pi, tol=1e-9)
        except ValidationError as exc:
            raise ManifestError("channel", str(exc)) from None
        if pi.shape[0] == sd.n_levels:
            return classical_lift(_state_chain(pi, sd), sd.basis), pi
        if pi.shape[0] == sd.dim:
            try:
                return classical_lift(pi, sd.basis), lump(pi, energy_partition(sd))
            except NotLumpableError as exc:
                raise ManifestError("channel", str(exc)) from None
        raise ManifestError("channel", f"stochastic matrix must be {sd.n_levels}x{sd.n_levels} or {sd.dim}x{sd.dim}")
    if kind == "kraus":
        if not isinstance(body, list) or not body:
            raise ManifestError("channel", "kraus needs a non-empty list of matrices")
        ks = [_matrix(k, "channel") for k in body]
        if any(k.shape != (sd.dim, sd.dim) for k in ks):
            raise ManifestError("channel", f"Kraus operators must be {sd.dim}x{sd.dim}")
        ch = QuantumChannel.from_kraus(ks)
        if not ch.is_trace_preserving():
            raise ManifestError("channel", "Kraus operators are not trace preserving")
        pi = induced_transition_matrix(ch, sd)
        try:
            return ch, lump(pi, energy_partition(sd))
        except NotLumpableError as exc:
            raise ManifestError("channel", str(exc)) from None
    raise ManifestError("channel", f"unknown channel kind '{kind}'")


def _confusion(m: Manifest, sd_true, sd, cov):
    spec = m.data.get("noise", {"ideal": True})
    if not isinstance(spec, dict):
        raise ManifestError("noise", "noise must be an object")
    sizes = sd.multiplicities
    if spec.get("ideal"):
        return None
    if "flip" in spec:
        eta = float(spec["flip"])
        if not 0 <= eta < 1:
            raise ManifestError("noise", "flip probability must lie in [0, 1)")
        return ConfusionModel.from_forward(symmetric_flip(sd.n_levels, eta), sizes)
    if "pe" in spec:
        pe = spec["pe"]
        try:
            cfg = PEConfig.fit(sd_true, int(pe["t"]), float(pe.get("margin", 0.1)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError("noise", f"bad phase-estimation settings: {exc}") from None
        if cov is None:
            gaps = np.diff(sd_true.energies)
            eps = 0.4999 * gaps.min() if gaps.size else 1.0
            cov = build_covering(sd_true, eps)
        try:
            return ConfusionModel.from_pe(sd_true, cov, cfg)
        except DeadLabelError as exc:
            raise ManifestError("noise", f"{exc}; increase t") from None
    raise ManifestError("noise", "noise must be {\"ideal\": true}, {\"flip\": eta} or {\"pe\": {...}}")


def _povm(m: Manifest, sd):
    spec = m.data.get("povm")
    if spec is None or spec == "projective":
        return None
    if not isinstance(spec, list):
        raise ManifestError("povm", "povm must be \"projective\" or a list of matrices")
    try:
        return Povm([_matrix(f, "povm") for f in spec])
    except ValidationError as exc:
        raise ManifestError("povm", str(exc)) from None


def build_setup(m: Manifest) -> Setup:
    sd_true = _hamiltonian(m)
    cov = _covering(m, sd_true)
    sd = sd_true if cov is None else covered_decomposition(sd_true, cov)
    channel, chain = _channel(m, sd)
    if not is_primitive(chain):
        raise ManifestError("channel", "the lumped chain is not primitive (periodic or reducible)")
    return Setup(sd, sd_true, chain, channel, _confusion(m, sd_true, sd, cov), _povm(m, sd), cov)


# -- workers ---------------------------------------------------------------------

def _split(n, workers):
    return [n // workers + (1 if w < n % workers else 0) for w in range(workers)]


def _worker_seed(seed, w):
    return np.random.SeedSequence([seed, w])


def _sample_worker(args):
    setup, seed, w, n, depth_cap, budget, progress = args
    oracle = build_oracle(setup.sd, setup.chain, setup.confusion, _worker_seed(seed, w), setup.povm)
    hook = None
    if progress:
        step = max(1, n // 10)

        def hook(done):
            if done % step == 0:
                print(f"worker {w}: {done}/{n} samples", file=sys.stderr)
    try:
        samples, stats = quantum_voter_cftp(oracle, n, depth_cap=depth_cap, budget=budget, progress=hook)
    except CftpAbort as exc:
        return w, None, exc.stats, str(exc)
    return w, samples, stats, None


def _classical_worker(args):
    chain, seed, w, n, depth_cap = args
    rng = np.random.default_rng(_worker_seed(seed, w))
    out, depths = [], []
    for _ in range(n):
        try:
            s, dpt = classical_voter_cftp(chain, rng, depth_cap=depth_cap, return_depth=True)
        except CftpAbort as exc:
            return w, out, depths, str(exc)
        out.append(s)
        depths.append(dpt)
    return w, out, depths, None


def _run_pool(fn, jobs, workers):
    if workers == 1:
        return [fn(jobs[0])]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return sorted(pool.map(fn, jobs), key=lambda r: r[0])


def _merge_stats(all_stats):
    total = RunStats()
    for s in all_stats:
        for name in ("measurements", "channel_uses", "iterations", "columns_completed", "certifications"):
            setattr(total, name, getattr(total, name) + getattr(s, name))
        total.max_depth = max(total.max_depth, s.max_depth)
        total.max_columns_held = max(total.max_columns_held, s.max_columns_held)
        total.sample_depths.extend(s.sample_depths)
        total.wall_time += s.wall_time
    return total


# -- output ------------------------------------------------------------------------

def _provenance(m: Manifest, command):
    return {"command": command, "manifest": m.path.name, "manifest_sha256": m.sha256, "seed": m.seed}


def _emit(record, out):
    text = json.dumps(record, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _emit_csv(rows, header, args):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    if args.csv == "-" or (args.csv is True and not args.out):
        sys.stdout.write(buf.getvalue())
        return
    path = Path(args.out).with_suffix(".csv") if args.csv is True else Path(args.csv)
    path.write_text(buf.getvalue())


# -- commands ------------------------------------------------------------------------

def cmd_sample(m: Manifest, args) -> int:
    setup = build_setup(m)
    workers = args.workers
    jobs = [(setup, m.seed, w, n, m.depth_cap, m.budget, args.progress)
            for w, n in enumerate(_split(m.samples, workers))]
    results = _run_pool(_sample_worker, jobs, workers)
    samples, stats, errors, owners = [], [], [], []
    for w, s, st, err in results:
        stats.append(st)
        if err:
            errors.append(f"worker {w}: {err}")
        else:
            samples.extend(s)
            owners.extend([w] * len(s))
    total = _merge_stats(stats)
    record = _provenance(m, "sample")
    record.update({
        "class_energies": setup.sd.energies.tolist(),
        "class_sizes": setup.sd.multiplicities.tolist(),
        "stats": total.as_dict(timing=args.timing),
        "workers": workers,
    })
    if errors:
        record["aborted"] = errors
        _emit(record, args.out)
        for e in errors:
            print(f"{m.path}: abort: {e}", file=sys.stderr)
        return EXIT_ABORT
    record["samples"] = [int(x) for x in samples]
    if setup.povm is None:
        record["reference"] = stationary_distribution(setup.chain).tolist()
    _emit(record, args.out)
    if args.csv:
        rows = [(i, o, s, d) for i, (o, s, d) in enumerate(zip(owners, samples, total.sample_depths))]
        _emit_csv(rows, ["index", "worker", "sample", "depth"], args)
    return EXIT_OK


def _classical_chain(m: Manifest):
    spec = m.data.get("chain")
    key = "chain"
    if spec is None and isinstance(m.data.get("channel"), dict) and "stochastic" in m.data["channel"]:
        spec, key = m.data["channel"]["stochastic"], "channel"
    if spec is None:
        raise ManifestError(None, "classical sampling needs a 'chain' stochastic matrix")
    pi = _matrix(spec, key).real
    try:
        return check_stochastic(pi, tol=1e-9)
    except ValidationError as exc:
        raise ManifestError(key, str(exc)) from None


def cmd_classical(m: Manifest, args) -> int:
    chain = _classical_chain(m)
    if not is_primitive(chain):
        print(f"{m.path}: abort: chain is not primitive (periodic or reducible); "
              "coalescence would never be certified", file=sys.stderr)
        _emit(dict(_provenance(m, "classical"), aborted=["chain is not primitive"]), args.out)
        return EXIT_ABORT
    workers = args.workers
    jobs = [(chain, m.seed, w, n, m.depth_cap) for w, n in enumerate(_split(m.samples, workers))]
    results = _run_pool(_classical_worker, jobs, workers)
    samples, depths, errors = [], [], []
    for w, s, dp, err in results:
        samples.extend(s)
        depths.extend(dp)
        if err:
            errors.append(f"worker {w}: {err}")
    record = _provenance(m, "classical")
    record["stationary"] = stationary_distribution(chain).tolist()
    record["stats"] = {"runs": len(samples), "max_depth": max(depths, default=0),
                       "columns": int(sum(depths))}
    if errors:
        record["aborted"] = errors
        _emit(record, args.out)
        for e in errors:
            print(f"{m.path}: abort: {e}", file=sys.stderr)
        return EXIT_ABORT
    record["samples"] = samples
    _emit(record, args.out)
    if args.csv:
        _emit_csv([(i, s, d) for i, (s, d) in enumerate(zip(samples, depths))],
                  ["index", "sample", "depth"], args)
    return EXIT_OK


def validation_checks(m: Manifest):
    """List of (name, passed, detail) for the channel described by the manifest."""
    sd = _hamiltonian(m)
    cov = _covering(m, sd)
    if cov is not None:
        sd = covered_decomposition(sd, cov)
    checks = []
    try:
        channel, chain = _channel(m, sd)
        checks.append(("lumpable", True, f"{sd.n_levels} energy classes"))
    except ManifestError as exc:
        if "lumpable" not in str(exc):
            raise
        checks.append(("lumpable", False, str(exc)))
        return checks
    checks.append(("completely_positive", channel.is_completely_positive(), ""))
    checks.append(("trace_preserving", channel.is_trace_preserving(), ""))
    checks.append(("eigenbasis_preserving", is_eigenbasis_preserving(channel, sd, m.beta),
                   "commutes with eigenprojectors and fixes the Gibbs state"))
    prim = is_primitive(chain)
    checks.append(("primitive", prim, "" if prim else "lumped chain is periodic or reducible"))
    gibbs = gibbs_lumped(sd, m.beta)
    checks.append(("detailed_balance", detailed_balance_classical(chain, gibbs),
                   "lumped chain against the lumped Gibbs distribution"))
    checks.append(("quantum_detailed_balance", detailed_balance_quantum(channel, gibbs_state(sd, m.beta)),
                   "channel against the Gibbs state"))
    return checks


def cmd_validate(m: Manifest, args) -> int:
    checks = validation_checks(m)
    lines = []
    for name, ok, detail in checks:
        lines.append(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail and not ok else ""))
    print("\n".join(lines))
    record = _provenance(m, "validate")
    record["checks"] = [{"name": n, "passed": bool(ok), "detail": d} for n, ok, d in checks]
    if args.out:
        _emit(record, args.out)
    return EXIT_OK if all(ok for _, ok, _ in checks) else EXIT_INVALID


def analysis_reports(m: Manifest):
    wanted = m.data.get("reports", list(REPORTS))
    bad = [r for r in wanted if r not in REPORTS]
    if bad:
        raise ManifestError("reports", f"unknown report '{bad[0]}'; choose from {', '.join(REPORTS)}")
    if "pinsker" in wanted and "covering_eps" not in m.data:
        raise ManifestError("reports", "the pinsker report needs 'covering_eps'")
    setup = build_setup(m)
    sd, chain = setup.sd, setup.chain
    out = []
    if "pinsker" in wanted:
        out.append(analysis.pinsker_lumping_bound(setup.sd_true, setup.covering, m.beta))
    if "stability" in wanted:
        etas = m.data.get("perturbations", [0.001, 0.01, 0.05])
        uniform = np.full_like(chain, 1.0 / chain.shape[0])
        for eta in etas:
            rep = analysis.stability_report(chain, (1 - eta) * chain + eta * uniform, beta=m.beta)
            rep.instance["eta"] = float(eta)
            out.append(rep)
    if "faulty_pe" in wanted:
        conf = setup.confusion or ConfusionModel.identity(sd.n_levels)
        out.append(analysis.faulty_pe_report(chain, conf))
    if "runtime" in wanted:
        rep = analysis.runtime_report(chain, sd.multiplicities)
        if setup.channel is not None and sd.dim <= 256:
            rep.extra["t_mix_states"] = analysis.t_mix(induced_transition_matrix(setup.channel, sd))
        out.append(rep)
    if "phi" in wanted:
        sizes = sd.multiplicities
        r = analysis.r_of(sizes)
        exact = analysis.phi_exact(sizes) if sizes.size <= analysis.PHI_EXACT_MAX else None
        bound = analysis.phi_bound(sizes.size, r)
        if exact is None:
            out.append(analysis.BoundReport("phi", bound, None, {"d_prime": int(sizes.size)}, None))
        else:
            out.append(analysis.BoundReport.check("phi", bound, exact, {"d_prime": int(sizes.size), "r": r}))
    return out


def cmd_analyze(m: Manifest, args) -> int:
    reports = analysis_reports(m)
    prov = _provenance(m, "analyze")
    records = [dict(r.to_dict(), **prov) for r in reports]
    _emit(records, args.out)
    if args.csv:
        rows = [(r.name, r.predicted, r.measured, r.margin, r.passed, json.dumps(r.instance, sort_keys=True))
                for r in reports]
        _emit_csv(rows, ["name", "predicted", "measured", "margin", "passed", "instance"], args)
    return EXIT_OK


COMMANDS = {"sample": cmd_sample, "classical": cmd_classical, "validate": cmd_validate, "analyze": cmd_analyze}


def build_parser():
    p = argparse.ArgumentParser(prog="qcftp", description="Perfect sampling of quantum Gibbs states by voter CFTP.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in [("sample", "draw perfect samples through the quantum sampler"),
                        ("classical", "run classical voter CFTP on an explicit chain"),
                        ("validate", "check the channel's structural assumptions"),
                        ("analyze", "evaluate the quantitative bounds")]:
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--manifest", required=True, help="run manifest (JSON)")
        sp.add_argument("--out", help="output path (default: stdout)")
        sp.add_argument("--csv", nargs="?", const=True, default=None,
                        help="also write CSV (to PATH, '-' for stdout, or next to --out)")
        sp.add_argument("--workers", type=int, default=1, help="independent engine instances")
        sp.add_argument("--progress", action="store_true", help="report progress on stderr")
        sp.add_argument("--timing", action="store_true",
                        help="include wall-clock time (makes output non-reproducible)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.workers < 1:
        print("--workers must be at least 1", file=sys.stderr)
        return EXIT_INVALID
    m = None
    try:
        m = load_manifest(args.manifest)
        return COMMANDS[args.command](m, args)
    except (ValidationError, NotPrimitiveError, NotLumpableError, CoveringInfeasible, DeadLabelError) as exc:
        line = getattr(exc, "lineno", None)
        if line is None:
            line = m.line_of(getattr(exc, "key", None)) if m is not None else 1
        print(f"{args.manifest}:{line}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
