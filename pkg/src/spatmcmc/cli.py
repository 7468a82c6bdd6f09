"""End-to-end driver: load or synthesize a dataset, fit the heavy-tailed
proposal, run the chosen sampler(s) to the fixed-width stopping rule and write
reports.

Data formats
------------
counts file:    CSV with header ``region_id,Y,E`` (one row per region).
adjacency file: rows ``region_id_a,region_id_b``, one undirected edge each.
config file:    flat ``key = value`` text; see RunConfig fields.

Zero counts pass straight through to the exact model; only the Gaussian
approximation applies the 0.5 substitution.  Do not pre-substitute in the
data files.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import scipy.sparse

from . import band_linalg as bl
from . import mc_output, proposal as proposal_mod, samplers
from .gaussian_approx import GaussianApproximation
from .model import (
    Hyperparameters,
    SpatialDataset,
    build_precision_matrix,
    make_log_target,
    q_tilde,
)


class DatasetFormatError(Exception):
    pass


class UnknownRegionError(DatasetFormatError):
    def __init__(self, region_id):
        self.region_id = region_id
        super().__init__(f"adjacency references unknown region id {region_id!r}")


class DuplicateEdgeError(DatasetFormatError):
    def __init__(self, a, b):
        super().__init__(f"duplicate adjacency edge {a!r} -- {b!r}")


class NonIntegerCountError(DatasetFormatError):
    def __init__(self, region_id, value):
        super().__init__(f"non-integer count {value!r} for region {region_id!r}")


class NonPositiveExpectedError(DatasetFormatError):
    def __init__(self, region_id, value):
        super().__init__(f"expected count must be > 0, got {value!r} for region {region_id!r}")


def load_dataset(counts_path, adjacency_path) -> SpatialDataset:
    """Read and validate the counts/adjacency file pair.  Region ids map to
    contiguous indices in file order."""
    ids = []
    counts = []
    expected = []
    lines = Path(counts_path).read_text().strip().splitlines()
    for line in lines[1:]:  # skip header
        rid, y_str, e_str = [tok.strip() for tok in line.split(",")]
        try:
            y = int(y_str)
        except ValueError:
            raise NonIntegerCountError(rid, y_str) from None
        e = float(e_str)
        if e <= 0:
            raise NonPositiveExpectedError(rid, e)
        ids.append(rid)
        counts.append(y)
        expected.append(e)
    index = {rid: i for i, rid in enumerate(ids)}
    if len(index) != len(ids):
        raise DatasetFormatError("duplicate region ids in counts file")

    n = len(ids)
    seen = set()
    rows, cols = [], []
    for line in Path(adjacency_path).read_text().strip().splitlines():
        if not line.strip():
            continue
        a, b = [tok.strip() for tok in line.split(",")]
        for rid in (a, b):
            if rid not in index:
                raise UnknownRegionError(rid)
        key = (min(a, b), max(a, b))
        if key in seen:
            raise DuplicateEdgeError(a, b)
        seen.add(key)
        i, j = index[a], index[b]
        rows += [i, j]
        cols += [j, i]
    adjacency = scipy.sparse.csr_matrix(
        (np.ones(len(rows), dtype=np.int64), (rows, cols)), shape=(n, n)
    )
    return SpatialDataset(np.asarray(counts), np.asarray(expected), adjacency, labels=tuple(ids))


def write_dataset(data: SpatialDataset, counts_path, adjacency_path):
    labels = data.labels or tuple(str(i) for i in range(data.n_regions))
    with open(counts_path, "w") as fh:
        fh.write("region_id,Y,E\n")
        for rid, y, e in zip(labels, data.counts, data.expected):
            fh.write(f"{rid},{int(y)},{float(e)!r}\n")
    coo = scipy.sparse.coo_matrix(scipy.sparse.triu(data.adjacency))
    with open(adjacency_path, "w") as fh:
        for i, j in zip(coo.row, coo.col):
            fh.write(f"{labels[i]},{labels[j]}\n")


def lattice_adjacency(n_rows, n_cols):
    """Rook adjacency on an n_rows x n_cols grid, row-major node order."""
    n = n_rows * n_cols
    rows, cols = [], []
    for r in range(n_rows):
        for c in range(n_cols):
            i = r * n_cols + c
            if c + 1 < n_cols:
                rows += [i, i + 1]
                cols += [i + 1, i]
            if r + 1 < n_rows:
                j = i + n_cols
                rows += [i, j]
                cols += [j, i]
    return scipy.sparse.csr_matrix(
        (np.ones(len(rows), dtype=np.int64), (rows, cols)), shape=(n, n)
    )


def synthesize_dataset(n_rows, n_cols, true_tau_h, true_tau_c, base_e, seed, delta=None):
    """Simulate a lattice dataset from the model; returns (dataset, truth dict).

    The intrinsic clustering field is simulated through the delta-regularized
    precision followed by projection onto the sum-to-zero subspace, the
    standard proper surrogate for the improper prior.
    """
    if n_rows < 2 or n_cols < 2:
        raise DatasetFormatError("lattice dimensions must be >= 2")
    rng = np.random.default_rng(seed)
    adjacency = lattice_adjacency(n_rows, n_cols)
    q = build_precision_matrix(adjacency)
    qt, delta_used = q_tilde(q, delta)
    n = q.n
    factor = bl.band_cholesky(bl.BandMatrix.from_sparse(true_tau_c * qt))
    raw_phi = bl.sample_gaussian(factor, rng)
    phi = raw_phi - raw_phi.mean()
    theta = rng.normal(0.0, 1.0 / np.sqrt(true_tau_h), n)
    expected = np.full(n, float(base_e))
    counts = rng.poisson(expected * np.exp(theta + phi))
    data = SpatialDataset(counts, expected, adjacency)
    truth = {
        "tau_h": float(true_tau_h),
        "tau_c": float(true_tau_c),
        "delta": delta_used,
        "seed": seed,
        "theta": theta,
        "phi": phi,
    }
    return data, truth


@dataclass
class RunConfig:
    counts_path: str = ""
    adjacency_path: str = ""
    sampler: str = "both"  # rejection | imh | both
    seed: int = None
    out_dir: str = "."
    alpha_h: float = 1.0
    beta_h: float = 100.0
    alpha_c: float = 1.0
    beta_c: float = 100.0
    nu: int = 4
    nu_r: int = 4
    delta: float = None
    scale_inflation: float = 1.5
    epsilon_random_effects: float = 0.01
    epsilon_precisions: float = 2.0
    confidence: float = 0.95
    stopping_mode: str = "halfwidth"
    check_start: int = 1000
    min_iterations: int = 1000
    budget: int = 10**7
    bound_presample: int = 512
    bound_starts: int = 4
    bound_maxfev: int = 20000
    safety_margin: float = 0.5
    # Extra monitored functionals as index expressions like "theta[3]" are
    # covered by the coordinate thresholds; groups only here.

    def __post_init__(self):
        if self.sampler not in ("rejection", "imh", "both"):
            raise DatasetFormatError(f"unknown sampler {self.sampler!r}")
        if self.seed is None:
            raise DatasetFormatError("seed is required for reproducibility")
        if self.epsilon_random_effects <= 0 or self.epsilon_precisions <= 0:
            raise DatasetFormatError("thresholds must be > 0")

    def canonical_text(self):
        # out_dir is where results land, not what the run computes; leaving it
        # out keeps the digest identical across re-runs into fresh directories
        pairs = []
        for f in fields(self):
            if f.name == "out_dir":
                continue
            pairs.append(f"{f.name} = {getattr(self, f.name)!r}")
        return "\n".join(pairs) + "\n"

    def digest(self):
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:16]


_INT_FIELDS = {"seed", "nu", "nu_r", "check_start", "min_iterations", "budget",
               "bound_presample", "bound_starts", "bound_maxfev"}
_STR_FIELDS = {"counts_path", "adjacency_path", "sampler", "out_dir", "stopping_mode"}


def parse_config(path) -> RunConfig:
    kv = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DatasetFormatError(f"bad config line: {raw!r}")
        key, value = [tok.strip() for tok in line.split("=", 1)]
        kv[key] = value
    return config_from_dict(kv)


def config_from_dict(kv) -> RunConfig:
    valid = {f.name for f in fields(RunConfig)}
    args = {}
    for key, value in kv.items():
        if key not in valid:
            raise DatasetFormatError(f"unknown config key {key!r}")
        if key in _STR_FIELDS:
            args[key] = value
        elif key in _INT_FIELDS:
            args[key] = int(value)
        elif value in ("none", "None"):
            args[key] = None
        else:
            args[key] = float(value)
    return RunConfig(**args)


def _quantity_names(n):
    return ["tau_h", "tau_c"] + [f"theta[{i}]" for i in range(n)] + [f"phi[{i}]" for i in range(n)]


def _stopping_rule(config, n):
    eps = np.concatenate(
        [
            np.full(2, config.epsilon_precisions),
            np.full(2 * n, config.epsilon_random_effects),
        ]
    )
    return mc_output.StoppingRule(
        eps,
        confidence=config.confidence,
        min_iterations=config.min_iterations,
        n0=config.check_start,
        mode=config.stopping_mode,
    )


def run(config: RunConfig) -> int:
    """Full workflow; returns the process exit status (0 iff every requested
    sampler stopped via its rule)."""
    t_start = time.perf_counter()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = load_dataset(config.counts_path, config.adjacency_path)
    n = data.n_regions
    hyper = Hyperparameters(config.alpha_h, config.beta_h, config.alpha_c, config.beta_c)
    q = build_precision_matrix(data.adjacency)
    approx = GaussianApproximation(data, hyper, q, delta=config.delta)
    log_target = make_log_target(data, hyper, q)
    names = _quantity_names(n)
    stamp = f"# config_hash={config.digest()} seed={config.seed}\n"

    fit_cfg = proposal_mod.FitConfig(
        nu=config.nu, nu_r=config.nu_r, scale_inflation=config.scale_inflation
    )
    spec = proposal_mod.fit_proposal(approx.log_s1, fit_cfg, delta=approx.delta)
    (out / "proposal_spec.txt").write_text(stamp + spec.to_text())
    prop = proposal_mod.SpatialProposal(spec, approx)
    rule = _stopping_rule(config, n)

    runs = {}
    exit_ok = True
    if config.sampler in ("rejection", "both"):
        bound_rng = np.random.default_rng([config.seed, 1])
        bound_cfg = samplers.BoundConfig(
            n_presample=config.bound_presample,
            n_starts=config.bound_starts,
            maxfev=config.bound_maxfev,
            safety_margin=config.safety_margin,
            log_head=2,
        )
        bound = samplers.optimize_bound(log_target, prop, bound_rng, bound_cfg)
        (out / "envelope_bound.txt").write_text(stamp + bound.to_text())
        rng = np.random.default_rng([config.seed, 2])
        with samplers.SampleWriter(
            out / "samples_rejection.bin", prop.dim, config.seed, n
        ) as writer:
            runs["rejection"] = samplers.rejection_sample(
                log_target, prop, bound, rule, rng,
                budget=config.budget, writer=writer, rng_seed=config.seed, names=names,
            )
    if config.sampler in ("imh", "both"):
        rng = np.random.default_rng([config.seed, 3])
        with samplers.SampleWriter(
            out / "samples_imh.bin", prop.dim, config.seed, n
        ) as writer:
            runs["imh"] = samplers.independence_mh(
                log_target, prop, rule, rng,
                budget=config.budget, writer=writer, rng_seed=config.seed, names=names,
            )

    meta = [f"config_hash = {config.digest()}", f"seed = {config.seed}"]
    for kind, r in runs.items():
        if r.summary is not None:
            (out / f"summary_{kind}.txt").write_text(stamp + r.summary.to_table())
        meta += [
            f"{kind}.n_proposed = {r.n_proposed}",
            f"{kind}.n_accepted = {r.n_accepted}",
            f"{kind}.acceptance_rate = {r.acceptance_rate:.6g}",
            f"{kind}.wall_time = {r.wall_time:.3f}",
            f"{kind}.status = {'stopped' if r.stopped else 'budget-exhausted'}",
        ]
        exit_ok = exit_ok and r.stopped
    meta.append(f"total_wall_time = {time.perf_counter() - t_start:.3f}")
    (out / "run_metadata.txt").write_text("\n".join(meta) + "\n")
    return 0 if exit_ok else 1


def read_metadata(path):
    kv = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            kv[k.strip()] = v.strip()
    return kv


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="spatmcmc",
        description="Automated MCMC for spatial Poisson count models.",
    )
    parser.add_argument("--counts", help="counts CSV (region_id,Y,E)")
    parser.add_argument("--adjacency", help="edge list CSV (id_a,id_b)")
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--sampler", choices=["rejection", "imh", "both"])
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", help="output directory")
    parser.add_argument(
        "--synthesize", metavar="RxC",
        help="write a synthetic RxC lattice dataset to --out and exit",
    )
    parser.add_argument("--tau-h", type=float, default=10.0, help="synthesis truth")
    parser.add_argument("--tau-c", type=float, default=10.0, help="synthesis truth")
    parser.add_argument("--base-e", type=float, default=50.0, help="synthesis expected count")
    args = parser.parse_args(argv)

    if args.synthesize:
        r, c = (int(tok) for tok in args.synthesize.lower().split("x"))
        if args.seed is None:
            parser.error("--synthesize requires --seed")
        out = Path(args.out or ".")
        out.mkdir(parents=True, exist_ok=True)
        data, truth = synthesize_dataset(r, c, args.tau_h, args.tau_c, args.base_e, args.seed)
        write_dataset(data, out / "counts.csv", out / "adjacency.csv")
        with open(out / "truth.txt", "w") as fh:
            fh.write(f"tau_h = {truth['tau_h']!r}\ntau_c = {truth['tau_c']!r}\n")
            fh.write(f"delta = {truth['delta']!r}\nseed = {truth['seed']}\n")
        print(f"wrote {r}x{c} lattice dataset to {out}")
        return 0

    config = parse_config(args.config) if args.config else RunConfig(seed=args.seed)
    if args.counts:
        config.counts_path = args.counts
    if args.adjacency:
        config.adjacency_path = args.adjacency
    if args.sampler:
        config.sampler = args.sampler
    if args.seed is not None:
        config.seed = args.seed
    if args.out:
        config.out_dir = args.out
    if not config.counts_path or not config.adjacency_path:
        parser.error("--counts and --adjacency (or a config providing them) are required")
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
