"""Samplers driven by the heavy-tailed proposal: exact rejection sampling with
a numerically optimized envelope constant, and the block independence
Metropolis-Hastings chain, both wired to fixed-width stopping rules.

A proposal object must provide ``sample(rng) -> (x, log_r(x))`` and
``log_density(x)``; an optional ``mode_point()`` seeds bound optimization.
State vectors are flat float arrays.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from . import mc_output


class SamplerError(Exception):
    pass


class EnvelopeViolationError(SamplerError):
    """The target/proposal ratio appears unbounded."""

    def __init__(self, witness, ratio):
        self.witness = np.asarray(witness)
        self.ratio = ratio
        super().__init__(
            f"envelope violated: log pi - log r = {ratio:.3g} at a witness point; "
            "the proposal tail is too light for this target"
        )


@dataclass(frozen=True)
class BoundConfig:
    n_presample: int = 512
    n_starts: int = 4
    maxfev: int = 20000
    safety_margin: float = 0.5
    divergence_margin: float = 500.0
    # Number of leading state coordinates that live on (0, inf) and should be
    # optimized on the log scale (2 for the spatial model's precisions).
    log_head: int = 0


@dataclass
class EnvelopeBound:
    log_b: float
    method: str  # "optimized" | "empirical_sup"
    trace: list = field(default_factory=list)  # (point, ratio) pairs visited
    n_evaluations: int = 0

    def to_text(self):
        lines = [
            "envelope-bound v1",
            f"method = {self.method}",
            f"log_b = {self.log_b!r}",
            f"n_evaluations = {self.n_evaluations}",
            "trace:",
        ]
        for point, ratio in self.trace:
            coords = " ".join(f"{v:.6g}" for v in np.asarray(point)[:6])
            lines.append(f"  ratio={ratio:.6g} at [{coords} ...]")
        return "\n".join(lines) + "\n"


@dataclass
class SamplerRun:
    kind: str  # "rejection" | "imh"
    draws: np.ndarray  # (n, dim)
    n_proposed: int
    n_accepted: int
    wall_time: float
    rng_seed: object
    stopped: bool
    summary: mc_output.ChainSummary = None

    @property
    def acceptance_rate(self):
        return self.n_accepted / self.n_proposed if self.n_proposed else 0.0


def _safe_ratio(log_target, proposal, x):
    lt = log_target(x)
    if not np.isfinite(lt):
        return -np.inf
    lr = proposal.log_density(x)
    if not np.isfinite(lr):
        return -np.inf
    return lt - lr


def optimize_bound(log_target, proposal, rng, config: BoundConfig = BoundConfig()) -> EnvelopeBound:
    """Multi-start derivative-free maximization of log pi - log r.

    Starts come from draws of r (best presampled ratios) plus the proposal's
    mode point when available; the returned bound adds a safety margin to the
    best ratio seen anywhere during the search.
    """
    points = []
    ratios = []
    for _ in range(config.n_presample):
        x, logr = proposal.sample(rng)
        lt = log_target(x)
        points.append(x)
        ratios.append(lt - logr if np.isfinite(lt) else -np.inf)
    ratios = np.asarray(ratios)
    finite = ratios[np.isfinite(ratios)]
    if finite.size == 0:
        raise SamplerError("target not evaluable at any proposal draw")
    baseline = float(np.median(finite))

    order = np.argsort(ratios)[::-1]
    starts = [points[i] for i in order[: config.n_starts]]
    if hasattr(proposal, "mode_point"):
        starts.append(proposal.mode_point())

    state = {"best": float(np.max(finite)), "best_x": points[int(order[0])], "evals": 0}
    head = config.log_head

    def to_raw(z):
        x = np.array(z, dtype=np.float64)
        if head:
            x[:head] = np.exp(x[:head])
        return x

    def to_search(x):
        z = np.array(x, dtype=np.float64)
        if head:
            z[:head] = np.log(z[:head])
        return z

    def neg_ratio(z):
        state["evals"] += 1
        x = to_raw(z)
        r = _safe_ratio(log_target, proposal, x)
        if r > state["best"]:
            state["best"] = r
            state["best_x"] = x
        if r - baseline > config.divergence_margin:
            raise EnvelopeViolationError(x, r)
        return -r

    trace = []
    for x0 in starts:
        r0 = _safe_ratio(log_target, proposal, x0)
        res = scipy.optimize.minimize(
            neg_ratio, to_search(x0), method="Powell",
            options={"maxfev": config.maxfev, "xtol": 1e-6, "ftol": 1e-8},
        )
        trace.append((x0, r0))
        trace.append((to_raw(res.x), -res.fun))

    return EnvelopeBound(
        log_b=state["best"] + config.safety_margin,
        method="optimized",
        trace=trace,
        n_evaluations=state["evals"] + config.n_presample,
    )


def empirical_sup_bound(log_target, proposal, m_draws, rng) -> EnvelopeBound:
    """Adaptive bound: maximum ratio over m draws from r.  Acceptance with this
    bound is only approximate; the method flag records that."""
    if m_draws < 1:
        raise SamplerError("m_draws must be >= 1")
    best = -np.inf
    best_x = None
    for _ in range(m_draws):
        x, logr = proposal.sample(rng)
        lt = log_target(x)
        r = lt - logr if np.isfinite(lt) else -np.inf
        if r > best:
            best, best_x = r, x
    return EnvelopeBound(best, "empirical_sup", [(best_x, best)], m_draws)


class SampleWriter:
    """Append-only binary samples file: a two-line text header naming the
    record layout and seed, then fixed-width little-endian float64 records
    (tau_h, tau_c, theta_1..theta_N, phi_1..phi_N)."""

    def __init__(self, path, dim, seed, n_regions=None):
        self.dim = dim
        self._fmt = "<%dd" % dim
        self._fh = open(path, "wb")
        self._fh.write(b"spatmcmc-samples v1\n")
        nr = -1 if n_regions is None else n_regions
        self._fh.write(f"dim={dim} n_regions={nr} seed={seed}\n".encode())

    def write(self, x):
        self._fh.write(struct.pack(self._fmt, *np.asarray(x, dtype=np.float64)))

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_samples(path):
    """Read a samples file back; returns (array of shape (n, dim), header dict)."""
    with open(path, "rb") as fh:
        magic = fh.readline()
        if not magic.startswith(b"spatmcmc-samples"):
            raise SamplerError(f"{path} is not a samples file")
        header = {}
        for token in fh.readline().decode().split():
            k, v = token.split("=")
            header[k] = int(v)
        payload = fh.read()
    dim = header["dim"]
    data = np.frombuffer(payload, dtype="<f8").reshape(-1, dim)
    return data, header


def _check_stop(draws, rule, estimator, names):
    block = np.asarray(draws)
    summary = mc_output.summarize(block, rule, estimator=estimator, names=names)
    return summary


def rejection_sample(
    log_target,
    proposal,
    bound: EnvelopeBound,
    stop: mc_output.StoppingRule,
    rng,
    budget: int = 10**7,
    writer: SampleWriter = None,
    rng_seed=None,
    names=None,
) -> SamplerRun:
    """Exact accept-reject sampling from the target.

    Accepted draws are i.i.d., so the stopping rule runs with plain sample
    variances rather than batch means.
    """
    t0 = time.perf_counter()
    draws = []
    n_proposed = 0
    summary = None
    stopped = False
    next_check = stop.next_check(0)
    while n_proposed < budget:
        x, logr = proposal.sample(rng)
        log_u = -rng.exponential()  # log of a Uniform(0,1) draw
        n_proposed += 1
        lt = log_target(x)
        log_accept = (lt - logr - bound.log_b) if np.isfinite(lt) else -np.inf
        if log_u <= log_accept:
            draws.append(x)
            if writer is not None:
                writer.write(x)
            if len(draws) == next_check:
                summary = _check_stop(draws, stop, "iid", names)
                if summary.stopped:
                    stopped = True
                    break
                next_check = stop.next_check(len(draws) + 1)
    return SamplerRun(
        "rejection",
        np.asarray(draws).reshape(len(draws), -1),
        n_proposed,
        len(draws),
        time.perf_counter() - t0,
        rng_seed,
        stopped,
        summary,
    )


def independence_mh(
    log_target,
    proposal,
    stop: mc_output.StoppingRule,
    rng,
    budget: int = 10**7,
    writer: SampleWriter = None,
    rng_seed=None,
    names=None,
) -> SamplerRun:
    """Block independence Metropolis-Hastings chain started from a draw of r.

    Every proposed update is a fresh draw from the proposal; stopping uses
    consistent batch means standard errors on the full chain prefix.
    """
    t0 = time.perf_counter()
    x, logr_x = proposal.sample(rng)
    logpi_x = log_target(x)
    while not np.isfinite(logpi_x):
        x, logr_x = proposal.sample(rng)
        logpi_x = log_target(x)
    chain = [x]
    if writer is not None:
        writer.write(x)
    n_accepted = 0
    n_proposed = 0
    summary = None
    stopped = False
    next_check = stop.next_check(0)
    while n_proposed < budget:
        y, logr_y = proposal.sample(rng)
        log_u = -rng.exponential()  # log of a Uniform(0,1) draw
        n_proposed += 1
        lt = log_target(y)
        if np.isfinite(lt):
            log_alpha = (lt - logr_y) - (logpi_x - logr_x)
        else:
            log_alpha = -np.inf
        if log_u <= log_alpha:
            x, logr_x, logpi_x = y, logr_y, lt
            n_accepted += 1
        chain.append(x)
        if writer is not None:
            writer.write(x)
        if len(chain) == next_check:
            summary = _check_stop(chain, stop, "cbm", names)
            if summary.stopped:
                stopped = True
                break
            next_check = stop.next_check(len(chain) + 1)
    return SamplerRun(
        "imh",
        np.asarray(chain),
        n_proposed,
        n_accepted,
        time.perf_counter() - t0,
        rng_seed,
        stopped,
        summary,
    )
