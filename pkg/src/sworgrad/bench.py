"""Benchmark harness: a three-coin toy loss, gradient-variance sweeps versus
evaluation budget, and gradient-descent runs comparing estimators.

The toy draws three i.i.d. Bernoulli(sigmoid(eta)) bits and penalizes their
squared distance to the fixed targets (0.6, 0.51, 0.48).  The eight joint
outcomes form a flat categorical (row-major bit order, first bit most
significant), and every flat-categorical gradient estimator is chain-ruled to
the scalar parameter eta through
d log p(x) / d eta = sum_i (x_i - sigmoid(eta)).
"""
from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import estimators as est
from . import oracle
from .distributions import CategoricalDist, FactorizedDist, Objective
from .errors import InvalidSampleSize
from .sampling import Rng, gumbel_top_k, sample_with_replacement
from .setprob import loo_ratios

TARGETS = (0.6, 0.51, 0.48)
NUM_BITS = 3
DOMAIN = 2**NUM_BITS

EXACT = "exact"

DIVERGENCE_BOUND = 50.0

VARIANCE_CSV_VERSION = "# sworgrad-variance-v1"
OPTIMIZE_CSV_VERSION = "# sworgrad-optimize-v1"

_SWEEP_IDS = (
    EXACT,
    est.SINGLE_SAMPLE,
    est.UNORDERED_SET,
    est.UNORDERED_SET_PG,
    est.UNORDERED_SET_PG_BL,
    est.FULL_UNORDERED_SET_PG,
    est.DET_SUM_AND_SAMPLE,
    est.IMPORTANCE_WEIGHTED,
    est.IW_PG,
    est.IW_PG_BL,
    est.IW_PG_NORM,
    est.REINFORCE_WR,
    est.REINFORCE_WR_BL,
    est.REINFORCE_SAMPLED_BL,
)


def sigmoid(eta: float) -> float:
    if eta >= 0:
        return 1.0 / (1.0 + math.exp(-eta))
    z = math.exp(eta)
    return z / (1.0 + z)


def outcome_bits(idx: int) -> tuple:
    return tuple((idx >> (NUM_BITS - 1 - i)) & 1 for i in range(NUM_BITS))


@dataclass(frozen=True)
class BernoulliToy:
    """The toy problem at a fixed eta: flat distribution, objective values,
    and the chain-rule vectors to the scalar parameter.

    ``score_objective`` holds g(x) = (d log p(x)/d eta) * f(x); applying any
    value-estimator's weights to g yields a scalar gradient estimate.
    """

    eta: float
    flat: CategoricalDist
    f_values: np.ndarray
    eta_jacobian: np.ndarray  # d(joint log-prob)/d(eta) per outcome
    centered_jacobian: np.ndarray
    score_objective: np.ndarray


@lru_cache(maxsize=128)
def make_toy(eta: float) -> BernoulliToy:
    # Per-bit log-probabilities, exact in the tails.
    log_sig = -math.log1p(math.exp(-eta)) if eta >= 0 else eta - math.log1p(math.exp(eta))
    log_one_minus = log_sig - eta
    fd = FactorizedDist(tuple(np.array([log_one_minus, log_sig]) for _ in range(NUM_BITS)))
    flat = fd.flatten()
    sig = sigmoid(eta)
    f_vals = np.empty(DOMAIN)
    jac = np.empty(DOMAIN)
    for idx in range(DOMAIN):
        bits = outcome_bits(idx)
        f_vals[idx] = sum((b - t) ** 2 for b, t in zip(bits, TARGETS))
        jac[idx] = sum(b - sig for b in bits)
    centered = jac - float(np.dot(flat.probs, jac))
    score = centered * f_vals
    for arr in (f_vals, jac, centered, score):
        arr.setflags(write=False)
    return BernoulliToy(
        eta=eta,
        flat=flat,
        f_values=f_vals,
        eta_jacobian=jac,
        centered_jacobian=centered,
        score_objective=score,
    )


def exact_loss(eta: float) -> float:
    toy = make_toy(eta)
    return float(np.dot(toy.flat.probs, toy.f_values))


def loss_lower_bound(grid: int = 100001) -> float:
    """Grid-search minimum of the loss over sigmoid(eta) in [0, 1]."""
    sig = np.linspace(0.0, 1.0, grid)
    targets = np.asarray(TARGETS)
    # E[(x_i - t)^2] = sig (1 - t)^2 + (1 - sig) t^2, summed over bits
    losses = sig[:, None] * (1 - targets) ** 2 + (1 - sig[:, None]) * targets**2
    return float(np.min(losses.sum(axis=1)))


def evals_for(kind: str, k: int) -> int:
    if kind == EXACT:
        return DOMAIN
    if kind == est.SINGLE_SAMPLE:
        return 1
    if kind == est.REINFORCE_SAMPLED_BL:
        return 2 * k
    return k


def supported_estimators() -> tuple:
    """Estimator ids the toy harness accepts (plus stoch-sum-and-sample-m*)."""
    return _SWEEP_IDS


def _scalar_us(toy: BernoulliToy, S) -> float:
    elements, w = est.posterior_weights(toy.flat, S)
    return float(np.dot(w, toy.score_objective[elements]))


def toy_scalar_grad(kind: str, eta: float, k: int, rng: Rng) -> float:
    """One draw of the scalar gradient dL/d-eta under the given estimator.

    Value estimators are applied to the score-weighted objective
    g(x) = (d log p(x)/d-eta) f(x), which makes the weighted sum an unbiased
    score-function gradient estimate; gradient estimators with their own
    baselines are chain-ruled explicitly.  ``exact`` runs the unordered-set
    weights over the full domain, so a full-domain sample reproduces it
    bit for bit.
    """
    toy = make_toy(eta)
    dist = toy.flat
    g = toy.score_objective
    f = toy.f_values
    jc = toy.centered_jacobian

    if kind == EXACT:
        return _scalar_us(toy, np.arange(DOMAIN))

    if kind == est.SINGLE_SAMPLE:
        x = int(sample_with_replacement(rng, dist, 1)[0])
        return float(g[x])

    m_split = est.parse_stoch_sas(kind)
    if m_split is not None:
        if k > DOMAIN:
            raise InvalidSampleSize(f"k={k} exceeds the toy domain {DOMAIN}")
        B, _ = gumbel_top_k(rng, dist, k)
        elements, w = est.sum_and_sample_weights(dist, B.indices, m=m_split)
        return float(np.dot(w, g[elements]))

    if kind not in _SWEEP_IDS:
        raise ValueError(f"unknown toy estimator {kind!r}")

    if kind in (est.UNORDERED_SET, est.UNORDERED_SET_PG, est.FULL_UNORDERED_SET_PG):
        if k > DOMAIN:
            raise InvalidSampleSize(f"k={k} exceeds the toy domain {DOMAIN}")
        S, _ = gumbel_top_k(rng, dist, k)
        return _scalar_us(toy, S.indices)

    if kind == est.UNORDERED_SET_PG_BL:
        if k > DOMAIN:
            raise InvalidSampleSize(f"k={k} exceeds the toy domain {DOMAIN}")
        S, _ = gumbel_top_k(rng, dist, k)
        lr = loo_ratios(dist, S.indices, order=2)
        p_el = np.exp(dist.log_probs[lr.elements])
        w = p_el * lr.ratios
        b = lr.second_order @ (p_el * f[lr.elements])
        return float(np.dot(w * jc[lr.elements], f[lr.elements] - b))

    if kind == est.DET_SUM_AND_SAMPLE:
        C = est.det_sum_and_sample_split(dist, k)
        head = float(np.dot(dist.probs[C], g[C]))
        rest_mass = math.exp(dist.complement_log_mass(C))
        weights = dist.probs.copy()
        weights[C] = 0.0
        cdf = np.cumsum(weights)
        x = int(np.searchsorted(cdf, rng.generator.random() * cdf[-1], side="right").clip(0, DOMAIN - 1))
        return head + rest_mass * float(g[x])

    if kind in (est.IMPORTANCE_WEIGHTED, est.IW_PG, est.IW_PG_BL, est.IW_PG_NORM):
        if k > DOMAIN:
            raise InvalidSampleSize(f"k={k} exceeds the toy domain {DOMAIN}")
        S, thr = gumbel_top_k(rng, dist, k)
        elements, r = est.importance_weights(dist, S.to_unordered(), thr)
        if kind in (est.IMPORTANCE_WEIGHTED, est.IW_PG):
            return float(np.dot(r, g[elements]))
        p_el = dist.probs[elements]
        fv = f[elements]
        if kind == est.IW_PG_BL:
            B = float(np.dot(r, fv))
            coefs = r * (fv * (1.0 - p_el + r) - B)
        else:
            W = float(np.sum(r))
            B = float(np.dot(r, fv))
            coefs = (r / (W - r + p_el)) * (fv - B / W)
        return float(np.dot(coefs, jc[elements]))

    # with-replacement family
    X = sample_with_replacement(rng, dist, k)
    fv = f[X]
    if kind == est.REINFORCE_WR:
        coefs = fv / k
    elif kind == est.REINFORCE_WR_BL:
        if k < 2:
            raise InvalidSampleSize("leave-one-out baseline needs k >= 2")
        coefs = (fv - (np.sum(fv) - fv) / (k - 1)) / k
    else:  # sampled baseline
        Xb = sample_with_replacement(rng, dist, k)
        coefs = (fv - f[Xb]) / k
    return float(np.dot(coefs, jc[X]))


def toy_exact_moments(kind: str, eta: float, k: int):
    """Exact (mean, variance) of the scalar-gradient estimator by enumeration
    (with threshold quadrature where needed)."""
    toy = make_toy(eta)
    dist = toy.flat
    g = Objective(toy.score_objective)

    if kind == EXACT:
        return toy_scalar_grad(EXACT, eta, DOMAIN, Rng(0)), 0.0

    m_split = est.parse_stoch_sas(kind)
    if m_split is not None:
        return oracle.estimator_moments(kind, dist, g, k)

    value_equivalent = {
        est.SINGLE_SAMPLE: est.SINGLE_SAMPLE,
        est.UNORDERED_SET: est.UNORDERED_SET,
        est.UNORDERED_SET_PG: est.UNORDERED_SET,
        est.FULL_UNORDERED_SET_PG: est.UNORDERED_SET,
        est.DET_SUM_AND_SAMPLE: est.DET_SUM_AND_SAMPLE,
        est.IMPORTANCE_WEIGHTED: est.IMPORTANCE_WEIGHTED,
        est.IW_PG: est.IMPORTANCE_WEIGHTED,
    }
    if kind in value_equivalent:
        return oracle.estimator_moments(value_equivalent[kind], dist, g, k)

    if kind in (est.UNORDERED_SET_PG_BL, est.REINFORCE_WR, est.REINFORCE_WR_BL,
                est.REINFORCE_SAMPLED_BL, est.IW_PG_BL):
        return oracle.estimator_moments(
            kind, dist, Objective(toy.f_values), k, project=toy.eta_jacobian
        )

    raise ValueError(f"no exact moments for toy estimator {kind!r}")


# ---------------------------------------------------------------------------
# variance sweep

@dataclass(frozen=True)
class VarianceRow:
    estimator: str
    k: int
    evals: int
    eta: float
    variance: float
    log10_variance: float
    replications: int
    seed: int


@dataclass
class VarianceReport:
    rows: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(VARIANCE_CSV_VERSION + "\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(
            ["estimator", "k", "evals", "eta", "variance", "log10_variance", "replications", "seed"]
        )
        for r in self.rows:
            writer.writerow(
                [r.estimator, r.k, r.evals, repr(r.eta), repr(r.variance),
                 repr(r.log10_variance), r.replications, r.seed]
            )
        return buf.getvalue()

    @staticmethod
    def from_csv(text: str) -> "VarianceReport":
        rows = []
        reader = csv.reader(
            line for line in text.splitlines() if line and not line.startswith("#")
        )
        header = next(reader)
        for rec in reader:
            d = dict(zip(header, rec))
            rows.append(
                VarianceRow(
                    estimator=d["estimator"],
                    k=int(d["k"]),
                    evals=int(d["evals"]),
                    eta=float(d["eta"]),
                    variance=float(d["variance"]),
                    log10_variance=float(d["log10_variance"]),
                    replications=int(d["replications"]),
                    seed=int(d["seed"]),
                )
            )
        return VarianceReport(rows)

    def group_by_evals(self) -> dict:
        """Rows grouped by evaluation budget: only rows sharing a budget are
        comparable in the variance-versus-cost sense."""
        groups: dict = {}
        for r in self.rows:
            groups.setdefault(r.evals, []).append(r)
        return groups


def _worker_count() -> int:
    raw = os.environ.get("SWORGRAD_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _replicate(kind, eta, k, seed, replications):
    def one(r):
        return toy_scalar_grad(kind, eta, k, Rng(seed).split(r))

    workers = _worker_count()
    if workers == 1:
        return np.array([one(r) for r in range(replications)])
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return np.array(list(pool.map(one, range(replications))))


def variance_sweep(config: dict) -> VarianceReport:
    """Empirical variance of the scalar gradient per (estimator, k, eta).

    Config keys: ``estimators`` (ids), ``k`` (list), ``eta`` (list),
    ``replications``, ``seed``.  Replicate r uses the split stream
    (seed, r), so reports are reproducible regardless of scheduling.
    """
    estimators = list(config["estimators"])
    ks = [int(v) for v in config["k"]]
    etas = [float(v) for v in config["eta"]]
    replications = int(config.get("replications", 10**4))
    seed = int(config.get("seed", 0))

    rows = []
    for kind in estimators:
        for k in ks:
            for eta in etas:
                vals = _replicate(kind, eta, k, seed, replications)
                var = float(np.var(vals, ddof=1)) if replications > 1 else 0.0
                log10_var = math.log10(var) if var > 0 else -math.inf
                rows.append(
                    VarianceRow(
                        estimator=kind,
                        k=k,
                        evals=evals_for(kind, k),
                        eta=eta,
                        variance=var,
                        log10_variance=log10_var,
                        replications=replications,
                        seed=seed,
                    )
                )
    return VarianceReport(rows)


# ---------------------------------------------------------------------------
# optimization

@dataclass
class OptRun:
    """Gradient-descent trajectory with exact losses logged every step."""

    steps: list
    diverged: bool
    config: dict

    @property
    def final_loss(self) -> float:
        return self.steps[-1][2]

    @property
    def etas(self) -> np.ndarray:
        return np.array([s[1] for s in self.steps])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(OPTIMIZE_CSV_VERSION + "\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["step", "eta", "loss"])
        for step, eta, loss in self.steps:
            writer.writerow([step, repr(eta), repr(loss)])
        if self.diverged:
            buf.write("# diverged\n")
        return buf.getvalue()


def optimize(config: dict) -> OptRun:
    """Plain gradient descent on eta with a chosen gradient estimator.

    Config keys: ``estimator``, ``k``, ``eta0``, ``step_size``, ``steps``,
    ``seed``.  Runs whose parameter leaves [-DIVERGENCE_BOUND,
    DIVERGENCE_BOUND] are flagged and truncated.
    """
    kind = config["estimator"]
    k = int(config.get("k", 1))
    eta = float(config.get("eta0", 0.0))
    lr = float(config.get("step_size", 0.1))
    steps = int(config.get("steps", 500))
    seed = int(config.get("seed", 0))

    trajectory = [(0, eta, exact_loss(eta))]
    diverged = False
    for t in range(steps):
        grad = toy_scalar_grad(kind, eta, k, Rng(seed).split(t))
        eta = eta - lr * grad
        if abs(eta) > DIVERGENCE_BOUND:
            diverged = True
            trajectory.append((t + 1, eta, exact_loss(eta)))
            break
        trajectory.append((t + 1, eta, exact_loss(eta)))
    return OptRun(steps=trajectory, diverged=diverged, config=dict(config))
