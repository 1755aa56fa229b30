"""Expectation and policy-gradient estimators built on samples without replacement.

Value estimators (returning a real number) estimate E_p[f]; gradient
estimators (returning a :class:`GradEstimate`) estimate the gradient of
E_p[f] with respect to the distribution's logits.  All gradients are
analytic softmax expressions; no autodiff is involved.

Each value estimator is a weighted sum sum_s w(s) f(s) over its sample, and
its weight vector is exposed separately (``*_weights``) so that score-function
gradient forms  sum_s w(s) grad-log-p(s) f(s)  can reuse the same weights.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .distributions import CategoricalDist, as_objective
from .errors import (
    BaselineSizeMismatch,
    InconsistentThreshold,
    InvalidSampleSize,
    InvalidSplit,
    NeedTwoSamples,
    NoParameterization,
    NoPathwiseGradient,
)
from .sampling import OrderedSample, Rng, Threshold
from .setprob import loo_ratios

SINGLE_SAMPLE = "single-sample"
UNORDERED_SET = "unordered-set"
UNORDERED_SET_PG = "unordered-set-pg"
UNORDERED_SET_PG_BL = "unordered-set-pg-bl"
FULL_UNORDERED_SET_PG = "full-unordered-set-pg"
DET_SUM_AND_SAMPLE = "det-sum-and-sample"
IMPORTANCE_WEIGHTED = "importance-weighted"
IW_PG = "iw-pg"
IW_PG_BL = "iw-pg-bl"
IW_PG_NORM = "iw-pg-norm"
REINFORCE_WR = "reinforce-wr"
REINFORCE_WR_BL = "reinforce-wr-bl"
REINFORCE_SAMPLED_BL = "reinforce-sampled-bl"
RISK = "risk"
RISK_BL_FORM = "risk-bl-form"

_STOCH_SAS_PREFIX = "stoch-sum-and-sample-m"


def stoch_sas_id(m: int) -> str:
    return f"{_STOCH_SAS_PREFIX}{m}"


def parse_stoch_sas(estimator_id: str) -> int | None:
    """The split m of a stochastic sum-and-sample id, or None."""
    if estimator_id.startswith(_STOCH_SAS_PREFIX):
        return int(estimator_id[len(_STOCH_SAS_PREFIX):])
    return None


@dataclass(frozen=True)
class GradEstimate:
    """A gradient estimate plus bookkeeping.

    ``grad`` has the same length as the distribution's logits; ``evals``
    counts the objective evaluations the estimate consumed (2k for the
    sampled-baseline variant, k otherwise).
    """

    grad: np.ndarray
    estimator_id: str
    k: int
    evals: int
    seed: int | None = None

    def __post_init__(self):
        g = np.asarray(self.grad, dtype=float)
        if not np.all(np.isfinite(g)):
            raise ValueError("gradient estimate must be finite")
        g.setflags(write=False)
        object.__setattr__(self, "grad", g)


def _indices_of(sample) -> np.ndarray:
    if hasattr(sample, "indices"):
        return np.asarray(sample.indices, dtype=int)
    return np.asarray(sample, dtype=int).ravel()


def _sorted_set(sample, n: int) -> np.ndarray:
    idx = np.sort(_indices_of(sample))
    if len(np.unique(idx)) != len(idx):
        raise ValueError("sample indices must be distinct")
    if len(idx) and (idx[0] < 0 or idx[-1] >= n):
        raise ValueError("sample indices out of range")
    return idx


def _kappa_of(kappa) -> float | None:
    if isinstance(kappa, Threshold):
        return kappa.kappa
    if kappa is None:
        return None
    return float(kappa)


def _values(f, elements) -> np.ndarray:
    obj = as_objective(f)
    return np.array([obj.value(int(s)) for s in elements])


def _require_logits(dist: CategoricalDist):
    if not dist.has_logits():
        raise NoParameterization("gradient estimators need a logits parameterization")


def _score_sum(dist: CategoricalDist, elements: np.ndarray, coefs: np.ndarray) -> np.ndarray:
    """sum_e coefs[e] * (onehot(e) - probs), the softmax score-weighted sum."""
    g = np.zeros(dist.n)
    np.add.at(g, elements, coefs)
    return g - float(np.sum(coefs)) * dist.probs


# ---------------------------------------------------------------------------
# value estimators


def single_sample_estimate(dist: CategoricalDist, x, f) -> float:
    """f at the first drawn element; the crudest unbiased estimate of E[f]."""
    idx = _indices_of(x)
    return float(_values(f, idx[:1])[0])


def posterior_weights(dist: CategoricalDist, S, *, exclude=(), backend="auto"):
    """Elements of S (ascending) and their first-draw posterior probabilities
    p(s) R(S, s); on a restricted domain the weights use the renormalized p.
    The weights always sum to 1 up to rounding.
    """
    lr = loo_ratios(dist, S, order=1, backend=backend, exclude=exclude)
    lp = np.array([dist.log_probs[s] for s in lr.elements])
    exclude = _indices_of(exclude)
    if len(exclude):
        lp = lp - dist.complement_log_mass(exclude)
    return lr.elements, np.exp(lp) * lr.ratios


def unordered_set_estimate(dist: CategoricalDist, S, f) -> float:
    """sum_{s in S} p(s) R(S, s) f(s): the conditional mean of f at the first
    draw given the unordered sample, hence unbiased for E[f]."""
    elements, w = posterior_weights(dist, S)
    return float(np.dot(w, _values(f, elements)))


def sum_and_sample_weights(dist: CategoricalDist, B, m: int = 1):
    """Weights of the stochastic sum-and-sample estimator with split m.

    The first k-m drawn elements contribute their exact probabilities; the
    remaining mass is spread over the last m elements using the restricted
    first-draw posterior, so the weights total exactly 1.
    """
    idx = _indices_of(B)
    k = len(idx)
    if not 1 <= m < k:
        raise InvalidSplit(f"need 1 <= m < k, got m={m}, k={k}")
    head = idx[: k - m]
    head_w = np.exp(dist.log_probs[head])
    rest_mass = math.exp(dist.complement_log_mass(head))
    tail_elems, tail_post = posterior_weights(dist, np.sort(idx), exclude=head)
    tail_w = rest_mass * tail_post
    return np.concatenate([head, tail_elems]), np.concatenate([head_w, tail_w])


def stoch_sum_and_sample(dist: CategoricalDist, B, f, m: int = 1) -> float:
    """Sum the first k-m drawn terms exactly; estimate the remainder from the
    last m draws via the restricted unordered set estimator."""
    elements, w = sum_and_sample_weights(dist, B, m)
    return float(np.dot(w, _values(f, elements)))


def det_sum_and_sample_split(dist: CategoricalDist, k: int) -> np.ndarray:
    """The k-1 highest-probability indices (ties to the lower index)."""
    if not 2 <= k <= dist.n:
        raise InvalidSampleSize(f"k={k} outside [2, {dist.n}]")
    return np.argsort(-dist.probs, kind="stable")[: k - 1]


def det_sum_and_sample(dist: CategoricalDist, f, k: int, rng: Rng) -> float:
    """Sum the top k-1 categories by probability exactly and draw one sample
    from the renormalized remainder."""
    C = det_sum_and_sample_split(dist, k)
    probs = dist.probs
    fv_head = _values(f, C)
    head = float(np.dot(probs[C], fv_head))
    rest_mass = math.exp(dist.complement_log_mass(C))
    weights = probs.copy()
    weights[C] = 0.0
    cdf = np.cumsum(weights)
    x = int(np.searchsorted(cdf, rng.generator.random() * cdf[-1], side="right").clip(0, dist.n - 1))
    return head + rest_mass * float(_values(f, [x])[0])


def inclusion_probs(dist: CategoricalDist, elements, kappa) -> np.ndarray:
    """q(s, kappa) = P(perturbed log-prob of s exceeds kappa); ones for the
    full-domain sentinel.  Computed as -expm1(-exp(log p(s) - kappa))."""
    elements = _indices_of(elements)
    kv = _kappa_of(kappa)
    if kv is None:
        return np.ones(len(elements))
    t = np.minimum(dist.log_probs[elements] - kv, 700.0)
    q = -np.expm1(-np.exp(t))
    if np.any(q <= 0.0):
        raise InconsistentThreshold("threshold leaves an element with zero inclusion probability")
    return q


def _check_threshold(S, kappa):
    kv = _kappa_of(kappa)
    if (
        kv is not None
        and isinstance(S, OrderedSample)
        and S.perturbed_logprobs is not None
        and kv >= float(np.min(S.perturbed_logprobs))
    ):
        raise InconsistentThreshold("threshold must lie below every retained perturbed value")
    return kv


def importance_weights(dist: CategoricalDist, S, kappa):
    """Elements (ascending) and priority-sampling weights p(s) / q(s, kappa)."""
    kv = _check_threshold(S, kappa)
    elements = _sorted_set(S, dist.n)
    q = inclusion_probs(dist, elements, kv)
    return elements, np.exp(dist.log_probs[elements]) / q


def importance_weighted(dist: CategoricalDist, S, kappa, f) -> float:
    """Priority-sampling estimate sum_{s in S} p(s)/q(s, kappa) f(s)."""
    elements, w = importance_weights(dist, S, kappa)
    return float(np.dot(w, _values(f, elements)))


# ---------------------------------------------------------------------------
# policy-gradient estimators


def uspg(dist: CategoricalDist, S, f, *, seed: int | None = None) -> GradEstimate:
    """Unordered-set policy gradient: sum_s grad-p(s) R(S, s) f(s)."""
    _require_logits(dist)
    elements, w = posterior_weights(dist, S)
    coefs = w * _values(f, elements)
    grad = _score_sum(dist, elements, coefs)
    return GradEstimate(grad, UNORDERED_SET_PG, k=len(elements), evals=len(elements), seed=seed)


def _baseline_per_element(dist, elements, second_order, fv):
    p_el = np.exp(dist.log_probs[elements])
    return second_order @ (p_el * fv)


def uspg_baseline(dist: CategoricalDist, S, f, *, seed: int | None = None) -> GradEstimate:
    """Unordered-set policy gradient with its built-in control variate.

    Each f(s) is centered by a leave-one-out estimate of E[f] built from the
    other elements via second-order ratios; the baseline is treated as a
    constant (no gradient flows through it), which keeps the estimator
    unbiased.
    """
    _require_logits(dist)
    elements = _sorted_set(S, dist.n)
    if len(elements) < 2:
        raise NeedTwoSamples("the built-in baseline needs at least two samples")
    lr = loo_ratios(dist, elements, order=2)
    p_el = np.exp(dist.log_probs[lr.elements])
    w = p_el * lr.ratios
    fv = _values(f, lr.elements)
    b = _baseline_per_element(dist, lr.elements, lr.second_order, fv)
    grad = _score_sum(dist, lr.elements, w * (fv - b))
    return GradEstimate(grad, UNORDERED_SET_PG_BL, k=len(elements), evals=len(elements), seed=seed)


def uspg_baseline_control_variate(dist: CategoricalDist, S, f) -> np.ndarray:
    """The subtracted control-variate term of the baseline estimator,
    sum_s grad-p(s) R(S, s) * baseline(s); its expectation over S is zero."""
    _require_logits(dist)
    elements = _sorted_set(S, dist.n)
    lr = loo_ratios(dist, elements, order=2)
    p_el = np.exp(dist.log_probs[lr.elements])
    w = p_el * lr.ratios
    fv = _values(f, lr.elements)
    b = _baseline_per_element(dist, lr.elements, lr.second_order, fv)
    return _score_sum(dist, lr.elements, w * b)


def fuspg(dist: CategoricalDist, S, f, *, seed: int | None = None) -> GradEstimate:
    """Unordered-set policy gradient plus the pathwise term for objectives
    that depend on the parameters: sum_s R(S, s) grad(p(s) f(s))."""
    _require_logits(dist)
    obj = as_objective(f)
    if not obj.has_param_grad:
        raise NoPathwiseGradient("objective provides no parameter gradient")
    elements, w = posterior_weights(dist, S)
    fv = _values(obj, elements)
    grad = _score_sum(dist, elements, w * fv)
    for s, ws in zip(elements, w):
        grad = grad + ws * obj.param_grad_at(int(s))
    return GradEstimate(grad, FULL_UNORDERED_SET_PG, k=len(elements), evals=len(elements), seed=seed)


def reinforce_wr(
    dist: CategoricalDist, X, f, baseline: bool = True, *, seed: int | None = None
) -> GradEstimate:
    """REINFORCE on k independent draws, optionally centering each term by
    the mean objective of the other k-1 draws."""
    _require_logits(dist)
    idx = _indices_of(X)
    k = len(idx)
    if k < 1:
        raise InvalidSampleSize("need at least one sample")
    fv = _values(f, idx)
    if baseline:
        if k < 2:
            raise NeedTwoSamples("the leave-one-out baseline needs at least two samples")
        b = (np.sum(fv) - fv) / (k - 1)
    else:
        b = np.zeros(k)
    grad = _score_sum(dist, idx, (fv - b) / k)
    eid = REINFORCE_WR_BL if baseline else REINFORCE_WR
    return GradEstimate(grad, eid, k=k, evals=k, seed=seed)


def reinforce_sampled_baseline(
    dist: CategoricalDist, X, X_baseline, f, *, seed: int | None = None
) -> GradEstimate:
    """REINFORCE where each draw is centered by an independent paired draw;
    consumes 2k objective evaluations."""
    _require_logits(dist)
    idx = _indices_of(X)
    idx_b = _indices_of(X_baseline)
    if len(idx) != len(idx_b):
        raise BaselineSizeMismatch(f"{len(idx)} samples vs {len(idx_b)} baseline samples")
    k = len(idx)
    fv = _values(f, idx)
    fb = _values(f, idx_b)
    grad = _score_sum(dist, idx, (fv - fb) / k)
    return GradEstimate(grad, REINFORCE_SAMPLED_BL, k=k, evals=2 * k, seed=seed)


def risk_grad(
    dist: CategoricalDist, S, f, form: str = "direct", *, seed: int | None = None
) -> GradEstimate:
    """Biased gradient of the self-normalized objective sum over the sample.

    ``direct`` differentiates p(s) / sum_{s'} p(s') explicitly, including the
    gradient through the normalizer; ``baseline`` evaluates the algebraically
    identical form in which the normalizer gradient appears as a built-in
    baseline.
    """
    _require_logits(dist)
    elements = _sorted_set(S, dist.n)
    p_el = np.exp(dist.log_probs[elements])
    fv = _values(f, elements)
    W = float(np.sum(p_el))
    if form == "direct":
        term_a = _score_sum(dist, elements, fv * p_el / W)
        total_score = _score_sum(dist, elements, p_el)
        grad = term_a - (float(np.dot(p_el, fv)) / W**2) * total_score
        eid = RISK
    elif form == "baseline":
        base = float(np.dot(p_el / W, fv))
        grad = _score_sum(dist, elements, (p_el / W) * (fv - base))
        eid = RISK_BL_FORM
    else:
        raise ValueError(f"form must be 'direct' or 'baseline', got {form!r}")
    return GradEstimate(grad, eid, k=len(elements), evals=len(elements), seed=seed)


def iwpg(
    dist: CategoricalDist,
    S,
    kappa,
    f,
    baseline: bool = True,
    normalized: bool = False,
    *,
    seed: int | None = None,
) -> GradEstimate:
    """Importance-weighted policy gradient from a Gumbel top-k sample and its
    threshold.

    Without baseline this is the plain priority-sampling gradient (unbiased).
    With baseline, each term is reweighted by 1 - p(s) + p(s)/q(s) to correct
    for the sample-dependent baseline, keeping it unbiased.  The normalized
    variant divides by per-term normalizers (biased, lower variance).
    """
    _require_logits(dist)
    elements, r = importance_weights(dist, S, kappa)
    p_el = np.exp(dist.log_probs[elements])
    fv = _values(f, elements)
    if normalized:
        W = float(np.sum(r))
        B = float(np.dot(r, fv))
        W_i = W - r + p_el
        coefs = (r / W_i) * (fv - B / W)
        eid = IW_PG_NORM
    elif baseline:
        B = float(np.dot(r, fv))
        coefs = r * (fv * (1.0 - p_el + r) - B)
        eid = IW_PG_BL
    else:
        coefs = r * fv
        eid = IW_PG
    grad = _score_sum(dist, elements, coefs)
    return GradEstimate(grad, eid, k=len(elements), evals=len(elements), seed=seed)
