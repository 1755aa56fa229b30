"""Brute-force ground truth: exact expectations and gradients, enumerated
sample spaces, conditional distributions, and exact estimator moments.

Everything here is independent of the fast kernels it is used to verify:
ordered-sample probabilities come from the sequential chain rule, unordered
probabilities from summing orderings, and threshold-dependent estimators are
integrated against the conditional threshold density by adaptive quadrature.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import estimators as est
from .distributions import CategoricalDist, Objective, as_objective, from_logits
from .errors import DomainTooLarge, SpaceTooLarge
from .sampling import OrderedSample, UnorderedSample
from .setprob import p_set_exact, posterior_first_draw

DOMAIN_CAP = 10**6
SPACE_CAP = 10**6

# Clip for the transformed quadrature variable: endpoint values stand in for
# the (finite) endpoint limits of the integrands.
_U_CLIP = 1e-12


@dataclass(frozen=True)
class EnumeratedSampleSpace:
    """All samples of a given kind with their exact probabilities."""

    entries: list
    total: float


def exact_expectation(dist: CategoricalDist, f) -> float:
    """E[f] by full summation over the domain."""
    if dist.n > DOMAIN_CAP:
        raise DomainTooLarge(f"domain size {dist.n} exceeds {DOMAIN_CAP}")
    fv = _all_values(dist, f)
    return float(np.dot(dist.probs, fv))


def exact_gradient(dist: CategoricalDist, f) -> np.ndarray:
    """Gradient of E[f] w.r.t. the logits: sum_x f(x) grad-p(x), plus the
    pathwise term sum_x p(x) grad-f(x) when the objective carries one."""
    if dist.n > DOMAIN_CAP:
        raise DomainTooLarge(f"domain size {dist.n} exceeds {DOMAIN_CAP}")
    obj = as_objective(f)
    fv = _all_values(dist, obj)
    probs = dist.probs
    pf = probs * fv
    grad = pf - float(np.sum(pf)) * probs
    if obj.has_param_grad:
        for x in range(dist.n):
            grad = grad + probs[x] * obj.param_grad_at(x)
    return grad


def _all_values(dist, f) -> np.ndarray:
    obj = as_objective(f)
    return np.array([obj.value(x) for x in range(dist.n)])


def _ordered_chain_prob(probs: np.ndarray, perm) -> float:
    acc = 1.0
    remaining = 1.0
    for b in perm:
        acc *= probs[b] / remaining
        remaining -= probs[b]
    return acc


def enumerate_ordered(dist: CategoricalDist, k: int) -> EnumeratedSampleSpace:
    """Every ordered sample of size k with its chain-rule probability."""
    count = math.perm(dist.n, k)
    if count > SPACE_CAP:
        raise SpaceTooLarge(f"{count} ordered samples exceed {SPACE_CAP}")
    probs = dist.probs
    entries = [
        (OrderedSample(np.array(perm)), _ordered_chain_prob(probs, perm))
        for perm in itertools.permutations(range(dist.n), k)
    ]
    return EnumeratedSampleSpace(entries, float(math.fsum(p for _, p in entries)))


def enumerate_unordered(dist: CategoricalDist, k: int) -> EnumeratedSampleSpace:
    """Every unordered sample of size k; probabilities aggregate orderings."""
    count = math.perm(dist.n, k)
    if count > SPACE_CAP:
        raise SpaceTooLarge(f"{count} orderings exceed {SPACE_CAP}")
    probs = dist.probs
    acc: dict = {}
    for perm in itertools.permutations(range(dist.n), k):
        key = tuple(sorted(perm))
        acc[key] = acc.get(key, 0.0) + _ordered_chain_prob(probs, perm)
    entries = [
        (UnorderedSample(np.array(key)), p) for key, p in sorted(acc.items())
    ]
    return EnumeratedSampleSpace(entries, float(math.fsum(p for _, p in entries)))


def posterior_b1(dist: CategoricalDist, S) -> np.ndarray:
    """P(first draw = s | sampled set S) for each s in S (ascending)."""
    return posterior_first_draw(dist, S)


# ---------------------------------------------------------------------------
# threshold quadrature

_QUAD_SHIFT = 5.0


def _romberg_row(vals: np.ndarray) -> np.ndarray:
    """Richardson-extrapolated trapezoid over [0, 1] from values on a uniform
    grid whose interval count is a multiple of 8; cancels h^2..h^6 terms."""
    def trap(v, h):
        return h * (np.sum(v, axis=0) - 0.5 * (v[0] + v[-1]))

    n = len(vals)
    h = 1.0 / (n - 1)
    row = [trap(vals, h), trap(vals[::2], 2 * h), trap(vals[::4], 4 * h), trap(vals[::8], 8 * h)]
    for level in range(1, 4):
        factor = 4.0**level
        row = [(factor * fine - coarse) / (factor - 1.0) for fine, coarse in zip(row, row[1:])]
    return row[0]


def _adaptive_trapezoid(func, tol: float, start_nodes: int = 129, max_nodes: int = 33025):
    """Extrapolated trapezoid on [0, 1] with node doubling until convergence.

    ``func`` maps an array of nodes in (0, 1) to integrand values of shape
    ``(len(nodes), ...)``; endpoint values are taken just inside the interval.
    """
    nodes = start_nodes
    prev = None
    while True:
        u = np.linspace(0.0, 1.0, nodes)
        vals = func(np.clip(u, _U_CLIP, 1.0 - _U_CLIP))
        total = _romberg_row(vals)
        if prev is not None:
            err = np.max(np.abs(total - prev))
            scale = max(float(np.max(np.abs(total))), 1e-30)
            if err <= tol * scale:
                return total
        if nodes >= max_nodes:
            return total
        prev = total
        nodes = 2 * (nodes - 1) + 1


def _kappa_path(dist: CategoricalDist, S_idx):
    """Transform for integrating against the conditional threshold density.

    Conditioned on the set S, the threshold is the maximum perturbed
    log-probability outside S, a Gumbel with location log(1 - mass(S)).
    Substituting its CDF u and then u = v^exp(shift) (the same shift that
    smooths the set-probability integrand) gives

      integral p(kappa|S) g dkappa
        = (1/p(S)) integral_0^1 W(v) prod_s q(s, kappa(v)) g(kappa(v)) dv

    with weight W(v) = exp(shift) * v^(exp(shift) - 1).  Returns
    ``(kappa_of, weight_of)``.
    """
    phi_c = dist.complement_log_mass(S_idx)
    scale = math.exp(_QUAD_SHIFT)

    def kappa_of(v):
        return phi_c - _QUAD_SHIFT - np.log(-np.log(v))

    def weight_of(v):
        return scale * np.exp((scale - 1.0) * np.log(v))

    return kappa_of, weight_of


def _log_q_matrix(dist, S_idx, kappas) -> np.ndarray:
    """log q(s, kappa) for every s in S and node kappa; shape (nodes, k)."""
    t = np.minimum(np.subtract.outer(kappas, dist.log_probs[S_idx]) * -1.0, 700.0)
    with np.errstate(divide="ignore"):
        q = -np.expm1(-np.exp(t))
        return np.log(q)


def _iw_set_contributions(dist, S_idx, fv, tol, want_second):
    """(integral of w*e, integral of w*e^2) over the threshold given S, where
    w is the set-conditional weight prod_s q; dividing by p(S) gives the
    conditional moments.  Summed over all sets these integrate to the
    unconditional moments directly."""
    p_el = np.exp(dist.log_probs[S_idx])
    kappa_of, weight_of = _kappa_path(dist, S_idx)

    def integrand(v):
        lq = _log_q_matrix(dist, S_idx, kappa_of(v))
        w = weight_of(v) * np.exp(np.sum(lq, axis=1))
        e = (p_el * fv) @ np.exp(-lq).T
        cols = [w * e]
        if want_second:
            cols.append(w * e * e)
        return np.stack(cols, axis=1)

    out = _adaptive_trapezoid(integrand, tol)
    return (float(out[0]), float(out[1]) if want_second else None)


def _iwpg_set_contributions(dist, S_idx, fv, variant, tol, gram):
    """Vector analogue for the importance-weighted policy gradients.

    Returns the integral of w * coefs (one score coefficient per element) and,
    when ``gram`` is given, the integral of the squared-norm integrand
    w * coefs' gram coefs.
    """
    p_el = np.exp(dist.log_probs[S_idx])
    kappa_of, weight_of = _kappa_path(dist, S_idx)

    def coef_matrix(v):
        lq = _log_q_matrix(dist, S_idx, kappa_of(v))
        w = weight_of(v) * np.exp(np.sum(lq, axis=1))
        r = p_el * np.exp(-lq)
        if variant == est.IW_PG:
            coefs = r * fv
        else:
            B = r @ fv
            coefs = r * (fv * (1.0 - p_el + r) - B[:, None])
        return w, coefs

    def mean_integrand(v):
        w, coefs = coef_matrix(v)
        return w[:, None] * coefs

    coef_int = _adaptive_trapezoid(mean_integrand, tol)

    second = None
    if gram is not None:

        def second_integrand(v):
            w, coefs = coef_matrix(v)
            return (w * np.einsum("ui,ij,uj->u", coefs, gram, coefs))[:, None]

        second = float(_adaptive_trapezoid(second_integrand, tol)[0])
    return coef_int, second


def _score_gram(dist, elements):
    """Gram matrix of the score vectors (onehot(s) - probs) over elements."""
    n = dist.n
    vecs = -np.tile(dist.probs, (len(elements), 1))
    vecs[np.arange(len(elements)), elements] += 1.0
    return vecs @ vecs.T


def conditional_iw_mean(dist: CategoricalDist, S, f, tol: float = 1e-9) -> float:
    """Mean of the importance-weighted estimate over the threshold given S."""
    S_idx = np.sort(np.asarray(S.indices if hasattr(S, "indices") else S, dtype=int))
    if len(S_idx) == dist.n:
        fv = _values_at(f, S_idx)
        return float(np.dot(np.exp(dist.log_probs[S_idx]), fv))
    fv = _values_at(f, S_idx)
    contrib, _ = _iw_set_contributions(dist, S_idx, fv, tol, want_second=False)
    return contrib / math.exp(p_set_exact(dist, S_idx))


def _values_at(f, idx):
    obj = as_objective(f)
    return np.array([obj.value(int(s)) for s in idx])


# ---------------------------------------------------------------------------
# exact estimator moments

def _moments_from_entries(values, probs, total):
    """Normalized mean and variance (trace of covariance for vectors)."""
    arr = np.asarray(values, dtype=float)
    p = np.asarray(probs, dtype=float) / total
    if arr.ndim == 1:
        mean = float(np.dot(p, arr))
        var = float(np.dot(p, (arr - mean) ** 2))
        return mean, var
    mean = p @ arr
    centered = arr - mean
    var = float(np.dot(p, np.einsum("ij,ij->i", centered, centered)))
    return mean, var


def _maybe_project(vec, project):
    if project is None:
        return vec
    return float(np.dot(np.asarray(vec, dtype=float), np.asarray(project, dtype=float)))


def estimator_moments(
    kind: str,
    dist: CategoricalDist,
    f,
    k: int,
    *,
    project=None,
    quad_tol: float = 1e-9,
):
    """Exact mean and variance of an estimator under its true sampling law.

    ``kind`` is an estimator id.  Gradient estimators report the trace of the
    covariance as their variance, or the scalar variance of ``grad . project``
    when a projection vector is supplied.  Threshold-dependent kinds are
    integrated over the conditional threshold density per sampled set; their
    variance is infinite for small k (k = 1 for the importance-weighted forms,
    k <= 3 for the baseline-corrected policy gradient) and reported as inf.
    """
    obj = as_objective(f)
    n = dist.n

    if kind == est.SINGLE_SAMPLE:
        fv = _all_values(dist, obj)
        return _moments_from_entries(fv, dist.probs, 1.0)

    if kind == est.UNORDERED_SET:
        space = enumerate_unordered(dist, k)
        vals = [est.unordered_set_estimate(dist, s.indices, obj) for s, _ in space.entries]
        return _moments_from_entries(vals, [p for _, p in space.entries], space.total)

    m_split = est.parse_stoch_sas(kind)
    if m_split is not None:
        space = enumerate_ordered(dist, k)
        vals = [est.stoch_sum_and_sample(dist, b.indices, obj, m=m_split) for b, _ in space.entries]
        return _moments_from_entries(vals, [p for _, p in space.entries], space.total)

    if kind == est.DET_SUM_AND_SAMPLE:
        C = est.det_sum_and_sample_split(dist, k)
        probs = dist.probs
        head = float(np.dot(probs[C], _values_at(obj, C)))
        rest_mass = math.exp(dist.complement_log_mass(C))
        rest = [x for x in range(n) if x not in set(C.tolist())]
        vals = [head + rest_mass * obj.value(x) for x in rest]
        ps = [probs[x] / rest_mass for x in rest]
        return _moments_from_entries(vals, ps, float(math.fsum(ps)))

    if kind == est.IMPORTANCE_WEIGHTED:
        return _iw_value_moments(dist, obj, k, quad_tol)

    if kind in (est.IW_PG, est.IW_PG_BL):
        return _iwpg_moments(dist, obj, k, kind, project, quad_tol)

    if kind in (est.UNORDERED_SET_PG, est.UNORDERED_SET_PG_BL, est.FULL_UNORDERED_SET_PG,
                est.RISK, est.RISK_BL_FORM):
        space = enumerate_unordered(dist, k)
        grads = []
        for s, _ in space.entries:
            if kind == est.UNORDERED_SET_PG:
                g = est.uspg(dist, s.indices, obj).grad
            elif kind == est.UNORDERED_SET_PG_BL:
                g = est.uspg_baseline(dist, s.indices, obj).grad
            elif kind == est.FULL_UNORDERED_SET_PG:
                g = est.fuspg(dist, s.indices, obj).grad
            elif kind == est.RISK:
                g = est.risk_grad(dist, s.indices, obj, form="direct").grad
            else:
                g = est.risk_grad(dist, s.indices, obj, form="baseline").grad
            grads.append(_maybe_project(g, project))
        return _moments_from_entries(grads, [p for _, p in space.entries], space.total)

    if kind in (est.REINFORCE_WR, est.REINFORCE_WR_BL):
        if n**k > SPACE_CAP:
            raise SpaceTooLarge(f"{n**k} with-replacement samples exceed {SPACE_CAP}")
        probs = dist.probs
        grads, ps = [], []
        for X in itertools.product(range(n), repeat=k):
            g = est.reinforce_wr(dist, np.array(X), obj, baseline=kind == est.REINFORCE_WR_BL).grad
            grads.append(_maybe_project(g, project))
            ps.append(float(np.prod(probs[list(X)])))
        return _moments_from_entries(grads, ps, float(math.fsum(ps)))

    if kind == est.REINFORCE_SAMPLED_BL:
        if n ** (2 * k) > SPACE_CAP:
            raise SpaceTooLarge(f"{n ** (2 * k)} sample pairs exceed {SPACE_CAP}")
        probs = dist.probs
        grads, ps = [], []
        for X in itertools.product(range(n), repeat=k):
            for Xb in itertools.product(range(n), repeat=k):
                g = est.reinforce_sampled_baseline(dist, np.array(X), np.array(Xb), obj).grad
                grads.append(_maybe_project(g, project))
                ps.append(float(np.prod(probs[list(X)]) * np.prod(probs[list(Xb)])))
        return _moments_from_entries(grads, ps, float(math.fsum(ps)))

    raise ValueError(f"unknown estimator kind {kind!r}")


def _iw_value_moments(dist, obj, k, tol):
    n = dist.n
    if k == n:
        fv = _all_values(dist, obj)
        return float(np.dot(dist.probs, fv)), 0.0
    want_second = k >= 2
    mean_acc, second_acc = [], []
    for S in itertools.combinations(range(n), k):
        S_idx = np.array(S)
        fv = _values_at(obj, S_idx)
        m1, m2 = _iw_set_contributions(dist, S_idx, fv, tol, want_second)
        mean_acc.append(m1)
        if want_second:
            second_acc.append(m2)
    mean = float(math.fsum(mean_acc))
    if not want_second:
        return mean, math.inf
    second = float(math.fsum(second_acc))
    return mean, max(second - mean**2, 0.0)


def _iwpg_moments(dist, obj, k, kind, project, tol):
    n = dist.n
    if k == n:
        g = est.iwpg(dist, np.arange(n), None, obj, baseline=kind != est.IW_PG).grad
        return _maybe_project(g, project), 0.0
    finite_var = k >= 2 if kind == est.IW_PG else k >= 4
    mean_acc = []
    second_acc = []
    for S in itertools.combinations(range(n), k):
        S_idx = np.array(S)
        fv = _values_at(obj, S_idx)
        gram = None
        if finite_var:
            if project is None:
                gram = _score_gram(dist, S_idx)
            else:
                proj = np.asarray(project, dtype=float)
                jc = proj[S_idx] - float(np.dot(dist.probs, proj))
                gram = np.outer(jc, jc)
        coef_int, second = _iwpg_set_contributions(dist, S_idx, fv, kind, tol, gram)
        mean_acc.append(est._score_sum(dist, S_idx, coef_int))
        if second is not None:
            second_acc.append(second)
    mean_vec = np.sum(mean_acc, axis=0)
    mean = _maybe_project(mean_vec, project)
    if not finite_var:
        return mean, math.inf
    second = float(math.fsum(second_acc))
    if project is None:
        return mean, max(second - float(np.dot(mean_vec, mean_vec)), 0.0)
    return mean, max(second - mean**2, 0.0)


# ---------------------------------------------------------------------------
# theorem report

def _posterior_from_orderings(dist, k):
    """First-draw posterior per set, aggregated from the ordered sample space;
    independent of the leave-one-out kernels."""
    space = enumerate_ordered(dist, k)
    by_set: dict = {}
    for b, p in space.entries:
        key = tuple(sorted(b.indices.tolist()))
        vec = by_set.setdefault(key, {})
        first = int(b.indices[0])
        vec[first] = vec.get(first, 0.0) + p
    out = {}
    for key, vec in by_set.items():
        mass = math.fsum(vec.values())
        out[key] = np.array([vec.get(s, 0.0) / mass for s in key])
    return out


def _random_instance(gen, n):
    logits = gen.normal(0.0, 1.0, n)
    f = gen.normal(0.0, 1.0, n)
    return from_logits(logits), f


def theorem_report(
    n: int, k: int, cases: int, seed: int, quad_tol: float = 1e-9
) -> dict:
    """Run every identity check on random instances; JSON-ready report.

    Each check records its worst error across instances and whether it stayed
    within tolerance.
    """
    from . import setprob

    gen = np.random.default_rng(seed)
    errs: dict = {}

    def track(name, tol, value):
        rec = errs.setdefault(name, {"tolerance": tol, "max_abs_err": 0.0})
        rec["max_abs_err"] = max(rec["max_abs_err"], float(value))

    for _ in range(cases):
        dist, f = _random_instance(gen, n)
        param_grad = gen.normal(0.0, 1.0, (n, n))
        obj_full = Objective(f, param_grad)

        exact_e = exact_expectation(dist, f)
        exact_g = exact_gradient(dist, f)
        exact_g_full = exact_gradient(dist, obj_full)

        sets = enumerate_unordered(dist, k)
        posterior = _posterior_from_orderings(dist, k)

        mean_us, var_us = estimator_moments(est.UNORDERED_SET, dist, f, k)
        track("unordered-set-unbiased", 1e-9, abs(mean_us - exact_e))

        for s, _ in sets.entries:
            key = tuple(s.indices.tolist())
            us_val = est.unordered_set_estimate(dist, s.indices, f)
            post_val = float(np.dot(posterior[key], f[np.array(key)]))
            track("first-draw-posterior-matches-set-estimate", 1e-10, abs(post_val - us_val))

        mean, _ = estimator_moments(est.UNORDERED_SET_PG, dist, f, k)
        track("uspg-unbiased", 1e-9, np.max(np.abs(mean - exact_g)))
        mean, _ = estimator_moments(est.UNORDERED_SET_PG_BL, dist, f, k)
        track("uspg-baseline-unbiased", 1e-9, np.max(np.abs(mean - exact_g)))
        mean, _ = estimator_moments(est.FULL_UNORDERED_SET_PG, dist, obj_full, k)
        track("full-uspg-unbiased", 1e-9, np.max(np.abs(mean - exact_g_full)))

        cv_mean = np.zeros(n)
        for s, p in sets.entries:
            cv_mean = cv_mean + p * est.uspg_baseline_control_variate(dist, s.indices, f)
        track("control-variate-zero-mean", 1e-10, np.max(np.abs(cv_mean / sets.total)))

        splits = [1] + ([2] if k >= 3 else [])
        ordered = enumerate_ordered(dist, k)
        for m in splits:
            mean, var_sas = estimator_moments(est.stoch_sas_id(m), dist, f, k)
            track("stoch-sum-and-sample-unbiased", 1e-9, abs(mean - exact_e))
            cond: dict = {}
            for b, p in ordered.entries:
                key = tuple(sorted(b.indices.tolist()))
                val = est.stoch_sum_and_sample(dist, b.indices, f, m=m)
                tot, acc = cond.get(key, (0.0, 0.0))
                cond[key] = (tot + p, acc + p * val)
            for s, _ in sets.entries:
                key = tuple(s.indices.tolist())
                tot, acc = cond[key]
                us_val = est.unordered_set_estimate(dist, s.indices, f)
                track("stoch-sum-and-sample-conditional", 1e-10, abs(acc / tot - us_val))
            track("variance-dominance", 1e-10, max(0.0, var_us - var_sas))

        _, var_ss = estimator_moments(est.SINGLE_SAMPLE, dist, f, k)
        track("variance-dominance", 1e-10, max(0.0, var_us - var_ss))

        mean, _ = estimator_moments(est.DET_SUM_AND_SAMPLE, dist, f, max(k, 2))
        track("det-sum-and-sample-unbiased", 1e-9, abs(mean - exact_e))

        mean_iw, var_iw = estimator_moments(
            est.IMPORTANCE_WEIGHTED, dist, f, k, quad_tol=quad_tol
        )
        track("importance-weighted-unbiased", 1e-6, abs(mean_iw - exact_e))
        if math.isfinite(var_iw):
            track("variance-dominance", 1e-10, max(0.0, var_us - var_iw))
        for s, _ in sets.entries:
            cond_mean = conditional_iw_mean(dist, s.indices, f, tol=quad_tol)
            us_val = est.unordered_set_estimate(dist, s.indices, f)
            track("importance-weighted-conditional", 1e-6, abs(cond_mean - us_val))

        for s, _ in sets.entries:
            gd = est.risk_grad(dist, s.indices, f, form="direct").grad
            gb = est.risk_grad(dist, s.indices, f, form="baseline").grad
            track("risk-form-equivalence", 1e-10, np.max(np.abs(gd - gb)))

        mean, _ = estimator_moments(est.REINFORCE_WR, dist, f, k)
        track("reinforce-wr-unbiased", 1e-9, np.max(np.abs(mean - exact_g)))
        mean, _ = estimator_moments(est.REINFORCE_WR_BL, dist, f, k)
        track("reinforce-wr-baseline-unbiased", 1e-9, np.max(np.abs(mean - exact_g)))

        S_rand = tuple(sorted(gen.choice(n, size=min(k, 6), replace=False).tolist()))
        log_naive = setprob.p_set_naive(dist, S_rand)
        log_exact = setprob.p_set_exact(dist, S_rand)
        log_integral = setprob.p_set_integral(dist, S_rand)
        scale = max(abs(log_naive), abs(log_exact), abs(log_integral), 1.0)
        track("set-probability-backends-agree", 1e-8, abs(log_naive - log_exact) / scale)
        track("set-probability-backends-agree", 1e-8, abs(log_exact - log_integral) / scale)

    checks = [
        {
            "name": name,
            "tolerance": rec["tolerance"],
            "max_abs_err": rec["max_abs_err"],
            "passed": rec["max_abs_err"] <= rec["tolerance"],
        }
        for name, rec in sorted(errs.items())
    ]
    return {
        "schema_version": 1,
        "config": {"n": n, "k": k, "cases": cases, "seed": seed},
        "checks": checks,
        "all_passed": all(c["passed"] for c in checks),
    }
