"""Brute-force numerical verification of the variational upper bound and
the surrogate-posterior decomposition on small synthetic Bayes models.

The toy construction keeps every integral exact: features live on the
real line, quantization noise makes each conditional a unit-width box,
and every density involved is piecewise constant between an explicit
set of breakpoints (bin edges and nearest-feature cell boundaries), so
integration is a finite sum of segment-length x value products.

Everything here is independent of the neural codec; log base is e.
"""

from dataclasses import dataclass, field

import numpy as np

_FLOOR = 1e-300


class TheoryError(RuntimeError):
    pass


@dataclass
class SemanticTask:
    """One semantic variable attached to the data distribution."""
    prior: np.ndarray            # (S,)
    x_given_s: np.ndarray        # (S, X) rows sum to 1
    s_posterior: np.ndarray      # (X, S) model table p(s | xhat = region r)
    weight: float                # lambda_i >= 0


@dataclass
class ToyBayesModel:
    """Finite Bayes model with a 1-D feature map and nearest-feature
    reconstruction."""
    x_prior: np.ndarray          # (X,)
    features: np.ndarray         # (X,) distinct reals: y = f(x) lookup
    x_posterior: np.ndarray      # (X, X): row r = p(x | xhat = region r)
    tasks: list = field(default_factory=list)

    def __post_init__(self):
        self.x_prior = np.asarray(self.x_prior, dtype=np.float64)
        self.features = np.asarray(self.features, dtype=np.float64)
        self.x_posterior = np.asarray(self.x_posterior, dtype=np.float64)
        n = len(self.x_prior)
        if len(np.unique(self.features)) != n:
            raise TheoryError("feature values must be distinct")
        _check_norm(self.x_prior, "x prior")
        for row in self.x_posterior:
            _check_norm(row, "x posterior row")
        for t in self.tasks:
            _check_norm(t.prior, "task prior")
            for row in t.x_given_s:
                _check_norm(row, "x|s row")
            for row in t.s_posterior:
                _check_norm(row, "s posterior row")
            joint_marginal = t.prior @ t.x_given_s
            if np.max(np.abs(joint_marginal - self.x_prior)) > 1e-9:
                raise TheoryError("task joint is inconsistent with the x prior")

    @property
    def lam_total(self):
        return sum(t.weight for t in self.tasks)


def _check_norm(v, what):
    if abs(float(np.sum(v)) - 1.0) > 1e-12:
        raise TheoryError(f"{what} does not sum to 1")
    if np.any(v < 0):
        raise TheoryError(f"{what} has negative entries")


def _log(v):
    return np.log(np.maximum(v, _FLOOR))


@dataclass
class Segmentation:
    """Piecewise-constant structure shared by all integrals."""
    lengths: np.ndarray    # (n_seg,)
    covers: np.ndarray     # (X, n_seg) 1 where segment lies inside bin I_j
    region: np.ndarray     # (n_seg,) nearest-feature index per segment


def segment(model):
    f = model.features
    edges = np.concatenate([f - 0.5, f + 0.5])
    order = np.argsort(f)
    mids = (f[order][1:] + f[order][:-1]) / 2.0
    edges = np.unique(np.concatenate([edges, mids]))
    lengths = np.diff(edges)
    keep = lengths > 0
    lengths = lengths[keep]
    centers = ((edges[:-1] + edges[1:]) / 2.0)[keep]
    covers = ((centers[None, :] > (f[:, None] - 0.5)) &
              (centers[None, :] < (f[:, None] + 0.5))).astype(np.float64)
    region = np.argmin(np.abs(centers[None, :] - f[:, None]), axis=0)
    return Segmentation(lengths, covers, region)


# ---------------------------------------------------------------------------
# the two sides of the bound


def eval_lhs(model, seg=None):
    """Weighted sum of KL divergences between the inference densities and
    the Bayes-composed generative densities (the quantity the bound
    upper-bounds)."""
    seg = seg or segment(model)
    px = model.x_prior
    p_marginal = px @ seg.covers  # density of the quantized-feature mixture

    total = 0.0
    for j in range(len(px)):
        in_bin = seg.covers[j] > 0
        # q(.|x_j) = 1 on its bin, so the KL integrand is -log p_theta
        p_theta = (model.x_posterior[seg.region[in_bin], j]
                   * p_marginal[in_bin] / max(px[j], _FLOOR))
        total += px[j] * float(np.sum(seg.lengths[in_bin] * -_log(p_theta)))

    for task in model.tasks:
        if task.weight == 0:
            continue
        acc = 0.0
        for s in range(len(task.prior)):
            qs = task.x_given_s[s] @ seg.covers
            p_theta = (task.s_posterior[seg.region, s]
                       * p_marginal / max(task.prior[s], _FLOOR))
            integrand = np.where(qs > 0, qs * (_log(np.maximum(qs, _FLOOR)) - _log(p_theta)), 0.0)
            acc += task.prior[s] * float(np.sum(seg.lengths * integrand))
        total += task.weight * acc
    return total


def rate_term(model, seg=None):
    """Expected -log of the feature-mixture density (the rate)."""
    seg = seg or segment(model)
    p_marginal = model.x_prior @ seg.covers
    mask = p_marginal > 0
    return float(np.sum(seg.lengths[mask] * p_marginal[mask] * -_log(p_marginal[mask])))


def rate_term_via_semantics(model, task, seg=None):
    """Same rate expectation taken over (s, y|s) instead of (x, y|x)."""
    seg = seg or segment(model)
    p_marginal = model.x_prior @ seg.covers
    acc = 0.0
    for s in range(len(task.prior)):
        qs = task.x_given_s[s] @ seg.covers
        mask = qs > 0
        acc += task.prior[s] * float(
            np.sum(seg.lengths[mask] * qs[mask] * -_log(p_marginal[mask])))
    return acc


def distortion_terms(model, seg=None):
    """(D0, [D_i per task]) under the model's posterior tables."""
    seg = seg or segment(model)
    px = model.x_prior
    d0 = 0.0
    for j in range(len(px)):
        in_bin = seg.covers[j] > 0
        d0 += px[j] * float(np.sum(
            seg.lengths[in_bin] * -_log(model.x_posterior[seg.region[in_bin], j])))
    d_tasks = []
    for task in model.tasks:
        acc = 0.0
        for s in range(len(task.prior)):
            qs = task.x_given_s[s] @ seg.covers
            acc += task.prior[s] * float(np.sum(
                seg.lengths * qs * -_log(task.s_posterior[seg.region, s])))
        d_tasks.append(acc)
    return d0, d_tasks


def eval_rhs(model, seg=None):
    """(1 + lambda) R + D0 + sum_i lambda_i D_i + T."""
    seg = seg or segment(model)
    r = rate_term(model, seg)
    d0, d_tasks = distortion_terms(model, seg)
    t_const = float(np.sum(model.x_prior * _log(model.x_prior)))
    for task in model.tasks:
        t_const += task.weight * float(np.sum(task.prior * _log(task.prior)))
    total = (1.0 + model.lam_total) * r + d0 + t_const
    for task, d_i in zip(model.tasks, d_tasks):
        total += task.weight * d_i
    return total


def conditional_bin_entropies(model, seg=None):
    """Differential entropy of each per-x quantization box (all zero)."""
    seg = seg or segment(model)
    ent = []
    for j in range(len(model.x_prior)):
        in_bin = seg.covers[j] > 0
        # density is exactly 1 on the unit bin: -1 * log 1 integrates to 0
        ent.append(float(np.sum(seg.lengths[in_bin] * 1.0 * _log(np.ones(in_bin.sum())))))
    return np.array(ent)


@dataclass
class Proposition1Result:
    lhs: float
    rhs: float
    gap: float
    passed: bool
    bin_entropy_max: float
    rate_identity_gap: float


def verify_proposition1(model, tol=1e-9):
    """Check LHS <= RHS plus the two sub-claims the proof rests on:
    zero-entropy quantization boxes and the change-of-expectation rate
    identity."""
    seg = segment(model)
    lhs = eval_lhs(model, seg)
    rhs = eval_rhs(model, seg)
    ok = lhs <= rhs + tol * max(1.0, abs(rhs))

    ent = conditional_bin_entropies(model, seg)
    ent_max = float(np.max(np.abs(ent))) if len(ent) else 0.0
    ok = ok and ent_max <= tol

    r = rate_term(model, seg)
    ident_gap = 0.0
    for task in model.tasks:
        r_s = rate_term_via_semantics(model, task, seg)
        ident_gap = max(ident_gap, abs(r - r_s))
    ok = ok and ident_gap <= tol * max(1.0, abs(r))
    return Proposition1Result(lhs, rhs, rhs - lhs, bool(ok), ent_max, ident_gap)


# ---------------------------------------------------------------------------
# surrogate-posterior decomposition


def induced_posterior(model, task, seg=None):
    """True p(s | xhat = region) implied by s -> x -> y-box -> region."""
    seg = seg or segment(model)
    n_x = len(model.x_prior)
    overlap = np.zeros((n_x, n_x))  # bin j vs region r
    for r in range(n_x):
        sel = seg.region == r
        overlap[:, r] = seg.covers[:, sel] @ seg.lengths[sel]
    p_region_given_s = task.x_given_s @ overlap          # (S, R)
    joint = task.prior[:, None] * p_region_given_s       # (S, R)
    p_region = joint.sum(axis=0)
    if np.any(p_region <= 0):
        raise TheoryError("unreachable reconstruction region")
    return (joint / p_region).T, p_region                # (R, S), (R,)


@dataclass
class Lemma1Result:
    d_true: float
    d_surrogate: float
    kl_term: float
    identity_gap: float
    passed: bool


def verify_lemma1(model, task, surrogate, tol=1e-9):
    """Check D_hat - D = E_region KL(p(s|xhat) || Q(s|xhat)) >= 0 with
    both sides brute-forced; D uses the induced true posterior."""
    surrogate = np.asarray(surrogate, dtype=np.float64)
    for row in surrogate:
        _check_norm(row, "surrogate row")
    seg = segment(model)
    post, p_region = induced_posterior(model, task, seg)
    joint = p_region[:, None] * post                     # (R, S)
    d_true = float(np.sum(joint * -_log(post)))
    d_sur = float(np.sum(joint * -_log(surrogate)))
    kl = float(np.sum(joint * (_log(post) - _log(surrogate))))
    gap = abs((d_sur - d_true) - kl)
    ok = gap <= tol * max(1.0, abs(d_sur)) and kl >= -tol
    return Lemma1Result(d_true, d_sur, kl, gap, bool(ok))


# ---------------------------------------------------------------------------
# random model generation


def _dirichlet_like(rng, shape):
    g = rng.gamma(1.0, 1.0, size=shape) + 1e-4
    return g / g.sum(axis=-1, keepdims=True)


def random_model(rng, n_x=None, n_s=None, n_tasks=1, max_weight=3.0):
    """Normalized positive tables with features on a jittered integer grid."""
    n_x = n_x or int(rng.integers(3, 21))
    n_s = n_s or int(rng.integers(2, 6))
    x_prior = _dirichlet_like(rng, n_x)
    features = np.arange(n_x) * rng.uniform(0.6, 1.6) + rng.uniform(-0.3, 0.3, n_x)
    if len(np.unique(features)) != n_x:  # astronomically unlikely; be safe
        features = features + np.arange(n_x) * 1e-6
    x_posterior = _dirichlet_like(rng, (n_x, n_x))
    tasks = []
    for _ in range(n_tasks):
        s_given_x = _dirichlet_like(rng, (n_x, n_s))      # (X, S)
        prior = x_prior @ s_given_x
        x_given_s = (x_prior[:, None] * s_given_x).T / prior[:, None]
        tasks.append(SemanticTask(
            prior=prior,
            x_given_s=x_given_s,
            s_posterior=_dirichlet_like(rng, (n_x, n_s)),
            weight=float(rng.uniform(0.0, max_weight)),
        ))
    return ToyBayesModel(x_prior, features, x_posterior, tasks)


def run_campaign(n_models=1000, n_surrogates=500, seed=0, tol=1e-9):
    """Monte-Carlo verification campaign; returns a JSON-friendly report."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7E0]))
    gaps = []
    worst_ident = 0.0
    failures = 0
    for _ in range(n_models):
        model = random_model(rng, n_tasks=int(rng.integers(1, 3)))
        res = verify_proposition1(model, tol=tol)
        failures += 0 if res.passed else 1
        gaps.append(res.gap)
        worst_ident = max(worst_ident, res.rate_identity_gap)

    lemma_failures = 0
    worst_lemma = 0.0
    for _ in range(n_surrogates):
        model = random_model(rng, n_tasks=1)
        n_s = len(model.tasks[0].prior)
        surrogate = _dirichlet_like(rng, (len(model.x_prior), n_s))
        res = verify_lemma1(model, model.tasks[0], surrogate, tol=tol)
        lemma_failures += 0 if res.passed else 1
        worst_lemma = max(worst_lemma, res.identity_gap)

    gaps_arr = np.asarray(gaps) if gaps else np.zeros(1)
    return {
        "models": n_models,
        "proposition1_failures": failures,
        "gap_min": float(gaps_arr.min()),
        "gap_mean": float(gaps_arr.mean()),
        "gap_max": float(gaps_arr.max()),
        "max_rate_identity_gap": worst_ident,
        "surrogates": n_surrogates,
        "lemma1_failures": lemma_failures,
        "max_lemma_identity_gap": worst_lemma,
        "tolerance": tol,
        "passed": failures == 0 and lemma_failures == 0,
        "gaps": [float(g) for g in gaps],
    }
