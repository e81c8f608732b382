"""Model-selection criteria: likelihood, Pareto score, MDL and Bayesian forms.

Six methods are exposed, all oriented so smaller is better:

  likelihood     -logL
  score          -log of the Pareto-front slope (front members only)
  mdl            per-parameter integer-code description length
  mdl_lm         lattice description length with the n-gram function prior
  mdl_fbf_lm     as mdl_lm but with the tempered-likelihood parameter prior
  bayes_fbf_lm   -log evidence (tempered, uniform base prior) - log prior

The tempered ("fractional") evidence uses a fraction b of the data as an
implicit training set; with a uniform base prior the information matrix
cancels and log Z = (1-b) logL + (p/2) log b.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .exprtree import ExprTree, canonical_form, parse_canonical
from .fit import (
    CompiledTree,
    Dataset,
    FitConfig,
    FitResult,
    FitStatus,
    _residual_loglike,
    negative_hessian,
)
from .ngram import NGramModel

LOG_2PI = math.log(2.0 * math.pi)
LOG_NU_RECTANGULAR = 1.0 - math.log(3.0)


class Method(str, Enum):
    LIKELIHOOD = "likelihood"
    SCORE = "score"
    MDL = "mdl"
    MDL_LM = "mdl_lm"
    MDL_FBF_LM = "mdl_fbf_lm"
    BAYES_FBF_LM = "bayes_fbf_lm"


ALL_METHODS = tuple(Method)
LM_METHODS = frozenset({Method.MDL_LM, Method.MDL_FBF_LM, Method.BAYES_FBF_LM})
FBF_METHODS = frozenset({Method.MDL_FBF_LM, Method.BAYES_FBF_LM})


def parse_methods(spec: str) -> list[Method]:
    if spec.strip().lower() == "all":
        return list(ALL_METHODS)
    return [Method(tok.strip().lower()) for tok in spec.split(",") if tok.strip()]


@dataclass(frozen=True)
class FBFConfig:
    """Training fraction b; default rule b = N^(-1/2)."""

    b: float | None = None
    rule: str = "sqrt"  # "sqrt" for N^(-1/2), "logn" for log(N)/N

    def fraction(self, n_data: int) -> float:
        if self.b is not None:
            b = self.b
        elif self.rule == "sqrt":
            b = n_data ** -0.5
        elif self.rule == "logn":
            b = math.log(n_data) / n_data if n_data > 1 else 1.0
        else:
            raise ValueError(f"unknown FBF rule: {self.rule}")
        if not 0.0 < b <= 1.0:
            raise ValueError(f"FBF fraction must be in (0, 1], got {b}")
        return b


@dataclass
class MetricValue:
    method: Method
    value: float
    parts: dict[str, float] = field(default_factory=dict)
    valid: bool = True
    reason: str = ""
    notes: tuple[str, ...] = ()

    @classmethod
    def invalid(cls, method: Method, reason: str) -> "MetricValue":
        return cls(method, math.inf, {}, False, reason)


def log_nu(p: int, lattice: str = "rectangular") -> float:
    """Per-parameter quantization-volume term of the lattice code.

    Rectangular: 1 - log 3 for every p. The optimal-lattice variant is
    implemented for p = 1 (kappa_1 = 1/12, which coincides with the
    rectangular value) and the large-p limit kappa -> 1/(2 pi e) used for
    p >= 2.
    """
    if lattice == "rectangular":
        return LOG_NU_RECTANGULAR
    if lattice == "optimal":
        kappa = 1.0 / 12.0 if p <= 1 else 1.0 / (2.0 * math.pi * math.e)
        return 1.0 + math.log(4.0 * kappa)
    raise ValueError(f"unknown lattice: {lattice}")


def _log_det_pd(info: np.ndarray) -> float:
    if info.shape[0] == 0:
        return 0.0
    sign, logdet = np.linalg.slogdet(info)
    if sign <= 0:
        raise ValueError("information matrix is not positive-definite")
    return float(logdet)


def laplace_log_evidence(fit: FitResult, log_prior_at_max: float,
                         info_posterior: np.ndarray) -> float:
    """log Z ~= log H_max + (p/2) log 2pi - (1/2) log det I_posterior."""
    p = fit.n_params
    log_h = fit.logL_hat + log_prior_at_max
    return log_h + 0.5 * p * LOG_2PI - 0.5 * _log_det_pd(np.asarray(info_posterior))


def fbf_log_evidence(fit: FitResult, b: float) -> float:
    """Tempered evidence for a uniform base prior: (1-b) logL + (p/2) log b."""
    if not 0.0 < b <= 1.0:
        raise ValueError(f"fraction b must be in (0, 1], got {b}")
    return (1.0 - b) * fit.logL_hat + 0.5 * fit.n_params * math.log(b)


def _structure_constants(tree: ExprTree) -> float:
    return float(sum(math.log(c) for c in tree.int_constants))


def description_length_esr(tree: ExprTree, fit: FitResult, *,
                           data: Dataset | None = None,
                           config: FitConfig | None = None) -> MetricValue:
    """Integer-code description length with per-parameter discretization.

    value = -logL + k log n - (p/2) log 3 + sum log c
            + sum_i [ (1/2) log I_ii + log |theta_i| ].

    A parameter whose codelength (1/2 log I_ii + log|theta_i| - 1/2 log 3)
    is negative is cheaper to transmit as zero: it is pinned to zero, the
    remaining parameters are refit and the codelength recomputed (requires
    `data`; the pinning decision is recorded in `notes`).
    """
    if fit.status in (FitStatus.INVALID_DOMAIN,):
        return MetricValue.invalid(Method.MDL, "no valid fit")
    if fit.n_params > 0 and fit.status == FitStatus.DEGENERATE_INFO:
        return MetricValue.invalid(Method.MDL, "degenerate observed information")

    theta_act = np.asarray(fit.theta_hat, dtype=float).copy()
    info_act = np.asarray(fit.info, dtype=float)
    logl = fit.logL_hat
    notes: list[str] = []
    active = list(range(tree.n_params))

    def codelengths() -> list[float]:
        return [0.5 * _safe_log(info_act[i, i]) + _safe_log(abs(theta_act[i]))
                - 0.5 * math.log(3.0)
                for i in range(len(active))]

    if data is not None and tree.n_params > 0:
        pinned: list[int] = []
        while active:
            codes = codelengths()
            worst = int(np.argmin(codes))
            if codes[worst] >= 0.0:
                break
            pinned.append(active.pop(worst))
            theta_act, logl, info_act = _refit_pinned(
                tree, data, config or FitConfig(), active)
            if not np.all(np.isfinite(info_act)) or (
                    len(active) and np.any(np.diag(info_act) <= 0)):
                return MetricValue.invalid(Method.MDL,
                                           "degenerate information after pinning")
        if pinned:
            notes.append(f"parameters pinned to zero: {sorted(pinned)}")

    p_eff = len(active)
    accuracy = -logl
    structure = tree.complexity * math.log(tree.n_ops) + _structure_constants(tree)
    param_term = -0.5 * p_eff * math.log(3.0)
    for i in range(p_eff):
        param_term += 0.5 * _safe_log(info_act[i, i]) + _safe_log(abs(theta_act[i]))
    if not math.isfinite(param_term):
        return MetricValue.invalid(Method.MDL, "non-finite parameter codelength")
    value = accuracy + structure + param_term
    return MetricValue(Method.MDL, value,
                       {"accuracy": accuracy, "structure": structure,
                        "parameters": param_term},
                       notes=tuple(notes))


def _safe_log(v: float) -> float:
    return math.log(v) if v > 0 else -math.inf


def _refit_pinned(tree: ExprTree, data: Dataset, config: FitConfig,
                  active: list[int]):
    """Refit with all parameters outside `active` fixed at zero."""
    compiled = CompiledTree(tree)
    p_full = tree.n_params

    def expand(sub: np.ndarray) -> np.ndarray:
        full = np.zeros(p_full)
        for i, j in enumerate(active):
            full[j] = sub[i]
        return full

    if not active:
        theta = np.zeros(0)
        ll = _residual_loglike(compiled(np.zeros(p_full), data.x, config.abs_pow), data)
        return theta, ll, np.empty((0, 0))

    def f(sub: np.ndarray) -> float:
        ll = _residual_loglike(compiled(expand(sub), data.x, config.abs_pow), data)
        return -ll if math.isfinite(ll) else 1e10

    from scipy import optimize as _opt

    best = None
    start_sets = [np.ones(len(active))]
    from .util import rng_for
    rng = rng_for(config.seed, "pin-refit", canonical_form(tree), len(active))
    for _ in range(max(config.restarts // 2, 3)):
        mag = np.exp(rng.uniform(math.log(config.start_magnitude[0]),
                                 math.log(config.start_magnitude[1]), len(active)))
        start_sets.append(mag * rng.choice([-1.0, 1.0], len(active)))
    for s in start_sets:
        res = _opt.minimize(f, s, method="Nelder-Mead",
                            options={"maxiter": config.max_iters * len(active),
                                     "xatol": 1e-6, "fatol": config.tol})
        if best is None or res.fun < best.fun:
            best = res
    sub = np.asarray(best.x)
    ll = -float(best.fun)

    def target(subv: np.ndarray) -> float:
        v = _residual_loglike(compiled(expand(subv), data.x, config.abs_pow), data)
        return v if math.isfinite(v) else -1e10

    info = negative_hessian(target, sub)
    return sub, ll, info


def description_length_lattice(tree: ExprTree, fit: FitResult, log_fn_prior: float,
                               log_nu_p: float = LOG_NU_RECTANGULAR) -> MetricValue:
    """Joint-discretization description length with an explicit function prior.

    value = -logL + (1/2) log det I + (p/2) log nu_p
            - log P(f) + sum log c.
    """
    if fit.status == FitStatus.INVALID_DOMAIN:
        return MetricValue.invalid(Method.MDL_LM, "no valid fit")
    if fit.n_params > 0 and fit.status == FitStatus.DEGENERATE_INFO:
        return MetricValue.invalid(Method.MDL_LM, "degenerate observed information")
    if not math.isfinite(log_fn_prior):
        return MetricValue.invalid(Method.MDL_LM, "function prior is zero")
    p = fit.n_params
    accuracy = -fit.logL_hat
    try:
        param_term = 0.5 * _log_det_pd(np.asarray(fit.info)) + 0.5 * p * log_nu_p
    except ValueError:
        return MetricValue.invalid(Method.MDL_LM, "information not positive-definite")
    structure = -log_fn_prior + _structure_constants(tree)
    return MetricValue(Method.MDL_LM, accuracy + param_term + structure,
                       {"accuracy": accuracy, "parameters": param_term,
                        "structure": structure})


def fbf_description_length(tree: ExprTree, fit: FitResult, log_fn_prior: float,
                           b: float, log_nu_p: float = LOG_NU_RECTANGULAR, *,
                           include_nu: bool = True) -> MetricValue:
    """Lattice description length under the tempered parameter prior.

    With a uniform base prior the information determinant cancels:

    value = -(1-b) logL + (p/2)(log 2pi - log b [+ log nu_p])
            - log P(f) + sum log c.
    """
    if fit.status == FitStatus.INVALID_DOMAIN:
        return MetricValue.invalid(Method.MDL_FBF_LM, "no valid fit")
    if not math.isfinite(log_fn_prior):
        return MetricValue.invalid(Method.MDL_FBF_LM, "function prior is zero")
    if not 0.0 < b < 1.0:
        return MetricValue.invalid(Method.MDL_FBF_LM,
                                   f"degenerate training fraction b={b}")
    p = fit.n_params
    accuracy = -(1.0 - b) * fit.logL_hat
    param_term = 0.5 * p * (LOG_2PI - math.log(b) + (log_nu_p if include_nu else 0.0))
    structure = -log_fn_prior + _structure_constants(tree)
    return MetricValue(Method.MDL_FBF_LM, accuracy + param_term + structure,
                       {"accuracy": accuracy, "parameters": param_term,
                        "structure": structure})


def bayes_fbf_value(tree: ExprTree, fit: FitResult, log_fn_prior: float,
                    b: float) -> MetricValue:
    """-log posterior mass: -(FBF log evidence) - log P(f)."""
    if fit.status == FitStatus.INVALID_DOMAIN:
        return MetricValue.invalid(Method.BAYES_FBF_LM, "no valid fit")
    if not math.isfinite(log_fn_prior):
        return MetricValue.invalid(Method.BAYES_FBF_LM, "function prior is zero")
    if not 0.0 < b < 1.0:
        return MetricValue.invalid(Method.BAYES_FBF_LM,
                                   f"degenerate training fraction b={b}")
    accuracy = -(1.0 - b) * fit.logL_hat
    param_term = -0.5 * fit.n_params * math.log(b)
    structure = -log_fn_prior
    return MetricValue(Method.BAYES_FBF_LM, accuracy + param_term + structure,
                       {"accuracy": accuracy, "parameters": param_term,
                        "structure": structure})


def likelihood_value(fit: FitResult) -> MetricValue:
    if fit.status == FitStatus.INVALID_DOMAIN:
        return MetricValue.invalid(Method.LIKELIHOOD, "no valid fit")
    return MetricValue(Method.LIKELIHOOD, -fit.logL_hat,
                       {"accuracy": -fit.logL_hat})


def pareto_scores(points: Sequence[tuple[int, float]]) -> list[float | None]:
    """Score per input point; None off the accuracy-complexity front.

    The front keeps the best log-likelihood per complexity, strictly
    improving with complexity. A front member's score is the
    log-likelihood gain per unit complexity over the previous front
    member; the first member has no predecessor and no score.
    """
    if not points:
        raise ValueError("empty candidate list")
    best_at: dict[int, tuple[float, int]] = {}
    for idx, (k, ll) in enumerate(points):
        if math.isfinite(ll) and (k not in best_at or ll > best_at[k][0]):
            best_at[k] = (ll, idx)
    front: list[tuple[int, float, int]] = []
    best_ll = -math.inf
    for k in sorted(best_at):
        ll, idx = best_at[k]
        if ll > best_ll:
            front.append((k, ll, idx))
            best_ll = ll
    scores: list[float | None] = [None] * len(points)
    for (k0, ll0, _), (k1, ll1, idx1) in zip(front, front[1:]):
        scores[idx1] = (ll1 - ll0) / (k1 - k0)
    return scores


def score_values(points: Sequence[tuple[int, float]]) -> list[MetricValue]:
    values = []
    for s in pareto_scores(points):
        if s is None:
            values.append(MetricValue.invalid(Method.SCORE, "not scored on the Pareto front"))
        elif s <= 0:
            values.append(MetricValue.invalid(Method.SCORE, "non-positive front slope"))
        else:
            values.append(MetricValue(Method.SCORE, -math.log(s),
                                      {"neg_log_score": -math.log(s)}))
    return values


# ---------------------------------------------------------------------------
# Ranking
# ---------------------------------------------------------------------------

@dataclass
class RankEntry:
    canonical: str
    complexity: int
    n_params: int
    logL_hat: float
    fit_status: str
    values: dict[Method, MetricValue]
    log_fn_prior: float | None = None
    truth: bool | None = None


@dataclass
class Ranking:
    methods: list[Method]
    entries: list[RankEntry]
    order: dict[Method, list[int]]
    unranked: dict[Method, list[tuple[int, str]]]
    b: float | None = None
    meta: dict = field(default_factory=dict)

    def best(self, method: Method) -> RankEntry | None:
        idxs = self.order.get(method, [])
        return self.entries[idxs[0]] if idxs else None

    def deltas(self, method: Method) -> dict[int, float]:
        """Value minus the rank-1 value, per ranked entry index."""
        idxs = self.order.get(method, [])
        if not idxs:
            return {}
        best = self.entries[idxs[0]].values[method].value
        return {i: self.entries[i].values[method].value - best for i in idxs}

    def to_csv(self) -> str:
        lines = []
        for key, val in self.meta.items():
            lines.append(f"# {key}: {val}")
        cols = ["canonical", "complexity"]
        for m in self.methods:
            cols += [f"value_{m.value}", f"delta_{m.value}", f"valid_{m.value}"]
        lines.append(",".join(cols))
        deltas = {m: self.deltas(m) for m in self.methods}
        primary = self.methods[0]
        pos = {idx: r for r, idx in enumerate(self.order.get(primary, []))}
        def sort_key(i):
            e = self.entries[i]
            return (pos.get(i, math.inf), e.complexity, e.canonical)
        for i in sorted(range(len(self.entries)), key=sort_key):
            e = self.entries[i]
            row = [f"\"{e.canonical}\"", str(e.complexity)]
            for m in self.methods:
                mv = e.values.get(m)
                if mv is None or not mv.valid:
                    row += ["", "", "0"]
                else:
                    row += [f"{mv.value:.10g}", f"{deltas[m].get(i, math.nan):.10g}", "1"]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


def rank(trees: Sequence[ExprTree], fits: Sequence[FitResult],
         model: NGramModel | None, data: Dataset,
         methods: Sequence[Method] = ALL_METHODS, *,
         fbf: FBFConfig = FBFConfig(),
         lattice: str = "rectangular",
         include_nu: bool = True,
         esr_refit_data: bool = True,
         fit_config: FitConfig | None = None,
         meta: dict | None = None) -> Ranking:
    """Assemble per-method rankings over fitted candidates.

    Candidates are grouped by canonical form (one entry per family, best
    variant per method); per method, entries sort ascending by value with
    ties broken by (complexity, canonical string); invalid entries are
    listed separately with reasons.
    """
    methods = list(methods)
    if len(trees) != len(fits):
        raise ValueError("trees and fits must align")
    b = fbf.fraction(data.n) if any(m in FBF_METHODS for m in methods) else None
    need_prior = any(m in LM_METHODS for m in methods)
    if need_prior and model is None:
        raise ValueError("LM-based methods need a trained n-gram model")
    if need_prior:
        tokens = {nd.symbol for t in trees for nd in t.nodes}
        model = model.extend_vocabulary(tokens)

    canonicals = [canonical_form(t) for t in trees]
    points = [(t.complexity, f.logL_hat) for t, f in zip(trees, fits)]
    scores = score_values(points) if Method.SCORE in methods else None

    # the tree-structure prior is order-sensitive for commutative operands,
    # so it is evaluated on the canonical representative: every spelling of
    # a family gets the same prior
    prior_cache: dict[str, float] = {}

    def prior_of(canon: str) -> float:
        if canon not in prior_cache:
            prior_cache[canon] = model.log_prior(parse_canonical(canon))
        return prior_cache[canon]

    per_function: list[dict[Method, MetricValue]] = []
    priors: list[float | None] = []
    for i, (tree, fit) in enumerate(zip(trees, fits)):
        lp = prior_of(canonicals[i]) if need_prior else None
        priors.append(lp)
        vals: dict[Method, MetricValue] = {}
        for m in methods:
            if m == Method.LIKELIHOOD:
                vals[m] = likelihood_value(fit)
            elif m == Method.SCORE:
                vals[m] = scores[i]
            elif m == Method.MDL:
                vals[m] = description_length_esr(
                    tree, fit, data=data if esr_refit_data else None,
                    config=fit_config)
            elif m == Method.MDL_LM:
                vals[m] = description_length_lattice(
                    tree, fit, lp, log_nu(tree.n_params, lattice))
            elif m == Method.MDL_FBF_LM:
                vals[m] = fbf_description_length(
                    tree, fit, lp, b, log_nu(tree.n_params, lattice),
                    include_nu=include_nu)
            elif m == Method.BAYES_FBF_LM:
                vals[m] = bayes_fbf_value(tree, fit, lp, b)
        per_function.append(vals)

    # one entry per canonical family; per method keep the best variant
    entry_of: dict[str, int] = {}
    entries: list[RankEntry] = []
    for i, canon in enumerate(canonicals):
        if canon not in entry_of:
            entry_of[canon] = len(entries)
            entries.append(RankEntry(canon, trees[i].complexity, trees[i].n_params,
                                     fits[i].logL_hat, fits[i].status.value,
                                     dict(per_function[i]), priors[i]))
            continue
        e = entries[entry_of[canon]]
        for m in methods:
            old, new = e.values[m], per_function[i][m]
            if (new.valid and not old.valid) or (new.valid and new.value < old.value):
                e.values[m] = new
        if fits[i].logL_hat > e.logL_hat:
            e.logL_hat = fits[i].logL_hat

    order: dict[Method, list[int]] = {}
    unranked: dict[Method, list[tuple[int, str]]] = {}
    for m in methods:
        ranked = [i for i, e in enumerate(entries) if e.values[m].valid]
        ranked.sort(key=lambda i: (entries[i].values[m].value,
                                   entries[i].complexity, entries[i].canonical))
        order[m] = ranked
        unranked[m] = [(i, entries[i].values[m].reason)
                       for i, e in enumerate(entries) if not e.values[m].valid]
    return Ranking(methods, entries, order, unranked, b, meta or {})
