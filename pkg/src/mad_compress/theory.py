"""Majority-concentration bounds and a discrete bottleneck model, checked numerically.

Mutual information is measured in bits throughout.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np


class DomainError(ValueError):
    """A parameter lies outside the region where the bounds are stated."""


@dataclass(frozen=True)
class TheoryParams:
    K: int = 5
    p: float = 0.9
    epsilon: float = 0.0
    gamma: float = 0.1
    delta: float = 0.1
    trials: int = 100_000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.K < 1:
            raise DomainError("K must be >= 1")
        if not 0.5 < self.p <= 1.0:
            raise DomainError(f"p must lie in (0.5, 1], got {self.p}")
        if self.epsilon < 0:
            raise DomainError("epsilon must be >= 0")
        # gamma = 0 is allowed as the limit of full artifact removal.
        if not 0.0 <= self.gamma < 1.0:
            raise DomainError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 0.0 < self.delta < 1.0:
            raise DomainError(f"delta must lie in (0, 1), got {self.delta}")
        if self.trials < 1:
            raise DomainError("trials must be >= 1")


# -- closed forms ---------------------------------------------------------------

def _check_kp(K: int, p: float) -> None:
    if K < 1:
        raise DomainError("K must be >= 1")
    if not 0.5 <= p <= 1.0:
        raise DomainError(f"p must lie in [0.5, 1], got {p}")


def hoeffding_failure(K: int, p: float) -> float:
    """exp(-2K(p - 1/2)^2), the complement of :func:`hoeffding_bound` without cancellation."""
    _check_kp(K, p)
    return math.exp(-2.0 * K * (p - 0.5) ** 2)


def hoeffding_bound(K: int, p: float) -> float:
    """Lower bound on P(S_K >= 1/2) for K independent agents each succeeding w.p. p."""
    _check_kp(K, p)
    return -math.expm1(-2.0 * K * (p - 0.5) ** 2)


def sample_complexity(p: float, delta: float) -> int:
    """Smallest K with hoeffding_bound(K, p) >= 1 - delta (never below 1)."""
    if not 0.5 < p <= 1.0:
        raise DomainError(f"p must lie in (0.5, 1], got {p}")
    if not 0.0 < delta < 1.0:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    k = max(1, math.ceil(math.log(1.0 / delta) / (2.0 * (p - 0.5) ** 2)))
    # Guard against the ratio landing a hair above an integer it should equal.
    while k > 1 and hoeffding_bound(k - 1, p) >= 1.0 - delta:
        k -= 1
    return k


def exact_majority(K: int, p: float) -> float:
    """P(Binomial(K, p) >= K/2), summed exactly."""
    _check_kp(K, p)
    lo = math.ceil(K / 2)
    return math.fsum(math.comb(K, j) * p**j * (1 - p) ** (K - j) for j in range(lo, K + 1))


# -- Monte Carlo ------------------------------------------------------------------

BLOCK = 1 << 15


def simulate_majority(params: TheoryParams) -> float:
    """Fraction of seeded trials with S_K >= 1/2; ties count as success."""
    K, p = params.K, params.p
    successes = 0
    for block, start in enumerate(range(0, params.trials, BLOCK)):
        n = min(BLOCK, params.trials - start)
        rng = np.random.default_rng(np.random.SeedSequence([params.seed, block]))
        hits = (rng.random((n, K)) < p).sum(axis=1)
        successes += int((2 * hits >= K).sum())
    return successes / params.trials


def mc_sigma(estimate: float, trials: int) -> float:
    return math.sqrt(max(estimate * (1.0 - estimate), 0.0) / trials)


# -- information --------------------------------------------------------------------

def plugin_mi(joint_counts) -> float:
    """Plug-in mutual information (bits) of a 2-D contingency table; weights need not be integers."""
    table = np.asarray(joint_counts, dtype=np.float64)
    if table.ndim != 2:
        raise ValueError("joint table must be 2-D")
    if np.any(table < 0) or not np.all(np.isfinite(table)):
        raise ValueError("joint table entries must be finite and non-negative")
    total = table.sum()
    if total <= 0:
        raise ValueError("joint table is empty")
    pxy = table / total
    px = pxy.sum(axis=1, keepdims=True)
    py = pxy.sum(axis=0, keepdims=True)
    nz = pxy > 0
    mi = float(np.sum(pxy[nz] * np.log2(pxy[nz] / (px @ py)[nz])))
    return max(mi, 0.0)


def mi_sigma(joint_counts) -> float:
    """Asymptotic standard error (bits) of :func:`plugin_mi` on a table of counts."""
    table = np.asarray(joint_counts, dtype=np.float64)
    n = table.sum()
    pxy = table / n
    ratio = pxy / (pxy.sum(axis=1, keepdims=True) @ pxy.sum(axis=0, keepdims=True))
    nz = pxy > 0
    logs = np.log2(ratio[nz])
    var = float(np.sum(pxy[nz] * logs**2) - np.sum(pxy[nz] * logs) ** 2)
    return math.sqrt(max(var, 0.0) / n)


def entropy(probs) -> float:
    p = np.asarray(probs, dtype=np.float64).ravel()
    p = p[p > 0] / p.sum()
    return float(-(p * np.log2(p)).sum())


# -- bottleneck model -----------------------------------------------------------------

ERASED = 2


@dataclass(frozen=True)
class BottleneckModel:
    """K agents see Y ~ Bern(1/2) through a binary symmetric channel and a private artifact bit.

    An agent's history H_i holds its noisy signal and, with probability
    ``artifact_visibility``, its artifact V_i (otherwise the artifact field is
    erased), so I(H_i; V_i) equals ``artifact_visibility`` bits. Compression keeps
    the signal with probability p and the artifact field with probability gamma,
    erasing them otherwise. The aggregate f is the majority of the visible
    signals (ties and the all-erased case go to the lowest-index visible signal,
    then to 0) plus, when ``artifact_coupled``, the visible artifact fields.
    """

    K: int = 5
    signal_flip: float = 0.1
    artifact_visibility: float = 0.5
    artifact_coupled: bool = True

    def __post_init__(self) -> None:
        if self.K < 1:
            raise DomainError("K must be >= 1")
        if not 0.0 <= self.signal_flip < 0.5:
            raise DomainError("signal_flip must lie in [0, 0.5); at 0.5 the signal carries nothing")
        if not 0.0 <= self.artifact_visibility <= 1.0:
            raise DomainError("artifact_visibility must be a probability")

    @property
    def mean_artifact_info(self) -> float:
        """The average of I(H_i; V_i) over agents, in bits."""
        return self.artifact_visibility


@dataclass(frozen=True)
class BottleneckReport:
    I_fY_compressed: float
    I_fY_uncompressed: float
    I_fV_compressed: float
    I_fV_uncompressed: float
    D_compressed: float
    D_uncompressed: float
    I_bottleneck_estimate: float
    mean_artifact_info: float
    artifact_margin: float  # (1 - gamma K) * mean_artifact_info - epsilon
    margin_holds: bool
    bias_bound: float = 0.0
    trials: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _majority_with_erasures(obs: np.ndarray) -> np.ndarray:
    """Row-wise majority over {0,1} entries of ``obs`` (ERASED ignored); ties to the lowest-index visible bit."""
    ones = (obs == 1).sum(axis=1)
    zeros = (obs == 0).sum(axis=1)
    visible = obs != ERASED
    first = np.where(visible.any(axis=1), obs[np.arange(len(obs)), visible.argmax(axis=1)], 0)
    return np.where(ones > zeros, 1, np.where(zeros > ones, 0, first)).astype(np.int64)


def _signal_outcomes(model: BottleneckModel, keep: float) -> tuple[np.ndarray, np.ndarray]:
    """Every joint signal observation with its probability under Y=0 and Y=1.

    Returns ``(obs [3^K, K], prob [2, 3^K])``.
    """
    eta = model.signal_flip
    obs = np.array(list(itertools.product((0, 1, ERASED), repeat=model.K)), dtype=np.int64)
    prob = np.ones((2, len(obs)))
    for y in (0, 1):
        per = np.where(obs == ERASED, 1 - keep, np.where(obs == y, keep * (1 - eta), keep * eta))
        prob[y] = per.prod(axis=1)
    return obs, prob


def _answer_joint(model: BottleneckModel, keep: float) -> np.ndarray:
    """Exact P(yhat, Y) as a 2x2 table."""
    obs, prob = _signal_outcomes(model, keep)
    yhat = _majority_with_erasures(obs)
    joint = np.zeros((2, 2))
    for y in (0, 1):
        joint[:, y] = 0.5 * np.bincount(yhat, weights=prob[y], minlength=2)
    return joint


def _artifact_field(vis: float) -> np.ndarray:
    """P(a_i, V_i) with a_i in {0, 1, erased}: rows a_i, columns V_i."""
    return np.array([[0.5 * vis, 0.0], [0.0, 0.5 * vis], [0.5 * (1 - vis), 0.5 * (1 - vis)]])


def _exact_terms(model: BottleneckModel, keep: float, pass_prob: float) -> tuple[float, float]:
    """Exact I(f;Y) and sum_i I(f;V_i) by enumerating the factorised joint over f's alphabet."""
    answer = _answer_joint(model, keep)
    if not model.artifact_coupled:
        return plugin_mi(answer), 0.0
    field = _artifact_field(model.artifact_visibility * pass_prob)
    marg = field.sum(axis=1)
    # f = (yhat, a_1..a_K) is independent of the artifacts given nothing about Y, so
    # P(f, Y) = P(yhat, Y) x prod P(a_j) and P(f, V_i) = P(yhat) x P(a_i, V_i) x prod_{j != i} P(a_j).
    others = np.ones(1)
    for _ in range(model.K - 1):
        others = np.kron(others, marg)
    f_y = np.kron(answer, np.kron(others, marg)[:, None])
    p_yhat = answer.sum(axis=1)
    f_v = np.kron(np.kron(p_yhat[:, None], field), others[:, None])
    return plugin_mi(f_y), model.K * plugin_mi(f_v)


def exact_bottleneck(model: BottleneckModel, params: TheoryParams) -> BottleneckReport:
    """Distances to the bottleneck with and without compression, with zero sampling noise."""
    if params.K != model.K:
        raise DomainError(f"params.K={params.K} but model.K={model.K}")
    i_b = plugin_mi(_answer_joint(model, 1.0))
    fy_u, fv_u = _exact_terms(model, 1.0, 1.0)
    fy_c, fv_c = _exact_terms(model, params.p, params.gamma)
    return _report(model, params, i_b, fy_u, fv_u, fy_c, fv_c)


def _report(model, params, i_b, fy_u, fv_u, fy_c, fv_c, *, bias=0.0, trials=0) -> BottleneckReport:
    d_u = abs(fy_u - i_b) + fv_u
    d_c = abs(fy_c - i_b) + fv_c
    margin = (1 - params.gamma * model.K) * model.mean_artifact_info - params.epsilon
    holds = (d_u - d_c) >= margin - bias if margin > 0 else True
    return BottleneckReport(fy_c, fy_u, fv_c, fv_u, d_c, d_u, i_b, model.mean_artifact_info,
                            margin, bool(holds), bias, trials)


def _f_index(yhat: np.ndarray, artifacts: np.ndarray | None) -> np.ndarray:
    if artifacts is None:
        return yhat
    weights = 3 ** np.arange(artifacts.shape[1])
    return yhat * 3 ** artifacts.shape[1] + artifacts @ weights


def _table(x: np.ndarray, y: np.ndarray, ny: int = 2) -> np.ndarray:
    _, xi = np.unique(x, return_inverse=True)
    return np.bincount(xi * ny + y, minlength=(xi.max() + 1) * ny).reshape(-1, ny)


def simulate_bottleneck(model: BottleneckModel, params: TheoryParams) -> BottleneckReport:
    """Sampled estimate of the same quantities, with plug-in MI and paired draws.

    Compressed and uncompressed histories share every random draw, and the
    artifact survives compression iff its uniform draw falls below gamma, so a
    gamma sweep at a fixed seed is a paired comparison.
    """
    if params.K != model.K:
        raise DomainError(f"params.K={params.K} but model.K={model.K}")
    K, n = model.K, params.trials
    rng = np.random.default_rng(np.random.SeedSequence([params.seed, 0]))
    y = rng.integers(0, 2, n)
    v = rng.integers(0, 2, (n, K))
    u_flip, u_vis, u_keep, u_pass = (rng.random((n, K)) for _ in range(4))
    signal = np.where(u_flip < model.signal_flip, 1 - y[:, None], y[:, None])
    seen = u_vis < model.artifact_visibility
    art_u = np.where(seen, v, ERASED)
    art_c = np.where(seen & (u_pass < params.gamma), v, ERASED)
    sig_c = np.where(u_keep < params.p, signal, ERASED)

    def terms(sig, art):
        f = _f_index(_majority_with_erasures(sig), art if model.artifact_coupled else None)
        fy = plugin_mi(_table(f, y))
        fv = sum(plugin_mi(_table(f, v[:, i])) for i in range(K)) if model.artifact_coupled else 0.0
        return fy, fv

    fy_u, fv_u = terms(signal, art_u)
    fy_c, fv_c = terms(sig_c, art_c)
    i_b = plugin_mi(_answer_joint(model, 1.0))
    alphabet = 2 * 3**K if model.artifact_coupled else 2
    bias = miller_bias_bound(alphabet, 2, n) * (K + 1)
    return _report(model, params, i_b, fy_u, fv_u, fy_c, fv_c, bias=bias, trials=n)


def miller_bias_bound(nx: int, ny: int, trials: int) -> float:
    """Upper estimate of the plug-in MI bias for independent variables, in bits."""
    return nx * ny / (2.0 * trials * math.log(2))


# -- reports --------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundRow:
    K: int
    p: float
    bound: float
    empirical: float
    sigma: float
    sample_complexity_consistent: bool

    @property
    def dominates(self) -> bool:
        return self.empirical >= self.bound - 3 * self.sigma


def bound_table(p_grid: Sequence[float], K_grid: Sequence[int], *, trials: int = 100_000,
                seed: int = 0, delta: float = 0.1) -> list[BoundRow]:
    """One row per (K, p): closed-form bound, seeded empirical majority rate, and whether
    ``K >= sample_complexity(p, delta)`` agrees with ``bound >= 1 - delta``."""
    if not p_grid or not K_grid:
        raise ValueError("grids must be non-empty")
    rows = []
    for K in K_grid:
        for p in p_grid:
            if p <= 0.5:
                raise DomainError(f"p must exceed 0.5, got {p}")
            b = hoeffding_bound(K, p)
            emp = simulate_majority(TheoryParams(K=K, p=p, trials=trials, seed=seed))
            consistent = (K >= sample_complexity(p, delta)) == (b >= 1 - delta)
            rows.append(BoundRow(K, p, b, emp, mc_sigma(emp, trials), consistent))
    return rows


def rows_to_csv(rows: Iterable) -> str:
    rows = list(rows)
    buf = io.StringIO()
    if not rows:
        return ""
    data = [asdict(r) for r in rows]
    writer = csv.DictWriter(buf, fieldnames=list(data[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(data)
    return buf.getvalue()


P_GRID = (0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95, 0.99)
K_GRID = tuple(range(1, 21))


def verify_all(*, trials: int = 100_000, seed: int = 0, p_grid=P_GRID, K_grid=K_GRID) -> dict:
    """Run every numerical check; returns {"checks": {name: bool}, "table": rows, "bottleneck": report}."""
    rows = bound_table(p_grid, K_grid, trials=trials, seed=seed)
    deltas = (0.5, 0.1, 0.05, 0.01, 0.001)
    agent_count = all(
        hoeffding_bound(sample_complexity(p, d), p) >= 1 - d for p in p_grid for d in deltas
    )
    decay = all(
        abs(math.log(hoeffding_failure(K, p)) + 2 * K * (p - 0.5) ** 2) <= 1e-12 * max(1.0, 2 * K)
        for p in p_grid for K in K_grid
    )
    model = BottleneckModel()
    exact = exact_bottleneck(model, TheoryParams(K=5, p=0.9, gamma=0.1))
    sweep = [exact_bottleneck(model, TheoryParams(K=5, p=0.9, gamma=g)).I_fV_compressed
             for g in (0.9, 0.5, 0.2, 0.1, 0.05, 0.0)]
    checks = {
        "bound_validity": all(r.dominates for r in rows),
        "sample_complexity_consistency": all(r.sample_complexity_consistent for r in rows),
        "agent_count": agent_count,
        "exponential_decay": decay,
        "distance_decreases": exact.D_compressed < exact.D_uncompressed,
        "distance_margin": exact.margin_holds,
        "artifact_decay": all(a >= b for a, b in zip(sweep, sweep[1:])),
    }
    return {"checks": checks, "table": rows, "bottleneck": exact}
