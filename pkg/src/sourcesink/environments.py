"""Time-varying habitat quality: periodic schedules and Markov switching.

Periodic two-state environments reduce to the fixed-environment machinery
through the two-step mean matrix A(e1)A(e2) and through the chain of
consecutive patch pairs (the edge chain), whose cost/payoff maximum equals
twice the log growth rate.  Random Markov environments lose those exact
reductions; there the growth exponent is the top Lyapunov exponent of the
random product of per-state mean matrices, estimated by simulation, with a
closed-form lower bound available for the two-patch case.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .graph import MetapopGraph, validate_graph
from .spectral import growth_rate
from .variational import argmax_occupancy, max_rate_gap
from .walks import (
    PersistenceVerdict,
    WalkConfig,
    _trial_rng,
    _verdict_from_value,
    return_functional,
)

LYAPUNOV_BURN_IN = 1000
LYAPUNOV_BATCHES = 100
LYAPUNOV_DEFAULT_STEPS = 10**6


@dataclass(frozen=True)
class Periodic:
    """Deterministic schedule: state indices applied cyclically per step."""

    order: tuple[int, ...]

    def __post_init__(self):
        if len(self.order) == 0:
            raise ValidationError("periodic schedule must not be empty")


@dataclass(frozen=True)
class MarkovSwitching:
    """Two-state environment chain: alpha = P(e1 -> e2), beta = P(e2 -> e1)."""

    alpha: float
    beta: float

    def __post_init__(self):
        for name, x in (("alpha", self.alpha), ("beta", self.beta)):
            if not 0.0 <= x <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1]")
        if self.alpha == 0.0 and self.beta == 0.0:
            raise ValidationError("environment chain must be able to switch")

    @property
    def nu(self) -> float:
        """Long-run fraction of time in the first state."""
        return self.beta / (self.alpha + self.beta)


@dataclass(frozen=True)
class EnvironmentModel:
    """Named environment states with per-state patch means and a schedule."""

    states: tuple[str, ...]
    means: np.ndarray  # (n_states, K)
    schedule: Periodic | MarkovSwitching

    def __post_init__(self):
        means = np.asarray(self.means, dtype=float)
        if means.ndim != 2 or means.shape[0] != len(self.states):
            raise ValidationError("means must be one row of patch means per state")
        if np.any(means < 0) or not np.all(np.isfinite(means)):
            raise ValidationError("environment means must be finite and >= 0")
        if isinstance(self.schedule, Periodic):
            if any(not 0 <= i < len(self.states) for i in self.schedule.order):
                raise ValidationError("periodic schedule names an unknown state")
        elif isinstance(self.schedule, MarkovSwitching):
            if len(self.states) != 2:
                raise ValidationError("Markov switching is defined for two states")
        else:
            raise ValidationError("schedule must be Periodic or MarkovSwitching")
        means = means.copy()
        means.flags.writeable = False
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "states", tuple(self.states))

    @property
    def n_states(self) -> int:
        return len(self.states)

    def to_dict(self) -> dict:
        d = {"states": list(self.states), "means": self.means.tolist()}
        if isinstance(self.schedule, Periodic):
            d["schedule"] = {"periodic": [self.states[i] for i in self.schedule.order]}
        else:
            d["schedule"] = {
                "markov": {"alpha": self.schedule.alpha, "beta": self.schedule.beta}
            }
        return d


def load_environment(source: str | Path | dict) -> EnvironmentModel:
    """Build an environment model from a JSON file path or parsed dict."""
    if isinstance(source, (str, Path)):
        with open(source) as f:
            source = json.load(f)
    for key in ("states", "means", "schedule"):
        if key not in source:
            raise ValidationError(f'environment JSON needs key "{key}"')
    states = tuple(source["states"])
    sched = source["schedule"]
    if "periodic" in sched:
        index = {s: i for i, s in enumerate(states)}
        try:
            order = tuple(index[s] for s in sched["periodic"])
        except KeyError as e:
            raise ValidationError(f"periodic schedule names unknown state {e}")
        schedule = Periodic(order)
    elif "markov" in sched:
        schedule = MarkovSwitching(
            alpha=float(sched["markov"]["alpha"]), beta=float(sched["markov"]["beta"])
        )
    else:
        raise ValidationError('schedule must contain "periodic" or "markov"')
    return EnvironmentModel(states=states, means=source["means"], schedule=schedule)


def state_mean_matrix(g: MetapopGraph, env: EnvironmentModel, state: int) -> np.ndarray:
    """Mean matrix in one environment state: means[state][i] * D[i, j]."""
    return env.means[state][:, None] * g.D


def periodic_mean_matrix(g: MetapopGraph, env: EnvironmentModel) -> np.ndarray:
    """Ordered product of per-state mean matrices over one schedule period.

    For the canonical two-state alternation this is the two-step mean
    matrix A(e1) A(e2); longer schedules generalize by taking the product
    in schedule order.
    """
    if not isinstance(env.schedule, Periodic):
        raise ValidationError("periodic mean matrix needs a periodic schedule")
    out = np.eye(g.K)
    for s in env.schedule.order:
        out = out @ state_mean_matrix(g, env, s)
    return out


def two_patch_periodic_criterion(
    M1: float, M2: float, m1: float, m2: float, p: float, q: float
) -> PersistenceVerdict:
    """Exact persistence test for two patches under a two-state alternation.

    M1, M2 are the first patch's means in states e1, e2; m1, m2 the second
    patch's.  Persistence holds iff the two-step trace term exceeds
    min(2, 1 + det of the two-step matrix); the verdict value is that
    ratio, so > 1 means persistence.
    """
    for name, x in (("p", p), ("q", q)):
        if not 0.0 <= x <= 1.0:
            raise ValidationError(f"{name} must lie in [0, 1]")
    for name, x in (("M1", M1), ("M2", M2), ("m1", m1), ("m2", m2)):
        if x < 0:
            raise ValidationError(f"{name} must be >= 0")
    lhs = (
        M1 * M2 * (1.0 - p) ** 2
        + (M1 * m2 + m1 * M2) * p * q
        + m1 * m2 * (1.0 - q) ** 2
    )
    rhs = min(2.0, 1.0 + M1 * M2 * m1 * m2 * (1.0 - p - q) ** 2)
    return _verdict_from_value(lhs / rhs, "periodic-closed-form")


def _phase_matrices(g: MetapopGraph, env: EnvironmentModel) -> dict[str, np.ndarray]:
    if not isinstance(env.schedule, Periodic) or len(env.schedule.order) != 2:
        raise ValidationError("even-return analysis needs a two-state alternation")
    a, b = env.schedule.order
    Aa = state_mean_matrix(g, env, a)
    Ab = state_mean_matrix(g, env, b)
    return {env.states[a]: Aa @ Ab, env.states[b]: Ab @ Aa}


def even_return_functional(
    g: MetapopGraph,
    env: EnvironmentModel,
    home: int = 0,
    cfg: WalkConfig | None = None,
    method: str = "exact",
) -> dict[str, PersistenceVerdict]:
    """Persistence via first return of the walker to home at an even time.

    Observing the population every second generation gives a branching
    process whose mean matrix is the ordered two-step product, so the
    fixed-environment return machinery applies to it directly.  Results
    are keyed by the starting state (the value depends on the phase; the
    persistence verdict does not).
    """
    if not 0 <= home < g.K:
        raise ValidationError(f"home patch {home} out of range")
    if not isinstance(env.schedule, Periodic) or len(env.schedule.order) != 2:
        raise ValidationError("even-return analysis needs a two-state alternation")
    if not validate_graph(g).irreducible:
        raise ValidationError("even-return criterion needs an irreducible graph")
    if method == "exact":
        return {
            phase: _verdict_from_value(return_functional(A2, home), "exact-linear-system")
            for phase, A2 in _phase_matrices(g, env).items()
        }
    if method == "monte-carlo":
        cfg = cfg or WalkConfig(start_patch=home)
        a, b = env.schedule.order
        out = {}
        for first, second in ((a, b), (b, a)):
            out[env.states[first]] = _even_return_mc(g, env, home, cfg, (first, second))
        return out
    raise ValidationError(f"unknown method {method!r}")


def _even_return_mc(g, env, home, cfg, phase_order) -> PersistenceVerdict:
    cum = np.cumsum(g.D, axis=1)
    cum[:, -1] = 1.0
    cum_rows = [row.tolist() for row in cum]
    means = env.means
    n = cfg.n_trials
    vals = np.empty(n)
    truncated = 0
    m_start = means[phase_order[0]][home]
    for t in range(n):
        rng = _trial_rng(cfg.seed, t)
        pos = home
        prod = 1.0
        steps = 0
        done = False
        while steps < cfg.max_steps and not done:
            for u in rng.random(64):
                pos = bisect.bisect_right(cum_rows[pos], u)
                steps += 1
                if pos == home and steps % 2 == 0:
                    done = True
                    break
                prod *= means[phase_order[steps % 2]][pos]
                if steps >= cfg.max_steps:
                    break
        if not done:
            truncated += 1
        vals[t] = m_start * prod
    est = float(vals.mean())
    ci = float(1.96 * vals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return PersistenceVerdict(
        value=est,
        persists=est > 1.0,
        method="monte-carlo",
        ci_halfwidth=ci,
        truncated_mass=truncated / n,
    )


@dataclass(frozen=True)
class EdgeChainResult:
    """Edge-chain variational output for a two-state periodic environment.

    ``two_log_growth`` is the maximum of payoff minus cost over edge
    frequencies, which equals 2 log(rho); ``occupancy_edges`` is the K x K
    matrix of optimal pair frequencies (zero on non-edges), and the two
    marginals are the patch occupancies at even and odd steps.  The
    spectral growth rate of the two-step product is carried alongside as a
    cross-check.
    """

    two_log_growth: float
    log_growth: float
    occupancy_edges: np.ndarray
    marginal_even: np.ndarray
    marginal_odd: np.ndarray
    method: str
    log_growth_spectral: float


def edge_chain(g: MetapopGraph, env: EnvironmentModel) -> tuple[MetapopGraph, list[tuple[int, int]]]:
    """The chain of consecutive patch pairs, packaged as a graph.

    States are the ordered pairs (i, j) with D[i, j] > 0 (other pairs are
    never visited); transition ((i, j) -> (k, l)) = D[j, k] D[k, l]; the
    per-state mean is m_i(e1) m_j(e2), the two-generation factor the pair
    contributes.
    """
    if not isinstance(env.schedule, Periodic) or len(env.schedule.order) != 2:
        raise ValidationError("the edge chain needs a two-state alternation")
    a, b = env.schedule.order
    pairs = [(i, j) for i in range(g.K) for j in range(g.K) if g.D[i, j] > 0]
    idx = {e: n for n, e in enumerate(pairs)}
    n = len(pairs)
    B = np.zeros((n, n))
    for (i, j), row in zip(pairs, range(n)):
        for (k, l), col in zip(pairs, range(n)):
            B[row, col] = g.D[j, k] * g.D[k, l]
    m_edge = np.array([env.means[a][i] * env.means[b][j] for (i, j) in pairs])
    labels = tuple(f"{i}->{j}" for (i, j) in pairs)
    return MetapopGraph(m=m_edge, D=B, labels=labels), pairs


def periodic_growth_and_occupancy(
    g: MetapopGraph, env: EnvironmentModel, method: str = "twisted-eigen"
) -> EdgeChainResult:
    """Edge-chain variational solution of a two-state periodic environment.

    Requires positive means in both states and a primitive edge chain (a
    periodic edge chain is rejected, matching the fixed-environment rule).
    """
    if np.any(env.means <= 0):
        raise ValidationError("edge-chain analysis needs positive means in all states")
    eg, pairs = edge_chain(g, env)
    report = validate_graph(eg)
    if not report.irreducible:
        raise ValidationError("edge chain is not irreducible")
    if not report.aperiodic:
        raise ValidationError("edge chain is periodic; the occupancy theory needs aperiodicity")
    if method == "twisted-eigen":
        res = argmax_occupancy(eg)
    elif method == "simplex-optimize":
        res = max_rate_gap(eg)
    else:
        raise ValidationError(f"unknown method {method!r}")
    phi = np.zeros((g.K, g.K))
    for (i, j), val in zip(pairs, res.occupancy):
        phi[i, j] = val
    rho_prod = growth_rate(periodic_mean_matrix(g, env)).rho
    return EdgeChainResult(
        two_log_growth=res.log_growth,
        log_growth=0.5 * res.log_growth,
        occupancy_edges=phi,
        marginal_even=phi.sum(axis=1),
        marginal_odd=phi.sum(axis=0),
        method=res.method,
        log_growth_spectral=0.5 * math.log(rho_prod),
    )


@dataclass(frozen=True)
class LyapunovEstimate:
    """Simulated growth exponent of a random product of mean matrices."""

    gamma: float
    ci_halfwidth: float
    n_steps: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "ci": self.ci_halfwidth,
            "n_steps": self.n_steps,
            "seed": self.seed,
        }


def _markov_env_path(sched: MarkovSwitching, n: int, rng) -> np.ndarray:
    """A length-n sample of the two-state chain, started at stationarity.

    Sojourns are geometric (and memoryless, so the stationary first
    sojourn is a full geometric draw too); whole alternating runs are
    drawn in bulk and expanded with repeat.
    """
    if sched.alpha <= 0.0 or sched.beta <= 0.0:
        raise ValidationError("environment chain must be irreducible (alpha, beta > 0)")
    leave = (sched.alpha, sched.beta)
    cur = 0 if rng.random() < sched.nu else 1
    pieces = []
    total = 0
    while total < n:
        k = max(64, int((n - total) * max(leave) // 2) + 64)
        lens = np.empty(2 * k, dtype=np.int64)
        lens[0::2] = rng.geometric(leave[cur], size=k)
        lens[1::2] = rng.geometric(leave[1 - cur], size=k)
        states = np.empty(2 * k, dtype=np.int8)
        states[0::2] = cur
        states[1::2] = 1 - cur
        pieces.append(np.repeat(states, lens))
        total += int(lens.sum())
    return np.concatenate(pieces)[:n]


def lyapunov_estimate(
    g: MetapopGraph,
    env: EnvironmentModel,
    n_steps: int = LYAPUNOV_DEFAULT_STEPS,
    seed: int = 0,
) -> LyapunovEstimate:
    """Growth exponent of the random environment by direct propagation.

    A positive row vector is pushed through the per-state mean matrices
    along one simulated environment path, renormalized in l1 each step;
    the average log renormalizer estimates the exponent.  The first 1000
    steps are discarded and the CI comes from batch means over 100 equal
    batches.
    """
    if not isinstance(env.schedule, MarkovSwitching):
        raise ValidationError("Lyapunov estimation needs a Markov-switching schedule")
    if not validate_graph(g).irreducible:
        raise ValidationError("Lyapunov estimation needs an irreducible graph")
    if n_steps <= LYAPUNOV_BURN_IN + LYAPUNOV_BATCHES:
        raise ValidationError("n_steps too small for burn-in plus batching")
    rng = _trial_rng(seed, 0)
    w = _markov_env_path(env.schedule, n_steps + LYAPUNOV_BURN_IN, rng)
    batch = n_steps // LYAPUNOV_BATCHES
    used = batch * LYAPUNOV_BATCHES
    w = w[: LYAPUNOV_BURN_IN + used].tolist()
    K = g.K
    mats = [
        tuple(tuple(float(x) for x in row) for row in state_mean_matrix(g, env, s))
        for s in range(env.n_states)
    ]
    if K == 2:
        sums, _ = _propagate_2(mats, w, LYAPUNOV_BURN_IN, batch, LYAPUNOV_BATCHES)
    else:
        sums, _ = _propagate_k(mats, w, LYAPUNOV_BURN_IN, batch, LYAPUNOV_BATCHES, K)
    gamma = float(sums.sum() / used)
    batch_means = sums / batch
    ci = float(1.96 * batch_means.std(ddof=1) / math.sqrt(LYAPUNOV_BATCHES))
    return LyapunovEstimate(gamma=gamma, ci_halfwidth=ci, n_steps=used, seed=seed)


def _propagate_2(mats, w, burn, batch, n_batches):
    """Two-patch propagation loop, unrolled scalars (the common hot case)."""
    (a00, a01), (a10, a11) = mats[0]
    (b00, b01), (b10, b11) = mats[1]
    x0, x1 = 0.5, 0.5
    log = math.log
    for t in range(burn):
        if w[t] == 0:
            y0 = x0 * a00 + x1 * a10
            y1 = x0 * a01 + x1 * a11
        else:
            y0 = x0 * b00 + x1 * b10
            y1 = x0 * b01 + x1 * b11
        s = y0 + y1
        x0 = y0 / s
        x1 = y1 / s
    sums = np.empty(n_batches)
    t = burn
    for b in range(n_batches):
        acc = 0.0
        prod = 1.0
        cnt = 0
        for _ in range(batch):
            if w[t] == 0:
                y0 = x0 * a00 + x1 * a10
                y1 = x0 * a01 + x1 * a11
            else:
                y0 = x0 * b00 + x1 * b10
                y1 = x0 * b01 + x1 * b11
            s = y0 + y1
            x0 = y0 / s
            x1 = y1 / s
            prod *= s
            cnt += 1
            t += 1
            if cnt == 32:  # take logs in blocks; s stays within float range
                acc += log(prod)
                prod = 1.0
                cnt = 0
        acc += log(prod)
        sums[b] = acc
    return sums, (x0, x1)


def _propagate_k(mats, w, burn, batch, n_batches, K):
    """General-K propagation loop."""
    rng_k = range(K)
    x = [1.0 / K] * K
    log = math.log

    def step(x, a):
        y = [sum(x[i] * a[i][j] for i in rng_k) for j in rng_k]
        s = sum(y)
        return [yj / s for yj in y], s

    for t in range(burn):
        x, _ = step(x, mats[w[t]])
    sums = np.empty(n_batches)
    t = burn
    for b in range(n_batches):
        acc = 0.0
        prod = 1.0
        cnt = 0
        for _ in range(batch):
            x, s = step(x, mats[w[t]])
            prod *= s
            cnt += 1
            t += 1
            if cnt == 32:
                acc += log(prod)
                prod = 1.0
                cnt = 0
        acc += log(prod)
        sums[b] = acc
    return sums, x


def random_env_lower_bound(
    M1: float, m2: float, p: float, q: float, alpha: float, beta: float
) -> float:
    """Closed-form lower bound on the growth exponent for two patches.

    Tracks the sub-population that sits in the source during good spells
    and rides out bad spells in the sink; its growth depends only on the
    good-state source mean M1, the bad-state sink mean m2, the dispersal
    rates and the switching rates.  Terms 0 * log(0) vanish; a positive
    coefficient on log(0) makes the bound -inf.
    """
    sched = MarkovSwitching(alpha=alpha, beta=beta)
    nu = sched.nu
    terms = (
        (nu, M1),
        (1.0 - nu, m2),
        (nu * alpha, p * q),
        (nu * (1.0 - alpha), 1.0 - p),
        ((1.0 - nu) * (1.0 - beta), 1.0 - q),
    )
    out = 0.0
    for coeff, arg in terms:
        if coeff == 0.0:
            continue
        if arg <= 0.0:
            return -math.inf
        out += coeff * math.log(arg)
    return out
