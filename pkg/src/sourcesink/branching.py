"""Multitype branching simulator: the ground truth the formulas predict.

Populations are tracked as per-patch counts; one generation is local
reproduction (per-patch offspring law) followed by independent dispersal
of every newborn (multinomial split of each patch's brood).  The per-
generation dispersal flows are recorded, which is enough to draw the
ancestral patch sequence of a uniformly chosen survivor exactly by
walking the flows backward: an individual's reproduction is independent
of its ancestry, so the backward patch kernel at generation t is just the
flow into its patch, column-normalized.

Runs whose population exceeds the escape cap are declared survivors and
switch to propagation by conditional means (relative fluctuations at that
size are below 1e-3), so growth-rate windows beyond the cap stay defined.

Reproducibility: runs are processed in fixed chunks of ``CHUNK``; chunk c
draws from stream (seed, c) regardless of thread count, and results are
assembled in chunk order, so reports are byte-identical for a given seed.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .environments import EnvironmentModel, Periodic
from .errors import StatisticalError, ValidationError
from .graph import MetapopGraph
from .spectral import mean_matrix

CHUNK = 1024
ESCAPE_CAP = 10**7
MEAN_MATCH_TOL = 1e-12


@dataclass(frozen=True)
class OffspringLaw:
    """One patch's offspring distribution, parameterized by its mean.

    kinds: ``poisson`` and ``geometric`` (mean m, both with finite
    N log N moment), ``deterministic`` (integer mean), ``bernoulli-pair``
    (0 with probability p0, else ``pair_n``; mean (1 - p0) * pair_n).
    """

    kind: str
    mean: float
    p0: float | None = None
    pair_n: int | None = None

    def __post_init__(self):
        if self.kind not in ("poisson", "geometric", "deterministic", "bernoulli-pair"):
            raise ValidationError(f"unknown offspring law {self.kind!r}")
        if self.mean < 0:
            raise ValidationError("offspring mean must be >= 0")
        if self.kind == "deterministic" and abs(self.mean - round(self.mean)) > MEAN_MATCH_TOL:
            raise ValidationError("deterministic law needs an integer mean")
        if self.kind == "bernoulli-pair":
            if self.p0 is None or self.pair_n is None:
                raise ValidationError("bernoulli-pair needs p0 and pair_n")
            implied = (1.0 - self.p0) * self.pair_n
            if abs(implied - self.mean) > MEAN_MATCH_TOL * max(1.0, self.mean):
                raise ValidationError("bernoulli-pair parameters do not match the mean")

    def fixes_single_offspring(self) -> bool:
        """True when the law is degenerate at exactly one offspring."""
        if self.kind == "deterministic":
            return round(self.mean) == 1
        if self.kind == "bernoulli-pair":
            return self.pair_n == 1 and self.p0 == 0.0
        return False

    def sample_brood(self, z: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Total offspring of z parents per run (z is an int array)."""
        out = np.zeros_like(z)
        alive = z > 0
        if not alive.any():
            return out
        za = z[alive]
        if self.kind == "poisson":
            out[alive] = rng.poisson(self.mean * za)
        elif self.kind == "geometric":
            out[alive] = rng.negative_binomial(za, 1.0 / (1.0 + self.mean))
        elif self.kind == "deterministic":
            out[alive] = int(round(self.mean)) * za
        else:
            out[alive] = self.pair_n * rng.binomial(za, 1.0 - self.p0)
        return out


def poisson_laws(g: MetapopGraph, env: EnvironmentModel | None = None) -> list[list[OffspringLaw]]:
    """Default laws: Poisson with each patch's mean, per environment state."""
    if env is None:
        return [[OffspringLaw("poisson", float(m)) for m in g.m]]
    return [[OffspringLaw("poisson", float(m)) for m in row] for row in env.means]


def geometric_laws(g: MetapopGraph, env: EnvironmentModel | None = None) -> list[list[OffspringLaw]]:
    """Geometric offspring with each patch's mean."""
    if env is None:
        return [[OffspringLaw("geometric", float(m)) for m in g.m]]
    return [[OffspringLaw("geometric", float(m)) for m in row] for row in env.means]


def _check_laws(g, env, laws, allow_degenerate):
    table = env.means if env is not None else g.m[None, :]
    if len(laws) != table.shape[0]:
        raise ValidationError("need one row of laws per environment state")
    for s, row in enumerate(laws):
        if len(row) != g.K:
            raise ValidationError("need one law per patch")
        for i, law in enumerate(row):
            if abs(law.mean - table[s][i]) > MEAN_MATCH_TOL * max(1.0, table[s][i]):
                raise ValidationError(
                    f"law mean for patch {i} in state {s} does not match the model"
                )
    if not allow_degenerate and all(row[0].fixes_single_offspring() for row in laws):
        raise ValidationError(
            "patch 0 leaves exactly one offspring almost surely; the "
            "persistence dichotomy does not apply (pass allow_degenerate=True "
            "to simulate anyway)"
        )


@dataclass(frozen=True)
class SimReport:
    """Aggregated Monte Carlo outcome of a branching simulation."""

    survival_prob: float
    survival_ci: float
    growth_rate_hat: float | None
    growth_rate_ci: float | None
    occupancy_hat: np.ndarray | None
    occupancy_ci: np.ndarray | None
    n_runs: int
    n_survived: int
    n_escaped: int
    horizon: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "survival_prob": self.survival_prob,
            "survival_ci": self.survival_ci,
            "growth_rate_hat": self.growth_rate_hat,
            "growth_rate_ci": self.growth_rate_ci,
            "occupancy_hat": None if self.occupancy_hat is None else self.occupancy_hat.tolist(),
            "occupancy_ci": None if self.occupancy_ci is None else self.occupancy_ci.tolist(),
            "n_runs": self.n_runs,
            "n_survived": self.n_survived,
            "n_escaped": self.n_escaped,
            "horizon": self.horizon,
            "seed": self.seed,
        }


def _env_states_for_gen(env, t, states, rng):
    """Environment state per run at generation t (updates ``states`` in place)."""
    if env is None:
        return states  # all zeros
    if isinstance(env.schedule, Periodic):
        states.fill(env.schedule.order[t % len(env.schedule.order)])
        return states
    if t == 0:
        states[:] = rng.random(states.size) >= env.schedule.nu
        return states
    u = rng.random(states.size)
    leave = np.where(states == 0, env.schedule.alpha, env.schedule.beta)
    states[:] = np.where(u < leave, 1 - states, states)
    return states


def _run_chunk(g, env, laws, horizon, n_runs, rng, start_patch, escape_cap,
               want_lineage, want_sizes):
    """Simulate one chunk of runs; returns per-run summaries.

    Integer counts while the population is below the escape cap; above it,
    counts continue as expected values in floats (and the run is marked
    escaped).  Flows are stored per generation for backward lineage draws.
    """
    K = g.K
    Z = np.zeros((n_runs, K), dtype=np.int64)
    Z[:, start_patch] = 1
    Zf = Z.astype(float)
    escaped = np.zeros(n_runs, dtype=bool)
    env_states = np.zeros(n_runs, dtype=np.int64)
    flows = np.zeros((horizon, n_runs, K, K)) if want_lineage else None
    sizes = np.zeros((horizon + 1, n_runs)) if want_sizes else None
    if want_sizes:
        sizes[0] = 1.0
    A_by_state = [
        (env.means[s][:, None] * g.D) if env is not None else mean_matrix(g)
        for s in range(env.n_states if env is not None else 1)
    ]
    for t in range(horizon):
        env_states = _env_states_for_gen(env, t, env_states, rng)
        live = ~escaped
        Znext = np.zeros_like(Z)
        if live.any():
            zl = Z[live]
            live_states = env_states[live]
            flows_l = np.zeros((zl.shape[0], K, K), dtype=np.int64)
            for s in np.unique(live_states):
                in_s = live_states == s
                for i in range(K):
                    brood = laws[s][i].sample_brood(zl[in_s, i], rng)
                    flows_l[in_s, i, :] = rng.multinomial(brood, g.D[i])
            Znext[live] = flows_l.sum(axis=1)
            if want_lineage:
                flows[t, live] = flows_l
        if escaped.any():
            esc = np.where(escaped)[0]
            for s in np.unique(env_states[esc]):
                rows = esc[env_states[esc] == s]
                flow_f = Zf[rows][:, :, None] * A_by_state[s][None, :, :]
                Zf[rows] = flow_f.sum(axis=1)
                if want_lineage:
                    flows[t, rows] = flow_f
        Z = Znext
        newly = live & (Z.sum(axis=1) > escape_cap)
        if newly.any():
            Zf[newly] = Z[newly].astype(float)
            escaped |= newly
            Z[newly] = 0
        if want_sizes:
            sizes[t + 1] = Z.sum(axis=1) + np.where(escaped, Zf.sum(axis=1), 0.0)
    final = np.where(escaped[:, None], Zf, Z.astype(float))
    alive = final.sum(axis=1) > 0
    lineage_freq = None
    if want_lineage:
        lineage_freq = _backward_lineages(flows, final, alive, horizon, K, rng)
    return alive, escaped, sizes, lineage_freq


def _backward_lineages(flows, final, alive, horizon, K, rng):
    """Ancestral patch-visit frequencies of one uniform survivor per run.

    A uniform individual's patch is drawn from the final counts; its
    ancestor's patch at each earlier generation follows the column-
    normalized dispersal flow of that generation.  Frequencies count the
    horizon + 1 points of the lineage.
    """
    idx = np.where(alive)[0]
    if idx.size == 0:
        return np.zeros((len(alive), K))
    probs = final[idx]
    probs = probs / probs.sum(axis=1, keepdims=True)
    cur = _categorical_rows(probs, rng)
    tallies = np.zeros((idx.size, K), dtype=np.int64)
    rows = np.arange(idx.size)
    tallies[rows, cur] += 1
    for t in range(horizon - 1, -1, -1):
        cols = flows[t, idx, :, :][rows, :, cur]
        colsum = cols.sum(axis=1, keepdims=True)
        # a zero column can only happen for the run's pre-start rows; guard
        safe = colsum[:, 0] > 0
        probs = np.where(safe[:, None], cols / np.where(colsum == 0, 1.0, colsum), 1.0 / K)
        cur = _categorical_rows(probs, rng)
        tallies[rows, cur] += 1
    freq = np.zeros((len(alive), K))
    freq[idx] = tallies / float(horizon + 1)
    return freq


def _categorical_rows(probs: np.ndarray, rng) -> np.ndarray:
    """One categorical draw per row of a probability matrix."""
    c = np.cumsum(probs, axis=1)
    c[:, -1] = 1.0
    u = rng.random((probs.shape[0], 1))
    return (u > c).sum(axis=1)


def simulate(
    g: MetapopGraph,
    laws: list[list[OffspringLaw]] | None = None,
    horizon: int = 200,
    n_runs: int = 10**4,
    seed: int = 0,
    env: EnvironmentModel | None = None,
    start_patch: int = 0,
    escape_cap: int = ESCAPE_CAP,
    track_lineage: bool = True,
    threads: int = 1,
    allow_degenerate: bool = False,
) -> SimReport:
    """Estimate survival, growth rate and survivor occupancy by simulation.

    Each run starts from one individual in ``start_patch``.  A run counts
    as surviving when it is alive at the horizon or escaped past the cap.
    The growth rate is the per-run least-squares slope of log total size
    over the window [horizon/2, horizon], averaged over surviving runs;
    occupancy is the ancestral visit-frequency vector of one uniformly
    chosen survivor per surviving run.
    """
    if horizon < 1:
        raise ValidationError("horizon must be >= 1")
    if n_runs < 1:
        raise ValidationError("n_runs must be >= 1")
    if laws is None:
        laws = poisson_laws(g, env)
    _check_laws(g, env, laws, allow_degenerate)

    chunk = CHUNK
    if track_lineage:
        # flow storage is horizon * chunk * K * K doubles; budget ~64 MB
        chunk = max(32, min(CHUNK, (64 << 20) // (max(horizon, 1) * g.K * g.K * 8)))
    chunks = [(c, min(chunk, n_runs - c * chunk)) for c in range((n_runs + chunk - 1) // chunk)]

    def work(args):
        c, size = args
        rng = np.random.default_rng([seed, c])
        return _run_chunk(g, env, laws, horizon, size, rng, start_patch,
                          escape_cap, track_lineage, True)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(work, chunks))
    else:
        results = [work(a) for a in chunks]

    alive = np.concatenate([r[0] for r in results])
    escaped = np.concatenate([r[1] for r in results])
    sizes = np.concatenate([r[2] for r in results], axis=1)
    n_surv = int(alive.sum())
    p_hat = n_surv / n_runs
    surv_ci = 1.96 * math.sqrt(max(p_hat * (1.0 - p_hat), 0.0) / n_runs)

    growth_hat = growth_ci = None
    if n_surv > 0:
        lo = horizon // 2
        ts = np.arange(lo, horizon + 1, dtype=float)
        ys = np.log(sizes[lo:, alive])
        tc = ts - ts.mean()
        slopes = (tc @ ys) / float(tc @ tc)
        growth_hat = float(slopes.mean())
        growth_ci = float(1.96 * slopes.std(ddof=1) / math.sqrt(n_surv)) if n_surv > 1 else 0.0

    occ_hat = occ_ci = None
    if track_lineage and n_surv > 0:
        freq = np.concatenate([r[3] for r in results])
        freq = freq[alive]
        occ_hat = freq.mean(axis=0)
        occ_ci = 1.96 * freq.std(axis=0, ddof=1) / math.sqrt(n_surv) if n_surv > 1 else np.zeros(g.K)

    return SimReport(
        survival_prob=p_hat,
        survival_ci=surv_ci,
        growth_rate_hat=growth_hat,
        growth_rate_ci=growth_ci,
        occupancy_hat=occ_hat,
        occupancy_ci=occ_ci,
        n_runs=n_runs,
        n_survived=n_surv,
        n_escaped=int(escaped.sum()),
        horizon=horizon,
        seed=seed,
    )


def patch_series(
    g: MetapopGraph,
    laws: list[list[OffspringLaw]] | None = None,
    horizon: int = 100,
    n_runs: int = 10,
    seed: int = 0,
    env: EnvironmentModel | None = None,
    start_patch: int = 0,
    escape_cap: int = ESCAPE_CAP,
    allow_degenerate: bool = False,
) -> np.ndarray:
    """Per-patch count trajectories for a handful of runs (plot fodder).

    Returns an (n_runs, horizon + 1, K) array; counts freeze once a run
    escapes past the cap.
    """
    if laws is None:
        laws = poisson_laws(g, env)
    _check_laws(g, env, laws, allow_degenerate)
    rng = np.random.default_rng([seed, 0])
    K = g.K
    Z = np.zeros((n_runs, K), dtype=np.int64)
    Z[:, start_patch] = 1
    env_states = np.zeros(n_runs, dtype=np.int64)
    out = np.zeros((n_runs, horizon + 1, K), dtype=np.int64)
    out[:, 0] = Z
    frozen = np.zeros(n_runs, dtype=bool)
    for t in range(horizon):
        env_states = _env_states_for_gen(env, t, env_states, rng)
        live = ~frozen
        Znext = Z.copy()
        if live.any():
            zl = Z[live]
            states_l = env_states[live]
            nxt = np.zeros_like(zl)
            for s in np.unique(states_l):
                in_s = states_l == s
                for i in range(K):
                    brood = laws[s][i].sample_brood(zl[in_s, i], rng)
                    nxt[in_s] += rng.multinomial(brood, g.D[i])
            Znext[live] = nxt
        Z = Znext
        frozen |= Z.sum(axis=1) > escape_cap
        out[:, t + 1] = Z
    return out


def survivor_occupancy(
    g: MetapopGraph,
    laws: list[list[OffspringLaw]] | None = None,
    horizon: int = 200,
    n_runs: int = 10**4,
    seed: int = 0,
    **kw,
) -> tuple[np.ndarray, np.ndarray]:
    """Ancestral occupancy of a random survivor, with per-coordinate CI."""
    report = simulate(g, laws, horizon, n_runs, seed, track_lineage=True, **kw)
    if report.n_survived == 0:
        raise StatisticalError(
            "no run survived to the horizon; increase n_runs or shorten the horizon"
        )
    return report.occupancy_hat, report.occupancy_ci


def extinction_probability(
    g: MetapopGraph,
    laws: list[list[OffspringLaw]] | None = None,
    home: int = 0,
    n_runs: int = 10**4,
    seed: int = 0,
    n_initial: int = 1,
    max_generations: int = 10**4,
    escape_cap: int = ESCAPE_CAP,
    env: EnvironmentModel | None = None,
    allow_degenerate: bool = False,
) -> tuple[float, float]:
    """Fraction of runs from ``n_initial`` individuals in ``home`` that die out.

    Runs end at extinction or at the escape cap (counted as survival); runs
    still undecided after ``max_generations`` are counted as survivors.
    """
    if laws is None:
        laws = poisson_laws(g, env)
    _check_laws(g, env, laws, allow_degenerate)
    dead_total = 0
    for c in range((n_runs + CHUNK - 1) // CHUNK):
        size = min(CHUNK, n_runs - c * CHUNK)
        rng = np.random.default_rng([seed, c])
        K = g.K
        Z = np.zeros((size, K), dtype=np.int64)
        Z[:, home] = n_initial
        env_states = np.zeros(size, dtype=np.int64)
        undecided = np.ones(size, dtype=bool)
        for t in range(max_generations):
            if not undecided.any():
                break
            env_states = _env_states_for_gen(env, t, env_states, rng)
            zl = Z[undecided]
            states_l = env_states[undecided]
            Znext = np.zeros_like(zl)
            for s in np.unique(states_l):
                in_s = states_l == s
                for i in range(K):
                    brood = laws[s][i].sample_brood(zl[in_s, i], rng)
                    Znext[in_s] += rng.multinomial(brood, g.D[i])
            Z[undecided] = Znext
            totals = Z.sum(axis=1)
            undecided &= (totals > 0) & (totals <= escape_cap)
        dead_total += int((Z.sum(axis=1) == 0).sum())
    q_hat = dead_total / n_runs
    ci = 1.96 * math.sqrt(max(q_hat * (1.0 - q_hat), 0.0) / n_runs)
    return q_hat, ci
