"""Infinite patch graphs folded to finite motifs, and sink pipelines.

A transitive infinite graph looks the same from every copy of a finite
motif, so per-class patch counts form an ordinary finite metapopulation:
``collapse`` produces that graph and every finite-graph tool then applies.
The persistence criterion generalizes by stopping the walker when it
re-enters any patch of the source type, not necessarily the one it left.

For a source feeding a pipeline of identical sinks, the sink sojourn
factor has a closed form in the two roots of the quadratic
m*r*x^2 - (1 - m*s)*x + m*l = 0; large pipe lengths are evaluated with
the root ratio factored out so nothing overflows.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .graph import MetapopGraph, validate_graph
from .spectral import mean_matrix, perron_value
from .walks import PersistenceVerdict, _verdict_from_value, return_value_matrix

PROB_TOL = 1e-12


@dataclass(frozen=True)
class Motif:
    """A finite quotient of a transitive graph: patches, types and the
    class-aggregated dispersal matrix.

    Transitivity of the parent graph is the caller's assertion; it cannot
    be checked from the finite data.
    """

    types: tuple[int, ...]
    means_by_type: np.ndarray
    D: np.ndarray
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        means = np.asarray(self.means_by_type, dtype=float)
        if means.ndim != 1 or means.size == 0:
            raise ValidationError("means_by_type must be a non-empty vector")
        if any(not 0 <= t < means.size for t in self.types):
            raise ValidationError("patch type out of range of means_by_type")
        means = means.copy()
        means.flags.writeable = False
        object.__setattr__(self, "means_by_type", means)
        object.__setattr__(self, "types", tuple(int(t) for t in self.types))
        # validates shape, stochastic rows and entry ranges
        collapsed = MetapopGraph(
            m=[means[t] for t in self.types], D=self.D, labels=self.labels
        )
        object.__setattr__(self, "D", collapsed.D)

    @property
    def n_patches(self) -> int:
        return len(self.types)

    def to_dict(self) -> dict:
        return {
            "types": list(self.types),
            "means_by_type": self.means_by_type.tolist(),
            "D": self.D.tolist(),
        }


def load_motif(source: str | Path | dict) -> Motif:
    """Build a motif from a JSON file path or an already-parsed dict."""
    if isinstance(source, (str, Path)):
        with open(source) as f:
            source = json.load(f)
    for key in ("types", "means_by_type", "D"):
        if key not in source:
            raise ValidationError(f'motif JSON needs key "{key}"')
    return Motif(
        types=tuple(source["types"]),
        means_by_type=source["means_by_type"],
        D=source["D"],
    )


def collapse(motif: Motif) -> MetapopGraph:
    """The finite metapopulation carried by the motif's classes."""
    return MetapopGraph(
        m=[motif.means_by_type[t] for t in motif.types],
        D=motif.D,
        labels=motif.labels,
    )


def _source_type(motif: Motif) -> int:
    """The distinguished habitat type the return criterion stops on.

    At most one type may be a source (mean > 1); with no source the
    best-mean type plays the role (the criterion then certifies the
    extinction side).
    """
    means = motif.means_by_type
    used = sorted(set(motif.types))
    sources = [t for t in used if means[t] > 1.0]
    if len(sources) > 1:
        raise ValidationError(
            "more than one habitat type is a source; the type-return "
            "criterion needs a single source type"
        )
    if sources:
        return sources[0]
    return max(used, key=lambda t: means[t])


def type_return_functional(motif: Motif) -> PersistenceVerdict:
    """Persistence of the infinite graph via returns to the source type.

    The walker starts in a source-type patch and is stopped on entering
    any source-type patch.  With several source-type patches in the motif
    the stopped walks form a mean matrix over those patches, and the
    criterion threshold applies to its dominant eigenvalue (for a single
    source patch this is the plain scalar criterion).
    """
    g = collapse(motif)
    if not validate_graph(g).irreducible:
        raise ValidationError("collapsed motif must be irreducible")
    src = _source_type(motif)
    homes = [i for i, t in enumerate(motif.types) if t == src]
    R = return_value_matrix(mean_matrix(g), homes)
    if np.isinf(R).any():
        return PersistenceVerdict(
            value=math.inf, persists=True, method="exact-linear-system"
        )
    value = float(R[0, 0]) if len(homes) == 1 else perron_value(R)
    return _verdict_from_value(value, "exact-linear-system")


@dataclass(frozen=True)
class PipelineSpec:
    """A source on a ring of n identical sinks.

    From the source: stay with 1 - p, enter the left sink with p*L, the
    right sink with p*R (L + R = 1).  From a sink: stay with s, hop
    toward the source's left side with l, toward its right side with r
    (l + r = 1 - s).  Means: M on the source, m on every sink.
    """

    n: int
    p: float
    L: float
    s: float
    l: float
    m: float
    M: float

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError("need at least one sink in the pipeline")
        for name, x in (("p", self.p), ("L", self.L), ("s", self.s), ("l", self.l)):
            if not 0.0 <= x <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1]")
        if self.l + self.s > 1.0 + PROB_TOL:
            raise ValidationError("l + s must not exceed 1")
        if self.m < 0 or self.M < 0:
            raise ValidationError("means must be >= 0")

    @property
    def R(self) -> float:
        return 1.0 - self.L

    @property
    def r(self) -> float:
        return max(1.0 - self.s - self.l, 0.0)

    def to_dict(self) -> dict:
        return {
            "n": self.n, "p": self.p, "L": self.L, "s": self.s,
            "l": self.l, "m": self.m, "M": self.M,
        }


def load_pipeline(source: str | Path | dict) -> PipelineSpec:
    """Build a pipeline spec from a JSON file path or parsed dict."""
    if isinstance(source, (str, Path)):
        with open(source) as f:
            source = json.load(f)
    try:
        return PipelineSpec(
            n=int(source["n"]), p=float(source["p"]), L=float(source["L"]),
            s=float(source["s"]), l=float(source["l"]), m=float(source["m"]),
            M=float(source["M"]),
        )
    except KeyError as e:
        raise ValidationError(f"pipeline JSON is missing key {e}")


@dataclass(frozen=True)
class PipelineRates:
    """Closed-form sink sojourn factor with the quadratic's two roots."""

    e: float
    lam: float
    mu: float


def pipeline_depleting_rate(spec: PipelineSpec) -> PipelineRates:
    """Closed-form depleting rate of a pipeline of n identical sinks.

    lam > 1 > mu solve m*r*x^2 - (1 - m*s)*x + m*l = 0; the rate combines
    the roots' n-th powers with the left/right entry split.  Everything is
    evaluated through the ratio mu/lam < 1, so large n cannot overflow.
    """
    m, s, l, r, n = spec.m, spec.s, spec.l, spec.r, spec.n
    L, Rr = spec.L, spec.R
    if m <= 0 or r <= 0:
        raise ValidationError(
            "the closed form needs m > 0 and r > 0; use the linear-system "
            "route on the collapsed motif for degenerate pipelines"
        )
    if m * s >= 1.0:
        raise ValidationError("need m*s < 1 for the sojourn factor to exist")
    disc = (1.0 - m * s) ** 2 - 4.0 * m * m * r * l
    if disc < 0:
        raise ValidationError("quadratic has no real roots; check parameters")
    lam = ((1.0 - m * s) + math.sqrt(disc)) / (2.0 * m * r)
    # product of roots = l / r; dividing avoids cancellation in the small root
    mu = l / (r * lam) if l > 0 else 0.0
    t = mu / lam
    tn = t**n
    tn1 = t ** (n + 1)
    lamm = lam ** -(n + 1)
    term1 = (1.0 - tn) / (lam * (1.0 - tn1)) * (L + Rr * lam * mu)
    term2 = (lam - mu) * (Rr * lamm + L * (mu**n) / lam) / (1.0 - tn1)
    return PipelineRates(e=term1 + term2, lam=lam, mu=mu)


def pipeline_to_motif(spec: PipelineSpec) -> Motif:
    """The (n + 1)-patch motif of a pipeline: one source plus a sink ring.

    Sinks are numbered 1..n in the right-hop direction: sink k hops to
    k - 1 with l and to k + 1 with r, the ring closing through the source
    at both ends.  The source's left sink is sink n (the walker standing
    there reaches the source by one right-hop), so dispersal enters sink n
    with p*L and sink 1 with p*R, which is the orientation the closed-form
    depleting rate uses.
    """
    n = spec.n
    K = n + 1
    D = np.zeros((K, K))
    D[0, 0] = 1.0 - spec.p
    D[0, 1] = spec.p * spec.R
    D[0, n] += spec.p * spec.L
    for k in range(1, n + 1):
        D[k, k] += spec.s
        D[k, k - 1] += spec.l
        right = k + 1 if k < n else 0
        D[k, right] += spec.r
    labels = ("source",) + tuple(f"sink{k}" for k in range(1, n + 1))
    return Motif(
        types=(0,) + (1,) * n,
        means_by_type=np.array([spec.M, spec.m]),
        D=D,
        labels=labels,
    )
