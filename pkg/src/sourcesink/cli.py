"""Command-line front end.

One executable with subcommands; every run consumes a JSON config (plus
flag overrides, flags win), emits a machine-readable report that embeds
the resolved config, its hash and the seed, and uses fixed float
formatting so identical inputs give byte-identical outputs.

Exit codes: 0 success, 2 validation error, 3 numerical non-convergence,
4 statistical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .branching import patch_series, poisson_laws, geometric_laws, simulate
from .environments import (
    MarkovSwitching,
    Periodic,
    even_return_functional,
    load_environment,
    lyapunov_estimate,
    periodic_growth_and_occupancy,
    periodic_mean_matrix,
    random_env_lower_bound,
    two_patch_periodic_criterion,
)
from .errors import ConvergenceError, StatisticalError, ValidationError
from .graph import MetapopGraph, load_graph, stationary_distribution, validate_graph
from .motifs import (
    collapse,
    load_motif,
    load_pipeline,
    pipeline_depleting_rate,
    pipeline_to_motif,
    type_return_functional,
)
from .spectral import growth_rate, mean_matrix, occupancy_spectral
from .variational import argmax_occupancy, max_rate_gap, rate_grid_2patch
from .walks import (
    WalkConfig,
    depleting_rate,
    return_functional_exact,
    return_functional_mc,
    sample_excursion,
)

EXIT_VALIDATION = 2
EXIT_CONVERGENCE = 3
EXIT_STATISTICAL = 4


def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return format(x, ".17g")


def dumps_report(obj, indent: int = 0) -> str:
    """Canonical JSON with 17-significant-digit floats (round-trip exact)."""
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [
            f'{pad}  "{k}": {dumps_report(v, indent + 1)}' for k, v in obj.items()
        ]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        seq = list(obj)
        if not seq:
            return "[]"
        flat = all(isinstance(x, (int, float, bool, str, type(None))) for x in seq)
        if flat:
            return "[" + ", ".join(dumps_report(x) for x in seq) + "]"
        items = [f"{pad}  {dumps_report(v, indent + 1)}" for v in seq]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, np.ndarray):
        return dumps_report(obj.tolist(), indent)
    if isinstance(obj, str):
        return json.dumps(obj)
    raise TypeError(f"cannot serialize {type(obj)!r}")


def _emit(report: dict, args) -> None:
    if getattr(args, "format", "json") == "csv":
        text = _report_csv(report)
    else:
        text = dumps_report(report) + "\n"
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def _flatten(prefix: str, obj, rows: list) -> None:
    if isinstance(obj, dict):
        for k, v in obj.items():
            _flatten(f"{prefix}.{k}" if prefix else str(k), v, rows)
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            _flatten(f"{prefix}[{i}]", v, rows)
    else:
        if isinstance(obj, float):
            rows.append((prefix, _fmt_float(obj).strip('"')))
        else:
            rows.append((prefix, json.dumps(obj) if isinstance(obj, str) else str(obj)))


def _report_csv(report: dict) -> str:
    rows: list = []
    _flatten("", report, rows)
    return "key,value\n" + "\n".join(f"{k},{v}" for k, v in rows) + "\n"


def _provenance(config: dict, seed: int) -> dict:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return {
        "config_sha256": hashlib.sha256(canonical.encode()).hexdigest(),
        "seed": seed,
        "version": __version__,
    }


def _load_config(args) -> dict:
    """Resolve config file plus flag overrides (flags win).

    The worker-thread count is kept out of the returned config: it cannot
    affect results, so it must not affect report bytes or the config hash.
    """
    cfg = {}
    if args.config:
        with open(args.config) as f:
            cfg = json.load(f)
        if not isinstance(cfg, dict):
            raise ValidationError("config must be a JSON object")
    cfg.pop("threads", None)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if getattr(args, "trials", None) is not None:
        cfg.setdefault("mc", {})["n_trials"] = args.trials
        cfg.setdefault("simulate", {})["n_runs"] = args.trials
    if getattr(args, "horizon", None) is not None:
        cfg.setdefault("simulate", {})["horizon"] = args.horizon
    cfg.setdefault("seed", 0)
    return cfg


def _threads(args) -> int:
    if getattr(args, "threads", None) is not None:
        return max(1, args.threads)
    return os.cpu_count() or 1


def _graph_from_config(cfg: dict) -> MetapopGraph:
    if "graph" in cfg:
        return load_graph(cfg["graph"])
    if "motif" in cfg:
        return collapse(load_motif(cfg["motif"]))
    if "pipeline" in cfg:
        return collapse(pipeline_to_motif(load_pipeline(cfg["pipeline"])))
    raise ValidationError('config needs one of "graph", "motif" or "pipeline"')


def _walk_config(cfg: dict, home: int) -> WalkConfig:
    mc = cfg.get("mc", {})
    return WalkConfig(
        start_patch=home,
        max_steps=int(mc.get("max_steps", 10**7)),
        n_trials=int(mc.get("n_trials", 10**5)),
        seed=int(cfg["seed"]),
    )


def _laws_from_config(cfg, g, env):
    name = cfg.get("simulate", {}).get("laws", "poisson")
    if name == "poisson":
        return poisson_laws(g, env)
    if name == "geometric":
        return geometric_laws(g, env)
    raise ValidationError(f"unknown law family {name!r} (use poisson or geometric)")


def cmd_validate(args) -> dict:
    cfg = _load_config(args)
    g = _graph_from_config(cfg)
    report = validate_graph(g)
    return {
        "command": "validate",
        "provenance": _provenance(cfg, cfg["seed"]),
        "config": cfg,
        "graph": g.to_dict(),
        "assumptions": {
            "irreducible": report.irreducible,
            "aperiodic": report.aperiodic,
            "positive_means": report.positive_means,
            "period": report.period,
        },
    }


def cmd_analyze(args) -> dict:
    cfg = _load_config(args)
    g = _graph_from_config(cfg)
    home = int(cfg.get("home", 0))
    report = validate_graph(g)
    sd = growth_rate(mean_matrix(g))
    u = stationary_distribution(g)
    phi_spec = occupancy_spectral(sd)
    verdict = return_functional_exact(g, home)
    tw = argmax_occupancy(g)
    mg = max_rate_gap(g)
    log_rho = math.log(sd.rho)
    out = {
        "command": "analyze",
        "provenance": _provenance(cfg, cfg["seed"]),
        "config": cfg,
        "assumptions": {
            "irreducible": report.irreducible,
            "aperiodic": report.aperiodic,
            "positive_means": report.positive_means,
            "period": report.period,
        },
        "spectral": {
            "rho": sd.rho,
            "left": sd.left,
            "right": sd.right,
            "phi": phi_spec,
        },
        "stationary": u,
        "return_functional": verdict.to_dict(),
        "variational": {
            "twisted": {"log_rho": tw.log_growth, "phi": tw.occupancy},
            "simplex": {"log_rho": mg.log_growth, "phi": mg.occupancy},
        },
        "verdict": {
            "persists": verdict.persists,
            "log_rho": log_rho,
        },
        "cross_checks": {
            "log_rho_minus_simplex_max": log_rho - mg.log_growth,
            "log_rho_minus_twisted_max": log_rho - tw.log_growth,
            "phi_spectral_vs_twisted_linf": float(
                np.abs(phi_spec - tw.occupancy).max()
            ),
            "spectral_vs_return_sign_agree": (sd.rho > 1.0) == verdict.persists,
        },
    }
    if args.trials:
        mc = return_functional_mc(g, home, _walk_config(cfg, home))
        out["return_functional_mc"] = mc.to_dict()
        out["cross_checks"]["exact_minus_mc"] = verdict.value - mc.value
    if args.grid_out:
        if g.K != 2:
            raise ValidationError("--grid-out needs a two-patch graph")
        with open(args.grid_out, "w") as f:
            f.write("f1,R,I,R_minus_I\n")
            for f1, R, I, RI in rate_grid_2patch(g):
                f.write(f"{f1:.17g},{R:.17g},{I:.17g},{RI:.17g}\n")
    if args.excursions_out:
        exc = sample_excursion(g, home, seed=cfg["seed"])
        with open(args.excursions_out, "w") as f:
            f.write("step,patch\n")
            for step, patch in enumerate(exc.path):
                f.write(f"{step},{patch}\n")
    return out


def cmd_simulate(args) -> dict:
    cfg = _load_config(args)
    g = _graph_from_config(cfg)
    env = load_environment(cfg["env"]) if "env" in cfg else None
    sim = cfg.get("simulate", {})
    laws = _laws_from_config(cfg, g, env)
    lineage = bool(sim.get("lineage", True))
    rep = simulate(
        g,
        laws=laws,
        horizon=int(sim.get("horizon", 200)),
        n_runs=int(sim.get("n_runs", 10**4)),
        seed=int(cfg["seed"]),
        env=env,
        start_patch=int(cfg.get("home", 0)),
        track_lineage=lineage,
        threads=_threads(args),
    )
    if lineage and rep.n_survived == 0:
        raise StatisticalError(
            "no run survived to the horizon, so survivor statistics are "
            'undefined; increase n_runs or set "simulate": {"lineage": false}'
        )
    out = {
        "command": "simulate",
        "provenance": _provenance(cfg, cfg["seed"]),
        "config": cfg,
        "report": rep.to_dict(),
    }
    if args.series_out:
        series = patch_series(
            g,
            laws=laws,
            horizon=int(sim.get("horizon", 200)),
            n_runs=min(int(sim.get("n_runs", 10)), 100),
            seed=int(cfg["seed"]),
            env=env,
            start_patch=int(cfg.get("home", 0)),
        )
        with open(args.series_out, "w") as f:
            f.write("run,n," + ",".join(f"Z_{i}" for i in range(g.K)) + "\n")
            for r in range(series.shape[0]):
                for t in range(series.shape[1]):
                    row = ",".join(str(int(x)) for x in series[r, t])
                    f.write(f"{r},{t},{row}\n")
    return out


def cmd_periodic(args) -> dict:
    cfg = _load_config(args)
    g = _graph_from_config(cfg)
    if "env" not in cfg:
        raise ValidationError('periodic analysis needs an "env" block')
    env = load_environment(cfg["env"])
    if not isinstance(env.schedule, Periodic):
        raise ValidationError("periodic analysis needs a periodic schedule")
    A2 = periodic_mean_matrix(g, env)
    sd = growth_rate(A2)
    period = len(env.schedule.order)
    out = {
        "command": "periodic",
        "provenance": _provenance(cfg, cfg["seed"]),
        "config": cfg,
        "product_matrix_rho": sd.rho,
        "log_rho_per_step": math.log(sd.rho) / period,
        "persists": sd.rho > 1.0,
    }
    if period == 2:
        home = int(cfg.get("home", 0))
        ev = even_return_functional(g, env, home)
        out["even_return"] = {phase: v.to_dict() for phase, v in ev.items()}
        ec = periodic_growth_and_occupancy(g, env)
        out["edge_chain"] = {
            "two_log_rho": ec.two_log_growth,
            "log_rho": ec.log_growth,
            "occupancy_edges": ec.occupancy_edges,
            "marginal_even": ec.marginal_even,
            "marginal_odd": ec.marginal_odd,
        }
        out["cross_checks"] = {
            "edge_chain_vs_product_log_rho": ec.log_growth - ec.log_growth_spectral,
            "even_return_sign_agree": all(
                v.persists == (sd.rho > 1.0) for v in ev.values()
            ),
        }
        if g.K == 2:
            a, b = env.schedule.order
            crit = two_patch_periodic_criterion(
                M1=float(env.means[a][0]),
                M2=float(env.means[b][0]),
                m1=float(env.means[a][1]),
                m2=float(env.means[b][1]),
                p=float(g.D[0, 1]),
                q=float(g.D[1, 0]),
            )
            out["two_patch_criterion"] = crit.to_dict()
            out["cross_checks"]["closed_form_sign_agree"] = crit.persists == (
                sd.rho > 1.0
            )
    return out


def cmd_randenv(args) -> dict:
    cfg = _load_config(args)
    g = _graph_from_config(cfg)
    if "env" not in cfg:
        raise ValidationError('random-environment analysis needs an "env" block')
    env = load_environment(cfg["env"])
    if not isinstance(env.schedule, MarkovSwitching):
        raise ValidationError("random-environment analysis needs a markov schedule")
    n_steps = int(cfg.get("randenv", {}).get("n_steps", 10**6))
    ly = lyapunov_estimate(g, env, n_steps=n_steps, seed=int(cfg["seed"]))
    out = {
        "command": "randenv",
        "provenance": _provenance(cfg, cfg["seed"]),
        "config": cfg,
        "lyapunov": ly.to_dict(),
        "persists": ly.gamma > 0.0,
    }
    if g.K == 2:
        bound = random_env_lower_bound(
            M1=float(env.means[0][0]),
            m2=float(env.means[1][1]),
            p=float(g.D[0, 1]),
            q=float(g.D[1, 0]),
            alpha=env.schedule.alpha,
            beta=env.schedule.beta,
        )
        out["lower_bound"] = bound
        out["cross_checks"] = {
            "bound_below_gamma_plus_ci": bound <= ly.gamma + ly.ci_halfwidth
        }
    return out


def cmd_pipeline(args) -> dict:
    cfg = _load_config(args)
    if "pipeline" not in cfg:
        raise ValidationError('pipeline analysis needs a "pipeline" block')
    spec = load_pipeline(cfg["pipeline"])
    rates = pipeline_depleting_rate(spec)
    motif = pipeline_to_motif(spec)
    g = collapse(motif)
    e_linear = depleting_rate(g)
    verdict = type_return_functional(motif)
    criterion = spec.M * (1.0 - spec.p) + rates.e * spec.M * spec.p
    return {
        "command": "pipeline",
        "provenance": _provenance(cfg, cfg["seed"]),
        "config": cfg,
        "lambda": rates.lam,
        "mu": rates.mu,
        "e": rates.e,
        "e_linear_system": e_linear,
        "criterion_value": criterion,
        "persists": verdict.persists,
        "return_functional": verdict.to_dict(),
        "motif": motif.to_dict(),
        "cross_checks": {
            "e_closed_minus_linear": rates.e - e_linear,
            "criterion_minus_return": criterion - verdict.value
            if math.isfinite(verdict.value)
            else None,
        },
    }


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="sourcesink",
        description="Persistence, growth and lineage occupancy of "
        "source-sink metapopulations",
    )
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="RNG seed override")
        p.add_argument("--trials", type=int, default=None,
                       help="Monte Carlo trial / run count override")
        p.add_argument("--horizon", type=int, default=None,
                       help="simulation horizon override")
        p.add_argument("--out", default=None, help="write the report here")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (results do not depend on this)")

    p = sub.add_parser("validate", help="check graph assumptions")
    common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("analyze", help="fixed-environment cross-method analysis")
    common(p)
    p.add_argument("--grid-out", default=None,
                   help="CSV of the two-patch rate landscape (f1, R, I, R-I)")
    p.add_argument("--excursions-out", default=None,
                   help="CSV dump of one seeded excursion (step, patch)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="multitype branching simulation")
    common(p)
    p.add_argument("--series-out", default=None,
                   help="CSV of per-run patch-count time series")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("periodic", help="periodic-environment analysis")
    common(p)
    p.set_defaults(func=cmd_periodic)

    p = sub.add_parser("randenv", help="Markov random-environment analysis")
    common(p)
    p.set_defaults(func=cmd_randenv)

    p = sub.add_parser("pipeline", help="sink-pipeline closed forms")
    common(p)
    p.set_defaults(func=cmd_pipeline)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        report = args.func(args)
    except ValidationError as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except ConvergenceError as e:
        print(f"numerical non-convergence: {e}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except StatisticalError as e:
        print(f"statistical failure: {e}", file=sys.stderr)
        return EXIT_STATISTICAL
    _emit(report, args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
