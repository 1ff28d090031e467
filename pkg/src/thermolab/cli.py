"""Command-line front end.

Every subcommand reads a TOML configuration, writes CSV/JSON reports plus a
``manifest.json`` and exits with 0 (success), 2 (invalid configuration) or 3
(the numerics did not converge; reports are still written).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .conditions import TAGS, scan_criterion
from .dynamics import IntegratorConfig, flow, from_state, sample_liouville
from .ensemble import EnsembleConfig, member_generators
from .geometry import GeometryError
from .lyapunov import entropy_production, lyapunov_spectrum
from .reports import ReportWriter
from .scenarios import SCENARIOS
from .semibasic import EXACT_FLOOR, identity_suite, quadrature_divergence, random_vector_field, refinement_orders
from .statistics import entropy_curve, theta_observable, variance

EXIT_OK, EXIT_SCHEMA, EXIT_NONCONVERGED = 0, 2, 3
OUT_ENV = "THERMOLAB_OUT"
DEFAULT_OUT = "thermolab-runs"

COMMANDS = ("simulate", "lyapunov", "entropy", "variance", "entropy-curve", "criteria", "identities", "scenario")


def ensemble_config(cfg: dict) -> EnsembleConfig:
    it = cfg["integrator"]
    return EnsembleConfig(members=it["members"], burn_in=it["burn_in"], step=it["step"], seed=cfg["seed"],
                          threads=cfg["threads"], chunk_size=it["chunk_size"])


def _T(cfg, default):
    T = cfg["estimator"]["T"]
    return default if T is None else T


def _criterion_annotation(cfg, built, scale=None):
    """Criterion ``k`` scan for the scaled field; ``hypothesis_satisfied`` is yes when it is negative."""
    fc = built.fields
    if scale is not None:
        fc = fc.with_scale(scale)
    E = fc.effective_external
    cr = cfg["criteria"]
    rep = scan_criterion(built.model, E, "k", cr["n_points"], cr["n_planes"], cfg["seed"])
    return {"criterion": rep.to_dict(), "hypothesis_satisfied": "yes" if rep.verdict == "negative" else "no"}


# ---------------------------------------------------------------------------
# subcommands: each returns converged (bool) after writing its reports


def cmd_simulate(cfg, built, out: ReportWriter):
    m, fc = built.model, built.fields
    sim = cfg["simulate"]
    rng = member_generators(cfg["seed"], 1)[0]
    p0 = from_state(m, sample_liouville(m, rng, 1)[0])
    traj = flow(m, fc, p0, sim["T"], IntegratorConfig(step=sim["step"]), stride=sim["stride"])
    rows = [dict(zip(traj.columns(), (float(t), *map(float, s), float(a), float(b))))
            for t, s, a, b in zip(traj.times, traj.states, traj.theta, traj.lam)]
    out.csv("trajectory.csv", rows)
    out.json("simulate.json", {"T": sim["T"], "step": sim["step"], "samples": len(rows),
                               "speed_error": traj.speed_error(), "initial_state": traj.states[0],
                               "final_state": traj.states[-1]})
    return bool(np.all(np.isfinite(traj.states)))


def cmd_lyapunov(cfg, built, out):
    est = cfg["estimator"]
    res = lyapunov_spectrum(built.model, built.fields, T=_T(cfg, 1000.0), cfg=ensemble_config(cfg),
                            qr_dt=est["qr_dt"], tol=est["tol"])
    out.csv("exponents.csv", [{"index": i, "exponent": e, "std_error": s}
                              for i, (e, s) in enumerate(zip(res.exponents, res.std_error))])
    out.csv("history.csv", [{"t": t, **{f"exponent_{i}": v for i, v in enumerate(h)}}
                            for t, h in zip(res.history_times, res.history)])
    out.json("lyapunov.json", res.to_dict())
    return res.converged


def cmd_entropy(cfg, built, out):
    s = cfg["estimator"]["s"]
    res = entropy_production(built.model, built.fields, s=s, T=_T(cfg, 1000.0), cfg=ensemble_config(cfg))
    report = {"entropy": res.to_dict(), **_criterion_annotation(cfg, built, s)}
    out.csv("entropy.csv", [{"s": res.s, "entropy_production": res.value, "std_error": res.std_error,
                             "batches": res.batches, "consistent": res.consistent,
                             "hypothesis_satisfied": report["hypothesis_satisfied"]}])
    out.json("entropy.json", report)
    return res.consistent


def _require_external(built):
    if built.fields.external is None:
        raise cfgmod.SchemaError("field.kind", "this command needs an external field (kind != 'none')")


def cmd_variance(cfg, built, out):
    _require_external(built)
    est = cfg["estimator"]
    fc = built.fields if est["s"] is None else built.fields.with_scale(est["s"])
    res = variance(built.model, fc, theta_observable(fc), T=_T(cfg, 100 * est["max_lag"]),
                   max_lag=est["max_lag"], cfg=ensemble_config(cfg), sample_dt=est["sample_dt"])
    out.csv("variance.csv", [{"observable": "theta", "variance": res.value, "band": res.band,
                              "std_error": res.std_error, "window": res.window, "converged": res.converged}])
    out.json("variance.json", res.to_dict())
    return res.converged


def _grid(cfg):
    est = cfg["estimator"]
    if est["s_grid"]:
        return [float(s) for s in est["s_grid"]]
    s_max = 0.4 if est["s_max"] is None else est["s_max"]
    n = 4 if est["n_s"] is None else est["n_s"]
    pos = [s_max * (i + 1) / n for i in range(n)]
    return [-s for s in reversed(pos)] + [0.0] + pos


def cmd_entropy_curve(cfg, built, out):
    _require_external(built)
    try:
        curve = entropy_curve(built.model, built.fields, _grid(cfg), T=_T(cfg, 1000.0),
                              cfg=ensemble_config(cfg), degree=cfg["estimator"]["degree"])
    except ValueError as exc:
        raise cfgmod.SchemaError("estimator.s_grid", str(exc)) from None
    out.csv("entropy_curve.csv", [{"s": s, "e": e, "std_error": er} for s, e, er in curve.table()])
    out.json("entropy_curve.json", {"coefficients": curve.coefficients, "covariance": curve.covariance,
                                    "second_derivative": curve.second_derivative,
                                    "second_derivative_error": curve.second_derivative_error,
                                    "first_derivative": curve.first_derivative,
                                    "first_derivative_error": curve.first_derivative_error})
    return all(e is None or e.consistent for e in curve.estimates)


def cmd_criteria(cfg, built, out):
    cr = cfg["criteria"]
    tags = cr["tags"]
    bad = [t for t in tags if t not in TAGS]
    if bad:
        raise cfgmod.SchemaError("criteria.tags", f"unknown criteria {bad}; choose from {list(TAGS)}")
    E = built.fields.effective_external
    reps = [scan_criterion(built.model, E, t, cr["n_points"], cr["n_planes"], cfg["seed"]) for t in tags]
    out.csv("criteria.csv", [{"criterion": r.tag, "supremum": r.supremum, "verdict": r.verdict,
                              "n_points": r.n_points, "n_planes": r.n_planes} for r in reps])
    out.json("criteria.json", {"reports": [r.to_dict() for r in reps],
                               "hypothesis_satisfied": "yes" if reps[0].verdict == "negative" else "no"})
    return True


def _quadrature_rows(cfg, built):
    m = built.model
    if m.kind != "torus":
        return []
    E = built.fields.effective_external
    res = cfg["identities"]["resolutions"] or ([16, 32, 64] if m.dim == 2 else [6, 12, 24])
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([cfg["seed"], 1])))
    V = random_vector_field(m, rng, 0.0)
    rows = []
    for which in ("divh", "divv", "divm"):
        r = [quadrature_divergence(m, E, V, which, N=int(N)) for N in res]
        orders = refinement_orders(r, [1.0 / N for N in res])
        exact = max(r) < EXACT_FLOOR
        ok = bool(exact or orders[-1] >= 1.5)
        for N, val, o in zip(res, r, [float("nan"), *orders]):
            rows.append({"identity": which, "model": m.name, "resolution": int(N), "residual": val,
                         "observed_order": o, "passed": ok})
    return rows


def cmd_identities(cfg, built, out):
    ic = cfg["identities"]
    E = built.fields.effective_external
    checks = identity_suite(built.model, E, ic["n_points"], cfg["seed"], tuple(ic["steps"]))
    rows = [c.row() for c in checks]
    out.csv("identities.csv", rows)
    quad = _quadrature_rows(cfg, built) if ic["quadrature"] else []
    if quad:
        out.csv("quadrature.csv", quad)
    ok = all(r["passed"] for r in rows + quad)
    out.json("identities.json", {"pointwise": rows, "quadrature": quad, "all_passed": ok})
    return ok


def _scenario_settings(cfg):
    it, est = cfg["integrator"], cfg["estimator"]
    settings = {"seed": cfg["seed"], "threads": cfg["threads"], **it}
    settings.update({k: v for k, v in est.items() if v is not None})
    settings.update({k: cfg["criteria"][k] for k in ("n_points", "n_planes")})
    return settings


def cmd_scenario(cfg, name, out):
    tables, summary, converged = SCENARIOS[name](_scenario_settings(cfg))
    for stem, rows in sorted(tables.items()):
        out.csv(f"{stem}.csv", rows)
    out.json("summary.json", {"scenario": name, **summary})
    return converged


HANDLERS = {"simulate": cmd_simulate, "lyapunov": cmd_lyapunov, "entropy": cmd_entropy,
            "variance": cmd_variance, "entropy-curve": cmd_entropy_curve, "criteria": cmd_criteria,
            "identities": cmd_identities}


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--threads", type=int, help="worker threads; changes wall time only")
    common.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./{DEFAULT_OUT}, "
                                      "in a subdirectory named after the command and config hash)")
    p = argparse.ArgumentParser(prog="thermolab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for c in COMMANDS:
        sp = sub.add_parser(c, parents=[common])
        if c == "scenario":
            sp.add_argument("name", choices=sorted(SCENARIOS))
    return p


def output_dir(args, label: str, digest: str) -> Path:
    if args.out:
        return Path(args.out)
    root = os.environ.get(OUT_ENV) or DEFAULT_OUT
    return Path(root) / f"{label}-{digest[:12]}"


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    label = args.command if args.command != "scenario" else args.name
    try:
        cfg = cfgmod.load(args.config, {"seed": args.seed, "threads": args.threads})
        if args.command != "scenario":
            built = cfgmod.build(cfg)
    except (cfgmod.SchemaError, OSError) as exc:
        print(f"thermolab: configuration error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    digest = cfgmod.config_hash(cfg)
    out = ReportWriter(output_dir(args, label, digest))
    try:
        if args.command == "scenario":
            converged = cmd_scenario(cfg, args.name, out)
        else:
            converged = HANDLERS[args.command](cfg, built, out)
    except (cfgmod.SchemaError, GeometryError) as exc:
        print(f"thermolab: configuration error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    status = EXIT_OK if converged else EXIT_NONCONVERGED
    out.manifest(label, cfgmod.hashed_view(cfg), digest, bool(converged), status)
    if status == EXIT_NONCONVERGED:
        print(f"thermolab: {label} did not converge; reports in {out.out}", file=sys.stderr)
    else:
        print(str(out.out))
    return status


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
