"""Command line driver: ``loggas {equilibrium,invert,predict,sample,clt,verify} --config FILE``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .clt import (FluctuationSample, empirical_clt, fluctuations, histogram, verdict_row, write_histogram,
                  write_summary, write_verdicts)
from .config import ExperimentConfig, load_config, schema_text
from .equilibrium import dyson_residual, save_measure, solve_equilibrium, verify_euler_lagrange
from .errors import AdmissibilityError, CertificationError, ConfigError, DomainError, LogGasError
from .master_operator import (check_conditions, invert_master_operator, parse_xi, predict_clt, save_prediction,
                              save_psi, variance_identity_gap)
from .potentials import resolve
from .sampler import (ChainDiagnostics, ChainResult, Configuration, chain_rng, default_workers, mcmc_sample,
                      splitting_gap, tridiagonal_sample, write_binary, write_csv)


class Context:
    def __init__(self, cfg: ExperimentConfig, out: Path, workers: int, tol_scale: float):
        self.cfg = cfg
        self.out = out
        self.workers = workers
        self.tol_scale = tol_scale
        self.provenance = {"config_hash": cfg.hash, "tool_version": __version__}
        self.failures: list[str] = []
        self._measure = None
        self.V = resolve(cfg.get("experiment", "potential"))

    def tol(self, key: str) -> float:
        return self.cfg.get("tolerances", key) * self.tol_scale

    def path(self, name: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        return self.out / name

    def json(self, name: str, payload: dict) -> None:
        d = dict(self.provenance)
        d.update(payload)
        write_summary(self.path(name), d)

    @property
    def measure(self):
        if self._measure is None:
            self._measure = solve_equilibrium(self.V, nodes=self.cfg.get("solver", "nodes"),
                                              tol=self.tol("euler_lagrange"))
        return self._measure

    def fail(self, msg: str) -> None:
        self.failures.append(msg)


def cell_seed(seed: int, N: int, beta: float) -> int:
    """Per-cell seed; the same cell always gets the same stream."""
    ss = np.random.SeedSequence(seed, spawn_key=(int(N), int(round(beta * 1_000_000))))
    return int(ss.generate_state(1, np.uint64)[0])


def cmd_equilibrium(ctx: Context) -> None:
    m = ctx.measure
    rep = m.certificate
    save_measure(m, ctx.path("measure.txt"), ctx.provenance)
    ok = rep.certified(m.c_V, ctx.tol("euler_lagrange"))
    ctx.json("equilibrium.json", {"support": m.support, "singular_points": m.singular_points, "c_V": m.c_V,
                                  "I_V": m.I_V, "max_abs_zeta_on_support": rep.max_abs_on_support,
                                  "min_zeta_off_support": rep.min_off_support,
                                  "dyson_residual": rep.dyson_residual, "certified": ok})
    if not ok:
        ctx.fail(f"Euler-Lagrange certification failed: {rep}")


def _conditions(ctx: Context):
    xi = parse_xi(ctx.cfg.get("experiment", "xi"))
    rep = check_conditions(xi, ctx.measure, ctx.tol("conditions"))
    return xi, rep


def cmd_invert(ctx: Context) -> None:
    xi, rep = _conditions(ctx)
    ctx.json("conditions.json", rep.as_dict())
    if not rep.satisfied:
        worst = [f"X1 d={d} residual {r:.10g}" for d, r in enumerate(rep.x1) if abs(r) >= rep.tol * rep.scale]
        worst += [f"X2 s={s:g} d={d} residual {r:.10g}" for s, d, r in rep.x2 if abs(r) >= rep.tol * rep.scale]
        raise AdmissibilityError(f"{xi.name}: " + "; ".join(worst), report=rep)
    tm = invert_master_operator(xi, ctx.measure, ctx.V, tol=ctx.tol("conditions"))
    save_psi(tm, ctx.path("psi.txt"), ctx.provenance)


def _predictions(ctx: Context):
    xi, rep = _conditions(ctx)
    if not rep.satisfied:
        raise AdmissibilityError(f"{xi.name}: conditions not satisfied", report=rep)
    tm = invert_master_operator(xi, ctx.measure, ctx.V, tol=ctx.tol("conditions"))
    preds = {b: predict_clt(xi, tm, ctx.measure, ctx.V, b, ctx.tol("variance_identity"))
             for b in ctx.cfg.get("experiment", "beta")}
    return xi, tm, preds


def cmd_predict(ctx: Context) -> None:
    xi, tm, preds = _predictions(ctx)
    for b, p in preds.items():
        save_prediction(p, ctx.path(f"prediction_beta{b:g}.json"), ctx.provenance)


def _is_gaussian(V) -> bool:
    return V.poly is not None and V.poly.degree() == 2 and np.allclose(V.poly.coef, [0.0, 0.0, 0.5])


def _sample_cell(ctx: Context, N: int, beta: float) -> list[ChainResult]:
    cfg = ctx.cfg
    seed = cell_seed(cfg.get("seeds", "seed"), N, beta)
    method = cfg.get("sampler", "method")
    if method == "tridiagonal":
        if not _is_gaussian(ctx.V):
            raise DomainError("the tridiagonal sampler is exact only for V(x) = x^2/2")
        rng = chain_rng(seed, 0)
        draws = cfg.get("sampler", "draws")
        pos = np.array([tridiagonal_sample(beta, N, rng).positions for _ in range(draws)])
        diag = ChainDiagnostics(1.0, 1.0, float(draws), 0.0, 0.0, True)
        return [ChainResult(pos, np.arange(draws), 0, beta, seed, diag)]
    if method != "mcmc":
        raise ConfigError(f"unknown sampler method {method!r}")
    win = cfg.get("sampler", "window")
    window = None if win == "auto" else tuple(float(v) for v in win.split(","))
    return mcmc_sample(ctx.V, beta, N, sweeps=cfg.get("sampler", "sweeps"), burn_in=cfg.get("sampler", "burn_in"),
                       thinning=cfg.get("sampler", "thinning"), window=window, seed=seed,
                       chains=cfg.get("sampler", "chains"), workers=ctx.workers, measure=ctx.measure)


def _cells(ctx: Context):
    for N in ctx.cfg.get("experiment", "N"):
        for beta in ctx.cfg.get("experiment", "beta"):
            yield N, beta


def cmd_sample(ctx: Context) -> None:
    binary = ctx.cfg.get("sampler", "format") == "binary"
    for N, beta in _cells(ctx):
        res = _sample_cell(ctx, N, beta)
        stem = f"samples_N{N}_beta{beta:g}"
        if binary:
            write_binary(ctx.path(stem + ".lgs"), res, ctx.provenance)
        else:
            write_csv(ctx.path(stem + ".csv"), res, ctx.provenance)
        diags = [r.diagnostics.as_dict() for r in res]
        ctx.json(f"diagnostics_N{N}_beta{beta:g}.json", {"N": N, "beta": beta, "chains": diags})
        for c, d in enumerate(diags):
            if not d["adapted"]:
                ctx.fail(f"N={N} beta={beta:g} chain {c}: proposal adaptation did not reach the target acceptance")


def cmd_clt(ctx: Context) -> None:
    xi, tm, preds = _predictions(ctx)
    m = ctx.measure
    rows, summary = [], []
    for N, beta in _cells(ctx):
        res = _sample_cell(ctx, N, beta)
        if ctx.cfg.get("sampler", "method") == "tridiagonal":
            vals = fluctuations(xi, res[0].positions, m)
            fs = FluctuationSample.iid(vals, N, beta)
        else:
            fs = FluctuationSample.from_chains(xi, res, m)
        pred = preds[beta]
        v = empirical_clt(fs, pred)
        rows.append(verdict_row(ctx.V.name, xi.name, N, beta, v))
        write_histogram(ctx.path(f"hist_N{N}_beta{beta:g}.csv"), histogram(fs.values, pred.m_xi, pred.v_xi),
                        ctx.provenance)
        ok = (v.conclusive and v.ks_p > ctx.tol("ks_p") and v.mean_ok(3.0)
              and v.var_ok(ctx.tol("variance_rel")))
        summary.append({"N": N, "beta": beta, "pass": ok, **{k: val for k, val in v.as_dict().items()
                                                               if k != "laplace"}})
        if not ok:
            ctx.fail(f"N={N} beta={beta:g}: CLT verdict failed (ks_p={v.ks_p:.3g}, mean={v.mean:.4g}"
                     f"+-{v.mean_err:.2g}, var={v.var:.4g} vs {v.v_pred:.4g})")
    write_verdicts(ctx.path("verdicts.csv"), rows, ctx.provenance)
    ctx.json("clt_summary.json", {"cells": summary})


def cmd_verify(ctx: Context) -> None:
    m, V = ctx.measure, ctx.V
    rep = verify_euler_lagrange(m, V)
    results = {"max_abs_zeta_on_support": rep.max_abs_on_support, "min_zeta_off_support": rep.min_off_support,
               "dyson_residual": dyson_residual(m, V)}
    checks = {"euler_lagrange": rep.certified(m.c_V, ctx.tol("euler_lagrange")),
              "dyson": results["dyson_residual"] < ctx.tol("dyson")}
    rng = np.random.default_rng(cell_seed(ctx.cfg.get("seeds", "seed"), 0, 0.0))
    lo, hi = m.support[0][0], m.support[-1][1]
    worst = 0.0
    for N in (8, 64):
        for _ in range(20):
            c = Configuration(rng.uniform(lo - 0.5, hi + 0.5, N), 2.0)
            worst = max(worst, splitting_gap(c, V, m) / N ** 2)
    results["splitting_gap_over_N2"] = worst
    checks["splitting"] = worst < ctx.tol("splitting")
    xi, cond = _conditions(ctx)
    results["conditions"] = cond.as_dict()
    if cond.satisfied:
        tm = invert_master_operator(xi, m, V, tol=ctx.tol("conditions"))
        pred = predict_clt(xi, tm, m, V, 2.0, rel_tol=np.inf)
        gap = variance_identity_gap(tm, xi, m, V)
        results["variance_identity_gap"] = gap
        checks["variance_identity"] = gap < ctx.tol("variance_identity") * (1 + abs(pred.v_xi))
    results["checks"] = checks
    ctx.json("verify.json", results)
    for k, ok in checks.items():
        if not ok:
            ctx.fail(f"{k} check failed")


COMMANDS = {"equilibrium": cmd_equilibrium, "invert": cmd_invert, "predict": cmd_predict, "sample": cmd_sample,
            "clt": cmd_clt, "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="loggas", description=__doc__)
    p.add_argument("subcommand", nargs="?", choices=sorted(COMMANDS))
    p.add_argument("--config", help="experiment config (INI); see --print-schema")
    p.add_argument("--seed", type=int, help="override [seeds] seed")
    p.add_argument("--workers", type=int, help="worker processes (default: $LOGGAS_WORKERS or 1)")
    p.add_argument("--out", help="override [experiment] output")
    p.add_argument("--tolerance-scale", type=float, default=1.0, help="multiply every tolerance")
    p.add_argument("--print-schema", action="store_true", help="print the config schema and exit")
    p.add_argument("--version", action="version", version=f"loggas {__version__}")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.print_schema:
        sys.stdout.write(schema_text())
        return 0
    if not args.subcommand or not args.config:
        build_parser().print_usage(sys.stderr)
        print("error[usage]: a subcommand and --config are required", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.set("seeds", "seed", args.seed)
        if args.out:
            cfg.set("experiment", "output", args.out)
        workers = args.workers if args.workers is not None else default_workers()
        ctx = Context(cfg, Path(cfg.get("experiment", "output")), max(1, workers), args.tolerance_scale)
        COMMANDS[args.subcommand](ctx)
    except LogGasError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return 2 if not isinstance(exc, (AdmissibilityError, CertificationError)) else 1
    except (OSError, ValueError) as exc:
        print(f"error[invalid-input]: {exc}", file=sys.stderr)
        return 2
    for msg in ctx.failures:
        print(f"fail: {msg}", file=sys.stderr)
    return 1 if ctx.failures else 0


if __name__ == "__main__":
    sys.exit(main())
