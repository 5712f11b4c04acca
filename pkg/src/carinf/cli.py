"""Command-line entry point: ``carinf simulate|analyze|randomize|diagnose``.

Settings come from a flat ``key = value`` file given with ``--config``;
command-line flags override it. Exit status is 0 on success, 2 on a
configuration error and 3 on a data error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
import warnings
from itertools import product
from pathlib import Path

from .core import AllocationSpec
from .dgp import DGPSpec, ZSpec
from .errors import CarInfError, ConfigError, DataError
from .estimators import Contrast, DroppedStrataWarning, SmallCellWarning
from .inference import infer
from .io import (
    Config,
    load_analysis_input,
    read_csv,
    render_analysis,
    render_grid,
    render_simulation,
    resolve_contrast,
    write_csv,
)
from .montecarlo import ESTIMATOR_LABELS, ScenarioSpec, monte_carlo
from .randomizers import SchemeConfig, classify_type, make_randomizer
from .rng import UniformStream, stream

log = logging.getLogger("carinf")

DEFAULT_SEED = 2021

SCHEME_KEYS = ("block_size", "coin_p", "urn_alpha", "urn_beta", "min_q", "min_weights")


def _scheme_kwargs(cfg: Config) -> dict:
    kw = {}
    if cfg.has("block_size"):
        kw["block_size"] = cfg.int("block_size", minimum=1)
    if cfg.has("coin_p"):
        kw["coin_p"] = cfg.float("coin_p")
    if cfg.has("urn_alpha"):
        kw["urn_alpha"] = cfg.int("urn_alpha", minimum=0)
    if cfg.has("urn_beta"):
        kw["urn_beta"] = cfg.int("urn_beta", minimum=0)
    if cfg.has("min_q"):
        kw["min_q"] = cfg.float("min_q")
    if cfg.has("min_weights"):
        try:
            kw["min_weights"] = tuple(float(v) for v in cfg.list("min_weights"))
        except ValueError:
            cfg.fail("min_weights", "expected comma-separated numbers")
    return kw


def _alloc(cfg: Config, key: str, text: str) -> AllocationSpec:
    try:
        return AllocationSpec.parse(text)
    except ConfigError as exc:
        cfg.fail(key, str(exc))


# ---------------------------------------------------------------------------
# simulate

SIM_KEYS = {
    "cases", "zspecs", "n", "schemes", "allocations", "reps", "seed", "workers", "out",
    "alpha", "phi", "psi", "contrasts", "x1_sd_form", *SCHEME_KEYS,
}

SIM_HEADER = (
    "scheme", "allocation", "n", "case", "z", "contrast", "estimator", "theta",
    "bias", "sd", "se", "cp", "fail_count", "reps", "flags",
)


def build_scenarios(cfg: Config) -> list:
    cases = cfg.list("cases", ["I", "II", "III"])
    zspecs = [ZSpec(z) for z in cfg.list("zspecs", ["X1", "X1_d2", "X1_d4"])]
    try:
        ns = [int(v) for v in cfg.list("n", ["500"])]
    except ValueError:
        cfg.fail("n", "expected comma-separated integers")
    schemes = cfg.list("schemes", ["minimization"])
    allocs = [_alloc(cfg, "allocations", a) for a in cfg.list("allocations", ["1:1", "1:2"])]
    reps = cfg.int("reps", 2000, minimum=1)
    seed = cfg.int("seed", DEFAULT_SEED)
    alpha = cfg.float("alpha", 0.05)
    phi, psi = cfg.float("phi", 1.0), cfg.float("psi", 1.0)
    contrasts = cfg.list("contrasts")
    kw = _scheme_kwargs(cfg)
    out = []
    for case, z, n, scheme, alloc in product(cases, zspecs, ns, schemes, allocs):
        dgp = DGPSpec(case, phi=phi, psi=psi, x1_sd_form=cfg.bool("x1_sd_form"))
        if alloc.k != dgp.k:
            continue
        sc = SchemeConfig(scheme, alloc, margin_arity=z.arity, levels=z.levels, **kw)
        out.append(ScenarioSpec(
            n=n, dgp=dgp, zspec=z, scheme=sc, reps=reps, master_seed=seed, alpha=alpha,
            contrasts=tuple(Contrast.parse(c) for c in contrasts) if contrasts else None,
        ))
    if not out:
        raise ConfigError(f"{cfg.source}: the scenario grid is empty (check that allocations match the cases' arm counts)")
    return out


def simulation_rows(summaries) -> list:
    rows = []
    for s in summaries:
        sc = s.scenario
        for r in s.rows:
            flags = [f for f in ("sd_undefined", "cp_undefined", "high_fail") if getattr(r, f)]
            rows.append((
                sc.scheme.scheme, sc.alloc.ratio, sc.n, getattr(sc.dgp, "case", "custom"),
                sc.zspec.label, str(r.contrast), ESTIMATOR_LABELS[r.estimator], r.theta,
                r.bias, r.sd, r.se_avg, r.cp, r.fail_count, sc.reps, ";".join(flags),
            ))
    return rows


def cmd_simulate(cfg: Config) -> int:
    cfg.unknown(SIM_KEYS)
    scenarios = build_scenarios(cfg)
    workers = cfg.int("workers", 1, minimum=1)
    summaries = []
    for sc in scenarios:
        t0 = time.perf_counter()
        summaries.append(monte_carlo(sc, workers=workers))
        log.info("%s: %d reps in %.1fs", sc.label, sc.reps, time.perf_counter() - t0)
    rows = simulation_rows(summaries)
    text = render_simulation(summaries)
    out = cfg.str("out")
    if out:
        write_csv(out, SIM_HEADER, rows)
        Path(out).with_suffix(".txt").write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(write_csv(None, SIM_HEADER, rows))
        sys.stdout.write("\n")
    sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# analyze

ANALYZE_KEYS = {
    "input", "outcome", "arm", "strata", "covariates", "alloc", "contrasts", "estimators",
    "alpha", "arm_order", "drop_incomplete_strata", "out", "id", "seed", "workers", "reps",
}

ANALYZE_HEADER = (
    "contrast", "contrast_labels", "estimator", "estimate", "se", "ci_low", "ci_high",
    "p_value", "alpha", "sig2_main", "sig2_V", "sig2_V_clamped", "n",
)


def cmd_analyze(cfg: Config) -> int:
    cfg.unknown(ANALYZE_KEYS)
    table = read_csv(cfg.str("input", required=True))
    alloc = _alloc(cfg, "alloc", cfg.str("alloc")) if cfg.has("alloc") else None
    inp = load_analysis_input(
        table,
        outcome=cfg.str("outcome", "y"),
        arm=cfg.str("arm", "arm"),
        strata=cfg.list("strata", ["stratum"]),
        covariates=cfg.list("covariates", []),
        arm_order=cfg.list("arm_order"),
        alloc=alloc,
        id_column=cfg.str("id"),
    )
    labels = inp.arm_labels
    k = len(labels)
    texts = cfg.list("contrasts") or [f"{t}-1" for t in range(2, k + 1)]
    contrasts = [resolve_contrast(c, labels) for c in texts]
    tags = cfg.list("estimators", ["U", "B", "A"])
    for tag in tags:
        if tag not in ESTIMATOR_LABELS:
            cfg.fail("estimators", f"unknown estimator {tag!r}; expected U, A or B")
    alpha = cfg.float("alpha", 0.05)
    drop = cfg.bool("drop_incomplete_strata")
    reports = {}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        for c in contrasts:
            reports[c] = infer(inp.data, c, tuple(tags), alpha, drop)
    seen = set()
    for w in caught:
        if issubclass(w.category, (SmallCellWarning, DroppedStrataWarning)) and str(w.message) not in seen:
            seen.add(str(w.message))
            log.warning("%s", w.message)
    names = {c: f"{labels[c.t - 1]} vs {labels[c.s - 1]}" for c in contrasts}
    rows = []
    for c in contrasts:
        for tag, rep in reports[c].items():
            comp = rep.components
            rows.append((
                str(c), names[c], ESTIMATOR_LABELS[tag], rep.estimate, rep.se, rep.ci_low,
                rep.ci_high, rep.p_value, alpha, comp.sig2_main, comp.sig2_V, comp.clamped, comp.n,
            ))
    out = cfg.str("out")
    if out:
        write_csv(out, ANALYZE_HEADER, rows)
    sys.stdout.write(render_analysis(reports, names))
    return 0


# ---------------------------------------------------------------------------
# randomize

RANDOMIZE_KEYS = {
    "input", "scheme", "alloc", "strata", "arm_column", "arm_labels", "seed", "out",
    "workers", "reps", "alpha", *SCHEME_KEYS,
}


def cmd_randomize(cfg: Config) -> int:
    cfg.unknown(RANDOMIZE_KEYS, prefixes=("levels.",))
    table = read_csv(cfg.str("input", required=True))
    alloc = _alloc(cfg, "alloc", cfg.str("alloc", "1:1"))
    strata = cfg.list("strata")
    if not strata:
        raise ConfigError(f"{cfg.source}: missing required key 'strata'")
    cols = [table.column(c) for c in strata]
    arm_col = cfg.str("arm_column", "arm")
    if arm_col in table.header:
        cfg.fail("arm_column", f"column {arm_col!r} already exists in {table.source}")
    arm_labels = cfg.list("arm_labels") or [str(t) for t in range(1, alloc.k + 1)]
    if len(arm_labels) != alloc.k:
        cfg.fail("arm_labels", f"need {alloc.k} labels, got {len(arm_labels)}")

    lookups, sizes = [], []
    for c in strata:
        levels = cfg.list(f"levels.{c}")
        lookups.append(None if levels is None else {lab: i for i, lab in enumerate(levels)})
        sizes.append(None if levels is None else len(levels))
    keys = []
    for row, line in zip(table.rows, table.line_numbers):
        key = []
        for c, j, lookup in zip(strata, cols, lookups):
            v = row[j]
            if lookup is not None:
                if v not in lookup:
                    raise DataError(f"{table.source} row {line}: unknown category {v!r} in column {c!r}")
                key.append(lookup[v])
            else:
                try:
                    code = int(v)
                except ValueError:
                    code = -1
                if code < 0:
                    raise DataError(
                        f"{table.source} row {line}: column {c!r} value {v!r} is not a category code "
                        f"(give levels.{c} to map labels)"
                    )
                key.append(code)
        keys.append(tuple(key))

    levels = tuple(sizes) if all(s is not None for s in sizes) else None
    sc = SchemeConfig(cfg.str("scheme", "minimization"), alloc, margin_arity=len(strata), levels=levels,
                      **_scheme_kwargs(cfg))
    seed = cfg.int("seed", DEFAULT_SEED)
    rnd = make_randomizer(sc, UniformStream(stream(seed, 0)))
    arms = rnd.assign_many(keys)
    rows = [row + (arm_labels[a - 1],) for row, a in zip(table.rows, arms)]
    text = write_csv(cfg.str("out"), table.header + (arm_col,), rows)
    if not cfg.str("out"):
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# diagnose

DIAGNOSE_KEYS = {"schemes", "alloc", "zspec", "n_grid", "reps", "seed", "out", "workers", "alpha", *SCHEME_KEYS}


def cmd_diagnose(cfg: Config) -> int:
    cfg.unknown(DIAGNOSE_KEYS)
    schemes = cfg.list("schemes", ["simple", "spb", "biased_coin", "urn", "minimization"])
    alloc = _alloc(cfg, "alloc", cfg.str("alloc", "1:1"))
    zspec = ZSpec(cfg.str("zspec", "X1_d2"))
    try:
        grid = [int(v) for v in cfg.list("n_grid", ["500", "2000", "8000"])]
    except ValueError:
        cfg.fail("n_grid", "expected comma-separated integers")
    reps = cfg.int("reps", 200, minimum=200)
    seed = cfg.int("seed", DEFAULT_SEED)
    dgp = DGPSpec("I" if alloc.k == 2 else "IV")

    def draw_keys(n, gen):
        x1, x2, _ = dgp.draw(n, gen)
        return zspec.keys(x1, x2)

    kw = _scheme_kwargs(cfg)
    reports = []
    for name in schemes:
        sc = SchemeConfig(name, alloc, margin_arity=zspec.arity, levels=zspec.levels, **kw)
        t0 = time.perf_counter()
        reports.append(classify_type(sc, grid, reps, draw_keys, seed))
        log.info("%s: %.1fs", name, time.perf_counter() - t0)
    header = ["scheme"] + [f"n={n}" for n in grid] + ["slope", "cross_corr", "verdict"]
    rows = [
        [r.scheme] + [f"{v:.4f}" for v in r.stat] + [f"{r.slope:.4f}", f"{r.cross_corr:.4f}", r.verdict]
        for r in reports
    ]
    out = cfg.str("out")
    if out:
        write_csv(out, ["scheme", *[f"stat_n{n}" for n in grid], "slope", "cross_corr", "verdict", "reference"],
                  [[r.scheme, *r.stat, r.slope, r.cross_corr, r.verdict, r.reference] for r in reports])
    sys.stdout.write(
        f"median |D_t(z)|/sqrt(n(z)) by sample size, Z = {zspec.label}, allocation {alloc.ratio}, {reps} reps\n"
    )
    sys.stdout.write(render_grid(header, rows))
    return 0


# ---------------------------------------------------------------------------

COMMANDS = {
    "simulate": cmd_simulate,
    "analyze": cmd_analyze,
    "randomize": cmd_randomize,
    "diagnose": cmd_diagnose,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="carinf", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "Monte Carlo bias/SD/SE/CP tables over a scenario grid",
        "analyze": "estimates, SEs and p-values for a trial CSV",
        "randomize": "append sequential assignments to a covariate CSV",
        "diagnose": "empirical imbalance scaling of randomization schemes",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                       help="log progress to stderr")
        p.add_argument("input", nargs="?", help="input CSV (analyze, randomize)")
        p.add_argument("--config", help="flat key = value settings file")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--reps", type=int)
        p.add_argument("--out", help="output CSV path")
        p.add_argument("--alpha", type=float)
        p.add_argument("--drop-incomplete-strata", action="store_true", default=None,
                       help="drop strata missing a contrasted arm instead of failing")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key")
    return parser


def load_config(args) -> Config:
    cfg = Config.load(args.config)
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        cfg.set(key.strip(), value.strip())
    for key in ("seed", "workers", "reps", "out", "alpha", "input"):
        cfg.set(key, getattr(args, key))
    if args.drop_incomplete_strata:
        cfg.set("drop_incomplete_strata", "true")
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"carinf {args.command}: configuration error: {exc}", file=sys.stderr)
        return exc.exit_code
    except DataError as exc:
        print(f"carinf {args.command}: data error: {exc}", file=sys.stderr)
        return exc.exit_code
    except CarInfError as exc:  # pragma: no cover - every subclass is one of the above
        print(f"carinf {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
