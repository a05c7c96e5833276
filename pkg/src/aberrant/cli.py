"""Command-line front end: ``aberrant {test,design-sensitivity,power,size}``.

Results go out as one JSON run record (stdout or ``--output``).  Exit codes:
0 the command ran, 2 the input or arguments failed validation, 3 the command
ran but an optimisation fell back to a conservative answer.
"""
import argparse
import csv
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__, adaptive, designsens, simlab
from .core import AberrantSpec, MatchedSample, ValidationError, aberrant_indicators, aberrant_ranks
from .senstests import crossing_gamma, mh_worst_case, separability_worst_case

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_FALLBACK = 3
CSV_HEADER = ("stratum", "treated", "response")
_TRUE = {"1", "true", "t", "yes"}
_FALSE = {"0", "false", "f", "no"}


class UsageError(ValidationError):
    pass


# ---------------------------------------------------------------------------
# run records

def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        # JSON has no inf/nan
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return x


@dataclass
class RunRecord:
    command: str
    config: dict
    seed: int
    results: list
    timing: float = 0.0
    version: str = __version__
    diagnostics: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(_plain(asdict(self)), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


# ---------------------------------------------------------------------------
# CSV

def _parse_treated(value, lineno):
    v = value.strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise ValidationError(f"line {lineno}: treated must be 0/1 or true/false, got {value!r}")


def read_sample_csv(path):
    """Read ``stratum,treated,response`` rows into a :class:`MatchedSample`."""
    labels, treated, response = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip().lower() for h in header) != CSV_HEADER:
            raise ValidationError(f"line 1: header must be {','.join(CSV_HEADER)}")
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ValidationError(f"line {lineno}: expected 3 fields, got {len(row)}")
            try:
                r = float(row[2])
            except ValueError:
                raise ValidationError(f"line {lineno}: response {row[2]!r} is not a number") from None
            if not math.isfinite(r):
                raise ValidationError(f"line {lineno}: response must be finite")
            labels.append(row[0].strip())
            treated.append(_parse_treated(row[1], lineno))
            response.append(r)
    if not labels:
        raise ValidationError("no data rows")
    return MatchedSample.from_arrays(labels, treated, response)


def write_sample_csv(sample, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for label, z, r in sample.rows():
            w.writerow([label, z, repr(r)])


# ---------------------------------------------------------------------------
# argument helpers

def parse_grid(text):
    """``a:b:step`` (inclusive) or a comma-separated list of gamma values."""
    try:
        if ":" in text:
            a, b, step = (float(x) for x in text.split(":"))
            if step <= 0 or b < a:
                raise ValueError
            n = int(math.floor((b - a) / step + 1e-9)) + 1
            vals = [round(a + i * step, 12) for i in range(n)]
        else:
            vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"bad gamma grid {text!r}; use a:b:step or a comma list") from None
    if not vals or any(not math.isfinite(g) or g < 1.0 for g in vals):
        raise UsageError("gamma values must be finite and >= 1")
    return sorted(set(vals))


def _effect(args, kind):
    if kind == simlab.Kind.ADDITIVE:
        if args.delta is not None:
            raise UsageError("additive models take --beta, not --delta")
        return 1.0 if args.beta is None else args.beta
    if args.beta is not None:
        raise UsageError("multiplicative models take --delta, not --beta")
    return 2.0 if args.delta is None else args.delta


def _generator(args, null=False):
    if args.model not in simlab.MODELS:
        raise UsageError(f"--model must be one of 1..8, got {args.model}")
    kind = simlab.MODELS[args.model][0]
    eff = _effect(args, kind)
    if null:
        eff = 0.0 if kind == simlab.Kind.ADDITIVE else 1.0
    return simlab.GeneratorSpec.model(args.model, eff, args.m, args.cutoff)


# ---------------------------------------------------------------------------
# commands

def _component_rows(sample, spec, test, grid, alpha):
    rows = []
    if test == "mh":
        f = lambda g: mh_worst_case(sample, spec, g)
    else:
        q = aberrant_ranks(sample, spec)
        f = lambda g: separability_worst_case(sample, q, g)
    for g in grid:
        r = f(g)
        rows.append({"gamma": g, "alpha": alpha, "statistic": r.statistic_value,
                     "worst_mean": r.worst_mean, "worst_variance": r.worst_variance,
                     "deviate": r.deviate, "p_value": r.p_value, "reject": r.p_value <= alpha})
    sv = crossing_gamma(lambda g: f(g).p_value <= alpha, grid)
    return rows, sv, False


def _bonferroni_rows(sample, spec, grid, alpha):
    ind = aberrant_indicators(sample, spec)
    q = aberrant_ranks(sample, spec)
    rows = []

    def pval(g):
        p1 = separability_worst_case(sample, ind, g).p_value
        p2 = separability_worst_case(sample, q, g).p_value
        return min(1.0, 2.0 * min(p1, p2)), p1, p2
    for g in grid:
        p, p1, p2 = pval(g)
        rows.append({"gamma": g, "alpha": alpha, "p_value": p, "p_mh": p1, "p_aberrant": p2,
                     "reject": p <= alpha})
    sv = crossing_gamma(lambda g: pval(g)[0] <= alpha, grid)
    return rows, sv, False


def _adaptive_rows(sample, spec, grid, alpha, seed):
    ind = aberrant_indicators(sample, spec)
    q = aberrant_ranks(sample, spec)
    rows = []
    fallback = False
    for g in grid:
        prob = adaptive.AdaptiveProblem(sample, ind, q, g, alpha)
        v = adaptive.adaptive_test_full_matching(prob, seed=seed)
        row = {"gamma": g, "alpha": alpha, "reject": v.reject, "rho_star": v.rho_star,
               "critical_value": v.quantile, "y_star": v.y_star,
               "bonferroni_reject": v.bonferroni_reject, "flags": v.flags}
        if not v.flags.get("degenerate_variance"):
            a = adaptive.adaptive_alpha_star(sample, ind, q, g, seed=seed)
            row["alpha_star"] = a.value
            row["alpha_star_at_least_half"] = a.at_least_half
        fallback = fallback or v.flags.get("solver_fallback", False)
        rows.append(row)
    engine = adaptive.AdaptiveEngine(sample, ind, q, alpha, seed=seed)
    sv = crossing_gamma(engine.rejects, grid)
    return rows, sv, fallback or engine.failures > 0


def cmd_test(args):
    sample = read_sample_csv(args.csv)
    spec = AberrantSpec(args.cutoff, args.direction)
    grid = parse_grid(args.gamma)
    if args.test in ("mh", "aberrant"):
        rows, sv, fb = _component_rows(sample, spec, args.test, grid, args.alpha)
    elif args.test == "bonferroni":
        rows, sv, fb = _bonferroni_rows(sample, spec, grid, args.alpha)
    else:
        rows, sv, fb = _adaptive_rows(sample, spec, grid, args.alpha, args.seed)
    config = {"csv": args.csv, "test": args.test, "cutoff": args.cutoff,
              "direction": spec.direction.value, "gamma": grid, "alpha": args.alpha,
              "strata": sample.n_strata, "units": sample.n_units,
              "shape": sample.diagnostics.shape}
    diag = {"sensitivity_value": sv.value, "sensitivity_status": sv.status,
            "sensitivity_bracket": list(sv.bracket), "solver_fallback": fb}
    return RunRecord("test", config, args.seed, rows, diagnostics=diag), fb


def cmd_design_sensitivity(args):
    gen = _generator(args)
    if args.test == "mh":
        r = designsens.design_sensitivity_mh(gen, args.tol, args.mc, args.seed)
    elif args.test == "aberrant":
        r = designsens.design_sensitivity_aberrant(gen, args.tol, args.mc, args.seed)
    else:
        raise UsageError("design sensitivity is available for --test mh or aberrant")
    config = {"model": args.model, "effect": gen.effect, "m": gen.m, "cutoff": gen.cutoff,
              "test": args.test, "mc": args.mc, "tol": args.tol}
    row = {"gamma_tilde": r.gamma_tilde, "bracket": list(r.bracket), "mc_samples": r.mc_samples,
           "std_error": r.std_error_estimate, "status": r.status}
    diag = {}
    if not r.found:
        diag["bracket_failure"] = r.status
        print(f"aberrant: no design sensitivity root ({r.status})", file=sys.stderr)
    return RunRecord("design-sensitivity", config, args.seed, [row], diagnostics=diag), False


def _tests_arg(text):
    tests = [t.strip() for t in text.split(",") if t.strip()]
    for t in tests:
        simlab.Test(t)
    return tests


def _simulate(args, null):
    grid = parse_grid(args.gamma)
    if args.setting is not None:
        rows = []
        for g in grid:
            r = simlab.superadaptivity_power(args.setting, args.strata, g, args.replications,
                                             args.seed, args.alpha)
            rows.append({"gamma": g, "alpha": args.alpha, "first": r.first, "second": r.second,
                         "minimax": r.minimax})
        config = {"setting": args.setting, "strata": args.strata, "gamma": grid,
                  "alpha": args.alpha, "replications": args.replications}
        return config, rows, False
    gen = _generator(args, null)
    tests = _tests_arg(args.test)
    est = simlab.estimate_power_table(gen, args.strata, grid, tests, args.alpha,
                                      args.replications, args.seed, args.workers)
    rows = []
    for i, g in enumerate(grid):
        row = {"gamma": g, "alpha": args.alpha}
        for t in tests:
            e = est[t]
            if args.replications == 1:
                row[t] = bool(e.rejections[0, i])
            else:
                row[t] = e.power[i]
                row[t + "_se"] = e.std_error[i]
        rows.append(row)
    fb = sum(e.solver_fallbacks for e in est.values())
    config = {"model": args.model, "effect": gen.effect, "m": gen.m, "cutoff": gen.cutoff,
              "strata": args.strata, "gamma": grid, "alpha": args.alpha,
              "replications": args.replications, "tests": tests}
    return config, rows, fb > 0


def cmd_power(args):
    config, rows, fb = _simulate(args, null=False)
    return RunRecord("power", config, args.seed, rows, diagnostics={"solver_fallback": fb}), fb


def cmd_size(args):
    if args.setting is not None:
        raise UsageError("size runs use the response models, not --setting")
    config, rows, fb = _simulate(args, null=True)
    return RunRecord("size", config, args.seed, rows, diagnostics={"solver_fallback": fb}), fb


# ---------------------------------------------------------------------------
# table / plot output

def _write_table(record, path):
    rows = record.results
    keys = [k for k in rows[0] if not isinstance(rows[0][k], (dict, list))]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for r in rows:
            w.writerow([_plain(r.get(k)) for k in keys])


def _write_plot(record, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = record.results
    gammas = [r["gamma"] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for k in rows[0]:
        if k in ("gamma", "alpha") or k.endswith("_se") or not isinstance(rows[0][k], (float, bool)):
            continue
        ax.plot(gammas, [float(r[k]) for r in rows], marker="o", label=k)
    ax.set_xlabel("Gamma")
    ax.set_ylabel("rejection rate")
    ax.set_ylim(-0.02, 1.02)
    if ax.lines:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="aberrant", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--output", help="write the JSON record here instead of stdout")
        sp.add_argument("--table", help="also write a CSV grid of the results")
        if seed:
            sp.add_argument("--seed", type=int, default=simlab.DEFAULT_SEED)

    t = sub.add_parser("test", help="worst-case p-values for a matched sample in CSV")
    t.add_argument("csv")
    t.add_argument("--test", choices=["mh", "aberrant", "adaptive", "bonferroni"], default="adaptive")
    t.add_argument("--cutoff", type=float, required=True)
    t.add_argument("--direction", choices=["ge", "le"], default="ge")
    t.add_argument("--gamma", default="1:3:0.25")
    t.add_argument("--alpha", type=float, default=0.05)
    common(t)

    def model_flags(sp):
        sp.add_argument("--model", type=int, default=1)
        sp.add_argument("--beta", type=float)
        sp.add_argument("--delta", type=float)
        sp.add_argument("--m", type=int, default=4)
        sp.add_argument("--cutoff", type=float, default=1.0)

    d = sub.add_parser("design-sensitivity", help="design sensitivity for a simulation model")
    model_flags(d)
    d.add_argument("--test", choices=["mh", "aberrant"], default="aberrant")
    d.add_argument("--mc", type=int, default=designsens.DEFAULT_MC)
    d.add_argument("--tol", type=float, default=designsens.DEFAULT_TOL)
    common(d)

    for name, helptext in (("power", "simulated power in the favorable situation"),
                           ("size", "simulated size with no treatment effect")):
        s = sub.add_parser(name, help=helptext)
        model_flags(s)
        s.add_argument("--test", default="mh,aberrant,adaptive",
                       help="comma list of mh, aberrant, adaptive, bonferroni, minimax")
        s.add_argument("--strata", type=int, default=100)
        s.add_argument("--gamma", default="1")
        s.add_argument("--alpha", type=float, default=0.05)
        s.add_argument("--replications", type=int, default=2000)
        s.add_argument("--setting", type=int, choices=[1, 2, 3])
        s.add_argument("--workers", type=int, default=1)
        s.add_argument("--plot", help="write a power-vs-Gamma figure here")
        common(s)
    return p


COMMANDS = {"test": cmd_test, "design-sensitivity": cmd_design_sensitivity,
            "power": cmd_power, "size": cmd_size}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    start = time.perf_counter()
    try:
        record, fallback = COMMANDS[args.command](args)
    except (ValidationError, OSError) as exc:
        if isinstance(exc, UsageError):
            parser.print_usage(sys.stderr)
        print(f"aberrant: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    record.timing = time.perf_counter() - start
    text = record.to_json()
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    if args.table:
        _write_table(record, args.table)
    if getattr(args, "plot", None):
        _write_plot(record, args.plot)
    return EXIT_FALLBACK if fallback else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
