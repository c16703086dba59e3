"""Command-line interface.

Subcommands: ``fit``, ``predict``, ``ale``, ``vi``, ``diagnose``,
``simulate``.  Every flag can also be supplied through an environment
variable (``QPROC_<FLAG>`` with dashes replaced by underscores) or a
``key = value`` config file passed with ``--config``; explicit flags win
over the environment, which wins over the file.

Input CSVs are comma-separated with a mandatory header row, UTF-8, and '.'
as the decimal mark.  Categorical covariates must be pre-encoded
numerically (for example 0/1); the loader rejects non-numeric cells.

Exit codes: 0 on success, 1 on user error, 2 on internal error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from qproc import io as qio
from qproc.ale import ale_interaction, ale_main, ale_second_order, posterior_ale
from qproc.diagnostics import scalar_diagnostics
from qproc.model import fit as fit_model
from qproc.model import grid_search, predict_quantiles
from qproc.nuts import NutsConfig
from qproc.simulate import DesignSpec, generate, replicate_study

__all__ = ["main", "parse_and_dispatch"]

ENV_PREFIX = "QPROC_"


class UserError(Exception):
    """Invalid input or flags; reported with exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UserError(f"{self.prog}: {message}\n{self.format_usage()}")


def _parse_int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in str(text).split(",") if v != ""]
    except ValueError:
        raise UserError(f"expected a comma-separated list of integers, got {text!r}") from None


def _parse_float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in str(text).split(",") if v != ""]
    except ValueError:
        raise UserError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _read_config_file(path: str) -> dict[str, str]:
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UserError(f"cannot read config file {path}: {exc}") from None
    for i, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UserError(f"{path}:{i}: expected 'key = value'")
        key, _, value = line.partition("=")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _resolve(args: argparse.Namespace, spec: dict[str, tuple]) -> dict:
    """Merge flag, environment, config-file, and default values.

    ``spec`` maps destination names to ``(converter, default)``; flags win
    over ``QPROC_<NAME>`` environment variables, which win over the config
    file.
    """
    file_values = _read_config_file(args.config) if getattr(args, "config", None) else {}
    resolved = {}
    for name, (convert, default) in spec.items():
        value = getattr(args, name, None)
        if value is None:
            env = os.environ.get(ENV_PREFIX + name.upper())
            if env is not None:
                value = convert(env)
            elif name in file_values:
                value = convert(file_values[name])
            else:
                value = default
        resolved[name] = value
    return resolved


def _flag_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    return str(text).strip().lower() in ("1", "true", "yes", "on")


def _load_table(path: str, response: str | None):
    header, data = qio.read_csv(path)
    if response is not None:
        if response not in header:
            raise UserError(f"{path}: response column {response!r} not found in header {header}")
        ridx = header.index(response)
        y = data[:, ridx]
        X = np.delete(data, ridx, axis=1)
        cols = [h for h in header if h != response]
        return X, y, cols
    return data, None, header


def _select_columns(header: list[str], data: np.ndarray, wanted: list[str], path: str) -> np.ndarray:
    missing = [c for c in wanted if c not in header]
    if missing:
        raise UserError(f"{path}: missing covariate columns {missing}")
    return data[:, [header.index(c) for c in wanted]]


# ----------------------------------------------------------------------
# Subcommands
# ----------------------------------------------------------------------


def _cmd_fit(args) -> int:
    spec = {
        "data": (str, None),
        "response": (str, None),
        "p": (_parse_int_list, [5]),
        "V": (_parse_int_list, [5]),
        "degree": (int, 2),
        "a": (float, 30.0),
        "iters": (int, 4000),
        "warmup": (int, 1000),
        "thin": (int, 5),
        "chains": (int, 2),
        "target_accept": (float, 0.8),
        "max_depth": (int, 10),
        "seed": (int, 0),
        "threads": (int, 1),
        "out": (str, None),
    }
    opt = _resolve(args, spec)
    for required in ("data", "response", "out"):
        if opt[required] is None:
            raise UserError(f"fit: missing required flag --{required}")
    X, y, cols = _load_table(opt["data"], opt["response"])
    nuts = NutsConfig(
        n_iter=opt["iters"],
        n_warmup=opt["warmup"],
        thin=opt["thin"],
        target_accept=opt["target_accept"],
        max_tree_depth=opt["max_depth"],
        seed=opt["seed"],
    )
    config = {
        "subcommand": "fit",
        "columns": cols,
        "response": opt["response"],
        "options": {k: v for k, v in opt.items()},
    }
    p_list, v_list = opt["p"], opt["V"]
    if len(p_list) == 1 and len(v_list) == 1:
        result = fit_model(
            X,
            y,
            interior=p_list[0],
            hidden=v_list[0],
            degree=opt["degree"],
            a=opt["a"],
            nuts=nuts,
            n_chains=opt["chains"],
            n_jobs=opt["threads"],
        )
        qio.save_fit(result, opt["out"], config)
    else:
        result, table = grid_search(
            X,
            y,
            p_list,
            v_list,
            degree=opt["degree"],
            a=opt["a"],
            nuts=nuts,
            n_chains=opt["chains"],
            n_jobs=opt["threads"],
        )
        config["selected"] = {"p": result.cfg.kv.interior, "V": result.cfg.shape.V}
        qio.save_fit(result, opt["out"], config)
        qio.write_csv(
            Path(opt["out"]) / "waic_table.csv",
            ["p", "V", "waic", "p_waic", "lppd"],
            [
                [r["p"], r["V"], r["waic"], r["p_waic"], r["lppd"]]
                for r in table
                if r["error"] is None
            ],
        )
        for r in table:
            if r["error"] is not None:
                print(f"grid cell p={r['p']} V={r['V']} failed: {r['error']}", file=sys.stderr)
    divergences = sum(c.divergence_count for c in result.chains)
    print(
        f"fit written to {opt['out']}: p={result.cfg.kv.interior} V={result.cfg.shape.V} "
        f"chains={len(result.chains)} kept={result.n_draws} divergences={divergences}"
    )
    return 0


def _cmd_predict(args) -> int:
    spec = {
        "fit": (str, None),
        "query": (str, None),
        "taus": (_parse_float_list, [0.05, 0.5, 0.95]),
        "grid_size": (int, 512),
        "out": (str, None),
    }
    opt = _resolve(args, spec)
    for required in ("fit", "query", "out"):
        if opt[required] is None:
            raise UserError(f"predict: missing required flag --{required}")
    result = qio.load_fit(opt["fit"])
    config = qio.load_config(opt["fit"])
    header, data = qio.read_csv(opt["query"])
    X = _select_columns(header, data, config["columns"], opt["query"])
    z_grid = np.linspace(0.0, 1.0, opt["grid_size"])
    preds = predict_quantiles(result, X, opt["taus"], z_grid=z_grid)
    qio.write_csv(opt["out"], [f"tau_{t:g}" for t in opt["taus"]], preds)
    print(f"wrote {preds.shape[0]} predictions x {preds.shape[1]} levels to {opt['out']}")
    return 0


def _covariate_index(name: str, columns: list[str]) -> int:
    if name in columns:
        return columns.index(name)
    try:
        idx = int(name)
        if 0 <= idx < len(columns):
            return idx
    except ValueError:
        pass
    raise UserError(f"unknown covariate {name!r}; available: {columns}")


def _cmd_ale(args) -> int:
    spec = {
        "fit": (str, None),
        "covariate": (str, None),
        "pair": (str, None),
        "taus": (_parse_float_list, [0.05, 0.5, 0.95]),
        "K": (int, None),
        "draws": (int, 200),
        "out": (str, None),
    }
    opt = _resolve(args, spec)
    if opt["fit"] is None or opt["out"] is None:
        raise UserError("ale: missing required flag --fit or --out")
    if (opt["covariate"] is None) == (opt["pair"] is None):
        raise UserError("ale: pass exactly one of --covariate or --pair")
    result = qio.load_fit(opt["fit"])
    config = qio.load_config(opt["fit"])
    columns = config["columns"]

    if opt["covariate"] is not None:
        j = _covariate_index(opt["covariate"], columns)
        summaries = posterior_ale(result, j, K=opt["K"], taus=opt["taus"], draw_subset=opt["draws"])
        rows = []
        for s in summaries:
            for e, eff, lo, hi in zip(s.bins[0].edges, s.mean, s.lower, s.upper):
                rows.append([s.tau, j, e, eff, lo, hi])
        header = ["tau", "covariate", "edge", "effect", "lower", "upper"]
    else:
        names = [v.strip() for v in opt["pair"].split(",")]
        if len(names) != 2:
            raise UserError("ale: --pair expects two comma-separated covariates")
        j, l = (_covariate_index(n, columns) for n in names)
        summaries = posterior_ale(
            result, (j, l), K=opt["K"], taus=opt["taus"], draw_subset=opt["draws"]
        )
        rows = []
        for s in summaries:
            ej, el = s.bins[0].edges, s.bins[1].edges
            for a in range(len(ej)):
                for b in range(len(el)):
                    rows.append(
                        [s.tau, j, l, ej[a], el[b], s.mean[a, b], s.lower[a, b], s.upper[a, b]]
                    )
        header = ["tau", "covariate_1", "covariate_2", "edge_1", "edge_2", "effect", "lower", "upper"]
    qio.write_csv(opt["out"], header, rows)
    print(f"wrote {len(rows)} effect rows to {opt['out']}")
    return 0


def _cmd_vi(args) -> int:
    spec = {
        "fit": (str, None),
        "taus": (_parse_float_list, [0.05, 0.5, 0.95]),
        "K": (int, None),
        "draws": (int, 100),
        "pairs": (_flag_bool, False),
        "out": (str, None),
    }
    opt = _resolve(args, spec)
    if opt["fit"] is None or opt["out"] is None:
        raise UserError("vi: missing required flag --fit or --out")
    result = qio.load_fit(opt["fit"])
    config = qio.load_config(opt["fit"])
    columns = config["columns"]

    targets: list[tuple] = [(j,) for j in range(len(columns))]
    if opt["pairs"]:
        targets += [(j, l) for j in range(len(columns)) for l in range(j + 1, len(columns))]

    records = {float(t): [] for t in opt["taus"]}
    for target in targets:
        cov = target[0] if len(target) == 1 else target
        name = columns[target[0]] if len(target) == 1 else f"{columns[target[0]]}:{columns[target[1]]}"
        for s in posterior_ale(result, cov, K=opt["K"], taus=opt["taus"], draw_subset=opt["draws"]):
            records[s.tau].append((name, s.vi_mean, s.vi_lower, s.vi_upper))

    rows = []
    for tau in sorted(records):
        for name, vim, vil, viu in sorted(records[tau], key=lambda r: -r[1]):
            rows.append((tau, name, vim, vil, viu))
    with open(opt["out"], "w", newline="") as fh:
        fh.write("tau,effect,vi_mean,vi_lower,vi_upper\n")
        for tau, name, vim, vil, viu in rows:
            fh.write(
                f"{qio.format_float(tau)},{name},{qio.format_float(vim)},"
                f"{qio.format_float(vil)},{qio.format_float(viu)}\n"
            )
    print(f"wrote {len(rows)} importance rows to {opt['out']}")
    return 0


def _cmd_diagnose(args) -> int:
    spec = {"fit": (str, None)}
    opt = _resolve(args, spec)
    if opt["fit"] is None:
        raise UserError("diagnose: missing required flag --fit")
    _, trace = qio.read_csv(Path(opt["fit"]) / "loglik_trace.csv")
    if trace.shape[1] < 2:
        raise UserError("diagnose: need at least two chains")
    report = scalar_diagnostics(trace.T)
    print(f"{'scalar':<16} {'rhat':>8} {'ess_bulk':>10} {'ess_tail':>10} pass")
    print(report.row("loglik"))
    if report.degenerate:
        print("warning: degenerate (constant) chains", file=sys.stderr)
    return 0 if report.passed else 1


def _cmd_simulate(args) -> int:
    spec = {
        "design": (int, None),
        "n": (int, None),
        "reps": (int, 1),
        "d": (int, None),
        "seed": (int, 0),
        "out": (str, None),
        "study": (_flag_bool, False),
        "p": (_parse_int_list, [5, 8, 10]),
        "V": (_parse_int_list, [5, 8, 10]),
        "iters": (int, 4000),
        "warmup": (int, 1000),
        "thin": (int, 5),
        "chains": (int, 2),
        "threads": (int, 1),
    }
    opt = _resolve(args, spec)
    for required in ("design", "n", "out"):
        if opt[required] is None:
            raise UserError(f"simulate: missing required flag --{required}")
    outdir = Path(opt["out"])
    outdir.mkdir(parents=True, exist_ok=True)

    for rep in range(opt["reps"]):
        dspec = DesignSpec(design_id=opt["design"], n=opt["n"], d=opt["d"], seed=opt["seed"] + rep)
        sim = generate(dspec)
        header = [f"x{j + 1}" for j in range(sim.X.shape[1])] + ["y"]
        qio.write_csv(
            outdir / f"design{opt['design']}_rep{rep:03d}.csv",
            header,
            np.column_stack([sim.X, sim.y]),
        )
    print(f"wrote {opt['reps']} data sets to {outdir}")

    if opt["study"]:
        nuts = NutsConfig(
            n_iter=opt["iters"], n_warmup=opt["warmup"], thin=opt["thin"], seed=opt["seed"]
        )
        summary = replicate_study(
            opt["design"],
            opt["n"],
            opt["reps"],
            opt["p"],
            opt["V"],
            d=opt["d"],
            nuts=nuts,
            n_chains=opt["chains"],
            n_jobs=opt["threads"],
            base_seed=opt["seed"],
        )
        with open(outdir / "study_replicates.csv", "w", newline="") as fh:
            fh.write("replicate,seed,p,V,waic,rmise_qp,error\n")
            for r in summary["rows"]:
                waic = "" if r["waic"] is None else qio.format_float(r["waic"])
                qp = "" if r["rmise_qp"] is None else qio.format_float(r["rmise_qp"])
                err = "" if r["error"] is None else str(r["error"]).replace(",", ";")
                fh.write(f"{r['replicate']},{r['seed']},{r['p']},{r['V']},{waic},{qp},{err}\n")
        with open(outdir / "study_summary.csv", "w", newline="") as fh:
            fh.write("design,n,reps,n_ok,mean_rmise_qp,sd,se\n")
            sd = "" if summary["sd"] is None else qio.format_float(summary["sd"])
            se = "" if summary["se"] is None else qio.format_float(summary["se"])
            mean = "" if summary["mean"] is None else qio.format_float(summary["mean"])
            fh.write(f"{opt['design']},{opt['n']},{opt['reps']},{summary['n_ok']},{mean},{sd},{se}\n")
        print(
            f"study: {summary['n_ok']}/{opt['reps']} replicates ok, "
            f"mean rmise_qp = {summary['mean']}"
        )
    return 0


# ----------------------------------------------------------------------
# Parsing and dispatch
# ----------------------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(prog="qproc", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="subcommand")

    def add(name, flags, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="key = value file; flags win")
        for flag in flags:
            p.add_argument(f"--{flag}", default=None)
        p.set_defaults(func=func)
        return p

    add(
        "fit",
        ["data", "response", "p", "V", "degree", "a", "iters", "warmup", "thin", "chains",
         "target-accept", "max-depth", "seed", "threads", "out"],
        _cmd_fit,
        "fit the model to a CSV (grid search over comma-separated --p/--V)",
    )
    add("predict", ["fit", "query", "taus", "grid-size", "out"], _cmd_predict,
        "predict quantiles for query rows")
    add("ale", ["fit", "covariate", "pair", "taus", "K", "draws", "out"], _cmd_ale,
        "accumulated-local-effect curves or interaction surfaces")
    add("vi", ["fit", "taus", "K", "draws", "pairs", "out"], _cmd_vi,
        "variable-importance ranking")
    add("diagnose", ["fit"], _cmd_diagnose, "convergence diagnostics of a stored fit")
    add("simulate", ["design", "n", "reps", "d", "seed", "out", "study", "p", "V",
                     "iters", "warmup", "thin", "chains", "threads"], _cmd_simulate,
        "generate benchmark data sets (and optionally run a replicate study)")
    return parser


def parse_and_dispatch(argv=None) -> int:
    """Route arguments to a subcommand; 0 on success, 1 user error, 2 internal."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "subcommand", None) is None:
            parser.print_usage(sys.stderr)
            return 1
        return args.func(args)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - internal failures
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main(argv=None) -> int:
    return parse_and_dispatch(argv)


if __name__ == "__main__":
    sys.exit(main())
