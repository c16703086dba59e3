"""Run-directory persistence.

A fit is stored as a versioned directory: one CSV per chain (kept draws,
columns named after the flattened parameters) with a JSON metadata record
each, the normalization maps, the per-observation log-likelihood matrix,
per-chain log-likelihood traces, the WAIC summary, the normalized training
data, and the fully resolved run configuration.  All floats are written
with 17 significant digits so that loading reproduces the exact doubles.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from qproc.model import FitResult, Normalization, waic
from qproc.network import NetworkShape, WeightState
from qproc.nuts import Chain
from qproc.posterior import Dataset, PosteriorConfig
from qproc.splines import build_knots

__all__ = ["format_float", "load_fit", "read_csv", "save_fit", "write_csv"]

SCHEMA_VERSION = "1"


def format_float(x: float) -> str:
    return f"{float(x):.17g}"


def write_csv(path, header, rows) -> None:
    """Write a numeric CSV with full-precision floats."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_float(v) for v in row])


def read_csv(path) -> tuple[list[str], np.ndarray]:
    """Read a numeric CSV with a header row.

    Raises
    ------
    ValueError
        Naming the 1-based data row of the first non-numeric or missing cell.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        rows = []
        for i, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}: row {i} has {len(row)} cells, expected {len(header)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ValueError(f"{path}: non-numeric cell in row {i}") from None
    data = np.asarray(rows, dtype=float) if rows else np.zeros((0, len(header)))
    bad = np.argwhere(~np.isfinite(data))
    if bad.size:
        raise ValueError(f"{path}: non-finite cell in row {bad[0][0] + 1}")
    return header, data


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _dump_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


def save_fit(fit: FitResult, outdir, config: dict | None = None) -> None:
    """Persist a fit (and its resolved configuration) to a run directory."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "schema_version").write_text(SCHEMA_VERSION + "\n")

    cfg = dict(config or {})
    cfg["model"] = {
        "degree": fit.cfg.kv.degree,
        "interior": fit.cfg.kv.interior,
        "hidden": fit.cfg.shape.V,
        "d": fit.cfg.shape.d,
        "a": fit.cfg.a,
    }
    _dump_json(out / "config.json", cfg)

    norm = fit.normalization
    _dump_json(
        out / "normalization.json",
        {
            "y_min": norm.y_min,
            "y_max": norm.y_max,
            "x_min": list(norm.x_min),
            "x_max": list(norm.x_max),
        },
    )

    names = WeightState.param_names(fit.cfg.shape)
    for i, chain in enumerate(fit.chains):
        write_csv(out / f"chain_{i:02d}.csv", names, chain.draws)
        _dump_json(
            out / f"chain_{i:02d}_meta.json",
            {
                "seed": chain.seed,
                "step_size": chain.step_size,
                "divergence_count": chain.divergence_count,
                "accept_stats": chain.accept_stats,
                "n_kept": chain.n_kept,
                "log_posterior_trace": list(chain.log_posterior_trace),
            },
        )

    n_draws = fit.loglik_matrix.shape[1]
    write_csv(
        out / "loglik_matrix.csv",
        [f"draw_{t:05d}" for t in range(n_draws)],
        fit.loglik_matrix,
    )
    # Per-chain log-likelihood traces are column sums of the matrix, grouped
    # by chain in storage order.
    offsets = np.cumsum([0] + [c.n_kept for c in fit.chains])
    trace = np.column_stack(
        [fit.loglik_matrix[:, offsets[i] : offsets[i + 1]].sum(axis=0) for i in range(len(fit.chains))]
    )
    write_csv(out / "loglik_trace.csv", [f"chain_{i:02d}" for i in range(len(fit.chains))], trace)

    w, p_w, lppd = waic(fit.loglik_matrix)
    _dump_json(out / "waic.json", {"waic": w, "p_waic": p_w, "lppd": lppd})

    if fit.data is not None:
        header = [f"x{j}" for j in range(fit.data.X.shape[1])] + ["z"]
        write_csv(out / "data.csv", header, np.column_stack([fit.data.X, fit.data.z]))


def load_fit(rundir) -> FitResult:
    """Reload a persisted fit.

    Raises
    ------
    ValueError
        If the directory is missing or has an incompatible schema version.
    """
    run = Path(rundir)
    version_file = run / "schema_version"
    if not version_file.exists():
        raise ValueError(f"{run}: not a run directory (missing schema_version)")
    version = version_file.read_text().strip()
    if version != SCHEMA_VERSION:
        raise ValueError(f"{run}: schema version {version} is not supported (expected {SCHEMA_VERSION})")

    config = _load_json(run / "config.json")
    model = config["model"]
    kv = build_knots(model["degree"], model["interior"])
    shape = NetworkShape(d=model["d"], V=model["hidden"], M=kv.basis_count)
    cfg = PosteriorConfig(kv=kv, shape=shape, a=model["a"])

    nj = _load_json(run / "normalization.json")
    norm = Normalization(
        y_min=nj["y_min"],
        y_max=nj["y_max"],
        x_min=np.asarray(nj["x_min"], dtype=float),
        x_max=np.asarray(nj["x_max"], dtype=float),
    )

    chains = []
    for path in sorted(run.glob("chain_[0-9][0-9].csv")):
        meta = _load_json(path.with_name(path.stem + "_meta.json"))
        _, draws = read_csv(path)
        chains.append(
            Chain(
                draws=draws,
                log_posterior_trace=np.asarray(meta["log_posterior_trace"], dtype=float),
                accept_stats=meta["accept_stats"],
                step_size=meta["step_size"],
                divergence_count=meta["divergence_count"],
                seed=meta["seed"],
                shape=shape,
            )
        )
    if not chains:
        raise ValueError(f"{run}: no chain files found")

    _, loglik_matrix = read_csv(run / "loglik_matrix.csv")

    data = None
    data_path = run / "data.csv"
    if data_path.exists():
        _, table = read_csv(data_path)
        data = Dataset(X=table[:, :-1], z=table[:, -1], y_min=norm.y_min, y_max=norm.y_max)

    return FitResult(
        chains=chains, cfg=cfg, normalization=norm, loglik_matrix=loglik_matrix, data=data
    )


def load_config(rundir) -> dict:
    """The resolved configuration stored with a fit."""
    return _load_json(Path(rundir) / "config.json")
