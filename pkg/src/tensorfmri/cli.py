"""Command-line interface: simulate, fit, postprocess, report, benchmark.

Exit codes: 0 success, 2 invalid configuration or input, 3 sampler failure
during a fit, 4 chains and dataset disagree (hash mismatch), 5 nothing to
report.
"""
from __future__ import annotations

import csv
import json
import math
import re
import sys
from pathlib import Path

import click
import numpy as np

from . import config as cfgmod
from . import io
from .engine import BASELINE, ChainError, ChainRunner
from .simulate import generate_dataset, simulation_rng

EXIT_CONFIG = 2
EXIT_RUN = 3
EXIT_HASH = 4
EXIT_EMPTY = 5
METRIC_COLUMNS = ["rank", "log_dic", "rmse_b", "auc", "ci_length", "ci_coverage", "wall_hours"]


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def parse_ranks(text: str) -> list[int]:
    """'1..5' or '1,2,4' (or a mix such as '1..3,5')."""
    ranks = []
    for part in text.split(","):
        part = part.strip()
        m = re.fullmatch(r"(\d+)\.\.(\d+)", part)
        if m:
            lo, hi = int(m.group(1)), int(m.group(2))
            if lo > hi:
                raise ValueError(f"empty rank range {part}")
            ranks.extend(range(lo, hi + 1))
        elif part.isdigit():
            ranks.append(int(part))
        else:
            raise ValueError(f"cannot parse rank list entry {part!r}")
    if not ranks or min(ranks) < 1:
        raise ValueError("ranks must be positive integers")
    return sorted(set(ranks))


def _load_config(path, overrides: dict) -> dict:
    try:
        raw = {}
        if path is not None:
            import yaml

            raw = yaml.safe_load(Path(path).read_text()) or {}
            if not isinstance(raw, dict):
                raise cfgmod.ConfigError("<root>", "config must be a mapping")
        raw.update({k: v for k, v in overrides.items() if v is not None})
        return cfgmod.validate(raw)
    except cfgmod.ConfigError as exc:
        _fail(EXIT_CONFIG, f"invalid config field {exc}")
    except (OSError, ValueError) as exc:
        _fail(EXIT_CONFIG, f"cannot read config: {exc}")


@click.group()
@click.version_option(package_name="tensorfmri")
def main():
    """Joint Bayesian activation and connectivity inference for tensor fMRI."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="YAML config.")
@click.option("--seed", type=int, help="Override the config seed.")
@click.option("--output", required=True, type=click.Path(file_okay=False), help="Dataset directory.")
def simulate(config_path, seed, output):
    """Draw a synthetic dataset and write it with its manifest."""
    cfg = _load_config(config_path, {"seed": seed})
    dataset = generate_dataset(cfgmod.sim_spec(cfg), simulation_rng(cfg["seed"]))
    path = io.write_dataset(dataset, output, config=cfg)
    click.echo(f"wrote {path} (n={dataset.n_subjects}, T={dataset.n_time}, G={dataset.n_regions})")


@main.command()
@click.argument("dataset", type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int)
@click.option("--ranks", type=str, help="e.g. 1..5 or 1,3")
@click.option("--iterations", type=int)
@click.option("--burnin", type=int)
@click.option("--thin-dic", type=int)
@click.option("--workers", type=int)
@click.option("--baseline/--no-baseline", default=None, help="Also fit the vectorized competitor.")
@click.option("--resume", is_flag=True, help="Continue from checkpoints in the output directory.")
@click.option("--output", required=True, type=click.Path(file_okay=False))
def fit(dataset, config_path, seed, ranks, iterations, burnin, thin_dic, workers, baseline, resume, output):
    """Run one chain per rank (and the baseline) and write chain files."""
    try:
        rank_list = parse_ranks(ranks) if ranks else None
    except ValueError as exc:
        _fail(EXIT_CONFIG, f"invalid config field ranks: {exc}")
    overrides = {
        "seed": seed,
        "ranks": rank_list,
        "iterations": iterations,
        "burnin": burnin,
        "thin_dic": thin_dic,
        "workers": workers,
        "baseline": baseline,
    }
    cfg = _load_config(config_path, overrides)
    try:
        data = io.read_dataset(dataset)
    except (io.FormatError, OSError, KeyError) as exc:
        _fail(EXIT_CONFIG, f"invalid dataset: {exc}")
    digest = io.dataset_hash(data)
    run = cfgmod.run_config(cfg)
    out = Path(output)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    models = list(run.ranks) + ([None] if run.baseline else [])
    for rank in models:
        try:
            runner = ChainRunner(run, data, rank)
        except ValueError as exc:
            _fail(EXIT_CONFIG, f"invalid config: {exc}")
        ckpt = out / f"{runner.label}.ckpt"
        try:
            store = runner.run(ckpt, resume=resume)
        except ChainError as exc:
            _fail(EXIT_RUN, f"{runner.label}: sampler failed at iteration {exc.iteration}: {exc.cause!r}")
        path = io.write_chain(store, out / f"chain_{runner.label}.tfc", digest)
        if ckpt.exists():
            ckpt.unlink()
        written.append(path.name)
        click.echo(f"{runner.label}: {store.n_records} sweeps -> {path.name}")
    summary = {"dataset_hash": digest, "config": cfg, "chains": written}
    (out / "fit.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def _fmt(value) -> str:
    if value is None or (isinstance(value, float) and not math.isfinite(value)):
        return "NA"
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def _slice2d(tensor: np.ndarray) -> np.ndarray:
    """Middle slice over modes 3..D; 1-D tensors become a single row."""
    t = np.asarray(tensor)
    if t.ndim == 1:
        return t[None, :]
    while t.ndim > 2:
        t = t[..., t.shape[-1] // 2]
    return t


def _write_svgs(summary, out: Path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "tensorfmri"
    n = len(summary.median)
    fig, axes = plt.subplots(1, n, figsize=(3 * n, 3), squeeze=False)
    for g, ax in enumerate(axes[0]):
        est = np.where(summary.mask[g], summary.median[g], 0.0)
        im = ax.imshow(_slice2d(est), cmap="viridis", interpolation="nearest")
        ax.set_title(f"region {g}")
        fig.colorbar(im, ax=ax, shrink=0.8)
    fig.suptitle(f"{summary.label}: selected posterior median (middle slice)")
    fig.savefig(out / f"activation_{summary.label}.svg", metadata={"Date": None})
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(4, 4))
    im = ax.imshow(summary.connectivity.partial_correlation, cmap="RdBu_r", vmin=-1, vmax=1)
    ax.set_title(f"{summary.label}: selected partial correlations")
    fig.colorbar(im, ax=ax)
    fig.savefig(out / f"connectivity_{summary.label}.svg", metadata={"Date": None})
    plt.close(fig)


@main.command()
@click.argument("chain_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--dataset", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--output", required=True, type=click.Path(file_okay=False))
def postprocess(chain_dir, dataset, config_path, output):
    """Score every chain: metrics CSV, selection JSON and SVG heatmaps."""
    from .postprocess import summarize

    cfg = _load_config(config_path, {})
    try:
        data = io.read_dataset(dataset)
    except (io.FormatError, OSError, KeyError) as exc:
        _fail(EXIT_CONFIG, f"invalid dataset: {exc}")
    digest = io.dataset_hash(data)
    paths = sorted(Path(chain_dir).glob("chain_*.tfc"))
    if not paths:
        _fail(EXIT_EMPTY, f"no chain files in {chain_dir}")
    out = Path(output)
    out.mkdir(parents=True, exist_ok=True)
    rows, selection = [], {}
    for path in paths:
        store, header = io.read_chain(path)
        if header.get("dataset_hash") != digest:
            _fail(EXIT_HASH, f"{path.name} was fitted to a different dataset")
        summary = summarize(store, data, data.truth, b_tune=cfg["b_tune"])
        rows.append(summary.metrics)
        selection[summary.label] = {
            "n_signals": summary.n_signals,
            "activation_mask": [m.astype(int).tolist() for m in summary.mask],
            "connected_pairs": [list(p) for p in summary.connectivity.pairs],
            "partial_correlation": summary.connectivity.partial_correlation.tolist(),
            "dic": summary.dic,
            "p_dic": summary.p_dic,
            "ess_median": summary.ess_median,
        }
        _write_svgs(summary, out)
    order = {BASELINE: 10**9}
    rows.sort(key=lambda r: order.get(r["rank"], int(r["rank"].removeprefix("rank")) if r["rank"].startswith("rank") else 0))
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in METRIC_COLUMNS])
    (out / "selection.json").write_text(json.dumps(selection, indent=2, sort_keys=True) + "\n")
    click.echo(f"scored {len(rows)} chains -> {out / 'metrics.csv'}")


@main.command()
@click.argument("results_dir", type=click.Path(file_okay=False))
def report(results_dir):
    """Print the metrics table sorted by DIC, best model flagged."""
    path = Path(results_dir) / "metrics.csv"
    if not path.exists():
        _fail(EXIT_EMPTY, f"no metrics.csv in {results_dir}")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        _fail(EXIT_EMPTY, f"{path} has no rows")

    def key(row):
        v = row["log_dic"]
        return float(v) if v != "NA" else math.inf

    rows.sort(key=key)
    widths = {c: max(len(c), *(len(r[c]) for r in rows)) for c in METRIC_COLUMNS}
    click.echo("  " + "  ".join(c.ljust(widths[c]) for c in METRIC_COLUMNS))
    for i, row in enumerate(rows):
        flag = "* " if i == 0 else "  "
        click.echo(flag + "  ".join(row[c].ljust(widths[c]) for c in METRIC_COLUMNS))
    click.echo(f"best by DIC: {rows[0]['rank']}")


@main.command()
@click.option("--draws", default=200_000, show_default=True, help="Variates per kernel timing.")
@click.option("--repeat", default=3, show_default=True)
@click.option("--sweeps", default=20, show_default=True, help="Sampler sweeps per backend.")
def benchmark(draws, repeat, sweeps):
    """Time the compiled kernels against the pure-Python fallback."""
    from .benchmark import format_table, run_benchmarks

    click.echo(format_table(run_benchmarks(draws=draws, repeat=repeat, sweeps=sweeps)))


if __name__ == "__main__":  # pragma: no cover
    main()
