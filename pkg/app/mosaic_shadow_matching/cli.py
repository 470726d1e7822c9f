"""
Command-line entry point.

Exit codes: 0 on success, 1 when validation fails or a run hits a domain
error, 2 on I/O or schema errors.
"""

import json
import logging
import sys
from pathlib import Path

import click

from config import get_settings
from errors import InvalidGeometry, SchemaError, ShadowMatchingError
from export import export_mosaic, export_pmf, export_rows, export_samples
from harness import generate_canyon, load_scenario, run_mosaic, run_sweep, save_scenario, validate_scenario
from mosaic import sample_mosaic
from utils import FileError, write_json

logger = logging.getLogger(__name__)

EXIT_FAILED = 1
EXIT_IO = 2


def _float_list(ctx, param, value):
    if value is None:
        return None
    try:
        return [float(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got {value!r}")


def _int_list(ctx, param, value):
    if value is None:
        return None
    try:
        return [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got {value!r}")


def _load(path: str):
    try:
        return load_scenario(path)
    except (SchemaError, InvalidGeometry, FileError) as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_IO)


def _fail(e: Exception) -> None:
    code = EXIT_IO if isinstance(e, FileError) else EXIT_FAILED
    click.echo(f"error: {e}", err=True)
    sys.exit(code)


@click.group()
@click.option("--log-level", default="WARNING", show_default=True,
              type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False))
def cli(log_level):
    """Mosaic shadow matching: build, sweep and validate probabilistic mosaics."""
    logging.basicConfig(level=log_level.upper(), format="%(asctime)s %(levelname)s %(name)s: %(message)s")


@cli.command()
@click.argument("scenario", type=click.Path(dir_okay=False))
@click.option("--seed", default=0, show_default=True, help="Seed for --samples.")
@click.option("--samples", default=0, show_default=True, help="Points to draw from the mosaic PDF.")
@click.option("--repetitions", type=int, default=None, help="Timing repetitions per layer.")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Directory for exports.")
def mosaic(scenario, seed, samples, repetitions, out):
    """Build the mosaic of SCENARIO and report leaf counts, timing and p∅."""
    s = _load(scenario)
    try:
        tree, report = run_mosaic(s, repetitions=repetitions)
        if out is not None:
            out = Path(out)
            paths = [export_mosaic(tree, out / "mosaic.geojson"), export_pmf(tree, out / "pmf.csv")]
            if samples > 0:
                paths.append(export_samples(sample_mosaic(tree, samples, seed), out / "samples.csv"))
            report = report.model_copy(update={"export_paths": [str(p) for p in paths]})
            write_json(out / "report.json", report.model_dump(mode="json"))
    except (ShadowMatchingError, FileError) as e:
        _fail(e)
    click.echo(f"leaves per layer: {' '.join(str(c) for c in report.leaf_counts)}")
    click.echo(f"p_empty: {report.p_empty_trace[-1]:.6g}")
    click.echo(f"total time: {report.total_time_ms:.1f} ms (R² of quadratic fit {report.r_squared:.3f})")
    click.echo(f"leaves over {get_settings().large_leaf_area:g} m²: {report.large_leaf_count}")


@cli.command()
@click.argument("scenario", type=click.Path(dir_okay=False))
@click.option("--posteriors", callback=_float_list, default="0.5,0.75,0.85,0.9999", show_default=True)
@click.option("--gammas", callback=_float_list, default="0.68,0.95", show_default=True)
@click.option("--grid", callback=_float_list, default="30,10,3", show_default=True, help="Grid resolutions (m).")
@click.option("--gmm-k", callback=_int_list, default="1,2", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--gmm-samples", type=int, default=None)
@click.option("--workers", default=1, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Directory for sweep.csv and PMFs.")
def sweep(scenario, posteriors, gammas, grid, gmm_k, seed, gmm_samples, workers, out):
    """Sweep classifier posteriors and compare against the baselines."""
    s = _load(scenario)
    try:
        rows = run_sweep(
            s, posteriors, gammas=gammas, grid_resolutions=grid, gmm_ks=gmm_k, seed=seed,
            gmm_samples=gmm_samples, workers=workers, pmf_dir=out,
        )
        if out is not None:
            export_rows(rows, Path(out) / "sweep.csv")
    except (ShadowMatchingError, FileError) as e:
        _fail(e)
    failed = [r for r in rows if r.status != "ok"]
    click.echo(f"{len(rows)} rows, {len(failed)} flagged")
    for row in rows:
        click.echo(json.dumps(row.model_dump(exclude_none=True)))
    if failed:
        sys.exit(EXIT_FAILED)


@cli.command()
@click.argument("scenario", type=click.Path(dir_okay=False))
@click.option("--orderings", default=20, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Write the report as JSON.")
def validate(scenario, orderings, seed, out):
    """Check the tree properties of SCENARIO, including the full-tree oracle."""
    s = _load(scenario)
    try:
        report = validate_scenario(s, orderings=orderings, seed=seed)
        if out is not None:
            write_json(out, report.model_dump(mode="json"))
    except (ShadowMatchingError, FileError) as e:
        _fail(e)
    for check in report.checks:
        click.echo(f"{'PASS' if check.passed else 'FAIL'} {check.name}: {check.detail}")
    if not report.passed:
        sys.exit(EXIT_FAILED)


@cli.command()
@click.option("--template", type=click.Choice(["canyon"]), default="canyon", show_default=True)
@click.option("--satellites", default=14, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="Scenario file; printed when omitted.")
def generate(template, satellites, seed, out):
    """Generate a scenario from a template."""
    s = generate_canyon(n_satellites=satellites, seed=seed)
    if out is None:
        click.echo(json.dumps(s.model_dump(mode="json"), indent=2))
        return
    try:
        save_scenario(s, out)
    except FileError as e:
        _fail(e)
    click.echo(f"wrote {out}")


@cli.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
def serve(host, port):
    """Run the HTTP API with uvicorn."""
    import uvicorn

    from main import app

    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    cli()
