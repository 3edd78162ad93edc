import json
import sys

import click

from config import DEFAULT_THREADS, HOST, PORT, DEBUG, logger
from errors import ConfigError, CouplingLabError
from repos.result_storage_repo import ResultStorage
from service.experiment_service import CHECKS, load_config, run_experiment
from service.reflection_service import bisector_residuals, torus_bisector

EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_ERROR = 3


def _run(pipeline: str, config_path, overrides: dict):
    try:
        config = load_config(config_path, {**overrides, "pipeline": pipeline})
    except ConfigError as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(EXIT_CONFIG)
    try:
        manifest = run_experiment(config, ResultStorage(config.output))
    except CouplingLabError as e:
        logger.error(f"{pipeline} run failed: {e}")
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_ERROR)
    click.echo(json.dumps({"run_id": manifest.run_id, "passed": manifest.passed, "outputs": manifest.outputs},
                          indent=2))
    if not manifest.passed:
        sys.exit(EXIT_FAILED)


def _float_list(ctx, param, value):
    """Comma separated floats, e.g. --t-grid 0.25,1,4"""
    if value is None:
        return None
    try:
        return [float(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma separated numbers, got '{value}'")


def _json_object(ctx, param, value):
    if value is None:
        return None
    try:
        parsed = json.loads(value)
    except json.JSONDecodeError as e:
        raise click.BadParameter(f"not JSON ({e})")
    if not isinstance(parsed, dict):
        raise click.BadParameter("expected a JSON object")
    return parsed


@click.group()
def cli():
    """Mirror coupling experiments: simulation, exact computation and verification"""


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSON run config; inline flags override its fields")
@click.option("--space", default=None, help="euclidean, circle, flat_torus, sphere2, hyperbolic2, ...")
@click.option("--dim", type=int, default=None)
@click.option("--x1", callback=_float_list, default=None, help="Start of the first walker, comma separated")
@click.option("--x2", callback=_float_list, default=None, help="Start of the second walker, comma separated")
@click.option("--chain", callback=_json_object, default=None, help='Chain request, e.g. \'{"kind": "cycle", "m": 8}\'')
@click.option("--coupling", type=click.Choice(["mirror", "kc", "eight", "tree", "independent"]), default=None)
@click.option("--trials", type=int, default=None)
@click.option("--t-grid", "t_grid", callback=_float_list, default=None, help="Comma separated times")
@click.option("--dt", type=float, default=None)
@click.option("--eps", type=float, default=None)
@click.option("--seed", type=int, default=None, help="Master seed (overrides the config)")
@click.option("--threads", type=int, default=None, help=f"Worker threads (default {DEFAULT_THREADS})")
@click.option("--output-dir", "output", type=click.Path(file_okay=False), default=None)
def simulate(config_path, output, **fields):
    """Monte Carlo survival curve of a coupling next to phi_t"""
    _run("simulate", config_path, {**fields, "output": output})


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSON run config; inline flags override its fields")
@click.option("--space", default=None)
@click.option("--dim", type=int, default=None)
@click.option("--x1", callback=_float_list, default=None)
@click.option("--x2", callback=_float_list, default=None)
@click.option("--chain", callback=_json_object, default=None)
@click.option("--t", "times", type=float, multiple=True, help="Time (or step count on chains); repeatable")
@click.option("--t-grid", "t_grid", callback=_float_list, default=None)
@click.option("--output-dir", "output", type=click.Path(file_okay=False), default=None)
def exact(config_path, times, t_grid, output, **fields):
    """Exact laws, densities and phi curves"""
    if times:
        t_grid = sorted(set(times))
    _run("exact", config_path, {**fields, "t_grid": t_grid, "output": output})


@cli.command()
@click.argument("check_name", required=False, type=click.Choice(sorted(CHECKS)))
@click.option("--check", "check_option", type=click.Choice(sorted(CHECKS)), default=None)
@click.option("--params", callback=_json_object, default=None, help="JSON object of check parameters")
@click.option("--output-dir", "output", type=click.Path(file_okay=False), default=None)
def verify(check_name, check_option, params, output):
    """Run one named verification check and store its report"""
    if check_name and check_option and check_name != check_option:
        raise click.UsageError(f"conflicting checks '{check_name}' and '{check_option}'")
    check = check_option or check_name
    if check is None:
        raise click.UsageError("name a check with --check")
    _run("verify", None, {"check": check, "params": params or {}, "output": output})


@cli.command()
@click.option("--a", "a", type=float, required=True)
@click.option("--b", "b", type=float, required=True)
@click.option("--samples", type=int, default=1000, show_default=True)
def bisector(a, b, samples):
    """Print the torus equidistant set of [(a, 0)] and [(0, b)]"""
    try:
        geometry = torus_bisector(a, b)
    except CouplingLabError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_CONFIG)
    payload = geometry.model_dump()
    payload["max_residual"] = max(bisector_residuals(geometry, samples))
    click.echo(json.dumps(payload, indent=2))


@cli.command()
@click.argument("run_id", required=False)
@click.option("--output-dir", "output", type=click.Path(file_okay=False), default=None)
def report(run_id, output):
    """List stored runs, or print one run's manifest"""
    storage = ResultStorage(output)
    if run_id is None:
        for row in storage.list_manifests():
            status = "pass" if row.get("passed") else "FAIL"
            click.echo(f"{row['run_id']}  {row.get('created_at')}  {row.get('pipeline'):<8}  {status}")
        return
    manifest = storage.get_manifest(run_id)
    if manifest is None:
        click.echo(f"no run {run_id}", err=True)
        sys.exit(EXIT_FAILED)
    click.echo(json.dumps(manifest, indent=2))


@cli.command()
@click.option("--host", default=HOST, show_default=True)
@click.option("--port", type=int, default=PORT, show_default=True)
def serve(host, port):
    """Serve the HTTP API"""
    import uvicorn

    logger.info(f"Starting server on {host}:{port} (debug={DEBUG})")
    uvicorn.run("main:app", host=host, port=port, reload=DEBUG)


if __name__ == "__main__":
    cli()
