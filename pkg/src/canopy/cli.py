"""The ``canopy`` command line tool.

Subcommands mirror the pipeline stages: ``ingest`` checks a single file,
``enrich``/``score``/``aggregate``/``table`` run the pipeline up to the
matching stage, ``run`` executes everything, ``fit`` refits a saved model
table, and ``gen-fixture`` writes the seeded synthetic input set.

Exit codes: 0 on success, 1 on a validation problem (bad arguments or
config), 2 on a runtime failure inside a stage or an unreadable input.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click

from .aggregate import read_model_table
from .fixtures import gen_fixture
from .ingest import (
    SchemaError,
    parse_complaints,
    parse_lots,
    parse_regions,
    parse_sensors,
    parse_taxonomy,
    parse_trees,
)
from .pipeline import ConfigError, PipelineError, RunConfig, run_pipeline
from .records import RegionKind
from .regression import format_report, ols_fit, panel_fit, report_rows

_MAX_ERRORS_SHOWN = 10


def _fail(message: str, code: int) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guarded(fn):
    """Map domain failures onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            _fail(str(exc), 1)
        except PipelineError as exc:
            _fail(str(exc), 2)
        except SchemaError as exc:
            _fail(str(exc), 2)
        except ValueError as exc:
            _fail(str(exc), 1)
        except OSError as exc:
            _fail(str(exc), 2)

    return wrapper


@click.group()
def cli() -> None:
    """Street-tree data integration and regression pipeline."""


@cli.command("gen-fixture")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Directory to write the fixture into.")
@click.option("--seed", default=42, show_default=True, type=int)
@click.option("--trees", "n_trees", default=500, show_default=True, type=int)
@click.option("--complaints", "n_complaints", default=200, show_default=True, type=int)
@click.option("--lots", "n_lots", default=60, show_default=True, type=int)
@click.option("--sensors", "n_sensors", default=12, show_default=True, type=int)
@_guarded
def gen_fixture_cmd(out_dir: str, seed: int, n_trees: int, n_complaints: int, n_lots: int, n_sensors: int) -> None:
    """Write a seeded synthetic mini-city input set."""
    summary = gen_fixture(
        out_dir, seed,
        n_trees=n_trees, n_complaints=n_complaints, n_lots=n_lots, n_sensors=n_sensors,
    )
    click.echo(f"fixture written to {out_dir} (seed {seed})")
    click.echo(
        "trees {0[trees][rows]} complaints {0[complaints][rows]} "
        "sensors {0[sensors][rows]} lots {0[lots][rows]}".format(summary)
    )


_PARSERS = {
    "trees": parse_trees,
    "complaints": parse_complaints,
    "taxonomy": parse_taxonomy,
    "regions": parse_regions,
    "sensors": parse_sensors,
    "lots": parse_lots,
}


@cli.command("ingest")
@click.argument("kind", type=click.Choice(sorted(_PARSERS)))
@click.argument("path", type=str)
@_guarded
def ingest_cmd(kind: str, path: str) -> None:
    """Parse one input file and report accepted and rejected rows."""
    if not Path(path).is_file():
        _fail(f"no such file: {path}", 1)
    records, errors = _PARSERS[kind](path)
    total = len(records) + len(errors)
    click.echo(f"{kind}: accepted {len(records)} of {total} rows ({len(errors)} rejected)")
    for err in errors[:_MAX_ERRORS_SHOWN]:
        click.echo(f"  line {err.line}: {err.message}")
    if len(errors) > _MAX_ERRORS_SHOWN:
        click.echo(f"  ... and {len(errors) - _MAX_ERRORS_SHOWN} more")


def _run_until(config_path: str, out_dir: str, until: str, kind: str | None = None) -> None:
    config = RunConfig.from_yaml(config_path)
    if kind is not None:
        config.region_kind = RegionKind(kind)
    report = run_pipeline(config, out_dir, until=until)
    for stage in report.stages:
        click.echo(f"{stage.name}: {json.dumps(stage.counts, sort_keys=True)}")
    click.echo(f"{len(report.artifacts)} artifact(s) in {out_dir}")


@cli.group()
def enrich() -> None:
    """Join trees to attributes and complaints, sensors to surroundings."""


@enrich.command("trees")
@click.option("--config", "config_path", required=True, type=str)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@_guarded
def enrich_trees_cmd(config_path: str, out_dir: str) -> None:
    """Run through the enrich stage; writes trees_enriched.csv and friends."""
    _run_until(config_path, out_dir, "enrich")


@enrich.command("sensors")
@click.option("--config", "config_path", required=True, type=str)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@_guarded
def enrich_sensors_cmd(config_path: str, out_dir: str) -> None:
    """Run through the enrich stage; writes sensor_context.csv and friends."""
    _run_until(config_path, out_dir, "enrich")


@cli.group()
def score() -> None:
    """Region scoring."""


@score.command("pollen")
@click.option("--config", "config_path", required=True, type=str)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@_guarded
def score_pollen_cmd(config_path: str, out_dir: str) -> None:
    """Run through the aggregate stage; writes pollen_scores_* artifacts."""
    _run_until(config_path, out_dir, "aggregate")


@cli.command("aggregate")
@click.option("--config", "config_path", required=True, type=str)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--kind", type=click.Choice([k.value for k in RegionKind if k is not RegionKind.BOROUGH]), default=None, help="Override the region kind used for species selection.")
@_guarded
def aggregate_cmd(config_path: str, out_dir: str, kind: str | None) -> None:
    """Run through the aggregate stage; writes per-region rollups."""
    _run_until(config_path, out_dir, "aggregate", kind=kind)


@cli.command("table")
@click.option("--config", "config_path", required=True, type=str)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@_guarded
def table_cmd(config_path: str, out_dir: str) -> None:
    """Run through the table stage; writes model_table_*.csv."""
    _run_until(config_path, out_dir, "table")


@cli.command("fit")
@click.option("--table", "table_path", required=True, type=str, help="Model table CSV written by the table stage.")
@click.option("--report", "report_path", default=None, type=str, help="Also write the text report here.")
@click.option("--csv", "csv_path", default=None, type=str, help="Also write machine-readable rows here.")
@click.option("--title", default=None, type=str)
@click.option("--no-intercept", is_flag=True, help="Fit without an intercept (ignored for grouped tables).")
@_guarded
def fit_cmd(table_path: str, report_path: str | None, csv_path: str | None, title: str | None, no_intercept: bool) -> None:
    """Refit a saved model table and print the coefficient report."""
    if not Path(table_path).is_file():
        _fail(f"no such file: {table_path}", 1)
    table = read_model_table(table_path)
    if table.groups is not None:
        result = panel_fit(
            table.X, table.y, table.groups, table.predictor_names,
            group_factor="group", outcome_name=table.outcome_name,
        )
    else:
        result = ols_fit(
            table.X, table.y, table.predictor_names,
            intercept=not no_intercept, outcome_name=table.outcome_name,
        )
    text = format_report(result, title=title)
    click.echo(text, nl=False)
    if report_path is not None:
        Path(report_path).write_text(text, encoding="utf-8")
    if csv_path is not None:
        import csv as _csv

        with open(csv_path, "w", newline="", encoding="utf-8") as handle:
            writer = _csv.writer(handle)
            writer.writerow(["row", "name", "estimate", "std_error", "t_stat", "p_value", "stars"])
            for row in report_rows(result):
                writer.writerow(
                    [row["row"], row["name"], row["estimate"], row["std_error"],
                     row["t_stat"], row["p_value"], row["stars"]]
                )


@cli.command("run")
@click.option("--config", "config_path", required=True, type=str)
@click.option("--out", "out_dir", default=None, type=click.Path(file_okay=False), help="Output directory [default: 'out' beside the config].")
@_guarded
def run_cmd(config_path: str, out_dir: str | None) -> None:
    """Run every stage and write all artifacts plus run_report.json."""
    if out_dir is None:
        out_dir = str(Path(config_path).parent / "out")
    _run_until(config_path, out_dir, "fit")


def main(argv: list[str] | None = None) -> int:
    """Console entry point with the documented exit codes."""
    try:
        result = cli.main(args=argv, standalone_mode=False)
        return 0 if result is None else int(result)
    except SystemExit as exc:
        code = exc.code
        return code if isinstance(code, int) else 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
