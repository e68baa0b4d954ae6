"""Command-line entry point: one manifest in, corpus files out."""

import click

from .manifest import ExtractError, ExtractorManifest
from .pipeline import extract_all


@click.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path(),
              help="Extraction manifest JSON.")
@click.option("--jobs", default=1, show_default=True,
              help="Parallel conversation workers.")
@click.version_option()
def main(manifest_path, jobs):
    """Extract corpus JSONL and per-modality feature CSVs from raw assets."""
    try:
        manifest = ExtractorManifest.load(manifest_path)
        summary = extract_all(manifest, jobs=jobs)
    except ExtractError as exc:
        raise click.ClickException(str(exc))
    click.echo(
        f"extracted {summary['conversations']} conversations "
        f"({summary['utterances']} utterances)"
    )
    for m, n in summary["rows"].items():
        click.echo(f"  {m}: {n} rows via {summary['models'][m]}")


if __name__ == "__main__":
    main()
