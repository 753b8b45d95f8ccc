"""Command-line entry points: analyze, synth, eval and fit-list."""

import logging
from pathlib import Path
from typing import List, Optional

import typer
from rich.console import Console
from rich.markup import escape
from rich.table import Table

from burrscan import __version__
from burrscan.config import (
    DEFAULT_ALPHA,
    DEFAULT_NOISE_Z,
    DEFAULT_WINDOW_DAYS,
    BurrscanError,
    build_run_config,
    configure_logging,
    get_default_out_dir,
    get_default_workers,
)
from burrscan.evaluate import NORMAL_POSITIVE, TUNNEL_POSITIVE, evaluate_run
from burrscan.exporter import export_run, export_site_fit
from burrscan.ingest import write_capture, write_query_log
from burrscan.pipeline import RunReport, analyze_site_list, run_analysis
from burrscan.synth import TUNNEL, build_dataset, default_synth_spec, load_synth_spec, write_labels
from burrscan.verification import Classification

app = typer.Typer(add_completion=False, no_args_is_help=True, help="Offline DNS tunnel detection from query-name length distributions.")
console = Console()

EXIT_ERROR = 1
EXIT_TUNNEL = 2

QUERIES_FILE = "queries.csv"
LABELS_FILE = "labels.csv"
CAPTURE_FILE = "queries.pcap"

_STYLES = {
    Classification.TUNNEL.value: "bold red",
    Classification.SUSPICIOUS.value: "yellow",
    Classification.BENIGN.value: "green",
}


def _setup(verbose: bool) -> None:
    configure_logging(logging.INFO if verbose else None)


def _fail(error: object) -> None:
    console.print(f"[red][!] {escape(str(error))}[/red]", soft_wrap=True)
    raise typer.Exit(code=EXIT_ERROR)


def _print_report(report: RunReport) -> None:
    windows = Table(title="Windows", show_lines=False)
    for column in ("#", "records", "DNSS", "ADNSS", "burr lengths", "status"):
        windows.add_column(column)
    for result in report.windows:
        dnss, adnss = result.space_sizes
        status = "unfit" if result.unfit else ("partial" if result.partial else "ok")
        lengths = ", ".join(str(x) for x in sorted(result.burr_lengths)) or "-"
        windows.add_row(str(result.window.index), str(result.record_count), str(dnss), str(adnss), lengths, status)
    console.print(windows)

    for message in report.warnings:
        console.print(f"[yellow]{message}[/yellow]")

    if not report.verdicts:
        console.print("[green]No sudden burrs to verify.[/green]")
        return
    verdicts = Table(title="Verdicts", show_lines=True)
    for column in ("family", "class", "members", "rules"):
        verdicts.add_column(column)
    for verdict in report.verdicts:
        style = _STYLES.get(verdict.classification.value, "")
        rules = ", ".join(f"{rule}={value:.2f}" for rule, value in verdict.reasons) or "-"
        verdicts.add_row(
            verdict.family,
            f"[{style}]{verdict.classification.value}[/]" if style else verdict.classification.value,
            str(len(verdict.members)),
            rules,
        )
    console.print(verdicts)


@app.command()
def analyze(
    inputs: List[Path] = typer.Option(..., "--input", "-i", help="Capture (pcap) or query-log CSV; repeatable."),
    window_days: float = typer.Option(DEFAULT_WINDOW_DAYS, help="Window duration in days."),
    stride_days: Optional[float] = typer.Option(None, help="Window stride in days (default: tumbling)."),
    alpha: float = typer.Option(DEFAULT_ALPHA, help="KS significance level: 0.10, 0.05 or 0.01."),
    mode: str = typer.Option("upper", help="Burr mode: upper or two_sided."),
    noise_z: float = typer.Option(DEFAULT_NOISE_Z, help="Sampling-noise gate in standard deviations (0 disables)."),
    whitelist: Optional[Path] = typer.Option(None, help="Whitelist of trusted suffixes, one per line."),
    thresholds: Optional[Path] = typer.Option(None, help="Verification thresholds JSON."),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output directory (default: $BURRSCAN_OUT or burrscan_out)."),
    workers: Optional[int] = typer.Option(None, help="Parallel window workers (default: $BURRSCAN_WORKERS or 1)."),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Log progress at INFO."),
):
    """Finds sudden burrs in the query-name length law and verifies their families."""
    _setup(verbose)
    try:
        config = build_run_config(
            inputs=inputs,
            window_days=window_days,
            stride_days=stride_days,
            alpha=alpha,
            mode=mode,
            noise_z=noise_z,
            whitelist=whitelist,
            thresholds=thresholds,
            out_dir=out or get_default_out_dir(),
            workers=workers or get_default_workers(),
        )
        report = run_analysis(config)
    except (BurrscanError, OSError) as e:
        _fail(e)

    success, message = export_run(report, config.out_dir)
    if not success:
        _fail(message)
    _print_report(report)
    console.print(f"[bold blue]*[/] {message}")
    if report.has_tunnel:
        raise typer.Exit(code=EXIT_TUNNEL)


@app.command()
def synth(
    spec: Optional[Path] = typer.Option(None, "--spec", help="Dataset specification JSON (default: built-in three-month spec)."),
    out: Path = typer.Option(..., "--out", "-o", help="Directory receiving queries.csv and labels.csv."),
    seed: Optional[int] = typer.Option(None, help="Overrides the dataset seed."),
    pcap: bool = typer.Option(False, "--pcap", help="Also write the queries as a pcap capture."),
    verbose: bool = typer.Option(False, "--verbose", "-v"),
):
    """Writes a labeled synthetic dataset."""
    _setup(verbose)
    try:
        dataset_spec = load_synth_spec(spec) if spec else default_synth_spec()
        if seed is not None:
            dataset_spec = dataset_spec.model_copy(update={"seed": seed})
        records, labels = build_dataset(dataset_spec)
        out.mkdir(parents=True, exist_ok=True)
        rows = write_query_log(records, out / QUERIES_FILE)
        names = write_labels(labels, out / LABELS_FILE)
        if pcap:
            write_capture(records, out / CAPTURE_FILE)
    except (BurrscanError, OSError) as e:
        _fail(e)
    tunnels = sum(1 for label in labels.values() if label == TUNNEL)
    console.print(f"[bold blue]*[/] Wrote {rows} queries and {names} labels ({tunnels} tunnel) to {out}")


@app.command("eval")
def eval_command(
    report: Path = typer.Option(..., "--report", help="Directory written by analyze."),
    labels: Path = typer.Option(..., "--labels", help="qname,label CSV."),
    verbose: bool = typer.Option(False, "--verbose", "-v"),
):
    """Scores an analysis against labels in both polarities."""
    _setup(verbose)
    try:
        result = evaluate_run(report, labels)
    except (BurrscanError, OSError) as e:
        _fail(e)

    table = Table(title="Detection metrics", show_lines=True)
    table.add_column("metric")
    table.add_column("normal positive", justify="right")
    table.add_column("tunnel positive", justify="right")
    for name in ("accuracy", "precision", "recall", "f1"):
        cells = []
        for polarity in (NORMAL_POSITIVE, TUNNEL_POSITIVE):
            value = result.metrics[polarity].get(name)
            cells.append("undefined" if value is None else f"{value:.4f}")
        table.add_row(name, *cells)
    c = result.counts
    console.print(table)
    console.print(f"normal positive counts: TP={c.tp} FN={c.fn} FP={c.fp} TN={c.tn}")


@app.command("fit-list")
def fit_list(
    site_list: Path = typer.Option(..., "--input", "-i", help="Top-sites list: rank,domain CSV or one domain per line."),
    alpha: float = typer.Option(DEFAULT_ALPHA),
    out: Optional[Path] = typer.Option(None, "--out", "-o"),
    verbose: bool = typer.Option(False, "--verbose", "-v"),
):
    """Fits the length law of a domain list."""
    _setup(verbose)
    out_dir = out or get_default_out_dir()
    try:
        if not site_list.is_file():
            raise FileNotFoundError(f"Input file not found: {site_list}")
        analysis = analyze_site_list(site_list, alpha=alpha)
    except (BurrscanError, OSError) as e:
        _fail(e)
    success, message = export_site_fit(analysis, out_dir, site_list.stem)
    if not success:
        _fail(message)
    if analysis.fit is not None:
        fit = analysis.fit
        console.print(f"mu={fit.mu:.3f} sigma={fit.sigma:.3f} amplitude={fit.amplitude:.1f} r2={fit.r2:.4f}")
    else:
        console.print(f"[yellow]no fit: {analysis.error}[/yellow]")
    if analysis.ks is not None:
        verdict = "passes" if analysis.ks.passed else "fails"
        console.print(f"KS D={analysis.ks.d_stat:.5f} critical={analysis.ks.critical:.5f} ({verdict})")
    console.print(f"burr lengths: {', '.join(str(b.length) for b in analysis.burrs) or '-'}")
    console.print(f"[bold blue]*[/] {message}")


@app.command()
def version():
    console.print(f"burrscan {__version__}")


def main() -> None:
    app()


if __name__ == "__main__":
    main()
