"""Command line entry point.

Exit codes: 0 success, 2 usage or vocabulary error, 3 missing upstream
artifact or optional package, 4 numerical failure during training.
"""

from __future__ import annotations

import functools
import json
import logging
import sys
from pathlib import Path

import click

from . import config as C
from . import pipeline as P
from .align import IndexStateError
from .diffusion import ScheduleError
from .motion import VocabularyError
from .motion.corpus import CorpusConfigError
from .vae import FrameRangeError, TrainingError

EXIT_USAGE, EXIT_DEPENDENCY, EXIT_NUMERIC = 2, 3, 4


def _fail(code: int, msg: str):
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


def guarded(fn):
    """Map library exceptions onto exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except P.DependencyError as exc:
            _fail(EXIT_DEPENDENCY, str(exc))
        except TrainingError as exc:
            _fail(EXIT_NUMERIC, str(exc))
        except (P.UsageError, C.ConfigError, VocabularyError, CorpusConfigError, ScheduleError,
                FrameRangeError, IndexStateError) as exc:
            _fail(EXIT_USAGE, str(exc))

    return wrapper


def _run(ctx) -> P.Run:
    return ctx.obj


@click.group()
@click.option("--run-dir", type=click.Path(file_okay=False, path_type=Path), default=Path("run"),
              show_default=True, help="Directory holding every stage's artifacts.")
@click.option("--config", "config_path", type=click.Path(dir_okay=False, path_type=Path),
              default=None, help="Config file; defaults to RUN_DIR/config.txt when present.")
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
              help="Override one config key (repeatable).")
@click.option("-v", "--verbose", count=True)
@click.pass_context
def main(ctx, run_dir, config_path, overrides, verbose):
    """Style-conditioned motion generation on a synthetic corpus."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if config_path is None and (run_dir / "config.txt").exists():
        config_path = run_dir / "config.txt"
    try:
        cfg = C.load(config_path, overrides)
    except (C.ConfigError, OSError) as exc:
        _fail(EXIT_USAGE, str(exc))
    ctx.obj = P.Run(run_dir, cfg)


def _stage_command(name: str, doc: str):
    @main.command(name, help=doc)
    @click.pass_context
    @guarded
    def cmd(ctx):
        result = P.STAGE_FUNCS[name](_run(ctx))
        if isinstance(result, dict):
            click.echo(json.dumps(result, indent=2, default=P._jsonable))
        click.echo(f"{name}: done ({_run(ctx).root})")

    return cmd


_stage_command("gen-data", "Generate the synthetic corpus (train/test/judge splits).")
_stage_command("train-vae", "Stage-1 VAE pre-training on the neutral content corpus.")
_stage_command("train-style-encoder", "Stage-2 VAE fine-tuning on the style corpus.")
_stage_command("train-classifier", "Train the style judge and content classifier.")
_stage_command("train-diffusion", "Train the content denoiser, then tune the style encoder.")
_stage_command("train-align", "Fit the modality projection and build the retrieval index.")


@main.command("run-all")
@click.pass_context
@guarded
def run_all(ctx):
    """Run every training stage in order."""
    P.run_all(_run(ctx))
    click.echo(f"run-all: done ({_run(ctx).root})")


@main.command()
@click.option("--content", required=True, help="Content sentence, e.g. 'a person is walking'.")
@click.option("--style-modality", type=click.Choice(["motion", "text", "stub-image", "stub-audio"]),
              required=True)
@click.option("--style-input", required=True,
              help="Motion file path for 'motion'; a style word for the other modalities.")
@click.option("--gamma", type=float, default=None, help="Fusion strength (default from config).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.pass_context
@guarded
def stylize(ctx, content, style_modality, style_input, gamma, seed, out):
    """Generate one stylized motion; provenance goes to OUT.json."""
    if style_modality == "motion" and not Path(style_input).exists():
        raise P.UsageError(f"style motion {style_input} not found")
    system = P.System(_run(ctx))
    prov = P.stylize(system, content, style_modality, style_input, out, gamma, seed)
    click.echo(json.dumps(prov, indent=2, sort_keys=True, default=P._jsonable))


@main.command()
@click.option("--content", required=True)
@click.option("--styles", "styles", required=True, multiple=True, metavar="W:STYLE",
              help="Weighted style word, repeatable, e.g. --styles 0.5:old --styles 0.5:proud.")
@click.option("--style-modality", type=click.Choice(["text", "stub-image", "stub-audio"]),
              default="text", show_default=True)
@click.option("--gamma", type=float, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.pass_context
@guarded
def interpolate(ctx, content, styles, style_modality, gamma, seed, out):
    """Blend retrieved style features with nonnegative weights."""
    items = [tok for s in styles for tok in s.split()]
    pairs = P.parse_style_weights(items)
    system = P.System(_run(ctx))
    prov = P.interpolate(system, content, pairs, out, gamma, seed, style_modality)
    click.echo(json.dumps(prov, indent=2, sort_keys=True, default=P._jsonable))


@main.command()
@click.option("--gamma", type=float, default=None)
@click.pass_context
@guarded
def evaluate(ctx, gamma):
    """Compute the metric report; writes RUN_DIR/eval/metrics.yaml."""
    report = P.evaluate(_run(ctx), gamma)
    click.echo(P.render_report(report))


@main.command("ablate-gamma")
@click.option("--grid", default=None, help="Comma-separated gammas (default from config).")
@click.option("--plot/--no-plot", default=False, help="Also render gamma_sweep.png.")
@click.pass_context
@guarded
def ablate_gamma(ctx, grid, plot):
    """Sweep the fusion strength; writes RUN_DIR/eval/gamma_sweep.csv."""
    run = _run(ctx)
    if grid is None:
        values = run.cfg.eval.gamma_grid
    else:
        try:
            values = [float(g) for g in grid.split(",") if g.strip()]
        except ValueError as exc:
            raise P.UsageError(f"bad --grid {grid!r}") from exc
    if plot:
        _require_matplotlib()
    rows = P.gamma_sweep(run, values)
    csv_path = run.root / "eval" / "gamma_sweep.csv"
    click.echo(csv_path.read_text(), nl=False)
    if plot:
        from .plots import plot_gamma_sweep

        png = plot_gamma_sweep(rows, run.root / "eval" / "gamma_sweep.png")
        click.echo(f"figure: {png}")


def _require_matplotlib():
    try:
        import matplotlib  # noqa: F401
    except ImportError:
        raise P.DependencyError("matplotlib", "python package matplotlib") from None


if __name__ == "__main__":
    main()
