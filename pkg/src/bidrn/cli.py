"""Command-line surface: verification, gradient checks, stats, benchmarks,
toy training, and config scaffolding.

Exit codes: 0 success, 1 verification failure, 2 usage or config error.
"""

from __future__ import annotations

import sys

import click
import numpy as np

from . import bench as bench_mod
from . import config as config_mod
from . import gradcheck as gradcheck_mod
from . import stats as stats_mod
from . import train as train_mod
from . import verify as verify_mod
from .errors import ConfigError, TrainingError


@click.group()
def main():
    """1-bit convolution kit: XNOR-popcount kernels, dual-residual blocks,
    and their verification harness."""


@main.command()
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--cases", default=150, show_default=True, type=int,
              help="Randomized cases per suite.")
def verify(seed, cases):
    """Run packed-vs-oracle equivalence, packing, scaling, and shape suites."""
    report = verify_mod.run_all(seed=seed, cases=cases)
    for line in report.summary_lines():
        click.echo(line)
    click.echo(f"total: {report.total_passed} passed")
    if not report.ok:
        sys.exit(1)


@main.command()
@click.option("--seed", default=0, show_default=True, type=int)
def gradcheck(seed):
    """Compare every backward rule against central finite differences."""
    results = gradcheck_mod.run_all(seed=seed)
    ok = True
    for name, err in results.items():
        status = "PASS" if err <= gradcheck_mod.REL_TOL else "FAIL"
        ok &= err <= gradcheck_mod.REL_TOL
        click.echo(f"[{status}] {name}: worst relative error {err:.3e}")
    # saturated probe: surrogate gradient is identically zero outside [-1, 1]
    from .binary import ste_grad
    saturated = ste_grad(np.array([-3.0, -1.0, 1.0, 2.5]))
    click.echo(f"saturated-input probe gradient: {saturated.tolist()}")
    if np.any(saturated != 0.0):
        ok = False
    if not ok:
        sys.exit(1)


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(), help="Network config JSON.")
def stats(config_path):
    """Print parameter/operation accounting for a config as JSON."""
    try:
        cfg = config_mod.load_config(config_path)
        result = stats_mod.model_stats(cfg)
    except ConfigError as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(2)
    click.echo(result.to_json(), nl=False)


@main.command()
@click.option("--sizes", default="small", show_default=True,
              type=click.Choice(sorted(bench_mod.SIZE_PRESETS)))
@click.option("--reps", default=5, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", type=click.Path(), default=None,
              help="Write the CSV report here instead of stdout.")
def bench(sizes, reps, seed, out):
    """Benchmark packed 1-bit convolution against the float reference."""
    rows = bench_mod.bench_conv(bench_mod.SIZE_PRESETS[sizes], reps=reps, seed=seed)
    report = bench_mod.report_csv(rows)
    if out:
        with open(out, "w") as f:
            f.write(report)
        click.echo(f"wrote {out}")
    else:
        click.echo(report, nl=False)


@main.command("train-toy")
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Network config JSON; defaults to the full-bidrb preset.")
@click.option("--steps", default=500, show_default=True, type=int)
@click.option("--seed", default=7, show_default=True, type=int)
@click.option("--lr", default=1e-2, show_default=True, type=float)
@click.option("--out", type=click.Path(), default=None,
              help="Loss-trace CSV path; checkpoint goes next to it.")
def train_toy(config_path, steps, seed, lr, out):
    """Train the tiny network on the synthetic teacher task."""
    try:
        if config_path:
            cfg = config_mod.load_config(config_path)
        else:
            cfg = config_mod.preset_config("full-bidrb")
    except ConfigError as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(2)
    try:
        trace, net = train_mod.train_toy(cfg, steps=steps, seed=seed, lr=lr)
    except TrainingError as e:
        click.echo(f"training error: {e}", err=True)
        sys.exit(1)
    csv_text = train_mod.trace_to_csv(trace)
    if out:
        with open(out, "w") as f:
            f.write(csv_text)
        ckpt = out + ".ckpt" if not out.endswith(".csv") else out[:-4] + ".ckpt"
        config_mod.save_checkpoint(ckpt, config_mod.network_state(net))
        click.echo(f"wrote {out} and {ckpt}")
    else:
        click.echo(csv_text, nl=False)
    if trace:
        click.echo(f"final loss: {trace[-1][1]:.4f} (initial {trace[0][1]:.4f})")


@main.command("init-config")
@click.argument("kind")
@click.option("--out", type=click.Path(), default=None,
              help="Where to write the config (default <kind>.json).")
def init_config(kind, out):
    """Write a template config: base-lcr, full-bidrb, or table4a-step-N."""
    try:
        cfg = config_mod.preset_config(kind)
    except ConfigError as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(2)
    path = out or f"{kind}.json"
    config_mod.save_config(cfg, path)
    click.echo(f"wrote {path}")


if __name__ == "__main__":
    main()
