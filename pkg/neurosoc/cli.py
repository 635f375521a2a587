"""Command line: `python -m neurosoc <command>` (or `flask --app neurosoc <command>`).

Exit codes: 0 success, 1 invalid configuration or contract violation, 2 runtime failure.
"""
from __future__ import annotations

import functools
import json
import logging
from pathlib import Path

import click
from flask import current_app
from flask.cli import FlaskGroup, with_appcontext

from .config import load_experiment_file
from .errors import ConfigError, NeurosocError
from .services.convert import (
    ConversionReport,
    MlpModel,
    SnnVariant,
    TrainConfig,
    convert_variant,
    export_snn,
    normalize_for_snn,
    parse_layers,
    train_mlp,
)
from .services.datasets import fetch_mnist, load_mnist
from .services.encoding import as_arrays
from .services.footprint import FootprintQuery, footprint_report
from .services.noc import FlitTrace, Mesh, RouterConfig, run_random_traffic
from .services.reporting import gnuplot_blocks, read_curve_csv, write_curve_csv, write_metrics_csv
from .services.runs import record_run
from .services.system import SystemConfig, parse_dims, run_experiment
from .services.training import export_stdp

logger = logging.getLogger(__name__)


def guarded(fn):
    """Map failures onto exit codes and print them to stderr."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except NeurosocError as e:
            click.echo(f"error [{e.code}]: {e.message}", err=True)
            raise click.exceptions.Exit(e.exit_code)
        except Exception as e:
            logger.exception("command failed")
            click.echo(f"error [runtime_error]: {e}", err=True)
            raise click.exceptions.Exit(2)

    return wrapper


def _cfg(key: str):
    return current_app.config[key]


def _results(*parts) -> Path:
    return Path(_cfg("NEUROSOC_RESULTS_DIR"), *parts)


def _echo(payload: dict) -> None:
    click.echo(json.dumps(payload, indent=2, sort_keys=True, default=str))


def _default(value, config_file, fallback):
    """Flags win; without a flag the experiment file wins; otherwise the fallback."""
    if value is not None:
        return value
    return None if config_file else fallback


def _system_config(config_file, overrides: dict) -> SystemConfig:
    values = load_experiment_file(config_file, overrides) if config_file else {k: str(v) for k, v in overrides.items() if v is not None}
    return SystemConfig.from_mapping(values)


seed_option = click.option("--seed", type=int, default=None, help="global seed (default NEUROSOC_SEED)")
dataset_dir_option = click.option(
    "--dataset-dir", "dataset_dir", type=click.Path(file_okay=False), default=None, help="MNIST directory (default NEUROSOC_DATA_DIR)"
)
config_option = click.option("--config", "config_file", type=click.Path(dir_okay=False), default=None, help="key=value experiment file")
transport_option = click.option("--transport", type=click.Choice(["direct", "noc"]), default=None)


def encoder_options(fn):
    """--n-steps, --dt and --max-rate; each overrides the matching `encoder.*` key."""
    fn = click.option("--max-rate", type=float, default=None, help="firing rate of a full-intensity pixel, Hz")(fn)
    fn = click.option("--dt", type=float, default=None, help="time-step length, s")(fn)
    return click.option("--n-steps", type=int, default=None, help="time steps per sample")(fn)


def _encoder_overrides(n_steps, dt, max_rate) -> dict:
    return {"encoder.n_steps": n_steps, "encoder.dt": dt, "encoder.max_rate": max_rate}


def _data_dir(dataset_dir) -> str:
    return dataset_dir or _cfg("NEUROSOC_DATA_DIR")


@click.command("train-ann")
@click.option("--layers", default="784:48:10", show_default=True)
@click.option("--epochs", type=int, default=5, show_default=True)
@click.option("--lr", type=float, default=0.05, show_default=True)
@click.option("--batch-size", type=int, default=64, show_default=True)
@click.option("--bias/--no-bias", default=False, show_default=True)
@click.option("--train-limit", type=int, default=None)
@click.option("--test-limit", type=int, default=None)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@dataset_dir_option
@seed_option
@with_appcontext
@guarded
def train_ann(layers, epochs, lr, batch_size, bias, train_limit, test_limit, out, dataset_dir, seed):
    """Train the ReLU MLP that the conversion path starts from."""
    seed = _cfg("NEUROSOC_SEED") if seed is None else seed
    sizes = parse_layers(layers)
    config = TrainConfig(epochs=epochs, learning_rate=lr, batch_size=batch_size, seed=seed, use_bias=bias)
    out = Path(out) if out else _results("mlp.npz")
    params = {"layers": layers, "epochs": epochs, "lr": lr, "batch_size": batch_size, "bias": bias}
    with record_run("train-ann", params, seed) as run:
        data_dir = _data_dir(dataset_dir)
        train = load_mnist(data_dir, "train", train_limit)
        test = load_mnist(data_dir, "test", test_limit)
        model = train_mlp(train, config, sizes=sizes, test=test)
        out.parent.mkdir(parents=True, exist_ok=True)
        model.save(out)
        summary = {
            "train_accuracy": model.report.train_accuracy[-1] if model.report.train_accuracy else None,
            "test_accuracy": model.report.test_accuracy,
            "model": str(out),
        }
        run.finish(summary, out)
    _echo(summary)


@click.command("convert")
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--variant", default="7", show_default=True, help="float, int or a fraction width such as 7")
@click.option("--calibration", type=int, default=1000, show_default=True)
@click.option("--percentile", type=float, default=100.0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default=None)
@dataset_dir_option
@with_appcontext
@guarded
def convert(model_path, variant, calibration, percentile, out, dataset_dir):
    """Normalise a trained MLP and write it out as per-layer core weight files."""
    variant = SnnVariant.parse(variant)
    out = Path(out) if out else _results(f"snn-{variant.name}")
    params = {"model": model_path, "variant": variant.name, "calibration": calibration, "percentile": percentile}
    with record_run("convert", params) as run:
        calib = load_mnist(_data_dir(dataset_dir), "train", calibration)
        model = normalize_for_snn(MlpModel.load(model_path), calib, percentile)
        out.mkdir(parents=True, exist_ok=True)
        model.save(out / "normalized.npz")
        summary = {"variant": variant.name, "normalized_model": str(out / "normalized.npz")}
        if variant.frac_bits is not None:
            export_snn(convert_variant(model, variant), out, variant=variant.name)
            summary["manifest"] = str(out / "manifest.txt")
        else:
            logger.info("float variant has no hardware weight files; only the normalised model was written")
        run.finish(summary, out)
    _echo(summary)


@click.command("eval-snn")
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--variants", default=None, help="comma separated, e.g. float,7,5,3,int")
@click.option("--test-limit", type=int, default=1000, show_default=True)
@click.option("--calibration", type=int, default=1000, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@encoder_options
@dataset_dir_option
@seed_option
@config_option
@transport_option
@with_appcontext
@guarded
def eval_snn(model_path, variants, test_limit, calibration, out, n_steps, dt, max_rate, dataset_dir, seed, config_file, transport):
    """Accuracy-versus-time-step curves for each SNN variant on identical Poisson inputs."""
    names = [v.strip() for v in variants.split(",")] if variants else list(_cfg("DEFAULT_VARIANTS"))
    parsed = [SnnVariant.parse(v) for v in names]
    raw_model = MlpModel.load(model_path)
    overrides = {
        "mode": "ann_conversion",
        "network.layers": ":".join(str(s) for s in raw_model.sizes),
        "seed": _default(seed, config_file, _cfg("NEUROSOC_SEED")),
        "transport": _default(transport, config_file, "direct"),
        **_encoder_overrides(n_steps, dt, max_rate),
    }
    config = _system_config(config_file, overrides)
    out = Path(out) if out else _results("conversion.csv")
    params = {"model": model_path, "variants": names, "test_limit": test_limit, **config.to_mapping()}
    with record_run("eval-snn", params, config.seed) as run:
        data_dir = _data_dir(dataset_dir)
        model = normalize_for_snn(raw_model, load_mnist(data_dir, "train", calibration))
        test = load_mnist(data_dir, "test", test_limit)
        report = ConversionReport(config.encoder.n_steps)
        metrics = {"mlp_accuracy": round(model.accuracy(*as_arrays(test)), 6)}
        for variant in parsed:
            result = run_experiment(config, test=test, network=convert_variant(model, variant))
            report.add(variant.name, next(iter(result.curve.values())))
            metrics[variant.name] = result.metrics
        write_curve_csv(out, report.rows())
        write_metrics_csv(out.with_suffix(".metrics.csv"), metrics)
        summary = {**metrics, "summary": report.summary(), "curve": str(out)}
        run.finish(summary, out)
    _echo(summary)


@click.command("stdp-train")
@click.option("--neurons", type=int, default=100, show_default=True)
@click.option("--epochs", type=int, default=1, show_default=True)
@click.option("--train-limit", type=int, default=10000, show_default=True)
@click.option("--test-limit", type=int, default=1000, show_default=True)
@click.option("--software", is_flag=True, help="floating-point model instead of the 8-bit hardware network")
@click.option(
    "--rule", type=click.Choice(["fixed", "adaptive"]), default=None,
    help="learning rule; the hardware network only learns fixed-delta (default: fixed, adaptive with --software)",
)
@click.option("--out", type=click.Path(file_okay=False), default=None)
@encoder_options
@dataset_dir_option
@seed_option
@config_option
@transport_option
@with_appcontext
@guarded
def stdp_train_cmd(
    neurons, epochs, train_limit, test_limit, software, rule, out, n_steps, dt, max_rate, dataset_dir, seed, config_file, transport
):
    """Unsupervised STDP training of a 784:N network with lateral inhibition."""
    overrides = {
        "mode": "stdp_training",
        "network.layers": f"784:{neurons}",
        "stdp_net.epochs": epochs,
        "stdp_net.hardware": str(not software).lower(),
        "stdp_net.rule": rule,
        "seed": _default(seed, config_file, _cfg("NEUROSOC_SEED")),
        "transport": _default(transport, config_file, "direct"),
        "noc.drain_limit": _cfg("NOC_DRAIN_LIMIT"),
        **_encoder_overrides(n_steps, dt, max_rate),
    }
    config = _system_config(config_file, overrides)
    net = config.stdp_network
    out = Path(out) if out else _results(f"stdp-{net.n_neurons}" if net.hardware else f"stdp-{net.variant}-{net.n_neurons}")
    params = {"train_limit": train_limit, "test_limit": test_limit, "variant": net.variant, **config.to_mapping()}
    with record_run("stdp-train", params, config.seed) as run:
        data_dir = _data_dir(dataset_dir)
        train = load_mnist(data_dir, "train", train_limit)
        test = load_mnist(data_dir, "test", test_limit) if test_limit else None
        result = run_experiment(config, train=train, test=test)
        export_stdp(result.artefacts["stdp"], out)
        write_metrics_csv(out / "metrics.csv", result.metrics)
        run.finish(result.metrics, out)
    _echo(result.metrics)


@click.command("stdp-eval")
@click.option("--weights", "weights_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--test-limit", type=int, default=1000, show_default=True)
@click.option("--software", is_flag=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@encoder_options
@dataset_dir_option
@seed_option
@config_option
@transport_option
@with_appcontext
@guarded
def stdp_eval_cmd(weights_dir, test_limit, software, out, n_steps, dt, max_rate, dataset_dir, seed, config_file, transport):
    """Classify test digits with a trained STDP network (theta frozen)."""
    overrides = {
        "mode": "stdp_inference",
        "weights_dir": weights_dir,
        "stdp_net.hardware": str(not software).lower(),
        "seed": _default(seed, config_file, _cfg("NEUROSOC_SEED")),
        "transport": _default(transport, config_file, "direct"),
        "noc.drain_limit": _cfg("NOC_DRAIN_LIMIT"),
        **_encoder_overrides(n_steps, dt, max_rate),
    }
    config = _system_config(config_file, overrides)
    out = Path(out) if out else Path(weights_dir) / "eval.csv"
    with record_run("stdp-eval", {"test_limit": test_limit, **config.to_mapping()}, config.seed) as run:
        test = load_mnist(_data_dir(dataset_dir), "test", test_limit)
        result = run_experiment(config, test=test)
        write_metrics_csv(out, result.metrics)
        run.finish(result.metrics, out)
    _echo(result.metrics)


@click.command("noc-bench")
@click.option("--dims", default="4x4x2", show_default=True)
@click.option("--rate", type=float, default=0.1, show_default=True)
@click.option("--cycles", type=int, default=10000, show_default=True)
@click.option("--buffer-depth", type=int, default=4, show_default=True)
@click.option("--ber", type=float, default=0.0, show_default=True, help="per-hop single-bit error probability")
@click.option("--trace", "trace_path", type=click.Path(dir_okay=False), default=None)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@seed_option
@with_appcontext
@guarded
def noc_bench(dims, rate, cycles, buffer_depth, ber, trace_path, out, seed):
    """Uniform random traffic on the mesh; checks flit conservation every cycle."""
    seed = _cfg("NEUROSOC_SEED") if seed is None else seed
    if not 0 <= rate <= 1:
        raise ConfigError(f"rate must be within [0, 1], got {rate}")
    trace = FlitTrace() if trace_path else None
    mesh = Mesh(parse_dims(dims), RouterConfig(buffer_depth=buffer_depth), bit_error_rate=ber, seed=seed, trace=trace)
    params = {"dims": dims, "rate": rate, "cycles": cycles, "buffer_depth": buffer_depth, "ber": ber}
    out = Path(out) if out else _results("noc-bench.csv")
    with record_run("noc-bench", params, seed) as run:
        report = run_random_traffic(mesh, rate, cycles, seed)
        metrics = {
            "cycles": report.cycles,
            "injected": report.injected,
            "delivered": report.delivered,
            "dropped": report.dropped,
            "mean_latency": round(report.mean_latency, 6),
            "max_latency": report.max_latency,
            "conserved_every_cycle": int(report.conserved_every_cycle),
        }
        write_metrics_csv(out, metrics)
        if trace is not None:
            trace.write_csv(trace_path)
        run.finish(metrics, out)
    _echo(metrics)


@click.command("footprint")
@click.option("-X", "--pre", "X", type=int, default=786, show_default=True, help="pre-synaptic neurons")
@click.option("-n", "--connected", "n", type=int, default=0, show_default=True)
@click.option("-m", "--post", "m", type=int, default=256, show_default=True)
@click.option("-w", "--weight-bits", "w", type=int, default=8, show_default=True)
@with_appcontext
@guarded
def footprint(X, n, m, w):
    """Sparse-connectivity saving, break-even points and AER-vs-array buffer sizes."""
    _echo(footprint_report(FootprintQuery(X=X, n=n, m=m, w=w)))


@click.command("report")
@click.option("--input", "input_path", type=click.Path(dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@with_appcontext
@guarded
def report(input_path, out):
    """Turn an accuracy-curve CSV into gnuplot data blocks."""
    text = gnuplot_blocks(read_curve_csv(input_path))
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        click.echo(text, nl=False)


@click.command("fetch-mnist")
@dataset_dir_option
@click.option("--base-url", default=None)
@with_appcontext
@guarded
def fetch_mnist_cmd(dataset_dir, base_url):
    """Download the four MNIST IDX files."""
    files = fetch_mnist(_data_dir(dataset_dir), base_url or _cfg("MNIST_BASE_URL"))
    _echo({"files": [str(f) for f in files]})


COMMANDS = (train_ann, convert, eval_snn, stdp_train_cmd, stdp_eval_cmd, noc_bench, footprint, report, fetch_mnist_cmd)


def register_commands(app) -> None:
    for command in COMMANDS:
        app.cli.add_command(command)


def main():
    from . import create_app

    FlaskGroup(create_app=create_app, help="neurosoc experiments")(prog_name="neurosoc")
