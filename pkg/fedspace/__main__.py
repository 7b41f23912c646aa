"""fedspace CLI entry point."""

import sys
from collections.abc import Callable
from pathlib import Path

import click
from rich.console import Console
from rich.panel import Panel
from rich.progress import BarColumn, Progress, TextColumn, TimeElapsedColumn
from rich.table import Table

from fedspace import __version__
from fedspace.core.config import (
    DatasetConfig,
    SimConfig,
    load_sim_config,
    merge_overrides,
)
from fedspace.core.errors import (
    ConfigError,
    ConstraintViolationError,
    DivergenceError,
    NumericError,
    SchemaError,
)
from fedspace.core.logging_utils import configure_logging
from fedspace.core.system_detector import SystemInfo, detect_system
from fedspace.data.datasets import LabeledDataset, load_cifar100, load_dataset
from fedspace.data.splitgen import generate_split, partition_classes, save_split
from fedspace.federated.metrics import RoundLog, summarize
from fedspace.federated.orchestrator import evaluate, evaluate_per_task, run_simulation
from fedspace.federated.server import load_any_model, load_server_checkpoint
from fedspace.fractal.dataset import build_pretrain_dataset, load_fractal_dataset, save_fractal_dataset
from fedspace.fractal.pretrain import pretrain as run_pretrain
from fedspace.nn.augment import NUM_ROTATIONS
from fedspace.nn.checkpoint import save_params
from fedspace.nn.models import ModelSpec, build_model

console = Console()

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def display_run_banner(config: SimConfig, system_info: SystemInfo) -> None:
    """Show the run configuration and host resources.

    Args:
        config: Resolved run configuration
        system_info: System detection results
    """
    table = Table(title="Run", show_header=False, box=None)
    table.add_column("Property", style="cyan")
    table.add_column("Value", style="green")
    flags = config.flags
    table.add_row("Method", config.method)
    table.add_row("Rounds", f"{config.total_rounds} (K={config.clients_per_round}, eval every {config.eval_period})")
    table.add_row("Losses", f"λ_p={config.lambda_p} λ_r={config.lambda_r}")
    table.add_row("Aggregation", f"β={config.beta} ρ={config.rho if flags.server_aggr else 1.0}")
    table.add_row(
        "Components",
        " | ".join(
            f"{name}: {'✓' if on else '✗'}"
            for name, on in (
                ("proto aggr", flags.proto_aggr),
                ("pretrain", flags.pretrain),
                ("repr loss", flags.repr_loss),
                ("server aggr", flags.server_aggr),
            )
        ),
    )
    table.add_row(
        "Host",
        f"{system_info.platform}, {system_info.cpu_count} CPUs, "
        f"{system_info.available_ram_gb:.1f} GB available",
    )

    console.print()
    console.print(
        Panel.fit(
            "[bold magenta]fedspace[/bold magenta] - Asynchronous Federated Continual Learning\n"
            f"[dim]Version {__version__}[/dim]",
            border_style="magenta",
        )
    )
    console.print(table)
    console.print()


def _guarded(debug: bool, action: Callable[[], None]) -> None:
    """Run a command body and map failures to exit codes."""
    try:
        action()
    except KeyboardInterrupt:
        console.print("\n[dim]Interrupted by user[/dim]")
        sys.exit(130)
    except (ConfigError, SchemaError, ConstraintViolationError) as e:
        console.print(f"[red]✗ Configuration error: {e}[/red]")
        if debug:
            console.print_exception()
        sys.exit(EXIT_CONFIG)
    except (NumericError, DivergenceError) as e:
        console.print(f"[red]✗ Numeric failure: {e}[/red]")
        if debug:
            console.print_exception()
        sys.exit(EXIT_NUMERIC)
    except Exception as e:
        console.print(f"[red]✗ Error: {e}[/red]")
        if debug:
            console.print_exception()
        sys.exit(1)


def _dataset_from_option(source: str, num_classes: int, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    if source == "synthetic":
        return load_dataset(DatasetConfig(num_classes=num_classes, seed=seed))
    return load_cifar100(Path(source))


@click.group()
@click.version_option(version=__version__, prog_name="fedspace")
@click.option("--debug", is_flag=True, help="Enable debug mode with verbose logging")
@click.pass_context
def main(ctx: click.Context, debug: bool) -> None:
    """fedspace - Asynchronous federated continual learning simulator."""
    ctx.ensure_object(dict)
    ctx.obj["debug"] = debug
    configure_logging("debug" if debug else "warning")


@main.command("gen-split")
@click.option("--dataset", "source", default="synthetic", show_default=True,
              help="'synthetic' or a CIFAR-100 binary directory")
@click.option("--clients", type=int, required=True, help="Number of clients N")
@click.option("--tasks", type=int, default=10, show_default=True)
@click.option("--classes-per-task", type=int, default=10, show_default=True)
@click.option("--alpha", type=float, default=3.0, show_default=True, help="Dirichlet concentration")
@click.option("--rounds", type=int, required=True, help="Total rounds T")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--exponent", type=float, default=1.5, show_default=True, help="Client-size power-law exponent")
@click.option("--min-size", type=int, default=64, show_default=True)
@click.option("--min-stage-len", type=int, default=10, show_default=True)
@click.option("--fraction", type=float, default=1.0, show_default=True)
@click.option("--shuffle-classes", is_flag=True, help="Shuffle class order before forming task blocks")
@click.option("--data-seed", type=int, default=0, show_default=True, help="Synthetic data seed")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.pass_context
def gen_split(
    ctx: click.Context,
    source: str,
    clients: int,
    tasks: int,
    classes_per_task: int,
    alpha: float,
    rounds: int,
    seed: int,
    exponent: float,
    min_size: int,
    min_stage_len: int,
    fraction: float,
    shuffle_classes: bool,
    data_seed: int,
    out: Path,
) -> None:
    """Generate an asynchronous non-IID federated split."""

    def action() -> None:
        train, _ = _dataset_from_option(source, tasks * classes_per_task, data_seed)
        split = generate_split(
            train, clients, tasks, classes_per_task, rounds, seed,
            alpha=alpha, exponent=exponent, min_size=min_size,
            min_stage_len=min_stage_len, fraction=fraction, shuffle_classes=shuffle_classes,
        )
        save_split(split, out)
        console.print(f"[green]✓ Split with {clients} clients written to {out}[/green]")

    _guarded(ctx.obj["debug"], action)


@main.command("gen-fractals")
@click.option("--classes", type=int, required=True, help="Number of fractal classes")
@click.option("--per-class", type=int, default=10, show_default=True)
@click.option("--size", type=int, default=32, show_default=True)
@click.option("--iterations", type=int, default=50_000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.pass_context
def gen_fractals(
    ctx: click.Context, classes: int, per_class: int, size: int, iterations: int, seed: int, out: Path
) -> None:
    """Render a labeled fractal dataset."""

    def action() -> None:
        with console.status(f"Rendering {classes * per_class} fractal images..."):
            data = build_pretrain_dataset(classes, per_class, size, seed, iterations=iterations)
        save_fractal_dataset(data, out)
        console.print(f"[green]✓ {len(data)} images written to {out}[/green]")

    _guarded(ctx.obj["debug"], action)


@main.command("pretrain")
@click.option("--data", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--epochs", type=int, default=1, show_default=True)
@click.option("--batch", type=int, default=32, show_default=True)
@click.option("--lr", type=float, default=1e-3, show_default=True)
@click.option("--encoder", type=click.Choice(["conv", "mlp"]), default="conv", show_default=True)
@click.option("--feature-dim", type=int, default=64, show_default=True)
@click.option("--channels", type=int, default=3, show_default=True, help="Input channels of the target data")
@click.option("--side", type=int, default=None, help="Input side of the target data (default: render size)")
@click.option("--rotations/--no-rotations", default=False, help="Rotation label augmentation")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.pass_context
def pretrain(
    ctx: click.Context,
    data: Path,
    epochs: int,
    batch: int,
    lr: float,
    encoder: str,
    feature_dim: int,
    channels: int,
    side: int | None,
    rotations: bool,
    seed: int,
    out: Path,
) -> None:
    """Pre-train an encoder on fractals and save θ^(0)."""

    def action() -> None:
        fractals = load_fractal_dataset(data)
        flatten = encoder == "mlp"
        labeled = fractals.to_labeled(channels=channels, side=side, flatten=flatten)
        width = fractals.num_classes * (NUM_ROTATIONS if rotations else 1)
        spec = ModelSpec(
            encoder=encoder,  # type: ignore[arg-type]
            input_shape=labeled.input_shape,
            feature_dim=feature_dim,
            num_outputs=width,
            num_rotations=NUM_ROTATIONS if rotations else 1,
        )
        with console.status(f"Pre-training for {epochs} epoch(s)..."):
            result = run_pretrain(
                build_model(spec, seed), labeled, epochs=epochs, batch_size=batch, lr=lr,
                seed=seed, rotations=rotations,
            )
        save_params(result.model, out)
        console.print(
            f"[green]✓ Train accuracy {result.train_accuracy:.3f}; parameters written to {out}[/green]"
        )

    _guarded(ctx.obj["debug"], action)


def _print_summary(logs: list[RoundLog]) -> None:
    summary = summarize(logs)
    table = Table(title="Result", show_header=False, box=None)
    table.add_column("Metric", style="cyan")
    table.add_column("Value", style="yellow")
    for key in ("final_acc", "best_acc", "forgetting"):
        value = summary[key]
        table.add_row(key, "-" if value is None else f"{value:.4f}")
    for task, acc in summary["final_task_acc"].items():
        table.add_row(f"task {task}", f"{acc:.4f}")
    console.print(table)


@main.command("train")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="Run document (YAML or JSON)")
@click.option("--split", "split_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--theta0", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--out", type=click.Path(file_okay=False, path_type=Path))
@click.option("--method", type=click.Choice(["fedspace", "fedavg", "pass"], case_sensitive=False))
@click.option("--rounds", type=int, help="Override total_rounds")
@click.option("--seed", type=int, help="Override seed")
@click.option("--resume", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="Continue from a server checkpoint (reuses split.json beside it)")
@click.pass_context
def train(
    ctx: click.Context,
    config_path: Path | None,
    split_path: Path | None,
    theta0: Path | None,
    out: Path | None,
    method: str | None,
    rounds: int | None,
    seed: int | None,
    resume: Path | None,
) -> None:
    """Run a federated continual learning simulation."""
    debug = ctx.obj["debug"]

    def action() -> None:
        config = load_sim_config(config_path, method=method.lower() if method else None)
        config = merge_overrides(
            config,
            split_path=str(split_path) if split_path else None,
            theta0_path=str(theta0) if theta0 else None,
            output_dir=str(out) if out else None,
            total_rounds=rounds,
            seed=seed,
        )
        if not debug:
            configure_logging(config.log_level)
        if resume and not config.split_path:
            saved_split = resume.parent / "split.json"
            if not saved_split.exists():
                raise ConfigError(f"no split.json next to {resume}; pass the run's split with --split")
            config = merge_overrides(config, split_path=str(saved_split))
        display_run_banner(config, detect_system())
        state = load_server_checkpoint(resume) if resume else None

        with Progress(
            TextColumn("[progress.description]{task.description}"),
            BarColumn(),
            TextColumn("{task.completed}/{task.total}"),
            TimeElapsedColumn(),
            console=console,
        ) as progress:
            start = state.round_index if state else 0
            bar = progress.add_task("Rounds", total=max(config.total_rounds - start, 0))

            def on_round(log: RoundLog) -> None:
                acc = f" acc {log.acc:.3f}" if log.acc is not None else ""
                progress.update(bar, advance=1, description=f"Round {log.round_index}{acc}")

            result = run_simulation(config, resume=state, output_dir=Path(config.output_dir), on_round=on_round)
        _print_summary(result.logs)
        console.print(f"[green]✓ Metrics and checkpoint written to {config.output_dir}[/green]")

    _guarded(debug, action)


@main.command("eval")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--test", "source", default="synthetic", show_default=True,
              help="'synthetic' or a CIFAR-100 binary directory")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="Run document describing the synthetic data and the task blocks")
@click.pass_context
def eval_command(ctx: click.Context, checkpoint: Path, source: str, config_path: Path | None) -> None:
    """Top-1 accuracy of a checkpoint on a test set."""

    def action() -> None:
        config = load_sim_config(config_path)
        model = load_any_model(checkpoint)
        if source == "synthetic":
            _, test = load_dataset(config.dataset)
        else:
            _, test = load_cifar100(Path(source))
        num_rotations = model.spec.num_rotations
        if model.num_outputs != test.num_classes * num_rotations:
            raise ConfigError(
                f"head width {model.num_outputs} does not fit {test.num_classes} classes x {num_rotations} rotation(s)"
            )
        console.print(f"Top-1 accuracy: [bold]{evaluate(model, test, num_rotations):.4f}[/bold]")

        s = config.split
        if s.num_tasks * s.classes_per_task == test.num_classes:
            tasks = partition_classes(s.num_tasks, s.classes_per_task)
            table = Table(title="Per task", box=None)
            table.add_column("Task", style="cyan")
            table.add_column("Accuracy", style="yellow")
            for task, acc in evaluate_per_task(model, test, tasks, num_rotations).items():
                table.add_row(str(task), f"{acc:.4f}")
            console.print(table)

    _guarded(ctx.obj["debug"], action)


if __name__ == "__main__":
    main()
