"""
CLI for the clinevent clinical event extraction engine
"""

import logging
import sys
import time
from collections.abc import Iterator
from contextlib import contextmanager
from datetime import UTC, datetime
from pathlib import Path
from typing import Any, Optional

import typer
import yaml
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from clinevent import __version__
from clinevent.corpus import load_corpus, load_document, load_documents, read_annotation_dir, write_corpus_annotations
from clinevent.errors import ClinEventError, ConfigError, EvaluationError
from clinevent.evaluation import (
    ALL_TASKS,
    dev_scorer,
    evaluate_all,
    majority_baseline,
    render_report,
    report_lines,
    run_memorize,
    train_memorize,
)
from clinevent.features import build_vocabularies
from clinevent.network import load_tagger, model_digest, save_model, save_tagger
from clinevent.pipeline import ModelSet, Task, build_instances, extract_corpus, label_scheme, prepare_tokens
from clinevent.synthetic import generate, load_spec, write_corpus
from clinevent.textproc import read_tagged_corpus, tagger_accuracy, tokenize, train_tagger
from clinevent.training import build_model, load_config, train
from clinevent.validator import ManifestValidator

app = typer.Typer(name="clinevent", help="Clinical event span and attribute extraction")
console = Console(soft_wrap=True, highlight=False, emoji=False)
err_console = Console(stderr=True, soft_wrap=True, highlight=False, emoji=False)

logger = logging.getLogger("clinevent")


def _state(ctx: typer.Context) -> dict[str, Any]:
    return ctx.obj or {}


@app.callback()
def main(
    ctx: typer.Context,
    seed: Optional[int] = typer.Option(None, "--seed", help="Override the seed of configs and specs"),
    config: Optional[Path] = typer.Option(None, "--config", help="Train config file (key = value lines)"),
    quiet: bool = typer.Option(False, "--quiet", "-q", help="Only log warnings and errors"),
):
    """Clinical event extraction with a temporal convolutional window classifier."""
    ctx.obj = {"seed": seed, "config": config}
    level = logging.WARNING if quiet else logging.INFO
    handler = RichHandler(console=err_console, show_path=False, markup=False)
    logger.handlers[:] = [handler]
    logger.setLevel(level)
    logger.propagate = False


@contextmanager
def _exit_on_error() -> Iterator[None]:
    """Map engine and I/O failures to one stderr line and the documented exit code."""
    try:
        yield
    except ClinEventError as e:
        err_console.print(f"error: {e}", markup=False)
        raise typer.Exit(code=e.exit_code) from e
    except OSError as e:
        err_console.print(f"I/O error: {e}", markup=False)
        raise typer.Exit(code=2) from e


def _write_manifest(path: Path, manifest: dict[str, Any]) -> None:
    """Validate and write a run manifest atomically."""
    is_valid, errors = ManifestValidator().validate_data(manifest)
    if not is_valid:
        msg = "invalid run manifest: " + "; ".join(errors)
        raise ConfigError(msg)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(yaml.safe_dump(manifest, sort_keys=False, allow_unicode=True), encoding="utf-8")
    tmp.replace(path)


def _parse_tasks(tasks: str) -> list[Task]:
    try:
        return [Task(name.strip()) for name in tasks.split(",") if name.strip()]
    except ValueError as e:
        msg = f"unknown task in {tasks!r}; choose from {', '.join(Task)}"
        raise ConfigError(msg) from e


@app.command("tokenize")
def tokenize_cmd(text_path: Path = typer.Argument(..., help="UTF-8 text file")):
    """Print 'begin end surface shape' for every token of a document."""
    with _exit_on_error():
        document = load_document(text_path)
        for token in tokenize(document.text, document.id):
            console.print(f"{token.begin} {token.end} {token.surface} {token.shape}", markup=False)


@app.command("train-tagger")
def train_tagger_cmd(
    ctx: typer.Context,
    tagged_path: Path = typer.Argument(..., help="word/TAG corpus, one sentence per line"),
    out: Path = typer.Option(..., "--out", "-o", help="Tagger container to write"),
    epochs: int = typer.Option(5, help="Training epochs"),
):
    """Train the averaged-perceptron POS tagger."""
    with _exit_on_error():
        seed = _state(ctx).get("seed")
        sentences = read_tagged_corpus(tagged_path.read_text(encoding="utf-8").splitlines())
        tagger = train_tagger(sentences, epochs=epochs, seed=13 if seed is None else seed)
        out.parent.mkdir(parents=True, exist_ok=True)
        save_tagger(tagger, out)
        accuracy = tagger_accuracy(tagger, sentences)
        console.print(f"[green]✅ Tagger with {len(tagger.tags)} tags written to {out}[/green]")
        console.print(f"Training accuracy: {accuracy:.4f}")


@app.command("train")
def train_cmd(
    ctx: typer.Context,
    task: Task = typer.Argument(..., help="span, modality, degree, polarity, type or doctimerel"),
    corpus_dir: Path = typer.Argument(..., help="Corpus split with text/ and ann/"),
    tagger_path: Path = typer.Option(..., "--tagger", help="Tagger container"),
    out: Path = typer.Option(..., "--out", "-o", help="Model container to write"),
    embeddings: Optional[Path] = typer.Option(None, "--embeddings", help="GloVe-format word vectors"),
    dev_dir: Optional[Path] = typer.Option(None, "--dev", help="Dev split for early stopping"),
):
    """Train one task's window classifier and write it with a run manifest."""
    with _exit_on_error():
        state = _state(ctx)
        started = datetime.now(UTC)
        clock = time.perf_counter()
        overrides = {} if state.get("seed") is None else {"seed": state["seed"]}
        config = load_config(state.get("config"), overrides)
        tagger = load_tagger(tagger_path)

        corpus = load_corpus(corpus_dir)
        tokens = {document.id: prepare_tokens(document, tagger) for document, _ in corpus}
        vocabularies = build_vocabularies(tokens.values())
        instances = build_instances(
            task, corpus, vocabularies, tagger, config.window, config.anchor, token_sequences=tokens
        )
        pretrained = embeddings.read_text(encoding="utf-8").splitlines() if embeddings else None
        labels = label_scheme(task).classes
        model = build_model(config, vocabularies, labels, task.value, tagger, pretrained)
        dev_score = dev_scorer(task, load_corpus(dev_dir), tagger) if dev_dir else None

        logger.info("training %s on %d windows of length %d", task, len(instances), config.sequence_length)
        result = train(model, instances, config, dev_score)
        out.parent.mkdir(parents=True, exist_ok=True)
        save_model(model, out)
        finished = datetime.now(UTC)

        manifest = {
            "version": __version__,
            "command": "train",
            "argv": sys.argv[1:],
            "seed": config.seed,
            "task": task.value,
            "config": config.as_mapping(),
            "sequence_length": config.sequence_length,
            "inputs": {
                "corpus": str(corpus_dir),
                "tagger": str(tagger_path),
                "embeddings": str(embeddings) if embeddings else None,
                "dev": str(dev_dir) if dev_dir else None,
                "config": str(state["config"]) if state.get("config") else None,
            },
            "outputs": {"model": {"path": str(out), "sha256": model_digest(model)}},
            "timing": {
                "started": started.isoformat(),
                "finished": finished.isoformat(),
                "seconds": round(time.perf_counter() - clock, 3),
            },
            "losses": [float(loss) for loss in result.losses],
            "dev_scores": [float(score) for score in result.dev_scores],
            "epochs_run": result.epochs_run,
        }
        manifest_path = out.with_suffix(".manifest.yaml")
        _write_manifest(manifest_path, manifest)

        table = Table(title=f"{task} training")
        table.add_column("Epoch", style="cyan")
        table.add_column("Loss", style="magenta")
        table.add_column("Dev F1", style="green")
        for epoch, loss in enumerate(result.losses, start=1):
            dev = f"{result.dev_scores[epoch - 1]:.4f}" if epoch <= len(result.dev_scores) else "-"
            table.add_row(str(epoch), f"{loss:.5f}", dev)
        console.print(table)
        console.print(f"[green]✅ Model written to {out}[/green] (manifest {manifest_path.name})")


def _write_outputs(out_dir: Path, documents, results) -> None:
    write_corpus_annotations(out_dir, zip(documents, results, strict=True))
    console.print(f"[green]✅ Wrote {len(documents)} annotation files to {out_dir}[/green]")


@app.command("extract")
def extract_cmd(
    models_dir: Path = typer.Argument(..., help="Directory of <task>.clnx models"),
    input_dir: Path = typer.Argument(..., help="Directory of raw text files"),
    out_dir: Path = typer.Argument(..., help="Directory for <doc_id>.ann.xml output"),
    gold_spans: Optional[Path] = typer.Option(None, "--gold-spans", help="Annotation dir whose spans are classified"),
    tasks: Optional[str] = typer.Option(None, "--tasks", help="Comma-separated attribute tasks (default: all loaded)"),
    workers: int = typer.Option(1, "--workers", min=1, help="Documents processed concurrently"),
):
    """Extract events from raw text, or classify attributes of gold spans."""
    with _exit_on_error():
        documents = load_documents(input_dir)
        model_set = ModelSet.load_dir(models_dir)
        gold = read_annotation_dir(gold_spans, documents) if gold_spans else None
        requested = _parse_tasks(tasks) if tasks else None
        results = extract_corpus(model_set, documents, gold, requested, workers=workers)
        _write_outputs(out_dir, documents, results)


@app.command("baseline")
def baseline_cmd(
    train_dir: Path = typer.Argument(..., help="Training split with text/ and ann/"),
    input_dir: Path = typer.Argument(..., help="Directory of raw text files"),
    out_dir: Path = typer.Argument(..., help="Directory for <doc_id>.ann.xml output"),
    gold_spans: Optional[Path] = typer.Option(None, "--gold-spans", help="Annotation dir whose spans are classified"),
    majority: bool = typer.Option(False, "--majority", help="Assign majority values only (needs --gold-spans)"),
):
    """Run the memorization baseline (or the majority-class baseline)."""
    with _exit_on_error():
        model = train_memorize(load_corpus(train_dir))
        documents = load_documents(input_dir)
        gold = read_annotation_dir(gold_spans, documents) if gold_spans else None
        if majority:
            if gold is None:
                msg = "--majority needs --gold-spans"
                raise ConfigError(msg)
            results = majority_baseline(model, documents, gold)
        else:
            results = run_memorize(model, documents, gold)
        _write_outputs(out_dir, documents, results)


@app.command("evaluate")
def evaluate_cmd(
    system_dir: Path = typer.Argument(..., help="Directory of system <doc_id>.ann.xml files"),
    gold_dir: Path = typer.Argument(..., help="Gold split with text/ and ann/"),
    tasks: str = typer.Option(",".join(ALL_TASKS), "--tasks", help="Comma-separated tasks to score"),
    lines: bool = typer.Option(False, "--lines", help="Tab-separated machine-readable output"),
):
    """Score system annotations against gold with exact-offset P/R/F1."""
    with _exit_on_error():
        gold_corpus = load_corpus(gold_dir)
        documents = [document for document, _ in gold_corpus]
        known = {f"{document.id}.ann.xml" for document in documents}
        if not system_dir.is_dir():
            msg = f"system directory not found: {system_dir}"
            raise FileNotFoundError(msg)
        extra = sorted(p.name for p in system_dir.glob("*.ann.xml") if p.name not in known)
        if extra:
            msg = f"system files without gold documents: {', '.join(extra)}"
            raise EvaluationError(msg)
        system = read_annotation_dir(system_dir, documents)
        gold = {document.id: annotation_set for document, annotation_set in gold_corpus}
        reports = evaluate_all(system, gold, _parse_tasks(tasks))
        # rich expands tabs, so the report bypasses the console
        output = "\n".join(report_lines(reports)) + "\n" if lines else render_report(reports)
        typer.echo(output, nl=False)


@app.command("synth")
def synth_cmd(
    ctx: typer.Context,
    spec_path: Path = typer.Argument(..., help="Generator spec (YAML)"),
    out_dir: Path = typer.Argument(..., help="Target directory for {train,dev,test}/{text,ann}"),
):
    """Generate the seeded synthetic corpus."""
    with _exit_on_error():
        spec = load_spec(spec_path)
        seed = _state(ctx).get("seed")
        if seed is not None:
            spec.seed = seed
        corpus = generate(spec)
        write_corpus(corpus, out_dir)

        table = Table(title=f"Synthetic corpus (seed {spec.seed})")
        table.add_column("Split", style="cyan")
        table.add_column("Documents", style="magenta")
        table.add_column("Events", style="green")
        for split, pairs in corpus.splits.items():
            table.add_row(split, str(len(pairs)), str(corpus.events(split)))
        console.print(table)
        console.print(f"Test events with unseen words: {corpus.oov_count}")


if __name__ == "__main__":
    app()
