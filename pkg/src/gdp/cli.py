"""Command-line surface for the document-to-deck pipeline."""

from __future__ import annotations

import functools
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click

from .classifier import (
    EmbeddingSimilarityClassifier,
    TrainConfig,
    TransformerPairClassifier,
    classification_metrics,
    save_classifier,
    train_classifier,
)
from .config import PipelineConfig, parse_config
from .documents import load_document, load_reference_presentation, save_reference_presentation
from .errors import GdpError
from .evaluation import (
    CausalLmScorer,
    attribution_sequence,
    evaluate_presentation,
    nonlinearity,
    report_payload,
    save_report,
)
from .generation import HttpChatBackend, MockLlmBackend, load_presentation
from .pipeline import (
    build_provider,
    resolve_cache_dir,
    run_pipeline,
)
from .synthesis import build_pair_dataset, load_pair_dataset, save_pair_dataset

logger = logging.getLogger(__name__)


def friendly_errors(fn):
    """Turn package errors into clean CLI messages instead of tracebacks."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except GdpError as exc:
            raise click.ClickException(str(exc)) from exc

    return wrapper


def _with_overrides(config: PipelineConfig, **overrides) -> PipelineConfig:
    """Rebuild the config with dotted-key overrides so validation reruns."""
    data = config.to_dict()
    for dotted, value in overrides.items():
        if value is None:
            continue
        target = data
        *parents, leaf = dotted.split(".")
        for part in parents:
            target = target[part]
        target[leaf] = value
    return PipelineConfig.from_dict(data)


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="YAML config file; omit for defaults.")
@click.option("--work-dir", type=click.Path(file_okay=False), default=None,
              help="Artifact directory (overrides paths.work_dir).")
@click.option("--seed", type=int, default=None, help="Top-level random seed.")
@click.option("-v", "--verbose", is_flag=True, help="Log stage progress.")
@click.pass_context
@friendly_errors
def main(ctx, config_path, work_dir, seed, verbose):
    """Turn a structured document into an attributed slide deck."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    config = parse_config(config_path) if config_path else PipelineConfig()
    overrides = {}
    if work_dir is not None:
        overrides["paths.work_dir"] = work_dir
    if seed is not None:
        overrides["seed"] = seed
    ctx.obj = _with_overrides(config, **overrides) if overrides else config


@main.command()
@click.argument("doc", type=click.Path(exists=True, dir_okay=False))
@click.option("--pres", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Reference deck to validate and store alongside.")
@click.pass_obj
@friendly_errors
def ingest(config, doc, pres):
    """Validate and normalize input files into the work directory."""
    result = run_pipeline(doc, config, until="ingest")
    document = load_document(result.artifact("ingest"))
    click.echo(f"{result.doc_id}: {len(document)} paragraphs "
               f"-> {result.artifact('ingest')}")
    if pres:
        reference = load_reference_presentation(pres)
        out = result.work_dir / "reference.json"
        save_reference_presentation(reference, out)
        click.echo(f"{reference.doc_id}: {len(reference.slides)} reference "
                   f"slides -> {out}")


def _load_corpus(directory):
    """Pair up <stem>.doc.json with <stem>.pres.json files."""
    directory = Path(directory)
    pairs = []
    doc_paths = sorted(directory.glob("*.doc.json"))
    if not doc_paths:
        raise click.ClickException(
            f"no *.doc.json files in {directory}; corpus files are named "
            f"<stem>.doc.json and <stem>.pres.json"
        )
    for doc_path in doc_paths:
        stem = doc_path.name[: -len(".doc.json")]
        pres_path = directory / f"{stem}.pres.json"
        if not pres_path.exists():
            raise click.ClickException(f"{doc_path} has no matching {pres_path.name}")
        pairs.append((load_document(doc_path),
                      load_reference_presentation(pres_path)))
    return pairs


@main.command("synthesize-dataset")
@click.option("--corpus", required=True, type=click.Path(exists=True, file_okay=False),
              help="Directory of <stem>.doc.json / <stem>.pres.json pairs.")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--split", default="train", show_default=True)
@click.option("--negatives-per-paragraph", default=10, show_default=True)
@click.option("--max-examples", default=None, type=int,
              help="Seeded subsample cap; default keeps everything.")
@click.pass_obj
@friendly_errors
def synthesize_dataset(config, corpus, out, split, negatives_per_paragraph,
                       max_examples):
    """Build a labeled paragraph-pair dataset from document/deck pairs."""
    pairs = _load_corpus(corpus)
    dataset = build_pair_dataset(
        pairs, build_provider(config),
        negatives_per_paragraph=negatives_per_paragraph,
        seed=config.seed, split=split,
        cache_dir=resolve_cache_dir(config), max_examples=max_examples,
    )
    save_pair_dataset(dataset, out)
    pos, neg = dataset.counts()
    click.echo(f"{split}: {pos} positive / {neg} negative pairs "
               f"from {len(pairs)} documents -> {out}")


@main.command("train-classifier")
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Pair dataset (newline-delimited JSON).")
@click.option("--corpus", required=True, type=click.Path(exists=True, file_okay=False),
              help="Directory of *.doc.json files resolving pair texts.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--val-data", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Held-out pairs for the reported metrics.")
@click.option("--epochs", default=3, show_default=True)
@click.pass_obj
@friendly_errors
def train_classifier_cmd(config, data, corpus, out_dir, val_data, epochs):
    """Fit the pair classifier and write a checkpoint directory."""
    dataset = load_pair_dataset(data)
    documents = {}
    for path in sorted(Path(corpus).glob("*.doc.json")):
        document = load_document(path)
        documents[document.doc_id] = document
    provider = build_provider(config)
    if config.classifier.backend == "similarity":
        classifier = EmbeddingSimilarityClassifier(
            provider, cache_dir=resolve_cache_dir(config))
    else:
        classifier = TransformerPairClassifier()
    train_config = TrainConfig(epochs=epochs, seed=config.seed)
    classifier = train_classifier(dataset, documents, train_config, classifier)
    save_classifier(classifier, out_dir, dataset=dataset)
    held_out = load_pair_dataset(val_data, split="validation") if val_data else dataset
    metrics = classification_metrics(classifier, held_out, documents)
    click.echo(f"{classifier.name}: accuracy {metrics['accuracy']:.3f}, "
               f"f1 {metrics['f1']:.3f} -> {out_dir}")


def _stage_command(config, doc, until, echo_artifact, **overrides):
    result = run_pipeline(doc, _with_overrides(config, **overrides), until=until)
    state = f"ran {', '.join(result.executed)}" if result.executed else "up to date"
    click.echo(f"{result.doc_id}: {state} -> {result.artifact(echo_artifact)}")
    return result


@main.command("score-pairs")
@click.argument("doc", type=click.Path(exists=True, dir_okay=False))
@click.pass_obj
@friendly_errors
def score_pairs(config, doc):
    """Materialize the pairwise same-slide probability matrix."""
    _stage_command(config, doc, "score_pairs", "score_pairs")


@main.command("build-graph")
@click.argument("doc", type=click.Path(exists=True, dir_okay=False))
@click.option("--alpha", type=float, default=None, help="Edge threshold override.")
@click.pass_obj
@friendly_errors
def build_graph_cmd(config, doc, alpha):
    """Threshold pair scores into the paragraph graph."""
    _stage_command(config, doc, "graph", "graph", alpha=alpha)


@main.command()
@click.argument("doc", type=click.Path(exists=True, dir_okay=False))
@click.option("--alpha", type=float, default=None)
@click.option("--epochs", type=int, default=None, help="Encoder epochs override.")
@click.option("--seed", type=int, default=None, help="Encoder seed override.")
@click.pass_obj
@friendly_errors
def embed(config, doc, alpha, epochs, seed):
    """Train the graph encoder and write node embeddings."""
    _stage_command(config, doc, "gnn", "gnn", **{
        "alpha": alpha, "gnn.epochs": epochs, "gnn.seed": seed,
    })


@main.command()
@click.argument("doc", type=click.Path(exists=True, dir_okay=False))
@click.option("--k", type=int, default=None, help="Number of slides override.")
@click.option("--seed", type=int, default=None)
@click.pass_obj
@friendly_errors
def cluster(config, doc, k, seed):
    """Group paragraphs into an ordered slide plan."""
    result = _stage_command(config, doc, "cluster", "cluster", k=k, seed=seed)
    sizes = [len(members) for members in result.plan.clusters]
    click.echo(f"{result.plan.k} clusters, sizes {sizes}")


@main.command()
@click.argument("doc", type=click.Path(exists=True, dir_okay=False))
@click.pass_obj
@friendly_errors
def generate(config, doc):
    """Generate the slide deck from the current plan."""
    result = _stage_command(config, doc, "generate", "generate")
    click.echo(f"{len(result.presentation.slides)} slides")


def _echo_run(result, stage_lines=True):
    if stage_lines:
        for stage in result.skipped:
            click.echo(f"  {stage}: cached")
        for stage in result.executed:
            click.echo(f"  {stage}: ran")
    click.echo(f"{result.doc_id}: {len(result.presentation.slides)} slides "
               f"-> {result.artifact('generate')}")


@main.command()
@click.argument("docs", nargs=-1, required=True,
                type=click.Path(exists=True, dir_okay=False))
@click.option("--workers", default=1, show_default=True,
              help="Documents processed in parallel (one run per document).")
@click.pass_obj
@friendly_errors
def run(config, docs, workers):
    """Run every stage end to end (resuming whatever is already done)."""
    if workers < 1:
        raise click.UsageError("--workers must be >= 1")
    if len(docs) == 1:
        _echo_run(run_pipeline(docs[0], config, until="generate"))
        return
    failures = 0
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(run_pipeline, path, config, until="generate")
                   for path in docs]
        for path, future in zip(docs, futures):
            try:
                _echo_run(future.result(), stage_lines=False)
            except GdpError as exc:
                failures += 1
                click.echo(f"{path}: failed: {exc}", err=True)
    if failures:
        raise click.ClickException(f"{failures} of {len(docs)} documents failed")


@main.command()
@click.option("--pres", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--doc", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--ref", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Reference deck; enables ROUGE-1.")
@click.option("--judge", type=click.Choice(["mock", "http-chat"]), default=None,
              help="LLM judge backend; enables the 0-10 quality score.")
@click.option("--ppl-model", default=None,
              help="Causal LM name for perplexity; omitted = metric absent.")
@click.option("--samples", default=10, show_default=True,
              help="Judge samples to average.")
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Write the report here instead of stdout.")
@click.pass_obj
@friendly_errors
def evaluate(config, pres, doc, ref, judge, ppl_model, samples, out):
    """Score a generated deck; optional metrics are reported as null."""
    presentation = load_presentation(pres)
    document = load_document(doc)
    reference = load_reference_presentation(ref) if ref else None
    scorer = CausalLmScorer(ppl_model) if ppl_model else None
    if judge == "mock":
        judge_backend = MockLlmBackend()
    elif judge == "http-chat":
        llm = config.llm
        judge_backend = HttpChatBackend(llm.base_url, llm.model,
                                        max_retries=llm.max_retries)
    else:
        judge_backend = None
    report = evaluate_presentation(
        presentation, document, build_provider(config),
        reference=reference, scorer=scorer, judge=judge_backend,
        geval_samples=samples, cache_dir=resolve_cache_dir(config),
    )
    if out:
        save_report(report, out)
        click.echo(f"report -> {out}")
    else:
        click.echo(json.dumps(report_payload(report), indent=2))


@main.command("nonlinearity")
@click.option("--pres", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Take the sequence from this deck's attribution.")
@click.argument("values", nargs=-1, type=int)
@friendly_errors
def nonlinearity_cmd(pres, values):
    """Percentage of attribution pairs that break reading order."""
    if pres and values:
        raise click.UsageError("pass either --pres or an explicit sequence, not both")
    if pres:
        sequence = attribution_sequence(load_presentation(pres))
    elif values:
        sequence = list(values)
    else:
        raise click.UsageError("pass --pres FILE or a sequence of integers")
    click.echo(f"{nonlinearity(sequence):.1f}%")


if __name__ == "__main__":
    main()
