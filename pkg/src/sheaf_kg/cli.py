"""Command-line pipeline: synth, train, eval, query, inspect.

Exit codes: 0 success, 1 runtime/numeric failure, 2 usage or input error.
Every run logs the fully resolved configuration so results are reproducible
from the log alone.
"""

from __future__ import annotations

import difflib
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import checkpoint as ckpt
from . import evaluation, kgdata, synth
from .config import build_settings, read_config_file
from .errors import ConfigError, SheafKGError
from .model import init_for_kg
from .query import Query, answer_query, read_queries, write_queries
from .seeds import substream
from .training import train

logger = logging.getLogger("sheaf_kg")


def _setup_logging():
    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )


def _fail(message: str, code: int = 1):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _parse_seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip() != ""]
    except ValueError:
        raise click.UsageError(f"--seeds must be comma-separated integers, got {text!r}")


def _load_settings(config_path, **flag_overrides):
    file_values = None
    if config_path is not None:
        if not Path(config_path).exists():
            _fail(f"config file not found: {config_path}", 2)
        file_values = read_config_file(config_path)
    try:
        return build_settings(file_values, flag_overrides)
    except ConfigError as exc:
        _fail(str(exc), 2)


def _load_kg(settings, train_path, valid_path, test_path, type_path):
    for label, p in (("train", train_path), ("valid", valid_path), ("test", test_path)):
        if p is not None and not Path(p).exists():
            _fail(f"{label} file not found: {p}", 2)
    relations = kgdata.scan_relation_names(train_path, valid_path, test_path)
    if type_path:
        labels = kgdata.read_type_labels(type_path)
        type_names = tuple(dict.fromkeys(labels.values()))
        schema = kgdata.Schema(
            entity_types=type_names,
            relation_types=relations,
            head_type=(0,) * len(relations),
            tail_type=(0,) * len(relations),
            vertex_dim=(settings.values["entity_dim"],) * len(type_names),
            edge_dim=(settings.values["relation_dim"],) * len(relations),
        )
        # head/tail typing for multi-type sidecar data is inferred from the files
        schema = _infer_relation_typing(schema, labels, train_path, valid_path, test_path)
    else:
        schema = kgdata.default_schema(
            len(relations),
            settings.values["entity_dim"],
            settings.values["relation_dim"],
            relation_names=relations,
        )
    return kgdata.load_dataset(schema, train_path, valid_path, test_path, type_path)


def _infer_relation_typing(schema, labels, *paths):
    head_type = list(schema.head_type)
    tail_type = list(schema.tail_type)
    seen: set[int] = set()
    for path in paths:
        if path is None:
            continue
        with open(path, encoding="utf-8") as fh:
            for raw in fh:
                line = raw.rstrip("\n")
                if not line:
                    continue
                h, rel, t = line.split("\t")
                r = schema.relation_types.index(rel)
                if r in seen:
                    continue
                seen.add(r)
                head_type[r] = schema.entity_types.index(labels[h])
                tail_type[r] = schema.entity_types.index(labels[t])
    from dataclasses import replace

    return replace(schema, head_type=tuple(head_type), tail_type=tuple(tail_type))


@click.group()
def main():
    """Sheaf-based knowledge graph embedding and complex query answering."""
    _setup_logging()


_shared_model_flags = [
    click.option("--config", "config_path", type=click.Path(), default=None, help="key=value config file"),
    click.option("--variant", type=click.Choice(["shv", "shvt"]), default=None),
    click.option("--epochs", type=int, default=None),
    click.option("--batch-size", "batch_size", type=int, default=None),
    click.option("--learning-rate", "learning_rate", type=float, default=None),
    click.option("--negatives", "negatives_per_positive", type=int, default=None),
    click.option("--margin", type=float, default=None),
    click.option("--alpha", type=float, default=None),
    click.option("--sections", type=int, default=None),
    click.option("--entity-dim", "entity_dim", type=int, default=None),
    click.option("--relation-dim", "relation_dim", type=int, default=None),
    click.option("--optimizer", type=click.Choice(["sgd", "adagrad"]), default=None),
    click.option("--constraint", type=str, default=None),
]


def _with_flags(flags):
    def wrap(fn):
        for flag in reversed(flags):
            fn = flag(fn)
        return fn

    return wrap


@main.command("train")
@_with_flags(_shared_model_flags)
@click.option("--train", "train_path", type=click.Path(), required=True)
@click.option("--valid", "valid_path", type=click.Path(), default=None)
@click.option("--test", "test_path", type=click.Path(), default=None)
@click.option("--type-file", "type_path", type=click.Path(), default=None)
@click.option("--seeds", default="0", help="comma-separated seed list; one checkpoint each")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--threads", type=int, default=1)
def cmd_train(config_path, train_path, valid_path, test_path, type_path, seeds, out_dir, threads, **flags):
    """Train one model per seed and write checkpoints plus a report."""
    settings = _load_settings(config_path, **flags)
    seed_list = _parse_seeds(seeds)
    if threads < 1:
        raise click.UsageError("--threads must be >= 1")
    logger.info("resolved config: %s seeds=%s", settings.describe(), seed_list)
    try:
        kg = _load_kg(settings, train_path, valid_path, test_path, type_path)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        lines = []
        for seed in seed_list:
            model = init_for_kg(settings.model_config(), kg, seed)
            model, report = train(kg, settings.train_config(seed), model)
            prefix = out / f"model_seed{seed}"
            ckpt.save_model(model, prefix)
            lines.append(
                f"seed={seed} final_loss={report.epoch_mean_loss[-1]!r} "
                f"orthogonality={report.epoch_orthogonality[-1]!r} "
                f"wall_time={report.wall_time:.2f}s checkpoint={prefix}"
            )
            logger.info(lines[-1])
        (out / "train_report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
        click.echo("\n".join(lines))
    except SheafKGError as exc:
        _fail(str(exc))


@main.command("eval")
@click.option("--checkpoint", "checkpoints", type=click.Path(), multiple=True, required=True,
              help="checkpoint prefix; repeat for multi-seed aggregation")
@click.option("--queries", "queries_path", type=click.Path(), required=True)
@click.option("--method", type=click.Choice(list(evaluation.METHODS)), default="harmonic")
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--threads", type=int, default=1)
def cmd_eval(checkpoints, queries_path, method, out_path, threads):
    """Evaluate checkpoints on a query file; report MRR and Hits@K per structure."""
    if not Path(queries_path).exists():
        _fail(f"query file not found: {queries_path}", 2)
    try:
        reports = []
        counts = None
        for prefix in checkpoints:
            model = ckpt.load_model(prefix)
            queries = read_queries(queries_path, model.entity_index(), model.schema)
            report = evaluation.evaluate(model, queries, method=method, threads=threads)
            reports.append(report)
            counts = {tag: report.per_structure[tag].n_queries for tag in report.per_structure}
            logger.info("evaluated %s on %d queries", prefix, len(queries))
        aggregated = evaluation.aggregate_reports(reports)
        click.echo(evaluation.format_report_table(aggregated))
        if out_path:
            evaluation.write_report(aggregated, out_path, counts)
            logger.info("wrote report to %s", out_path)
    except SheafKGError as exc:
        _fail(str(exc))


def _resolve_names(names, table, kind):
    out = []
    for name in names:
        if name not in table:
            hint = difflib.get_close_matches(name, list(table), n=1)
            suffix = f" (did you mean {hint[0]!r}?)" if hint else ""
            raise click.UsageError(f"unknown {kind} {name!r}{suffix}")
        out.append(table[name])
    return out


@main.command("query")
@click.option("--checkpoint", "prefix", type=click.Path(), required=True)
@click.option("--structure", type=click.Choice(["1p", "2p", "3p", "2i", "3i", "ip", "pi"]), required=True)
@click.option("--anchors", required=True, help="comma-separated anchor entity names")
@click.option("--relations", required=True, help="comma-separated relation names")
@click.option("--top-k", "top_k", type=int, default=10)
def cmd_query(prefix, structure, anchors, relations, top_k):
    """Answer one query and print the best candidates, ascending by cost."""
    try:
        model = ckpt.load_model(prefix)
        entity_table = model.entity_index()
        relation_table = {name: i for i, name in enumerate(model.schema.relation_types)}
        anchor_ids = _resolve_names([a for a in anchors.split(",") if a], entity_table, "entity")
        relation_ids = _resolve_names([r for r in relations.split(",") if r], relation_table, "relation")
        query = Query(structure, tuple(anchor_ids), tuple(relation_ids))
        ranking = answer_query(query, model)
        for entity, value in ranking.top(top_k):
            click.echo(f"{model.entities[entity]}\t{value!r}")
    except SheafKGError as exc:
        _fail(str(exc))


@main.command("inspect")
@click.option("--checkpoint", "prefix", type=click.Path(), required=True)
@click.option("--train", "train_path", type=click.Path(), default=None,
              help="triple file for per-relation discrepancy")
def cmd_inspect(prefix, train_path):
    """Print a checkpoint's configuration, shapes, and parameter norms."""
    try:
        model = ckpt.load_model(prefix)
        cfg = model.config
        click.echo(f"variant={cfg.variant} sections={cfg.sections} alpha={cfg.alpha} "
                   f"margin={cfg.margin} seed={model.seed}")
        click.echo(f"entities={model.n_entities} relations={model.schema.n_relations} "
                   f"entity_types={model.schema.n_entity_types}")
        for r, name in enumerate(model.schema.relation_types):
            head, tail = model.sheaf.head_maps[r], model.sheaf.tail_maps[r]
            line = (
                f"relation {name}: constraint={model.sheaf.constraints[r]} "
                f"maps {head.shape[0]}x{head.shape[1]} "
                f"|head|={np.linalg.norm(head):.4f} |tail|={np.linalg.norm(tail):.4f}"
            )
            if model.sheaf.translations is not None:
                line += f" |translation|={np.linalg.norm(model.sheaf.translations[r]):.4f}"
            click.echo(line)
        if train_path:
            from .model import relation_discrepancy

            kg = kgdata.load_dataset(model.schema, train_path)
            unknown = set(kg.entities) - set(model.entities)
            if unknown:
                _fail(f"training file mentions {len(unknown)} entities absent from the checkpoint", 2)
            remap = {name: i for i, name in enumerate(model.entities)}
            rows = np.array(
                [[remap[kg.entities[h]], r, remap[kg.entities[t]]] for h, r, t in kg.triples],
                dtype=np.int64,
            ).reshape(-1, 3)
            kg = kgdata.KnowledgeGraph(
                schema=model.schema,
                entities=model.entities,
                entity_type=model.entity_type.copy(),
                triples=rows,
                split=np.zeros(len(rows), dtype=np.int8),
            )
            for name, value in relation_discrepancy(model.sheaf, model.sections, kg).items():
                click.echo(f"discrepancy {name}\t{value!r}")
    except SheafKGError as exc:
        _fail(str(exc))


@main.command("synth")
@click.option("--entities", "n_entities", type=int, default=200)
@click.option("--relations", "n_relations", type=int, default=5)
@click.option("--dim", type=int, default=16)
@click.option("--noise", type=float, default=0.0)
@click.option("--seed", type=int, default=0)
@click.option("--variant", type=click.Choice(["shv", "shvt"]), default="shvt")
@click.option("--sections", type=int, default=1)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--easy-queries", "easy", default="",
              help="comma-separated structures to also emit as easy test queries")
@click.option("--queries-per-structure", "per_structure", type=int, default=50)
def cmd_synth(n_entities, n_relations, dim, noise, seed, variant, sections, out_dir, easy, per_structure):
    """Generate a planted-sheaf dataset (triple files + generating checkpoint)."""
    try:
        dataset = synth.generate_planted_kg(
            n_entities, n_relations, dim, noise, seed, variant=variant, sections=sections
        )
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for split in kgdata.SPLITS:
            kgdata.write_triples(dataset.kg, out / f"{split}.tsv", split)
        ckpt.save_model(dataset.generator, out / "generator")
        if easy:
            index = kgdata.build_index(dataset.kg)
            rng = substream(seed, "queries")
            queries = []
            for structure in [s for s in easy.split(",") if s]:
                queries.extend(
                    evaluation.build_easy_queries(dataset.kg, index, structure, per_structure, rng)
                )
            write_queries(
                queries, out / "queries.tsv", dataset.kg.entities, dataset.kg.schema.relation_types
            )
            logger.info("wrote %d easy queries", len(queries))
        counts = {s: int(np.sum(dataset.kg.split_mask(s))) for s in kgdata.SPLITS}
        click.echo(
            f"wrote {dataset.kg.n_entities} entities, "
            f"{counts['train']}/{counts['valid']}/{counts['test']} train/valid/test triples to {out}"
        )
    except SheafKGError as exc:
        _fail(str(exc))


if __name__ == "__main__":
    main()
