"""Command surface: preprocess | train | decode | evaluate | ablate.

Every RunConfig field is exposed as a flag; a ``--config`` file supplies
defaults and flags override it. Paths resolve against ``--data-dir``
(or the PLAINER_DATA environment variable).
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import corpus as C
from . import decoding as D
from . import train as TR
from .config import ConfigurationError, RunConfig, build_config
from .corpus import Vocabulary
from .metrics import evaluate_corpus
from .model import ModelParams
from .reports import write_ablation_report, write_eval_reports, write_training_report
from .rules import RuleIndex, parse_rulebase

log = logging.getLogger(__name__)

_KINDS = {"str": str, "int": int, "float": float, "bool": bool}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value config file")
    for f in dataclasses.fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        kind = _KINDS[str(f.type)]
        if kind is bool:
            parser.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        else:
            parser.add_argument(flag, dest=f.name, type=kind, default=None)


def _resolve_config(args) -> RunConfig:
    overrides = {
        f.name: getattr(args, f.name)
        for f in dataclasses.fields(RunConfig)
        if getattr(args, f.name, None) is not None
    }
    return build_config(args.config, overrides)


def _load_rule_index(config: RunConfig) -> RuleIndex | None:
    if not config.rulebase:
        return None
    rules = parse_rulebase(config.path("rulebase"), min_weight=config.min_rule_weight)
    return RuleIndex(rules)


def _require_rule_index(config: RunConfig) -> RuleIndex:
    index = _load_rule_index(config)
    if index is None:
        raise ConfigurationError(f"mode {config.mode} requires a rulebase path")
    return index


# ---------------------------------------------------------------------------
# preprocess
# ---------------------------------------------------------------------------


def cmd_preprocess(args) -> int:
    config = _resolve_config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    pairs = C.load_parallel(
        config.path("train_normal"), config.path("train_simple"), max_len=config.max_len
    )
    normal_spans = C.load_annotations(args.normal_entities) if args.normal_entities else {}
    simple_spans = C.load_annotations(args.simple_entities) if args.simple_entities else {}
    entity_maps = []
    anonymized = []
    for i, pair in enumerate(pairs):
        new_pair, emap = C.anonymize_entities(
            pair, normal_spans.get(i, ()), simple_spans.get(i, ())
        )
        anonymized.append(new_pair)
        entity_maps.append(emap)

    vocab = Vocabulary.build(anonymized, min_count=config.min_count)
    C.save_parallel(anonymized, out_dir / "normal.txt", out_dir / "simple.txt")
    vocab.save(out_dir / "vocab.tsv")
    C.save_entity_maps(entity_maps, out_dir / "entities.tsv")

    tokens = unks = 0
    for pair in anonymized:
        for token in pair.normal + pair.simple:
            tokens += 1
            unks += vocab.id_of(token) == C.UNK_ID
    stats = [
        f"pairs\t{len(pairs)}",
        f"vocab_size\t{len(vocab)}",
        f"tokens\t{tokens}",
        f"unk_rate\t{unks / tokens:.6f}",
    ]
    (out_dir / "stats.tsv").write_text("".join(s + "\n" for s in stats), encoding="utf-8")
    for line in stats:
        log.info("preprocess %s", line.replace("\t", " = "))
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    config = _resolve_config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    pairs = C.load_parallel(
        config.path("train_normal"), config.path("train_simple"), max_len=config.max_len
    )
    vocab = (
        Vocabulary.load(config.path("vocab"))
        if config.vocab
        else Vocabulary.build(pairs, min_count=config.min_count)
    )
    index = _require_rule_index(config) if config.mode != "base" else _load_rule_index(config)
    valid_pairs = None
    if config.valid_normal:
        valid_pairs = C.load_parallel(
            config.path("valid_normal"),
            config.path("valid_simple") if config.valid_simple else None,
            max_len=config.max_len,
        )

    result = TR.train_run(
        config, pairs, vocab, index=index, valid_pairs=valid_pairs, checkpoint_dir=out_dir
    )
    write_training_report(
        result.losses, result.phases, result.validation,
        out_dir / "training", config=config, term_counts=result.term_counts,
    )
    log.info("checkpoint written to %s", result.checkpoint_path)
    if result.best_path:
        log.info("best validation checkpoint at %s", result.best_path)
    return 0


# ---------------------------------------------------------------------------
# decode
# ---------------------------------------------------------------------------


def cmd_decode(args) -> int:
    config = _resolve_config(args)
    bundle = TR.load_checkpoint(config.path("checkpoint"))
    run_config = bundle.config
    model_config = run_config.model_config(bundle.params["enc_embed"].shape[0])
    if model_config.uses_memory and bundle.memory is None:
        raise ConfigurationError("checkpoint has no rule memory but the mode needs one")

    vocab = Vocabulary.load(Path(args.vocab) if args.vocab else run_config.path("vocab"))
    sentences = C.read_token_lines(Path(args.input))
    index = _load_rule_index(run_config) if model_config.uses_memory else None
    entity_maps = (
        C.load_entity_maps(Path(args.entity_maps), len(sentences)) if args.entity_maps else None
    )

    examples = []
    for tokens in sentences:
        candidate_ids = []
        if index is not None:
            seen = set()
            for match in candidate_rules(tokens, index):
                rid = rule_id(match.rule)
                if rid not in seen:
                    seen.add(rid)
                    candidate_ids.append(rid)
        examples.append((vocab.encode(tokens), candidate_ids))

    outputs = D.decode_corpus(
        examples,
        lambda cids: D.Generator(
            bundle.params, model_config, memory=bundle.memory, candidate_ids=cids
        ),
        beam_size=config.beam_size,
        length_normalize=config.length_normalize,
    )

    out_path = config.path("output")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    restored_lines = []
    placeholder_lines = []
    for i, ids in enumerate(outputs):
        placeholder_lines.append(" ".join(vocab.decode(ids)))
        emap = entity_maps[i] if entity_maps else None
        restored_lines.append(" ".join(vocab.decode(ids, entity_map=emap)))
    out_path.write_text("".join(s + "\n" for s in restored_lines), encoding="utf-8")
    if entity_maps:
        anon_path = out_path.with_suffix(out_path.suffix + ".placeholders")
        anon_path.write_text("".join(s + "\n" for s in placeholder_lines), encoding="utf-8")
    log.info("decoded %d sentences to %s", len(outputs), out_path)
    return 0


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def cmd_evaluate(args) -> int:
    config = _resolve_config(args)
    sources = C.read_token_lines(Path(args.source))
    references = [C.read_token_lines(Path(p)) for p in args.refs]
    for p, ref in zip(args.refs, references):
        if len(ref) != len(sources):
            raise C.AlignmentError(f"{p} has {len(ref)} lines, expected {len(sources)}")
    refs_per_sentence = [[ref[i] for ref in references] for i in range(len(sources))]

    index = _load_rule_index(config)
    if index is None:
        raise ConfigurationError("evaluate requires a rulebase path for rule utilization")

    reports = []
    for spec_item in args.systems:
        name, _, path = spec_item.partition("=")
        if not path:
            name, path = Path(spec_item).stem, spec_item
        outputs = C.read_token_lines(Path(path))
        if len(outputs) != len(sources):
            raise C.AlignmentError(f"{path} has {len(outputs)} lines, expected {len(sources)}")
        reports.append(evaluate_corpus(name, sources, outputs, refs_per_sentence, index))

    paths = write_eval_reports(reports, Path(args.out), config=config)
    with open(paths["txt"], encoding="utf-8") as fh:
        sys.stdout.write(fh.read())
    return 0


# ---------------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------------


def cmd_ablate(args) -> int:
    config = _resolve_config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    layer_grid = [int(v) for v in args.layer_grid.split(",")]
    head_grid = [int(v) for v in args.head_grid.split(",")]

    pairs = C.load_parallel(
        config.path("train_normal"), config.path("train_simple"), max_len=config.max_len
    )
    vocab = (
        Vocabulary.load(config.path("vocab"))
        if config.vocab
        else Vocabulary.build(pairs, min_count=config.min_count)
    )
    index = _load_rule_index(config)
    if config.valid_normal:
        eval_pairs = C.load_parallel(
            config.path("valid_normal"),
            config.path("valid_simple") if config.valid_simple else None,
            max_len=config.max_len,
        )
    else:
        eval_pairs = pairs

    cells = []
    for layers in layer_grid:
        for heads in head_grid:
            cell_config = dataclasses.replace(
                config, layers=layers, heads=heads,
                memory_query_layer=min(config.memory_query_layer, layers),
            )
            result = TR.train_run(cell_config, pairs, vocab, index=index)
            model_config = cell_config.model_config(len(vocab))
            eval_examples = TR.prepare_examples(eval_pairs, vocab, index)
            _, triples = TR.validation_sari(
                eval_examples, eval_pairs, result.params, model_config, result.memory,
                beam_size=cell_config.beam_size, vocab=vocab,
            )
            from .metrics import fkgl, sari_corpus

            sari = sari_corpus(triples)
            readability = fkgl([t[1] for t in triples if t[1]] or [["."]])
            cells.append(
                {
                    "layers": layers, "heads": heads,
                    "fkgl": readability.fkgl, "wlen": readability.wlen, "slen": readability.slen,
                    "sari": sari.sari, "add": sari.f_add, "delete": sari.f_delete, "keep": sari.f_keep,
                }
            )
            log.info("ablation cell L%dH%d SARI %.2f", layers, heads, sari.sari)

    write_ablation_report(cells, out_dir / "ablation", config=config)
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = argparse.ArgumentParser(prog="plainer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="anonymize entities, build the vocabulary")
    _add_config_flags(p)
    p.add_argument("--normal-entities", help="entity sidecar TSV for the normal side")
    p.add_argument("--simple-entities", help="entity sidecar TSV for the simple side")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a model in the configured mode")
    _add_config_flags(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", help="simplify sentences with a trained checkpoint")
    _add_config_flags(p)
    p.add_argument("--input", required=True, help="normal sentences, one per line")
    p.add_argument("--vocab", help="vocabulary TSV (defaults to the checkpoint's)")
    p.add_argument("--entity-maps", help="entity map TSV for surface restoration")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("evaluate", help="score system outputs against references")
    _add_config_flags(p)
    p.add_argument("--source", required=True)
    p.add_argument("--refs", nargs="+", required=True)
    p.add_argument("--out", required=True, help="report stem; writes .tsv/.txt/.png")
    p.add_argument("systems", nargs="+", help="system outputs as name=path (or just path)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="layer/head grid sweep with a shared seed")
    _add_config_flags(p)
    p.add_argument("--layer-grid", required=True, help="comma-separated layer counts")
    p.add_argument("--head-grid", required=True, help="comma-separated head counts")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_ablate)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, C.CorpusError, TR.TrainingAborted) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
