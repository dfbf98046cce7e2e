""" Command-line entry point: prepare, train, generate, eval and attn-dump."""
import argparse
import asyncio
import csv
import io
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from pydantic import ValidationError

from dmlm.core.config import settings
from dmlm.core.errors import ConfigError, DMLMError, EmptySamples, IoError
from dmlm.core.logging_config import setup_logging
from dmlm.crud.checkpoint_store import load_checkpoint, save_checkpoint
from dmlm.crud.dataset_store import load_splits, serialize_dataset
from dmlm.crud.files import write_text
from dmlm.models.base import build_model, count_parameters, parameter_groups
from dmlm.models.mixture import attention_matrix
from dmlm.schemas.corpus import BOS, UNK, Vocab
from dmlm.schemas.model_config import RecurrentConfig, TransformerConfig
from dmlm.schemas.report import GenerationReport, GenerationSettings
from dmlm.schemas.run_config import RunConfig
from dmlm.schemas.training import TrainConfig
from dmlm.services import corpus_service, generation_service, metrics_service
from dmlm.services.training_service import run_training

logger = logging.getLogger(__name__)


# --- helpers ---

def _bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {value!r}")


def _csv_list(cast):
    def parse(value: str):
        try:
            return [cast(x.strip()) for x in value.split(",") if x.strip()]
        except ValueError as e:
            raise argparse.ArgumentTypeError(str(e)) from e
    return parse


def _require(cfg: RunConfig, *names: str) -> None:
    missing = [f"--{n.replace('_', '-')}" for n in names if not getattr(cfg, n)]
    if missing:
        raise ConfigError(f"{cfg.command} needs {', '.join(missing)}")


def _write_json(path: Path, payload) -> None:
    write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def encode_words(vocab: Vocab, words: Sequence[str]) -> List[int]:
    """
    Encode surfaces. A word missing from the vocabulary falls back to its
    lowercased form, then to <unk>; either substitution is logged as a warning.
    """
    ids = []
    for word in words:
        token_id = vocab.encode(word)
        if token_id == UNK:
            token_id = vocab.encode(word.lower())
            if token_id == UNK:
                logger.warning(f"Token {word!r} not in vocabulary; encoded as <unk>")
            else:
                logger.warning(f"Token {word!r} not in vocabulary; encoded as {word.lower()!r}")
        ids.append(token_id)
    return ids


def _read_lines(path: Path) -> List[List[str]]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise IoError(f"Cannot read {path}: {e}") from e
    return [line.split() for line in text.splitlines() if line.strip()]


def _load_model(cfg: RunConfig):
    checkpoint = load_checkpoint(cfg.ckpt)
    if not checkpoint.vocab:
        raise ConfigError(f"{cfg.ckpt} carries no vocabulary")
    model = checkpoint.build(seed=cfg.seed).eval()
    return checkpoint, model, Vocab(surface_of=tuple(checkpoint.vocab))


def _eval_split(splits: Dict[str, list]) -> list:
    for name in ("test", "valid", "train"):
        if splits.get(name):
            return splits[name]
    return []


# --- commands ---

def cmd_prepare(cfg: RunConfig) -> int:
    _require(cfg, "conllu", "out")
    split_sentences = {"train": [s for p in cfg.conllu for s in corpus_service.read_conllu_file(p)]}
    if cfg.valid_conllu:
        split_sentences["valid"] = [s for p in cfg.valid_conllu for s in corpus_service.read_conllu_file(p)]
    if cfg.test_conllu:
        split_sentences["test"] = [s for p in cfg.test_conllu for s in corpus_service.read_conllu_file(p)]

    prepared = asyncio.run(corpus_service.prepare_corpus(
        split_sentences, min_count=cfg.min_count, max_size=cfg.max_size,
        max_len=cfg.max_len or settings.MAX_SENTENCE_LENGTH, lowercase=cfg.lowercase))
    serialize_dataset(prepared.sequences, prepared.vocab, cfg.out, config=prepared.config,
                      split_sizes=prepared.stats.splits)
    stats_path = Path(f"{cfg.out}.stats.json")
    _write_json(stats_path, prepared.stats.model_dump())
    logger.info(f"Wrote dataset {cfg.out} and stats {stats_path}")
    return 0


def _model_config(cfg: RunConfig, vocab_size: int):
    overrides = {k: v for k, v in cfg.model_dump().items() if v is not None and k in (
        "embed_dim", "hidden_dim", "model_dim", "num_heads", "num_layers", "ffn_dim", "dropout_rate")}
    if cfg.backbone == "transformer":
        fields = TransformerConfig.model_fields
        return TransformerConfig(vocab_size=vocab_size, **{k: v for k, v in overrides.items() if k in fields})
    fields = RecurrentConfig.model_fields
    return RecurrentConfig(vocab_size=vocab_size, **{k: v for k, v in overrides.items() if k in fields})


def _train_config(cfg: RunConfig) -> TrainConfig:
    values = {"phase": cfg.train_phase, "seed": cfg.seed, "context_window": cfg.context_window,
              "allow_from_scratch": cfg.allow_from_scratch}
    for field, key in (("lr", "lr"), ("weight_decay", "weight_decay"), ("grad_clip_norm", "grad_clip_norm"),
                       ("batch_size", "batch_size"), ("max_epochs", "max_epochs"), ("patience", "early_stop_patience")):
        value = getattr(cfg, field)
        if value is not None:
            values[key] = value
    return TrainConfig(**values)


def cmd_train(cfg: RunConfig) -> int:
    _require(cfg, "data", "out")
    splits, vocab, _ = load_splits(cfg.data)
    train_seqs = splits.get("train", [])
    valid_seqs = splits.get("valid") or []
    if not valid_seqs:
        logger.warning("Dataset has no validation split; selecting checkpoints on the training split")

    init_phase = None
    if cfg.init:
        checkpoint = load_checkpoint(cfg.init)
        model = checkpoint.build(seed=cfg.seed)
        init_phase = checkpoint.phase
        logger.info(f"Initialized from {cfg.init} (phase={init_phase}, epoch={checkpoint.epoch})")
    else:
        model = build_model(_model_config(cfg, vocab.size), flavor=cfg.flavor, seed=cfg.seed)
    logger.info(f"Parameters: {count_parameters(model)} total, by group {parameter_groups(model)}")

    result = run_training(_train_config(cfg), train_seqs, valid_seqs, model, init_phase=init_phase,
                          log_path=cfg.log or Path(f"{cfg.out}.log.jsonl"), vocab=list(vocab.surface_of))
    save_checkpoint(result.checkpoint, cfg.out)
    return 0


def _sample_texts(vocab: Vocab, samples: List[List[int]]) -> List[str]:
    return [" ".join(vocab.decode_all(s)) for s in samples]


def cmd_generate(cfg: RunConfig) -> int:
    _require(cfg, "ckpt", "out")
    _, model, vocab = _load_model(cfg)
    prompt_words = _read_lines(cfg.prompt_file) if cfg.prompt_file else []
    prompts = [encode_words(vocab, words) for words in prompt_words] or None
    max_len = cfg.max_len or settings.MAX_SENTENCE_LENGTH
    out = Path(cfg.out)

    sweep = cfg.p_sweep or [cfg.p]
    for p in sweep:
        samples = asyncio.run(generation_service.generate_samples(
            model, cfg.n_samples, p, max_len, cfg.seed, prompts=prompts, window=cfg.context_window))
        texts = _sample_texts(vocab, samples)
        target = out.with_name(f"{out.stem}.p{p:g}{out.suffix}") if cfg.p_sweep else out
        write_text(target, "".join(t + "\n" for t in texts))
        report = GenerationReport(
            samples=[t.split() for t in texts],
            settings=GenerationSettings(p=p, max_len=max_len, seed=cfg.seed,
                                        prompt=[" ".join(w) for w in prompt_words] or None,
                                        context_window=cfg.context_window))
        _write_json(target.with_suffix(".json"), report.model_dump())
        logger.info(f"Wrote {len(texts)} samples to {target}")
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    _require(cfg, "out")
    metrics: Dict[str, float] = {}
    samples = _read_lines(cfg.samples) if cfg.samples else None
    if cfg.samples is not None and not samples:
        raise EmptySamples(f"{cfg.samples} contains no samples")
    text_wanted = [m for m in cfg.metrics if m in ("bleu", "distinct", "self-bleu")]
    if text_wanted:
        if samples is None:
            raise ConfigError(f"metrics {text_wanted} need --samples")
        refs = _read_lines(cfg.refs) if cfg.refs else None
        metrics.update(metrics_service.text_metrics(
            samples, text_wanted, refs=refs, bleu_orders=cfg.bleu_orders,
            distinct_orders=cfg.distinct_orders, self_bleu_orders=cfg.self_bleu_orders))

    model_wanted = [m for m in cfg.metrics if m in ("ppl", "lm", "rlm")]
    if model_wanted:
        _require(cfg, "ckpt")
        checkpoint, model, vocab = _load_model(cfg)
        if "ppl" in model_wanted or "rlm" in model_wanted:
            _require(cfg, "data")
            splits, _, _ = load_splits(cfg.data)
            heldout = _eval_split(splits)
        if "ppl" in model_wanted:
            metrics["ppl"] = metrics_service.perplexity(model, heldout, cfg.context_window)
        if "lm" in model_wanted or "rlm" in model_wanted:
            if samples is None:
                raise ConfigError("lm and rlm scores need --samples")
            sample_ids = [encode_words(vocab, s) for s in samples]
            if "lm" in model_wanted:
                metrics["lm"] = metrics_service.lm_score(model, sample_ids, cfg.context_window)
            if "rlm" in model_wanted:
                metrics["rlm"] = metrics_service.rlm_score(
                    sample_ids, heldout, model.config, train_config=_train_config(cfg).model_copy(
                        update={"phase": "baseline"}), min_samples=cfg.rlm_min_samples, seed=cfg.seed)

    report = GenerationReport(samples=samples or [], metrics=metrics)
    _write_json(Path(cfg.out), report.model_dump())
    logger.info(f"Evaluation report: {metrics}")
    return 0


def cmd_attn_dump(cfg: RunConfig) -> int:
    _require(cfg, "ckpt", "sentence", "out")
    _, model, vocab = _load_model(cfg)
    words = cfg.sentence.split()
    if not words:
        raise ConfigError("--sentence is empty")
    context = [BOS] + encode_words(vocab, words[:-1])
    weights = attention_matrix(model, context, cfg.context_window)

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["token", vocab.decode(BOS)] + words[:-1])
    for t, predicted in enumerate(words):
        writer.writerow([predicted] + [f"{w:.6f}" for w in weights[t]])
    write_text(cfg.out, buffer.getvalue())
    logger.info(f"Wrote {len(words)}x{len(words)} attention matrix to {cfg.out}")
    return 0


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "generate": cmd_generate,
    "eval": cmd_eval,
    "attn-dump": cmd_attn_dump,
}


# --- argument parsing ---

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dmlm", description="Dependency-based mixture language model workbench")
    parser.add_argument("--log-level", default=None, help="Overrides LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", type=Path, help="JSON file of defaults; flags win")
        p.add_argument("--seed", type=int)
        p.add_argument("--context-window", type=int, help="L; 0 means unbounded")
        return p

    prep = command("prepare", "CoNLL-U treebank -> dataset file + stats JSON")
    prep.add_argument("--conllu", type=Path, nargs="+")
    prep.add_argument("--valid-conllu", type=Path, nargs="+")
    prep.add_argument("--test-conllu", type=Path, nargs="+")
    prep.add_argument("--out", type=Path)
    prep.add_argument("--min-count", type=int)
    prep.add_argument("--max-size", type=int)
    prep.add_argument("--max-len", type=int)
    prep.add_argument("--lowercase", type=_bool)

    train = command("train", "train one phase and write the best checkpoint")
    train.add_argument("--data", type=Path)
    train.add_argument("--backbone", choices=["recurrent", "transformer"])
    train.add_argument("--flavor", choices=["baseline", "dmlm"])
    train.add_argument("--phase", choices=["dep", "finetune", "baseline"])
    train.add_argument("--init", type=Path)
    train.add_argument("--out", type=Path)
    train.add_argument("--log", type=Path)
    train.add_argument("--allow-from-scratch", action="store_true")
    for flag, cast in (("--embed-dim", int), ("--hidden-dim", int), ("--model-dim", int), ("--num-heads", int),
                       ("--num-layers", int), ("--ffn-dim", int), ("--dropout-rate", float), ("--lr", float),
                       ("--weight-decay", float), ("--grad-clip-norm", float), ("--batch-size", int),
                       ("--max-epochs", int), ("--patience", int)):
        train.add_argument(flag, type=cast)

    gen = command("generate", "nucleus-sample from a checkpoint")
    gen.add_argument("--ckpt", type=Path)
    gen.add_argument("--prompt-file", type=Path,
                     help="one whitespace-tokenized prompt per line; words missing from the vocabulary are "
                          "lowercased, then mapped to <unk>, with a warning for each")
    gen.add_argument("--p", type=float)
    gen.add_argument("--p-sweep", type=_csv_list(float), help="e.g. 0.3,0.4,0.5; one file per p")
    gen.add_argument("--max-len", type=int)
    gen.add_argument("--n-samples", type=int)
    gen.add_argument("--out", type=Path)

    ev = command("eval", "compute metrics into a JSON report")
    ev.add_argument("--ckpt", type=Path)
    ev.add_argument("--data", type=Path)
    ev.add_argument("--metrics", type=_csv_list(str))
    ev.add_argument("--samples", type=Path)
    ev.add_argument("--refs", type=Path)
    ev.add_argument("--out", type=Path)
    ev.add_argument("--bleu-orders", type=_csv_list(int))
    ev.add_argument("--distinct-orders", type=_csv_list(int))
    ev.add_argument("--self-bleu-orders", type=_csv_list(int))
    ev.add_argument("--rlm-min-samples", type=int)
    for flag, cast in (("--lr", float), ("--batch-size", int), ("--max-epochs", int), ("--patience", int)):
        ev.add_argument(flag, type=cast)

    attn = command("attn-dump", "teacher-force a sentence and export mixing weights as CSV")
    attn.add_argument("--ckpt", type=Path)
    attn.add_argument("--sentence")
    attn.add_argument("--out", type=Path)
    return parser


def load_run_config(args: argparse.Namespace) -> RunConfig:
    """JSON config (if any) overridden by explicitly given flags."""
    flags = {k: v for k, v in vars(args).items() if k != "log_level"}
    merged = {}
    config_path = flags.get("config")
    if config_path is not None:
        if not Path(config_path).exists():
            raise IoError(f"Config file not found: {config_path}")
        try:
            merged.update(json.loads(Path(config_path).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot read config {config_path}: {e}") from e
    merged.update(flags)
    try:
        cfg = RunConfig(**merged)
    except ValidationError as e:
        raise ConfigError(f"Invalid run configuration: {e}") from e
    missing = cfg.missing_inputs()
    if missing:
        raise IoError(f"Input path not found: {', '.join(str(p) for p in missing)}")
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)
    try:
        cfg = load_run_config(args)
        logger.info(f"Running {cfg.command}")
        return COMMANDS[cfg.command](cfg)
    except DMLMError as exc:
        if exc.exit_code == 1:
            logger.error(f"{type(exc).__name__}: {exc}", exc_info=True)
        else:
            logger.warning(f"{type(exc).__name__}: {exc}")
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:
        logger.error(f"Unexpected failure: {exc}", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
