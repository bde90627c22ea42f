"""Command-line entry point wiring the modules into the full workflow:
synth -> tokenizer-train -> pretrain -> train -> eval / explain / baseline.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import data as data_mod
from . import interpret as interpret_mod
from . import training as train_mod
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DataError,
    NumericError,
    SeqcoderError,
)
from .model import Model, ModelConfig
from .tokenizer import (
    Preprocessor,
    bpe_train,
    load_tokenizer,
    preprocess,
    save_tokenizer,
    tokenizer_hash,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(1)


def _default_seed() -> int:
    return int(os.environ.get("SEQCODER_SEED", "0"))


def _load_model_config(path, **overrides) -> ModelConfig:
    fields = {}
    if path:
        fields.update(json.loads(Path(path).read_text()))
    fields.update({k: v for k, v in overrides.items() if v is not None})
    return ModelConfig(**fields)


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _log_writer(path):
    fh = open(path, "a", encoding="utf-8")

    def log(entry: dict) -> None:
        fh.write(json.dumps(entry, sort_keys=True) + "\n")
        fh.flush()

    return log


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="run seed (default: $SEQCODER_SEED or 0)")
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> _Parser:
    parser = _Parser(prog="seqcoder")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic two-hospital benchmark")
    _add_common(p)
    p.add_argument("--config", help="SynthConfig JSON file")

    p = sub.add_parser("tokenizer-train", help="train a BPE tokenizer")
    _add_common(p)
    p.add_argument("--data", action="append", required=True, help="JSONL corpus (repeatable)")
    p.add_argument("--vocab-size", type=int, default=2000)

    p = sub.add_parser("pretrain", help="language-model pretraining on unlabeled notes")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--model-config", help="ModelConfig JSON file")
    p.add_argument("--encoder", choices=["transformer", "lstm"])
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--warmup", type=int, default=None)
    p.add_argument("--lr-scale", type=float, default=None)

    p = sub.add_parser("train", help="train the multi-label classifier")
    _add_common(p)
    p.add_argument("--data", required=True, help="labeled JSONL corpus")
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--regime", required=True,
                   choices=["base", "pretrain", "auxiliary", "auxiliary+pretrain"])
    p.add_argument("--pretrained", help="pretraining checkpoint for +Pretrain regimes")
    p.add_argument("--model-config", help="ModelConfig JSON file")
    p.add_argument("--encoder", choices=["transformer", "lstm"])
    p.add_argument("--lambda", dest="lam", type=float, default=0.5)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--warmup", type=int, default=None)
    p.add_argument("--lr-scale", type=float, default=None)

    p = sub.add_parser("eval", help="evaluate a checkpoint on labeled notes")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--top-k", type=int, default=0)

    p = sub.add_parser("explain", help="gradient-times-input keyword extraction")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--dictionary", required=True)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--threshold", type=float, default=0.2)

    p = sub.add_parser("baseline", help="bag-of-words linear baseline")
    _add_common(p)
    p.add_argument("--train-data", required=True)
    p.add_argument("--test-data", required=True)
    p.add_argument("--dictionary", required=True)

    return parser


def _train_config(args, regime="base") -> train_mod.TrainConfig:
    cfg = train_mod.TrainConfig(regime=regime)
    if args.seed is not None:
        cfg.seed = args.seed
    else:
        cfg.seed = _default_seed()
    for attr, name in (("epochs", "epochs"), ("batch_size", "batch_size"),
                       ("warmup", "warmup_steps"), ("lr_scale", "lr_scale")):
        v = getattr(args, attr, None)
        if v is not None:
            setattr(cfg, name, v)
    if hasattr(args, "lam"):
        cfg.lam = args.lam
    return cfg


def _cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.config:
        cfg = data_mod.SynthConfig.from_json(Path(args.config).read_text())
    else:
        cfg = data_mod.SynthConfig(seed=args.seed if args.seed is not None else _default_seed())
    a, b, b_unlabeled = data_mod.synth_generate(cfg)
    data_mod.save_jsonl(a, out / "hospital_a.jsonl")
    data_mod.save_jsonl(b, out / "hospital_b.jsonl")
    data_mod.save_jsonl(b_unlabeled, out / "hospital_b_unlabeled.jsonl")
    (out / "synth_config.json").write_text(cfg.to_json() + "\n")
    terms = sorted(set(cfg.triggers().values()) | set(cfg.abbreviations().values()))
    (out / "dictionary.txt").write_text(
        "# synthetic clinical term dictionary\n" + "\n".join(terms) + "\n"
    )
    return 0


def _cmd_tokenizer_train(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus = []
    for path in args.data:
        for r in data_mod.load_jsonl(path):
            corpus.append(preprocess(r.text))
    bpe = bpe_train(corpus, args.vocab_size)
    save_tokenizer(bpe, out / "tokenizer.txt")
    return 0


def _cmd_pretrain(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bpe = load_tokenizer(args.tokenizer)
    cfg = _load_model_config(getattr(args, "model_config", None), encoder=args.encoder,
                             vocab_size=len(bpe.vocab))
    pre = Preprocessor(max_tokens=cfg.max_tokens)
    records = data_mod.load_jsonl(args.data)
    train, valid, _test = data_mod.split(records, seed=_default_seed())
    tcfg = _train_config(args, regime="base")
    model = Model.init(cfg, seed=tcfg.seed)
    framed_train = train_mod.frame_unlabeled(train, bpe, pre)
    framed_valid = train_mod.frame_unlabeled(valid, bpe, pre)
    log = _log_writer(out / "pretrain_log.jsonl")
    ckpt = train_mod.pretrain_lm(model, bpe, framed_train, framed_valid, tcfg, log=log)
    train_mod.save_checkpoint(ckpt, out / "pretrain.ckpt")
    return 0


def _cmd_train(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bpe = load_tokenizer(args.tokenizer)
    records = data_mod.load_jsonl(args.data)
    labels = data_mod.label_map(records)
    cfg = _load_model_config(getattr(args, "model_config", None), encoder=args.encoder,
                             vocab_size=len(bpe.vocab), n_labels=len(labels))
    pre = Preprocessor(max_tokens=cfg.max_tokens)
    tcfg = _train_config(args, regime=args.regime)
    pretrain_ckpt = None
    if args.regime in ("pretrain", "auxiliary+pretrain"):
        if not args.pretrained:
            raise ConfigError(f"regime '{args.regime}' requires --pretrained")
        pretrain_ckpt = train_mod.load_checkpoint(args.pretrained)
    train, valid, _test = data_mod.split(records, seed=_default_seed())
    framed_train = train_mod.frame_labeled(train, bpe, pre, labels)
    framed_valid = train_mod.frame_labeled(valid, bpe, pre, labels)
    model = Model.init(cfg, seed=tcfg.seed)
    log = _log_writer(out / "train_log.jsonl")
    ckpt = train_mod.train_classifier(
        model, bpe, framed_train, framed_valid, labels, tcfg,
        pretrain_ckpt=pretrain_ckpt, log=log,
    )
    train_mod.save_checkpoint(ckpt, out / "classifier.ckpt")
    return 0


def _cmd_eval(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bpe = load_tokenizer(args.tokenizer)
    ckpt = train_mod.load_checkpoint(args.checkpoint)
    pre = Preprocessor(max_tokens=ckpt.config.max_tokens)
    records = data_mod.load_jsonl(args.data)
    report = train_mod.evaluate(ckpt, bpe, pre, records, top_k=args.top_k)
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "report.txt").write_text(report.to_table() + "\n")
    return 0


def _cmd_explain(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bpe = load_tokenizer(args.tokenizer)
    ckpt = train_mod.load_checkpoint(args.checkpoint)
    if tokenizer_hash(bpe) != ckpt.tokenizer_hash:
        raise CheckpointError("tokenizer hash does not match checkpoint")
    pre = Preprocessor(max_tokens=ckpt.config.max_tokens)
    records = data_mod.load_jsonl(args.data)
    dictionary = interpret_mod.load_dictionary(args.dictionary)
    model = train_mod.model_from_checkpoint(ckpt)
    table = interpret_mod.keyword_table(
        model, bpe, pre, records, ckpt.labels, dictionary,
        top_k=args.top_k, threshold=args.threshold,
    )
    _write_json(out / "keywords.json", {k: [[w, n] for w, n in v] for k, v in table.items()})
    (out / "keywords.txt").write_text(interpret_mod.keyword_table_text(table) + "\n")
    return 0


def _cmd_baseline(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train = data_mod.load_jsonl(args.train_data)
    test = data_mod.load_jsonl(args.test_data)
    dictionary = sorted(interpret_mod.load_dictionary(args.dictionary))
    seed = args.seed if args.seed is not None else _default_seed()
    report = data_mod.bow_baseline(train, test, dictionary, seed=seed)
    (out / "baseline_report.json").write_text(report.to_json() + "\n")
    (out / "baseline_report.txt").write_text(report.to_table() + "\n")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "tokenizer-train": _cmd_tokenizer_train,
    "pretrain": _cmd_pretrain,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "explain": _cmd_explain,
    "baseline": _cmd_baseline,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (DataError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 3
    except (ConfigError, ContractError, SeqcoderError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
