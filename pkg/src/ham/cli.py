"""Command-line entry point: ``ham {gen,train,eval,attn,gradcheck,baseline,stub}``.

Exit codes: 0 success, 2 usage, 3 numeric failure, 4 I/O.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import NAMES as BASELINES
from .baselines import SimilarityBaseline, random_table, train_treelstm_baseline
from .datagen import SynthConfig, config_json, generate, metadata_jsonl, problems_jsonl, split
from .encoder import build_vocabulary, load_vectors
from .errors import ConfigError, GenerationError
from .memory import ROOT
from .training import (
    StubModel,
    TrainConfig,
    evaluate,
    load_checkpoint,
    problem_words,
    random_gradcheck,
    save_checkpoint,
    train,
)
from .treebank import read_jsonl

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("ham")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _load_problems(path: Path):
    problems = read_jsonl(path)
    if not problems:
        raise UsageError(f"{path}: no problems")
    return problems


@dataclass
class RunManifest:
    """Everything needed to rerun a training job; written before the first update."""

    config: dict
    seed: int
    data: dict[str, str]  # path -> sha256
    versions: dict[str, str]
    outputs: dict[str, str] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def versions() -> dict[str, str]:
    return {"ham": __version__, "numpy": np.__version__, "python": platform.python_version()}


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args, wd: Path) -> int:
    cfg = SynthConfig(
        task=args.task, n=args.n, k=args.k, answers=args.answers, seed=args.seed,
        vocab_size=args.vocab_size, distractors=args.distractors,
        story_length=args.story_length, tree=args.tree,
        sentence_length=args.sentence_length, token_dropout=args.token_dropout,
    )
    try:
        ratios = [float(x) for x in args.split.split(",")]
    except ValueError:
        raise UsageError(f"--split expects comma-separated fractions, got {args.split!r}") from None
    if len(ratios) != 3:
        raise UsageError("--split needs three fractions (train,dev,test)")
    gen = generate(cfg)
    parts = split(gen.problems, ratios, seed=args.seed)
    out = wd / args.out
    sidecar = {"config": config_json(cfg), "split": ratios, "files": {}}
    for name, part in zip(("train", "dev", "test"), parts):
        path = out / f"{name}.jsonl"
        _write(path, problems_jsonl(part))
        sidecar["files"][path.name] = {"problems": len(part), "sha256": sha256_file(path)}
    meta = out / "metadata.jsonl"
    _write(meta, metadata_jsonl(gen.metadata))
    sidecar["files"][meta.name] = {"problems": len(gen.metadata), "sha256": sha256_file(meta)}
    _write(out / "gen.json", json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    counts = ", ".join(f"{n}={v['problems']}" for n, v in sidecar["files"].items())
    print(f"wrote {counts} to {out}")
    return EXIT_OK


TRAIN_FLAGS = {
    # flag dest -> TrainConfig field
    "hops": "hops", "level": "level", "dim": "dim", "embedding_dim": "embedding_dim",
    "lr": "lr", "epochs": "epochs", "seed": "seed", "patience": "patience",
    "batch_size": "batch_size", "clip": "clip", "workers": "workers", "vectors": "vectors",
    "attention": "attention", "tie_encoders": "tie_encoders", "per_hop_memory": "per_hop_memory",
    "train_embeddings": "train_embeddings", "init_scale": "init_scale", "forget_bias": "forget_bias",
}


def resolve_config(args, wd: Path) -> TrainConfig:
    """Defaults, then the ``--config`` JSON file, then explicit flags."""
    merged = TrainConfig().to_json()
    if args.config:
        with open(wd / args.config, encoding="utf-8") as fh:
            from_file = json.load(fh)
        if not isinstance(from_file, dict):
            raise ConfigError("config file must hold a JSON object")
        merged.update(TrainConfig.from_json({**merged, **from_file}).to_json())
    for dest, key in TRAIN_FLAGS.items():
        v = getattr(args, dest, None)
        if v is not None:
            merged[key] = v
    if getattr(args, "train", None):
        merged["train_path"] = args.train
    if getattr(args, "dev", None):
        merged["dev_path"] = args.dev
    if merged.get("vectors"):
        merged["vectors"] = str(wd / merged["vectors"])
    return TrainConfig.from_json(merged)


def cmd_train(args, wd: Path) -> int:
    cfg = resolve_config(args, wd)
    if not cfg.train_path or not cfg.dev_path:
        raise UsageError("train needs --train and --dev (flags or config file)")
    train_path, dev_path = wd / cfg.train_path, wd / cfg.dev_path
    train_set, dev_set = _load_problems(train_path), _load_problems(dev_path)
    out = wd / args.out
    outputs = {k: str(out / v) for k, v in
               (("manifest", "manifest.json"), ("checkpoint", "checkpoint.json"), ("metrics", "metrics.csv"))}
    data = {str(train_path): sha256_file(train_path), str(dev_path): sha256_file(dev_path)}
    if cfg.vectors:
        data[cfg.vectors] = sha256_file(cfg.vectors)
    manifest = RunManifest(cfg.to_json(), cfg.seed, data, versions(), outputs)
    _write(Path(outputs["manifest"]), manifest.to_json())
    result = train(cfg, train_set, dev_set)
    save_checkpoint(outputs["checkpoint"], result.model, {"best_epoch": result.best_epoch})
    _write(Path(outputs["metrics"]), result.metrics_csv())
    best = result.metrics[result.best_epoch - 1].dev_accuracy if result.metrics else float("nan")
    print(f"best epoch {result.best_epoch} dev accuracy {best:.4f}; checkpoint {outputs['checkpoint']}")
    return EXIT_OK


def _report(report, n, name, args, wd):
    print(json.dumps({"model": name, "problems": n, "accuracy": report.accuracy}))
    if args.predictions:
        _write(wd / args.predictions, report.jsonl())


def cmd_eval(args, wd: Path) -> int:
    model = load_checkpoint(wd / args.checkpoint)
    data = _load_problems(wd / args.data)
    report = evaluate(model, data)
    _report(report, len(data), str(args.checkpoint), args, wd)
    return EXIT_OK


def cmd_stub(args, wd: Path) -> int:
    save_checkpoint(wd / args.out, StubModel(args.kind, args.guess, args.seed))
    return EXIT_OK


def render_attention(trace, problem, k: int) -> str:
    """Plain-text view of the top-``k`` memories per hop.

    Each memory prints its whole sentence with ``~`` under the span and ``^``
    under the head word.
    """
    lines = []
    for h, block in enumerate(trace.to_json(k)["hops"], start=1):
        lines.append(f"hop {h}")
        for rank, item in enumerate(block["top"], start=1):
            tokens = problem.story[item["sentence"]].tokens
            span = set(item["span"])
            marks = []
            for j, tok in enumerate(tokens):
                ch = "^" if j == item["head"] else ("~" if j in span else " ")
                marks.append(ch * len(tok))
            where = "sentence" if item["node"] == ROOT else f"node {item['node']}"
            lines.append(f"  {rank}. {item['weight']:.4f}  s{item['sentence']} {where}")
            lines.append("     " + " ".join(tokens))
            lines.append("     " + " ".join(marks).rstrip())
    return "\n".join(lines) + "\n"


def cmd_attn(args, wd: Path) -> int:
    model = load_checkpoint(wd / args.checkpoint)
    if isinstance(model, StubModel) or not model.config.attention:
        raise UsageError("checkpoint has no attention module")
    data = _load_problems(wd / args.data)
    matches = [p for p in data if p.id == args.id]
    if not matches:
        raise UsageError(f"no problem with id {args.id!r} in {args.data}")
    problem = matches[0]
    trace = model.attention(problem)
    doc = {"id": problem.id, "level": model.config.level, **trace.to_json(args.k)}
    if args.json:
        _write(wd / args.json, json.dumps(doc, indent=2) + "\n")
    if args.format == "json":
        print(json.dumps(doc, indent=2))
    else:
        sys.stdout.write(render_attention(trace, problem, args.k))
    return EXIT_OK


def cmd_gradcheck(args, wd: Path) -> int:
    reports = random_gradcheck(args.models, seed=args.seed, tolerance=args.tolerance, max_dim=args.max_dim)
    worst = max(r.max_error for _, r in reports)
    failed = [(d, r) for d, r in reports if not r.passed]
    for d, r in reports:
        if args.verbose or not r.passed:
            print(f"{d}: {r.summary()}")
    status = "PASS" if not failed else "FAIL"
    print(f"{status} models={len(reports)} failed={len(failed)} max_rel_err={worst:.3e} tolerance={args.tolerance:g}")
    return EXIT_OK if not failed else EXIT_NUMERIC


def cmd_baseline(args, wd: Path) -> int:
    data = _load_problems(wd / args.data)
    if args.name == "treelstm":
        if args.checkpoint:
            model = load_checkpoint(wd / args.checkpoint)
            if isinstance(model, StubModel) or model.config.attention:
                raise UsageError("treelstm baseline needs a checkpoint trained without attention")
        else:
            if not args.train or not args.dev:
                raise UsageError("treelstm baseline needs --checkpoint, or --train and --dev")
            cfg = TrainConfig(dim=args.dim, lr=args.lr, epochs=args.epochs, seed=args.seed)
            model = train_treelstm_baseline(cfg, _load_problems(wd / args.train),
                                            _load_problems(wd / args.dev)).model
    else:
        if args.vectors:
            table = load_vectors(wd / args.vectors)
        else:
            table = random_table(build_vocabulary(problem_words(data)), args.dim, args.seed)
        model = SimilarityBaseline(args.name, table, args.window)
    report = evaluate(model, data, tag=args.name)
    _report(report, len(data), args.name, args, wd)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _hops(text):
    v = int(text)
    if not 1 <= v <= 3:
        raise argparse.ArgumentTypeError(f"hops must be 1, 2 or 3 (got {v})")
    return v


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _length_range(text):
    try:
        lo, hi = (int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected min,max integers, got {text!r}") from None
    return lo, hi


def _nonneg_float(text):
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative number, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ham", description=__doc__.splitlines()[0])
    p.add_argument("--workdir", default=".", help="base directory for every relative path")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--task", choices=("locate", "two-hop"), default="locate")
    g.add_argument("--n", type=_positive_int, default=200)
    g.add_argument("--k", type=int, default=4)
    g.add_argument("--answers", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--vocab-size", type=_positive_int, default=60)
    g.add_argument("--distractors", type=int, default=0)
    g.add_argument("--story-length", type=int)
    g.add_argument("--tree", choices=("chain", "random"), default="chain")
    g.add_argument("--sentence-length", type=_length_range, default=(3, 3), help="min,max tokens per story sentence")
    g.add_argument("--token-dropout", type=float, default=0.0)
    g.add_argument("--split", default="0.8,0.1,0.1", help="train,dev,test fractions")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--train")
    t.add_argument("--dev")
    t.add_argument("--config", help="JSON file of training settings")
    t.add_argument("--out", default="run")
    t.add_argument("--hops", type=_hops)
    t.add_argument("--level", choices=("phrase", "sentence"))
    t.add_argument("--dim", type=_positive_int)
    t.add_argument("--embedding-dim", type=_positive_int)
    t.add_argument("--lr", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--patience", type=_positive_int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--clip", type=float)
    t.add_argument("--workers", type=_positive_int)
    t.add_argument("--vectors")
    t.add_argument("--init-scale", type=float)
    t.add_argument("--forget-bias", type=float)
    t.add_argument("--no-attention", dest="attention", action="store_const", const=False)
    t.add_argument("--untied", dest="tie_encoders", action="store_const", const=False,
                   help="separate encoders for story, question and choices")
    t.add_argument("--per-hop-memory", action="store_const", const=True)
    t.add_argument("--freeze-embeddings", dest="train_embeddings", action="store_const", const=False)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="accuracy of a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--predictions", help="write per-problem predictions as JSON lines")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("stub", help="write a non-learning reference checkpoint")
    s.add_argument("--kind", choices=StubModel.KINDS, required=True)
    s.add_argument("--guess", type=int, default=0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_stub)

    a = sub.add_parser("attn", help="show the top attention weights per hop")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--id", required=True, help="problem id")
    a.add_argument("--k", type=_positive_int, default=3)
    a.add_argument("--format", choices=("text", "json"), default="text")
    a.add_argument("--json", help="also write the JSON dump here")
    a.set_defaults(func=cmd_attn)

    c = sub.add_parser("gradcheck", help="finite-difference check on random small models")
    c.add_argument("--models", type=_positive_int, default=50)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--tolerance", type=_nonneg_float, default=1e-5)
    c.add_argument("--max-dim", type=_positive_int, default=6)
    c.set_defaults(func=cmd_gradcheck)

    b = sub.add_parser("baseline", help="evaluate a reference baseline")
    b.add_argument("name", choices=BASELINES)
    b.add_argument("--data", required=True)
    b.add_argument("--window", type=_positive_int, default=5)
    b.add_argument("--vectors", help="word vectors; random Gaussian vectors otherwise")
    b.add_argument("--dim", type=_positive_int, default=50)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--checkpoint", help="attention-free checkpoint (treelstm)")
    b.add_argument("--train")
    b.add_argument("--dev")
    b.add_argument("--lr", type=float, default=0.002)
    b.add_argument("--epochs", type=int, default=100)
    b.add_argument("--predictions")
    b.set_defaults(func=cmd_baseline)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    wd = Path(args.workdir)
    try:
        return args.func(args, wd)
    except (UsageError, ConfigError, GenerationError) as e:
        print(f"ham {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ArithmeticError as e:
        print(f"ham {args.command}: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as e:  # unreadable or malformed inputs
        print(f"ham {args.command}: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
