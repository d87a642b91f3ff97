"""Command-line entry point.

Subcommands: pretrain, embed, train, eval, report, ortho. Exit codes:
0 success, 1 validation error, 2 runtime failure. Output directories are
staged in a temp dir and moved on success, so failures never leave
partial outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
import tempfile
from pathlib import Path

from . import composer, report
from . import textdata as td
from .checkpoint import checkpoint_bytes, load_checkpoint
from .composer import WeightPredictor
from .model import FrozenLM, LMConfig, PretrainConfig, pretrain
from .tensor import Tensor
from .train import RunRecord, TrainConfig
from .train import control_eval as _control_eval
from .train import prompted_eval as _prompted_eval
from .train import train as _train

DEFAULT_FIXTURE_SEED = 3
SPLIT_SEED = 0  # dataset split is independent of the run seed


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="promptblend",
        description="Continuous prompts as learned combinations of discrete prompt embeddings.",
    )
    sub = parser.add_subparsers(dest="command")

    def add_data_flags(p):
        p.add_argument("--data", default="fixture",
                       help="dataset path, or 'fixture' for the bundled synthetic set")
        p.add_argument("--fixture-size", type=int, default=1000)
        p.add_argument("--fixture-seed", type=int, default=DEFAULT_FIXTURE_SEED)
        p.add_argument("--val-fraction", type=float, default=0.2)

    def add_common(p):
        p.add_argument("--seed", type=int, default=None,
                       help="run seed; falls back to PROMPTBLEND_SEED, then 0")
        p.add_argument("--basis", default="default",
                       help="basis file path, or 'default' for the built-in prompts")

    p = sub.add_parser("pretrain", help="pretrain and freeze the base model")
    add_data_flags(p)
    add_common(p)
    p.add_argument("--epochs", type=int, default=6)
    p.add_argument("--batch-size", type=int, default=10)
    p.add_argument("--lr", type=float, default=3e-3)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train the weight predictor against a frozen model")
    add_data_flags(p)
    add_common(p)
    p.add_argument("--checkpoint", default=None,
                   help="frozen model checkpoint; omitted means pretrain in-process")
    p.add_argument("--pretrain-epochs", type=int, default=6)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--prompt-length", type=int, default=0,
                   help="padded prompt length; 0 uses the longest basis prompt")
    p.add_argument("--final-init-scale", type=float, default=0.01)
    p.add_argument("--eval-every", type=int, default=0)
    p.add_argument("--top", type=int, default=3)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="control and prompted evaluation from a checkpoint")
    add_data_flags(p)
    add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None)

    p = sub.add_parser("report", help="re-render report files from a saved run record")
    p.add_argument("--record", required=True)
    p.add_argument("--checkpoint", default=None,
                   help="checkpoint for basis embeddings; defaults to the record's sibling")
    p.add_argument("--top", type=int, default=3)
    p.add_argument("--out", required=True)

    p = sub.add_parser("ortho", help="orthogonality report for a prompt basis")
    add_common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--prompt-length", type=int, default=0)
    p.add_argument("--out", default=None)

    p = sub.add_parser("embed", help="embed a basis and summarize it")
    add_common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--prompt-length", type=int, default=0)
    p.add_argument("--out", default=None)

    return parser


def _resolve_seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    return int(os.environ.get("PROMPTBLEND_SEED", "0"))


def _positive(value: int, flag: str) -> int:
    if value < 1:
        raise ValueError(f"{flag} must be at least 1, got {value}")
    return value


def _resolve_examples(args) -> list[td.QAExample]:
    if args.data == "fixture":
        _positive(args.fixture_size, "--fixture-size")
        return td.make_fixture(args.fixture_seed, args.fixture_size)
    return td.load_dataset(args.data)


def _resolve_basis_prompts(args) -> list[str]:
    if args.basis == "default":
        return list(composer.DEFAULT_BASIS_PROMPTS)
    return composer.load_basis_file(args.basis)


def _write_outputs(out_dir, files: dict) -> None:
    out = Path(out_dir)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".promptblend-", dir=out.parent))
    try:
        for name, content in files.items():
            path = tmp / name
            if isinstance(content, bytes):
                path.write_bytes(content)
            else:
                path.write_text(content, encoding="utf-8")
        out.mkdir(exist_ok=True)
        for name in files:
            os.replace(tmp / name, out / name)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def _pretrain_lm(train_set, basis_prompts, seed, epochs, batch_size=10, lr=3e-3) -> FrozenLM:
    corpus = [(td.format_input(ex), td.format_target(ex)) for ex in train_set]
    config = PretrainConfig(epochs=epochs, batch_size=batch_size, lr=lr,
                            model=LMConfig(), extra_vocab_texts=list(basis_prompts))
    return pretrain(corpus, config, seed)


def _fresh_lm(basis_prompts, seed) -> FrozenLM:
    # unpretrained stand-in: enough for embedding-only workflows
    vocab = td.Vocab.build(basis_prompts)
    lm = FrozenLM(vocab, LMConfig(), seed)
    lm.set_frozen(True)
    return lm


def _bundle_bytes(lm: FrozenLM, predictor: WeightPredictor | None,
                  basis_prompts: list[str] | None, predictor_meta: dict | None) -> bytes:
    tensors, meta = lm.checkpoint_payload()
    if predictor is not None:
        names = ("w1", "b1", "w2", "b2", "w3", "b3")
        for name, p in zip(names, predictor.parameters()):
            tensors[f"predictor.{name}"] = p.data
        meta["predictor"] = dict(predictor_meta or {})
        meta["predictor"]["dropout_p"] = predictor.dropout_p
    if basis_prompts is not None:
        meta["basis_prompts"] = list(basis_prompts)
    return checkpoint_bytes(tensors, meta)


def _load_bundle(path):
    tensors, meta = load_checkpoint(path)
    lm = FrozenLM.from_payload(tensors, meta)
    predictor = None
    if "predictor" in meta:
        p = {name: tensors[f"predictor.{name}"]
             for name in ("w1", "b1", "w2", "b2", "w3", "b3")}
        predictor = WeightPredictor(
            Tensor(p["w1"].copy(), requires_grad=True),
            Tensor(p["b1"].copy(), requires_grad=True),
            Tensor(p["w2"].copy(), requires_grad=True),
            Tensor(p["b2"].copy(), requires_grad=True),
            Tensor(p["w3"].copy(), requires_grad=True),
            Tensor(p["b3"].copy(), requires_grad=True),
            dropout_p=meta["predictor"].get("dropout_p", 0.1),
        )
    return lm, predictor, meta.get("basis_prompts")


def _cmd_pretrain(args) -> int:
    seed = _resolve_seed(args)
    _positive(args.epochs, "--epochs")
    _positive(args.batch_size, "--batch-size")
    examples = _resolve_examples(args)
    train_set, _ = td.train_eval_split(examples, args.val_fraction, SPLIT_SEED)
    basis_prompts = _resolve_basis_prompts(args)
    lm = _pretrain_lm(train_set, basis_prompts, seed, args.epochs, args.batch_size, args.lr)
    _write_outputs(args.out, {"checkpoint.pbld": _bundle_bytes(lm, None, basis_prompts, None)})
    rec = lm.pretrain_record
    print(f"pretrained on {len(train_set)} examples: initial loss "
          f"{rec['initial_loss']:.4f}, final epoch mean {rec['epoch_means'][-1]:.4f}")
    print(f"wrote {Path(args.out) / 'checkpoint.pbld'}")
    return 0


def _cmd_train(args) -> int:
    seed = _resolve_seed(args)
    _positive(args.epochs, "--epochs")
    _positive(args.batch_size, "--batch-size")
    _positive(args.top, "--top")
    examples = _resolve_examples(args)
    train_set, eval_set = td.train_eval_split(examples, args.val_fraction, SPLIT_SEED)
    basis_prompts = _resolve_basis_prompts(args)
    if args.checkpoint:
        lm, _, ck_prompts = _load_bundle(args.checkpoint)
        if not lm.frozen:
            lm.set_frozen(True)
        if ck_prompts and args.basis == "default":
            basis_prompts = ck_prompts
    else:
        _positive(args.pretrain_epochs, "--pretrain-epochs")
        lm = _pretrain_lm(train_set, basis_prompts, seed, args.pretrain_epochs)
    length = args.prompt_length if args.prompt_length > 0 else None
    basis = composer.build_basis(basis_prompts, lm, length)
    predictor = WeightPredictor.create(seed, lm.config.embed_dim, basis.size,
                                       dropout_p=args.dropout,
                                       final_scale=args.final_init_scale)
    config = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                            weight_decay=args.weight_decay, dropout_p=args.dropout,
                            seed=seed, prompt_length=basis.length,
                            eval_every=args.eval_every)
    record = _train(lm, predictor, basis, train_set, eval_set, config)
    bundle = report.render_report(record, basis, n_top=args.top)
    curve = report.render_curve_csv(record)
    pred_meta = {"seed": seed, "final_init_scale": args.final_init_scale}
    files = {
        "curve.csv": curve,
        "report.txt": bundle.text,
        "report.json": bundle.json_text,
        "record.json": record.to_json() + "\n",
        "checkpoint.pbld": _bundle_bytes(lm, predictor, basis_prompts, pred_meta),
    }
    _write_outputs(args.out, files)
    print(f"control eval loss:  {record.control_eval_loss:.4f}")
    print(f"prompted eval loss: {record.prompted_eval_loss:.4f}")
    print(f"wrote {', '.join(sorted(files))} to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    _resolve_seed(args)
    lm, predictor, ck_prompts = _load_bundle(args.checkpoint)
    examples = _resolve_examples(args)
    _, eval_set = td.train_eval_split(examples, args.val_fraction, SPLIT_SEED)
    control = _control_eval(lm, eval_set)
    lines = [f"eval examples: {len(eval_set)}", f"control eval loss:  {control:.4f}"]
    payload = {"eval_examples": len(eval_set), "control_eval_loss": control}
    if predictor is not None:
        prompts = ck_prompts if args.basis == "default" and ck_prompts \
            else _resolve_basis_prompts(args)
        basis = composer.build_basis(prompts, lm)
        result = _prompted_eval(lm, predictor, basis, eval_set)
        correct = 0
        for ex, wv in zip(eval_set, result.weights):
            prompt = composer.combine(basis, wv)
            if lm.predict_choice(prompt.tensor, ex) == ex.answer_key:
                correct += 1
        accuracy = correct / len(eval_set)
        lines.append(f"prompted eval loss: {result.mean_loss:.4f}")
        lines.append(f"prompted accuracy:  {accuracy:.4f}")
        payload["prompted_eval_loss"] = result.mean_loss
        payload["prompted_accuracy"] = accuracy
    text = "\n".join(lines) + "\n"
    if args.out:
        _write_outputs(args.out, {"eval.txt": text,
                                  "eval.json": json.dumps(payload, indent=2) + "\n"})
    print(text, end="")
    return 0


def _cmd_report(args) -> int:
    _positive(args.top, "--top")
    record_path = Path(args.record)
    record = RunRecord.from_json(record_path.read_text(encoding="utf-8"))
    ck = args.checkpoint or str(record_path.parent / "checkpoint.pbld")
    if not Path(ck).exists():
        raise ValueError(f"checkpoint {ck} not found; pass --checkpoint")
    lm, _, _ = _load_bundle(ck)
    basis = composer.build_basis(record.basis_prompts, lm,
                                 record.config.get("prompt_length") or None)
    bundle = report.render_report(record, basis, n_top=args.top)
    files = {
        "curve.csv": report.render_curve_csv(record),
        "report.txt": bundle.text,
        "report.json": bundle.json_text,
    }
    _write_outputs(args.out, files)
    print(f"wrote {', '.join(sorted(files))} to {args.out}")
    return 0


def _basis_for_inspection(args):
    seed = _resolve_seed(args)
    prompts = _resolve_basis_prompts(args)
    if args.checkpoint:
        lm, _, _ = _load_bundle(args.checkpoint)
    else:
        lm = _fresh_lm(prompts, seed)
    length = args.prompt_length if args.prompt_length > 0 else None
    return composer.build_basis(prompts, lm, length)


def _cmd_ortho(args) -> int:
    basis = _basis_for_inspection(args)
    text, _ = report.render_ortho(basis)
    if args.out:
        _write_outputs(args.out, {"ortho.txt": text})
    print(text, end="")
    return 0


def _cmd_embed(args) -> int:
    basis = _basis_for_inspection(args)
    payload = {
        "prompts": basis.prompts,
        "padded_length": basis.length,
        "embed_dim": basis.embed_dim,
        "gram": [[f"{v:.4f}" for v in row] for row in basis.gram],
        "orthogonality_score": composer.orthogonality_score(basis),
    }
    text = json.dumps(payload, indent=2, ensure_ascii=False) + "\n"
    if args.out:
        _write_outputs(args.out, {"basis.json": text})
    print(text, end="")
    return 0


_COMMANDS = {
    "pretrain": _cmd_pretrain,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "report": _cmd_report,
    "ortho": _cmd_ortho,
    "embed": _cmd_embed,
}


def run_cli(argv=None) -> int:
    parser = _build_parser()
    if argv is None:
        argv = sys.argv[1:]
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, KeyError, IndexError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (RuntimeError, OSError) as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
