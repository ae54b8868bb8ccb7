"""Command line: ``rvos {gen,train,eval,infer,verify}``.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from .config import Config, load_config
from .errors import ConfigError
from .synthdata import load_samples, make_dataset, mask_lines
from .train import default_vocabulary, evaluate_model, load_model, predict, prepare, train


def _config(args) -> Config:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, val = item.split("=", 1)
        overrides[key.strip()] = val.strip()
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    return load_config(args.config, overrides)


def _load(data_dir, split, cfg: Config, limit=None):
    vocab = default_vocabulary()
    samples = load_samples(data_dir, split, limit)
    if not samples:
        raise FileNotFoundError(f"no {split!r} samples listed in {Path(data_dir) / 'manifest.jsonl'}")
    return [prepare(s, vocab) for s in samples]


def cmd_gen(cfg: Config, out) -> Path:
    return make_dataset(out, cfg.n_train, cfg.n_val, cfg.temporal_fraction, cfg.seed,
                        cfg.num_frames, cfg.height, cfg.width, cfg.num_shapes)


def cmd_train(cfg: Config, data_dir, out, log=print) -> Path:
    from .plotting import plot_loss_curves

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    items = _load(data_dir, "train", cfg)
    (out / "config.txt").write_text(cfg.to_text())
    ckpt = out / "model.ckpt"

    def progress(row):
        log("epoch {epoch}\ttotal {total:.4f}\t".format(**row)
            + "\t".join(f"{k} {row[k]:.4f}" for k in ("dice", "focal", "l1", "giou", "cls", "con")))

    result = train(cfg, items, out / "train_log.csv", ckpt, progress=progress)
    plot_loss_curves(result.history, out / "loss_curves.png")
    return ckpt


def cmd_eval(cfg: Config, checkpoint, data_dir, split, out, log=print):
    from .plotting import plot_report

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    model = load_model(cfg, checkpoint)
    items = _load(data_dir, split, cfg)
    report, _ = evaluate_model(model, items)
    (out / "report.tsv").write_text(report.to_tsv())
    (out / "report.json").write_text(report.to_json())
    plot_report(report, out / "report.png")
    log(report.to_tsv(), end="")
    return report


def cmd_infer(cfg: Config, checkpoint, data_dir, split, out, limit=None, expression=None, log=print) -> Path:
    from .plotting import plot_masks

    out = Path(out)
    (out / "figures").mkdir(parents=True, exist_ok=True)
    model = load_model(cfg, checkpoint)
    vocab = default_vocabulary()
    items = _load(data_dir, split, cfg, limit)
    lines = []
    with open(out / "predictions.tsv", "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t")
        writer.writerow(["id", "query", "expression"])
        for item in items:
            text = expression or vocab.decode(item.token_ids)
            if expression:
                item.token_ids = vocab.encode(expression)
            pred = predict(model, item)
            writer.writerow([item.id, pred.query, text])
            lines.extend(mask_lines(item.id, pred.masks))
            plot_masks(item.frames, pred.masks, item.full_masks, out / "figures" / f"{item.id}.png", text)
            log(f"{item.id}\tquery {pred.query}\t{text}")
    (out / "predictions.rle").write_text("\n".join(lines) + "\n")
    return out / "predictions.rle"


def cmd_verify(quick: bool = False, seed: int = 0, log=print) -> bool:
    from . import verify

    instances = 3 if quick else 20
    suites = [lambda: verify.gradcheck_ops(instances, seed), lambda: verify.gradcheck_modules(instances, seed),
              lambda: verify.gradcheck_losses(instances, seed), lambda: [verify.gradcheck_pipeline(seed)],
              lambda: [verify.hungarian_oracle(100 if quick else 1000, seed=seed)],
              lambda: verify.metric_oracles(20 if quick else 100, seed=seed)]
    ok = True
    for suite in suites:
        for res in suite():
            log(res.line())
            ok &= res.passed
    log("ALL PASS" if ok else "FAILURES PRESENT")
    return ok


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rvos", description="Referring video segmentation on synthetic clips.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        sp.add_argument("--out", help=out_help)

    common(sub.add_parser("gen", help="write a synthetic dataset"), "dataset directory (default: data_dir)")
    sp = sub.add_parser("train", help="train and write a checkpoint")
    common(sp, "run directory (default: out_dir)")
    sp.add_argument("--data", help="dataset directory (default: data_dir)")
    for name, helptext in (("eval", "score a checkpoint"), ("infer", "predict masks and figures")):
        sp = sub.add_parser(name, help=helptext)
        common(sp, "output directory (default: out_dir/<command>)")
        sp.add_argument("--data", help="dataset directory (default: data_dir)")
        sp.add_argument("--checkpoint", help="checkpoint path (default: out_dir/model.ckpt)")
        sp.add_argument("--split", default="val", choices=("train", "val"))
        if name == "infer":
            sp.add_argument("--limit", type=int, default=8, help="number of clips")
            sp.add_argument("--expression", help="replace each clip's expression with this text")
    sp = sub.add_parser("verify", help="gradient, assignment and metric oracles")
    sp.add_argument("--quick", action="store_true", help="fewer random instances")
    sp.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            return 0 if cmd_verify(args.quick, args.seed) else 1
        cfg = _config(args)
        data = getattr(args, "data", None) or cfg.data_dir
        if args.command == "gen":
            print(cmd_gen(cfg, args.out or cfg.data_dir))
        elif args.command == "train":
            print(cmd_train(cfg, data, args.out or cfg.out_dir))
        else:
            ckpt = args.checkpoint or str(Path(cfg.out_dir) / "model.ckpt")
            out = args.out or str(Path(cfg.out_dir) / args.command)
            if args.command == "eval":
                cmd_eval(cfg, ckpt, data, args.split, out)
            else:
                cmd_infer(cfg, ckpt, data, args.split, out, args.limit, args.expression)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit code 1
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
