"""Command-line front end: ``samoe generate | train | eval | flops``.

Every command prints line-delimited JSON records on stdout. Exit codes:
0 success, 1 usage or config error, 2 malformed data or checkpoint file,
3 numeric failure (NaN or infinity during training).

Record fields
-------------
``epoch``    step, domain, phase, epoch, loss, val_acc
``step``     step, domain, val_acc, router_acc, per_domain_acc, avg_past_acc,
             new_acc, balanced_acc, router_test_acc
``summary``  variant, n_specialists, domains, final_balanced_acc,
             per_domain_acc, avg_past_acc, new_acc, router_acc
``flops``    variant, n_specialists, unit, total, backbone, router_path,
             specialist, adapter, samoe, basic, memo
``dataset``  path, domain, samples, bytes
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import checkpoint as ckpt
from .config import GenerateConfig, RunConfig, load_generate_config, load_run_config
from .data.csid import dataset_files, load_dataset, save_dataset
from .data.dataset import split
from .data.synthetic import SyntheticDomainSpec, generate_domain
from .errors import SamoeError, UsageError
from .eval import evaluate
from .flops import count_flops, formula_sheet
from .model import SamoeModel
from .protocol import DomainSplits, order_domains, run_sequence

log = logging.getLogger("samoe")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _print(rec: dict, stream=None) -> None:
    print(json.dumps(rec), file=stream or sys.stdout, flush=True)


# ------------------------------------------------------------------ generate
def generate(cfg: GenerateConfig, out_dir: str) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for d in range(1, cfg.domains + 1):
        spec = SyntheticDomainSpec.from_seed(d, cfg.seed, paths=cfg.paths, noise=cfg.noise, jitter=cfg.jitter)
        ds = generate_domain(spec, cfg.n_per_class)
        path = os.path.join(out_dir, f"domain_{d}.csid")
        save_dataset(ds, path)
        paths.append(path)
        _print({"record": "dataset", "path": path, "domain": d, "samples": len(ds), "bytes": os.path.getsize(path)})
    return paths


def _cmd_generate(args) -> int:
    cfg = load_generate_config(args.spec) if args.spec else GenerateConfig()
    generate(cfg, args.out)
    return 0


# --------------------------------------------------------------------- data
def load_splits(data_dir: str, val_frac: float, test_frac: float, seed: int) -> list[DomainSplits]:
    if not os.path.isdir(data_dir):
        raise UsageError(f"data directory {data_dir!r} does not exist")
    files = dataset_files(data_dir)
    if not files:
        raise UsageError(f"no .csid dataset files in {data_dir!r}")
    out = []
    for path in files:
        out.append(DomainSplits(*split(load_dataset(path), val_frac, test_frac, seed)))
    out.sort(key=lambda s: s.domain)
    return out


def final_summary(model: SamoeModel, splits: list[DomainSplits], seed: int) -> dict:
    """Summary record of a trained model on the test splits of its domains, in arrival order."""
    by_id = {s.domain: s for s in splits}
    missing = [d for d in model.domain_ids if d not in by_id]
    if missing:
        raise UsageError(f"data directory lacks domains {missing} used by the checkpoint")
    acc = evaluate(model, [by_id[d].test for d in model.domain_ids], seed=seed)
    return {
        "record": "summary",
        "variant": model.variant,
        "n_specialists": model.n_specialists,
        "domains": list(model.domain_ids),
        "final_balanced_acc": acc.balanced,
        "per_domain_acc": {str(k): v for k, v in acc.per_domain.items()},
        "avg_past_acc": acc.avg_past,
        "new_acc": acc.new,
        "router_acc": acc.router,
    }


def _run_meta(cfg: RunConfig) -> dict:
    meta = cfg.as_dict()
    meta.pop("out_dir")
    meta.pop("data_dir")
    return meta


# -------------------------------------------------------------------- train
def train(cfg: RunConfig) -> dict:
    splits = order_domains(load_splits(cfg.data_dir, cfg.val_frac, cfg.test_frac, cfg.split_seed),
                           cfg.train.domain_order)
    os.makedirs(cfg.out_dir, exist_ok=True)
    report_path = os.path.join(cfg.out_dir, "report.jsonl")
    meta = _run_meta(cfg)
    with open(report_path, "w") as report:

        def recorder(rec):
            if rec["record"] == "summary":
                return
            line = json.dumps(rec)
            report.write(line + "\n")
            print(line, flush=True)

        def on_step(model, step_report):
            ckpt.save_checkpoint(model, os.path.join(cfg.out_dir, f"step{step_report.step}.samo"), meta)

        result = run_sequence(splits, cfg.train, cfg.variant, recorder, cfg.context_mode, cfg.memo_adapter, on_step)
        final_path = os.path.join(cfg.out_dir, "final.samo")
        data = ckpt.save_checkpoint(result.model, final_path, meta)
        # summarise what was written, so `eval` on the file reproduces it exactly
        model, _ = ckpt.loads(data)
        summary = final_summary(model, splits, cfg.train.seed)
        summary["checkpoint"] = os.path.basename(final_path)  # relative to the run directory
        summary["checkpoint_sha256"] = ckpt.digest(data)
        line = json.dumps(summary)
        report.write(line + "\n")
        print(line, flush=True)
    return summary


def _cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    overrides = {}
    if args.variant:
        overrides["variant"] = args.variant
    if args.out:
        overrides["out_dir"] = args.out
    if args.data:
        overrides["data_dir"] = args.data
    if overrides:
        cfg = RunConfig(**{**{f: getattr(cfg, f) for f in cfg.__dataclass_fields__}, **overrides})
    train(cfg)
    return 0


# --------------------------------------------------------------------- eval
def _cmd_eval(args) -> int:
    model, run = ckpt.load_checkpoint(args.checkpoint)
    val_frac = run.get("val_frac", 0.2) if args.val_frac is None else args.val_frac
    test_frac = run.get("test_frac", 0.2) if args.test_frac is None else args.test_frac
    split_seed = run.get("split_seed", 0) if args.split_seed is None else args.split_seed
    seed = run.get("train", {}).get("seed", model.seed)
    splits = load_splits(args.data, val_frac, test_frac, split_seed)
    summary = final_summary(model, splits, seed)
    summary["checkpoint"] = args.checkpoint
    _print(summary)
    return 0


# -------------------------------------------------------------------- flops
def _cmd_flops(args) -> int:
    model, _ = ckpt.load_checkpoint(args.checkpoint)
    counts = args.n or [model.n_specialists]
    for n in counts:
        _print(count_flops(model, model.variant, n).record())
    if args.formulas:
        sys.stdout.write(formula_sheet())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="samoe", description="Sparse mixture-of-specialists continual learning on CSI tensors.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write synthetic CSID domain files")
    g.add_argument("--spec", help="INI file with a [generate] section (defaults if omitted)")
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(fn=_cmd_generate)

    t = sub.add_parser("train", help="train one variant over the domain sequence")
    t.add_argument("--config", required=True, help="INI run config")
    t.add_argument("--variant", choices=("samoe", "basic", "memo"))
    t.add_argument("--data", help="override [data] dir")
    t.add_argument("--out", help="override [output] dir")
    t.set_defaults(fn=_cmd_train)

    e = sub.add_parser("eval", help="accuracy of a checkpoint on the test splits")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--val-frac", type=float)
    e.add_argument("--test-frac", type=float)
    e.add_argument("--split-seed", type=int)
    e.set_defaults(fn=_cmd_eval)

    f = sub.add_parser("flops", help="analytic per-sample inference cost")
    f.add_argument("--checkpoint", required=True)
    f.add_argument("--n", type=int, nargs="*", help="specialist counts to report (default: the checkpoint's)")
    f.add_argument("--formulas", action="store_true", help="also print the formula sheet")
    f.set_defaults(fn=_cmd_flops)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                            format="%(asctime)s %(name)s %(message)s")
        return args.fn(args)
    except SamoeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
