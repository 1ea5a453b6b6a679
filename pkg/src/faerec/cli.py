"""Command-line entry point.

Exit codes: 0 success, 2 user error (bad input, config or files), 3 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import logging
import re
import sys
from pathlib import Path

from . import data as data_mod
from .config import ABLATIONS, RunConfig, describe_keys
from .errors import ConfigError, ContractError, FaerecError, TrainingError
from .evaluation import evaluate
from .model import FAERecModel
from .params import read_frec
from .semantic import load_semantic, semantic_from_tsv, synth_semantic, write_semantic
from .training import split_checkpoint, train

log = logging.getLogger("faerec")

EXIT_USER = 2
EXIT_INTERNAL = 3


def _parse_set(items) -> dict[str, str]:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def _overrides(args) -> dict[str, str]:
    over = _parse_set(getattr(args, "set", None))
    for flag, key in (("epochs", "train.epochs"), ("seed", "train.seed"), ("alpha", "train.alpha")):
        value = getattr(args, flag, None)
        if value is not None:
            over[key] = str(value)
    modes = []
    for name in getattr(args, "ablation", None) or []:
        key, value = ABLATIONS[name]
        if key == "align.mode":
            modes.append(value)
        else:
            over[key] = value
    if modes:
        over["align.mode"] = "+".join(modes)
    return over


def _load_embeddings(path, dataset, cfg: RunConfig):
    if path is None:
        if cfg["model.fusion"] != "id_only" or cfg["model.id_init"] == "pca":
            raise ConfigError("--embeddings is required unless model.fusion=id_only and model.id_init=normal")
        return None
    return load_semantic(path, n_items=dataset.n_items)


# -- commands --------------------------------------------------------------

def cmd_preprocess(args) -> int:
    records = data_mod.load_interactions(args.input, strict=args.strict)
    dataset = data_mod.build_dataset(records, min_seq_len=args.min_len, max_seq_len=args.max_len)
    data_mod.write_dataset(args.output, dataset)
    print(dataset.summary())
    return 0


def cmd_synth_data(args) -> int:
    from .synthetic import SynthConfig, synth_interactions

    cfg = SynthConfig(n_users=args.users, n_items=args.items, n_clusters=args.clusters,
                      zipf_exponent=args.zipf, d_llm=args.d_llm)
    with open(args.output, "w", encoding="utf-8") as fh:
        for r in synth_interactions(cfg, args.seed):
            fh.write(f"{r.user}\t{r.item}\t{r.timestamp}\n")
    return 0


def cmd_synth_embed(args) -> int:
    dataset = data_mod.read_dataset(args.dataset)
    if args.by_key:
        found = [re.search(r"(\d+)$", k) for k in dataset.item_keys]
        if not all(found):
            raise ConfigError("--by-key needs item keys ending in a number (e.g. i0042)")
        latent = [int(m.group(1)) for m in found]
        n = max(latent) + 1
        if args.clusters > n:
            raise ConfigError(f"--clusters {args.clusters} exceeds the number of items {n}")
        store = synth_semantic(n, args.d_llm, args.clusters, args.seed).reindex(latent)
    else:
        if args.clusters > dataset.n_items:
            raise ConfigError(f"--clusters {args.clusters} exceeds the number of items {dataset.n_items}")
        store = synth_semantic(dataset.n_items, args.d_llm, args.clusters, args.seed)
    write_semantic(args.output, store)
    return 0


def cmd_embed_convert(args) -> int:
    dataset = data_mod.read_dataset(args.dataset)
    write_semantic(args.output, semantic_from_tsv(args.input, dataset.item_keys))
    return 0


def cmd_train(args) -> int:
    cfg = RunConfig.build(args.config, _overrides(args))
    dataset = data_mod.read_dataset(args.dataset)
    semantic = _load_embeddings(args.embeddings, dataset, cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    result = train(
        dataset, semantic, cfg.model_config(), cfg.train_config(), cfg.align_config(),
        out_dir=out, resume=args.resume, exclude_seen=cfg["eval.exclude_seen"],
    )
    print(f"epochs={result.epochs_run} best_epoch={result.best_epoch} best_valid_N10={result.best_valid_n10:.4f}")
    return 0


def _model_from_checkpoint(args) -> tuple[FAERecModel, data_mod.InteractionDataset, RunConfig]:
    config = args.config
    if config is None:
        sibling = Path(args.checkpoint).with_name("config.txt")
        config = sibling if sibling.exists() else None
    cfg = RunConfig.build(config, _parse_set(args.set))
    dataset = data_mod.read_dataset(args.dataset)
    semantic = _load_embeddings(args.embeddings, dataset, cfg)
    model = FAERecModel(cfg.model_config(), dataset.n_items, semantic, seed=cfg["train.seed"])
    params, _, _ = split_checkpoint(read_frec(args.checkpoint))
    model.params.load_arrays(params)
    return model, dataset, cfg


def cmd_eval(args) -> int:
    model, dataset, cfg = _model_from_checkpoint(args)
    ks = tuple(int(k) for k in args.k.split(",")) if args.k else cfg["eval.ks"]
    report = evaluate(model, dataset, args.split, ks=ks, exclude_seen=cfg["eval.exclude_seen"])
    print(f"split={args.split} users={report.n_users}")
    print(report.format_table())
    if args.csv:
        Path(args.csv).write_text(report.to_csv(), encoding="utf-8")
    return 0


def cmd_dump_embeddings(args) -> int:
    model, dataset, _ = _model_from_checkpoint(args)
    e_id = model.id_embeddings().data
    e_llm = model.llm_embeddings().data if model.cfg.uses_semantic else None
    fused = model.item_vectors()
    fmt = lambda v: ",".join(repr(float(x)) for x in v)
    with open(args.output, "w", encoding="utf-8") as fh:
        fh.write("item\thead\tpopularity\tid_embedding\tllm_embedding\tfused_embedding\n")
        for i, key in enumerate(dataset.item_keys):
            llm = fmt(e_llm[i]) if e_llm is not None else ""
            fh.write(f"{key}\t{int(dataset.head_flag[i])}\t{int(dataset.popularity[i])}\t"
                     f"{fmt(e_id[i])}\t{llm}\t{fmt(fused[i])}\n")
    return 0


def cmd_experiment(args) -> int:
    from .experiment import VARIANTS, run_longtail, summary_lines

    variants = args.variants.split(",")
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise ConfigError(f"unknown variant(s) {unknown}; choose from {sorted(VARIANTS)}")
    runs = run_longtail(seeds=range(args.seeds), variants=variants, epochs=args.epochs)
    print("\n".join(summary_lines(runs)))
    return 0


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    keys_help = "configuration keys (config file 'key = value' or --set key=value):\n" + describe_keys()
    parser = argparse.ArgumentParser(
        prog="faerec",
        description="Fusion and alignment of ID and semantic item embeddings for sequential recommendation.",
        epilog=keys_help,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="TSV interactions -> FDAT dataset")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--min-len", type=int, default=3)
    p.add_argument("--max-len", type=int, default=50)
    p.add_argument("--strict", action="store_true", help="fail on the first malformed line")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("synth-data", help="write a synthetic long-tail interaction TSV")
    p.add_argument("--output", required=True)
    p.add_argument("--users", type=int, default=500)
    p.add_argument("--items", type=int, default=200)
    p.add_argument("--clusters", type=int, default=8)
    p.add_argument("--zipf", type=float, default=1.2)
    p.add_argument("--d-llm", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("synth-embed", help="write deterministic synthetic semantic embeddings (FEMB)")
    p.add_argument("--dataset", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--d-llm", type=int, default=64)
    p.add_argument("--clusters", type=int, default=8)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--by-key", action="store_true",
                   help="assign clusters by the number in each item key (matches synth-data)")
    p.set_defaults(func=cmd_synth_embed)

    p = sub.add_parser("embed-convert", help="TSV 'item<TAB>f1,...,fd' -> FEMB ordered like the dataset")
    p.add_argument("--input", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_embed_convert)

    p = sub.add_parser("train", help="train and checkpoint a model", epilog=keys_help,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--dataset", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--config")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--ablation", action="append", choices=sorted(ABLATIONS),
                   help="remove a component: agf, ila, fla, cls or pg (repeatable)")
    p.add_argument("--resume", action="store_true", help="continue from OUT_DIR/last.frec")
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (
        ("eval", cmd_eval, "evaluate a checkpoint on the full catalog"),
        ("dump-embeddings", cmd_dump_embeddings, "write per-item ID, LLM and fused vectors as TSV"),
    ):
        p = sub.add_parser(name, help=helptext, epilog=keys_help,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--dataset", required=True)
        p.add_argument("--embeddings")
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--config", help="defaults to config.txt next to the checkpoint")
        p.add_argument("--set", action="append", metavar="KEY=VALUE")
        if name == "eval":
            p.add_argument("--k", help="comma-separated cutoffs, e.g. 5,10,20")
            p.add_argument("--split", choices=("valid", "test"), default="test")
            p.add_argument("--csv", help="also write the report as CSV")
        else:
            p.add_argument("--output", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("experiment", help="synthetic long-tail comparison across seeds")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--variants", default="full,baseline",
                   help="comma-separated: full, baseline, no_agf, no_ila, no_fla, no_cls, no_pg")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ContractError, TrainingError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (FaerecError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER


if __name__ == "__main__":
    sys.exit(main())
