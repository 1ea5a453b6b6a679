"""The synthetic long-tail experiment: full method versus an ID-only baseline and ablations."""

from __future__ import annotations

from dataclasses import dataclass, replace

from .alignment import AlignmentConfig
from .evaluation import EvalReport, evaluate
from .model import ModelConfig
from .synthetic import SynthConfig, synth_experiment_data
from .training import TrainConfig, TrainResult, train

# variant name -> (model overrides, alignment mode, alpha override)
VARIANTS = {
    "full": ({}, "full", None),
    "baseline": ({"fusion": "id_only", "id_init": "normal"}, "full", 0.0),
    "no_agf": ({"fusion": "equal"}, "full", None),
    "no_ila": ({}, "no_ila", None),
    "no_fla": ({}, "no_fla", None),
    "no_cls": ({}, "no_cls", None),
    "no_pg": ({}, "no_pg", None),
}


@dataclass
class VariantRun:
    variant: str
    seed: int
    result: TrainResult
    report: EvalReport


def run_variant(variant: str, seed: int, epochs: int = 50, synth: SynthConfig | None = None,
                model_cfg: ModelConfig | None = None, train_cfg: TrainConfig | None = None,
                data=None, out_dir=None) -> VariantRun:
    model_over, mode, alpha = VARIANTS[variant]
    dataset, semantic = data if data is not None else synth_experiment_data(synth or SynthConfig(), seed)
    mcfg = replace(model_cfg or ModelConfig(), **model_over)
    tcfg = replace(train_cfg or TrainConfig(), epochs=epochs, seed=seed)
    if alpha is not None:
        tcfg = replace(tcfg, alpha=alpha)
    acfg = AlignmentConfig(period=max(epochs, 1), mode=mode)
    result = train(dataset, semantic, mcfg, tcfg, acfg, out_dir=out_dir)
    return VariantRun(variant, seed, result, evaluate(result.model, dataset, "test"))


def run_longtail(seeds=(0, 1, 2), variants=("full", "baseline"), epochs: int = 50,
                 synth: SynthConfig | None = None) -> dict[tuple[str, int], VariantRun]:
    runs = {}
    for seed in seeds:
        data = synth_experiment_data(synth or SynthConfig(), seed)
        for v in variants:
            runs[(v, seed)] = run_variant(v, seed, epochs, data=data)
    return runs


def summary_lines(runs: dict[tuple[str, int], VariantRun]) -> list[str]:
    lines = [f"{'variant':<9} {'seed':>4} {'HR@10':>7} {'N@10':>7} {'tailHR@10':>10} {'tailN@10':>9} {'Cov@10':>7} {'TCov@10':>8}"]
    for (variant, seed), run in sorted(runs.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        r = run.report
        lines.append(
            f"{variant:<9} {seed:>4} {r.overall.hr[10]:>7.4f} {r.overall.ndcg[10]:>7.4f} "
            f"{r.tail.hr[10]:>10.4f} {r.tail.ndcg[10]:>9.4f} {r.coverage[10]:>7.4f} {r.tail_coverage[10]:>8.4f}"
        )
    return lines
