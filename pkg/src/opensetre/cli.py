"""Command-line entry point: data generation, training, synthesis, evaluation,
and reproducible multi-arm experiment presets.

Exit codes: 0 success, 1 usage/configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import (
    ConfigError,
    CorpusError,
    NOTA_LABEL,
    SplitSpec,
    gen_synthetic,
    load_jsonl,
    save_jsonl,
)
from .encoder import load_checkpoint, save_checkpoint, forward, mark_instance, nota_score
from .evaluation import MetricsReport, calibrate_alpha, evaluate
from .synthesis import SynthesisConfig, SynthesisError, synthesize_batch, synthesize_negative
from .training import TrainConfig, TrainError, delta_s, save_history, train
from .attribution import input_dot_products, select_key_tokens, token_importance
from .corpus import build_banlist, compute_tfidf

log = logging.getLogger("opensetre")


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse default exits with 2; we use 1
        raise UsageError(message)


def _read_json(path: str, what: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} file not found: {path}")
    try:
        with open(p, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"invalid JSON in {what} file {path}: {exc.msg}") from exc


def _write_json(doc: dict | list, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def _load_config(path: str, seed_override: int | None) -> TrainConfig:
    doc = _read_json(path, "config")
    if seed_override is not None:
        doc["seed"] = seed_override
    try:
        return TrainConfig.from_dict(doc)
    except (TrainError, SynthesisError, ValueError) as exc:
        raise UsageError(f"bad config {path}: {exc}") from exc


def cmd_gen_data(args: argparse.Namespace) -> int:
    doc = _read_json(args.spec, "split spec")
    try:
        spec = SplitSpec.from_dict(doc)
        if args.seed is not None:
            spec = SplitSpec.from_dict({**doc, "seed": args.seed})
        train_set, val_set, test_set = gen_synthetic(spec)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_jsonl(train_set, out / "train.jsonl")
    save_jsonl(val_set, out / "val.jsonl")
    save_jsonl(test_set, out / "test.jsonl")
    log.info("wrote %d train / %d val / %d test instances to %s",
             len(train_set), len(val_set), len(test_set), out)
    return 0


def _load_ckpt(path: str):
    if not Path(path).exists():
        raise UsageError(f"checkpoint file not found: {path}")
    return load_checkpoint(path)


def _load_data(path: str) -> list:
    if not Path(path).exists():
        raise UsageError(f"data file not found: {path}")
    return load_jsonl(path)


def _train_once(config: TrainConfig, train_path: str, val_path: str | None):
    train_set = _load_data(train_path)
    val_set = _load_data(val_path) if val_path else None
    return train(config, train_set, val_set), train_set, val_set


def cmd_train(args: argparse.Namespace) -> int:
    config = _load_config(args.config, args.seed)
    result, _, _ = _train_once(config, args.train, args.val)
    save_checkpoint(result.params, result.vocab, result.relations, args.out)
    if args.history:
        save_history(result.history, args.history)
    log.info("trained %d steps; checkpoint at %s", len(result.history), args.out)
    return 0


def _known_scores(params, dataset, vocab, relations) -> list[float]:
    rel_set = set(relations)
    return [nota_score(forward(params, mark_instance(inst, vocab))[0])
            for inst in dataset if inst.relation in rel_set]


def cmd_calibrate(args: argparse.Namespace) -> int:
    params, vocab, relations = _load_ckpt(args.ckpt)
    dataset = _load_data(args.data)
    scores = _known_scores(params, dataset, vocab, relations)
    if not scores:
        raise UsageError("no known-relation instances to calibrate on")
    alpha = calibrate_alpha(scores, args.target)
    doc = {"alpha": alpha}
    if args.out:
        _write_json(doc, args.out)
    print(json.dumps(doc))
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    params, vocab, relations = _load_ckpt(args.ckpt)
    dataset = _load_data(args.data)
    if args.alpha is not None:
        alpha = args.alpha
    elif args.calibrate:
        cal_set = _load_data(args.calibrate)
        scores = _known_scores(params, cal_set, vocab, relations)
        if not scores:
            raise UsageError("no known-relation instances in the calibration file")
        alpha = calibrate_alpha(scores)
    else:
        raise UsageError("eval needs --alpha or --calibrate")
    report = evaluate(params, dataset, alpha, vocab, relations)
    if args.out:
        _write_json(report.to_dict(), args.out)
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


def _synthesis_config(args: argparse.Namespace) -> SynthesisConfig:
    base = {}
    if args.config:
        cfg = _load_config(args.config, None)
        base = {f: getattr(cfg.synthesis, f) for f in
                ("epsilon", "mode", "use_attribution", "use_tfidf", "use_dp",
                 "iterative", "sigma")}
    if args.epsilon is not None:
        base["epsilon"] = args.epsilon
    if args.mode is not None:
        base["mode"] = args.mode
    try:
        return SynthesisConfig(**base)
    except SynthesisError as exc:
        raise UsageError(str(exc)) from exc


def cmd_synth(args: argparse.Namespace) -> int:
    params, vocab, relations = _load_ckpt(args.ckpt)
    dataset = _load_data(args.data)
    train_like = [inst for inst in dataset if inst.relation != NOTA_LABEL]
    if not train_like:
        raise UsageError("no known-relation instances to synthesize from")
    config = _synthesis_config(args)
    if config.mode in ("gaussian", "gaussian_shift"):
        raise UsageError("synth dumps token-level pairs; use mode adversarial or mask")
    if not args.explain and not args.out:
        raise UsageError("synth needs --out unless --explain is given")
    tfidf = compute_tfidf(train_like, vocab)
    banlist = build_banlist(tfidf, args.banlist_k)
    limit = args.limit if args.limit is not None else len(train_like)
    sources = train_like[:limit]

    if args.explain:
        for inst in sources:
            _, dots = input_dot_products(params, inst, vocab)
            imp = token_importance(params, inst, vocab, tfidf,
                                   use_attribution=config.use_attribution,
                                   use_tfidf=config.use_tfidf,
                                   use_dp=config.use_dp, raw_dots=dots)
            selected = set(select_key_tokens(imp.importance, config.epsilon, imp.candidates))
            for i, tok in enumerate(inst.tokens):
                print("\t".join([
                    tok,
                    f"{imp.attribution[i]:.6g}",
                    f"{imp.tfidf[i]:.6g}",
                    f"{imp.dependency[i]:.6g}",
                    f"{imp.importance[i]:.6g}",
                    "1" if i in selected else "0",
                ]))
            print()
        return 0

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for inst in sources:
            neg = synthesize_negative(params, inst, vocab, tfidf, banlist, config)
            s_src = nota_score(forward(params, mark_instance(inst, vocab))[0])
            s_neg = nota_score(forward(params, mark_instance(neg.instance, vocab))[0])
            fh.write(json.dumps({
                "source": inst.to_record(),
                "negative": neg.instance.to_record(),
                "substituted": list(neg.substituted),
                "s_source": s_src,
                "s_negative": s_neg,
            }, sort_keys=True) + "\n")
    log.info("wrote %d synthesis pairs to %s", len(sources), out)
    return 0


@dataclass(frozen=True)
class ExperimentPreset:
    name: str
    split: SplitSpec
    base_config: dict
    arms: tuple[tuple[str, dict], ...]
    seeds: tuple[int, ...]

    @classmethod
    def from_file(cls, path: str) -> "ExperimentPreset":
        doc = _read_json(path, "preset")
        for field in ("name", "split", "base_config", "arms", "seeds"):
            if field not in doc:
                raise UsageError(f"preset missing field {field!r}")
        if not doc["arms"]:
            raise UsageError("preset needs at least one arm")
        if not doc["seeds"]:
            raise UsageError("preset needs at least one seed")
        try:
            split = SplitSpec.from_dict(doc["split"])
        except ConfigError as exc:
            raise UsageError(f"bad split spec: {exc}") from exc
        arms = []
        for arm in doc["arms"]:
            if "name" not in arm:
                raise UsageError("every arm needs a name")
            arms.append((arm["name"], arm.get("overrides", {})))
        return cls(doc["name"], split, doc["base_config"], tuple(arms),
                   tuple(int(s) for s in doc["seeds"]))


def _arm_config(preset: ExperimentPreset, overrides: dict, seed: int) -> TrainConfig:
    doc = dict(preset.base_config)
    doc.update(overrides)
    doc["seed"] = seed
    try:
        return TrainConfig.from_dict(doc)
    except (TrainError, SynthesisError, ValueError) as exc:
        raise UsageError(f"bad arm config: {exc}") from exc


def run_experiment_arm(config: TrainConfig, train_set, val_set, test_set) -> tuple:
    """Train one arm, calibrate on validation knowns, evaluate on test."""
    result = train(config, train_set, val_set)
    val_known = _known_scores(result.params, val_set, result.vocab, result.relations)
    alpha = calibrate_alpha(val_known)
    gap = None
    if config.use_negatives:
        rng = np.random.default_rng(config.seed)
        negatives = synthesize_batch(result.params, list(train_set), result.vocab,
                                     result.tfidf, result.banlist,
                                     config.synthesis, rng)
        gap = delta_s(result.params, train_set, negatives, result.vocab)
    report = evaluate(result.params, test_set, alpha, result.vocab,
                      result.relations, delta_s=gap)
    return result, report


def _summarize(reports: dict[str, list[MetricsReport]]) -> dict:
    metrics = ("acc_open", "acc_known", "auroc", "fpr95")
    summary: dict = {}
    for arm, reps in reports.items():
        entry: dict = {}
        for metric in metrics:
            values = [getattr(r, metric) for r in reps]
            entry[metric] = {
                "mean": float(np.mean(values)),
                "std": float(np.std(values)),
                "values": values,
            }
        gaps = [r.delta_s for r in reps if r.delta_s is not None]
        if gaps:
            entry["delta_s"] = {
                "mean": float(np.mean(gaps)),
                "std": float(np.std(gaps)),
                "values": gaps,
            }
        summary[arm] = entry
    return summary


def cmd_experiment(args: argparse.Namespace) -> int:
    preset = ExperimentPreset.from_file(args.preset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_set, val_set, test_set = gen_synthetic(preset.split)

    reports: dict[str, list[MetricsReport]] = {}
    for arm_name, overrides in preset.arms:
        reports[arm_name] = []
        for seed in preset.seeds:
            config = _arm_config(preset, overrides, seed)
            result, report = run_experiment_arm(config, train_set, val_set, test_set)
            stem = f"{arm_name}_{seed}"
            save_checkpoint(result.params, result.vocab, result.relations,
                            out / f"{stem}.ckpt.json")
            save_history(result.history, out / f"{stem}.history.jsonl")
            report.save(out / f"{stem}.report.json")
            reports[arm_name].append(report)
            log.info("arm %s seed %d: auroc=%.4f fpr95=%.4f acc_open=%.4f",
                     arm_name, seed, report.auroc, report.fpr95, report.acc_open)

    summary = {"name": preset.name, "arms": _summarize(reports)}
    _write_json(summary, out / "summary.json")
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_sweep_epsilon(args: argparse.Namespace) -> int:
    preset = ExperimentPreset.from_file(args.preset)
    try:
        epsilons = [float(v) for v in args.epsilons.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --epsilons list: {args.epsilons!r}") from exc
    if not epsilons:
        raise UsageError("--epsilons must list at least one value")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_set, val_set, test_set = gen_synthetic(preset.split)

    rows = []
    for eps in epsilons:
        values = []
        for seed in preset.seeds:
            overrides = {"epsilon": eps, "mode": "adversarial", "use_negatives": True}
            config = _arm_config(preset, overrides, seed)
            _, report = run_experiment_arm(config, train_set, val_set, test_set)
            values.append(report.fpr95)
        rows.append({
            "epsilon": eps,
            "fpr95_mean": float(np.mean(values)),
            "fpr95_std": float(np.std(values)),
            "values": values,
        })
        log.info("epsilon %.3f: fpr95 %.4f +- %.4f", eps, rows[-1]["fpr95_mean"],
                 rows[-1]["fpr95_std"])
    _write_json(rows, out / "sweep.json")
    for row in rows:
        print(f"{row['epsilon']:.3f}\t{row['fpr95_mean']:.4f}\t{row['fpr95_std']:.4f}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="osre", description=__doc__)
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate synthetic train/val/test JSONL files")
    p.add_argument("--spec", required=True, help="SplitSpec JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model from a flat JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--train", required=True, help="training JSONL")
    p.add_argument("--val", default=None, help="validation JSONL")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", default=None, help="history JSONL path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synth", help="dump negative-synthesis pairs or explanations")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--config", default=None, help="flat config JSON for synthesis settings")
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--mode", choices=("adversarial", "mask"), default=None)
    p.add_argument("--banlist-k", type=int, default=None)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--explain", action="store_true",
                   help="print per-token importance rows instead of writing pairs")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("calibrate", help="calibrate the detection threshold")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--target", type=float, default=0.95)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("eval", help="compute open-set metrics on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--calibrate", default=None, help="JSONL to calibrate alpha on")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="run an arms x seeds preset")
    p.add_argument("--preset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("sweep-epsilon", help="FPR95 across substitution ratios")
    p.add_argument("--preset", required=True)
    p.add_argument("--epsilons", required=True, help="comma-separated ratios")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep_epsilon)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (CorpusError, TrainError, SynthesisError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"fatal: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
