"""Command-line front end: run / sweep / ablate / dump-embeddings / gen-data.

Every artifact written here is a deterministic function of (config, seed):
no timestamps, sorted keys, fixed float formatting. Exit codes: 0 success,
2 configuration error, 3 runtime error. PROTOFED_THREADS caps worker
parallelism (clients within a run, and sub-runs within sweeps/ablations).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import (
    ConfigError,
    ExperimentConfig,
    SweepSpec,
    load_config,
    parse_sweep,
    write_resolved,
)
from .datagen import CsvSchema, SampleSet, load_csv, make_domains, save_csv
from .federation import ExperimentResult, run_experiment
from .model import forward, load_params, save_params
from .numerics import STREAM_DATA, Rng
from .prototypes import save_prototypes_json


def _threads() -> int:
    raw = os.environ.get("PROTOFED_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"PROTOFED_THREADS must be an integer, got {raw!r}") from None
    if value < 1:
        raise ConfigError("PROTOFED_THREADS must be >= 1")
    return value


def _fmt(value: float) -> str:
    return f"{value:.17g}"


def execute_run(cfg: ExperimentConfig, out_dir: Path, max_workers: int = 1) -> ExperimentResult:
    """Run one experiment and write rounds.jsonl, summary.json,
    config.resolved.json, model.bin and prototypes.json into out_dir."""
    out_dir.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, out_dir / "config.resolved.json")
    with open(out_dir / "rounds.jsonl", "w", encoding="utf-8") as rounds_fh:

        def stream(report):
            rounds_fh.write(json.dumps(report.to_json_dict(), sort_keys=True) + "\n")
            rounds_fh.flush()

        result = run_experiment(cfg, max_workers=max_workers, round_callback=stream)
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(result.summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    save_params(result.final_params, out_dir / "model.bin")
    if result.final_generalized is not None:
        save_prototypes_json(result.final_generalized, out_dir / "prototypes.json")
    return result


def cmd_run(args) -> int:
    cfg = load_config(args.config, seed=args.seed, out_dir=args.out)
    execute_run(cfg, Path(cfg.out_dir), max_workers=_threads())
    return 0


def _acc_columns(num_domains: int) -> list[str]:
    return [f"acc_domain_{d}" for d in range(num_domains)]


def _summary_row(summary: dict, num_domains: int) -> list[str]:
    per_domain = summary["per_domain_accuracy"]
    cells = [_fmt(per_domain.get(str(d), float("nan"))) for d in range(num_domains)]
    return [_fmt(summary["average_accuracy"])] + cells


def cmd_sweep(args) -> int:
    spec: SweepSpec = parse_sweep(Path(args.config).read_text(encoding="utf-8"))
    base = spec.base
    if args.seed is not None:
        base = dataclasses.replace(base, seed=args.seed)
    out_root = Path(args.out if args.out is not None else base.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    threads = _threads()

    def one(value: float):
        sub_dir = out_root / f"{spec.param}_{value:g}"
        sub_cfg = dataclasses.replace(base, **{spec.param: value}, out_dir=str(sub_dir))
        try:
            result = execute_run(sub_cfg, sub_dir)
            return value, result.summary, "ok"
        except Exception as exc:  # record and keep sweeping
            return value, None, f"error: {exc}"

    if threads > 1 and len(spec.values) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, spec.values))
    else:
        rows = [one(v) for v in spec.values]

    with open(out_root / "sweep.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["param", "value", "avg_acc_last5"] + _acc_columns(base.num_domains) + ["status"]
        )
        for value, summary, status in rows:
            if summary is None:
                cells = [""] * (1 + base.num_domains)
            else:
                cells = _summary_row(summary, base.num_domains)
            writer.writerow([spec.param, _fmt(value)] + cells + [status])
    return 0


ABLATION_VARIANTS = [
    # (group, variant, overrides)
    ("components", "gpcl_off_apa_off", {"gpcl_enabled": False, "apa_enabled": False}),
    ("components", "gpcl_on_apa_off", {"gpcl_enabled": True, "apa_enabled": False}),
    ("components", "gpcl_off_apa_on", {"gpcl_enabled": False, "apa_enabled": True}),
    ("components", "gpcl_on_apa_on", {"gpcl_enabled": True, "apa_enabled": True}),
    ("aggregator", "average", {"aggregator_mode": "average"}),
    ("aggregator", "reweight", {"aggregator_mode": "reweight"}),
    ("mixup", "off", {"mixup_mode": "off"}),
    ("mixup", "input", {"mixup_mode": "input"}),
    ("mixup", "feature", {"mixup_mode": "feature"}),
]


def cmd_ablate(args) -> int:
    base = load_config(args.config, seed=args.seed, out_dir=args.out)
    out_root = Path(base.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    threads = _threads()

    def one(entry):
        group, variant, overrides = entry
        sub_dir = out_root / f"{group}_{variant}"
        sub_cfg = dataclasses.replace(base, **overrides, out_dir=str(sub_dir))
        result = execute_run(sub_cfg, sub_dir)
        return group, variant, sub_cfg, result.summary

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, ABLATION_VARIANTS))
    else:
        rows = [one(entry) for entry in ABLATION_VARIANTS]

    with open(out_root / "ablation.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["group", "variant", "gpcl", "apa", "aggregator", "mixup", "avg_acc_last5"]
            + _acc_columns(base.num_domains)
        )
        for group, variant, sub_cfg, summary in rows:
            writer.writerow(
                [
                    group,
                    variant,
                    str(sub_cfg.gpcl_enabled).lower(),
                    str(sub_cfg.apa_enabled).lower(),
                    sub_cfg.aggregator_mode,
                    sub_cfg.mixup_mode,
                ]
                + _summary_row(summary, base.num_domains)
            )
    return 0


def cmd_dump_embeddings(args) -> int:
    params = load_params(args.checkpoint)
    data = load_csv(args.data, CsvSchema(input_dim=None))
    if data.input_dim != params.input_dim:
        raise ValueError(
            f"checkpoint expects input dim {params.input_dim}, data has {data.input_dim}"
        )
    features = forward(params, data.x).acts[-1] if len(data) else np.zeros((0, params.feature_dim))
    save_csv(SampleSet(features, data.labels, data.domains), args.out)
    return 0


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config, seed=args.seed)
    rng = Rng(cfg.seed, STREAM_DATA)
    domain_data = make_domains(
        cfg.num_classes,
        cfg.num_domains,
        cfg.input_dim,
        cfg.per_class_count,
        rng,
        noise_sigma=cfg.data_noise,
        anchor_scale=cfg.data_anchor_scale,
        shift=cfg.data_shift,
    )
    merged = SampleSet(
        np.concatenate([domain_data[d].x for d in sorted(domain_data)]),
        np.concatenate([domain_data[d].labels for d in sorted(domain_data)]),
        np.concatenate([domain_data[d].domains for d in sorted(domain_data)]),
    )
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    save_csv(merged, out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="protofed",
        description="Deterministic prototype-based federated learning simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment_flags(p):
        p.add_argument("--config", required=True, help="flat key=value config file")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--seed", type=int, default=None, help="seed (overrides config)")

    run_p = sub.add_parser("run", help="run one experiment")
    experiment_flags(run_p)
    run_p.set_defaults(func=cmd_run)

    sweep_p = sub.add_parser("sweep", help="run a hyperparameter sweep")
    experiment_flags(sweep_p)
    sweep_p.set_defaults(func=cmd_sweep)

    ablate_p = sub.add_parser("ablate", help="run the component/aggregator/mixup ablations")
    experiment_flags(ablate_p)
    ablate_p.set_defaults(func=cmd_ablate)

    dump_p = sub.add_parser("dump-embeddings", help="export features for external projection")
    dump_p.add_argument("--checkpoint", required=True, help="model checkpoint (model.bin)")
    dump_p.add_argument("--data", required=True, help="samples CSV")
    dump_p.add_argument("--out", required=True, help="output CSV path")
    dump_p.set_defaults(func=cmd_dump_embeddings)

    gen_p = sub.add_parser("gen-data", help="write the synthetic dataset as CSV")
    gen_p.add_argument("--config", required=True, help="flat key=value config file")
    gen_p.add_argument("--out", required=True, help="output CSV path")
    gen_p.add_argument("--seed", type=int, default=None, help="seed (overrides config)")
    gen_p.set_defaults(func=cmd_gen_data)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
