"""Command-line entry point.

Subcommands: pretrain, finetune, eval, sweep, oracle. Every run takes
--config (JSON), --out, --seed, and repeatable --set key=value
overrides, writes a resolved-config echo for exact replay, and derives
all randomness from the single seed.

Exit codes: 0 ok; 2 usage or configuration error; 3 pretraining failed
(mode collapse); 4 harvest cap exceeded; 5 lemma counterexample found;
6 training aborted on a non-finite loss.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from . import config as cfgmod
from .autodiff import NumericalError
from .cuts import (GridSpace, check_lemma1, check_lemma2, make_cuts,
                   random_instance, vote_counts)
from .env import LEFT, save_trajectories
from .losses import KIND_DPO, KIND_ROBUST
from .nn import ConfigError, load_checkpoint, save_checkpoint
from .preferences import (CorruptionSpec, HarvestError, corrupt,
                          harvest_preference_rollouts, pair_cartesian,
                          save_preferences)
from .pretrain import PretrainingFailedError, pretrain, save_demos
from .seeding import rng_for, seed_for
from .training import (TrainingAborted, evaluate_trajectories, finetune)
from .viz import trajectory_svg, vote_region_svg

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PRETRAIN_FAILED = 3
EXIT_HARVEST = 4
EXIT_COUNTEREXAMPLE = 5
EXIT_TRAINING_ABORTED = 6

HISTORY_COLUMNS = ["loss_kind", "corruption_rate", "epoch", "success_rate",
                   "alignment_rate", "drift", "loss", "seed"]


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in columns])


def _metrics_dict(m) -> dict:
    return {"episodes": m.episodes, "success_rate": m.success_rate,
            "alignment_rate": m.alignment_rate, "mode_counts": m.mode_counts,
            "preferred": m.preferred}


def _prepare(args):
    cfg = cfgmod.load_config(args.config)
    cfgmod.apply_overrides(cfg, args.set)
    if args.seed is not None:
        cfg["seed"] = args.seed
    os.makedirs(args.out, exist_ok=True)
    cfgmod.save_resolved(cfg, os.path.join(args.out, "resolved_config.json"))
    return cfg


def cmd_pretrain(args) -> int:
    cfg = _prepare(args)
    result = pretrain(cfgmod.pretrain_from(cfg))
    out = args.out
    save_checkpoint(os.path.join(out, "pretrained.ckpt"), result.params)
    save_demos(os.path.join(out, "demos.json"), result.demos)
    write_csv(os.path.join(out, "pretrain_metrics.csv"), ["step", "bc_loss"],
              [{"step": i, "bc_loss": l} for i, l in enumerate(result.loss_history)])
    with open(os.path.join(out, "pretrain_eval.json"), "w") as fh:
        json.dump(_metrics_dict(result.metrics), fh, indent=2)
    print(f"pretrained: success={result.metrics.success_rate:.2f} "
          f"modes={result.metrics.mode_counts}")
    return EXIT_OK


def _harvest_and_pair(cfg, params, env, schedule, out, rate, corrupt_name):
    h = cfg["harvest"]
    store, wins, loses = harvest_preference_rollouts(
        params, env, schedule, h["n_winners"], h["n_losers"],
        seed_for(cfg["seed"], "harvest"), max_attempt_factor=h["max_attempt_factor"])
    save_trajectories(os.path.join(out, "trajectories.json"), store)
    pairs = pair_cartesian(wins, loses)
    if rate > 0:
        pairs = corrupt(pairs, CorruptionSpec(rate, seed_for(cfg["seed"], corrupt_name)))
    save_preferences(os.path.join(out, "preferences.json"), pairs, "trajectories.json")
    return store, pairs


def cmd_finetune(args) -> int:
    cfg = _prepare(args)
    ckpt = cfg["finetune"]["checkpoint"]
    if not ckpt:
        raise ConfigError("finetune.checkpoint is required")
    ref = load_checkpoint(ckpt)
    env = cfgmod.env_from(cfg)
    schedule = cfgmod.pretrain_from(cfg).schedule()
    rate = cfg["corruption"]["rate"]
    store, pairs = _harvest_and_pair(cfg, ref, env, schedule, args.out, rate, "corrupt")
    tc = cfgmod.train_from(cfg)
    result = finetune(ref, pairs, store, env, schedule, tc)
    out = args.out
    save_checkpoint(os.path.join(out, "finetuned.ckpt"), result.params)
    for row in result.history:
        row["corruption_rate"] = rate
    write_csv(os.path.join(out, "history.csv"), HISTORY_COLUMNS, result.history)
    metrics, trajs = evaluate_trajectories(result.params, env, schedule,
                                           tc.eval_episodes,
                                           seed_for(cfg["seed"], "final-eval"))
    trajectory_svg(os.path.join(out, "eval_rollouts.svg"), env, trajs,
                   title=f"{tc.kind} rate={rate} align={metrics.alignment_rate:.2f} "
                         f"success={metrics.success_rate:.2f}")
    with open(os.path.join(out, "final_metrics.json"), "w") as fh:
        json.dump(_metrics_dict(metrics), fh, indent=2)
    print(f"finetuned[{tc.kind}]: align={metrics.alignment_rate:.2f} "
          f"success={metrics.success_rate:.2f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _prepare(args)
    ckpt = cfg["eval"]["checkpoint"]
    if not ckpt:
        raise ConfigError("eval.checkpoint is required")
    params = load_checkpoint(ckpt)
    env = cfgmod.env_from(cfg)
    schedule = cfgmod.pretrain_from(cfg).schedule()
    metrics, trajs = evaluate_trajectories(params, env, schedule,
                                           cfg["eval"]["episodes"],
                                           seed_for(cfg["seed"], "eval"))
    write_csv(os.path.join(args.out, "eval_metrics.csv"),
              ["episodes", "success_rate", "alignment_rate", "left", "right",
               "undefined", "seed"],
              [{"episodes": metrics.episodes, "success_rate": metrics.success_rate,
                "alignment_rate": metrics.alignment_rate,
                "left": metrics.mode_counts.get("left", 0),
                "right": metrics.mode_counts.get("right", 0),
                "undefined": metrics.mode_counts.get("undefined", 0),
                "seed": cfg["seed"]}])
    trajectory_svg(os.path.join(args.out, "eval_rollouts.svg"), env, trajs,
                   title=f"align={metrics.alignment_rate:.2f} "
                         f"success={metrics.success_rate:.2f}")
    print(f"eval: align={metrics.alignment_rate:.2f} success={metrics.success_rate:.2f}")
    return EXIT_OK


SWEEP_COLUMNS = ["cell", "axis", "value", "loss_kind", "corruption_rate", "epoch",
                 "success_rate", "alignment_rate", "drift", "loss", "seed", "error"]


def cmd_sweep(args) -> int:
    cfg = _prepare(args)
    ckpt = cfg["finetune"]["checkpoint"]
    if not ckpt:
        raise ConfigError("finetune.checkpoint is required")
    ref = load_checkpoint(ckpt)
    env = cfgmod.env_from(cfg)
    schedule = cfgmod.pretrain_from(cfg).schedule()
    sweep = cfg["sweep"]
    axis, values, seeds = sweep["axis"], sweep["values"], sweep["seeds"]
    gamma_by_value = {float(k): v for k, v in sweep.get("gamma_by_value", {}).items()}

    base_rate = cfg["corruption"]["rate"]
    cells = []
    for value in values:
        kinds = (KIND_ROBUST, KIND_DPO) if axis == "corruption" else (cfg["loss"]["kind"],)
        for kind in kinds:
            for seed in seeds:
                cells.append((value, kind, seed))

    store, base_pairs = _harvest_and_pair(cfg, ref, env, schedule, args.out, 0.0, "n/a")
    rows = []
    for value, kind, seed in cells:
        name = f"{axis}={value}_{kind}_s{seed}"
        cell_dir = os.path.join(args.out, "cells", name)
        marker = os.path.join(cell_dir, "metrics.json")
        if os.path.exists(marker):  # completed cell: reuse, do not recompute
            with open(marker) as fh:
                rows.append(json.load(fh))
            continue
        os.makedirs(cell_dir, exist_ok=True)
        rate = float(value) if axis == "corruption" else base_rate
        run_cfg = dict(cfg, seed=seed)
        run_cfg["loss"] = dict(cfg["loss"])
        if axis != "corruption":
            run_cfg["loss"][axis] = float(value)
        elif value in gamma_by_value or float(value) in gamma_by_value:
            run_cfg["loss"]["gamma"] = gamma_by_value[float(value)]
        pairs = (corrupt(base_pairs, CorruptionSpec(rate, seed_for(seed, "corrupt", rate)))
                 if rate > 0 else base_pairs)
        tc = cfgmod.train_from(run_cfg, kind=kind, seed=seed)
        row = {"cell": name, "axis": axis, "value": value, "loss_kind": kind,
               "corruption_rate": rate, "seed": seed, "error": ""}
        try:
            result = finetune(ref, pairs, store, env, schedule, tc)
            m = result.final_metrics
            row.update(epoch=tc.epochs, success_rate=m.success_rate,
                       alignment_rate=m.alignment_rate,
                       drift=float(np.linalg.norm(result.params.theta - ref.theta)),
                       loss=result.history[-1]["loss"])
            for hrow in result.history:
                hrow["corruption_rate"] = rate
            write_csv(os.path.join(cell_dir, "history.csv"), HISTORY_COLUMNS,
                      result.history)
            _, trajs = evaluate_trajectories(result.params, env, schedule,
                                             tc.eval_episodes,
                                             seed_for(seed, "final-eval"))
            trajectory_svg(os.path.join(cell_dir, "rollouts.svg"), env, trajs,
                           title=name)
        except (TrainingAborted, NumericalError, HarvestError) as err:
            row.update(epoch=None, success_rate=None, alignment_rate=None,
                       drift=None, loss=None, error=str(err))
        with open(marker, "w") as fh:
            json.dump(row, fh, indent=2)
        rows.append(row)
        print(f"cell {name}: align={row.get('alignment_rate')} "
              f"success={row.get('success_rate')} error={row['error'] or 'none'}")
    write_csv(os.path.join(args.out, "sweep.csv"), SWEEP_COLUMNS, rows)
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg = _prepare(args)
    ocfg = cfg["oracle"]
    g = ocfg["grid"]
    grid = GridSpace(tuple(g["lows"]), tuple(g["highs"]), tuple(g["resolution"]))
    gamma = ocfg["gamma"]
    rng = rng_for(cfg["seed"], "oracle")
    report = {"gamma": gamma, "instances": ocfg["instances"],
              "lemma1_clean": 0, "lemma1_dirty": 0, "lemma2": 0,
              "lemma2_integral_gamma_n": 0, "lemma2_fractional_gamma_n": 0,
              "out_of_contract_cases": 0, "counterexamples": []}

    def record_failure(lemma, theta_h, cuts, extra):
        report["counterexamples"].append({
            "lemma": lemma, "theta_h": list(map(float, theta_h)),
            "cuts": [{"w": c.w.tolist(), "b": float(c.b), "flipped": c.flipped}
                     for c in cuts], **extra})

    for _ in range(ocfg["instances"]):
        n = int(rng.integers(1, ocfg["max_cuts"] + 1))
        # lemma 1, clean then dirty
        theta_h, cuts = random_instance(grid, n, 0, rng)
        rep = check_lemma1(grid, theta_h, cuts)
        report["lemma1_clean"] += rep.holds
        if not rep.holds:
            record_failure("lemma1-clean", theta_h, cuts, {"report": str(rep)})
        flips = int(rng.integers(1, n + 1))
        theta_d, cuts_d = random_instance(grid, n, flips, rng)
        rep = check_lemma1(grid, theta_d, cuts_d)
        report["lemma1_dirty"] += rep.holds
        if not rep.holds:
            record_failure("lemma1-dirty", theta_d, cuts_d, {"report": str(rep)})
        # lemma 2 at the flip cap floor(gamma * n)
        cap = int(math.floor(gamma * n + 1e-9))
        theta_2, cuts_2 = random_instance(grid, n, cap, rng)
        rep2 = check_lemma2(grid, theta_2, cuts_2, gamma)
        report["lemma2"] += rep2.holds
        key = "lemma2_integral_gamma_n" if rep2.gamma_n_integral else \
            "lemma2_fractional_gamma_n"
        report[key] += 1
        if not rep2.holds:
            record_failure("lemma2", theta_2, cuts_2, {"report": str(rep2)})

    # the three-cut, one-flip picture: theta_h must sit in the >= 2-vote region
    theta_f = np.zeros(grid.dim)
    cuts_f = make_cuts(theta_f, 3, 1, rng_for(cfg["seed"], "oracle-fixture"),
                       scale=grid.extent())
    rep_f = check_lemma2(grid, theta_f, cuts_f, 1.0 / 3.0)
    report["three_cut_fixture"] = {"votes": rep_f.theta_h_votes,
                                   "threshold": rep_f.threshold,
                                   "holds": rep_f.holds}
    if not rep_f.holds:
        record_failure("three-cut-fixture", theta_f, cuts_f, {"report": str(rep_f)})
    if grid.dim == 2:
        counts = vote_counts(grid, cuts_f)
        vote_region_svg(os.path.join(args.out, "vote_regions.svg"), grid, counts,
                        cuts_f, theta_f, gamma=1.0 / 3.0)
        write_csv(os.path.join(args.out, "vote_counts.csv"),
                  ["x", "y", "votes"],
                  [{"x": float(p[0]), "y": float(p[1]), "votes": int(c)}
                   for p, c in zip(grid.points()[::97], counts[::97])])

    # out-of-contract case: more flips than gamma tolerates is reported, not failed
    theta_o, cuts_o = random_instance(grid, 4, 3, rng)
    rep_o = check_lemma2(grid, theta_o, cuts_o, 0.25)
    report["out_of_contract_cases"] += rep_o.out_of_contract

    with open(os.path.join(args.out, "oracle_report.json"), "w") as fh:
        json.dump(report, fh, indent=2)
    n_bad = len(report["counterexamples"])
    print(f"oracle: lemma1 clean {report['lemma1_clean']}/{ocfg['instances']}, "
          f"dirty {report['lemma1_dirty']}/{ocfg['instances']}, "
          f"lemma2 {report['lemma2']}/{ocfg['instances']}, "
          f"counterexamples {n_bad}")
    return EXIT_COUNTEREXAMPLE if n_bad else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="difftune",
        description="Pretrain a toy diffusion policy and fine-tune it from "
                    "pairwise trajectory preferences.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in [("pretrain", cmd_pretrain), ("finetune", cmd_finetune),
                     ("eval", cmd_eval), ("sweep", cmd_sweep), ("oracle", cmd_oracle)]:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--out", default=f"runs/{name}", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="top-level seed")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted-key config override (repeatable)")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except PretrainingFailedError as err:
        print(f"pretraining failed: {err}", file=sys.stderr)
        return EXIT_PRETRAIN_FAILED
    except HarvestError as err:
        print(f"harvest failed: {err}", file=sys.stderr)
        return EXIT_HARVEST
    except (TrainingAborted, NumericalError) as err:
        print(f"training aborted: {err}", file=sys.stderr)
        return EXIT_TRAINING_ABORTED


if __name__ == "__main__":
    sys.exit(main())
