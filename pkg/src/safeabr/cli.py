"""safeabr command line.

    safeabr gen-traces   [--config C] --dist NAME|SPEC [--seed N] --out DIR
    safeabr gen-manifest --config C --out FILE
    safeabr train        --config C --train-dist NAME --artifacts DIR
    safeabr train        --config C --dist NAME [--seed N] --out FILE.npz
    safeabr train-ensemble --config C --train-dist NAME --kind agents|values --artifacts DIR
    safeabr fit-nd       --config C --train-dist NAME --artifacts DIR
    safeabr calibrate    --config C --train-dist NAME --scheme A|V --artifacts DIR
    safeabr run          --config C [--seed N] --out DIR [--train] [--train-dist ..] [--test-dist ..] [--scheme ..]
    safeabr report       --in DIR --out DIR
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import experiment as ex
from . import policies as pol
from .calibration import CalibrationError, calibrate, nd_target, save_calibration
from .env import EnvError, write_manifest
from .episode import ConfigMismatch, Safeguard
from .traces import TraceError, parse_distribution, write_dataset
from .uncertainty import OcSvmError, load_ocsvm, save_ocsvm

log = logging.getLogger("safeabr")

SCHEME_ARMS = {"none": "vanilla", "vanilla": "vanilla", "ND": "ND", "A": "A", "V": "V"}


def _config(args) -> ex.ExperimentConfig:
    cfg = ex.load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _dist(cfg, name: str) -> str:
    if name not in cfg.distributions:
        raise ex.ExperimentError(f"unknown distribution {name!r}; known: {', '.join(cfg.distributions)}")
    return name


def _one(values, flag: str) -> str:
    if not values or len(values) != 1:
        raise ex.ExperimentError(f"{flag} takes exactly one distribution here")
    return values[0]


def cmd_gen_traces(args) -> None:
    if args.config:
        cfg = _config(args)
        name = _dist(cfg, args.dist)
    else:
        # bare spec such as gamma:shape=2,scale=2
        cfg = ex.ExperimentConfig()
        if args.seed is not None:
            cfg.seed = args.seed
        name = args.dist
        cfg.distributions = {name: parse_distribution(args.dist)}
    if args.count is not None:
        cfg.traces_per_dist = args.count
    if args.steps is not None:
        cfg.trace_steps = args.steps
    split = ex.dataset(cfg, name)
    out = Path(args.out)
    for part in ("train", "validation", "test"):
        write_dataset(getattr(split, part), out / part)
    print(f"wrote {len(split.train)}/{len(split.validation)}/{len(split.test)} traces under {out}")


def cmd_gen_manifest(args) -> None:
    cfg = _config(args)
    write_manifest(ex.build_manifest(cfg), args.out)
    print(f"wrote {args.out}")


def cmd_train(args) -> None:
    cfg = _config(args)
    manifest = ex.build_manifest(cfg)
    if args.out:
        # one agent only
        name = _dist(cfg, _one(args.train_dist, "--train-dist"))
        hyper = replace(cfg.agent, data_seed=ex.derive_seed(cfg.seed, "agent-data", name))
        agent = pol.train_agent(ex.dataset(cfg, name).train, manifest, cfg.env, hyper, ex.agent_seeds(cfg, name)[0])
        pol.save_agent(agent, args.out)
        print(f"wrote {args.out} (last-50-episode mean QoE {sum(agent.curve[-50:]) / len(agent.curve[-50:]):.1f})")
        return
    if not args.artifacts:
        raise ex.ExperimentError("train needs --artifacts DIR (full stack) or --out FILE (single agent)")
    for name in args.train_dist or cfg.train_dists:
        stack = ex.train_stack(cfg, _dist(cfg, name), manifest)
        ex.save_stack(stack, args.artifacts)
        for s, c in stack.calibrations.items():
            print(f"{name} {s}: alpha={c.alpha:.6g} l={c.l_consecutive} achieved={c.achieved_in_dist_qoe:.2f} "
                  f"target={c.target_qoe:.2f}")


def cmd_train_ensemble(args) -> None:
    cfg = _config(args)
    if args.count is not None:
        cfg.ensemble_size = args.count
    name = _dist(cfg, _one(args.train_dist, "--train-dist"))
    manifest = ex.build_manifest(cfg)
    split = ex.dataset(cfg, name)
    d = Path(args.artifacts) / name
    d.mkdir(parents=True, exist_ok=True)
    if args.kind == "agents":
        hyper = replace(cfg.agent, data_seed=ex.derive_seed(cfg.seed, "agent-data", name))
        members = pol.train_ensemble("agents", cfg.ensemble_size, seeds=ex.agent_seeds(cfg, name),
                                     train_traces=split.train, manifest=manifest, env_cfg=cfg.env, agent_hyper=hyper)
        for i, a in enumerate(members):
            pol.save_agent(a, d / f"agent-{i}.npz")
    else:
        policy_path = Path(args.policy) if args.policy else d / "agent-0.npz"
        if not policy_path.is_file():
            raise ex.ExperimentError(f"value ensemble needs the acting agent; {policy_path} not found")
        hyper = replace(cfg.value, data_seed=ex.derive_seed(cfg.seed, "value-data", name))
        members = pol.train_ensemble("values", cfg.ensemble_size, seeds=ex.value_seeds(cfg, name),
                                     train_traces=split.train, manifest=manifest, env_cfg=cfg.env,
                                     value_hyper=hyper, policy=pol.load_agent(policy_path))
        for i, v in enumerate(members):
            pol.save_value(v, d / f"value-{i}.npz")
    print(f"wrote {len(members)} {args.kind} under {d}")


def cmd_fit_nd(args) -> None:
    cfg = _config(args)
    name = _dist(cfg, _one(args.train_dist, "--train-dist"))
    model = ex.fit_detector(cfg, name, ex.dataset(cfg, name), ex.build_manifest(cfg))
    d = Path(args.artifacts) / name
    d.mkdir(parents=True, exist_ok=True)
    save_ocsvm(model, d / "nd.txt")
    print(f"OC-SVM: {len(model.alphas)} support vectors from {model.n_train} samples, rho={model.rho:.6g}")


def cmd_calibrate(args) -> None:
    cfg = _config(args)
    name = _dist(cfg, _one(args.train_dist, "--train-dist"))
    d = Path(args.artifacts) / name
    try:
        agents = [pol.load_agent(d / f"agent-{i}.npz") for i in range(cfg.ensemble_size)]
        values = [pol.load_value(d / f"value-{i}.npz") for i in range(cfg.ensemble_size)]
        detector = load_ocsvm(d / "nd.txt")
    except FileNotFoundError as exc:
        raise ex.ExperimentError(f"missing artifact: {exc.filename}") from None
    sg = Safeguard(agents, values, detector, cfg.reservoir, cfg.cushion, cfg.recompute_mean)
    manifest = ex.build_manifest(cfg)
    split = ex.dataset(cfg, name)
    target = nd_target(sg, split.validation, manifest, cfg.env, cfg.nd_l, cfg.sticky)
    schemes = ["A", "V"] if args.scheme in (None, "all") else [args.scheme]
    for s in schemes:
        res = calibrate(s, sg, split.validation, manifest, target, cfg.env, cfg.grid, cfg.k_window, cfg.sticky)
        save_calibration(res, d / f"calibration-{s}.txt")
        flag = "" if res.within_tolerance else "  (outside tolerance)"
        print(f"{s}: alpha={res.alpha:.6g} l={res.l_consecutive} achieved={res.achieved_in_dist_qoe:.2f} "
              f"target={target:.2f}{flag}")


def _print_arms(report: ex.MatrixReport) -> None:
    print("arm       ood_cells      min      max     mean   median")
    for a, n, lo, hi, mu, md in report.arm_stats:
        print(f"{a:<9} {n:>9} {lo:>8.3f} {hi:>8.3f} {mu:>8.3f} {md:>8.3f}")


def cmd_run(args) -> None:
    cfg = _config(args)
    if args.jobs is not None:
        cfg.jobs = args.jobs
    arms = None
    if args.scheme:
        arms = sorted({SCHEME_ARMS[s] for s in args.scheme} | {"BB", "Random"}, key=ex.ARMS.index)
    artifacts = Path(args.artifacts) if args.artifacts else Path(args.out) / "artifacts"
    report = ex.run_matrix(cfg, artifacts, train=args.train, train_filter=args.train_dist,
                           test_filter=args.test_dist, arm_filter=arms)
    for p in ex.emit_report(report, args.out):
        print(f"wrote {p}")
    _print_arms(report)


def cmd_report(args) -> None:
    report = ex.report_from_dir(args.in_dir)
    for p in ex.emit_report(report, args.out or args.in_dir):
        print(f"wrote {p}")
    _print_arms(report)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="safeabr", description="ABR simulation with an online safety layer.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True, required=True):
        sp.add_argument("--config", required=required, help="experiment INI file")
        if seed:
            sp.add_argument("--seed", type=int, help="override [experiment] seed")

    sp = sub.add_parser("gen-traces", help="write one distribution's train/validation/test traces")
    common(sp, required=False)
    sp.add_argument("--dist", required=True, help="distribution name from the config, or a spec without --config")
    sp.add_argument("--count", type=int, help="number of traces")
    sp.add_argument("--steps", type=int, help="samples per synthetic trace")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_traces)

    sp = sub.add_parser("gen-manifest", help="write the video manifest")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_manifest)

    sp = sub.add_parser("train", help="train agents, value functions, detector and calibrate")
    common(sp)
    sp.add_argument("--train-dist", "--dist", nargs="+", dest="train_dist")
    sp.add_argument("--artifacts", help="write the full stack under DIR/NAME/")
    sp.add_argument("--out", help="train a single agent and write it to FILE")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("train-ensemble", help="train one ensemble")
    common(sp)
    sp.add_argument("--train-dist", nargs="+", required=True)
    sp.add_argument("--kind", choices=("agents", "values"), required=True)
    sp.add_argument("--count", type=int)
    sp.add_argument("--policy", help="agent .npz evaluated by a value ensemble (default: agent-0 in artifacts)")
    sp.add_argument("--artifacts", required=True)
    sp.set_defaults(func=cmd_train_ensemble)

    sp = sub.add_parser("fit-nd", help="fit the novelty detector")
    common(sp)
    sp.add_argument("--train-dist", nargs="+", required=True)
    sp.add_argument("--artifacts", required=True)
    sp.set_defaults(func=cmd_fit_nd)

    sp = sub.add_parser("calibrate", help="calibrate ensemble thresholds against ND")
    common(sp)
    sp.add_argument("--train-dist", nargs="+", required=True)
    sp.add_argument("--scheme", choices=("A", "V", "all"))
    sp.add_argument("--artifacts", required=True)
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("run", help="evaluate the train x test matrix and write reports")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--artifacts", help="artifact directory (default: OUT/artifacts)")
    sp.add_argument("--train", action="store_true", help="train missing artifacts instead of failing")
    sp.add_argument("--train-dist", nargs="+")
    sp.add_argument("--test-dist", nargs="+")
    sp.add_argument("--scheme", nargs="+", choices=tuple(SCHEME_ARMS))
    sp.add_argument("--jobs", type=int)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("report", help="rebuild summary tables from episodes.csv")
    sp.add_argument("--in", dest="in_dir", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_report)
    return p


ERRORS = (ex.ExperimentError, TraceError, EnvError, OcSvmError, CalibrationError, ConfigMismatch,
          pol.TrainingDiverged, OSError, ValueError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        args.func(args)
    except ERRORS as exc:
        print(f"safeabr {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
