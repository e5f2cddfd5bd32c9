"""Command-line entry point: ``swapmark <command> [options]``.

Every command reads the shipped defaults, then ``--config FILE``, then
``--set section.key=value`` overrides, then ``--seed``. ``verify`` exits 0
when ownership is verified (H0 rejected) and 1 otherwise; usage and runtime
errors exit 2.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import config as cfgmod
from . import experiment as ex
from . import toy_clip as tc
from . import verification as vf
from .attacks import prune_attack
from .config import ATTACK_NAMES
from .data import save_dataset
from .watermark import embed_bwap, embed_swap

log = logging.getLogger("swapmark")


def _config(args) -> cfgmod.ExperimentConfig:
    overrides = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise SystemExit(f"--set expects section.key=value, got {item!r}")
        overrides[key.strip()] = value
    if args.seed is not None:
        overrides["run.seed"] = str(args.seed)
    if getattr(args, "out", None):
        overrides["run.output_dir"] = args.out
    return cfgmod.load(args.config, overrides)


def _outdir(cfg, *subs) -> Path:
    out = Path(cfg.run.output_dir)
    for sub in subs:
        (out / sub).mkdir(parents=True, exist_ok=True)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.echo")
    return out


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(ex._jsonable(payload), indent=2, sort_keys=True))
    print(path)


def _scenario(cfg, checkpoint=None):
    if checkpoint is None:
        return ex.build_scenario(cfg), None
    model, prompts = tc.load_checkpoint(checkpoint)
    return ex.build_scenario(cfg, model), prompts


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    out = _outdir(cfg)
    sc = ex.build_scenario(cfg)
    save_dataset(sc.dataset, out / "dataset.txt")
    for name in ("train", "adversary", "base_eval", "novel"):
        save_dataset(getattr(sc, name), out / f"{name}.txt")
    print(out)
    return 0


def cmd_embed(args) -> int:
    cfg = _config(args)
    out = _outdir(cfg, "checkpoints", "logs")
    sc = ex.build_scenario(cfg)
    zero = tc.PromptParams.zeros(sc.model.config)
    if args.method == "swap":
        prompts, tlog = embed_swap(sc.model, zero, sc.train, ex.swap_config(cfg))
        extra = {"mode": "swap", "verification": list(cfg.swap.verification)}
        metrics = ex.swap_metrics(sc, prompts, cfg.swap.verification)
    else:
        bw = ex.bwap_config(cfg)
        prompts, tlog = embed_bwap(sc.model, zero, sc.train, bw)
        extra = {"mode": "bwap", "target": bw.target_class}
        metrics = ex.bwap_metrics(sc, prompts, bw)
    path = out / "checkpoints" / f"{args.name}.ckpt"
    tc.save_checkpoint(sc.model, prompts, path, extra)
    tlog.to_jsonl(out / "logs" / f"{args.name}.jsonl")
    print(json.dumps({**metrics, "converged": tlog.converged, "note": tlog.note, "checkpoint": str(path)}))
    return 0


def cmd_verify(args) -> int:
    cfg = _config(args)
    out = _outdir(cfg, "audits")
    sc, prompts = _scenario(cfg, args.checkpoint)
    if args.kind == "swap":
        classes = args.classes.split(",") if args.classes else list(cfg.swap.verification)
        classes = [c.strip() for c in classes]
        report = ex.swap_audit(sc, prompts, classes)
    else:
        report = ex.bwap_audit(sc, prompts, ex.bwap_config(cfg))
    d = report.to_dict()
    d["seed"] = cfg.run.seed
    d["checkpoint"] = str(args.checkpoint)
    _write_json(out / "audits" / f"{args.name}.json", d)
    print(f"p={report.p_value:.4g} verdict={'verified' if report.verdict else 'not verified'}")
    return 0 if report.verdict else 1


def cmd_attack(args) -> int:
    cfg = _config(args)
    out = _outdir(cfg, "attacks", "checkpoints")
    sc, prompts = _scenario(cfg, args.checkpoint)
    if args.fraction is not None:
        cfg.attacks.prune_fractions = [args.fraction]
    refs = {}
    res = ex.SWAP_ATTACKS[args.attack](sc, prompts, refs)
    _write_json(out / "attacks" / f"{args.attack}.json", res.to_dict())
    if args.attack == "prune" and args.fraction is not None:
        tc.save_checkpoint(sc.model, prune_attack(prompts, args.fraction),
                           out / "checkpoints" / f"pruned-{args.fraction:g}.ckpt")
    return 0


def cmd_bound(args) -> int:
    inputs = vf.TheoremBoundInputs(m=args.m, n=args.n, tau_thr=args.tau, alpha=args.alpha)
    res = vf.theorem_bound(inputs)
    print(json.dumps(dict(d_star=res.d_star, t_alpha=res.t_alpha, a=res.a, delta=res.delta,
                          residual=res.quadratic(inputs, res.d_star))))
    return 0


def cmd_mc_validate(args) -> int:
    rate = vf.monte_carlo_validate(args.p_success, args.m, args.n, tau_thr=args.tau, alpha=args.alpha,
                                   trials=args.trials, seed=args.seed if args.seed is not None else 0,
                                   model=args.model, value=args.value)
    print(json.dumps(dict(rejection_rate=rate, p_success=args.p_success, m=args.m, n=args.n, tau_thr=args.tau,
                          alpha=args.alpha, trials=args.trials, model=args.model, value=args.value)))
    return 0


def cmd_bench(args) -> int:
    cfg = _config(args)
    if not args.no_sweeps:
        cfg.run.sweeps = True
    record = ex.run_experiment(cfg)
    out = Path(cfg.run.output_dir)
    if record.ok:
        from .plotting import emit_plots
        for p in emit_plots([record], out / "plots"):
            print(p)
    print(out / "record.json")
    if not record.ok:
        print(f"failed at stage {record.failed_stage}: {record.error}", file=sys.stderr)
        return 2
    return 0


def cmd_plot(args) -> int:
    from .plotting import emit_plots
    records = [ex.ResultRecord.load(p) for p in args.records]
    for p in emit_plots(records, args.out):
        print(p)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file (defaults to the shipped defaults)")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config key")
    common.add_argument("--seed", type=int, help="override the master seed")
    common.add_argument("--out", help="results directory (run.output_dir)")

    p = argparse.ArgumentParser(prog="swapmark", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", parents=[common], help="generate and save the synthetic dataset")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("embed", parents=[common], help="embed a watermark into fresh prompts")
    s.add_argument("method", choices=("swap", "bwap"))
    s.add_argument("--name", default="watermarked", help="checkpoint name")
    s.set_defaults(func=cmd_embed)

    s = sub.add_parser("verify", parents=[common], help="audit a checkpoint; exit 0 when verified")
    s.add_argument("checkpoint")
    s.add_argument("--kind", choices=("swap", "bwap"), default="swap")
    s.add_argument("--classes", help="comma-separated verification classes (default: swap.verification)")
    s.add_argument("--name", default="verify")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("attack", parents=[common], help="run one attack against a watermarked checkpoint")
    s.add_argument("attack", choices=ATTACK_NAMES)
    s.add_argument("checkpoint")
    s.add_argument("--fraction", type=float, help="single pruning fraction (prune only)")
    s.set_defaults(func=cmd_attack)

    s = sub.add_parser("bound", help="largest mean rank distance that still rejects H0")
    s.add_argument("--m", type=int, default=100)
    s.add_argument("--n", type=int, default=4)
    s.add_argument("--tau", type=float, default=0.5)
    s.add_argument("--alpha", type=float, default=0.01)
    s.set_defaults(func=cmd_bound)

    s = sub.add_parser("mc-validate", help="Monte Carlo rejection rate of the audit")
    s.add_argument("--p-success", type=float, required=True)
    s.add_argument("--m", type=int, default=100)
    s.add_argument("--n", type=int, default=4)
    s.add_argument("--tau", type=float, default=0.5)
    s.add_argument("--alpha", type=float, default=0.01)
    s.add_argument("--trials", type=int, default=10000)
    s.add_argument("--model", choices=vf.DISTANCE_MODELS, default="quasi-bernoulli")
    s.add_argument("--value", type=float, help="distance for the fixed and extremal models")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_mc_validate)

    s = sub.add_parser("bench", parents=[common], help="full scenario with sweeps and plots")
    s.add_argument("--no-sweeps", action="store_true", help="skip the sensitivity sweeps")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("plot", help="render figures from saved record.json files")
    s.add_argument("records", nargs="+")
    s.add_argument("--out", default="plots")
    s.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, tc.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
