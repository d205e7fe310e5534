"""Command-line surface: probing, curve dumps, sweeps, and the training loop.

Seven subcommands: ``probe`` (one parameter set, full report), ``curves``
(CSV of grade curves over an ability range), ``verify`` (randomized property
sweep), ``synth`` (generate a dataset with a planted head), ``train``,
``eval``, and ``fd-check`` (finite-difference gradient audit).

Exit codes: 0 success, 1 a check ran and failed, 2 bad usage or input.
Every command takes ``--json`` for machine-readable output; human output
carries the same numbers formatted to 9 significant digits.  Randomized
commands print their seeds up front so any report can be reproduced.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

import numpy as np

from . import core
from .core import AgrmParams
from .data import (
    SynthConfig,
    dim_counts,
    load_records,
    normalize_mos,
    save_records,
    split,
    synth_generate,
)
from .gradients import fd_check
from .head import ABLATIONS, ACTIVATIONS, AGG_MODES, FeaturePair, HeadConfig, head_forward, init_head
from .trainer import (
    Checkpoint,
    TrainConfig,
    evaluate,
    evaluate_by_dim,
    load_checkpoint,
    preset,
    save_checkpoint,
    train,
)

PRESET_CHOICES = ("paper", "recovery")


def _fmt(x) -> str:
    return format(float(x), ".9g")


def _emit(args, doc: dict, human_lines) -> None:
    if args.json:
        print(json.dumps(doc, sort_keys=True))
    else:
        for line in human_lines:
            print(line)


# ---------------------------------------------------------------- probe

def cmd_probe(args) -> int:
    params = AgrmParams(
        theta=args.theta, beta1=args.beta1, gamma=args.gamma,
        d=args.d, alpha=args.alpha, k=args.k,
    )
    probs = core.agrm_probs(params)
    q = core.expected_score(probs)
    q_rescaled = core.rescale_score(q, params.k)
    modal = core.modal_grade(probs)
    threshold = core.gamma_threshold(params.d, params.alpha)
    above = params.gamma > threshold
    unimodal = core.is_unimodal(probs)
    try:
        theta1, theta2 = core.boundary_thetas(params)
        boundary_note = None
    except ValueError as exc:
        theta1 = theta2 = None
        boundary_note = str(exc)

    doc = {
        "params": {
            "theta": params.theta, "beta1": params.beta1, "gamma": params.gamma,
            "d": params.d, "alpha": params.alpha, "k": params.k,
        },
        "probs": list(probs),
        "q": q,
        "q_rescaled": q_rescaled,
        "modal_grade": modal,
        "gamma_threshold": threshold,
        "above_threshold": above,
        "unimodal": unimodal,
        "theta1": theta1,
        "theta2": theta2,
    }
    lines = [
        f"probe: theta={_fmt(params.theta)} beta1={_fmt(params.beta1)} "
        f"gamma={_fmt(params.gamma)} d={_fmt(params.d)} "
        f"alpha={_fmt(params.alpha)} k={params.k}",
    ]
    lines += [f"P_{m + 1} = {_fmt(p)}" for m, p in enumerate(probs)]
    lines += [
        f"sum = {_fmt(sum(probs))}",
        f"Q = {_fmt(q)}",
        f"Q_rescaled = {_fmt(q_rescaled)}",
        f"modal_grade = {modal}",
        f"gamma_threshold = {_fmt(threshold)}",
    ]
    if above:
        lines.append(
            f"spacing {_fmt(params.gamma)} > threshold: unimodality guaranteed"
        )
    else:
        lines.append(
            f"spacing {_fmt(params.gamma)} <= threshold {_fmt(threshold)}: "
            "unimodality not guaranteed"
        )
    if theta1 is not None:
        lines += [f"theta1 = {_fmt(theta1)}", f"theta2 = {_fmt(theta2)}"]
    else:
        lines.append(f"boundary crossings: undefined ({boundary_note})")
    lines.append(f"unimodal: {'yes' if unimodal else 'NO'}")
    _emit(args, doc, lines)
    return 0


# ---------------------------------------------------------------- curves

def cmd_curves(args) -> int:
    if args.steps < 2:
        raise ValueError(f"steps must be >= 2, got {args.steps}")
    span = 4.0 * args.gamma * args.k
    lo = args.theta_min if args.theta_min is not None else args.beta1 - span
    hi = args.theta_max if args.theta_max is not None else args.beta1 + span
    if not lo < hi:
        raise ValueError(f"theta range is empty: [{lo}, {hi}]")
    thetas = np.linspace(lo, hi, args.steps)
    rows = []
    for theta in thetas:
        p = AgrmParams(
            theta=float(theta), beta1=args.beta1, gamma=args.gamma,
            d=args.d, alpha=args.alpha, k=args.k,
        )
        probs = core.agrm_probs(p)
        rows.append([float(theta), *probs, core.expected_score(probs)])

    header = ["theta"] + [f"p{m}" for m in range(1, args.k + 1)] + ["q"]
    if args.json:
        print(json.dumps({"header": header, "rows": rows}, sort_keys=True))
        return 0
    text = ",".join(header) + "\n"
    text += "".join(",".join(_fmt(v) for v in row) + "\n" for row in rows)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as handle:
            handle.write(text)
        print(f"wrote {len(rows)} rows to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------- verify

def _verify_draw(rng, args, threshold):
    k = int(rng.integers(args.k_min, args.k_max + 1))
    if args.allow_sub_threshold:
        gamma = rng.uniform(0.05, threshold)
    else:
        # margin - U[0, margin) lands in (0, margin], keeping gamma strictly above
        gamma = threshold + (args.gamma_margin - rng.uniform(0.0, args.gamma_margin))
    beta1 = rng.uniform(-5.0, 5.0)
    span = (k - 2) * gamma
    theta = rng.uniform(beta1 - 20.0, beta1 + span + 20.0)
    return AgrmParams(theta=theta, beta1=beta1, gamma=gamma, k=k)


def cmd_verify(args) -> int:
    if args.samples < 0:
        raise ValueError(f"samples must be >= 0, got {args.samples}")
    threshold = core.gamma_threshold()
    mode = "sub-threshold" if args.allow_sub_threshold else "standard"
    header = (
        f"verify: samples={args.samples} seed={args.seed} "
        f"k=[{args.k_min},{args.k_max}] mode={mode}"
    )
    if args.samples == 0:
        doc = {"samples": 0, "seed": args.seed, "violations": {}, "pass": True}
        _emit(args, doc, [header, "warning: 0 samples, vacuous pass"])
        return 0
    if not 2 <= args.k_min <= args.k_max:
        raise ValueError(f"need 2 <= k-min <= k-max, got [{args.k_min}, {args.k_max}]")

    rng = np.random.default_rng(args.seed)
    tol = 1e-12
    counts = {"unimodality": 0, "normalization": 0, "closed_form": 0,
              "shift": 0, "boundary": 0}
    first = {}

    def flag(family, params):
        counts[family] += 1
        first.setdefault(
            family,
            {"theta": params.theta, "beta1": params.beta1,
             "gamma": params.gamma, "k": params.k},
        )

    expected_nonunimodal = 0
    for _ in range(args.samples):
        p = _verify_draw(rng, args, threshold)
        c = p.d * p.alpha
        try:
            probs = core.agrm_probs(p)
        except ValueError:
            flag("normalization", p)
            continue

        if not core.is_unimodal(probs, tol=tol):
            if args.allow_sub_threshold:
                expected_nonunimodal += 1
            else:
                flag("unimodality", p)

        # middle-band closed form against naive sigmoid differences, probed
        # where the naive route is itself trustworthy
        if p.k >= 3:
            m = int(rng.integers(2, p.k))
            z = rng.uniform(-30.0, 30.0)
            theta_cf = (p.beta1 + (m - 2) * p.gamma) + z / c
            pcf = dataclasses.replace(p, theta=theta_cf)
            closed = core.agrm_probs(pcf)[m - 1]
            naive = core.category_probs(pcf.to_general())[m - 1]
            if abs(closed - naive) > tol:
                flag("closed_form", pcf)

        # adjacent middle grades are translations of each other
        if p.k >= 4:
            m = int(rng.integers(2, p.k - 1))
            shifted = core.agrm_probs(dataclasses.replace(p, theta=p.theta - p.gamma))
            if abs(probs[m] - shifted[m - 1]) > tol:
                flag("shift", p)

        # edge-grade handover points and their placement
        if p.k >= 3 and not args.allow_sub_threshold:
            theta1, theta2 = core.boundary_thetas(p)
            pv1 = core.agrm_probs(dataclasses.replace(p, theta=theta1))
            pv2 = core.agrm_probs(dataclasses.replace(p, theta=theta2))
            ok = (
                abs(pv1[0] - pv1[1]) < 1e-9
                and abs(pv2[p.k - 2] - pv2[p.k - 1]) < 1e-9
                and theta1 < core.peak_ability(p, 2)
                and theta2 > core.peak_ability(p, p.k - 1)
            )
            if not ok:
                flag("boundary", p)

    violations = sum(counts.values())
    doc = {
        "samples": args.samples,
        "seed": args.seed,
        "violations": counts,
        "expected_nonunimodal": expected_nonunimodal,
        "pass": violations == 0,
    }
    lines = [header]
    lines += [f"{name}: {n} violations" for name, n in counts.items()]
    if args.allow_sub_threshold:
        lines.append(
            f"non-unimodal instances found: {expected_nonunimodal} "
            "(expected below threshold)"
        )
    for family, params in first.items():
        lines.append(
            f"counterexample [{family}]: theta={_fmt(params['theta'])} "
            f"beta1={_fmt(params['beta1'])} gamma={_fmt(params['gamma'])} "
            f"k={params['k']}"
        )
    lines.append("PASS" if violations == 0 else "FAIL")
    _emit(args, doc, lines)
    return 0 if violations == 0 else 1


# ---------------------------------------------------------------- synth

def cmd_synth(args) -> int:
    cfg = SynthConfig(
        n=args.n, d_img=args.d_img, d_txt=args.d_txt,
        noise_sigma=args.noise, seed=args.seed, ability_scale=args.ability_scale,
    )
    records, planted = synth_generate(cfg)
    save_records(args.out, records)
    if args.planted_out:
        ckpt = Checkpoint(
            head=planted, config=TrainConfig(), history=[],
            seed=args.seed, epochs_completed=0,
        )
        save_checkpoint(args.planted_out, ckpt)
    counts = dim_counts(records)
    doc = {
        "n": cfg.n, "seed": cfg.seed, "noise_sigma": cfg.noise_sigma,
        "out": str(args.out), "planted_out": args.planted_out,
        "dim_counts": counts,
    }
    lines = [
        f"synth: n={cfg.n} seed={cfg.seed} noise={_fmt(cfg.noise_sigma)} "
        f"dims=({cfg.d_img},{cfg.d_txt})",
        f"wrote {len(records)} records to {args.out} "
        f"({', '.join(f'{d}={counts[d]}' for d in counts)})",
    ]
    if args.planted_out:
        lines.append(f"wrote planted head to {args.planted_out}")
    _emit(args, doc, lines)
    return 0


# ---------------------------------------------------------------- train

def _train_config(args) -> TrainConfig:
    cfg = preset(args.preset)
    overrides = {}
    for name in ("lr", "weight_decay", "epochs", "batch_size", "t_max", "lam", "seed"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def cmd_train(args) -> int:
    records = load_records(args.data)
    if args.normalize:
        records, _ = normalize_mos(records)
    if args.eval_data:
        train_set = records
        eval_set = load_records(args.eval_data)
    else:
        train_set, eval_set = split(records, 1.0 - args.val_fraction, seed=args.split_seed)
    if not train_set:
        raise ValueError("train split is empty")
    cfg = _train_config(args)
    head = init_head(
        train_set[0].f_i.size, train_set[0].f_t.size, seed=args.init_seed
    )
    ckpt = train(cfg, train_set, eval_set, head)
    save_checkpoint(args.out, ckpt)
    history_path = args.history_out or (str(args.out) + ".history.csv")
    with open(history_path, "w", encoding="utf-8") as handle:
        handle.write("epoch,lr,train_loss,eval_srcc,eval_plcc,gamma_violations\n")
        for row in ckpt.history:
            handle.write(
                f"{row.epoch},{_fmt(row.lr)},{_fmt(row.train_loss)},"
                f"{_fmt(row.eval_srcc)},{_fmt(row.eval_plcc)},{row.gamma_violations}\n"
            )
    final = ckpt.history[-1]
    doc = {
        "checkpoint": str(args.out),
        "history": history_path,
        "preset": args.preset,
        "seed": cfg.seed,
        "init_seed": args.init_seed,
        "epochs": cfg.epochs,
        "final_srcc": final.eval_srcc,
        "final_plcc": final.eval_plcc,
    }
    lines = [
        f"train: preset={args.preset} seed={cfg.seed} init_seed={args.init_seed} "
        f"epochs={cfg.epochs} train_n={len(train_set)} eval_n={len(eval_set)}",
        f"final eval: SRCC={_fmt(final.eval_srcc)} PLCC={_fmt(final.eval_plcc)}",
        f"wrote checkpoint to {args.out}",
        f"wrote history to {history_path}",
    ]
    _emit(args, doc, lines)
    return 0


# ---------------------------------------------------------------- eval

def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    records = load_records(args.data)
    overall_srcc, overall_plcc = evaluate(ckpt, records)
    per_dim = evaluate_by_dim(ckpt, records)
    doc = {
        "checkpoint": str(args.checkpoint),
        "n": len(records),
        "srcc": overall_srcc,
        "plcc": overall_plcc,
        "by_dim": {d: {"srcc": s, "plcc": p} for d, (s, p) in sorted(per_dim.items())},
    }
    lines = [
        f"eval: checkpoint={args.checkpoint} n={len(records)}",
        f"overall: SRCC={_fmt(overall_srcc)} PLCC={_fmt(overall_plcc)}",
    ]
    for d, (s, p) in sorted(per_dim.items()):
        lines.append(f"{d}: SRCC={_fmt(s)} PLCC={_fmt(p)}")
    _emit(args, doc, lines)
    return 0


# ---------------------------------------------------------------- fd-check

def cmd_fd_check(args) -> int:
    head_cfg = HeadConfig(
        k=args.k, activation=args.activation, agg_mode=args.agg, ablation=args.ablation
    )
    init_seed, batch_seed = np.random.SeedSequence(args.seed).spawn(2)
    head = init_head(args.d_img, args.d_txt, head_cfg, seed=init_seed)
    rng = np.random.default_rng(batch_seed)
    pairs = [
        FeaturePair(
            f_i=rng.standard_normal(args.d_img), f_t=rng.standard_normal(args.d_txt)
        )
        for _ in range(args.batch)
    ]
    preds = np.array([head_forward(head, fp).q_rescaled for fp in pairs])
    # targets sit a finite distance from the predictions so the absolute-error
    # kink stays outside the difference stencil
    offsets = rng.uniform(0.1, 1.0, size=args.batch) * rng.choice([-1.0, 1.0], size=args.batch)
    targets = preds + offsets
    report = fd_check(head, pairs, targets, step=args.step, tol=args.tol)
    doc = {
        "seed": args.seed,
        "k": args.k,
        "activation": args.activation,
        "agg": args.agg,
        "ablation": args.ablation,
        "step": args.step,
        "tol": args.tol,
        "checked": report.checked,
        "skipped": report.skipped,
        "failures": report.failures,
        "max_rel_err": report.max_rel_err,
        "pass": report.failures == 0,
    }
    lines = [
        f"fd-check: seed={args.seed} k={args.k} activation={args.activation} "
        f"agg={args.agg} ablation={args.ablation} batch={args.batch}",
        f"step={_fmt(args.step)} tol={_fmt(args.tol)}",
        f"checked={report.checked} skipped={report.skipped} failures={report.failures}",
        "max_rel_err = "
        + (_fmt(report.max_rel_err) if report.max_rel_err is not None else "n/a"),
        "PASS" if report.failures == 0 else "FAIL",
    ]
    _emit(args, doc, lines)
    return 0 if report.failures == 0 else 1


# ---------------------------------------------------------------- parser

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="agrm",
        description="Arithmetic graded-response quality scoring toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--json", action="store_true", help="machine-readable output")
        return p

    p = add("probe", cmd_probe, "evaluate one parameter set and report everything")
    p.add_argument("--theta", type=float, required=True)
    p.add_argument("--beta1", type=float, required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--d", type=float, default=1.7)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--k", type=int, default=5)

    p = add("curves", cmd_curves, "emit grade-probability curves as CSV")
    p.add_argument("--beta1", type=float, required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--d", type=float, default=1.7)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--theta-min", type=float, default=None)
    p.add_argument("--theta-max", type=float, default=None)
    p.add_argument("--steps", type=int, default=512)
    p.add_argument("--out", default=None, help="output path (default: stdout)")

    p = add("verify", cmd_verify, "randomized sweep of the model's guarantees")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k-min", type=int, default=2)
    p.add_argument("--k-max", type=int, default=9)
    p.add_argument("--gamma-margin", type=float, default=10.0)
    p.add_argument(
        "--allow-sub-threshold",
        action="store_true",
        help="draw spacings below the guarantee and report (not fail on) "
        "non-unimodal instances",
    )

    p = add("synth", cmd_synth, "generate a synthetic dataset with a planted head")
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--d-img", type=int, default=16)
    p.add_argument("--d-txt", type=int, default=16)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ability-scale", type=float, default=4.0)
    p.add_argument("--out", required=True)
    p.add_argument("--planted-out", default=None, help="also save the planted head")

    p = add("train", cmd_train, "train a head on a record file")
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data", default=None)
    p.add_argument("--val-fraction", type=float, default=0.25)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--normalize", action="store_true", help="min-max scores to [0,5]")
    p.add_argument("--preset", choices=PRESET_CHOICES, default="paper")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--t-max", type=int, default=None)
    p.add_argument("--lam", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--init-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--history-out", default=None)

    p = add("eval", cmd_eval, "score a checkpoint against a record file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)

    p = add("fd-check", cmd_fd_check, "finite-difference audit of the gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--d-img", type=int, default=16)
    p.add_argument("--d-txt", type=int, default=16)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--activation", choices=ACTIVATIONS, default="telu")
    p.add_argument("--agg", choices=AGG_MODES, default="linear")
    p.add_argument("--ablation", choices=ABLATIONS, default="none")
    p.add_argument("--step", type=float, default=1e-4)
    p.add_argument("--tol", type=float, default=1e-4)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
