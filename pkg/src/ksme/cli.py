"""Command-line driver: `ksme solve|sweep|embed|learn|check|plot`.

Exit codes: 0 pass, 1 soft failure, 2 input error, 3 non-convergence,
4 divergence.
"""

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from ksme import (checks, csvio, embedding, learning, metrics,
                  plotting, sweep)
from ksme import mdp as mdp_lib
from ksme.errors import (ConfigError, DimensionError, DivergenceError,
                         InvalidMdpError, KsmeError, NonConvergenceError)
from ksme.fixed_point import DEFAULT_TOL

EXIT_OK, EXIT_SOFT, EXIT_INPUT, EXIT_NONCONV, EXIT_DIVERGED = 0, 1, 2, 3, 4
SOLVE_KINDS = ("ksme", "mico", "reduced_mico", "pi_bisim", "bisim")
JL_PASS_FRACTION = 0.95
LEARN_TOLERANCE = 0.05

log = logging.getLogger("ksme")


class InputError(Exception):
    """Bad user input; maps to exit code 2."""


def _load_json(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as err:
        raise InputError(f"cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise InputError(f"config {path} is not valid JSON: {err}") from err
    if not isinstance(data, dict):
        raise InputError(f"config {path} must hold a JSON object")
    return data


def _resolve(args, file_values, keys):
    """File values overridden by any CLI flag that was given."""
    resolved = dict(file_values)
    for key in keys:
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
    return resolved


def _snapshot(path, resolved):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out_dir(path):
    if path is None:
        raise InputError("--out is required")
    os.makedirs(path, exist_ok=True)
    return path


def _load_chain(resolved):
    if not resolved.get("mdp"):
        raise InputError("--mdp is required")
    mdp = mdp_lib.load_mdp(resolved["mdp"])
    policy = mdp_lib.policy_from_spec(resolved.get("policy", "uniform"),
                                      mdp.n_states, mdp.n_actions)
    return mdp, mdp_lib.induce_chain(mdp, policy)


# --- solve -------------------------------------------------------------------


def cmd_solve(args):
    cfg = _resolve(args, _load_json(args.config),
                   ("mdp", "policy", "which", "tol", "out"))
    cfg.setdefault("policy", "uniform")
    cfg.setdefault("tol", DEFAULT_TOL)
    which = cfg.get("which", ",".join(SOLVE_KINDS))
    if isinstance(which, str):
        which = [w for w in which.split(",") if w]
    unknown = set(which) - set(SOLVE_KINDS)
    if unknown:
        raise InputError(f"unknown metric kinds {sorted(unknown)}")
    cfg["which"] = list(which)
    out = _out_dir(cfg.get("out"))
    mdp, chain = _load_chain(cfg)
    tol = float(cfg["tol"])
    _snapshot(os.path.join(out, "resolved_config.json"), cfg)

    reports = {}
    v_pi = mdp_lib.policy_value(chain)
    v_star = mdp_lib.optimal_value(mdp, tol)
    fields = ["state", "v_pi", "v_star"]
    csvio.write_table(os.path.join(out, "values.csv"), "ksme-values", fields,
                      [dict(zip(fields, (x, float(a), float(b))))
                       for x, (a, b) in enumerate(zip(v_pi.values,
                                                      v_star.values))])
    matrices = {}
    if "ksme" in which:
        k, reports["ksme"] = metrics.kernel_fixed_point(chain, tol)
        matrices["ksme"] = metrics.ksme_distance(k).values
    if "mico" in which or "reduced_mico" in which:
        u, reports["mico"] = metrics.mico_fixed_point(chain, tol)
        matrices["mico"] = u.values
        matrices["reduced_mico"] = metrics.reduce(u).values
    if "pi_bisim" in which:
        d, reports["pi_bisim"] = metrics.pi_bisim_fixed_point(chain, tol)
        matrices["pi_bisim"] = d.values
    if "bisim" in which:
        d, reports["bisim"] = metrics.bisim_fixed_point(mdp, tol)
        matrices["bisim"] = d.values
    for kind in which:
        csvio.write_matrix(os.path.join(out, f"{kind}.csv"), "ksme-matrix",
                           matrices[kind])
    with open(os.path.join(out, "report.json"), "w", encoding="utf-8") as fh:
        json.dump({k: r.to_dict() for k, r in reports.items()}, fh, indent=2,
                  sort_keys=True)
        fh.write("\n")
    return EXIT_OK


# --- sweep -------------------------------------------------------------------


def cmd_sweep(args):
    cfg = _resolve(args, _load_json(args.config), ("seed", "workers", "tol"))
    config = sweep.SweepConfig.from_dict(cfg)
    if args.out is None:
        raise InputError("--out is required (sweep CSV path)")
    parent = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(parent, exist_ok=True)
    _snapshot(args.out + ".config.json", config.to_dict())

    def progress(done, total):
        if done % 50 == 0 or done == total:
            log.info("sweep: %d/%d", done, total)

    rows = sweep.run_sweep(config, progress)
    sweep.write_sweep_csv(args.out, rows)
    flagged = sum(1 for r in rows if r["flag"] != "ok")
    report = sweep.shape_report(sweep.summarize(rows), config.gamma)
    for name, ok in zip(("upper bounds", "mean ordering", "ksme min monotone",
                         "dispersion floor"), dataclasses.astuple(report)):
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    if flagged:
        print(f"{flagged} flagged rows")
        return EXIT_SOFT
    return EXIT_OK


# --- embed -------------------------------------------------------------------


def cmd_embed(args):
    cfg = _resolve(args, _load_json(args.config),
                   ("mdp", "policy", "epsilon", "seeds", "seed", "tol", "out"))
    cfg.setdefault("policy", "uniform")
    cfg.setdefault("epsilon", 0.5)
    cfg.setdefault("seeds", 100)
    cfg.setdefault("seed", 0)
    cfg.setdefault("tol", DEFAULT_TOL)
    epsilon = float(cfg["epsilon"])
    if not 0.0 < epsilon < 1.0:
        raise InputError(f"epsilon must lie in (0, 1), got {epsilon}")
    out = _out_dir(cfg.get("out"))
    _, chain = _load_chain(cfg)
    _snapshot(os.path.join(out, "resolved_config.json"), cfg)

    k, _ = metrics.kernel_fixed_point(chain, float(cfg["tol"]))
    d = metrics.ksme_distance(k)
    quotient = embedding.quotient_states(d)
    exact = embedding.spectral_embed(k, quotient)
    csvio.write_embedding(os.path.join(out, "spectral_embedding.csv"), exact)
    m = embedding.jl_dimension(quotient.n_classes, epsilon)
    fields = ["seed", "epsilon", "m", "n_classes", "max_over", "max_under",
              "pass"]
    rows, passes = [], 0
    for i in range(int(cfg["seeds"])):
        seed = int(cfg["seed"]) + i
        projected = embedding.jl_project(exact, m, seed)
        csvio.write_embedding(os.path.join(out, f"jl_embedding_{seed}.csv"),
                              projected)
        report = embedding.distortion_check(d, projected, quotient, epsilon)
        passes += report.passed
        rows.append(dict(zip(fields, (seed, epsilon, m, quotient.n_classes,
                                      report.max_over, report.max_under,
                                      int(report.passed)))))
    csvio.write_table(os.path.join(out, "distortion.csv"), "ksme-distortion",
                      fields, rows)
    total = max(1, len(rows))
    print(f"m={m} classes={quotient.n_classes} passed {passes}/{len(rows)}")
    return EXIT_OK if passes >= JL_PASS_FRACTION * total else EXIT_SOFT


# --- learn -------------------------------------------------------------------


def cmd_learn(args):
    cfg = _resolve(args, {}, ("mdp", "policy", "tol", "out"))
    cfg.setdefault("policy", "uniform")
    cfg.setdefault("tol", DEFAULT_TOL)
    train_values = _load_json(args.config)
    if args.seed is not None:
        train_values["seed"] = args.seed
    train_cfg = learning.TrainConfig.from_dict(train_values)
    out = _out_dir(cfg.get("out"))
    _, chain = _load_chain(cfg)

    k, _ = metrics.kernel_fixed_point(chain, float(cfg["tol"]))
    exact = metrics.ksme_distance(k).values
    m = train_cfg.m or embedding.quotient_states(exact).n_classes
    cfg["train"] = dict(train_cfg.to_dict(), m=m)
    _snapshot(os.path.join(out, "resolved_config.json"), cfg)

    emb, trace = learning.train(chain, train_cfg, m=m)
    csvio.write_table(os.path.join(out, "loss.csv"), "ksme-loss",
                      ["step", "loss"],
                      [{"step": i, "loss": float(v)}
                       for i, v in enumerate(trace)])
    scale = chain.reward_scale
    learned = embedding.FeatureEmbedding(
        np.sqrt(scale) * emb.phi, tuple(range(chain.n_states)), "learned")
    csvio.write_embedding(os.path.join(out, "learned_embedding.csv"), learned)
    approx = learning.learned_distances(emb, chain.r_span)
    fields = ["x", "y", "learned", "exact", "abs_error", "rel_error"]
    top = float(np.max(exact)) or 1.0
    rows = []
    for x, y in zip(*np.triu_indices(chain.n_states, 1)):
        err = abs(float(approx[x, y] - exact[x, y]))
        rows.append(dict(zip(fields, (int(x), int(y), float(approx[x, y]),
                                      float(exact[x, y]), err, err / top))))
    csvio.write_table(os.path.join(out, "comparison.csv"), "ksme-compare",
                      fields, rows)
    worst = max((r["rel_error"] for r in rows), default=0.0)
    print(f"max error relative to max d_ks: {worst:.4f}")
    return EXIT_OK if worst <= LEARN_TOLERANCE else EXIT_SOFT


# --- check / plot ------------------------------------------------------------


def cmd_check(args):
    seed = 0 if args.seed is None else args.seed
    results = checks.run_checks(seed, args.scale, args.fault)
    print(checks.format_table(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_SOFT


def cmd_plot(args):
    if args.input is None or args.out is None:
        raise InputError("plot needs --input <sweep.csv> and --out <file.svg>")
    rows, _ = sweep.read_sweep_csv(args.input)
    if not rows:
        raise InputError(f"{args.input} has no data rows")
    summary = sweep.summarize(rows)
    plotting.write_svg(summary, args.out)
    if args.png:
        plotting.write_png(summary, args.png)
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "sweep": cmd_sweep, "embed": cmd_embed,
            "learn": cmd_learn, "check": cmd_check, "plot": cmd_plot}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ksme", description="Kernel similarity metrics on finite MDPs.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *names):
        if "mdp" in names:
            p.add_argument("--mdp", help="MDP JSON file")
            p.add_argument("--policy", help="uniform | random:<seed> | file")
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="output directory or file")
        p.add_argument("--seed", type=int)
        p.add_argument("--tol", type=float)
        p.add_argument("--workers", type=int)

    p = sub.add_parser("solve", help="solve metrics on one MDP")
    common(p, "mdp")
    p.add_argument("--which", help="comma-separated kinds: "
                   + ",".join(SOLVE_KINDS))
    p = sub.add_parser("sweep", help="Garnet gap sweep over sigma")
    common(p)
    p = sub.add_parser("embed", help="spectral and random-projection embedding")
    common(p, "mdp")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--seeds", type=int, help="number of projection seeds")
    p = sub.add_parser("learn", help="train the tabular kernel learner")
    common(p, "mdp")
    p = sub.add_parser("check", help="run the invariant suite")
    common(p)
    p.add_argument("--scale", choices=sorted(checks.SCALES), default="small")
    p.add_argument("--fault", choices=[f for f in checks.FAULTS if f],
                   help=argparse.SUPPRESS)
    p = sub.add_parser("plot", help="render a sweep CSV as SVG")
    common(p)
    p.add_argument("--input", help="sweep CSV")
    p.add_argument("--png", help="also write a matplotlib PNG here")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (InputError, InvalidMdpError, ConfigError, DimensionError) as err:
        print(f"error: {err}", file=sys.stderr)
        if isinstance(err, InvalidMdpError):
            for line in getattr(err, "violations", []):
                print(f"  {line}", file=sys.stderr)
        return EXIT_INPUT
    except NonConvergenceError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NONCONV
    except DivergenceError as err:
        print(f"error: {err} (step {err.step})", file=sys.stderr)
        return EXIT_DIVERGED
    except KsmeError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_SOFT


if __name__ == "__main__":
    sys.exit(main())
