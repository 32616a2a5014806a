"""Command-line front end: spectrum, project, train, linexp, figratio."""

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .config import FigRatioConfig, LinExpConfig, RunConfig, load_config
from .convspectrum import (
    conv_singular_values,
    load_kernel,
    project_kernel_detailed,
    save_kernel,
    target_sigma,
)
from .errors import ConfigError, ConvergenceError, InputError
from .experiments import run_figratio, write_figratio_csv
from .net.network import save_checkpoint
from .probe import linear_residual_experiment, theorem2_delta
from .tensor import make_rng
from .train import gap_statistics, train_run, write_run_outputs


def _spectrum_summary(report):
    lines = []
    values = report.singular_values
    if values.size and report.sigma_max - values[-1] <= 1e-9 * max(report.sigma_max, 1.0):
        lines.append(f"all singular values = {report.sigma_max:.6f}")
    lines.append(
        f"count={values.size} sigma_max={report.sigma_max:.6g} "
        f"sigma_min_nonzero={report.sigma_min_nonzero:.6g} "
        f"condition={report.condition_number:.6g}"
    )
    return "\n".join(lines)


def cmd_spectrum(args):
    kernel = load_kernel(args.kernel_file)
    report = conv_singular_values(kernel, args.n)
    print(f"kernel k={kernel.k} d={kernel.d} c={kernel.c}, transform n={args.n}")
    print(_spectrum_summary(report))
    out_path = args.json_out or os.path.join(args.out_dir, "spectrum.json")
    os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
    with open(out_path, "w") as fh:
        json.dump(report.to_dict(), fh, sort_keys=True)
        fh.write("\n")
    print(f"wrote {out_path}")
    return 0


def cmd_project(args):
    kernel = load_kernel(args.kernel_file)
    sigma = target_sigma(kernel.d, kernel.c, args.relu_corrected)
    before = conv_singular_values(kernel, args.n)
    report = project_kernel_detailed(
        kernel, args.n, sigma, max_iters=args.max_iters, with_spectra=True
    )
    save_kernel(report.kernel, args.out_file)
    after = report.post_truncation_spectrum
    print(f"target sigma = {sigma:.6f} (relu correction "
          f"{'on' if args.relu_corrected else 'off'})")
    print(f"before: sigma_max={before.sigma_max:.6g} "
          f"sigma_min_nonzero={before.sigma_min_nonzero:.6g}")
    print(f"after:  sigma_max={after.sigma_max:.6g} "
          f"sigma_min_nonzero={after.sigma_min_nonzero:.6g}")
    print(f"newton-schulz iterations: {report.newton_schulz_iterations}")
    print(f"pre-truncation max |sigma - target|:  {report.pre_truncation_max_dev:.3e}")
    print(f"post-truncation max |sigma - target|: {report.post_truncation_max_dev:.3e}")
    print(f"wrote {args.out_file}")
    return 0


def _apply_overrides(cfg, args):
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out_dir is not None:
        cfg.out_dir = args.out_dir
    if getattr(args, "no_lr_decay", False):
        cfg.lr_decay = False
    if getattr(args, "projection_period", None) is not None:
        cfg.projection_period = args.projection_period
    return cfg


def _train_one_seed(payload):
    cfg, seed, out_root = payload
    import dataclasses

    run_cfg = dataclasses.replace(cfg, seed=seed, seeds=())
    result = train_run(run_cfg, keep_net=False)
    run_dir = os.path.join(out_root, result.run_id)
    write_run_outputs(result, run_dir)
    mean_gap, max_gap = gap_statistics(result.loss_rows)
    return (result.run_id, cfg.architecture, cfg.depth, seed,
            mean_gap, max_gap, result.status)


def cmd_train(args):
    cfg = load_config(args.config, RunConfig) if args.config else RunConfig()
    cfg = _apply_overrides(cfg, args)
    os.makedirs(cfg.out_dir, exist_ok=True)
    if cfg.seeds:
        payloads = [(cfg, seed, cfg.out_dir) for seed in cfg.seeds]
        workers = min(os.cpu_count() or 1, 4, len(payloads))
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                rows = list(pool.map(_train_one_seed, payloads))
        else:
            rows = [_train_one_seed(p) for p in payloads]
        rows.sort(key=lambda r: r[0])
        summary = os.path.join(cfg.out_dir, "gap_summary.csv")
        with open(summary, "w") as fh:
            fh.write("run_id,architecture,depth,seed,mean_gap,max_gap,status\n")
            for row in rows:
                fh.write(",".join(
                    f"{v:.9g}" if isinstance(v, float) else str(v) for v in row
                ) + "\n")
        ok = [r for r in rows if r[6] == "ok"]
        aggregate = {
            "architecture": cfg.architecture,
            "depth": cfg.depth,
            "seeds": list(cfg.seeds),
            "completed": len(ok),
            "median_mean_gap": float(np.median([r[4] for r in ok])) if ok else None,
            "median_max_gap": float(np.median([r[5] for r in ok])) if ok else None,
        }
        with open(os.path.join(cfg.out_dir, "gap_aggregate.json"), "w") as fh:
            json.dump(aggregate, fh, sort_keys=True)
            fh.write("\n")
        print(f"wrote {summary}")
        return 0
    result = train_run(cfg)
    run_dir = os.path.join(cfg.out_dir, result.run_id)
    write_run_outputs(result, run_dir)
    if result.net is not None:
        save_checkpoint(result.net, os.path.join(run_dir, "checkpoint"))
    if result.status != "ok":
        print(
            f"training hit a non-finite loss at epoch {result.failed_epoch}, "
            f"step {result.failed_step} (block {result.failed_block}); "
            f"partial telemetry in {run_dir}",
            file=sys.stderr,
        )
        return 2
    last = result.loss_rows[-1]
    print(f"run {result.run_id}: final train_loss={last[2]:.4f} "
          f"train_err={last[3]:.4f} test_loss={last[4]:.4f} test_err={last[5]:.4f}")
    print(f"wrote {run_dir}")
    return 0


def make_target_map(n_dim, gamma, rng):
    """Random map with log-singular values uniform in [-gamma, gamma]."""
    u, _ = np.linalg.qr(rng.normal(size=(n_dim, n_dim)))
    v, _ = np.linalg.qr(rng.normal(size=(n_dim, n_dim)))
    log_sigma = rng.uniform(-gamma, gamma, size=n_dim)
    if n_dim > 1:
        # pin the extremes so the realized gamma matches the request
        log_sigma[0] = gamma
        log_sigma[1] = -gamma
    return u @ np.diag(np.exp(log_sigma)) @ v.T


def cmd_linexp(args):
    cfg = load_config(args.config, LinExpConfig) if args.config else LinExpConfig()
    cfg = _apply_overrides(cfg, args)
    r = make_target_map(cfg.n_dim, cfg.gamma, make_rng(cfg.seed))
    report = linear_residual_experiment(
        r, cfg.L_values, steps=cfg.steps, lr=cfg.lr, batch=cfg.batch,
        noise_std=cfg.noise_std, seeds=cfg.seeds, log_every=cfg.log_every,
    )
    doc = report.to_dict()
    doc["gamma"] = theorem2_delta(r, max(cfg.L_values)).gamma
    doc["config"] = {
        "n_dim": cfg.n_dim, "gamma": cfg.gamma, "L_values": list(cfg.L_values),
        "steps": cfg.steps, "lr": cfg.lr, "batch": cfg.batch,
        "noise_std": cfg.noise_std, "seeds": list(cfg.seeds), "seed": cfg.seed,
    }
    os.makedirs(cfg.out_dir, exist_ok=True)
    out_path = os.path.join(cfg.out_dir, "linexp.json")
    with open(out_path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")
    print("L  max|ratio-1|  max sigma(W)  theorem2 delta  violations")
    for e in report.entries:
        print(f"{e.L:<3d} {e.max_abs_ratio_minus_1:<13.3e} {e.max_sigma_w:<13.3e} "
              f"{e.theorem2_delta:<15.4f} {e.sandwich_violations}")
    print(f"wrote {out_path}")
    return 0


def cmd_figratio(args):
    cfg = load_config(args.config, FigRatioConfig) if args.config else FigRatioConfig()
    cfg = _apply_overrides(cfg, args)
    cells = run_figratio(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    out_path = os.path.join(cfg.out_dir, "figratio.csv")
    write_figratio_csv(out_path, cells)
    for cell in cells:
        tag = " [expected failure cell]" if cell.failure_expected else ""
        print(f"c={cell.c:<3d} d={cell.d:<3d} "
              f"{'projected  ' if cell.projected else 'unprojected'} "
              f"mean ratio {cell.mean_ratio:.4f}{tag}")
    print(f"wrote {out_path}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="convspec",
        description="Conv-operator spectra, Procrustes spectrum projection, "
                    "and instrumented residual-network training",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectrum", help="singular values of a kernel's conv operator")
    p.add_argument("kernel_file")
    p.add_argument("--n", type=int, required=True, help="transform size")
    p.add_argument("--json-out", default=None)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("project", help="project a kernel to its norm-preserving target")
    p.add_argument("kernel_file")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out-file", "-o", required=True)
    p.add_argument("--relu-corrected", action="store_true",
                   help="use the sqrt(2)-corrected target for Conv-ReLU")
    p.add_argument("--max-iters", type=int, default=30)
    p.set_defaults(func=cmd_project)

    for name, fn in (("train", cmd_train), ("linexp", cmd_linexp),
                     ("figratio", cmd_figratio)):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out-dir", default=None)
        if name == "train":
            p.add_argument("--no-lr-decay", action="store_true")
            p.add_argument("--projection-period", type=int, default=None)
        p.set_defaults(func=fn)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
