"""
Command line interface, `sobolev-descent <experiment> [options]`.

Experiments:
    gauss1d         1D Gaussian to 1D Gaussian, KDE snapshots
    color           color transfer between two png images
    morph           morphing between two 2D shapes
    principal-dirs  spectral report and direction fields of a morphing state

Every run writes <out>/manifest.yml first, then its csv / png outputs.
Parameters are resolved as preset defaults < --config file < flags.

Exit codes: 0 success, 2 usage, 3 I/O, 4 numerical failure.
"""

import argparse
import os
import sys

import numpy as np
import pandas as pd

from sobolev_descent.config import (
    FeatureSpec,
    coerce_types,
    load_config_file,
    resolve_config,
)
from sobolev_descent.datasets import (
    BUILTIN_SHAPES,
    builtin_mask,
    image_to_particles,
    kde1d,
    load_png,
    mask_from_csv,
    mask_from_png,
    particles_to_image,
    sample_gauss1d,
    save_png,
    shape_to_particles,
    silverman_bandwidth,
)
from sobolev_descent.embeddings import bandwidth_sweep, kdge, kme
from sobolev_descent.errors import DataIOError, NumericalError, ParameterError
from sobolev_descent.features import sample_feature_map
from sobolev_descent.kernel_descent import (
    KernelDescentConfig,
    lambda_sweep,
    run_descent,
    sweep_report,
)
from sobolev_descent.manifest import RunManifest
from sobolev_descent.neural import NeuralDescentConfig, run_neural_descent
from sobolev_descent.sobolev import (
    direction_fields,
    principal_directions,
    rksd2,
    solve_critic,
)
from sobolev_descent.traces import FLOAT_FORMAT, write_points_csv

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4

# Shared by every experiment, both modes
BASE_DEFAULTS = {
    "mode": "kernel",
    "seed": 0,
    "trace_every": 1,
    "snapshots": None,
    "deterministic": False,
    "jobs": 1,
    "lambdas": None,
    "sweep_fraction": 0.1,
    "normalize": True,
    "stop_mmd": None,
    "check_first_variation": False,
    "eval_m": 300,
    "hidden": [32, 64, 32],
    "slope": 0.2,
    "eta": 5e-4,
    "rho": 1e-6,
    "lambda_alm": 0.01,
    "n_critic": 10,
    "warmup": 50,
    "batch_size": 512,
}

EXPERIMENT_DEFAULTS = {
    "gauss1d": {
        "n": 1000, "source_mean": 0.2, "source_std": 0.005,
        "target_mean": 1.6, "target_std": 0.1,
        "m": 128, "sigma": 0.3, "lam": 1e-2, "eval_sigma": 0.3,
        "kde_bandwidth": None, "kde_points": 512,
    },
    "color": {
        "source": None, "target": None, "max_pixels": 65536,
        "m": 300, "sigma": 0.1, "lam": 1e-2, "eval_sigma": 0.1,
        "bandwidths": [0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0],
    },
    "morph": {
        "source": "heart", "target": "cross", "n": 1000, "mask_size": 64,
        "m": 100, "sigma": 0.3, "lam": 0.01, "eval_sigma": 0.2,
    },
    "principal-dirs": {
        "source": "heart", "target": "cross", "n": 1000, "mask_size": 64,
        "m": 100, "sigma": 0.3, "lam": 0.01, "eval_sigma": 0.2,
        "at_step": 100, "grid": 21, "directions": 5,
    },
}

MODE_DEFAULTS = {
    ("gauss1d", "kernel"): {"eps": 1e-2, "steps": 3000},
    ("gauss1d", "neural"): {"eps": 3e-3, "steps": 800},
    ("color", "kernel"): {"eps": 0.1, "steps": 200},
    ("color", "neural"): {"eps": 3e-3, "steps": 300},
    ("morph", "kernel"): {"eps": 0.01, "steps": 600},
    ("morph", "neural"): {"eps": 3e-3, "steps": 800},
    ("principal-dirs", "kernel"): {"eps": 0.01, "steps": 600},
}

TYPES = {
    "seed": int, "trace_every": int, "snapshots": [int], "deterministic": bool,
    "jobs": int, "lambdas": [float], "sweep_fraction": float, "normalize": bool,
    "stop_mmd": float, "check_first_variation": bool, "eval_m": int,
    "eval_sigma": float, "hidden": [int], "slope": float, "eta": float,
    "rho": float, "lambda_alm": float, "n_critic": int, "warmup": int,
    "batch_size": int, "m": int, "sigma": float, "lam": float, "eps": float,
    "steps": int, "n": int, "source_mean": float, "source_std": float,
    "target_mean": float, "target_std": float, "kde_bandwidth": float,
    "kde_points": int, "max_pixels": int, "bandwidths": [float],
    "mask_size": int, "at_step": int, "grid": int, "directions": int,
}


def preset(experiment, mode):
    """Every default of one experiment in one mode."""
    if (experiment, mode) not in MODE_DEFAULTS:
        raise ParameterError(
            f"Mode '{mode}' is not available for the {experiment} experiment")
    defaults = dict(BASE_DEFAULTS)
    defaults.update(EXPERIMENT_DEFAULTS[experiment])
    defaults.update(MODE_DEFAULTS[(experiment, mode)])
    defaults["mode"] = mode
    return defaults


def _add_common_arguments(parser, neural=True):
    group = parser.add_argument_group("run")
    group.add_argument("--mode", choices=["kernel", "neural"] if neural else ["kernel"],
                       help="kernel (closed form critic) or neural critic")
    group.add_argument("--seed", type=int, help="64-bit seed of every random stream")
    group.add_argument("--out", help="output directory")
    group.add_argument("--config", help="flat yaml configuration file or run manifest")
    group.add_argument("--trace-every", type=int, help="record one trace row every N steps")
    group.add_argument("--snapshots", type=int, nargs="+",
                       help="steps at which the particle cloud is saved")
    group.add_argument("--deterministic", action="store_true", default=None,
                       help="write wall_ms = 0 so that reruns are byte identical")
    group.add_argument("--quiet", action="store_true", help="no progress output")

    group = parser.add_argument_group("descent")
    group.add_argument("--m", type=int, help="number of random features")
    group.add_argument("--sigma", type=float, help="kernel bandwidth")
    group.add_argument("--lambda", dest="lam", type=float,
                       help="regularization, must be > 0")
    group.add_argument("--eps", type=float, help="particle step size")
    group.add_argument("--steps", type=int, help="number of particle steps")
    group.add_argument("--stop-mmd", type=float, help="stop once mmd2 is below this value")
    group.add_argument("--no-normalize", dest="normalize", action="store_false",
                       default=None, help="feature scale c = 1 instead of sqrt(2/m)")
    group.add_argument("--check-first-variation", action="store_true", default=None,
                       help="record the finite difference first variation")
    group.add_argument("--eval-m", type=int, help="features of the evaluation kernel")
    group.add_argument("--eval-sigma", type=float, help="bandwidth of the evaluation kernel")

    if neural:
        group = parser.add_argument_group("neural critic")
        group.add_argument("--hidden", type=int, nargs="+", help="hidden layer sizes")
        group.add_argument("--slope", type=float, help="leaky rectifier negative slope")
        group.add_argument("--eta", type=float, help="ADAM learning rate")
        group.add_argument("--rho", type=float, help="augmented Lagrangian penalty")
        group.add_argument("--lambda-alm", type=float, help="initial Lagrange multiplier")
        group.add_argument("--n-critic", type=int, help="critic updates per particle step")
        group.add_argument("--warmup", type=int, help="critic updates before the first step")
        group.add_argument("--batch-size", type=int,
                           help="mini-batch size for clouds larger than 4096 points")


def _add_sweep_arguments(parser):
    parser.add_argument("--lambdas", type=float, nargs="+",
                        help="run a kernel descent per regularization")
    parser.add_argument("--sweep-fraction", type=float,
                        help="time to threshold is measured at this fraction of the initial mmd2")
    parser.add_argument("--jobs", type=int, help="worker processes of the sweep")


def _add_shape_arguments(parser):
    shapes = ", ".join(BUILTIN_SHAPES)
    parser.add_argument("--source", help=f"source shape: {shapes}, a png or a csv")
    parser.add_argument("--target", help=f"target shape: {shapes}, a png or a csv")
    parser.add_argument("--n", type=int, help="number of points per shape")
    parser.add_argument("--mask-size", type=int, help="resolution of csv and builtin masks")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sobolev-descent",
        description="Particle transport by regularized kernel or neural Sobolev descent.",
    )
    subparsers = parser.add_subparsers(dest="experiment", required=True)

    gauss = subparsers.add_parser("gauss1d", help="1D Gaussian to 1D Gaussian")
    _add_common_arguments(gauss)
    _add_sweep_arguments(gauss)
    gauss.add_argument("--n", type=int, help="samples per distribution")
    gauss.add_argument("--source-mean", type=float)
    gauss.add_argument("--source-std", type=float)
    gauss.add_argument("--target-mean", type=float)
    gauss.add_argument("--target-std", type=float)
    gauss.add_argument("--kde-bandwidth", type=float,
                       help="KDE bandwidth, Silverman's rule by default")
    gauss.add_argument("--kde-points", type=int, help="size of the KDE grid")

    color = subparsers.add_parser("color", help="color transfer between two images")
    _add_common_arguments(color)
    color.add_argument("--source", help="png image to recolor")
    color.add_argument("--target", help="png image giving the colors")
    color.add_argument("--max-pixels", type=int,
                       help="largest accepted number of pixels per image")
    color.add_argument("--bandwidths", type=float, nargs="+",
                       help="bandwidths of the final mmd2 sweep")

    morph = subparsers.add_parser("morph", help="morphing between two 2D shapes")
    _add_common_arguments(morph)
    _add_sweep_arguments(morph)
    _add_shape_arguments(morph)

    dirs = subparsers.add_parser(
        "principal-dirs", help="principal transport directions of a morphing state")
    _add_common_arguments(dirs, neural=False)
    _add_shape_arguments(dirs)
    dirs.add_argument("--at-step", type=int, help="descent step of the analysed state")
    dirs.add_argument("--grid", type=int, help="grid points per axis of the fields")
    dirs.add_argument("--directions", type=int, help="number of leading directions")
    return parser


def resolve_run_config(args):
    """
    Resolved configuration of the parsed arguments.

    :return: dict with every parameter of the experiment
    """
    flags = {k: v for k, v in vars(args).items()
             if k not in ("experiment", "config", "out", "quiet")}
    file_params = load_config_file(args.config) if args.config else {}
    mode = flags.get("mode") or file_params.get("mode") or "kernel"

    defaults = preset(args.experiment, mode)
    resolved = resolve_config(defaults, file_params, flags)
    resolved["mode"] = mode
    return coerce_types(resolved, TYPES)


def _snapshot_steps(cfg):
    steps = cfg["snapshots"] if cfg["snapshots"] is not None else [0, cfg["steps"]]
    for s in steps:
        if not 0 <= s <= cfg["steps"]:
            raise ParameterError(f"Snapshot step {s} is outside [0, {cfg['steps']}]")
    return sorted(set(steps))


def _kernel_config(cfg, d):
    return KernelDescentConfig(
        eps=cfg["eps"],
        steps=cfg["steps"],
        lam=cfg["lam"],
        features=FeatureSpec(d, cfg["m"], cfg["sigma"], cfg["seed"], cfg["normalize"]),
        stop_mmd=cfg["stop_mmd"],
        trace_every=cfg["trace_every"],
        check_first_variation=cfg["check_first_variation"],
        record_wall_time=not cfg["deterministic"],
    )


def _neural_config(cfg):
    return NeuralDescentConfig(
        eps=cfg["eps"],
        n_critic=cfg["n_critic"],
        warmup=cfg["warmup"],
        steps=cfg["steps"],
        hidden=tuple(cfg["hidden"]),
        slope=cfg["slope"],
        eta=cfg["eta"],
        rho=cfg["rho"],
        lam_alm=cfg["lambda_alm"],
        seed=cfg["seed"],
        eval_m=cfg["eval_m"],
        eval_sigma=cfg["eval_sigma"],
        trace_every=cfg["trace_every"],
        batch_size=cfg["batch_size"],
        record_wall_time=not cfg["deterministic"],
    )


def _check_kde(cfg):
    """Density estimate options of the gauss1d experiment."""
    h = cfg.get("kde_bandwidth")
    if h is not None and not h > 0:
        raise ParameterError(f"kde_bandwidth must be > 0, got {h}")
    if "kde_points" in cfg and cfg["kde_points"] < 2:
        raise ParameterError(
            f"kde_points must be at least 2, got {cfg['kde_points']}")


def _eval_features(cfg, d):
    return sample_feature_map(d, cfg["eval_m"], cfg["eval_sigma"], cfg["seed"],
                              purpose="eval_features")


def descend(cfg, source, target, snapshot_steps=(), verbose=False):
    """
    Run the descent selected by cfg["mode"].

    The evaluation kernel is drawn from its own stream, independent from
    the features of a kernel descent.

    :return: (final ParticleSet, DescentTrace)
    """
    eval_fm = _eval_features(cfg, source.d)
    if cfg["mode"] == "kernel":
        return run_descent(source, target, _kernel_config(cfg, source.d),
                           eval_fm=eval_fm, snapshot_steps=snapshot_steps,
                           verbose=verbose)
    return run_neural_descent(source, target, _neural_config(cfg),
                              eval_fm=eval_fm, snapshot_steps=snapshot_steps,
                              verbose=verbose)


def run_sweep(cfg, source, target, manifest, verbose=False):
    """Lambda sweep, one sub directory per member plus sweep.csv."""
    if cfg["mode"] != "kernel":
        raise ParameterError("--lambdas is only available in kernel mode")
    lambdas = cfg["lambdas"]
    paths = [manifest.output(f"trace_lambda_{i:02d}",
                             os.path.join(f"lambda_{i:02d}", "trace.csv"))
             for i in range(len(lambdas))]
    report_path = manifest.output("sweep", "sweep.csv")
    manifest.save()

    traces = lambda_sweep(source, target, _kernel_config(cfg, source.d), lambdas,
                          eval_fm=_eval_features(cfg, source.d), jobs=cfg["jobs"],
                          fraction=cfg["sweep_fraction"], verbose=verbose)
    for path, trace in zip(paths, traces):
        os.makedirs(os.path.dirname(path), exist_ok=True)
        trace.to_csv(path)

    report = sweep_report(traces, cfg["sweep_fraction"])
    report = report.sort_values("lambda", kind="stable").reset_index(drop=True)
    _write_frame(report, report_path)
    return report


def _write_frame(frame, path):
    try:
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    except OSError as e:
        raise DataIOError(f"Could not write {path}: {e}")


def cmd_gauss1d(cfg, out_dir, verbose=False):
    source = sample_gauss1d(cfg["source_mean"], cfg["source_std"], cfg["n"],
                            cfg["seed"], purpose="source")
    target = sample_gauss1d(cfg["target_mean"], cfg["target_std"], cfg["n"],
                            cfg["seed"], purpose="target")
    manifest = RunManifest("gauss1d", cfg, out_dir)

    if cfg["lambdas"]:
        run_sweep(cfg, source, target, manifest, verbose)
        return EXIT_OK

    snapshot_steps = _snapshot_steps(cfg)
    trace_path = manifest.output("trace", "trace.csv")
    kde_paths = {s: manifest.output(f"kde_step_{s}", f"kde_step{s:05d}.csv")
                 for s in snapshot_steps}
    kde_target_path = manifest.output("kde_target", "kde_target.csv")
    manifest.save()

    _, trace = descend(cfg, source, target, snapshot_steps, verbose)
    trace.to_csv(trace_path)

    both = np.concatenate([source.points.ravel(), target.points.ravel()])
    margin = 0.25 * (both.max() - both.min())
    grid = np.linspace(both.min() - margin, both.max() + margin, cfg["kde_points"])

    bandwidths = {}
    clouds = [(s, trace.snapshots[s], kde_paths[s]) for s in snapshot_steps
              if s in trace.snapshots]
    clouds.append(("target", target.points, kde_target_path))
    for key, points, path in clouds:
        h = cfg["kde_bandwidth"]
        if h is None:
            h = silverman_bandwidth(points)
        bandwidths[key] = h
        _write_frame(pd.DataFrame({"x": grid, "density": kde1d(points, h, grid)}), path)

    manifest.metadata.update({
        "kde_bandwidths": bandwidths,
        "initial_mmd2": trace[0].mmd2,
        "final_mmd2": trace[-1].mmd2,
    })
    manifest.save()
    return EXIT_OK


def cmd_color(cfg, out_dir, verbose=False):
    if not cfg["source"] or not cfg["target"]:
        raise ParameterError("color needs --source and --target images")
    source_img = load_png(cfg["source"])
    target_img = load_png(cfg["target"])
    for name, img in (("source", source_img), ("target", target_img)):
        if img.width * img.height > cfg["max_pixels"]:
            raise ParameterError(
                f"The {name} image has {img.width * img.height} pixels, more than "
                f"max_pixels={cfg['max_pixels']}")

    source = image_to_particles(source_img)
    target = image_to_particles(target_img)
    manifest = RunManifest("color", cfg, out_dir)
    manifest.metadata.update({
        "source_resolution": [source_img.width, source_img.height],
        "target_resolution": [target_img.width, target_img.height],
    })

    snapshot_steps = _snapshot_steps(cfg)
    trace_path = manifest.output("trace", "trace.csv")
    image_path = manifest.output("recolored", "recolored.png")
    snapshot_paths = {s: manifest.output(f"recolored_step_{s}", f"recolored_step{s:05d}.png")
                      for s in snapshot_steps}
    sweep_path = manifest.output("bandwidths", "bandwidths.csv")
    manifest.save()

    final, trace = descend(cfg, source, target, snapshot_steps, verbose)
    trace.to_csv(trace_path)
    save_png(particles_to_image(final, source_img.width, source_img.height), image_path)
    for s in snapshot_steps:
        if s in trace.snapshots:
            save_png(particles_to_image(trace.snapshots[s], source_img.width,
                                        source_img.height), snapshot_paths[s])

    initial = bandwidth_sweep(source, target, cfg["bandwidths"], cfg["eval_m"], cfg["seed"])
    after = bandwidth_sweep(final, target, cfg["bandwidths"], cfg["eval_m"], cfg["seed"])
    _write_frame(pd.DataFrame({
        "sigma": [s for s, _ in initial],
        "mmd2_source": [v for _, v in initial],
        "mmd2_final": [v for _, v in after],
    }), sweep_path)

    manifest.metadata.update({
        "initial_mmd2": trace[0].mmd2,
        "final_mmd2": trace[-1].mmd2,
    })
    manifest.save()
    return EXIT_OK


def load_shape(spec, size):
    """Mask of a builtin shape name, a png image or a csv point list."""
    if spec in BUILTIN_SHAPES:
        return builtin_mask(spec, size)
    if spec.lower().endswith(".png"):
        return mask_from_png(spec)
    if spec.lower().endswith(".csv"):
        return mask_from_csv(spec, size)
    raise ParameterError(
        f"Unknown shape '{spec}': expected one of {', '.join(BUILTIN_SHAPES)}, "
        "a .png or a .csv file")


def _shape_clouds(cfg):
    source = shape_to_particles(load_shape(cfg["source"], cfg["mask_size"]),
                                cfg["n"], cfg["seed"], purpose="source")
    target = shape_to_particles(load_shape(cfg["target"], cfg["mask_size"]),
                                cfg["n"], cfg["seed"], purpose="target")
    return source, target


def cmd_morph(cfg, out_dir, verbose=False):
    source, target = _shape_clouds(cfg)
    manifest = RunManifest("morph", cfg, out_dir)

    if cfg["lambdas"]:
        run_sweep(cfg, source, target, manifest, verbose)
        return EXIT_OK

    snapshot_steps = _snapshot_steps(cfg)
    trace_path = manifest.output("trace", "trace.csv")
    target_path = manifest.output("target", "target.csv")
    point_paths = {s: manifest.output(f"points_step_{s}", f"points_step{s:05d}.csv")
                   for s in snapshot_steps}
    manifest.save()

    _, trace = descend(cfg, source, target, snapshot_steps, verbose)
    trace.to_csv(trace_path)
    write_points_csv(target_path, target)
    for s in snapshot_steps:
        if s in trace.snapshots:
            write_points_csv(point_paths[s], trace.snapshots[s])

    manifest.metadata.update({
        "initial_mmd2": trace[0].mmd2,
        "final_mmd2": trace[-1].mmd2,
    })
    manifest.save()
    return EXIT_OK


def cmd_principal_dirs(cfg, out_dir, verbose=False):
    if cfg["at_step"] < 0:
        raise ParameterError(f"at_step must be >= 0, got {cfg['at_step']}")
    if cfg["grid"] < 2 or cfg["directions"] < 1:
        raise ParameterError("grid must be >= 2 and directions >= 1")
    source, target = _shape_clouds(cfg)
    manifest = RunManifest("principal-dirs", cfg, out_dir)
    report_path = manifest.output("spectral", "spectral.csv")
    fields_path = manifest.output("fields", "fields.csv")
    points_path = manifest.output("points", "points.csv")
    target_path = manifest.output("target", "target.csv")
    manifest.save()

    kernel_cfg = _kernel_config(cfg, source.d)
    particles = source
    if cfg["at_step"] > 0:
        step_cfg = KernelDescentConfig(
            eps=kernel_cfg.eps, steps=cfg["at_step"], lam=kernel_cfg.lam,
            features=kernel_cfg.features, record_wall_time=False)
        particles, _ = run_descent(source, target, step_cfg, verbose=verbose)

    fm = kernel_cfg.features.sample()
    mu_p = kme(fm, target)
    mu_q = kme(fm, particles)
    delta = np.asarray(mu_p) - np.asarray(mu_q)
    D = kdge(fm, particles)
    report = principal_directions(D, delta, cfg["lam"])
    coeffs = solve_critic(D, mu_p, mu_q, cfg["lam"])

    axis = np.linspace(-1.0, 1.0, cfg["grid"])
    gx, gy = np.meshgrid(axis, axis)
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    k = min(cfg["directions"], len(report.eigvals))

    report.to_csv(report_path)
    _write_frame(direction_fields(fm, report, grid, range(1, k + 1)), fields_path)
    write_points_csv(points_path, particles)
    write_points_csv(target_path, target)

    manifest.metadata.update({
        "rksd2": rksd2(coeffs, delta),
        "spectral_rksd2": report.rksd2(),
        "reconstruction_error": float(np.linalg.norm(report.reconstruct() - coeffs.u)),
    })
    manifest.save()
    return EXIT_OK


COMMANDS = {
    "gauss1d": cmd_gauss1d,
    "color": cmd_color,
    "morph": cmd_morph,
    "principal-dirs": cmd_principal_dirs,
}


def main(argv=None):
    """
    Entry point of the sobolev-descent command.

    :param argv: list of arguments, sys.argv[1:] by default
    :return: exit status
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    try:
        cfg = resolve_run_config(args)
        # fail before anything is written
        if cfg["mode"] == "kernel":
            _kernel_config(cfg, 1)
        else:
            _neural_config(cfg)
        _check_kde(cfg)
        out_dir = args.out or os.path.join("sobolev_runs", args.experiment)
        verbose = not args.quiet
        if verbose:
            print(
                "\n###################"
                "#####################"
                "#####################"
                "#####################"
            )
            print(f"Experiment {args.experiment} ({cfg['mode']}), seed {cfg['seed']}, "
                  f"output in {out_dir}")
        status = COMMANDS[args.experiment](cfg, out_dir, verbose=verbose)
        if verbose:
            print(f"Done, manifest saved as {os.path.join(out_dir, 'manifest.yml')}")
        return status

    except ParameterError as e:
        print(f"sobolev-descent: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataIOError as e:
        print(f"sobolev-descent: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as e:
        print(f"sobolev-descent: numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
