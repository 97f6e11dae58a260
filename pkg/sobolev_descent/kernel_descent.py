"""
Empirical kernelized Sobolev descent.

Each step builds the critic between the current particles q and the target
p in the random feature RKHS and moves every particle along its gradient:

    u = (D(q) + lam I)^(-1) (mu(p) - mu(q))
    x <- x + eps * J(x) u

The first variation of mmd2 along this update is -2 (mmd2 - lam rksd2),
exactly at finite samples. It is stored in the trace and can be checked
against central finite differences at runtime (check_first_variation).
"""

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
from tqdm import tqdm

from sobolev_descent.config import FeatureSpec
from sobolev_descent.embeddings import ParticleSet, kdge, kme, mmd2
from sobolev_descent.errors import DivergenceError, ParameterError
from sobolev_descent.features import gradient_field
from sobolev_descent.sobolev import rksd2, solve_critic
from sobolev_descent.traces import DescentTrace, TraceRecord

FD_STEP = 1e-6


@dataclass(frozen=True)
class KernelDescentConfig:
    """
    Parameters of a kernel Sobolev descent.

    :param eps: particle step size
    :param steps: number of iterations L
    :param lam: Tikhonov regularization, > 0
    :param features: FeatureSpec of the descent's own feature map
    :param stop_mmd: stop as soon as mmd2 <= stop_mmd, None to run L steps
    :param trace_every: record one trace row every trace_every steps
    :param check_first_variation: also record the finite difference
     derivative of mmd2 along each recorded update
    :param record_wall_time: False to write wall_ms = 0 for byte identical
     traces
    """
    eps: float
    steps: int
    lam: float
    features: FeatureSpec
    stop_mmd: float = None
    trace_every: int = 1
    check_first_variation: bool = False
    record_wall_time: bool = True

    def __post_init__(self):
        if not self.eps > 0:
            raise ParameterError(f"eps must be > 0, got {self.eps}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ParameterError(f"steps must be a positive integer, got {self.steps}")
        if not self.lam > 0:
            raise ParameterError(
                f"lambda must be > 0, got {self.lam}. "
                "Use 1e-8 for the unregularized regime.")
        if self.stop_mmd is not None and self.stop_mmd < 0:
            raise ParameterError(f"stop_mmd must be >= 0, got {self.stop_mmd}")
        if int(self.trace_every) != self.trace_every or self.trace_every < 1:
            raise ParameterError(
                f"trace_every must be a positive integer, got {self.trace_every}")


@dataclass
class StepDiagnostics:
    """
    Quantities of the state a descent step started from.

    first_variation is the analytic derivative of mmd2 along the update,
    -2 (mmd2 - lam rksd2), always <= 0.
    """
    mmd2: float
    rksd2: float
    first_variation: float
    lam: float
    coeffs: object = None
    first_variation_fd: float = None


def critic_state(fm, target_mu, points, lam):
    """
    Critic between the current cloud and the target.

    :return: (CriticCoeffs, delta, StepDiagnostics)
    """
    mu_q = kme(fm, points)
    delta = np.asarray(target_mu) - np.asarray(mu_q)
    coeffs = solve_critic(kdge(fm, points), target_mu, mu_q, lam)

    value = mmd2(target_mu, mu_q)
    energy = rksd2(coeffs, delta)
    diagnostics = StepDiagnostics(
        mmd2=value,
        rksd2=energy,
        first_variation=-2.0 * (value - lam * energy),
        lam=lam,
        coeffs=coeffs,
    )
    return coeffs, delta, diagnostics


def first_variation_fd(fm, target_mu, points, grads, h=FD_STEP):
    """
    Central finite difference of mmd2(x + h * grads) in h at 0.

    :param points: array of shape (n, d)
    :param grads: update direction, array of shape (n, d)
    """
    forward = mmd2(target_mu, kme(fm, points + h * grads))
    backward = mmd2(target_mu, kme(fm, points - h * grads))
    return (forward - backward) / (2.0 * h)


def descent_step(fm, target_mu, particles, lam, eps, step=None,
                 check_first_variation=False):
    """
    One iteration of the kernel Sobolev descent.

    :param fm: FeatureMap of the descent
    :param target_mu: KmeVec of the target cloud
    :param particles: ParticleSet, current cloud
    :param lam: regularization, > 0
    :param eps: step size
    :param step: step index used in error messages
    :param check_first_variation: compute the finite difference derivative
    :return: (moved ParticleSet, StepDiagnostics of the starting state)
    """
    if not eps > 0:
        raise ParameterError(f"eps must be > 0, got {eps}")
    points = particles.points
    coeffs, _, diagnostics = critic_state(fm, target_mu, points, lam)

    grads = gradient_field(fm, coeffs.u, points)
    if check_first_variation:
        diagnostics.first_variation_fd = first_variation_fd(
            fm, target_mu, points, grads)

    moved = points + eps * grads
    if not np.all(np.isfinite(moved)):
        raise DivergenceError(step if step is not None else -1)
    return ParticleSet(moved), diagnostics


def run_descent(source, target, cfg, eval_fm=None, snapshot_steps=(),
                verbose=False):
    """
    Kernel Sobolev descent from source to target.

    Particles start at the source cloud. Trace row k describes the cloud
    after k updates: its mmd2, the rksd2 and analytic first variation of
    the critic built on it. The final state is always recorded.

    :param source: ParticleSet
    :param target: ParticleSet of the same dimension
    :param cfg: KernelDescentConfig
    :param eval_fm: optional FeatureMap of an independent evaluation kernel,
     its mmd2 is recorded in the eval_mmd2 column
    :param snapshot_steps: steps at which a copy of the cloud is kept in
     trace.snapshots
    :param verbose: print a summary and show a progress bar
    :return: (final ParticleSet, DescentTrace)
    """
    if source.d != target.d:
        raise ParameterError(
            f"Source and target dimensions differ: {source.d} != {target.d}")
    if cfg.features.d != source.d:
        raise ParameterError(
            f"Feature map dimension {cfg.features.d} != particle dimension {source.d}")

    fm = cfg.features.sample()
    target_mu = kme(fm, target)
    eval_target_mu = kme(eval_fm, target) if eval_fm is not None else None
    snapshot_steps = set(int(s) for s in snapshot_steps)

    trace = DescentTrace(metadata={
        "mode": "kernel", "lam": cfg.lam, "eps": cfg.eps,
        "m": cfg.features.m, "sigma": cfg.features.sigma,
        "seed": cfg.features.seed,
    })

    def record(step, diagnostics, wall_ms, points):
        extras = {}
        if eval_fm is not None:
            extras["eval_mmd2"] = mmd2(eval_target_mu, kme(eval_fm, points))
        if diagnostics.first_variation_fd is not None:
            extras["first_variation_fd"] = diagnostics.first_variation_fd
        trace.append(TraceRecord(
            step=step,
            t=step * cfg.eps,
            mmd2=diagnostics.mmd2,
            rksd2=diagnostics.rksd2,
            first_variation=diagnostics.first_variation,
            wall_ms=wall_ms if cfg.record_wall_time else 0.0,
            extras=extras,
        ))

    if verbose:
        print(
            "\n###################"
            "#####################"
            "#####################"
            "#####################"
        )
        print(f"Kernel Sobolev descent: n={source.n}, N={target.n}, d={source.d}")
        print(f"\t{fm}, lambda={cfg.lam:g}, eps={cfg.eps:g}, L={cfg.steps}")

    particles = source.copy()
    if 0 in snapshot_steps:
        trace.snapshots[0] = particles.points.copy()

    step = 0
    stopped = False
    for step in tqdm(range(cfg.steps), disable=not verbose, desc="descent"):
        tic = time.perf_counter()
        recorded = step % cfg.trace_every == 0
        moved, diagnostics = descent_step(
            fm, target_mu, particles, cfg.lam, cfg.eps, step=step + 1,
            check_first_variation=cfg.check_first_variation and recorded,
        )
        wall_ms = 1e3 * (time.perf_counter() - tic)

        if cfg.stop_mmd is not None and diagnostics.mmd2 <= cfg.stop_mmd:
            record(step, diagnostics, wall_ms, particles.points)
            stopped = True
            break
        if recorded:
            record(step, diagnostics, wall_ms, particles.points)

        particles = moved
        if step + 1 in snapshot_steps:
            trace.snapshots[step + 1] = particles.points.copy()

    if not stopped:
        step = cfg.steps
        tic = time.perf_counter()
        _, _, diagnostics = critic_state(fm, target_mu, particles.points, cfg.lam)
        record(step, diagnostics, 1e3 * (time.perf_counter() - tic),
               particles.points)

    trace.metadata["final_step"] = step
    trace.metadata["stopped_early"] = stopped

    if verbose:
        print(f"\tmmd2: {trace[0].mmd2:.6g} -> {trace[-1].mmd2:.6g} "
              f"at step {step}")
        print(
            "#####################"
            "#####################"
            "#####################"
            "###################\n"
        )
    return particles, trace


def time_to_threshold(trace, fraction=0.1):
    """
    First recorded step whose mmd2 is <= fraction * initial mmd2.

    :return: step index, or None if the threshold is never reached
    """
    if len(trace) == 0:
        return None
    threshold = fraction * trace[0].mmd2
    for record in trace:
        if record.mmd2 <= threshold:
            return record.step
    return None


def log_mmd_slope(trace, decades=1.0):
    """
    Least squares slope of log(mmd2) against t over the first decades of
    decay.

    With lam -> 0 and a non singular D the mmd2 decays as exp(-2t), so the
    slope is close to -2.

    :param decades: number of decades of decay to fit
    """
    t = np.array([r.t for r in trace.records])
    values = trace.mmd2
    if len(values) < 2 or values[0] <= 0:
        raise ParameterError("At least two records with positive mmd2 are needed")

    below = np.nonzero(values <= values[0] * 10.0**(-decades))[0]
    end = below[0] + 1 if below.size else len(values)
    end = max(end, 2)
    keep = values[:end] > 0
    slope, _ = np.polyfit(t[:end][keep], np.log(values[:end][keep]), 1)
    return float(slope)


def _sweep_member(args):
    source_points, target_points, cfg, eval_fm = args
    _, trace = run_descent(ParticleSet(source_points), ParticleSet(target_points),
                           cfg, eval_fm=eval_fm)
    return trace


def lambda_sweep(source, target, cfg, lambdas, eval_fm=None, jobs=1,
                 fraction=0.1, verbose=False):
    """
    Run the same descent for several regularizations.

    All members share the feature seed of cfg. Each returned trace holds
    its lambda and its time to reach fraction * initial mmd2 in
    trace.metadata ("lam", "steps_to_threshold").

    :param lambdas: non empty list of positive regularizations
    :param jobs: number of worker processes
    :return: list of DescentTrace, in the order of lambdas
    """
    lambdas = list(lambdas)
    if not lambdas:
        raise ParameterError("The lambda grid is empty")
    for lam in lambdas:
        if not lam > 0:
            raise ParameterError(f"lambda must be > 0, got {lam}")

    members = [(source.points, target.points, replace(cfg, lam=float(lam)), eval_fm)
               for lam in lambdas]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            traces = list(pool.map(_sweep_member, members))
    else:
        traces = [_sweep_member(member) for member in members]

    for lam, trace in zip(lambdas, traces):
        trace.metadata["steps_to_threshold"] = time_to_threshold(trace, fraction)
        if verbose:
            print(f"\tlambda={lam:g}: steps to {fraction:g} x initial mmd2 = "
                  f"{trace.metadata['steps_to_threshold']}")
    return traces


def sweep_report(traces, fraction=0.1):
    """
    Summary of a lambda sweep, one row per member.

    Columns: lambda, steps_to_threshold (empty when not reached),
    initial_mmd2, final_mmd2.
    """
    return pd.DataFrame({
        "lambda": [tr.metadata["lam"] for tr in traces],
        "steps_to_threshold": pd.array(
            [time_to_threshold(tr, fraction) for tr in traces], dtype="Int64"),
        "initial_mmd2": [tr[0].mmd2 for tr in traces],
        "final_mmd2": [tr[-1].mmd2 for tr in traces],
    })
