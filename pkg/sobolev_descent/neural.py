"""
Neural Sobolev descent.

The critic f(x) is a multi layer perceptron with leaky rectifier
activations, trained between particle updates by an augmented Lagrangian
that enforces the gradient norm constraint E_q |grad_x f|^2 = 1:

    L_S(xi, lam) = E(xi) + lam (1 - Omega(xi)) - rho/2 (Omega(xi) - 1)^2
    E     = mean f over the target - mean f over the particles
    Omega = mean |grad_x f|^2 over the particles

xi is updated by ADAM ascent on L_S and lam by lam <- lam - rho (1 - Omega).
Parameter gradients of Omega are exact: with the activation slopes fixed
(their derivative is zero almost everywhere), grad_x f is linear in each
weight matrix, and its derivative is obtained from one backward pass
(delta_k = df/dz_k) and one forward pass of the tangent grad_x f through
the linearized network. Bias gradients of Omega vanish.
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np
from tqdm import tqdm

from sobolev_descent.embeddings import ParticleSet, kme, mmd2
from sobolev_descent.errors import DivergenceError, ParameterError
from sobolev_descent.features import sample_feature_map
from sobolev_descent.streams import make_stream
from sobolev_descent.traces import NEURAL_COLUMNS, DescentTrace, TraceRecord

FULL_BATCH_MAX = 4096
MINI_BATCH = 512


class MlpCritic:
    """
    Multi layer perceptron R^d -> R with leaky rectifier activations.

    :param weights: list of arrays, weights[k] has shape (n_k, n_{k-1}),
     the last one has a single row
    :param biases: list of arrays, biases[k] has shape (n_k,)
    :param slope: negative slope alpha of the leaky rectifier
    """

    def __init__(self, weights, biases, slope=0.2):
        if len(weights) != len(biases) or not weights:
            raise ParameterError("weights and biases must be non empty lists of equal length")
        self.weights = [np.array(w, dtype=np.float64, ndmin=2) for w in weights]
        self.biases = [np.array(b, dtype=np.float64, ndmin=1) for b in biases]
        self.slope = float(slope)

        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[0],):
                raise ParameterError(f"Layer {k}: bias shape {b.shape} != ({w.shape[0]},)")
            if k and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ParameterError(f"Layer {k}: input size does not match layer {k - 1}")
        if self.weights[-1].shape[0] != 1:
            raise ParameterError("The output layer must have a single unit")

    @property
    def sizes(self):
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def dim_input(self):
        return self.weights[0].shape[1]

    def params(self):
        """Flat list [W1, b1, W2, b2, ...] of the parameters."""
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def with_params(self, params):
        """New critic with the same architecture and the given parameters."""
        return MlpCritic(params[0::2], params[1::2], slope=self.slope)

    def n_params(self):
        return int(sum(p.size for p in self.params()))

    def __repr__(self):
        return f"MlpCritic(sizes={self.sizes}, slope={self.slope:g})"


def init_mlp(d, hidden, slope=0.2, seed=0):
    """
    Critic with weights and biases uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].

    :param d: input dimension
    :param hidden: hidden layer sizes, e.g. (32, 64, 32)
    :param slope: leaky rectifier negative slope
    :param seed: seed of the "network" stream
    """
    sizes = [int(d)] + [int(h) for h in hidden] + [1]
    if min(sizes) < 1:
        raise ParameterError(f"Layer sizes must be positive, got {sizes}")
    rng = make_stream(seed, "network")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpCritic(weights, biases, slope=slope)


def _check_batch(net, X, name="batch"):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != net.dim_input:
        raise ParameterError(
            f"{name} must have shape (n, {net.dim_input}), got {X.shape}")
    if X.shape[0] == 0:
        raise ParameterError(f"{name} is empty")
    return X


def _forward_cache(net, X):
    """
    Forward pass keeping the layer inputs and activation slopes.

    :return: (output of shape (n,), activations [a_0 .. a_{L-1}],
     slopes [s_1 .. s_{L-1}])
    """
    activations = [X]
    slopes = []
    a = X
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        z = a @ w.T + b
        # kinks (z == 0) take the negative branch
        s = np.where(z > 0, 1.0, net.slope)
        a = s * z
        activations.append(a)
        slopes.append(s)
    out = a @ net.weights[-1].T + net.biases[-1]
    return out[:, 0], activations, slopes


def _backward_deltas(net, slopes, n):
    """
    deltas[k] = df/dz_{k+1} for every layer, shape (n, n_{k+1}); the
    derivative with respect to the input is returned as well.
    """
    L = len(net.weights)
    deltas = [None] * L
    deltas[-1] = np.ones((n, 1))
    for k in range(L - 1, 0, -1):
        deltas[k - 1] = (deltas[k] @ net.weights[k]) * slopes[k - 1]
    grad_input = deltas[0] @ net.weights[0]
    return deltas, grad_input


def forward(net, x):
    """
    Critic value f(x).

    :param x: a point of shape (d,), or a batch of shape (n, d)
    :return: float for a point, array of shape (n,) for a batch
    """
    single = np.ndim(x) == 1
    out, _, _ = _forward_cache(net, _check_batch(net, x))
    return float(out[0]) if single else out


def grad_x(net, x):
    """
    Gradient of the critic with respect to its input.

    :param x: a point of shape (d,), or a batch of shape (n, d)
    :return: array of shape (d,) or (n, d)
    """
    single = np.ndim(x) == 1
    X = _check_batch(net, x)
    _, _, slopes = _forward_cache(net, X)
    _, grads = _backward_deltas(net, slopes, X.shape[0])
    return grads[0] if single else grads


def _mean_value_grads(net, X, weight):
    """Parameter gradients of weight * sum_i f(x_i) and the values f(x_i)."""
    out, activations, slopes = _forward_cache(net, X)
    deltas, _ = _backward_deltas(net, slopes, X.shape[0])
    grads = []
    for delta, a in zip(deltas, activations):
        grads.append(weight * delta.T @ a)
        grads.append(weight * delta.sum(axis=0))
    return out, grads


def _penalty_grads(net, X):
    """
    Omega = mean_i |grad_x f(x_i)|^2 and its exact parameter gradients.

    grad_x f = P_k W_k Q_k with P_k = df/dz_k and Q_k = da_{k-1}/dx, so
    d|grad_x f|^2 / dW_k = 2 P_k^T (Q_k grad_x f)^T. The tangents
    Q_k grad_x f are propagated forward from v_0 = grad_x f.
    """
    n = X.shape[0]
    _, activations, slopes = _forward_cache(net, X)
    deltas, r = _backward_deltas(net, slopes, n)
    omega = float(np.mean(np.sum(r**2, axis=1)))

    grads = []
    v = r
    for k, (w, delta) in enumerate(zip(net.weights, deltas)):
        grads.append((2.0 / n) * delta.T @ v)
        grads.append(np.zeros(w.shape[0]))
        if k < len(slopes):
            v = (v @ w.T) * slopes[k]
    return omega, grads


def alm_objective_and_grads(net, target_batch, particle_batch, lam_alm, rho):
    """
    Augmented Lagrangian of the critic and its ascent gradients.

    :param net: MlpCritic
    :param target_batch: array of shape (N, d)
    :param particle_batch: array of shape (M, d)
    :param lam_alm: Lagrange multiplier
    :param rho: penalty weight
    :return: (L_S, gradients as a list matching net.params(), E, Omega)
    """
    Y = _check_batch(net, target_batch, "target batch")
    X = _check_batch(net, particle_batch, "particle batch")

    f_target, g_target = _mean_value_grads(net, Y, 1.0 / Y.shape[0])
    f_particles, g_particles = _mean_value_grads(net, X, -1.0 / X.shape[0])
    ehat = float(np.mean(f_target) - np.mean(f_particles))
    omega, g_omega = _penalty_grads(net, X)

    value = ehat + lam_alm * (1.0 - omega) - 0.5 * rho * (omega - 1.0)**2
    factor = lam_alm + rho * (omega - 1.0)
    grads = [gt + gp - factor * go
             for gt, gp, go in zip(g_target, g_particles, g_omega)]
    return float(value), grads, ehat, omega


@dataclass
class AlmState:
    """
    Augmented Lagrangian and ADAM state of the critic training.

    :param lam_alm: Lagrange multiplier
    :param rho: penalty weight, also the learning rate of the multiplier
    :param eta: ADAM learning rate
    :param moments1: first moments, one array per parameter
    :param moments2: second moments, one array per parameter
    :param timestep: number of ADAM updates done
    """
    lam_alm: float
    rho: float
    eta: float
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    moments1: list = field(default_factory=list)
    moments2: list = field(default_factory=list)
    timestep: int = 0

    def __post_init__(self):
        if not self.rho > 0:
            raise ParameterError(f"rho must be > 0, got {self.rho}")
        if not self.eta > 0:
            raise ParameterError(f"eta must be > 0, got {self.eta}")
        if self.timestep < 0:
            raise ParameterError("ADAM timestep must be >= 0")


def init_alm_state(net, lam_alm=0.01, rho=1e-6, eta=5e-4, beta1=0.9,
                   beta2=0.999, adam_eps=1e-8):
    """AlmState with zero ADAM moments shaped like the critic parameters."""
    params = net.params()
    return AlmState(
        lam_alm=lam_alm, rho=rho, eta=eta, beta1=beta1, beta2=beta2,
        adam_eps=adam_eps,
        moments1=[np.zeros_like(p) for p in params],
        moments2=[np.zeros_like(p) for p in params],
    )


def adam_update(state, params, grads):
    """
    One bias corrected ADAM ascent step, xi <- xi + eta * ADAM(xi, g).

    Neither state nor params are modified.

    :return: (new parameter list, new AlmState)
    """
    t = state.timestep + 1
    m1 = [state.beta1 * m + (1.0 - state.beta1) * g
          for m, g in zip(state.moments1, grads)]
    m2 = [state.beta2 * v + (1.0 - state.beta2) * g**2
          for v, g in zip(state.moments2, grads)]
    correction1 = 1.0 - state.beta1**t
    correction2 = 1.0 - state.beta2**t

    new_params = [
        p + state.eta * (m / correction1) / (np.sqrt(v / correction2) + state.adam_eps)
        for p, m, v in zip(params, m1, m2)
    ]
    return new_params, replace(state, moments1=m1, moments2=m2, timestep=t)


def multiplier_update(state, omega):
    """SGD on the multiplier: lam_alm <- lam_alm - rho (1 - Omega)."""
    return replace(state, lam_alm=state.lam_alm - state.rho * (1.0 - omega))


@dataclass(frozen=True)
class NeuralDescentConfig:
    """
    Parameters of a neural Sobolev descent.

    :param eps: particle step size
    :param n_critic: critic updates per particle step
    :param warmup: critic updates before the first particle step
    :param steps: number of particle steps T
    :param hidden: hidden layer sizes
    :param slope: leaky rectifier negative slope
    :param eta: ADAM learning rate
    :param rho: penalty weight
    :param lam_alm: initial Lagrange multiplier
    :param seed: seed of the network, batch and evaluation streams
    :param eval_m: random features of the evaluation kernel
    :param eval_sigma: bandwidth of the evaluation kernel
    """
    eps: float = 3e-3
    n_critic: int = 10
    warmup: int = 50
    steps: int = 800
    hidden: tuple = (32, 64, 32)
    slope: float = 0.2
    eta: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    rho: float = 1e-6
    lam_alm: float = 0.01
    seed: int = 0
    eval_m: int = 300
    eval_sigma: float = 0.1
    trace_every: int = 1
    full_batch_max: int = FULL_BATCH_MAX
    batch_size: int = MINI_BATCH
    record_wall_time: bool = True

    def __post_init__(self):
        for name in ("eps", "eta", "rho", "eval_sigma", "adam_eps"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be > 0, got {getattr(self, name)}")
        for name in ("n_critic", "warmup", "steps", "eval_m", "trace_every",
                     "batch_size", "full_batch_max"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ParameterError(f"{name} must be a positive integer, got {value}")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ParameterError("ADAM betas must be in [0, 1)")
        if not self.hidden or min(self.hidden) < 1:
            raise ParameterError(f"hidden sizes must be positive, got {self.hidden}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))


class _Batcher:
    """Full batch for small clouds, fresh uniform mini-batches otherwise."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.rng = make_stream(cfg.seed, "batches")

    def __call__(self, points):
        if points.shape[0] <= self.cfg.full_batch_max:
            return points
        index = self.rng.integers(0, points.shape[0], size=self.cfg.batch_size)
        return points[index]


def train_critic(net, state, target_points, particle_points, n_updates, batcher):
    """
    n_updates ALM steps on the critic, warm started from net.

    :return: (net, state, L_S, E, Omega) after the last update
    """
    params = net.params()
    value = ehat = omega = np.nan
    for _ in range(n_updates):
        value, grads, ehat, omega = alm_objective_and_grads(
            net, batcher(target_points), batcher(particle_points),
            state.lam_alm, state.rho)
        params, state = adam_update(state, params, grads)
        state = multiplier_update(state, omega)
        net = net.with_params(params)
    return net, state, value, ehat, omega


def run_neural_descent(source, target, cfg, eval_fm=None, snapshot_steps=(),
                       verbose=False):
    """
    Neural Sobolev descent from source to target.

    At each particle step the critic is trained for n_critic updates (warmup
    updates before the first step), resuming from the previous parameters,
    then every particle moves along the critic gradient once.

    :param source: ParticleSet
    :param target: ParticleSet of the same dimension
    :param cfg: NeuralDescentConfig
    :param eval_fm: FeatureMap of the evaluation kernel, by default one with
     cfg.eval_m features and bandwidth cfg.eval_sigma from the evaluation
     stream
    :param snapshot_steps: steps at which a copy of the cloud is kept
    :return: (final ParticleSet, DescentTrace with columns lambda_alm,
     omega_hat, ehat)
    """
    if source.d != target.d:
        raise ParameterError(
            f"Source and target dimensions differ: {source.d} != {target.d}")
    if eval_fm is None:
        eval_fm = sample_feature_map(source.d, cfg.eval_m, cfg.eval_sigma,
                                     cfg.seed, purpose="eval_features")
    eval_target_mu = kme(eval_fm, target)
    snapshot_steps = set(int(s) for s in snapshot_steps)

    net = init_mlp(source.d, cfg.hidden, cfg.slope, cfg.seed)
    state = init_alm_state(net, cfg.lam_alm, cfg.rho, cfg.eta, cfg.beta1,
                           cfg.beta2, cfg.adam_eps)
    batcher = _Batcher(cfg)
    target_points = target.points

    trace = DescentTrace(columns=NEURAL_COLUMNS, metadata={
        "mode": "neural", "eps": cfg.eps, "n_critic": cfg.n_critic,
        "hidden": list(cfg.hidden), "seed": cfg.seed,
        "init": "uniform(+-1/sqrt(fan_in))",
    })

    if verbose:
        print(
            "\n###################"
            "#####################"
            "#####################"
            "#####################"
        )
        print(f"Neural Sobolev descent: n={source.n}, N={target.n}, d={source.d}")
        print(f"\t{net}, {net.n_params()} parameters, n_c={cfg.n_critic}, "
              f"warmup={cfg.warmup}, eps={cfg.eps:g}, T={cfg.steps}")

    points = source.points.copy()
    if 0 in snapshot_steps:
        trace.snapshots[0] = points.copy()

    for step in tqdm(range(cfg.steps), disable=not verbose, desc="descent"):
        tic = time.perf_counter()
        n_updates = cfg.warmup if step == 0 else cfg.n_critic
        net, state, _, ehat, omega = train_critic(
            net, state, target_points, points, n_updates, batcher)
        moved = points + cfg.eps * grad_x(net, points)
        wall_ms = 1e3 * (time.perf_counter() - tic)

        if step % cfg.trace_every == 0:
            trace.append(TraceRecord(
                step=step,
                t=step * cfg.eps,
                mmd2=mmd2(eval_target_mu, kme(eval_fm, points)),
                wall_ms=wall_ms if cfg.record_wall_time else 0.0,
                extras={"lambda_alm": state.lam_alm, "omega_hat": omega,
                        "ehat": ehat},
            ))

        if not np.all(np.isfinite(moved)):
            raise DivergenceError(step + 1)
        points = moved
        if step + 1 in snapshot_steps:
            trace.snapshots[step + 1] = points.copy()

    trace.append(TraceRecord(
        step=cfg.steps,
        t=cfg.steps * cfg.eps,
        mmd2=mmd2(eval_target_mu, kme(eval_fm, points)),
        extras={"lambda_alm": state.lam_alm, "omega_hat": np.nan, "ehat": np.nan},
    ))
    trace.metadata["critic"] = net

    if verbose:
        print(f"\tevaluation mmd2: {trace[0].mmd2:.6g} -> {trace[-1].mmd2:.6g}")
        print(
            "#####################"
            "#####################"
            "#####################"
            "###################\n"
        )
    return ParticleSet(points), trace
