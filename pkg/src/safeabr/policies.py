"""Bitrate policies: buffer-based, random, and a small learned actor-critic.

The learned networks are two-hidden-layer tanh MLPs trained with hand-written
backprop and Adam.  Parameter sets are plain lists of ``(W, b)`` pairs with
``W`` shaped ``(out, in)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from .env import EnvConfig, SessionState, VideoManifest, initial_state, step
from .traces import Trace

log = logging.getLogger(__name__)

FEATURE_VERSION = 1
AGENT_FORMAT = "safeabr-agent/1"
VALUE_FORMAT = "safeabr-value/1"

Layers = list  # list of (W, b)


class TrainingDiverged(RuntimeError):
    pass


# --------------------------------------------------------------------------
# heuristics
# --------------------------------------------------------------------------

def bb_decide(buffer: float, rates: Sequence[float], reservoir: float = 5.0, cushion: float = 10.0) -> int:
    """Buffer-based rate map.

    Below the reservoir pick the lowest level, above reservoir + cushion the
    highest.  In between the buffer maps linearly onto [R_min, R_max] and the
    highest level whose rate does not exceed the mapped rate is chosen.
    """
    if reservoir < 0 or not cushion > 0:
        raise ValueError("reservoir must be >= 0 and cushion > 0")
    n = len(rates)
    if buffer <= reservoir:
        return 0
    if buffer >= reservoir + cushion:
        return n - 1
    lo, hi = rates[0], rates[-1]
    target = lo + (buffer - reservoir) / cushion * (hi - lo)
    level = 0
    for i in range(n):
        if rates[i] <= target:
            level = i
    return level


def random_decide(rng: np.random.Generator, levels: int) -> int:
    return int(rng.integers(levels))


# --------------------------------------------------------------------------
# observation features
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureSpec:
    history: int = 8
    version: int = FEATURE_VERSION

    @property
    def size(self) -> int:
        return 3 + 2 * self.history


def featurize(state: SessionState, manifest: VideoManifest, spec: FeatureSpec = FeatureSpec()) -> np.ndarray:
    """[buffer/10, last level/(L-1), m throughputs/10, m download times/10, remaining fraction].

    Histories are oldest-first and zero-padded on the left.
    """
    m = spec.history
    f = np.zeros(spec.size)
    f[0] = state.buffer / 10.0
    if state.last_level is not None and manifest.levels > 1:
        f[1] = state.last_level / (manifest.levels - 1)
    hist = state.download_history[-m:]
    k = len(hist)
    for j, (dl, _size, tput) in enumerate(hist):
        f[2 + m - k + j] = tput / 10.0
        f[2 + 2 * m - k + j] = dl / 10.0
    f[-1] = (manifest.chunk_count - state.chunk_index) / manifest.chunk_count
    return f


# --------------------------------------------------------------------------
# MLP plumbing
# --------------------------------------------------------------------------

def init_mlp(sizes: Sequence[int], rng: np.random.Generator, out_gain: float = 1.0) -> Layers:
    layers = []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        gain = out_gain if i == len(sizes) - 2 else 1.0
        W = rng.standard_normal((n_out, n_in)) * gain / np.sqrt(n_in)
        layers.append((W, np.zeros(n_out)))
    return layers


def zeros_like_layers(layers: Layers) -> Layers:
    return [(np.zeros_like(W), np.zeros_like(b)) for W, b in layers]


def mlp_single(layers: Layers, x: np.ndarray) -> np.ndarray:
    (W1, b1), (W2, b2), (W3, b3) = layers
    return kernels.mlp_forward(x, W1, b1, W2, b2, W3, b3)


def mlp_batch(layers: Layers, X: np.ndarray):
    """Forward a batch; returns output and the activations needed for backprop."""
    acts = [X]
    h = X
    for i, (W, b) in enumerate(layers):
        z = h @ W.T + b
        h = np.tanh(z) if i < len(layers) - 1 else z
        acts.append(h)
    return h, acts


def mlp_backward(layers: Layers, acts: list, dout: np.ndarray) -> Layers:
    grads = [None] * len(layers)
    delta = dout
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        grads[i] = (delta.T @ acts[i], delta.sum(axis=0))
        if i > 0:
            delta = (delta @ W) * (1.0 - acts[i] ** 2)
    return grads


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def layers_finite(layers: Layers) -> bool:
    return all(np.all(np.isfinite(W)) and np.all(np.isfinite(b)) for W, b in layers)


class Adam:
    def __init__(self, layers: Layers, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = zeros_like_layers(layers)
        self.v = zeros_like_layers(layers)
        self.t = 0

    def step(self, layers: Layers, grads: Layers, lr: Optional[float] = None) -> None:
        self.t += 1
        lr = self.lr if lr is None else lr
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for (p_pair, g_pair, m_pair, v_pair) in zip(layers, grads, self.m, self.v):
            for p, g, m, v in zip(p_pair, g_pair, m_pair, v_pair):
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# --------------------------------------------------------------------------
# parameter sets
# --------------------------------------------------------------------------

@dataclass
class AgentParams:
    actor: Layers
    critic: Layers
    init_seed: int
    feature_spec: FeatureSpec = FeatureSpec()
    reward_scale: float = 0.1
    curve: list = field(default_factory=list)

    def finite(self) -> bool:
        return layers_finite(self.actor) and layers_finite(self.critic)

    @property
    def levels(self) -> int:
        return self.actor[-1][0].shape[0]


@dataclass
class ValueParams:
    layers: Layers
    init_seed: int
    gamma: float = 0.99
    output_scale: float = 1.0
    feature_spec: FeatureSpec = FeatureSpec()

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("discount must lie in (0, 1)")


def new_agent(n_features: int, levels: int, hidden: Sequence[int] = (32, 32), init_seed: int = 0,
              feature_spec: FeatureSpec = FeatureSpec(), reward_scale: float = 0.1) -> AgentParams:
    rng = np.random.default_rng(init_seed)
    actor = init_mlp([n_features, *hidden, levels], rng, out_gain=0.1)
    critic = init_mlp([n_features, *hidden, 1], rng)
    return AgentParams(actor, critic, init_seed, feature_spec, reward_scale)


def actor_logits(params: AgentParams, f: np.ndarray) -> np.ndarray:
    return mlp_single(params.actor, f)


def actor_forward(params: AgentParams, f: np.ndarray) -> np.ndarray:
    """Action distribution (softmax over levels) for one feature vector."""
    return softmax(actor_logits(params, f))


def critic_forward(params: AgentParams, f: np.ndarray) -> float:
    """Agent's own state-value estimate, in QoE units."""
    return float(mlp_single(params.critic, f)[0]) / params.reward_scale


def value_forward(vparams: ValueParams, f: np.ndarray) -> float:
    return float(mlp_single(vparams.layers, f)[0]) * vparams.output_scale


def greedy(probs: np.ndarray) -> int:
    return int(np.argmax(probs))


# --------------------------------------------------------------------------
# losses with analytic gradients
# --------------------------------------------------------------------------

def actor_loss(actor: Layers, X: np.ndarray, actions: np.ndarray, advantages: np.ndarray,
               entropy_weight: float):
    """Policy-gradient loss  -mean(A log pi(a|s)) - beta * mean(H(pi(.|s)))."""
    T = X.shape[0]
    logits, acts = mlp_batch(actor, X)
    p = softmax(logits)
    logp = np.log(np.maximum(p, 1e-300))
    chosen = logp[np.arange(T), actions]
    H = -(p * logp).sum(axis=1)
    loss = -(advantages * chosen).mean() - entropy_weight * H.mean()
    onehot = np.zeros_like(p)
    onehot[np.arange(T), actions] = 1.0
    dz = -(advantages[:, None] * (onehot - p)) / T
    dz += entropy_weight * p * (logp + H[:, None]) / T
    return float(loss), mlp_backward(actor, acts, dz), float(H.mean())


def regression_loss(layers: Layers, X: np.ndarray, targets: np.ndarray):
    """Half mean squared error of a scalar-output MLP."""
    out, acts = mlp_batch(layers, X)
    err = out[:, 0] - targets
    loss = 0.5 * float(np.mean(err ** 2))
    return loss, mlp_backward(layers, acts, (err / X.shape[0])[:, None])


def discounted_returns(rewards: Sequence[float], gamma: float) -> np.ndarray:
    """Monte-Carlo returns G_t = r_t + gamma * G_{t+1}, truncated at the episode end."""
    out = np.zeros(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def gae_advantages(rewards: np.ndarray, values: np.ndarray, gamma: float, lam: float) -> np.ndarray:
    """Generalised advantage estimates; the value after the last chunk is 0."""
    adv = np.zeros(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        nxt = values[t + 1] if t + 1 < len(rewards) else 0.0
        acc = rewards[t] + gamma * nxt - values[t] + gamma * lam * acc
        adv[t] = acc
    return adv


# --------------------------------------------------------------------------
# rollouts
# --------------------------------------------------------------------------

@dataclass
class Rollout:
    features: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    states: list


def rollout(trace: Trace, manifest: VideoManifest, env_cfg: EnvConfig,
            choose: Callable[[SessionState, np.ndarray], int], spec: FeatureSpec = FeatureSpec(),
            start: float = 0.0, keep_states: bool = False) -> Rollout:
    state = initial_state(trace, start)
    feats, actions, rewards, states = [], [], [], []
    for _ in range(manifest.chunk_count):
        f = featurize(state, manifest, spec)
        a = choose(state, f)
        if keep_states:
            states.append(state)
        out = step(state, a, trace, manifest, env_cfg)
        feats.append(f)
        actions.append(a)
        rewards.append(out.qoe)
        state = out.next_state
    if keep_states:
        states.append(state)
    return Rollout(np.array(feats), np.array(actions, dtype=np.int64), np.array(rewards), states)


def bb_chooser(manifest: VideoManifest, reservoir: float = 5.0, cushion: float = 10.0):
    rates = manifest.rates.tolist()
    return lambda state, f: bb_decide(state.buffer, rates, reservoir, cushion)


def greedy_chooser(params: AgentParams):
    return lambda state, f: greedy(actor_forward(params, f))


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AgentTrainConfig:
    hidden: tuple = (32, 32)
    episodes: int = 1000
    actor_lr: float = 1e-3
    critic_lr: float = 3e-3
    gamma: float = 0.99
    gae_lambda: float = 0.95
    entropy_weight: float = 0.05
    entropy_final: float = 0.001
    reward_scale: float = 0.1
    history: int = 8
    data_seed: int = 0


def _sample(probs: np.ndarray, u: float) -> int:
    a = int(np.searchsorted(np.cumsum(probs), u * probs.sum(), side="right"))
    return min(a, probs.size - 1)


def train_agent(train_traces: Sequence[Trace], manifest: VideoManifest, env_cfg: EnvConfig = EnvConfig(),
                hyper: AgentTrainConfig = AgentTrainConfig(), init_seed: int = 0) -> AgentParams:
    """Advantage actor-critic with entropy regularisation, one episode per update.

    Trace order, start offsets and the uniforms used for action sampling come
    from ``hyper.data_seed``; only the weight initialisation depends on
    ``init_seed``.
    """
    if not train_traces:
        raise ValueError("need at least one training trace")
    spec = FeatureSpec(hyper.history)
    params = new_agent(spec.size, manifest.levels, hyper.hidden, init_seed, spec, hyper.reward_scale)
    opt_a = Adam(params.actor, hyper.actor_lr)
    opt_c = Adam(params.critic, hyper.critic_lr)
    data_rng = np.random.default_rng(np.random.SeedSequence(hyper.data_seed, spawn_key=(1,)))
    act_rng = np.random.default_rng(np.random.SeedSequence(hyper.data_seed, spawn_key=(2,)))
    for ep in range(hyper.episodes):
        trace = train_traces[int(data_rng.integers(len(train_traces)))]
        start = float(data_rng.uniform(0.0, trace.period))
        uniforms = act_rng.random(manifest.chunk_count)
        counter = iter(uniforms)
        ro = rollout(trace, manifest, env_cfg,
                     lambda s, f: _sample(actor_forward(params, f), next(counter)), spec, start)
        frac = ep / max(hyper.episodes - 1, 1)
        beta = hyper.entropy_weight + (hyper.entropy_final - hyper.entropy_weight) * frac
        values = mlp_batch(params.critic, ro.features)[0][:, 0]
        adv = gae_advantages(ro.rewards * hyper.reward_scale, values, hyper.gamma, hyper.gae_lambda)
        returns = adv + values
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        a_loss, a_grads, _ = actor_loss(params.actor, ro.features, ro.actions, adv, beta)
        c_loss, c_grads = regression_loss(params.critic, ro.features, returns)
        if not (np.isfinite(a_loss) and np.isfinite(c_loss)):
            raise TrainingDiverged(f"non-finite loss at episode {ep} (actor={a_loss}, critic={c_loss}, "
                                   f"init_seed={init_seed})")
        opt_a.step(params.actor, a_grads)
        opt_c.step(params.critic, c_grads)
        params.curve.append(float(ro.rewards.sum()))
    if not params.finite():
        raise TrainingDiverged(f"non-finite weights after training (init_seed={init_seed})")
    return params


@dataclass(frozen=True)
class ValueTrainConfig:
    hidden: tuple = (32, 32)
    gamma: float = 0.99
    epochs: int = 30
    batch_size: int = 256
    lr: float = 2e-3
    rollouts_per_trace: int = 2
    data_seed: int = 0


def collect_value_data(policy: AgentParams, traces: Sequence[Trace], manifest: VideoManifest,
                       env_cfg: EnvConfig, gamma: float, rollouts_per_trace: int, seed: int):
    """Greedy rollouts of ``policy``; returns (features, discounted returns)."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(3,)))
    choose = greedy_chooser(policy)
    X, G = [], []
    for trace in traces:
        for _ in range(rollouts_per_trace):
            ro = rollout(trace, manifest, env_cfg, choose, policy.feature_spec,
                         float(rng.uniform(0.0, trace.period)))
            X.append(ro.features)
            G.append(discounted_returns(ro.rewards, gamma))
    return np.concatenate(X), np.concatenate(G)


def fit_value(X: np.ndarray, G: np.ndarray, hyper: ValueTrainConfig, init_seed: int,
              feature_spec: FeatureSpec = FeatureSpec()) -> ValueParams:
    scale = float(np.std(G)) or 1.0
    rng = np.random.default_rng(init_seed)
    layers = init_mlp([X.shape[1], *hyper.hidden, 1], rng)
    opt = Adam(layers, hyper.lr)
    order_rng = np.random.default_rng(np.random.SeedSequence(hyper.data_seed, spawn_key=(4,)))
    y = G / scale
    for epoch in range(hyper.epochs):
        order = order_rng.permutation(X.shape[0])
        for lo in range(0, X.shape[0], hyper.batch_size):
            idx = order[lo:lo + hyper.batch_size]
            loss, grads = regression_loss(layers, X[idx], y[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite value loss in epoch {epoch} (init_seed={init_seed})")
            opt.step(layers, grads)
    return ValueParams(layers, init_seed, hyper.gamma, scale, feature_spec)


def train_value(policy: AgentParams, train_traces: Sequence[Trace], manifest: VideoManifest,
                env_cfg: EnvConfig = EnvConfig(), hyper: ValueTrainConfig = ValueTrainConfig(),
                init_seed: int = 0) -> ValueParams:
    """Fit an external value function to discounted returns of ``policy``'s rollouts."""
    X, G = collect_value_data(policy, train_traces, manifest, env_cfg, hyper.gamma,
                              hyper.rollouts_per_trace, hyper.data_seed)
    return fit_value(X, G, hyper, init_seed, policy.feature_spec)


def train_ensemble(kind: str, count: int = 5, *, seeds: Optional[Sequence[int]] = None,
                   train_traces: Sequence[Trace], manifest: VideoManifest, env_cfg: EnvConfig = EnvConfig(),
                   agent_hyper: AgentTrainConfig = AgentTrainConfig(),
                   value_hyper: ValueTrainConfig = ValueTrainConfig(),
                   policy: Optional[AgentParams] = None) -> list:
    """Train ``count`` members on identical data; they differ only by init seed."""
    if seeds is None:
        seeds = list(range(count))
    if len(seeds) != count:
        raise ValueError("one seed per member required")
    if kind == "agents":
        return [train_agent(train_traces, manifest, env_cfg, agent_hyper, s) for s in seeds]
    if kind == "values":
        if policy is None:
            raise ValueError("a value ensemble needs the policy it evaluates")
        X, G = collect_value_data(policy, train_traces, manifest, env_cfg, value_hyper.gamma,
                                  value_hyper.rollouts_per_trace, value_hyper.data_seed)
        return [fit_value(X, G, value_hyper, s, policy.feature_spec) for s in seeds]
    raise ValueError(f"unknown ensemble kind {kind!r}")


# --------------------------------------------------------------------------
# serialisation (.npz)
# --------------------------------------------------------------------------

def _pack(prefix: str, layers: Layers, out: dict) -> None:
    out[f"{prefix}_n"] = np.array(len(layers))
    for i, (W, b) in enumerate(layers):
        out[f"{prefix}_W{i}"] = W
        out[f"{prefix}_b{i}"] = b


def _unpack(prefix: str, data) -> Layers:
    n = int(data[f"{prefix}_n"])
    return [(np.array(data[f"{prefix}_W{i}"], dtype=float), np.array(data[f"{prefix}_b{i}"], dtype=float))
            for i in range(n)]


def save_agent(params: AgentParams, path) -> None:
    out = {"format": np.array(AGENT_FORMAT), "init_seed": np.array(params.init_seed),
           "feature_history": np.array(params.feature_spec.history),
           "feature_version": np.array(params.feature_spec.version),
           "reward_scale": np.array(params.reward_scale), "curve": np.array(params.curve, dtype=float)}
    _pack("actor", params.actor, out)
    _pack("critic", params.critic, out)
    with open(path, "wb") as fh:
        np.savez(fh, **out)


def load_agent(path) -> AgentParams:
    with np.load(path, allow_pickle=False) as data:
        if str(data["format"]) != AGENT_FORMAT:
            raise ValueError(f"{path}: not an agent file ({data['format']})")
        params = AgentParams(_unpack("actor", data), _unpack("critic", data), int(data["init_seed"]),
                             FeatureSpec(int(data["feature_history"]), int(data["feature_version"])),
                             float(data["reward_scale"]), data["curve"].tolist())
    if not params.finite():
        raise ValueError(f"{path}: non-finite weights")
    return params


def save_value(vp: ValueParams, path) -> None:
    out = {"format": np.array(VALUE_FORMAT), "init_seed": np.array(vp.init_seed), "gamma": np.array(vp.gamma),
           "output_scale": np.array(vp.output_scale), "feature_history": np.array(vp.feature_spec.history),
           "feature_version": np.array(vp.feature_spec.version)}
    _pack("value", vp.layers, out)
    with open(path, "wb") as fh:
        np.savez(fh, **out)


def load_value(path) -> ValueParams:
    with np.load(path, allow_pickle=False) as data:
        if str(data["format"]) != VALUE_FORMAT:
            raise ValueError(f"{path}: not a value-function file ({data['format']})")
        vp = ValueParams(_unpack("value", data), int(data["init_seed"]), float(data["gamma"]),
                         float(data["output_scale"]),
                         FeatureSpec(int(data["feature_history"]), int(data["feature_version"])))
    if not layers_finite(vp.layers):
        raise ValueError(f"{path}: non-finite weights")
    return vp
