"""Policy/value network and its training math, hand-rolled on numpy.

A tanh trunk of three 128-unit layers feeds four outputs: the mean of a
2D Gaussian over (speed, turn rate), a state-independent log-std pair, a
4-way categorical head for the idle sub-state, and a scalar value
estimate. Forward, reverse-mode gradients for the two training losses,
and the adaptive-moment optimizer live here; everything is float64 so
gradients survive a central finite-difference audit at h = 1e-4.

Checkpoint format (all little-endian): the 8-byte magic "AUDAMP01", a
4-byte unsigned length, that many bytes of UTF-8 JSON metadata (layout
dims, seed, training step), then every parameter as 32-bit floats in
the fixed order W1, b1, W2, b2, W3, b3, W_mean, b_mean, log_std,
W_logits, b_logits, W_value, b_value (row-major within each block).
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

MAGIC = b"AUDAMP01"
LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class NetLayout:
    input_dim: int = 16
    hidden: tuple[int, int, int] = (128, 128, 128)
    continuous_dim: int = 2
    discrete_cardinality: int = 4

    def __post_init__(self):
        if tuple(self.hidden) != (128, 128, 128):
            raise ValueError("the trunk is fixed at three hidden layers of 128")

    def trunk_param_count(self) -> int:
        count = 0
        fan_in = self.input_dim
        for h in self.hidden:
            count += fan_in * h + h
            fan_in = h
        return count

    def head_param_count(self) -> int:
        h = self.hidden[-1]
        return (
            h * self.continuous_dim + self.continuous_dim  # mean head
            + self.continuous_dim  # log-std vector
            + h * self.discrete_cardinality + self.discrete_cardinality
            + h + 1  # value head
        )

    def total_param_count(self) -> int:
        return self.trunk_param_count() + self.head_param_count()


def _param_shapes(layout: NetLayout) -> list[tuple[str, tuple[int, ...]]]:
    i, (h1, h2, h3) = layout.input_dim, layout.hidden
    c, d = layout.continuous_dim, layout.discrete_cardinality
    return [
        ("W1", (i, h1)), ("b1", (h1,)),
        ("W2", (h1, h2)), ("b2", (h2,)),
        ("W3", (h2, h3)), ("b3", (h3,)),
        ("Wm", (h3, c)), ("bm", (c,)),
        ("log_std", (c,)),
        ("Wl", (h3, d)), ("bl", (d,)),
        ("Wv", (h3, 1)), ("bv", (1,)),
    ]


class PolicyParams:
    """One flat float64 parameter vector with named views.

    Treat instances as immutable snapshots: the optimizer returns a new
    instance instead of writing in place, so published parameters can be
    shared across concurrent readers.
    """

    def __init__(self, layout: NetLayout, vec: np.ndarray):
        if vec.shape != (layout.total_param_count(),):
            raise ValueError("parameter vector does not match the layout")
        self.layout = layout
        self.vec = np.asarray(vec, dtype=np.float64)
        offset = 0
        for name, shape in _param_shapes(layout):
            size = int(np.prod(shape))
            setattr(self, name, self.vec[offset : offset + size].reshape(shape))
            offset += size

    @property
    def n_params(self) -> int:
        return self.vec.size

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.layout, self.vec.copy())


def pack_gradients(layout: NetLayout, grads: dict[str, np.ndarray]) -> np.ndarray:
    parts = [np.asarray(grads[name], dtype=np.float64).ravel()
             for name, _ in _param_shapes(layout)]
    return np.concatenate(parts)


def _orthogonal(rng: np.random.Generator, n_in: int, n_out: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if n_in < n_out:
        q = q.T
    return gain * q


def init_params(
    seed: int, layout: NetLayout = NetLayout(), log_std_init: float = -0.5
) -> PolicyParams:
    """Orthogonal trunk (gain sqrt(2)), 0.01-gain policy heads, unit-gain
    value head, zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    i, (h1, h2, h3) = layout.input_dim, layout.hidden
    grads = {
        "W1": _orthogonal(rng, i, h1, math.sqrt(2.0)),
        "b1": np.zeros(h1),
        "W2": _orthogonal(rng, h1, h2, math.sqrt(2.0)),
        "b2": np.zeros(h2),
        "W3": _orthogonal(rng, h2, h3, math.sqrt(2.0)),
        "b3": np.zeros(h3),
        "Wm": _orthogonal(rng, h3, layout.continuous_dim, 0.01),
        "bm": np.zeros(layout.continuous_dim),
        "log_std": np.full(layout.continuous_dim, log_std_init, dtype=np.float64),
        "Wl": _orthogonal(rng, h3, layout.discrete_cardinality, 0.01),
        "bl": np.zeros(layout.discrete_cardinality),
        "Wv": _orthogonal(rng, h3, 1, 1.0),
        "bv": np.zeros(1),
    }
    return PolicyParams(layout, pack_gradients(layout, grads))


@dataclass(frozen=True)
class ActionDistribution:
    mean: np.ndarray
    std: np.ndarray
    probs: np.ndarray
    value: float


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _forward_batch(params: PolicyParams, X: np.ndarray) -> dict:
    h1 = np.tanh(X @ params.W1 + params.b1)
    h2 = np.tanh(h1 @ params.W2 + params.b2)
    h3 = np.tanh(h2 @ params.W3 + params.b3)
    mean = h3 @ params.Wm + params.bm
    logits = h3 @ params.Wl + params.bl
    value = (h3 @ params.Wv)[:, 0] + params.bv[0]
    ls = np.clip(params.log_std, LOG_STD_MIN, LOG_STD_MAX)
    cache = {
        "X": X, "h1": h1, "h2": h2, "h3": h3,
        "mean": mean, "logits": logits, "value": value,
        "ls": ls, "std": np.exp(ls),
    }
    for name in ("h1", "h2", "h3", "mean", "logits", "value"):
        if not np.isfinite(cache[name]).all():
            raise FloatingPointError(f"non-finite values in layer '{name}'")
    return cache


def _backward_batch(
    params: PolicyParams,
    cache: dict,
    dmean: np.ndarray,
    dlogits: np.ndarray,
    dvalue: np.ndarray,
    dls: np.ndarray,
) -> np.ndarray:
    X, h1, h2, h3 = cache["X"], cache["h1"], cache["h2"], cache["h3"]
    dv = dvalue[:, None]
    grads = {
        "Wm": h3.T @ dmean, "bm": dmean.sum(axis=0),
        "Wl": h3.T @ dlogits, "bl": dlogits.sum(axis=0),
        "Wv": h3.T @ dv, "bv": np.array([dvalue.sum()]),
    }
    dh3 = dmean @ params.Wm.T + dlogits @ params.Wl.T + dv @ params.Wv.T
    dz3 = dh3 * (1.0 - h3 * h3)
    grads["W3"] = h2.T @ dz3
    grads["b3"] = dz3.sum(axis=0)
    dz2 = (dz3 @ params.W3.T) * (1.0 - h2 * h2)
    grads["W2"] = h1.T @ dz2
    grads["b2"] = dz2.sum(axis=0)
    dz1 = (dz2 @ params.W2.T) * (1.0 - h1 * h1)
    grads["W1"] = X.T @ dz1
    grads["b1"] = dz1.sum(axis=0)
    # Gradients stop at the log-std clamp boundaries.
    mask = (params.log_std > LOG_STD_MIN) & (params.log_std < LOG_STD_MAX)
    grads["log_std"] = dls * mask
    return pack_gradients(params.layout, grads)


def forward(params: PolicyParams, obs: np.ndarray) -> ActionDistribution:
    """Distribution parameters and value estimate for a single observation."""
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape != (params.layout.input_dim,):
        raise ValueError(f"observation must have {params.layout.input_dim} entries")
    if not np.isfinite(obs).all():
        raise ValueError("observation contains non-finite entries")
    cache = _forward_batch(params, obs[None, :])
    return ActionDistribution(
        mean=cache["mean"][0],
        std=cache["std"].copy(),
        probs=_softmax(cache["logits"])[0],
        value=float(cache["value"][0]),
    )


def gaussian_log_prob(u: np.ndarray, mean: np.ndarray, std: np.ndarray) -> float:
    diff = (np.asarray(u) - mean) / std
    return float(
        -0.5 * np.sum(diff * diff)
        - np.sum(np.log(std))
        - 0.5 * len(mean) * LOG_2PI
    )


def sample_raw(
    dist: ActionDistribution, rng: np.random.Generator
) -> tuple[np.ndarray, int, float]:
    """Draw (unclamped continuous pair, idle index, joint log-prob)."""
    u = dist.mean + dist.std * rng.standard_normal(dist.mean.shape[0])
    cdf = np.cumsum(dist.probs)
    k = int(np.searchsorted(cdf, rng.random(), side="right"))
    k = min(k, dist.probs.shape[0] - 1)
    log_prob = gaussian_log_prob(u, dist.mean, dist.std) + math.log(dist.probs[k])
    return u, k, log_prob


def sample(
    dist: ActionDistribution,
    rng: np.random.Generator,
    v_max: float = 1.5,
    omega_max: float = 2.0,
):
    """Sample an executable action; the log-prob is of the unclamped draw."""
    from .env import Action

    u, k, log_prob = sample_raw(dist, rng)
    action = Action(
        speed=float(np.clip(u[0], 0.0, v_max)),
        turn_rate=float(np.clip(u[1], -omega_max, omega_max)),
        idle_state=k,
    )
    return action, log_prob


def log_prob_and_entropy(
    params: PolicyParams, obs: np.ndarray, action
) -> tuple[float, float, float]:
    """Joint log-probability, total entropy, and value for one (obs, action)."""
    dist = forward(params, obs)
    cont = np.array([action.speed, action.turn_rate], dtype=np.float64)
    log_prob = gaussian_log_prob(cont, dist.mean, dist.std) + math.log(
        dist.probs[action.idle_state]
    )
    gaussian_entropy = float(np.sum(0.5 * math.log(2.0 * math.pi * math.e) + np.log(dist.std)))
    p = dist.probs
    categorical_entropy = float(-np.sum(p * np.log(np.maximum(p, 1e-300))))
    return log_prob, gaussian_entropy + categorical_entropy, dist.value


# ---------------------------------------------------------------------------
# Training losses (value + exact reverse-mode gradients)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BCLossSpec:
    """Supervised cloning loss: range-normalized squared error on the
    continuous means, cross-entropy on the idle head, optional entropy
    bonus weighted by beta."""

    v_max: float = 1.5
    omega_max: float = 2.0
    beta: float = 0.0


@dataclass(frozen=True)
class PPOLossSpec:
    """Clipped-surrogate loss plus value and entropy terms. Advantages
    must arrive normalized."""

    clip_eps: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.005


def _entropy_terms(ls: np.ndarray, logits: np.ndarray):
    p = _softmax(logits)
    logp = np.log(np.maximum(p, 1e-300))
    h_disc = -np.sum(p * logp, axis=1)
    h_gauss = float(np.sum(0.5 * math.log(2.0 * math.pi * math.e) + ls))
    return p, logp, h_disc, h_gauss


def bc_loss_and_grads(
    params: PolicyParams,
    obs: np.ndarray,
    act_cont: np.ndarray,
    act_idle: np.ndarray,
    spec: BCLossSpec = BCLossSpec(),
    want_grads: bool = True,
):
    """Mean cloning loss over the batch; returns (loss, grad_vec, aux)."""
    X = np.asarray(obs, dtype=np.float64)
    A = np.asarray(act_cont, dtype=np.float64)
    k = np.asarray(act_idle, dtype=np.int64)
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    cache = _forward_batch(params, X)
    mean, logits, ls = cache["mean"], cache["logits"], cache["ls"]

    scale = np.array([(spec.v_max / 2.0) ** 2, spec.omega_max**2])
    err = mean - A
    cont = np.sum(err * err / scale, axis=1)

    p, logp, h_disc, h_gauss = _entropy_terms(ls, logits)
    ce = -logp[np.arange(n), k]
    entropy = h_disc + h_gauss

    loss = float(np.mean(cont + ce) - spec.beta * np.mean(entropy))
    aux = {
        "continuous_mse": float(np.mean(np.sum(err * err, axis=1))),
        "cross_entropy": float(np.mean(ce)),
        "idle_accuracy": float(np.mean(np.argmax(logits, axis=1) == k)),
    }
    if not want_grads:
        return loss, None, aux

    dmean = 2.0 * err / scale / n
    onehot = np.zeros_like(p)
    onehot[np.arange(n), k] = 1.0
    dlogits = (p - onehot) / n
    dls = np.zeros_like(ls)
    if spec.beta != 0.0:
        dlogits += spec.beta / n * p * (logp + h_disc[:, None])
        dls -= spec.beta
    dvalue = np.zeros(n)
    return loss, _backward_batch(params, cache, dmean, dlogits, dvalue, dls), aux


def ppo_loss_and_grads(
    params: PolicyParams,
    obs: np.ndarray,
    act_raw: np.ndarray,
    act_idle: np.ndarray,
    logp_old: np.ndarray,
    advantages: np.ndarray,
    returns: np.ndarray,
    spec: PPOLossSpec = PPOLossSpec(),
    want_grads: bool = True,
):
    """Clipped-surrogate PPO loss; returns (loss, grad_vec, aux).

    `act_raw` holds the unclamped continuous draws recorded at rollout
    time so the new log-probs are evaluated at the same points as
    `logp_old`.
    """
    X = np.asarray(obs, dtype=np.float64)
    U = np.asarray(act_raw, dtype=np.float64)
    k = np.asarray(act_idle, dtype=np.int64)
    logp_old = np.asarray(logp_old, dtype=np.float64)
    adv = np.asarray(advantages, dtype=np.float64)
    ret = np.asarray(returns, dtype=np.float64)
    n = X.shape[0]
    cache = _forward_batch(params, X)
    mean, logits, ls, std, value = (
        cache["mean"], cache["logits"], cache["ls"], cache["std"], cache["value"],
    )

    diff = (U - mean) / std
    logp_c = -0.5 * np.sum(diff * diff, axis=1) - np.sum(ls) - 0.5 * len(ls) * LOG_2PI
    p, logp_all, h_disc, h_gauss = _entropy_terms(ls, logits)
    logp_d = logp_all[np.arange(n), k]
    logp = logp_c + logp_d

    rho = np.exp(logp - logp_old)
    rho_clipped = np.clip(rho, 1.0 - spec.clip_eps, 1.0 + spec.clip_eps)
    s1 = rho * adv
    s2 = rho_clipped * adv
    use_s1 = s1 <= s2  # ties take the unclipped branch
    policy_loss = float(-np.mean(np.where(use_s1, s1, s2)))

    value_err = value - ret
    value_loss = float(np.mean(value_err * value_err))
    entropy = h_disc + h_gauss
    mean_entropy = float(np.mean(entropy))

    loss = policy_loss + spec.value_coef * value_loss - spec.entropy_coef * mean_entropy
    aux = {
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "entropy": mean_entropy,
        "clip_fraction": float(np.mean(~use_s1)),
    }
    if not want_grads:
        return loss, None, aux

    inside = (rho > 1.0 - spec.clip_eps) & (rho < 1.0 + spec.clip_eps)
    dmin_drho = np.where(use_s1, adv, adv * inside)
    dlogp = (-dmin_drho / n) * rho

    dmean = dlogp[:, None] * diff / std
    dls = np.sum(dlogp[:, None] * (diff * diff - 1.0), axis=0)
    onehot = np.zeros_like(p)
    onehot[np.arange(n), k] = 1.0
    dlogits = dlogp[:, None] * (onehot - p)

    dvalue = 2.0 * spec.value_coef * value_err / n

    dls -= spec.entropy_coef
    dlogits += spec.entropy_coef / n * p * (logp_all + h_disc[:, None])

    return loss, _backward_batch(params, cache, dmean, dlogits, dvalue, dls), aux


def gradients(params: PolicyParams, spec, batch: dict):
    """Dispatch to the configured loss; returns (loss, grad_vec, aux)."""
    if isinstance(spec, BCLossSpec):
        return bc_loss_and_grads(
            params, batch["obs"], batch["act_cont"], batch["act_idle"], spec
        )
    if isinstance(spec, PPOLossSpec):
        return ppo_loss_and_grads(
            params,
            batch["obs"],
            batch["act_raw"],
            batch["act_idle"],
            batch["logp_old"],
            batch["advantages"],
            batch["returns"],
            spec,
        )
    raise TypeError(f"unknown loss specification: {type(spec).__name__}")


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n_params: int) -> "AdamState":
        return cls(m=np.zeros(n_params), v=np.zeros(n_params))


def optimizer_step(
    params: PolicyParams,
    grad_vec: np.ndarray,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[PolicyParams, AdamState]:
    """Bias-corrected adaptive-moment update; returns fresh snapshots."""
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grad_vec
    v = beta2 * state.v + (1.0 - beta2) * grad_vec * grad_vec
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    new_vec = params.vec - lr * m_hat / (np.sqrt(v_hat) + eps)
    return PolicyParams(params.layout, new_vec), AdamState(m=m, v=v, t=t)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, params: PolicyParams, seed: int = 0, train_step: int = 0) -> None:
    meta = {
        "layout": {
            "input_dim": params.layout.input_dim,
            "hidden": list(params.layout.hidden),
            "continuous_dim": params.layout.continuous_dim,
            "discrete_cardinality": params.layout.discrete_cardinality,
        },
        "seed": int(seed),
        "train_step": int(train_step),
    }
    header = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(params.vec.astype("<f4").tobytes())


def load_checkpoint(path) -> tuple[PolicyParams, dict]:
    with open(path, "rb") as f:
        data = f.read()
    if data[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    (header_len,) = struct.unpack("<I", data[8:12])
    meta = json.loads(data[12 : 12 + header_len].decode("utf-8"))
    layout = NetLayout(
        input_dim=meta["layout"]["input_dim"],
        hidden=tuple(meta["layout"]["hidden"]),
        continuous_dim=meta["layout"]["continuous_dim"],
        discrete_cardinality=meta["layout"]["discrete_cardinality"],
    )
    vec = np.frombuffer(data[12 + header_len :], dtype="<f4").astype(np.float64)
    return PolicyParams(layout, vec), meta
