"""Trainable components: feature extractor, general expert, and gating MLP.

All parameters live in a single :class:`ModelState` and are updated by plain
SGD with analytic gradients (verified against finite differences in the
tests). The backbone is a channel-shared linear map from the lookback to a
D-dimensional feature; the gate is a 2-layer MLP with an exact erf-based
GELU producing simplex weights over the generalized expert (slot 0) and the
specialized experts (slots 1..k).

Gradient paths: the loss reaches the parameters through the generalized
expert's output and through the gate weights. Specialized-expert outputs
are treated as constants by default; optionally their exact sensitivity to
the current feature (a fixed linear map per step) is propagated instead,
but nothing ever differentiates through the per-step ridge fit itself.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import erf

from .errors import ConfigError, NonFiniteGradient

CHECKPOINT_VERSION = 1

GATE_VARIANTS = ("dynamic", "simple_average", "learnable", "detached")

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact GELU: x * Phi(x) with the Gaussian CDF via erf."""
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * np.exp(-0.5 * x * x) * _INV_SQRT_2PI


@dataclass
class ModelState:
    """All trainable parameters plus the SGD step size.

    Shapes: phi_w [D x L], phi_b [D], f0_w [H x D], f0_b [H],
    gate_w_in [Dh x G], gate_b_in [Dh], gate_w_out [K x Dh], gate_b_out [K],
    gate_logits [K] (used only by the input-independent gate variant).
    K = k + 1 output slots; Dh = floor(D / 2); G is D for the feature-fed
    gate and L for the detached (raw-input) gate.
    """

    phi_w: np.ndarray
    phi_b: np.ndarray
    f0_w: np.ndarray
    f0_b: np.ndarray
    gate_w_in: np.ndarray
    gate_b_in: np.ndarray
    gate_w_out: np.ndarray
    gate_b_out: np.ndarray
    gate_logits: np.ndarray
    learning_rate: float
    gate_variant: str = "dynamic"

    @property
    def lookback(self) -> int:
        return self.phi_w.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.phi_w.shape[0]

    @property
    def horizon(self) -> int:
        return self.f0_w.shape[0]

    @property
    def n_slots(self) -> int:
        return self.gate_w_out.shape[0]

    def parameters(self) -> dict[str, np.ndarray]:
        return {
            "phi_w": self.phi_w,
            "phi_b": self.phi_b,
            "f0_w": self.f0_w,
            "f0_b": self.f0_b,
            "gate_w_in": self.gate_w_in,
            "gate_b_in": self.gate_b_in,
            "gate_w_out": self.gate_w_out,
            "gate_b_out": self.gate_b_out,
            "gate_logits": self.gate_logits,
        }

    def copy(self) -> "ModelState":
        return ModelState(
            phi_w=self.phi_w.copy(),
            phi_b=self.phi_b.copy(),
            f0_w=self.f0_w.copy(),
            f0_b=self.f0_b.copy(),
            gate_w_in=self.gate_w_in.copy(),
            gate_b_in=self.gate_b_in.copy(),
            gate_w_out=self.gate_w_out.copy(),
            gate_b_out=self.gate_b_out.copy(),
            gate_logits=self.gate_logits.copy(),
            learning_rate=self.learning_rate,
            gate_variant=self.gate_variant,
        )


def init_model(
    lookback: int,
    horizon: int,
    feature_dim: int,
    n_experts: int,
    *,
    learning_rate: float = 3e-3,
    gate_variant: str = "dynamic",
    seed: int = 0,
) -> ModelState:
    """Fresh model with neutral expert mixing.

    Backbone and general-expert parameters draw uniformly from
    [-1/sqrt(fan_in), 1/sqrt(fan_in)]; the gate output layer starts at zero
    so the initial weights are uniform over the active slots.
    """
    if gate_variant not in GATE_VARIANTS:
        raise ConfigError(f"unknown gate variant {gate_variant!r}")
    rng = np.random.default_rng(seed)
    k_slots = n_experts + 1
    hidden = feature_dim // 2
    if hidden < 1:
        raise ConfigError("feature_dim must be >= 2 for the gate hidden layer")
    gate_in = lookback if gate_variant == "detached" else feature_dim

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    return ModelState(
        phi_w=uniform((feature_dim, lookback), lookback),
        phi_b=uniform((feature_dim,), lookback),
        f0_w=uniform((horizon, feature_dim), feature_dim),
        f0_b=uniform((horizon,), feature_dim),
        gate_w_in=uniform((hidden, gate_in), gate_in),
        gate_b_in=np.zeros(hidden),
        gate_w_out=np.zeros((k_slots, hidden)),
        gate_b_out=np.zeros(k_slots),
        gate_logits=np.zeros(k_slots),
        learning_rate=learning_rate,
        gate_variant=gate_variant,
    )


def extract_features(x: np.ndarray, state: ModelState) -> np.ndarray:
    """Per-channel features z [C x D] from a normalized lookback x [L x C]."""
    return x.T @ state.phi_w.T + state.phi_b


def general_expert(z: np.ndarray, state: ModelState) -> np.ndarray:
    """Generalized-expert forecast [H x C] from features z [C x D]."""
    return (z @ state.f0_w.T + state.f0_b).T


def masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the active slots; inactive slots get weight 0."""
    out = np.zeros_like(logits)
    active = logits[:, mask]
    active = active - active.max(axis=1, keepdims=True)
    expd = np.exp(active)
    out[:, mask] = expd / expd.sum(axis=1, keepdims=True)
    return out


@dataclass
class GateOutput:
    """Per-channel simplex weights over expert slots plus the activations
    needed to backpropagate through the gate."""

    omega_tilde: np.ndarray          # [C x K]
    gate_input: np.ndarray | None    # [C x G] for MLP variants
    pre_activation: np.ndarray | None  # [C x Dh]
    hidden: np.ndarray | None        # [C x Dh]


def gate_forward(
    z: np.ndarray,
    state: ModelState,
    *,
    raw_input: np.ndarray | None = None,
    mask: np.ndarray | None = None,
) -> GateOutput:
    """Gate weights for features z [C x D].

    ``mask`` marks the usable slots (slot 0 must stay active); masked slots
    are dropped before the softmax so the output stays on the simplex.
    ``raw_input`` supplies the [L x C] lookback for the detached variant.
    """
    n_channels = z.shape[0]
    k_slots = state.n_slots
    if mask is None:
        mask = np.ones(k_slots, dtype=bool)
    if not mask[0]:
        raise ConfigError("slot 0 (generalized expert) cannot be masked")

    variant = state.gate_variant
    if variant == "simple_average":
        weights = np.zeros((n_channels, k_slots))
        weights[:, mask] = 1.0 / mask.sum()
        return GateOutput(weights, None, None, None)
    if variant == "learnable":
        logits = np.broadcast_to(state.gate_logits, (n_channels, k_slots)).copy()
        return GateOutput(masked_softmax(logits, mask), None, None, None)

    if variant == "detached":
        if raw_input is None:
            raise ConfigError("detached gate requires the raw lookback input")
        gate_in = raw_input.T
    else:
        gate_in = z
    pre = gate_in @ state.gate_w_in.T + state.gate_b_in
    hid = gelu(pre)
    logits = hid @ state.gate_w_out.T + state.gate_b_out
    return GateOutput(masked_softmax(logits, mask), gate_in, pre, hid)


@dataclass
class ForwardCache:
    """Everything the backward pass needs from one blended forward pass."""

    x: np.ndarray                    # [L x C]
    z: np.ndarray                    # [C x D]
    preds: np.ndarray                # [K x H x C]; masked slots are zero
    mask: np.ndarray                 # [K] bool
    gate: GateOutput
    omega: np.ndarray                # [C x K] final blended weights
    gamma: float
    expert_query_maps: np.ndarray | None = None  # [K x C x D x H] for slots >= 1


def blended_prediction(preds: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """Weighted committee forecast [H x C] = sum_i omega[:, i] * preds[i]."""
    return np.einsum("ci,ihc->hc", omega, preds)


def backward_and_update(
    loss_grad: np.ndarray,
    cache: ForwardCache,
    state: ModelState,
    *,
    stop_specialized: bool = True,
) -> ModelState:
    """One SGD step from the gradient of the loss w.r.t. the blended forecast.

    ``loss_grad`` is dL/dy_hat, [H x C]. The blend factor and danger signal
    are constants here; dL/d(omega_tilde) picks up the (1 - gamma) factor of
    the blend. With ``stop_specialized`` unset, the gradient also flows into
    the current feature through each expert's fixed query map.
    """
    grads = _gradients(loss_grad, cache, state, stop_specialized=stop_specialized)
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradient(f"non-finite gradient for {name}")
    params = state.parameters()
    for name, grad in grads.items():
        params[name] -= state.learning_rate * grad
    return state


def _gradients(
    loss_grad: np.ndarray,
    cache: ForwardCache,
    state: ModelState,
    *,
    stop_specialized: bool = True,
) -> dict[str, np.ndarray]:
    G = loss_grad                                   # [H x C]
    omega_tilde = cache.gate.omega_tilde            # [C x K]
    omega = cache.omega
    z = cache.z
    variant = state.gate_variant

    grads = {name: np.zeros_like(p) for name, p in state.parameters().items()}

    # Generalized-expert branch.
    dy0 = omega[:, 0][None, :] * G                  # [H x C]
    grads["f0_w"] = dy0 @ z                         # [H x D]
    grads["f0_b"] = dy0.sum(axis=1)
    dz = dy0.T @ state.f0_w                         # [C x D]

    # Gate branch: dL/d(omega) through the committee sum, then the blend.
    domega = np.einsum("hc,ihc->ci", G, cache.preds)
    domega_tilde = (1.0 - cache.gamma) * domega
    dot = (omega_tilde * domega_tilde).sum(axis=1, keepdims=True)
    dlogits = omega_tilde * (domega_tilde - dot)    # [C x K]

    if variant == "learnable":
        grads["gate_logits"] = dlogits.sum(axis=0)
    elif variant in ("dynamic", "detached"):
        hid = cache.gate.hidden
        pre = cache.gate.pre_activation
        gate_in = cache.gate.gate_input
        grads["gate_w_out"] = dlogits.T @ hid
        grads["gate_b_out"] = dlogits.sum(axis=0)
        dhid = dlogits @ state.gate_w_out
        dpre = gelu_grad(pre) * dhid
        grads["gate_w_in"] = dpre.T @ gate_in
        grads["gate_b_in"] = dpre.sum(axis=0)
        if variant == "dynamic":
            dz = dz + dpre @ state.gate_w_in
    # simple_average: no gate parameters.

    if not stop_specialized and cache.expert_query_maps is not None:
        # y_i[:, c] = z[c] @ Q[i, c]; only the query-side sensitivity flows.
        for i in range(1, cache.preds.shape[0]):
            if not cache.mask[i]:
                continue
            q = cache.expert_query_maps[i]          # [C x D x H]
            dz = dz + omega[:, i][:, None] * np.einsum("cdh,hc->cd", q, G)

    # Backbone.
    grads["phi_w"] = dz.T @ cache.x.T               # [D x L]
    grads["phi_b"] = dz.sum(axis=0)
    return grads


def save_checkpoint(state: ModelState, path: str | Path) -> None:
    """Write all parameters as a versioned JSON document."""
    payload = {
        "version": CHECKPOINT_VERSION,
        "gate_variant": state.gate_variant,
        "learning_rate": state.learning_rate,
        "arrays": {name: p.tolist() for name, p in state.parameters().items()},
    }
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(path: str | Path) -> ModelState:
    payload = json.loads(Path(path).read_text())
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {payload.get('version')!r}")
    arrays = {name: np.asarray(v, dtype=np.float64) for name, v in payload["arrays"].items()}
    return ModelState(
        learning_rate=float(payload["learning_rate"]),
        gate_variant=payload["gate_variant"],
        **arrays,
    )
