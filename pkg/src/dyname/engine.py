"""Online adaptation and prediction loop.

Each online step first adapts on the most recent fully observed target (the
forecast anchored H steps back, re-evaluated with the current parameters),
then predicts for the current anchor. The adaptation blend uses the danger
signal from the previous step; the prediction blend uses the one just
updated. The stream clock on the store guarantees no read ever touches an
index beyond the current step.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .data import Normalizer, SeriesStore, history_at
from .errors import ConfigError, DegenerateSpectrum, DynameError, NoValidSamples
from .model import (
    ForwardCache,
    GateOutput,
    ModelState,
    backward_and_update,
    blended_prediction,
    extract_features,
    gate_forward,
    general_expert,
    init_model,
)
from .periods import build_expert_batch, top_k_periods
from .ridge import predict_expert
from .safety import SafetyState, blend_factor, danger_signal, update_ewma

METHODS = ("dyname", "gd", "weekly_lr")


@dataclass(frozen=True)
class EngineConfig:
    """Hyperparameters of one online run (defaults follow the fixed desk
    settings: L=96, lam=1e-4, alpha=0.95, delta=0.01; the searchable knobs
    default to H=24, M=336, k=2, n_max=8, beta=0.2)."""

    lookback: int = 96
    horizon: int = 24
    buffer_len: int = 336
    n_experts: int = 2
    n_max: int = 8
    lam: float = 1e-4
    alpha: float = 0.95
    delta: float = 0.01
    beta: float = 0.2
    learning_rate: float = 3e-3
    feature_dim: int = 64
    pretrain_epochs: int = 5
    seed: int = 0

    def validate(self) -> None:
        if self.lookback < 1 or self.horizon < 1:
            raise ConfigError("lookback and horizon must be >= 1")
        if self.buffer_len < self.lookback + self.horizon + 1:
            raise ConfigError("buffer_len must be >= lookback + horizon + 1")
        if self.n_experts < 1 or self.n_max < 1:
            raise ConfigError("n_experts and n_max must be >= 1")
        if self.lam <= 0.0:
            raise ConfigError("lam must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must be in (0, 1)")
        if self.delta <= 0.0:
            raise ConfigError("delta must be positive")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError("beta must be in [0, 1]")
        if self.learning_rate <= 0.0:
            raise ConfigError("learning_rate must be positive")
        if self.feature_dim < 2:
            raise ConfigError("feature_dim must be >= 2")


@dataclass(frozen=True)
class RunPlan:
    """Resolved behavior switches for one run (method and ablation axes)."""

    predictor: str = "model"            # "model" or "weekly_lr"
    gate_variant: str = "dynamic"
    use_danger: bool = True
    keep_beta: bool = True              # with the danger signal off, keep gamma = beta
    period_mode: str = "dynamic_fft"    # "dynamic_fft" or "fixed"
    fixed_periods: tuple[int, ...] = (168, 24)
    force_gamma: float | None = None
    skip_experts: bool = False
    stop_specialized: bool = True


def plan_for_method(method: str) -> RunPlan:
    if method == "dyname":
        return RunPlan()
    if method == "gd":
        return RunPlan(force_gamma=1.0, skip_experts=True, use_danger=False)
    if method == "weekly_lr":
        return RunPlan(predictor="weekly_lr")
    raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")


@dataclass
class StepRecord:
    """Observable trace of one prediction step."""

    t: int
    y_hat: np.ndarray                       # [H x C]
    per_expert: list[tuple[int, np.ndarray]]  # (period, [H x C]); period 0 = generalized
    omega_tilde: np.ndarray                 # [C x K]
    omega: np.ndarray                       # [C x K]
    periods: tuple[int, ...]
    mu: float
    d: float
    gamma: float
    adapt_mse: float | None = None
    realized_mse: float | None = None


@dataclass
class RunResult:
    records: list[StepRecord]
    summary: dict
    model: ModelState | None
    normalizer: Normalizer
    store_view: SeriesStore


@dataclass
class _Forward:
    preds: np.ndarray            # [K x H x C], masked slots zero
    mask: np.ndarray             # [K] bool
    gate: GateOutput
    cache: ForwardCache
    periods: tuple[int, ...]


def _batch_feature_map(state: ModelState):
    def feature_map(X: np.ndarray) -> np.ndarray:
        # [n x L x C] -> [n x C x D]
        return np.einsum("nlc,dl->ncd", X, state.phi_w) + state.phi_b
    return feature_map


def forward_pass(
    t: int,
    store: SeriesStore,
    state: ModelState,
    cfg: EngineConfig,
    plan: RunPlan = RunPlan(),
    *,
    strict: bool = False,
) -> _Forward:
    """Committee forward pass at anchor t.

    Identifies periods, fits one specialized expert per distinct period on
    its strided batch, and evaluates the generalized expert and the gate.
    Experts whose batch construction fails are dropped and the gate
    renormalizes over the survivors; with no survivor the pass degrades to
    the generalized expert alone unless ``strict`` is set.
    """
    L, H = cfg.lookback, cfg.horizon
    k_slots = cfg.n_experts + 1
    x = store.rows(t - L + 1, t + 1)
    n_channels = x.shape[1]
    z = extract_features(x, state)
    y0 = general_expert(z, state)

    preds = np.zeros((k_slots, H, n_channels))
    preds[0] = y0
    mask = np.zeros(k_slots, dtype=bool)
    mask[0] = True
    periods_used: list[int] = []
    query_maps = None

    if not plan.skip_experts:
        if plan.period_mode == "fixed":
            period_list = sorted(plan.fixed_periods, reverse=True)[: cfg.n_experts]
        else:
            try:
                pset = top_k_periods(history_at(store, t, cfg.buffer_len), cfg.n_experts)
                period_list = pset.periods
            except DegenerateSpectrum:
                if strict:
                    raise
                period_list = []
        feature_map = _batch_feature_map(state)
        need_maps = not plan.stop_specialized
        if need_maps:
            query_maps = np.zeros((k_slots, n_channels, cfg.feature_dim, H))
        for slot, period in enumerate(period_list, start=1):
            if slot >= k_slots:
                break
            try:
                batch = build_expert_batch(store, t, period, L, H, cfg.n_max)
            except NoValidSamples:
                continue
            if need_maps:
                pred_i, qmap = predict_expert(
                    batch, feature_map, z, cfg.lam, return_query_maps=True
                )
                query_maps[slot] = qmap
            else:
                pred_i = predict_expert(batch, feature_map, z, cfg.lam)
            preds[slot] = pred_i
            mask[slot] = True
            periods_used.append(period)
        if strict and mask.sum() == 1:
            raise NoValidSamples(f"no specialized expert survived at t={t}")

    gate = gate_forward(z, state, raw_input=x, mask=mask)
    cache = ForwardCache(
        x=x,
        z=z,
        preds=preds,
        mask=mask,
        gate=gate,
        omega=np.empty(0),  # filled once the blend factor is known
        gamma=0.0,
        expert_query_maps=query_maps,
    )
    return _Forward(preds=preds, mask=mask, gate=gate, cache=cache, periods=tuple(periods_used))


def _effective_gamma(safety: SafetyState, plan: RunPlan, *, d_value: float) -> float:
    if plan.force_gamma is not None:
        return plan.force_gamma
    beta = safety.beta if plan.keep_beta else 0.0
    d = d_value if plan.use_danger else 0.0
    return blend_factor(d, beta)


def _blend(fw: _Forward, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    omega_tilde = fw.gate.omega_tilde
    omega = (1.0 - gamma) * omega_tilde
    omega[:, 0] += gamma
    fw.cache.omega = omega
    fw.cache.gamma = gamma
    return omega, blended_prediction(fw.preds, omega)


def adapt_step(
    t: int,
    store: SeriesStore,
    state: ModelState,
    safety: SafetyState,
    cfg: EngineConfig,
    plan: RunPlan = RunPlan(),
) -> float:
    """One parameter update from the forecast whose truth just completed.

    Re-runs the forward pass at anchor t - H with the current parameters,
    blends with the previous step's danger signal, takes one SGD step on the
    blended MSE, and then refreshes the error average and danger signal.
    Returns the realized adaptation MSE.
    """
    anchor = t - cfg.horizon
    fw = forward_pass(anchor, store, state, cfg, plan)
    gamma = _effective_gamma(safety, plan, d_value=safety.d)
    _, y_hat = _blend(fw, gamma)
    y_true = store.rows(anchor + 1, anchor + cfg.horizon + 1)
    err = y_hat - y_true
    mse = float(np.mean(err * err))
    loss_grad = 2.0 * err / err.size
    backward_and_update(loss_grad, fw.cache, state, stop_specialized=plan.stop_specialized)
    update_ewma(safety, mse)
    if plan.use_danger:
        danger_signal(safety, mse)
    else:
        safety.d = 0.0
    return mse


def predict_step(
    t: int,
    store: SeriesStore,
    state: ModelState,
    safety: SafetyState,
    cfg: EngineConfig,
    plan: RunPlan = RunPlan(),
) -> StepRecord:
    """Forecast for anchor t with the freshly adapted parameters."""
    fw = forward_pass(t, store, state, cfg, plan)
    gamma = _effective_gamma(safety, plan, d_value=safety.d)
    omega, y_hat = _blend(fw, gamma)
    per_expert = [(0, fw.preds[0])]
    slot = 1
    for period in fw.periods:
        if fw.mask[slot]:
            per_expert.append((period, fw.preds[slot]))
        slot += 1
    return StepRecord(
        t=t,
        y_hat=y_hat,
        per_expert=per_expert,
        omega_tilde=fw.gate.omega_tilde,
        omega=omega,
        periods=fw.periods,
        mu=safety.mu_mse,
        d=safety.d if plan.use_danger else 0.0,
        gamma=gamma,
    )


def _check_step_invariants(record: StepRecord) -> list[str]:
    problems: list[str] = []
    for name, w in (("omega_tilde", record.omega_tilde), ("omega", record.omega)):
        if np.any(w < -1e-9):
            problems.append(f"t={record.t}: negative {name} weight")
        if np.any(np.abs(w.sum(axis=1) - 1.0) > 1e-6):
            problems.append(f"t={record.t}: {name} rows off the simplex")
    if np.any(record.omega[:, 0] + 1e-9 < record.omega_tilde[:, 0]):
        problems.append(f"t={record.t}: blending decreased the slot-0 weight")
    active = np.stack([p for _, p in record.per_expert])
    lo = active.min(axis=0)
    hi = active.max(axis=0)
    tol = 1e-8 * (1.0 + np.abs(active).max())
    if np.any(record.y_hat < lo - tol) or np.any(record.y_hat > hi + tol):
        problems.append(f"t={record.t}: blended forecast outside the expert hull")
    return problems


def first_online_anchor(store: SeriesStore, cfg: EngineConfig) -> int:
    return max(store.val_end, cfg.lookback - 1, cfg.buffer_len - 1)


def pretrain_model(
    store: SeriesStore,
    cfg: EngineConfig,
    plan: RunPlan = RunPlan(),
) -> ModelState:
    """Warm up the trainable parameters on the pretrain split.

    Replays the per-step procedure over the training anchors for up to
    ``pretrain_epochs`` epochs, early-stopped on the validation slice (the
    5% between the train and online boundaries). ``store`` must already be
    normalized.
    """
    state = init_model(
        cfg.lookback,
        cfg.horizon,
        cfg.feature_dim,
        cfg.n_experts,
        learning_rate=cfg.learning_rate,
        gate_variant=plan.gate_variant,
        seed=cfg.seed,
    )
    first = max(cfg.lookback - 1, cfg.buffer_len - 1)
    last = store.pretrain_end - 1 - cfg.horizon
    if last < first:
        return state
    val_first = max(store.pretrain_end, first)
    val_last = store.val_end - 1 - cfg.horizon
    have_val = val_last >= val_first

    best_state: ModelState | None = None
    best_val = np.inf
    for _ in range(cfg.pretrain_epochs):
        safety = SafetyState(alpha=cfg.alpha, delta=cfg.delta, beta=cfg.beta)
        for t in range(first, last + 1):
            fw = forward_pass(t, store, state, cfg, plan)
            gamma = _effective_gamma(safety, plan, d_value=safety.d)
            _, y_hat = _blend(fw, gamma)
            y_true = store.rows(t + 1, t + cfg.horizon + 1)
            err = y_hat - y_true
            mse = float(np.mean(err * err))
            backward_and_update(
                2.0 * err / err.size, fw.cache, state, stop_specialized=plan.stop_specialized
            )
            update_ewma(safety, mse)
            if plan.use_danger:
                danger_signal(safety, mse)
        if not have_val:
            continue
        val_mse = _evaluate_span(store, state, cfg, plan, val_first, val_last)
        if val_mse < best_val:
            best_val = val_mse
            best_state = state.copy()
        else:
            break
    if best_state is not None:
        return best_state
    return state


def _evaluate_span(
    store: SeriesStore,
    state: ModelState,
    cfg: EngineConfig,
    plan: RunPlan,
    first: int,
    last: int,
) -> float:
    gamma = plan.force_gamma
    if gamma is None:
        gamma = blend_factor(0.0, cfg.beta if plan.keep_beta else 0.0)
    total = 0.0
    count = 0
    for t in range(first, last + 1):
        fw = forward_pass(t, store, state, cfg, plan)
        _, y_hat = _blend(fw, gamma)
        y_true = store.rows(t + 1, t + cfg.horizon + 1)
        total += float(np.mean((y_hat - y_true) ** 2))
        count += 1
    return total / max(count, 1)


def run_online(
    store: SeriesStore,
    cfg: EngineConfig,
    method: str = "dyname",
    *,
    plan: RunPlan | None = None,
    model: ModelState | None = None,
    audit_access: bool = False,
    strict_invariants: bool = True,
) -> RunResult:
    """Replay the online split: adapt on completed feedback, then predict.

    The raw store is z-scored with statistics from the pretrain split; all
    forecasting, losses, and summary errors live in that normalized space.
    With ``audit_access`` every row read of the replay is recorded on the
    returned store view for leakage audits.
    """
    cfg.validate()
    resolved = plan if plan is not None else plan_for_method(method)
    if resolved.predictor not in ("model", "weekly_lr"):
        raise ConfigError(f"unknown predictor {resolved.predictor!r}")

    normalizer = Normalizer.fit(store)
    view = normalizer.normalized_store(store)
    t0 = first_online_anchor(view, cfg)
    t_last = len(view) - 1 - cfg.horizon
    if t_last < t0:
        raise ConfigError(
            f"online span is empty: first anchor {t0}, last anchor {t_last}"
        )

    safety = SafetyState(alpha=cfg.alpha, delta=cfg.delta, beta=cfg.beta)
    if resolved.predictor == "model":
        if model is None:
            model = pretrain_model(view, cfg, resolved)
    else:
        model = None
        from .baselines import weekly_lr_predict  # local import to avoid a cycle

    if audit_access:
        view.audit_trail = []

    records: list[StepRecord] = []
    violations: list[str] = []
    started = time.perf_counter()
    for t in range(t0, t_last + 1):
        view.advance_clock(t)
        if resolved.predictor == "weekly_lr":
            y_hat = weekly_lr_predict(view, t, horizon=cfg.horizon, lookback=cfg.lookback)
            ones = np.ones((view.n_channels, 1))
            record = StepRecord(
                t=t,
                y_hat=y_hat,
                per_expert=[(168, y_hat)],
                omega_tilde=ones,
                omega=ones.copy(),
                periods=(168,),
                mu=0.0,
                d=0.0,
                gamma=0.0,
            )
        else:
            if t - cfg.horizon >= t0:
                record_mse = adapt_step(t, view, model, safety, cfg, resolved)
            else:
                record_mse = None
            record = predict_step(t, view, model, safety, cfg, resolved)
            record.adapt_mse = record_mse
            problems = _check_step_invariants(record)
            if problems:
                violations.extend(problems)
                if strict_invariants:
                    raise DynameError("; ".join(problems))
        records.append(record)
    elapsed = time.perf_counter() - started
    view.release_clock()

    for record in records:
        y_true = view.rows(record.t + 1, record.t + cfg.horizon + 1)
        record.realized_mse = float(np.mean((record.y_hat - y_true) ** 2))

    mse = float(np.mean([r.realized_mse for r in records]))
    summary = {
        "schema_version": 1,
        "method": method,
        "horizon": cfg.horizon,
        "lookback": cfg.lookback,
        "n_steps": len(records),
        "mse": mse,
        "invariant_violations": len(violations),
        "timing": {
            "total_seconds": elapsed,
            "wall_clock_per_step": elapsed / max(len(records), 1),
        },
    }
    return RunResult(
        records=records, summary=summary, model=model, normalizer=normalizer, store_view=view
    )
