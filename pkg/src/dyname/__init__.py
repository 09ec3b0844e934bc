"""Online time-series forecasting with dynamic multi-period experts.

A committee of per-step ridge-fitted specialized experts handles recurring
drift; a danger-signal fallback onto a trainable general expert handles
emergent drift. See the README for the command-line interface.
"""

from .baselines import AblationSpec, recency_lr_predict, run_ablation, weekly_lr_predict
from .data import (
    HistoryBuffer,
    Normalizer,
    SeriesStore,
    WindowPair,
    history_at,
    load_csv,
    make_window,
)
from .engine import (
    EngineConfig,
    RunPlan,
    RunResult,
    StepRecord,
    adapt_step,
    forward_pass,
    plan_for_method,
    predict_step,
    run_online,
)
from .model import (
    ModelState,
    backward_and_update,
    extract_features,
    gate_forward,
    general_expert,
    init_model,
    load_checkpoint,
    save_checkpoint,
)
from .periods import ExpertBatch, PeriodSet, acf, build_expert_batch, top_k_periods
from .ridge import RidgeProblem, predict_expert, solve_dual, solve_primal
from .safety import SafetyState, blend_factor, blend_weights, danger_signal, update_ewma
from .synth import Component, Shock, SynthSpec, generate, generate_scenario, write_stream_csv

__version__ = "0.1.0"
