"""Boosted low-rank adapter training.

The main loop: for each of T iterations, sample a layer subset, initialize
a fresh rank-r adapter set on it, train the adapters alone for kappa SGD
steps, then merge them into the base weights and discard them. Plain LoRA
is the one-iteration special case (T=1, kappa=K, all layers); full
fine-tuning and a classic residual-fitting gradient-boosting reference
live here too, plus the analytic cost model.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from xgblora.lora import AdapterSet, init_adapter_set, merge_adapters
from xgblora.models import (
    Dataset,
    ModelSpec,
    batch_loss,
    list_adaptable_weights,
    loss_eval,
    sort_key,
)
from xgblora.tensor import MomentumSgd, Rng, frobenius_norm, sgd_step


class ConfigError(ValueError):
    """Invalid training configuration; message names the field."""


@dataclass
class BoostConfig:
    """Schedule and hyperparameters for the boosting loop.

    Any two of (iterations, steps_per_booster, total_steps) determine the
    third; giving all three requires consistency. A non-dividing total is
    allowed: the final booster trains the remainder (with a warning).
    """

    iterations: Optional[int] = None  # T
    steps_per_booster: Optional[int] = None  # kappa
    total_steps: Optional[int] = None  # K
    rank: int = 1
    sample_layers: int = 8  # L_s
    lam: float = 0.0
    eta: float = 0.05
    batch_size: int = 16
    seed: int = 0
    policy: str = "qv"
    include_embedding: bool = False
    alpha: float = 1.0
    record_merge_loss: bool = True
    momentum: float = 0.0  # plain SGD by default; bound probes require 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        given = {
            "iterations": self.iterations,
            "steps_per_booster": self.steps_per_booster,
            "total_steps": self.total_steps,
        }
        known = {k: v for k, v in given.items() if v is not None}
        if len(known) < 2:
            raise ConfigError(
                "schedule underdetermined: give two of iterations/steps_per_booster/total_steps"
            )
        for name, v in known.items():
            if v < 1:
                raise ConfigError(f"{name} must be >= 1, got {v}")
        if self.iterations is None:
            self.iterations = -(-self.total_steps // self.steps_per_booster)  # ceil
        elif self.steps_per_booster is None:
            if self.total_steps % self.iterations:
                raise ConfigError(
                    f"total_steps={self.total_steps} not divisible by iterations={self.iterations}"
                )
            self.steps_per_booster = self.total_steps // self.iterations
        elif self.total_steps is None:
            self.total_steps = self.iterations * self.steps_per_booster
        elif self.steps_per_booster * self.iterations != self.total_steps:
            if (
                -(-self.total_steps // self.steps_per_booster) == self.iterations
                and self.total_steps % self.steps_per_booster
            ):
                pass  # consistent with a remainder booster
            else:
                raise ConfigError(
                    f"total_steps={self.total_steps} != steps_per_booster={self.steps_per_booster}"
                    f" * iterations={self.iterations}"
                )
        if self.total_steps % self.steps_per_booster:
            warnings.warn(
                f"steps_per_booster={self.steps_per_booster} does not divide "
                f"total_steps={self.total_steps}; final booster trains the remainder",
                stacklevel=2,
            )
        if self.rank < 1:
            raise ConfigError(f"rank must be >= 1, got {self.rank}")
        if self.sample_layers < 1:
            raise ConfigError(f"sample_layers must be >= 1, got {self.sample_layers}")
        if self.lam < 0:
            raise ConfigError(f"lam must be >= 0, got {self.lam}")
        if self.eta < 0:
            raise ConfigError(f"eta must be >= 0, got {self.eta}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.policy not in ("qv", "all"):
            raise ConfigError(f"policy must be qv or all, got {self.policy!r}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")

    def booster_steps(self, t: int) -> int:
        """Step count for booster t (1-based); the last may be a remainder."""
        if t < self.iterations:
            return self.steps_per_booster
        return self.total_steps - self.steps_per_booster * (self.iterations - 1)


@dataclass
class PairStats:
    """Per-target-matrix measurements for one booster."""

    target: str
    a_norm: float = 0.0
    b_norm: float = 0.0
    a_update_norm: float = 0.0
    b_update_norm: float = 0.0
    grad_max: float = 0.0  # max over steps of max(|dL/dA|_F, |dL/dB|_F)
    grad_eff_max: float = 0.0  # max over steps of |dL/dW_eff|_F


@dataclass
class BoosterTrace:
    t: int
    selected_layers: list[int]
    step_losses: list[float] = field(default_factory=list)
    pair_stats: dict = field(default_factory=dict)  # str(wid) -> PairStats
    pre_merge_loss: Optional[float] = None
    post_merge_loss: Optional[float] = None
    # steps executed before this process picked the booster up (resume);
    # the weight path is exact, the per-step stats of those steps are not re-recorded
    prior_steps: int = 0

    @property
    def steps(self) -> int:
        return self.prior_steps + len(self.step_losses)

    @property
    def grad_max(self) -> float:
        """Largest per-step adapter gradient norm seen this booster."""
        if not self.pair_stats:
            return 0.0
        return max(ps.grad_max for ps in self.pair_stats.values())

    @property
    def a_norm(self) -> float:
        return max((ps.a_norm for ps in self.pair_stats.values()), default=0.0)

    @property
    def b_norm(self) -> float:
        return max((ps.b_norm for ps in self.pair_stats.values()), default=0.0)


def select_layers(rng: Rng, n_layers: int, n_sample: int) -> list[int]:
    """Uniform sample of layer indices (1-based) without replacement,
    sorted. n_sample is clamped to n_layers with a warning."""
    if n_sample < 1:
        raise ConfigError(f"sample_layers must be >= 1, got {n_sample}")
    if n_sample > n_layers:
        warnings.warn(
            f"sample_layers={n_sample} exceeds model layers={n_layers}; clamping",
            stacklevel=2,
        )
        n_sample = n_layers
    pool = list(range(1, n_layers + 1))
    for i in range(n_sample):
        j = i + rng.randint(n_layers - i)
        pool[i], pool[j] = pool[j], pool[i]
    return sorted(pool[:n_sample])


def train_booster(
    model: ModelSpec,
    adapters: AdapterSet,
    data: Dataset,
    kappa: int,
    lam: float,
    eta: float,
    batch_size: int,
    rng: Rng,
    trace: Optional[BoosterTrace] = None,
    max_steps: Optional[int] = None,
    optimizer: Optional[MomentumSgd] = None,
) -> BoosterTrace:
    """Exactly kappa SGD steps on the adapter matrices; the base weights
    stay frozen. Resumable: pass the partial trace back in and training
    continues from trace.steps. Records per-step batch losses and per-pair
    gradient statistics; final norms are stamped when the booster completes.
    """
    adapters.check_live()
    if kappa < 1:
        raise ConfigError(f"kappa must be >= 1, got {kappa}")
    if trace is None:
        trace = BoosterTrace(t=adapters.booster_index, selected_layers=sorted({w.layer for w in adapters.pairs}))
        trace.pair_stats = {str(wid): PairStats(target=str(wid)) for wid in adapters.targets()}
    params = adapters.trainable_params()
    a_init = {str(wid): pair.a_init for wid, pair in adapters.pairs.items()}

    todo = kappa - trace.steps
    if max_steps is not None:
        todo = min(todo, max_steps)
    for _ in range(todo):
        idx = rng.randint_array(data.n, batch_size)
        batch = data.batch(idx)
        collect = {}
        loss = batch_loss(model, batch, adapters=adapters, lam=lam, collect=collect)
        loss.backward()
        for wid, pair in adapters.pairs.items():
            ps = trace.pair_stats[str(wid)]
            ga = frobenius_norm(pair.a.grad) if pair.a.grad is not None else 0.0
            gb = frobenius_norm(pair.b.grad) if pair.b.grad is not None else 0.0
            ps.grad_max = max(ps.grad_max, ga, gb)
            eff = collect.get(wid)
            if eff is not None and eff.grad is not None:
                ps.grad_eff_max = max(ps.grad_eff_max, frobenius_norm(eff.grad))
        if optimizer is None:
            sgd_step(params, eta)
        else:
            optimizer.step(params, eta)
        value = loss.item()
        if not np.isfinite(value):
            raise FloatingPointError(
                f"booster {adapters.booster_index} diverged at step {trace.steps + 1} "
                f"(loss={value}); lower eta"
            )
        trace.step_losses.append(value)

    if trace.steps >= kappa:
        for wid, pair in adapters.pairs.items():
            ps = trace.pair_stats[str(wid)]
            ps.a_norm = frobenius_norm(pair.a)
            ps.b_norm = frobenius_norm(pair.b)
            ps.a_update_norm = frobenius_norm(pair.a.data - a_init[str(wid)])
            ps.b_update_norm = ps.b_norm  # B starts at exactly zero
    return trace


@dataclass
class BoostRun:
    """Resumable state of one boosting run."""

    model: ModelSpec
    data: Dataset
    cfg: BoostConfig
    rng: Rng
    global_step: int = 0
    booster: int = 1  # 1-based iteration about to run / being run
    adapters: Optional[AdapterSet] = None
    trace: Optional[BoosterTrace] = None
    traces: list[BoosterTrace] = field(default_factory=list)
    optimizer: Optional[MomentumSgd] = None

    @property
    def done(self) -> bool:
        return self.booster > self.cfg.iterations


def _booster_targets(model: ModelSpec, cfg: BoostConfig, layers: list[int]):
    adaptable = list_adaptable_weights(
        model, policy=cfg.policy, include_embedding=cfg.include_embedding
    )
    chosen = set(layers)
    return [wid for wid in adaptable if wid.layer in chosen]


def boost_step(run: BoostRun, max_steps: Optional[int] = None, on_merge: Optional[Callable] = None) -> int:
    """Advance the run by at most max_steps optimizer steps (None = to the
    end). Returns the number of steps executed. Merges happen whenever a
    booster completes; base weights change only at merges."""
    cfg = run.cfg
    model = run.model
    executed = 0
    while not run.done:
        if max_steps is not None and executed >= max_steps:
            break
        if run.adapters is None:
            layers = select_layers(run.rng, model.layers, min(cfg.sample_layers, model.layers))
            targets = _booster_targets(model, cfg, layers)
            run.adapters = init_adapter_set(
                model, targets, cfg.rank, run.rng, booster_index=run.booster, alpha=cfg.alpha
            )
            run.trace = BoosterTrace(t=run.booster, selected_layers=layers)
            run.trace.pair_stats = {
                str(wid): PairStats(target=str(wid)) for wid in run.adapters.targets()
            }
            # velocity restarts with each booster's fresh adapters
            run.optimizer = MomentumSgd(cfg.momentum) if cfg.momentum else None
        kappa_t = cfg.booster_steps(run.booster)
        budget = None if max_steps is None else max_steps - executed
        before = run.trace.steps
        train_booster(
            model,
            run.adapters,
            run.data,
            kappa_t,
            cfg.lam,
            cfg.eta,
            cfg.batch_size,
            run.rng,
            trace=run.trace,
            max_steps=budget,
            optimizer=run.optimizer,
        )
        executed += run.trace.steps - before
        run.global_step += run.trace.steps - before
        if run.trace.steps < kappa_t:
            break  # budget exhausted mid-booster
        if cfg.record_merge_loss:
            run.trace.pre_merge_loss = loss_eval(model, run.data, run.adapters, lam=0.0)
        merge_adapters(model, run.adapters)
        if cfg.record_merge_loss:
            run.trace.post_merge_loss = loss_eval(model, run.data, lam=0.0)
        run.traces.append(run.trace)
        if on_merge is not None:
            on_merge(run.trace)
        run.adapters = None
        run.trace = None
        run.booster += 1
    return executed


def xgblora_fit(
    model: ModelSpec,
    data: Dataset,
    cfg: BoostConfig,
    on_merge: Optional[Callable] = None,
    stop_after_step: Optional[int] = None,
    run: Optional[BoostRun] = None,
) -> tuple[ModelSpec, list[BoosterTrace]]:
    """Run the boosting loop to completion (or to stop_after_step, in which
    case the returned run can be resumed via the `run` argument)."""
    if run is None:
        run = BoostRun(model=model, data=data, cfg=cfg, rng=Rng(cfg.seed))
    budget = None if stop_after_step is None else max(stop_after_step - run.global_step, 0)
    boost_step(run, max_steps=budget, on_merge=on_merge)
    return run.model, run.traces


def lora_fit(
    model: ModelSpec,
    data: Dataset,
    rank: int = 8,
    total_steps: int = 100,
    lam: float = 0.0,
    eta: float = 0.05,
    batch_size: int = 16,
    seed: int = 0,
    policy: str = "qv",
    on_merge: Optional[Callable] = None,
) -> tuple[ModelSpec, list[BoosterTrace]]:
    """Plain low-rank adaptation: one booster over all layers for all K
    steps, merged once at the end."""
    cfg = BoostConfig(
        iterations=1,
        steps_per_booster=total_steps,
        rank=rank,
        sample_layers=model.layers,
        lam=lam,
        eta=eta,
        batch_size=batch_size,
        seed=seed,
        policy=policy,
    )
    return xgblora_fit(model, data, cfg, on_merge=on_merge)


def full_finetune(
    model: ModelSpec,
    data: Dataset,
    total_steps: int,
    eta: float,
    batch_size: int = 16,
    seed: int = 0,
    momentum: float = 0.0,
) -> tuple[ModelSpec, list[float]]:
    """K SGD steps on every weight in the model."""
    rng = Rng(seed)
    opt = MomentumSgd(momentum)
    params = [model.weights[wid] for wid in sorted(model.weights, key=sort_key)]
    for p in params:
        p.requires_grad = True
    losses = []
    try:
        for step in range(total_steps):
            idx = rng.randint_array(data.n, batch_size)
            loss = batch_loss(model, data.batch(idx))
            loss.backward()
            opt.step(params, eta)
            value = loss.item()
            if not np.isfinite(value):
                raise FloatingPointError(f"full fine-tune diverged at step {step + 1}; lower eta")
            losses.append(value)
    finally:
        for p in params:
            p.requires_grad = False
            p.grad = None
    return model, losses


# ----------------------------------------------------------------------
# Classic gradient boosting on 1-D regression (reference implementation)
# ----------------------------------------------------------------------


@dataclass
class LinearLearner:
    slope: float
    intercept: float

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.slope * x + self.intercept


@dataclass
class StumpLearner:
    threshold: float
    left: float
    right: float

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.where(x <= self.threshold, self.left, self.right)


@dataclass
class ClassicGbModel:
    learners: list
    rates: list[float]
    mse_history: list[float]

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = np.zeros_like(x)
        for alpha, f in zip(self.rates, self.learners):
            out += alpha * f(x)
        return out


def _fit_linear(x, resid) -> LinearLearner:
    xm, rm = x.mean(), resid.mean()
    var = ((x - xm) ** 2).sum()
    slope = 0.0 if var == 0 else float(((x - xm) * (resid - rm)).sum() / var)
    return LinearLearner(slope=slope, intercept=float(rm - slope * xm))


def _fit_stump(x, resid) -> StumpLearner:
    order = np.argsort(x, kind="stable")
    xs, rs = x[order], resid[order]
    csum = np.cumsum(rs)
    csq = np.cumsum(rs * rs)
    total, total_sq = csum[-1], csq[-1]
    n = len(xs)
    best = (float(xs[0]) - 1.0, float(rs.mean()), float(rs.mean()))
    best_sse = float(total_sq - total * total / n)
    for i in range(n - 1):
        if xs[i] == xs[i + 1]:
            continue
        nl = i + 1
        nr = n - nl
        sl, sr = csum[i], total - csum[i]
        sse = (csq[i] - sl * sl / nl) + ((total_sq - csq[i]) - sr * sr / nr)
        if sse < best_sse - 1e-15:
            best_sse = sse
            best = (float((xs[i] + xs[i + 1]) / 2), float(sl / nl), float(sr / nr))
    return StumpLearner(threshold=best[0], left=best[1], right=best[2])


def classic_gb_fit(x, y, rounds: int, weak: str = "linear", rate: Optional[float] = None) -> ClassicGbModel:
    """Residual-fitting gradient boosting with least-squares weak learners.

    Each round fits a learner to the current residuals y - F(x) and adds it
    with a line-searched rate (or the fixed `rate`); with least-squares
    learners and line search, training MSE is non-increasing by round.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise ConfigError("classic_gb_fit needs non-empty data")
    if x.shape != y.shape:
        raise ConfigError(f"x and y shapes disagree: {x.shape} vs {y.shape}")
    if rounds < 1:
        raise ConfigError(f"rounds must be >= 1, got {rounds}")
    if weak not in ("linear", "stump"):
        raise ConfigError(f"weak learner must be linear or stump, got {weak!r}")

    pred = np.zeros_like(y)
    learners, rates, history = [], [], []
    for _ in range(rounds):
        resid = y - pred
        f = _fit_linear(x, resid) if weak == "linear" else _fit_stump(x, resid)
        fx = f(x)
        denom = float((fx * fx).sum())
        if rate is not None:
            alpha = rate
        elif denom == 0.0:
            alpha = 0.0
        else:
            alpha = float((resid * fx).sum() / denom)
        pred = pred + alpha * fx
        learners.append(f)
        rates.append(alpha)
        history.append(float(((y - pred) ** 2).mean()))
    return ClassicGbModel(learners=learners, rates=rates, mse_history=history)


# ----------------------------------------------------------------------
# Analytic cost model
# ----------------------------------------------------------------------


@dataclass
class CostModel:
    """Inputs of the per-learner/total cost algebra.

    alpha_cost: cost of one full-rank adapter on one layer; beta_cost: cost
    of the frozen base model; full_rank is the reference rank R that plain
    low-rank adaptation uses on every layer.
    """

    alpha_cost: float = 1.0
    beta_cost: float = 0.0
    layers: int = 32  # L
    total_steps: int = 1000  # K
    iterations: int = 10  # T
    rank: int = 1  # r
    full_rank: int = 8  # R
    adapted_layers: float = 32.0  # l

    def validate(self):
        for name in ("alpha_cost", "layers", "total_steps", "iterations", "rank", "full_rank", "adapted_layers"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.beta_cost < 0:
            raise ConfigError(f"beta_cost must be >= 0, got {self.beta_cost}")


def cost_model_estimate(cm: CostModel, method: str) -> dict:
    """per_learner = l*alpha*r/R; total = per_learner*kappa*T + beta.

    The plain-adaptation row pins r=R, l=L, T=1, kappa=K (the upper bound);
    the boosted row uses the model's own r, l, T with kappa = K/T.
    """
    cm.validate()
    if method == "lora":
        r, layers_adapted, iters = cm.full_rank, float(cm.layers), 1
    elif method == "xgblora":
        r, layers_adapted, iters = cm.rank, float(cm.adapted_layers), cm.iterations
    else:
        raise ConfigError(f"method must be lora or xgblora, got {method!r}")
    steps_per_iter = cm.total_steps / iters
    per_learner = layers_adapted * cm.alpha_cost * r / cm.full_rank
    total = per_learner * steps_per_iter * iters + cm.beta_cost
    return {
        "per_learner": per_learner,
        "steps_per_iter": steps_per_iter,
        "iters": iters,
        "total": total,
    }
