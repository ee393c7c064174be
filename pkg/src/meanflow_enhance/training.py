"""Loss construction, interval sampling, curriculum, and the optimizer loop.

Two objectives share the path-sampling machinery:

* flow matching: squared error between the network queried at a collapsed
  interval (r = t) and the conditional velocity target;
* mean flow: squared error against the bootstrapped average-velocity
  target  v - (t - r) * d/dt u,  where the total time derivative is one
  forward-mode pass of the network along the tangent (v, 0, 1) in
  (state, start, end).  The assembled target is detached in its entirety
  before entering the loss; the pass that builds it never records onto
  the training tape.

Interval sampling mixes collapsed intervals at a configurable flow ratio,
and a staged curriculum caps the interval width (0.2 through 1.0); each
stage starts from the previous stage's best-validation parameters.

The per-item draw order (end time, then prior noise) is identical in both
losses, so with flow ratio 1 and a shared generator state the mean-flow
loss reproduces the flow-matching loss bit-for-bit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .flow_path import PathConfig, draw_t, sample_path
from .network import NetworkConfig, VelocityNetwork, init_from_flow

DEFAULT_STAGES = (0.2, 0.4, 0.6, 0.8, 1.0)

METRICS_COLUMNS = ("step", "stage", "loss", "val_loss", "wall_ms")


class TrainingError(RuntimeError):
    """Contract violations in the training setup."""


class TrainingDiverged(RuntimeError):
    """Raised by the divergence guard; carries stage and flow ratio."""

    def __init__(self, step: int, stage: float | None, flow_ratio: float | None, loss: float):
        self.step = step
        self.stage = stage
        self.flow_ratio = flow_ratio
        self.loss = loss
        super().__init__(
            f"training diverged at step {step} (stage={stage}, flow_ratio={flow_ratio}, "
            f"loss={loss:.3e})"
        )


@dataclass(frozen=True)
class TimeInterval:
    """Pair (r, t) with 0 <= r <= t <= 1; r = t tags a flow-matching sample."""

    r: float
    t: float

    def __post_init__(self):
        if not 0.0 <= self.r <= self.t <= 1.0:
            raise TrainingError(f"invalid interval ({self.r}, {self.t})")

    @property
    def width(self) -> float:
        return self.t - self.r


@dataclass(frozen=True)
class CurriculumSchedule:
    stages: tuple = DEFAULT_STAGES
    steps_per_stage: int = 350

    def __post_init__(self):
        widths = tuple(self.stages)
        if not widths or any(b <= a for a, b in zip(widths, widths[1:])):
            raise TrainingError("stage widths must be strictly increasing")
        if widths[-1] != 1.0:
            raise TrainingError("final stage width must be 1.0")
        if self.steps_per_stage <= 0:
            raise TrainingError("steps_per_stage must be positive")


@dataclass(frozen=True)
class TrainConfig:
    flow_ratio: float = 0.75
    lr_scratch: float = 1e-4
    lr_finetune: float = 1e-5
    weight_decay: float = 1e-6
    batch_size: int = 2
    sigma: float = 0.5
    seed: int = 0
    t_floor: float = 1e-5
    steps: int = 2200
    val_every: int = 100
    chunk_frames: int = 32

    def __post_init__(self):
        if not 0.0 <= self.flow_ratio <= 1.0:
            raise TrainingError(f"flow_ratio must lie in [0, 1], got {self.flow_ratio}")
        if self.batch_size <= 0 or self.steps <= 0 or self.val_every <= 0:
            raise TrainingError("batch_size, steps and val_every must be positive")

    @property
    def path(self) -> PathConfig:
        return PathConfig(sigma=self.sigma, t_floor=self.t_floor)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def _chunk(item, rng: np.random.Generator, cfg: TrainConfig):
    """Random contiguous frame window; full item when it already fits.

    Drawn before the time draw in both losses, so their generator
    consumption stays aligned.
    """
    x0, y = item
    n = cfg.chunk_frames
    if n <= 0 or x0.shape[0] <= n:
        return x0, y
    start = int(rng.integers(0, x0.shape[0] - n + 1))
    return x0[start : start + n], y[start : start + n]


def _item_loss(pred: Tensor, target: np.ndarray, t: float) -> Tensor:
    try:
        return ad.sum(ad.square(ad.sub(pred, Tensor(target))))
    except ad.NumericError as e:
        norm = float(np.sqrt(np.sum(target * target)))
        raise ad.NumericError(f"loss blew up at t={t:.6f}, |target|={norm:.3e}") from e


def cfm_loss(net: VelocityNetwork, batch, rng: np.random.Generator, cfg: TrainConfig) -> Tensor:
    """Batch-mean squared velocity regression error (collapsed intervals)."""
    if not batch:
        raise TrainingError("empty batch")
    total = None
    for item in batch:
        x0, y = _chunk(item, rng, cfg)
        t = draw_t(rng, cfg.path)
        ps = sample_path(x0, y, t, cfg.path, rng)
        pred = net.forward(ps.x_t, t, t, y)
        li = _item_loss(pred, ps.v_target, t)
        total = li if total is None else ad.add(total, li)
    return ad.mul(total, 1.0 / len(batch))


def sample_interval(
    rng: np.random.Generator, flow_ratio: float, max_width: float, t_floor: float = 1e-5
) -> TimeInterval:
    """Draw (r, t): collapsed with probability ``flow_ratio``, else a strict
    interval of width at most ``max_width``.

    The Bernoulli draw is skipped for the degenerate ratios 0 and 1, so a
    ratio-1 stream consumes exactly the draws of flow-matching training.
    """
    if not 0.0 < max_width <= 1.0:
        raise TrainingError(f"max_width must lie in (0, 1], got {max_width}")
    if flow_ratio >= 1.0:
        collapsed = True
    elif flow_ratio <= 0.0:
        collapsed = False
    else:
        collapsed = rng.random() < flow_ratio
    t = draw_t(rng, PathConfig(t_floor=t_floor))
    if collapsed:
        return TimeInterval(r=t, t=t)
    lo = max(0.0, t - max_width)
    r = lo + (t - lo) * rng.random()
    return TimeInterval(r=r, t=t)


def mf_target(
    net: VelocityNetwork,
    x_t: np.ndarray,
    r: float,
    t: float,
    y: np.ndarray,
    v: np.ndarray,
) -> np.ndarray:
    """Bootstrapped average-velocity target  v - (t - r) * d/dt u.

    The derivative is a single exact forward-mode pass along the tangent
    (v, 0, 1) with respect to (state, start, end); the conditioning stays
    constant.  The result is a plain array, detached by construction.
    """
    if r == t:
        return v.copy()

    def f(x, r_, t_):
        return net.forward(x, r_, t_, y)

    _, du_dt = ad.jvp(f, [x_t, r, t], [v, 0.0, 1.0])
    return v - (t - r) * du_dt


def mf_loss(
    net: VelocityNetwork,
    batch,
    rng: np.random.Generator,
    cfg: TrainConfig,
    max_width: float,
    interval_log: list | None = None,
) -> Tensor:
    """Batch-mean squared error against the detached mean-flow target."""
    if not batch:
        raise TrainingError("empty batch")
    total = None
    for item in batch:
        x0, y = _chunk(item, rng, cfg)
        iv = sample_interval(rng, cfg.flow_ratio, max_width, cfg.t_floor)
        if interval_log is not None:
            interval_log.append(iv)
        ps = sample_path(x0, y, iv.t, cfg.path, rng)
        target = mf_target(net, ps.x_t, iv.r, iv.t, y, ps.v_target)
        pred = net.forward(ps.x_t, iv.r, iv.t, y)
        li = _item_loss(pred, target, iv.t)
        total = li if total is None else ad.add(total, li)
    return ad.mul(total, 1.0 / len(batch))


# ---------------------------------------------------------------------------
# Optimizer and guard
# ---------------------------------------------------------------------------


class Adam:
    """Adam with decoupled weight decay (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, lr: float, weight_decay: float = 0.0):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = 0.9, 0.999, 1e-8
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name, p in params.items():
            g = grads[name]
            m = self._m.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                self._m[name] = m
                self._v[name] = np.zeros_like(p.data)
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / b1c) / (np.sqrt(v / b2c) + self.eps)
            p.data = p.data - self.lr * (update + self.weight_decay * p.data)


class DivergenceGuard:
    """Trips after ``patience`` consecutive losses above ``factor`` x initial."""

    def __init__(self, factor: float = 1e3, patience: int = 100):
        self.factor = factor
        self.patience = patience
        self.initial: float | None = None
        self.streak = 0

    def update(self, loss: float) -> bool:
        if self.initial is None:
            self.initial = loss
            return False
        if loss > self.factor * self.initial:
            self.streak += 1
        else:
            self.streak = 0
        return self.streak >= self.patience


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class StageResult:
    width: float | None
    best_params: dict[str, np.ndarray]
    best_val: float
    max_sampled_width: float
    steps: int


@dataclass
class TrainResult:
    net: VelocityNetwork
    mode: str
    stages: list[StageResult]
    metrics: list[dict] = field(default_factory=list)

    def metrics_lines(self) -> list[str]:
        lines = ["\t".join(METRICS_COLUMNS)]
        for row in self.metrics:
            lines.append("\t".join(str(row[c]) for c in METRICS_COLUMNS))
        return lines


def _val_loss(net, val_items, cfg, mode, max_width, val_seed) -> float:
    # fresh generator with a fixed seed: every evaluation sees the same
    # draws, so stage-local comparisons are meaningful
    rng = np.random.Generator(np.random.PCG64(val_seed))
    total = 0.0
    for item in val_items:
        if mode == "flow":
            loss = cfm_loss(net, [item], rng, cfg)
        else:
            loss = mf_loss(net, [item], rng, cfg, max_width)
        total += loss.item()
    return total / len(val_items)


def train(
    mode: str,
    train_items: list,
    val_items: list,
    cfg: TrainConfig,
    net_config: NetworkConfig | None = None,
    schedule: CurriculumSchedule | None = None,
    init_net: VelocityNetwork | None = None,
) -> TrainResult:
    """Run the optimizer; returns per-stage best-validation parameters.

    ``mode="flow"`` trains the velocity regression for ``cfg.steps`` steps.
    ``mode="meanflow"`` runs one stage per curriculum width (or a single
    width-1.0 stage without a schedule); with a schedule an ``init_net``
    produced by ``init_from_flow`` is required.  Fine-tuning (any run with
    ``init_net``) uses ``lr_finetune``, from-scratch runs ``lr_scratch``.
    """
    if mode not in ("flow", "meanflow"):
        raise TrainingError(f"unknown training mode {mode!r}")
    if not train_items or not val_items:
        raise TrainingError("train and validation splits must be nonempty")

    if init_net is not None:
        if init_net.config.mode != mode:
            raise TrainingError(f"init network mode {init_net.config.mode!r} != {mode!r}")
        net = init_net
        lr = cfg.lr_finetune
    else:
        if mode == "meanflow" and schedule is not None:
            raise TrainingError("curriculum fine-tuning requires an init network")
        if net_config is None:
            raise TrainingError("net_config required when no init network is given")
        net = VelocityNetwork.init(replace(net_config, mode=mode), seed=cfg.seed)
        lr = cfg.lr_scratch

    if mode == "flow":
        plan = [(None, cfg.steps)]
    elif schedule is not None:
        plan = [(w, schedule.steps_per_stage) for w in schedule.stages]
    else:
        plan = [(1.0, cfg.steps)]

    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    val_seed = np.random.SeedSequence([cfg.seed, 0x5EED]).generate_state(1)[0]
    opt = Adam(lr=lr, weight_decay=cfg.weight_decay)
    result = TrainResult(net=net, mode=mode, stages=[])
    t0 = time.perf_counter()
    step = 0

    for width, n_steps in plan:
        guard = DivergenceGuard()
        intervals: list[TimeInterval] = []
        best_val = np.inf
        best_params = net.clone_params()
        for k in range(n_steps):
            step += 1
            idx = rng.integers(0, len(train_items), size=cfg.batch_size)
            batch = [train_items[i] for i in idx]
            with Tape() as tape:
                if mode == "flow":
                    loss = cfm_loss(net, batch, rng, cfg)
                else:
                    loss = mf_loss(net, batch, rng, cfg, width, interval_log=intervals)
            grads = tape.gradient(loss, net.params)
            opt.step(net.params, grads)
            loss_val = loss.item()
            if guard.update(loss_val):
                raise TrainingDiverged(step, width, cfg.flow_ratio, loss_val)
            if step % cfg.val_every == 0 or step == 1 or k == n_steps - 1:
                val = _val_loss(net, val_items, cfg, mode, width or 1.0, val_seed)
                if val < best_val:
                    best_val = val
                    best_params = net.clone_params()
                result.metrics.append(
                    {
                        "step": step,
                        "stage": "-" if width is None else f"{width:g}",
                        "loss": f"{loss_val:.6e}",
                        "val_loss": f"{val:.6e}",
                        "wall_ms": f"{(time.perf_counter() - t0) * 1e3:.1f}",
                    }
                )
        # carry the stage's best parameters into the next stage
        net.load_param_arrays(best_params)
        result.stages.append(
            StageResult(
                width=width,
                best_params=best_params,
                best_val=best_val,
                max_sampled_width=max((iv.width for iv in intervals), default=0.0),
                steps=n_steps,
            )
        )
    return result
