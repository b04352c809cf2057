"""Student / mean-teacher training loop.

One optimization step:

1. sample a span-mask plan per sequence and split it into encoder/decoder views;
2. student encoder on the unmasked tokens, decoder on the full assembled sequence;
3. MLM loss at the masked positions and latent predictions from the latent head;
4. teacher encoder on the *unmasked* full sequence (no gradients); its final
   layer, passed through a parameter-free layer norm, gives the targets at the
   masked positions;
5. ``L = L_LB + beta * L_LM``; backward, global-norm clipping, LAMB update with
   scheduled learning rate and weight decay;
6. EMA update of the teacher with the scheduled decay.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import torch
import torch.nn as nn

from .config import TrainConfig
from .errors import (
    EmptyInput,
    NonFinite,
    NonFiniteGradient,
    NonFiniteLoss,
    ShapeMismatch,
    StepOutOfRange,
    TooFewRows,
)
from .masking import build_mask_plan, split_for_autoencoder
from .model import BootModel, ModelConfig, make_teacher, parameter_free_layer_norm

logger = logging.getLogger(__name__)

COLLAPSE_THRESHOLD = 1e-4


# ---------------------------------------------------------------------------
# losses


def smooth_l1_loss(y_t: torch.Tensor, y_s: torch.Tensor) -> torch.Tensor:
    """Mean of 0.5 r^2 for |r| <= 1 and |r| - 0.5 otherwise, with r = y_t - y_s."""
    if y_t.shape != y_s.shape:
        raise ShapeMismatch(f"target {tuple(y_t.shape)} vs prediction {tuple(y_s.shape)}")
    if y_t.numel() == 0:
        raise EmptyInput("smooth L1 loss of an empty batch")
    r = (y_t - y_s).abs()
    return torch.where(r <= 1.0, 0.5 * r * r, r - 0.5).mean()


def mlm_nll_loss(logits: torch.Tensor, target_ids: torch.Tensor) -> torch.Tensor:
    """Mean negative log-likelihood of ``target_ids`` under ``softmax(logits)``."""
    logits = logits.reshape(-1, logits.shape[-1])
    target_ids = torch.as_tensor(target_ids).reshape(-1).long()
    if logits.shape[0] != target_ids.shape[0]:
        raise ShapeMismatch(f"{logits.shape[0]} logit rows for {target_ids.shape[0]} targets")
    if target_ids.numel() == 0:
        raise EmptyInput("MLM loss of an empty batch")
    if (target_ids < 0).any() or (target_ids >= logits.shape[-1]).any():
        raise ShapeMismatch(f"target id outside vocabulary of size {logits.shape[-1]}")
    log_probs = torch.log_softmax(logits, dim=-1)
    return -log_probs.gather(1, target_ids[:, None]).mean()


def total_loss(l_lb, l_lm, beta: float):
    lb, lm = (float(torch.as_tensor(v).detach()) for v in (l_lb, l_lm))
    if not (math.isfinite(lb) and math.isfinite(lm)):
        raise NonFinite(f"non-finite loss component: L_LB={lb}, L_LM={lm}")
    return l_lb + beta * l_lm


def target_variance(y_t: torch.Tensor, warn: bool = True) -> float:
    """Mean over dimensions of the across-row (population) variance of teacher targets."""
    rows = y_t.reshape(-1, y_t.shape[-1])
    if rows.shape[0] < 2:
        raise TooFewRows("need at least two target rows to measure variance")
    value = float(rows.var(dim=0, unbiased=False).mean())
    if warn and value < COLLAPSE_THRESHOLD:
        logger.warning("possible representation collapse: target variance %.3g < %g",
                       value, COLLAPSE_THRESHOLD)
    return value


# ---------------------------------------------------------------------------
# schedules


def schedule_value(kind: str, step: int, config: TrainConfig) -> float:
    """``cosine_lr`` (with linear warmup), ``cosine_wd`` or ``linear_ema`` at ``step``."""
    total = config.steps
    if not 0 <= step <= total:
        raise StepOutOfRange(f"step {step} outside [0, {total}]")
    if kind == "cosine_lr":
        warmup = config.warmup_steps
        if step < warmup:
            return config.lr_initial * step / warmup
        progress = (step - warmup) / (total - warmup)
        return _cosine(config.lr_initial, config.lr_final, progress)
    if kind == "cosine_wd":
        return _cosine(config.wd_initial, config.wd_final, step / total)
    if kind == "linear_ema":
        return config.tau_initial + (config.tau_final - config.tau_initial) * step / total
    raise ValueError(f"unknown schedule kind {kind!r}")


def _cosine(start: float, end: float, progress: float) -> float:
    if progress <= 0.0:
        return start
    if progress >= 1.0:
        return end
    return end + (start - end) * 0.5 * (1.0 + math.cos(math.pi * progress))


# ---------------------------------------------------------------------------
# optimizer pieces


@torch.no_grad()
def clip_global_norm(grads: Sequence[torch.Tensor], max_norm: float = 2.0) -> float:
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``.

    Returns the norm measured before clipping.
    """
    grads = [g for g in grads if g is not None]
    if not grads:
        return 0.0
    norm = float(torch.sqrt(sum((g.double() ** 2).sum() for g in grads)))
    if not math.isfinite(norm):
        raise NonFiniteGradient(f"gradient norm is {norm}")
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g.mul_(scale)
    return norm


@torch.no_grad()
def lamb_step(param, grad, state: dict, lr: float, weight_decay: float,
              betas=(0.9, 0.98), eps: float = 1e-6):
    """One in-place LAMB update of a single tensor; ``state`` is updated in place.

    u = m_hat / (sqrt(v_hat) + eps) + wd * theta
    theta <- theta - lr * (|theta| / |u|) * u      (ratio 1 if either norm is 0)
    """
    if param.shape != grad.shape:
        raise ShapeMismatch(f"parameter {tuple(param.shape)} vs gradient {tuple(grad.shape)}")
    if not state:
        state["step"] = 0
        state["exp_avg"] = torch.zeros_like(param)
        state["exp_avg_sq"] = torch.zeros_like(param)
    beta1, beta2 = betas
    state["step"] += 1
    m, v = state["exp_avg"], state["exp_avg_sq"]
    m.mul_(beta1).add_(grad, alpha=1 - beta1)
    v.mul_(beta2).addcmul_(grad, grad, value=1 - beta2)
    m_hat = m / (1 - beta1 ** state["step"])
    v_hat = v / (1 - beta2 ** state["step"])
    update = m_hat / (v_hat.sqrt() + eps)
    if weight_decay:
        update.add_(param, alpha=weight_decay)
    w_norm, u_norm = float(param.norm()), float(update.norm())
    trust = w_norm / u_norm if w_norm > 0 and u_norm > 0 else 1.0
    param.add_(update, alpha=-lr * trust)
    return param


class Lamb(torch.optim.Optimizer):
    """LAMB with per-group ``lr`` / ``weight_decay`` set externally by the schedules."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.98), eps=1e-6, weight_decay=0.0):
        if lr < 0 or eps < 0 or not (0 <= betas[0] < 1 and 0 <= betas[1] < 1):
            raise ValueError("invalid LAMB hyperparameters")
        super().__init__(params, dict(lr=lr, betas=betas, eps=eps, weight_decay=weight_decay))

    @torch.no_grad()
    def step(self, closure=None):
        loss = closure() if closure is not None else None
        for group in self.param_groups:
            for p in group["params"]:
                if p.grad is None:
                    continue
                lamb_step(p, p.grad, self.state[p], group["lr"], group["weight_decay"],
                          group["betas"], group["eps"])
        return loss


def decay_groups(model: nn.Module):
    """Split parameters into weight-decayed matrices and undecayed biases / norm gains."""
    decay, no_decay = [], []
    for name, p in model.named_parameters():
        if not p.requires_grad:
            continue
        (no_decay if name.endswith("bias") or "norm" in name else decay).append(p)
    return [
        {"params": decay, "decay": True},
        {"params": no_decay, "decay": False},
    ]


def _named(params) -> dict:
    if isinstance(params, nn.Module):
        return dict(params.named_parameters())
    return dict(params)


@torch.no_grad()
def ema_update(teacher, student, tau: float) -> None:
    """phi <- tau * phi + (1 - tau) * theta for every teacher array (matched by name)."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    theta = _named(student)
    for name, phi in _named(teacher).items():
        if name not in theta or theta[name].shape != phi.shape:
            raise ShapeMismatch(f"teacher array {name!r} has no matching student array")
        phi.mul_(tau).add_(theta[name], alpha=1.0 - tau)


# ---------------------------------------------------------------------------
# one step


@dataclass
class StepMetrics:
    step: int
    loss_lb: float
    loss_lm: float
    loss_total: float
    lr: float
    wd: float
    tau: float
    grad_norm: float
    target_variance: float
    mlm_accuracy: float = float("nan")

    CSV_FIELDS = ("step", "loss_lb", "loss_lm", "loss_total", "lr", "wd", "tau",
                  "grad_norm", "target_variance")

    def csv_row(self) -> list:
        return [getattr(self, f) for f in self.CSV_FIELDS]


@dataclass
class BatchViews:
    """Encoder/decoder views for a batch; every row has the same mask count."""

    tokens: torch.Tensor            # [B, L]
    encoder_tokens: torch.Tensor    # [B, L - M]
    encoder_positions: torch.Tensor
    masked_positions: torch.Tensor  # [B, M]
    targets: torch.Tensor           # [B, M]

    @classmethod
    def from_plans(cls, tokens: torch.Tensor, plans) -> "BatchViews":
        views = [split_for_autoencoder(row.numpy(), plan) for row, plan in zip(tokens, plans)]
        stack = lambda attr: torch.as_tensor(np.stack([getattr(v, attr) for v in views])).long()  # noqa: E731
        return cls(tokens, stack("encoder_tokens"), stack("encoder_positions"),
                   stack("masked_positions"), stack("target_tokens"))


def sample_views(tokens: torch.Tensor, config: TrainConfig, rng: np.random.Generator) -> BatchViews:
    mask_cfg = config.mask_config()
    plans = [build_mask_plan(tokens.shape[1], mask_cfg, rng) for _ in range(tokens.shape[0])]
    return BatchViews.from_plans(tokens, plans)


@dataclass
class LossBreakdown:
    total: torch.Tensor
    latent: torch.Tensor
    mlm: torch.Tensor
    teacher_targets: torch.Tensor
    mlm_accuracy: float


def teacher_targets(teacher: BootModel, tokens: torch.Tensor, masked_positions: torch.Tensor):
    with torch.no_grad():
        final = teacher.encoder_forward(tokens)[-1]
        normed = parameter_free_layer_norm(final, teacher.config.layer_norm_eps)
        idx = masked_positions[..., None].expand(*masked_positions.shape, normed.shape[-1])
        return torch.gather(normed, 1, idx)


def bootstrap_losses(student: BootModel, teacher: BootModel, views: BatchViews, beta: float) -> LossBreakdown:
    dec, logits = student(views.encoder_tokens, views.encoder_positions, views.masked_positions)
    y_s = student.latent_predictions(dec, views.masked_positions)
    y_t = teacher_targets(teacher, views.tokens, views.masked_positions)
    l_lb = smooth_l1_loss(y_t, y_s)
    l_lm = mlm_nll_loss(logits, views.targets)
    try:
        loss = total_loss(l_lb, l_lm, beta)
    except NonFinite as exc:
        raise NonFiniteLoss(str(exc)) from exc
    accuracy = float((logits.argmax(-1) == views.targets).double().mean())
    return LossBreakdown(loss, l_lb, l_lm, y_t, accuracy)


def train_step(batch: torch.Tensor, student: BootModel, teacher: BootModel, optimizer: Lamb,
               step: int, config: TrainConfig, rng: np.random.Generator) -> StepMetrics:
    lr = schedule_value("cosine_lr", step, config)
    wd = schedule_value("cosine_wd", step, config)
    tau = schedule_value("linear_ema", step, config)

    student.train()
    teacher.eval()
    views = sample_views(batch, config, rng)
    out = bootstrap_losses(student, teacher, views, config.beta)

    optimizer.zero_grad(set_to_none=True)
    out.total.backward()
    grad_norm = clip_global_norm([p.grad for p in student.parameters()], config.clip_norm)
    for group in optimizer.param_groups:
        group["lr"] = lr
        group["weight_decay"] = wd if group.get("decay", True) else 0.0
    optimizer.step()
    ema_update(teacher, student, tau)

    return StepMetrics(
        step=step,
        loss_lb=float(out.latent.detach()),
        loss_lm=float(out.mlm.detach()),
        loss_total=float(out.total.detach()),
        lr=lr,
        wd=wd,
        tau=tau,
        grad_norm=grad_norm,
        target_variance=target_variance(out.teacher_targets),
        mlm_accuracy=out.mlm_accuracy,
    )


# ---------------------------------------------------------------------------
# training loop


def chunk_tokens(ids: Sequence[int], seq_len: int) -> torch.Tensor:
    """Cut a token stream into ``[n, seq_len]`` rows, dropping the ragged tail."""
    n = len(ids) // seq_len
    if n == 0:
        raise EmptyInput(f"{len(ids)} tokens are fewer than one sequence of {seq_len}")
    return torch.as_tensor(np.asarray(ids[: n * seq_len], dtype=np.int64)).view(n, seq_len)


class MetricsWriter:
    """Append-only CSV of per-step metrics."""

    def __init__(self, path):
        self.path = Path(path)
        new = not self.path.exists() or self.path.stat().st_size == 0
        self._fh = open(self.path, "a", newline="", encoding="utf-8")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        if new:
            self._writer.writerow(StepMetrics.CSV_FIELDS)

    def write(self, metrics: StepMetrics):
        self._writer.writerow([repr(v) if isinstance(v, float) else v for v in metrics.csv_row()])
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class BootstrapTrainer:
    """Owns the student, the teacher, the optimizer and every random stream."""

    def __init__(self, model_config: ModelConfig, train_config: TrainConfig,
                 student: BootModel | None = None):
        self.model_config = model_config
        self.config = train_config
        torch.manual_seed(train_config.seed)
        self.student = student if student is not None else BootModel(model_config)
        self.teacher = make_teacher(self.student)
        self.optimizer = Lamb(
            decay_groups(self.student),
            lr=train_config.lr_initial,
            betas=(train_config.lamb_beta1, train_config.lamb_beta2),
            eps=train_config.lamb_eps,
        )
        self.rng = np.random.default_rng(train_config.seed)
        self.step = 0

    def sample_batch(self, chunks: torch.Tensor) -> torch.Tensor:
        n = chunks.shape[0]
        size = self.config.batch_size
        idx = self.rng.choice(n, size=size, replace=n < size)
        return chunks[torch.as_tensor(np.sort(idx))]

    def train_step(self, batch: torch.Tensor) -> StepMetrics:
        metrics = train_step(batch, self.student, self.teacher, self.optimizer,
                             self.step, self.config, self.rng)
        self.step += 1
        return metrics

    def fit(self, chunks: torch.Tensor, out_dir=None,
            on_step: Callable[[StepMetrics], None] | None = None,
            vocab: Iterable[str] | None = None) -> list[StepMetrics]:
        """Train until ``config.steps``; writes ``metrics.csv`` and checkpoints into ``out_dir``."""
        from .checkpoint import save_checkpoint

        history: list[StepMetrics] = []
        out = Path(out_dir) if out_dir is not None else None
        writer = None
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            writer = MetricsWriter(out / "metrics.csv")
        vocab = list(vocab) if vocab is not None else None

        def save(name, mode="full"):
            if out is not None:
                save_checkpoint(out / name, self.student, self.teacher, mode=mode,
                                step=self.step, vocab=vocab, train_config=self.config)

        try:
            while self.step < self.config.steps:
                try:
                    metrics = self.train_step(self.sample_batch(chunks))
                except NonFiniteLoss:
                    save("crash.bin")
                    raise
                history.append(metrics)
                if writer is not None:
                    writer.write(metrics)
                if on_step is not None:
                    on_step(metrics)
                every = self.config.checkpoint_every
                if every and self.step % every == 0 and self.step < self.config.steps:
                    save(f"step{self.step:07d}.bin")
            save("final.bin")
            save("student.bin", mode="student")
        finally:
            if writer is not None:
                writer.close()
        return history
