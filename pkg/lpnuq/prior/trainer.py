import math
import numpy as np
import pandas as pd
import torch

from dataclasses import dataclass

from lpnuq.errors import TrainingError
from lpnuq.method_enum import OptimizerType
from lpnuq.prior.icnn import DTYPE, PriorModel
from lpnuq.utils import log

logger = log.setupCustomLogger(__name__)


@dataclass(frozen=True)
class ProxMatchConfig:
    gamma_init: float = 0.5
    gamma_min: float = 0.03
    gamma_decay: float = 0.8
    epochs_per_gamma: int = 1
    sigma: float = 0.1
    epochs: int = 20
    pretrain_epochs: int = 5
    batch_size: int = 64
    lr: float = 1e-3
    momentum: float = 0.9
    optimizer: OptimizerType = OptimizerType.SGD
    seed: int = 0
    hidden: tuple = (128, 128)
    beta: float = 100.0
    alpha: float = 1e-2

    def __post_init__(self):
        if not self.gamma_init >= self.gamma_min > 0:
            raise ValueError("gamma schedule needs gamma_init >= gamma_min > 0")
        if not 0 < self.gamma_decay <= 1:
            raise ValueError("gamma_decay must be in (0, 1]")
        if self.sigma <= 0:
            raise ValueError("training noise sigma must be > 0")
        if self.epochs < 0 or self.pretrain_epochs < 0 or self.epochs_per_gamma < 1:
            raise ValueError("epoch counts must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def gamma_at(self, stage):
        return max(self.gamma_init * self.gamma_decay**stage, self.gamma_min)


def matchingPenalty(r2, gamma):
    """1 - exp(-r^2 / gamma^2): zero at r = 0 and tending to one as r grows."""
    return 1.0 - torch.exp(-r2 / gamma**2)


def _residualSq(model, x, z, create_graph):
    f = model.prox(z, create_graph=create_graph)
    return ((f - x) ** 2).sum(-1)


def prox_match_loss(model, x, z, gamma):
    """
    Batch proximal-matching loss and its exact parameter gradients.

    The normalizing constant of the matching function is dropped, which rescales the
    exponential term by a positive factor and leaves the minimizers unchanged.

    ### Parameters:
    ----------
    #### model: PriorModel
    #### x: torch.Tensor
    Clean images (batch x n).
    #### z: torch.Tensor
    Noisy versions of `x` (batch x n).
    #### gamma: float
    Width of the matching function, > 0.

    ### Returns:
    ----------
    A (loss, grads) pair; grads follow the order of model.parameters().
    """
    if gamma <= 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    if len(x) == 0:
        raise ValueError("empty batch")

    loss = matchingPenalty(_residualSq(model, x, z, create_graph=True), gamma).mean()
    if not torch.isfinite(loss):
        raise TrainingError(f"non-finite proximal-matching loss (gamma={gamma})")
    grads = torch.autograd.grad(loss, list(model.parameters()))
    return float(loss.detach()), grads


def squaredLoss(model, x, z):
    """Warm-up objective: mean squared residual norm of the denoised batch."""
    if len(x) == 0:
        raise ValueError("empty batch")
    loss = _residualSq(model, x, z, create_graph=True).mean()
    if not torch.isfinite(loss):
        raise TrainingError("non-finite squared loss during warm-up")
    grads = torch.autograd.grad(loss, list(model.parameters()))
    return float(loss.detach()), grads


def _makeOptimizer(model, cfg):
    match cfg.optimizer:
        case OptimizerType.SGD:
            return torch.optim.SGD(model.parameters(), lr=cfg.lr, momentum=cfg.momentum)
        case OptimizerType.ADAM:
            return torch.optim.Adam(model.parameters(), lr=cfg.lr)
        case _:
            raise ValueError(f"Invalid optimizer: {cfg.optimizer}")


def train(images, cfg, model=None):
    """
    Trains a PriorModel on clean images with the proximal-matching objective.

    Every batch draws fresh Gaussian noise z = x + sigma * eps, takes one optimizer step
    and projects the hidden-to-hidden weights back to the non-negative orthant. The first
    `pretrain_epochs` epochs use the squared loss, then gamma is annealed by `gamma_decay`
    every `epochs_per_gamma` epochs down to `gamma_min`.

    ### Parameters:
    ----------
    #### images: np.ndarray
    Training images in [0, 1], shape (count, side, side) or (count, n).
    #### cfg: ProxMatchConfig
    #### model: PriorModel, optional
    Model to continue training; a fresh one seeded by cfg.seed otherwise.

    ### Returns:
    ----------
    A (model, log) pair, log being a DataFrame with one row per epoch (epoch, phase, gamma, loss).
    """
    images = np.asarray(images, dtype=np.float64)
    if len(images) == 0:
        raise ValueError("training set is empty")
    if images.min() < 0 or images.max() > 1:
        raise ValueError("training images must lie in [0, 1]")

    data = torch.from_numpy(images.reshape(len(images), -1).copy())
    generator = torch.Generator().manual_seed(cfg.seed)
    if model is None:
        torch.manual_seed(cfg.seed)
        model = PriorModel(
            inputDim=data.shape[1], hidden=cfg.hidden, beta=cfg.beta, alpha=cfg.alpha
        )
    model.train()
    optimizer = _makeOptimizer(model, cfg)
    params = list(model.parameters())

    rows = []
    totalEpochs = cfg.pretrain_epochs + cfg.epochs
    logger.info(
        f"START: training prior on {len(data)} images for {totalEpochs} epochs ({cfg.pretrain_epochs} warm-up)"
    )
    for epoch in range(totalEpochs):
        warmup = epoch < cfg.pretrain_epochs
        gamma = (
            math.nan
            if warmup
            else cfg.gamma_at((epoch - cfg.pretrain_epochs) // cfg.epochs_per_gamma)
        )

        order = torch.randperm(len(data), generator=generator)
        losses = []
        for start in range(0, len(data), cfg.batch_size):
            x = data[order[start : start + cfg.batch_size]]
            noise = torch.randn(x.shape, generator=generator, dtype=DTYPE)
            z = x + cfg.sigma * noise
            try:
                if warmup:
                    loss, grads = squaredLoss(model, x, z)
                else:
                    loss, grads = prox_match_loss(model, x, z, gamma)
            except TrainingError as e:
                raise TrainingError(f"epoch {epoch}: {e}", log=rows) from e

            optimizer.zero_grad()
            for p, g in zip(params, grads):
                p.grad = g
            optimizer.step()
            model.project_()
            losses.append(loss * len(x))

        meanLoss = sum(losses) / len(data)
        row = {
            "epoch": epoch,
            "phase": "warmup" if warmup else "prox_matching",
            "gamma": gamma,
            "loss": meanLoss,
        }
        rows.append(row)
        logger.info(
            f"Epoch {epoch} ({row['phase']}, gamma={gamma:.4g}): mean loss {meanLoss:.6f}"
        )
        if not math.isfinite(meanLoss):
            raise TrainingError(f"training diverged at epoch {epoch}", log=rows)

    logger.info("END: training prior")
    return model.eval(), pd.DataFrame(rows, columns=["epoch", "phase", "gamma", "loss"])
