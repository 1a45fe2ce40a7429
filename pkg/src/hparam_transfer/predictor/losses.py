"""Masked regression losses over padded hyperparameter vectors."""

from __future__ import annotations

import torch

# slot position j always carries role j when active, so log_var[j] is s for that role


def _active_count(masks) -> torch.Tensor:
    z = masks.sum()
    if int(z) == 0:
        raise ValueError("no active slots in batch")
    return z


def active_slot_mse(pred, target, masks):
    """Sum of squared errors over active slots divided by the active-slot count."""
    m = masks.to(pred.dtype)
    z = _active_count(masks)
    err = torch.where(masks.bool(), pred - target, torch.zeros_like(pred))
    return (err ** 2 * m).sum() / z


def role_weighted_loss(pred, target, masks, log_var):
    """Homoscedastic role weighting: mean over active slots of 0.5 exp(-s) e^2 + 0.5 s."""
    m = masks.to(pred.dtype)
    z = _active_count(masks)
    err = torch.where(masks.bool(), pred - target, torch.zeros_like(pred))
    s = log_var.to(pred.dtype).reshape(1, 3).expand_as(pred)
    per = 0.5 * torch.exp(-s) * err ** 2 + 0.5 * s
    return (per * m).sum() / z


def compute_loss(variant: str, pred, target, masks, log_var):
    if variant == "plain_mse":
        return active_slot_mse(pred, target, masks)
    if variant == "role_weighted":
        return role_weighted_loss(pred, target, masks, log_var)
    raise ValueError(f"unknown loss variant {variant!r}")
