"""Per-sample objectives over the three subgoal heads."""

from __future__ import annotations

from . import autodiff as ad
from .autodiff import Tensor
from .model import ModelOutput
from .structures import Subgoal


def subgoal_cross_entropy(out: ModelOutput, target: Subgoal) -> Tensor:
    """Sum of the type, argument and mask cross-entropies (equal weights).

    Stop carries no argument location, so its mask term is dropped.
    """
    loss = ad.cross_entropy(out.act_logits, target.act) + ad.cross_entropy(out.arg_logits, target.arg)
    cell = target.cell_index
    if cell is not None:
        loss = loss + ad.cross_entropy(out.mask_logits, cell)
    return loss


def output_kl(p: ModelOutput, q: ModelOutput) -> Tensor:
    """KL(p || q) summed over the three output distributions."""
    return (
        ad.kl_divergence(p.act_logits, q.act_logits)
        + ad.kl_divergence(p.arg_logits, q.arg_logits)
        + ad.kl_divergence(p.mask_logits, q.mask_logits)
    )
