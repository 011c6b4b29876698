"""Training objectives: debiased in-batch softmax CE, per-branch collaborative
CE, temperature-scaled KL distillation with an ensemble teacher, and the
ramp-up schedule combining them."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .numerics import MASKED, Tensor

LOG_EPS = 1e-12


@dataclass
class LossReport:
    """One record per optimizer step; totals follow total = ce + w * kl."""

    ce: dict  # branch -> row-summed CE
    kl: dict  # branch -> row-averaged KL
    ramp_w: float
    total: float
    ce_row_mean: float  # combined CE per row, for cross-batch-size comparability
    kl_row_mean: float


def debiased_scores(user_vecs, item_vecs, pop):
    """score[b, c] = dot(H_b, D_c) - ln(max(pop_c, 1))."""
    if user_vecs.shape[-1] != item_vecs.shape[-1]:
        raise ValueError(
            f"dim mismatch: users {user_vecs.shape} vs items {item_vecs.shape}"
        )
    pop = np.asarray(pop, dtype=np.float64)
    correction = np.log(np.maximum(pop, 1.0))
    return nm.sub(nm.matmul(user_vecs, nm.transpose_last(item_vecs)), Tensor(correction))


def exclusion_mask(exclusion_sets, candidates, target_cols):
    """Additive (B, C) mask blocking each row's false-negative columns.

    A row's own target column is always kept visible, even when the target
    item also occurs in that row's history.
    """
    cand_pos = {item: j for j, item in enumerate(candidates)}
    mask = np.zeros((len(exclusion_sets), len(candidates)))
    for i, excl in enumerate(exclusion_sets):
        for item in excl:
            j = cand_pos.get(item)
            if j is not None and j != target_cols[i]:
                mask[i, j] = MASKED
    return mask


def inbatch_ce(scores, target_cols, excl_mask=None):
    """Row-summed softmax CE over {target} union (candidates minus exclusions)."""
    target_cols = np.asarray(target_cols, dtype=np.int64)
    masked = nm.add(scores, Tensor(excl_mask)) if excl_mask is not None else scores
    if excl_mask is not None:
        visible = (excl_mask == 0.0).sum(axis=1)
        if np.any(visible <= 1):
            warnings.warn("row candidate set collapsed to the target alone (loss 0)")
    lse = nm.logsumexp(masked, axis=1)
    tgt = nm.select_columns(masked, target_cols)
    return nm.tsum(nm.sub(lse, tgt))


def collaborative_ce(branch_logits, target_cols, excl_mask=None):
    """Independent in-batch CE per branch (already-masked logits pass through)."""
    return {
        m: inbatch_ce(z, target_cols, excl_mask) for m, z in branch_logits.items()
    }


def ensemble_logits(branch_logits, detached=False):
    """Arithmetic mean of the branch score matrices."""
    zs = list(branch_logits.values())
    if detached:
        zs = [z.detach() for z in zs]
    acc = zs[0]
    for z in zs[1:]:
        acc = nm.add(acc, z)
    return nm.mul(acc, 1.0 / len(zs))


def distill_kl(teacher_logits, student_logits, temperature):
    """T^2 * KL(softmax(teacher/T) || softmax(student/T)), averaged over rows.

    The teacher is detached: no gradient flows back into it.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    t = nm.mul(teacher_logits.detach(), 1.0 / temperature)
    s = nm.mul(student_logits, 1.0 / temperature)
    p = nm.softmax(t, axis=-1)
    per_entry = nm.mul(p, nm.sub(nm.log_softmax(t, axis=-1), nm.log_softmax(s, axis=-1)))
    per_row = nm.tsum(per_entry, axis=-1)
    return nm.mul(nm.tmean(per_row), temperature * temperature)


def distill_bundle(branch_logits, temperature):
    """Per-branch distillation losses.

    With all three branches, the ID logits teach the modality branches and
    the ensemble teaches the ID branch. Without an ID branch, the ensemble
    teaches every remaining branch.
    """
    if "id" in branch_logits and len(branch_logits) > 1:
        z_id = branch_logits["id"]
        out = {
            m: distill_kl(z_id, z, temperature)
            for m, z in branch_logits.items()
            if m != "id"
        }
        out["id"] = distill_kl(ensemble_logits(branch_logits, detached=True), z_id, temperature)
        return out
    teacher = ensemble_logits(branch_logits, detached=True)
    return {m: distill_kl(teacher, z, temperature) for m, z in branch_logits.items()}


def ramp_weight(epoch, alpha):
    """Distillation weight: 0 at epoch 0, Gaussian ramp up to 1 at epoch alpha."""
    if epoch < 0:
        raise ValueError(f"epoch must be nonnegative, got {epoch}")
    if alpha < 1:
        raise ValueError(f"alpha must be >= 1, got {alpha}")
    if epoch == 0:
        return 0.0
    if epoch >= alpha:
        return 1.0
    frac = epoch / alpha
    return float(np.exp(-5.0 * (1.0 - frac) ** 2))


def total_loss(ce, kl, w):
    """L_total = sum of branch CE + w * sum of branch KL."""
    loss = None
    for v in ce.values():
        loss = v if loss is None else nm.add(loss, v)
    if kl and w > 0.0:
        kl_sum = None
        for v in kl.values():
            kl_sum = v if kl_sum is None else nm.add(kl_sum, v)
        loss = nm.add(loss, nm.mul(kl_sum, w))
    return loss
