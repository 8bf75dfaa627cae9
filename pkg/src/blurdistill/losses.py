"""Training objectives for sharp-to-blur distillation.

Four terms: focal classification on blurred views, feature alignment
between student and teacher projections, temperature-scaled KD from
the (detached) teacher logits, and an ordinal contrastive loss whose
softmax denominators are restricted by relative blur difference so
that milder-blur views must sit closer to each anchor than
stronger-blur views. All functions are plain torch and differentiable;
reductions are batch means so values are batch-size stable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import torch
import torch.nn.functional as F

from .models import normalize


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    """Coefficients and shape parameters for the combined objective."""

    lambda_cls: float = 1.0
    lambda_feat: float = 0.5
    lambda_kd: float = 1.0
    lambda_ordcon: float = 0.5
    temperature_T: float = 2.0
    tau: float = 0.1
    alpha_focal: Union[float, tuple[float, float]] = 1.0
    gamma_focal: float = 2.0

    def __post_init__(self):
        for name in ("lambda_cls", "lambda_feat", "lambda_kd", "lambda_ordcon", "gamma_focal"):
            v = getattr(self, name)
            if not (v >= 0 and torch.isfinite(torch.tensor(float(v)))):
                raise LossError(f"{name} must be finite and >= 0, got {v}")
        if self.temperature_T <= 0:
            raise LossError("temperature_T must be > 0")
        if self.tau <= 0:
            raise LossError("tau must be > 0")
        if isinstance(self.alpha_focal, Sequence):
            object.__setattr__(self, "alpha_focal", tuple(float(a) for a in self.alpha_focal))

    def to_dict(self) -> dict:
        d = {
            "lambda_cls": self.lambda_cls,
            "lambda_feat": self.lambda_feat,
            "lambda_kd": self.lambda_kd,
            "lambda_ordcon": self.lambda_ordcon,
            "temperature_T": self.temperature_T,
            "tau": self.tau,
            "alpha_focal": list(self.alpha_focal)
            if isinstance(self.alpha_focal, tuple)
            else self.alpha_focal,
            "gamma_focal": self.gamma_focal,
        }
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "LossWeights":
        kwargs = dict(data)
        if isinstance(kwargs.get("alpha_focal"), list):
            kwargs["alpha_focal"] = tuple(kwargs["alpha_focal"])
        return cls(**kwargs)


@dataclass
class BatchViews:
    """Everything the combined loss needs from one distillation batch.

    Logits/features hold the N classified views with their teacher-side
    targets row-aligned (the teacher always sees the sharp counterpart);
    ``embeddings`` stacks the contrastive views (sharp then blurred,
    M rows) with their blur levels, sharp views at level 0.
    """

    teacher_logits: torch.Tensor  # (N, 2)
    student_logits: torch.Tensor  # (N, 2)
    teacher_features: torch.Tensor  # (N, k)
    student_features: torch.Tensor  # (N, k)
    embeddings: torch.Tensor  # (M, k)
    blur_levels: torch.Tensor  # (M,)
    labels: torch.Tensor  # (N,)

    def __post_init__(self):
        n = self.labels.shape[0]
        for name in ("teacher_logits", "student_logits"):
            t = getattr(self, name)
            if t.shape != (n, 2):
                raise LossError(f"{name} must be (N, 2) = ({n}, 2), got {tuple(t.shape)}")
        if self.teacher_features.shape != self.student_features.shape:
            raise LossError("teacher/student feature shapes must match")
        if self.teacher_features.shape[0] != n:
            raise LossError("feature row count must equal label count")
        if self.embeddings.shape[0] != self.blur_levels.shape[0]:
            raise LossError("one blur level per embedding row is required")
        b = self.blur_levels
        if b.numel() and (b.min() < 0 or b.max() > 1):
            raise LossError("blur levels must lie in [0, 1]")


@dataclass
class LossBreakdown:
    cls: torch.Tensor
    feat: torch.Tensor
    kd: torch.Tensor
    ordcon: torch.Tensor
    total: torch.Tensor

    def to_floats(self) -> dict[str, float]:
        return {
            "cls": float(self.cls.detach()),
            "feat": float(self.feat.detach()),
            "kd": float(self.kd.detach()),
            "ordcon": float(self.ordcon.detach()),
            "total": float(self.total.detach()),
        }


def _alpha_vector(alpha, dtype, device) -> torch.Tensor:
    if isinstance(alpha, (tuple, list)):
        if len(alpha) != 2:
            raise LossError("per-class alpha must have exactly two entries")
        return torch.tensor(alpha, dtype=dtype, device=device)
    return torch.tensor([float(alpha)] * 2, dtype=dtype, device=device)


def focal_loss(
    logits: torch.Tensor, labels: torch.Tensor, alpha=1.0, gamma: float = 2.0
) -> torch.Tensor:
    """Mean of -alpha_c * (1 - p_c)^gamma * log p_c at the true class."""
    if logits.ndim != 2 or logits.shape[1] != 2:
        raise LossError(f"logits must be (N, 2), got {tuple(logits.shape)}")
    if gamma < 0:
        raise LossError("gamma must be >= 0")
    labels = labels.long()
    if labels.numel() == 0:
        raise LossError("empty batch")
    if labels.min() < 0 or labels.max() > 1:
        raise LossError("labels must be in {0, 1}")
    log_p = F.log_softmax(logits, dim=1)
    log_pt = log_p.gather(1, labels.view(-1, 1)).squeeze(1)
    pt = log_pt.exp()
    alpha_c = _alpha_vector(alpha, logits.dtype, logits.device)[labels]
    return (-alpha_c * (1.0 - pt) ** gamma * log_pt).mean()


def feature_alignment_loss(f_s: torch.Tensor, f_t: torch.Tensor) -> torch.Tensor:
    """1 - mean cosine similarity between paired student/teacher features."""
    if f_s.shape != f_t.shape:
        raise LossError(f"shape mismatch {tuple(f_s.shape)} vs {tuple(f_t.shape)}")
    norms_s = torch.linalg.vector_norm(f_s, dim=1)
    norms_t = torch.linalg.vector_norm(f_t, dim=1)
    if torch.any(norms_s == 0) or torch.any(norms_t == 0):
        raise LossError("zero-norm feature row")
    cos = (f_s * f_t).sum(dim=1) / (norms_s * norms_t)
    return 1.0 - cos.mean()


def kd_loss(u_teacher: torch.Tensor, u_student: torch.Tensor, temperature: float = 2.0) -> torch.Tensor:
    """T^2-scaled KL(teacher || student) on temperature-softened logits.

    The teacher distribution is the fixed KL reference: it is detached
    here, so gradients reach only the student logits.
    """
    if temperature <= 0:
        raise LossError("temperature must be > 0")
    if u_teacher.shape != u_student.shape:
        raise LossError("teacher/student logit shapes must match")
    t = float(temperature)
    log_p = F.log_softmax(u_teacher.detach() / t, dim=1)
    log_q = F.log_softmax(u_student / t, dim=1)
    kl = (log_p.exp() * (log_p - log_q)).sum(dim=1)
    return t * t * kl.mean()


def ordinal_contrastive_loss(
    embeddings: torch.Tensor, blur_levels: torch.Tensor, tau: float = 0.1
) -> torch.Tensor:
    """Blur-ordered contrastive loss over a batch of views.

    Every view anchors in turn. For anchor i with positive j, the
    denominator runs over the other views k whose blur distance from i
    is at least |b_i - b_j| (j always qualifies, so each term is a
    proper -log-softmax and >= 0). Views at milder blur distance are
    excluded from the denominator, which is what orders the embedding
    space by severity rather than merely clustering.
    """
    if tau <= 0:
        raise LossError("tau must be > 0")
    m = embeddings.shape[0]
    if m < 2:
        raise LossError("need at least two views")
    if blur_levels.shape[0] != m:
        raise LossError("one blur level per view is required")
    z = normalize(embeddings)
    sims = (z @ z.T) / tau  # (M, M)
    b = blur_levels.to(z.dtype)
    delta = (b.view(-1, 1) - b.view(1, -1)).abs()  # (M, M)
    neg_inf = torch.tensor(float("-inf"), dtype=sims.dtype, device=sims.device)
    not_self = ~torch.eye(m, dtype=torch.bool, device=sims.device)

    anchor_losses = []
    for i in range(m):
        # mask[j, k]: view k is in j's denominator (farther-or-equal blur, not the anchor)
        mask = (delta[i].view(1, -1) >= delta[i].view(-1, 1)) & not_self[i].view(1, -1)
        log_denom = torch.logsumexp(torch.where(mask, sims[i].view(1, -1), neg_inf), dim=1)
        terms = log_denom - sims[i]  # -log(exp(s_ij)/denom_j), indexed by j
        anchor_losses.append(terms[not_self[i]].mean())
    return torch.stack(anchor_losses).mean()


def total_loss(views: BatchViews, weights: LossWeights) -> LossBreakdown:
    """Weighted combination; every component is reported individually."""
    cls = focal_loss(
        views.student_logits, views.labels, alpha=weights.alpha_focal, gamma=weights.gamma_focal
    )
    feat = feature_alignment_loss(views.student_features, views.teacher_features)
    kd = kd_loss(views.teacher_logits, views.student_logits, weights.temperature_T)
    ordcon = ordinal_contrastive_loss(views.embeddings, views.blur_levels, weights.tau)
    total = (
        weights.lambda_cls * cls
        + weights.lambda_feat * feat
        + weights.lambda_kd * kd
        + weights.lambda_ordcon * ordcon
    )
    return LossBreakdown(cls=cls, feat=feat, kd=kd, ordcon=ordcon, total=total)
