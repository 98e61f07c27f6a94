"""Loss terms used in student training and the contrastive baselines."""

from __future__ import annotations

import torch
import torch.nn.functional as F

from .errors import ConfigurationError

DEFAULT_NT_XENT_TEMPERATURE = 0.1


def kl_consistency_loss(student_logits: torch.Tensor, pseudo: torch.Tensor) -> torch.Tensor:
    """Mean KL(pseudo || softmax(student_logits)) over the batch.

    `pseudo` rows are soft teacher distributions for weakly augmented
    windows; `student_logits` rows are the student's outputs for the
    strongly augmented versions of the same windows.
    """
    if student_logits.shape != pseudo.shape:
        raise ConfigurationError(
            f"logits shape {tuple(student_logits.shape)} != pseudo shape {tuple(pseudo.shape)}"
        )
    log_q = F.log_softmax(student_logits, dim=1)
    log_p = torch.where(pseudo > 0, torch.log(pseudo.clamp_min(1e-300)), torch.zeros_like(pseudo))
    kl = (pseudo * (log_p - log_q)).sum(dim=1)
    return kl.mean()


def nt_xent_loss(embeddings: torch.Tensor, temperature: float = DEFAULT_NT_XENT_TEMPERATURE) -> torch.Tensor:
    """Normalized temperature-scaled cross entropy over paired views.

    Rows 2k and 2k+1 of `embeddings` (shape 2N x d) are a positive pair;
    all other rows in the batch act as negatives. Self-similarity is
    excluded and the loss is averaged over all 2N anchors.
    """
    if temperature <= 0:
        raise ConfigurationError(f"temperature must be positive, got {temperature}")
    if embeddings.dim() != 2 or embeddings.shape[0] % 2 != 0:
        raise ConfigurationError(f"expected (2N, d) embeddings, got {tuple(embeddings.shape)}")
    two_n = embeddings.shape[0]
    if two_n < 4:
        raise ConfigurationError(f"need at least 2 pairs, got {two_n // 2}")

    z = F.normalize(embeddings, dim=1)
    sim = (z @ z.T) / temperature
    sim.fill_diagonal_(float("-inf"))
    targets = torch.arange(two_n, device=embeddings.device) ^ 1  # partner of each anchor
    return F.cross_entropy(sim, targets)
