"""Distance-aware cross-slice attention.

Attention weights over a set of memory slices are the softmax of
similarity-times-modulation logits: logit_j = cos(F_query, F_j) *
exp(-lambda * d_j^2). The modulation discounts physically distant
slices; lambda is a learned non-negative scalar, initialized to 0.1.

The caller decides which slots enter the context. The sequence pipeline
always includes the current slice itself as slot 0 (similarity 1,
distance 0), so a slice with no memory degenerates to self-attention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import tensor as T
from .errors import ContractError, DomainError, ShapeError
from .tensor import Tensor

LAMBDA_INIT = 0.1


def new_lambda() -> Tensor:
    """The learnable distance-decay rate, initialized to 0.1."""
    t = Tensor(LAMBDA_INIT, requires_grad=True)
    return t


@dataclass
class AttentionContext:
    """Query embedding plus the memory slots it attends over.

    distances[j] is the physical gap (micrometers, >= 0) between the
    query slice and memory slot j; lists must be the same length.
    """

    query: Tensor
    memory_embeddings: list[Tensor] = field(default_factory=list)
    distances: list[float] = field(default_factory=list)

    def __post_init__(self):
        if len(self.memory_embeddings) != len(self.distances):
            raise ContractError(
                f"context has {len(self.memory_embeddings)} embeddings "
                f"but {len(self.distances)} distances"
            )
        for d in self.distances:
            if not (d >= 0.0 and d == d and d != float("inf")):
                raise DomainError(f"distance must be finite and >= 0, got {d}")


def distance_modulation(d: float, lam: Tensor) -> Tensor:
    """exp(-lambda * d^2), differentiable in lambda."""
    if d < 0.0:
        raise DomainError(f"distance must be >= 0, got {d}")
    if float(lam.data) < 0.0:
        raise DomainError(f"lambda must be >= 0, got {float(lam.data)}")
    return T.exp(T.mul(lam, -(d * d)))


def cross_slice_weights(ctx: AttentionContext, lam: Tensor) -> Tensor:
    """Softmax over the context of cos-similarity times distance decay.

    The logit is the plain product of the two factors, unscaled. Output
    weights are positive and sum to 1 (within 1e-12); gradient flows to
    the embeddings and to lambda, not through which slots were chosen.
    """
    if not ctx.memory_embeddings:
        raise ContractError("cross_slice_weights on an empty context")
    logits = []
    for emb, d in zip(ctx.memory_embeddings, ctx.distances):
        sim = T.cosine_sim(ctx.query, emb)
        logits.append(T.mul(sim, distance_modulation(d, lam)))
    return T.softmax(T.stack_scalars(logits))


def fuse_memory(
    patch_feats: Tensor,
    memory_patch_feats: list[Tensor],
    alpha: Tensor,
) -> Tensor:
    """Convex combination of patch grids followed by layer normalization.

    alpha[0] weights the current slice's own grid; alpha[1:] weight the
    memory grids in order. All grids must share the self grid's shape.
    """
    if alpha.size != len(memory_patch_feats) + 1:
        raise ContractError(
            f"alpha has {alpha.size} weights for {len(memory_patch_feats)} memory grids + self"
        )
    for m in memory_patch_feats:
        if m.shape != patch_feats.shape:
            raise ShapeError(
                f"memory grid shape {m.shape} != self grid shape {patch_feats.shape}"
            )
    fused = T.mul(T.narrow(alpha, 0, 0, 1), patch_feats)
    for j, m in enumerate(memory_patch_feats):
        fused = T.add(fused, T.mul(T.narrow(alpha, 0, j + 1, 1), m))
    return T.layer_norm(fused)
