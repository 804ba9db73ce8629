"""The desk-scale sequential segmentation network.

A small randomly initialized patch-embedding transformer stands in for a
pretrained encoder: linear patch projection + learned positions, then
encoder blocks of multi-head self-attention (low-rank adapters on the
query and value projections, frozen bases) and a tanh MLP, with residual
connections and layer norm. Per slice, the pooled embedding queries the
memory bank, distance-aware attention weights fuse the retrieved patch
grids with the current one, and a per-patch MLP decoder emits pixel
logits reassembled to the full image.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .attention import AttentionContext, cross_slice_weights, fuse_memory, LAMBDA_INIT
from .data_io import SliceSequence, estimate_distance
from .errors import ConfigError, ContractError, ShapeError
from .lora import LoraAdapter, lora_forward
from .memory import MemoryBank, MemoryEntry, prediction_confidence, select_memory
from .rng import substream
from .tensor import Tensor


@dataclass
class ModelConfig:
    image_size: int = 64
    patch_size: int = 8
    channels: int = 1
    d_model: int = 64
    heads: int = 4
    encoder_blocks: int = 2
    lora_rank: int = 8
    lora_alpha: float | None = None  # defaults to rank (scale 1)
    k_memory: int = 5
    decoder_hidden: int = 64

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ConfigError("image_size must be divisible by patch_size")
        if self.d_model % self.heads != 0:
            raise ConfigError("d_model must be divisible by heads")
        if self.lora_rank < 1 or self.lora_rank > self.d_model:
            raise ConfigError(f"lora_rank {self.lora_rank} out of range for d_model {self.d_model}")
        if self.k_memory < 0:
            raise ConfigError("k_memory must be >= 0 (0 disables the memory path)")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid * self.grid

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    @property
    def lora_scale_alpha(self) -> float:
        return self.lora_rank if self.lora_alpha is None else self.lora_alpha


MICRO_CONFIG = ModelConfig(
    image_size=8, patch_size=4, d_model=8, heads=2, encoder_blocks=2,
    lora_rank=2, k_memory=5, decoder_hidden=8,
)


@dataclass
class SlicePrediction:
    logits: Tensor  # (H, W)
    probabilities: Tensor  # (H, W)
    confidence: float
    pooled_embedding: Tensor  # (d_model,)


class ModelParams:
    """Named parameter collection; frozen names receive no updates."""

    def __init__(self, config: ModelConfig, tensors: dict[str, Tensor], frozen: set[str]):
        self.config = config
        self.tensors = tensors
        self.frozen = frozen

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def trainable(self) -> dict[str, Tensor]:
        return {n: t for n, t in self.tensors.items() if n not in self.frozen}

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def adapter(self, block: int, proj: str) -> LoraAdapter:
        cfg = self.config
        return LoraAdapter(
            base=self.tensors[f"encoder.block{block}.attn.{proj}.W"],
            A=self.tensors[f"lora.block{block}.{proj}.A"],
            B=self.tensors[f"lora.block{block}.{proj}.B"],
            rank=cfg.lora_rank,
            alpha=cfg.lora_scale_alpha,
        )

    def group_of(self, name: str) -> str:
        """Parameter group for reporting: encoder/lora_A/lora_B/decoder/lambda."""
        if name == "lambda":
            return "lambda"
        if name.startswith("lora."):
            return "lora_A" if name.endswith(".A") else "lora_B"
        if name.startswith("decoder."):
            return "decoder"
        return "encoder"


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Seeded initialization; the q/v attention bases are frozen."""
    rng = substream(seed, "init")
    cfg = config
    d, r = cfg.d_model, cfg.lora_rank

    def linear(d_out: int, d_in: int) -> np.ndarray:
        return rng.standard_normal((d_out, d_in)) / np.sqrt(d_in)

    tensors: dict[str, Tensor] = {}
    frozen: set[str] = set()

    tensors["encoder.patch_proj.W"] = Tensor(linear(d, cfg.patch_dim), requires_grad=True)
    tensors["encoder.patch_proj.b"] = Tensor(np.zeros(d), requires_grad=True)
    tensors["encoder.pos_embed"] = Tensor(
        rng.normal(0.0, 0.02, size=(cfg.num_patches, d)), requires_grad=True
    )
    for i in range(cfg.encoder_blocks):
        for proj in ("q", "k", "v", "o"):
            name = f"encoder.block{i}.attn.{proj}.W"
            trainable = proj in ("k", "o")
            tensors[name] = Tensor(linear(d, d), requires_grad=trainable)
            if not trainable:
                frozen.add(name)
        for proj in ("q", "v"):
            tensors[f"lora.block{i}.{proj}.A"] = Tensor(
                rng.normal(0.0, 0.02, size=(r, d)), requires_grad=True
            )
            tensors[f"lora.block{i}.{proj}.B"] = Tensor(np.zeros((d, r)), requires_grad=True)
        for ln in ("ln1", "ln2"):
            tensors[f"encoder.block{i}.{ln}.gamma"] = Tensor(np.ones(d), requires_grad=True)
            tensors[f"encoder.block{i}.{ln}.beta"] = Tensor(np.zeros(d), requires_grad=True)
        tensors[f"encoder.block{i}.mlp.fc1.W"] = Tensor(linear(d, d), requires_grad=True)
        tensors[f"encoder.block{i}.mlp.fc1.b"] = Tensor(np.zeros(d), requires_grad=True)
        tensors[f"encoder.block{i}.mlp.fc2.W"] = Tensor(linear(d, d), requires_grad=True)
        tensors[f"encoder.block{i}.mlp.fc2.b"] = Tensor(np.zeros(d), requires_grad=True)

    tensors["lambda"] = Tensor(LAMBDA_INIT, requires_grad=True)
    tensors["decoder.fc1.W"] = Tensor(linear(cfg.decoder_hidden, d), requires_grad=True)
    tensors["decoder.fc1.b"] = Tensor(np.zeros(cfg.decoder_hidden), requires_grad=True)
    tensors["decoder.fc2.W"] = Tensor(
        linear(cfg.patch_size * cfg.patch_size, cfg.decoder_hidden), requires_grad=True
    )
    tensors["decoder.fc2.b"] = Tensor(
        np.zeros(cfg.patch_size * cfg.patch_size), requires_grad=True
    )
    return ModelParams(config=cfg, tensors=tensors, frozen=frozen)


# ------------------------------------------------------------ forward pass


def _extract_patches(image: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    g, ps, c = cfg.grid, cfg.patch_size, cfg.channels
    patches = image.reshape(g, ps, g, ps, c).transpose(0, 2, 1, 3, 4)
    return patches.reshape(cfg.num_patches, cfg.patch_dim)


def encode_slice(image: np.ndarray, params: ModelParams) -> tuple[Tensor, Tensor]:
    """Image -> (patch feature grid (P, d_model), pooled embedding)."""
    cfg = params.config
    expected = (cfg.image_size, cfg.image_size, cfg.channels)
    image = np.asarray(image, dtype=np.float64)
    if image.shape != expected:
        raise ShapeError(f"image shape {image.shape} != expected {expected}")
    x = Tensor(_extract_patches(image, cfg))
    x = T.add(
        T.add(T.matmul(x, T.transpose(params["encoder.patch_proj.W"])), params["encoder.patch_proj.b"]),
        params["encoder.pos_embed"],
    )
    dh = cfg.d_model // cfg.heads
    inv_sqrt_dh = 1.0 / np.sqrt(dh)
    for i in range(cfg.encoder_blocks):
        q = lora_forward(x, params.adapter(i, "q"))
        k = T.matmul(x, T.transpose(params[f"encoder.block{i}.attn.k.W"]))
        v = lora_forward(x, params.adapter(i, "v"))
        head_outs = []
        for h in range(cfg.heads):
            qh = T.narrow(q, 1, h * dh, dh)
            kh = T.narrow(k, 1, h * dh, dh)
            vh = T.narrow(v, 1, h * dh, dh)
            scores = T.mul(T.matmul(qh, T.transpose(kh)), inv_sqrt_dh)
            head_outs.append(T.matmul(T.softmax(scores), vh))
        attn = T.matmul(
            T.concatenate(head_outs, axis=1),
            T.transpose(params[f"encoder.block{i}.attn.o.W"]),
        )
        x = T.add(
            T.mul(T.layer_norm(T.add(x, attn)), params[f"encoder.block{i}.ln1.gamma"]),
            params[f"encoder.block{i}.ln1.beta"],
        )
        h1 = T.tanh(
            T.add(
                T.matmul(x, T.transpose(params[f"encoder.block{i}.mlp.fc1.W"])),
                params[f"encoder.block{i}.mlp.fc1.b"],
            )
        )
        m = T.add(
            T.matmul(h1, T.transpose(params[f"encoder.block{i}.mlp.fc2.W"])),
            params[f"encoder.block{i}.mlp.fc2.b"],
        )
        x = T.add(
            T.mul(T.layer_norm(T.add(x, m)), params[f"encoder.block{i}.ln2.gamma"]),
            params[f"encoder.block{i}.ln2.beta"],
        )
    pooled = T.mean(x, axis=0)
    return x, pooled


def decode_mask(fused_features: Tensor, params: ModelParams) -> Tensor:
    """Per-patch MLP to patch logits, reassembled to an (H, W) map."""
    cfg = params.config
    if fused_features.shape != (cfg.num_patches, cfg.d_model):
        raise ShapeError(
            f"fused features shape {fused_features.shape} != "
            f"({cfg.num_patches}, {cfg.d_model})"
        )
    h1 = T.tanh(
        T.add(T.matmul(fused_features, T.transpose(params["decoder.fc1.W"])), params["decoder.fc1.b"])
    )
    patch_logits = T.add(T.matmul(h1, T.transpose(params["decoder.fc2.W"])), params["decoder.fc2.b"])
    g, ps = cfg.grid, cfg.patch_size
    return T.reshape(
        T.transpose(T.reshape(patch_logits, (g, g, ps, ps)), (0, 2, 1, 3)),
        (cfg.image_size, cfg.image_size),
    )


def forward_sequence(
    seq: SliceSequence,
    params: ModelParams,
    k_override: int | None = None,
    allow_distance_estimation: bool = True,
) -> list[SlicePrediction]:
    """Process one subject's slices in order through the memory pipeline.

    k_override=0 bypasses the memory path entirely (the independent
    per-slice baseline); the bank is fresh per call, so no state leaks
    across sequences.
    """
    if not seq.slices:
        raise ContractError("forward_sequence on an empty sequence")
    cfg = params.config
    k = cfg.k_memory if k_override is None else k_override
    lam = params["lambda"]
    bank = MemoryBank()
    predictions: list[SlicePrediction] = []
    for t, sl in enumerate(seq.slices):
        patch_feats, pooled = encode_slice(sl.image, params)
        selected: list[MemoryEntry] = []
        if k >= 1 and len(bank) > 0:
            selected = select_memory(bank, pooled, k)
        if selected:
            distances = [0.0]
            for e in selected:
                if sl.z_position_um is not None and e.z_position_um is not None:
                    distances.append(abs(sl.z_position_um - e.z_position_um))
                elif allow_distance_estimation:
                    distances.append(
                        estimate_distance(pooled.data, e.pooled_embedding.data)
                    )
                else:
                    raise ConfigError(
                        f"slice {t}: z position missing and distance estimation disabled"
                    )
            ctx = AttentionContext(
                query=pooled,
                memory_embeddings=[pooled] + [e.pooled_embedding for e in selected],
                distances=distances,
            )
            alpha = cross_slice_weights(ctx, lam)
            fused = fuse_memory(patch_feats, [e.patch_features for e in selected], alpha)
        else:
            fused = fuse_memory(patch_feats, [], Tensor([1.0]))
        logits = decode_mask(fused, params)
        probabilities = T.sigmoid(logits)
        confidence = prediction_confidence(probabilities.data)
        bank.insert(
            MemoryEntry(
                slice_index=t,
                pooled_embedding=pooled,
                patch_features=patch_feats,
                confidence=confidence,
                z_position_um=sl.z_position_um,
            )
        )
        predictions.append(
            SlicePrediction(
                logits=logits,
                probabilities=probabilities,
                confidence=confidence,
                pooled_embedding=pooled,
            )
        )
    return predictions


# ------------------------------------------------------------- persistence


def save_params(path, params: ModelParams) -> None:
    from .data_io import save_checkpoint

    arrays = {name: t.data for name, t in sorted(params.tensors.items())}
    save_checkpoint(path, arrays, config=asdict(params.config), frozen=sorted(params.frozen))


def load_params(path) -> ModelParams:
    from .data_io import load_checkpoint

    arrays, config, frozen = load_checkpoint(path)
    cfg = ModelConfig(**config)
    frozen_set = set(frozen)
    tensors = {
        name: Tensor(arr, requires_grad=name not in frozen_set)
        for name, arr in arrays.items()
    }
    return ModelParams(config=cfg, tensors=tensors, frozen=frozen_set)
