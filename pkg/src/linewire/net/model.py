"""The two-stage line-patch transformer and its prediction heads.

One model instance handles one input width: 7 for single patches (junction
classifier + regressor heads) or 9 for pair patches (connectivity head).
The trunk is a per-line FC stack, an encoder layer attending over the lines
of each patch, a masked max-pool to one token per patch, and a second encoder
layer attending across the patch tokens.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..io import WeightsError, WeightsFile
from ..patches import PatchBatch
from .layers import (
    Affine,
    MaskedBatchNorm,
    MaskedMaxPool,
    NetError,
    ReLU,
    TransformerEncoderLayer,
    softmax_cross_entropy,
    masked_squared_error,
)

FC_WIDTHS = (64, 64, 128, 128, 256)
HEAD_WIDTHS = (256, 128, 64, 32)
JUNCTION_HEADS = {"junction_clf": 2, "junction_reg": 3}
PAIR_HEADS = {"connectivity": 5}


@dataclass(frozen=True)
class LptConfig:
    input_width: int                       # 7 (single) or 9 (pair)
    heads: dict = None                     # head name -> output dim
    d_model: int = 256
    ff_width: int = 256
    n_heads: int = 4
    fc_widths: tuple = FC_WIDTHS
    head_widths: tuple = HEAD_WIDTHS
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    seed: int = 0
    dtype: str = "float64"                 # float32 roughly doubles training throughput

    @property
    def np_dtype(self):
        if self.dtype not in ("float64", "float32"):
            raise NetError(f"unsupported dtype {self.dtype!r}")
        return np.float64 if self.dtype == "float64" else np.float32

    @staticmethod
    def single(seed: int = 0, n_heads: int = 4, dtype: str = "float64") -> "LptConfig":
        return LptConfig(input_width=7, heads=dict(JUNCTION_HEADS), seed=seed,
                         n_heads=n_heads, dtype=dtype)

    @staticmethod
    def pair(seed: int = 0, n_heads: int = 4, dtype: str = "float64") -> "LptConfig":
        return LptConfig(input_width=9, heads=dict(PAIR_HEADS), seed=seed,
                         n_heads=n_heads, dtype=dtype)


@dataclass(frozen=True)
class LossWeights:
    lambda_v: float = 1.0
    lambda_e: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.lambda_v) and np.isfinite(self.lambda_e)):
            raise NetError("loss weights must be finite")
        if self.lambda_v < 0 or self.lambda_e < 0:
            raise NetError("loss weights must be non-negative")


class _FcBlock:
    def __init__(self, d_in, d_out, rng, momentum, eps, dtype=np.float64):
        self.lin = Affine(d_in, d_out, rng, dtype=dtype)
        self.bn = MaskedBatchNorm(d_out, momentum=momentum, eps=eps, dtype=dtype)
        self.act = ReLU()

    def forward(self, x, mask, training, update_stats):
        return self.act.forward(self.bn.forward(self.lin.forward(x), mask, training, update_stats))

    def backward(self, g):
        return self.lin.backward(self.bn.backward(self.act.backward(g)))

    def zero_grads(self):
        self.lin.zero_grads()
        self.bn.zero_grads()

    def named(self, prefix):
        yield from self.lin.named(f"{prefix}.lin")
        yield from self.bn.named(f"{prefix}.bn")

    def named_buffers(self, prefix):
        yield from self.bn.named_buffers(f"{prefix}.bn")


class _HeadMlp:
    """FC stack 256/128/64/32 with batch norm + rectifier, then a linear output."""

    def __init__(self, d_in, widths, d_out, rng, momentum, eps, dtype=np.float64):
        self.blocks = []
        d = d_in
        for w in widths:
            self.blocks.append(_FcBlock(d, w, rng, momentum, eps, dtype=dtype))
            d = w
        self.out = Affine(d, d_out, rng, scale=np.sqrt(1.0 / d), dtype=dtype)

    def forward(self, x, training, update_stats):
        h = x
        for blk in self.blocks:
            h = blk.forward(h, None, training, update_stats)
        return self.out.forward(h)

    def backward(self, g):
        g = self.out.backward(g)
        for blk in reversed(self.blocks):
            g = blk.backward(g)
        return g

    def zero_grads(self):
        for blk in self.blocks:
            blk.zero_grads()
        self.out.zero_grads()

    def named(self, prefix):
        for i, blk in enumerate(self.blocks):
            yield from blk.named(f"{prefix}.{i}")
        yield from self.out.named(f"{prefix}.out")

    def named_buffers(self, prefix):
        for i, blk in enumerate(self.blocks):
            yield from blk.named_buffers(f"{prefix}.{i}")


class LptModel:
    """Parameterized network plus named-tensor (de)serialization."""

    def __init__(self, config: LptConfig):
        if config.heads is None or not config.heads:
            raise NetError("model needs at least one head")
        self.config = config
        rng = np.random.default_rng(config.seed)
        mom, eps = config.bn_momentum, config.bn_eps
        dt = config.np_dtype
        self.fc = []
        d = config.input_width
        for w in config.fc_widths:
            self.fc.append(_FcBlock(d, w, rng, mom, eps, dtype=dt))
            d = w
        if d != config.d_model:
            raise NetError(f"FC stack ends at width {d}, transformer expects {config.d_model}")
        self.enc_lines = TransformerEncoderLayer(config.d_model, config.n_heads, config.ff_width,
                                                 rng, dtype=dt)
        self.pool = MaskedMaxPool()
        self.enc_patches = TransformerEncoderLayer(config.d_model, config.n_heads, config.ff_width,
                                                   rng, dtype=dt)
        self.heads = {}
        for name, d_out in config.heads.items():
            self.heads[name] = _HeadMlp(config.d_model, config.head_widths, d_out, rng, mom, eps,
                                        dtype=dt)

    # -- parameter bookkeeping ------------------------------------------------

    def _modules(self):
        yield "fc", self.fc
        yield "enc_lines", [self.enc_lines]
        yield "enc_patches", [self.enc_patches]
        for name in sorted(self.heads):
            yield f"head.{name}", [self.heads[name]]

    def named_parameters(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, blk in enumerate(self.fc):
            out.extend(blk.named(f"fc.{i}"))
        out.extend(self.enc_lines.named("enc_lines"))
        out.extend(self.enc_patches.named("enc_patches"))
        for name in sorted(self.heads):
            out.extend(self.heads[name].named(f"head.{name}"))
        return out

    def named_buffers(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, blk in enumerate(self.fc):
            out.extend(blk.named_buffers(f"fc.{i}"))
        for name in sorted(self.heads):
            out.extend(self.heads[name].named_buffers(f"head.{name}"))
        return out

    def gradients(self) -> dict[str, np.ndarray]:
        grads = {}
        for i, blk in enumerate(self.fc):
            grads.update({f"fc.{i}.lin.w": blk.lin.grads["w"], f"fc.{i}.lin.b": blk.lin.grads["b"],
                          f"fc.{i}.bn.gamma": blk.bn.grads["gamma"], f"fc.{i}.bn.beta": blk.bn.grads["beta"]})
        for prefix, enc in (("enc_lines", self.enc_lines), ("enc_patches", self.enc_patches)):
            for sub_name, sub in (("ln1", enc.ln1), ("attn", enc.attn), ("ln2", enc.ln2)):
                for k, g in sub.grads.items():
                    grads[f"{prefix}.{sub_name}.{k}"] = g
            for lin_name, lin in (("lin1", enc.ff.lin1), ("lin2", enc.ff.lin2)):
                for k, g in lin.grads.items():
                    grads[f"{prefix}.ff.{lin_name}.{k}"] = g
        for name in sorted(self.heads):
            head = self.heads[name]
            for i, blk in enumerate(head.blocks):
                grads.update({f"head.{name}.{i}.lin.w": blk.lin.grads["w"],
                              f"head.{name}.{i}.lin.b": blk.lin.grads["b"],
                              f"head.{name}.{i}.bn.gamma": blk.bn.grads["gamma"],
                              f"head.{name}.{i}.bn.beta": blk.bn.grads["beta"]})
            grads[f"head.{name}.out.w"] = head.out.grads["w"]
            grads[f"head.{name}.out.b"] = head.out.grads["b"]
        return grads

    def zero_grads(self):
        for blk in self.fc:
            blk.zero_grads()
        self.enc_lines.zero_grads()
        self.enc_patches.zero_grads()
        for head in self.heads.values():
            head.zero_grads()

    # -- forward / backward ---------------------------------------------------

    def _check_finite(self, x: np.ndarray, where: str):
        if not np.all(np.isfinite(x)):
            raise NetError(f"non-finite activations after {where}")

    def forward(self, batch: PatchBatch, training: bool = False,
                update_stats: bool | None = None) -> np.ndarray:
        """Per-patch features (G, d_model). Deterministic in eval mode."""
        feats, mask = batch.features, batch.mask
        g, n, f = feats.shape
        if f != self.config.input_width:
            raise NetError(f"batch feature width {f} != model input width {self.config.input_width}")
        self._check_finite(feats, "input")
        feats = feats.astype(self.config.np_dtype, copy=False)
        rows = feats.reshape(g * n, f)
        row_mask = mask.reshape(g * n)
        h = rows
        for i, blk in enumerate(self.fc):
            h = blk.forward(h, row_mask, training, update_stats)
        self._check_finite(h, "fc stack")
        tokens = h.reshape(g, n, self.config.d_model)
        tokens = self.enc_lines.forward(tokens, mask)
        self._check_finite(tokens, "line transformer")
        pooled = self.pool.forward(tokens, mask)
        self._check_finite(pooled, "line pooling")
        patch_tokens = self.enc_patches.forward(pooled[None, :, :], np.ones((1, g), dtype=bool))
        self._check_finite(patch_tokens, "patch transformer")
        self._fwd_shape = (g, n)
        return patch_tokens[0]

    def head_forward(self, name: str, features: np.ndarray, training: bool = False,
                     update_stats: bool | None = None) -> np.ndarray:
        if name not in self.heads:
            raise NetError(f"model has no head {name!r}")
        out = self.heads[name].forward(features, training, update_stats)
        self._check_finite(out, f"head {name}")
        return out

    def head_backward(self, name: str, g_out: np.ndarray) -> np.ndarray:
        return self.heads[name].backward(g_out)

    def backward(self, g_features: np.ndarray) -> None:
        """Backpropagate from trunk features into all trunk parameters."""
        g, n = self._fwd_shape
        gp = self.enc_patches.backward(g_features[None, :, :])[0]
        gt = self.pool.backward(gp)
        gt = self.enc_lines.backward(gt)
        h = gt.reshape(g * n, self.config.d_model)
        for blk in reversed(self.fc):
            h = blk.backward(h)

    # -- serialization ----------------------------------------------------------

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {name: arr.copy() for name, arr in self.named_parameters()}
        out.update({name: arr.copy() for name, arr in self.named_buffers()})
        return out

    def load_state_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        expected = {name: arr for name, arr in self.named_parameters()}
        expected.update({name: arr for name, arr in self.named_buffers()})
        missing = sorted(set(expected) - set(tensors))
        if missing:
            raise WeightsError(f"missing tensor {missing[0]!r}")
        extra = sorted(set(tensors) - set(expected))
        if extra:
            raise WeightsError(f"unexpected tensor {extra[0]!r}")
        for name, arr in expected.items():
            incoming = np.asarray(tensors[name], dtype=np.float64)
            if incoming.shape != arr.shape:
                raise WeightsError(
                    f"shape mismatch for {name!r}: file has {list(incoming.shape)}, "
                    f"model expects {list(arr.shape)}")
        for name, arr in expected.items():
            arr[...] = np.asarray(tensors[name], dtype=np.float64).reshape(arr.shape)

    def snapshot(self) -> dict[str, np.ndarray]:
        return self.state_tensors()

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        self.load_state_tensors(snap)


def junction_heads(model: LptModel, features: np.ndarray, training: bool = False,
                   update_stats: bool | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Junction logits (G, 2) and position offsets (G, 3) from patch features.

    The predicted junction is the patch center plus the offset.
    """
    logits = model.head_forward("junction_clf", features, training, update_stats)
    offsets = model.head_forward("junction_reg", features, training, update_stats)
    return logits, offsets


def connectivity_head(model: LptModel, features: np.ndarray, training: bool = False,
                      update_stats: bool | None = None) -> np.ndarray:
    """Five-way pair-class logits (G, 5), ordered (FP, D0, D1, D2, FAR)."""
    return model.head_forward("connectivity", features, training, update_stats)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class TotalLoss:
    total: float
    e_vclf: float
    e_vreg: float
    e_eclf: float
    reg_empty: bool
    d_junction_logits: np.ndarray | None = None
    d_offsets: np.ndarray | None = None
    d_pair_logits: np.ndarray | None = None


def total_loss(junction_logits: np.ndarray | None, junction_targets: np.ndarray | None,
               offsets: np.ndarray | None, offset_targets: np.ndarray | None,
               offset_mask: np.ndarray | None,
               pair_logits: np.ndarray | None, pair_targets: np.ndarray | None,
               w: LossWeights) -> TotalLoss:
    """E_total = E_v-clf + lambda_v * E_v-reg + lambda_e * E_e-clf.

    The regression term is the mean squared Euclidean distance over positive
    patches only; with no positive patch it is 0 and flagged. Gradients for
    each supplied head output come back scaled by their loss weights.
    """
    e_vclf, d_jl = 0.0, None
    if junction_logits is not None:
        e_vclf, d_jl = softmax_cross_entropy(junction_logits, junction_targets)
    e_vreg, d_off, empty = 0.0, None, False
    if offsets is not None:
        targets = np.asarray(offset_targets, dtype=offsets.dtype)
        e_vreg, d_off, empty = masked_squared_error(offsets, targets, offset_mask)
        d_off = d_off * w.lambda_v
    e_eclf, d_pl = 0.0, None
    if pair_logits is not None:
        e_eclf, d_pl = softmax_cross_entropy(pair_logits, pair_targets)
        d_pl = d_pl * w.lambda_e
    total = e_vclf + w.lambda_v * e_vreg + w.lambda_e * e_eclf
    return TotalLoss(total=total, e_vclf=e_vclf, e_vreg=e_vreg, e_eclf=e_eclf,
                     reg_empty=empty, d_junction_logits=d_jl, d_offsets=d_off,
                     d_pair_logits=d_pl)


# ---------------------------------------------------------------------------
# weights file plumbing


def models_to_weights_file(models: dict[str, LptModel], meta: dict | None = None) -> WeightsFile:
    """Bundle several models into one weights file under name prefixes."""
    tensors = {}
    for prefix in sorted(models):
        for name, arr in sorted(models[prefix].state_tensors().items()):
            tensors[f"{prefix}.{name}"] = arr
    return WeightsFile(tensors=tensors, meta=meta or {})


def load_models_from_weights(models: dict[str, LptModel], wfile: WeightsFile) -> None:
    """Strict load: every model tensor present, nothing extra, shapes equal."""
    by_prefix: dict[str, dict[str, np.ndarray]] = {p: {} for p in models}
    for name, arr in wfile.tensors.items():
        prefix, _, rest = name.partition(".")
        if prefix not in models:
            raise WeightsError(f"unexpected tensor {name!r}")
        by_prefix[prefix][rest] = arr
    for prefix in sorted(models):
        models[prefix].load_state_tensors(by_prefix[prefix])
