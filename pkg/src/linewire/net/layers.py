"""Network building blocks with explicit forward caches and backward passes.

Everything is float64 numpy. Each layer accumulates parameter gradients into
its `grads` dict; `backward` returns the gradient with respect to the input.
Forward caches make layer instances single-stream: do not interleave two
forward/backward passes through one instance.
"""

from __future__ import annotations

import numpy as np

MASK_FILL = -1e30


class NetError(RuntimeError):
    """Raised for architecture mismatches and non-finite activations."""


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def zero_grads(self):
        for k in self.grads:
            self.grads[k][...] = 0.0

    def named(self, prefix: str):
        for k, v in self.params.items():
            yield f"{prefix}.{k}", v

    def named_buffers(self, prefix: str):
        for k, v in self.buffers.items():
            yield f"{prefix}.{k}", v


class Affine(Layer):
    """y = x @ w + b over the last axis; leading axes are flattened."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 scale: float | None = None, dtype=np.float64):
        super().__init__()
        if scale is None:
            scale = np.sqrt(2.0 / d_in)
        self.d_in, self.d_out = d_in, d_out
        self.params = {"w": rng.normal(0.0, scale, (d_in, d_out)).astype(dtype),
                       "b": np.zeros(d_out, dtype=dtype)}
        self.grads = {"w": np.zeros((d_in, d_out), dtype=dtype), "b": np.zeros(d_out, dtype=dtype)}

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.d_in:
            raise NetError(f"affine input width {x.shape[-1]} != expected {self.d_in}")
        self._shape = x.shape
        self._x = x.reshape(-1, self.d_in)
        out = self._x @ self.params["w"] + self.params["b"]
        return out.reshape(*x.shape[:-1], self.d_out)

    def backward(self, g: np.ndarray) -> np.ndarray:
        gf = g.reshape(-1, self.d_out)
        self.grads["w"] += self._x.T @ gf
        self.grads["b"] += gf.sum(axis=0)
        return (gf @ self.params["w"].T).reshape(self._shape)


class ReLU(Layer):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self._keep = x > 0
        return x * self._keep

    def backward(self, g: np.ndarray) -> np.ndarray:
        return g * self._keep


class MaskedBatchNorm(Layer):
    """Batch normalization over valid rows only.

    Statistics come from rows where the mask is set; all rows are normalized
    with those statistics. With zero valid rows the layer falls back to
    mean 0 / var 1 and leaves the running statistics untouched.
    """

    def __init__(self, d: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float64):
        super().__init__()
        self.d, self.momentum, self.eps = d, momentum, eps
        self.dtype = dtype
        self.params = {"gamma": np.ones(d, dtype=dtype), "beta": np.zeros(d, dtype=dtype)}
        self.grads = {"gamma": np.zeros(d, dtype=dtype), "beta": np.zeros(d, dtype=dtype)}
        self.buffers = {"running_mean": np.zeros(d, dtype=dtype),
                        "running_var": np.ones(d, dtype=dtype)}

    def forward(self, x: np.ndarray, mask: np.ndarray | None, training: bool,
                update_stats: bool | None = None) -> np.ndarray:
        # x (rows, d); mask (rows,) or None for all-valid
        if update_stats is None:
            update_stats = training
        rows = x.shape[0]
        m = np.ones(rows, dtype=bool) if mask is None else mask
        if training:
            n = int(m.sum())
            if n == 0:
                mean = np.zeros(self.d, dtype=self.dtype)
                var = np.ones(self.d, dtype=self.dtype)
            else:
                xm = x * m[:, None]
                mean = xm.sum(axis=0) / n
                var = (((x - mean) ** 2) * m[:, None]).sum(axis=0) / n
                if update_stats:
                    mom = self.momentum
                    self.buffers["running_mean"] *= 1.0 - mom
                    self.buffers["running_mean"] += mom * mean
                    self.buffers["running_var"] *= 1.0 - mom
                    self.buffers["running_var"] += mom * var
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
            n = 0
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        self._cache = (xhat, inv_std, m, n if training else -1)
        return self.params["gamma"] * xhat + self.params["beta"]

    def backward(self, g: np.ndarray) -> np.ndarray:
        xhat, inv_std, m, n = self._cache
        self.grads["gamma"] += (g * xhat).sum(axis=0)
        self.grads["beta"] += g.sum(axis=0)
        gg = g * self.params["gamma"]
        if n <= 0:  # eval mode (n == -1) or empty batch: statistics are constants
            return gg * inv_std
        sum_g = gg.sum(axis=0)
        sum_gx = (gg * xhat).sum(axis=0)
        return inv_std * (gg - m[:, None] * (sum_g + xhat * sum_gx) / n)


class LayerNorm(Layer):
    def __init__(self, d: int, eps: float = 1e-5, dtype=np.float64):
        super().__init__()
        self.d, self.eps = d, eps
        self.params = {"gamma": np.ones(d, dtype=dtype), "beta": np.zeros(d, dtype=dtype)}
        self.grads = {"gamma": np.zeros(d, dtype=dtype), "beta": np.zeros(d, dtype=dtype)}

    def forward(self, x: np.ndarray) -> np.ndarray:
        mean = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        self._cache = (xhat, inv_std)
        return self.params["gamma"] * xhat + self.params["beta"]

    def backward(self, g: np.ndarray) -> np.ndarray:
        xhat, inv_std = self._cache
        self.grads["gamma"] += (g * xhat).reshape(-1, self.d).sum(axis=0)
        self.grads["beta"] += g.reshape(-1, self.d).sum(axis=0)
        h = g * self.params["gamma"]
        return inv_std * (h - h.mean(axis=-1, keepdims=True)
                          - xhat * (h * xhat).mean(axis=-1, keepdims=True))


class MultiHeadSelfAttention(Layer):
    """Scaled dot-product self-attention with key masking.

    Tokens whose key mask is unset are never attended to; a token row with no
    valid keys at all produces a zero context vector.
    """

    def __init__(self, d: int, heads: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        if d % heads != 0:
            raise NetError(f"model width {d} not divisible by {heads} heads")
        self.d, self.heads, self.dh = d, heads, d // heads
        scale = np.sqrt(1.0 / d)
        for name in ("wq", "wk", "wv", "wo"):
            self.params[name] = rng.normal(0.0, scale, (d, d)).astype(dtype)
            self.grads[name] = np.zeros((d, d), dtype=dtype)
        for name in ("bq", "bk", "bv", "bo"):
            self.params[name] = np.zeros(d, dtype=dtype)
            self.grads[name] = np.zeros(d, dtype=dtype)

    def _split(self, x: np.ndarray) -> np.ndarray:
        b, t, _ = x.shape
        return x.reshape(b, t, self.heads, self.dh).transpose(0, 2, 1, 3)

    def _merge(self, x: np.ndarray) -> np.ndarray:
        b, h, t, dh = x.shape
        return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)

    def forward(self, x: np.ndarray, key_mask: np.ndarray) -> np.ndarray:
        p = self.params
        q = self._split(x @ p["wq"] + p["bq"])
        k = self._split(x @ p["wk"] + p["bk"])
        v = self._split(x @ p["wv"] + p["bv"])
        scores = q @ k.transpose(0, 1, 3, 2) / np.sqrt(self.dh)
        scores = np.where(key_mask[:, None, None, :], scores, MASK_FILL)
        scores -= scores.max(axis=-1, keepdims=True)
        e = np.exp(scores)
        p0 = e / e.sum(axis=-1, keepdims=True)
        row_valid = key_mask.any(axis=1).astype(np.float64)[:, None, None, None]
        attn = p0 * row_valid
        ctx = attn @ v
        merged = self._merge(ctx)
        out = merged @ p["wo"] + p["bo"]
        self._cache = (x, q, k, v, p0, row_valid, merged)
        return out

    def backward(self, g: np.ndarray) -> np.ndarray:
        p = self.params
        x, q, k, v, p0, row_valid, merged = self._cache
        b, t, d = x.shape
        gf = g.reshape(-1, d)
        self.grads["wo"] += merged.reshape(-1, d).T @ gf
        self.grads["bo"] += gf.sum(axis=0)
        d_ctx = self._split((gf @ p["wo"].T).reshape(b, t, d))
        attn = p0 * row_valid
        d_attn = d_ctx @ v.transpose(0, 1, 3, 2)
        d_v = attn.transpose(0, 1, 3, 2) @ d_ctx
        d_p0 = d_attn * row_valid
        d_scores = p0 * (d_p0 - (d_p0 * p0).sum(axis=-1, keepdims=True))
        d_scores /= np.sqrt(self.dh)
        d_q = d_scores @ k
        d_k = d_scores.transpose(0, 1, 3, 2) @ q
        dx = np.zeros_like(x)
        xf = x.reshape(-1, d)
        for name, grad in (("wq", d_q), ("wk", d_k), ("wv", d_v)):
            gm = self._merge(grad).reshape(-1, d)
            self.grads[name] += xf.T @ gm
            self.grads["b" + name[1]] += gm.sum(axis=0)
            dx += (gm @ p[name].T).reshape(b, t, d)
        return dx


class FeedForward(Layer):
    def __init__(self, d: int, d_ff: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.lin1 = Affine(d, d_ff, rng, dtype=dtype)
        self.act = ReLU()
        self.lin2 = Affine(d_ff, d, rng, dtype=dtype)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.lin2.forward(self.act.forward(self.lin1.forward(x)))

    def backward(self, g: np.ndarray) -> np.ndarray:
        return self.lin1.backward(self.act.backward(self.lin2.backward(g)))

    def zero_grads(self):
        self.lin1.zero_grads()
        self.lin2.zero_grads()

    def named(self, prefix: str):
        yield from self.lin1.named(f"{prefix}.lin1")
        yield from self.lin2.named(f"{prefix}.lin2")

    def named_buffers(self, prefix: str):
        return iter(())


class TransformerEncoderLayer(Layer):
    """Pre-normalization encoder block: x + attn(ln1(x)), then + ff(ln2(.))."""

    def __init__(self, d: int, heads: int, d_ff: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.ln1 = LayerNorm(d, dtype=dtype)
        self.attn = MultiHeadSelfAttention(d, heads, rng, dtype=dtype)
        self.ln2 = LayerNorm(d, dtype=dtype)
        self.ff = FeedForward(d, d_ff, rng, dtype=dtype)

    def forward(self, x: np.ndarray, key_mask: np.ndarray) -> np.ndarray:
        h1 = x + self.attn.forward(self.ln1.forward(x), key_mask)
        return h1 + self.ff.forward(self.ln2.forward(h1))

    def backward(self, g: np.ndarray) -> np.ndarray:
        g_h1 = g + self.ln2.backward(self.ff.backward(g))
        return g_h1 + self.ln1.backward(self.attn.backward(g_h1))

    def zero_grads(self):
        for sub in (self.ln1, self.attn, self.ln2, self.ff):
            sub.zero_grads()

    def named(self, prefix: str):
        yield from self.ln1.named(f"{prefix}.ln1")
        yield from self.attn.named(f"{prefix}.attn")
        yield from self.ln2.named(f"{prefix}.ln2")
        yield from self.ff.named(f"{prefix}.ff")

    def named_buffers(self, prefix: str):
        return iter(())


class MaskedMaxPool(Layer):
    """Max over the token axis restricted to valid tokens; empty rows give zeros."""

    def forward(self, x: np.ndarray, mask: np.ndarray) -> np.ndarray:
        # x (B, T, D), mask (B, T)
        filled = np.where(mask[:, :, None], x, -np.inf)
        idx = filled.argmax(axis=1)                      # (B, D)
        out = np.take_along_axis(filled, idx[:, None, :], axis=1)[:, 0, :]
        self._nonempty = mask.any(axis=1)
        out = np.where(self._nonempty[:, None], out, 0.0)
        self._idx = idx
        self._shape = x.shape
        self._dtype = x.dtype
        return out

    def backward(self, g: np.ndarray) -> np.ndarray:
        b, t, d = self._shape
        dx = np.zeros(self._shape, dtype=self._dtype)
        gm = g * self._nonempty[:, None]
        bi = np.repeat(np.arange(b), d)
        di = np.tile(np.arange(d), b)
        np.add.at(dx, (bi, self._idx.reshape(-1), di), gm.reshape(-1))
        return dx


# ---------------------------------------------------------------------------
# losses


def softmax_cross_entropy(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over rows; returns (loss, dlogits)."""
    n, c = logits.shape
    z = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsumexp
    loss = -float(logp[np.arange(n), targets].mean())
    probs = np.exp(logp)
    d = probs
    d[np.arange(n), targets] -= 1.0
    return loss, d / n


def masked_squared_error(pred: np.ndarray, target: np.ndarray,
                         mask: np.ndarray) -> tuple[float, np.ndarray, bool]:
    """Mean squared Euclidean distance over masked rows.

    Returns (loss, dpred, empty). With no masked rows the loss is 0 and the
    empty flag is set.
    """
    n = int(mask.sum())
    if n == 0:
        return 0.0, np.zeros_like(pred), True
    diff = (pred - target) * mask[:, None]
    loss = float((diff ** 2).sum() / n)
    return loss, 2.0 * diff / n, False
