"""Joint training loop for the junction and connectivity models."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import PairBatch, PreparedScene, junction_batch, pair_batch
from .layers import NetError
from .model import LossWeights, LptModel, connectivity_head, junction_heads, total_loss
from .optim import Adam


def _concat_patch_batches(a, b):
    from ..patches import PatchBatch

    return PatchBatch(
        features=np.concatenate([a.features, b.features], axis=0),
        mask=np.concatenate([a.mask, b.mask], axis=0),
        centers=np.concatenate([a.centers, b.centers], axis=0),
        provenance=np.arange(a.features.shape[0] + b.features.shape[0], dtype=np.int64),
        centers2=None if a.centers2 is None else np.concatenate([a.centers2, b.centers2], axis=0),
    )


class TrainingDiverged(RuntimeError):
    """Loss went non-finite; models hold the last-good state."""


@dataclass
class TrainConfig:
    epochs: int = 5
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    clip_norm: float = 5.0
    seed: int = 0
    lambda_v: float = 1.0
    lambda_e: float = 1.0
    g_junction: int = 64
    n_lines: int = 24
    g_pair: int = 64
    n_pair_lines: int = 48
    eps: float = 0.03
    eps_fp: float = 0.05           # normalized units
    junction_fraction: float = 0.5
    density_fraction: float = 0.25
    resample_each_epoch: bool = True   # False freezes epoch-0 batches (overfit runs)
    # pair batches mix in pairs of the single model's own predictions once it
    # has had pred_pair_start epochs to stabilize; aligns the connectivity
    # classifier with the junction sets it will see at inference
    pred_pair_fraction: float = 0.5
    pred_pair_start: int = 1
    pred_pair_queries: int = 96
    tau_nms: float = 0.05


@dataclass
class LossRecord:
    step: int
    total: float
    e_vclf: float
    e_vreg: float
    e_eclf: float


@dataclass
class TrainResult:
    curve: list[LossRecord] = field(default_factory=list)
    aborted: bool = False
    steps: int = 0


def _scene_seed(base: int, epoch: int, scene: int, salt: int) -> int:
    return int(np.random.SeedSequence([base, epoch, scene, salt]).generate_state(1)[0])


def _predicted_pair_batch(single: LptModel, ps: PreparedScene, g: int, cfg: TrainConfig,
                          seed: int):
    """Pairs of the junction model's own (deduplicated) predictions.

    Labels come from the pair classifier's rule against the GT wireframe.
    Returns None when fewer than two junctions survive.
    """
    from ..labeling import pair_class
    from ..patches import PatchBatch, build_pair_patch, sample_query_points
    from ..reconstruct import nms_junctions
    from .model import junction_heads, softmax

    rng = np.random.default_rng(seed)
    qp = sample_query_points(ps.cloud, cfg.pred_pair_queries,
                             density_fraction=cfg.density_fraction,
                             seed=int(rng.integers(2 ** 31)), eps=cfg.eps)
    from ..patches import build_patch

    patches = [build_patch(ps.cloud, p, cfg.eps, cfg.n_lines, grid=ps.grid) for p in qp.points]
    batch = PatchBatch.from_patches(patches)
    feats = single.forward(batch, training=False)
    logits, offsets = junction_heads(single, feats, training=False)
    conf = softmax(logits)[:, 1]
    keep = conf >= 0.5
    if int(keep.sum()) < 2:
        return None
    positions = (qp.points + offsets)[keep]
    stability = np.linalg.norm(offsets, axis=1)[keep]
    kept, _ = nms_junctions(positions, conf[keep], stability, cfg.tau_nms)
    positions = positions[kept]
    if len(positions) < 2:
        return None
    pairs = [(a, b) for a in range(len(positions)) for b in range(a + 1, len(positions))]
    idx = rng.choice(len(pairs), size=min(g, len(pairs)), replace=False)
    chosen = [pairs[int(i)] for i in idx]
    out_patches, targets = [], []
    for a, b in chosen:
        x, y = positions[a], positions[b]
        if np.array_equal(x, y):
            continue
        out_patches.append(build_pair_patch(ps.cloud, x, y, cfg.eps, cfg.n_pair_lines,
                                            grid=ps.grid))
        targets.append(int(pair_class(x, y, ps.wireframe, cfg.eps_fp)))
    if not out_patches:
        return None
    return PatchBatch.from_patches(out_patches), np.asarray(targets, dtype=np.int64)


def train_models(single: LptModel, pair: LptModel, scenes: list[PreparedScene],
                 cfg: TrainConfig, start_step: int = 0,
                 optimizers: tuple[Adam, Adam] | None = None,
                 log=None) -> TrainResult:
    """Minibatch training: one junction batch and one pair batch per scene visit.

    Deterministic per (config, scenes, start_step). On a non-finite loss the
    models are restored to the last completed epoch and the result is marked
    aborted.
    """
    if optimizers is None:
        opt_single = Adam(single.named_parameters(), lr=cfg.lr, beta1=cfg.beta1,
                          beta2=cfg.beta2, clip_norm=cfg.clip_norm)
        opt_pair = Adam(pair.named_parameters(), lr=cfg.lr, beta1=cfg.beta1,
                        beta2=cfg.beta2, clip_norm=cfg.clip_norm)
    else:
        opt_single, opt_pair = optimizers
    weights = LossWeights(lambda_v=cfg.lambda_v, lambda_e=cfg.lambda_e)
    result = TrainResult()
    step = start_step
    good_single = single.snapshot()
    good_pair = pair.snapshot()
    frozen: dict[int, tuple] = {}
    for epoch in range(cfg.epochs):
        for si, ps in enumerate(scenes):
            try:
                if not cfg.resample_each_epoch and si in frozen:
                    jb, pb = frozen[si]
                else:
                    batch_epoch = epoch if cfg.resample_each_epoch else 0
                    jb = junction_batch(ps, cfg.g_junction, cfg.eps, cfg.n_lines,
                                        _scene_seed(cfg.seed, batch_epoch, si, 1),
                                        junction_fraction=cfg.junction_fraction,
                                        density_fraction=cfg.density_fraction)
                    pb = pair_batch(ps, cfg.g_pair, cfg.eps, cfg.n_pair_lines, cfg.eps_fp,
                                    _scene_seed(cfg.seed, batch_epoch, si, 2))
                    if not cfg.resample_each_epoch:
                        frozen[si] = (jb, pb)
                if (cfg.resample_each_epoch and epoch >= cfg.pred_pair_start
                        and cfg.pred_pair_fraction > 0):
                    g_pred = int(round(cfg.pred_pair_fraction * cfg.g_pair))
                    pred = _predicted_pair_batch(single, ps, g_pred, cfg,
                                                 _scene_seed(cfg.seed, epoch, si, 3))
                    if pred is not None:
                        extra_batch, extra_targets = pred
                        pb = PairBatch(
                            batch=_concat_patch_batches(pb.batch, extra_batch),
                            targets=np.concatenate([pb.targets, extra_targets]))

                single.zero_grads()
                feats_s = single.forward(jb.batch, training=True)
                logits, offsets = junction_heads(single, feats_s, training=True)
                pair.zero_grads()
                feats_p = pair.forward(pb.batch, training=True)
                pair_logits = connectivity_head(pair, feats_p, training=True)
                loss = total_loss(logits, jb.clf_targets, offsets, jb.offset_targets,
                                  jb.offset_mask, pair_logits, pb.targets, weights)
                diverged = not np.isfinite(loss.total)
            except NetError:  # non-finite activations count as divergence
                diverged = True
            if diverged:
                single.restore(good_single)
                pair.restore(good_pair)
                result.aborted = True
                result.steps = step
                return result

            d_feat = single.head_backward("junction_clf", loss.d_junction_logits)
            d_feat = d_feat + single.head_backward("junction_reg", loss.d_offsets)
            single.backward(d_feat)
            pair.backward(pair.head_backward("connectivity", loss.d_pair_logits))
            opt_single.step(single.gradients())
            opt_pair.step(pair.gradients())

            step += 1
            result.curve.append(LossRecord(step=step, total=loss.total, e_vclf=loss.e_vclf,
                                           e_vreg=loss.e_vreg, e_eclf=loss.e_eclf))
        good_single = single.snapshot()
        good_pair = pair.snapshot()
        if log is not None:
            recent = result.curve[-len(scenes):]
            log(epoch, float(np.mean([r.total for r in recent])))
    result.steps = step
    return result
