"""Command-line entry point: synth / label / train / infer / eval / inspect-patch.

Diagnostics go to stderr, data to files or stdout. Every subcommand is
deterministic given --seed; exit code 0 means full success.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, resolve_config
from .geometry import GeometryError, LineCloud, normalize_cloud, validate_wireframe
from .io import (
    ParseError,
    WeightsError,
    read_cameras,
    read_line_cloud,
    read_supports,
    read_weights_file,
    read_wireframe,
    write_line_cloud,
    write_weights_file,
    write_wireframe,
)
from .labeling import LabelingError, label_line_cloud
from .metrics import aggregate_reports, evaluate
from .net.model import LptConfig, LptModel, load_models_from_weights, models_to_weights_file
from .net.optim import Adam
from .net.train import TrainConfig, train_models
from .net.data import prepare_scene
from .patches import build_pair_patch, build_patch
from .reconstruct import heuristic_wireframe, reconstruct_wireframe
from .synth import generate_synthetic_scene, read_scene, write_scene

USER_ERRORS = (ConfigError, ParseError, GeometryError, LabelingError, WeightsError)


def _err(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return 1


def _info(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load_config(args) -> RunConfig:
    return resolve_config(config_file=args.config, overrides=args.set or (),
                          seed=args.seed, jobs=args.jobs)


def _scene_seed(base: int, index: int) -> int:
    return int(np.random.SeedSequence([base, index]).generate_state(1)[0])


def _build_models(cfg: RunConfig) -> dict[str, LptModel]:
    heads = cfg["net.heads"]
    dtype = cfg["net.dtype"]
    return {
        "junction": LptModel(LptConfig.single(seed=cfg["net.seed"], n_heads=heads, dtype=dtype)),
        "pair": LptModel(LptConfig.pair(seed=cfg["net.seed"] + 1, n_heads=heads, dtype=dtype)),
    }


# ---------------------------------------------------------------------------
# synth


def _synth_one(payload) -> str:
    out_dir, index, base_seed, cfg_values = payload
    cfg = RunConfig(cfg_values)
    spec = cfg.scene_spec()
    scene = generate_synthetic_scene(spec, seed=_scene_seed(base_seed, index))
    if scene.cameras is not None:
        labeled = label_line_cloud(scene.cloud, scene.wireframe, cameras=scene.cameras,
                                   tau_2d=cfg["label.tau_2d"])
    else:
        tau = cfg["label.tau_3d"] * scene.cloud.bbox_diagonal()
        labeled = label_line_cloud(scene.cloud, scene.wireframe, tau_3d=tau)
    scene_dir = Path(out_dir) / f"scene_{index:04d}"
    write_scene(scene, labeled, scene_dir)
    return str(scene_dir)


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        return _err(f"output directory {out} is not empty (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    cfg.scene_spec().validate()
    payloads = [(str(out), i, cfg["seed"], cfg.values()) for i in range(args.count)]
    if cfg["jobs"] > 1:
        with ProcessPoolExecutor(max_workers=cfg["jobs"]) as pool:
            list(pool.map(_synth_one, payloads))
    else:
        for p in payloads:
            _synth_one(p)
    (out / "config.txt").write_text(cfg.echo())
    _info(f"wrote {args.count} scenes to {out}")
    return 0


# ---------------------------------------------------------------------------
# label


def cmd_label(args) -> int:
    cfg = _load_config(args)
    cloud = read_line_cloud(args.cloud)
    gt = read_wireframe(args.gt)
    if args.cameras:
        if not args.supports:
            return _err("--cameras requires --supports (2D records per segment)")
        cameras = read_cameras(args.cameras)
        supports = read_supports(args.supports, len(cloud))
        cloud = LineCloud(cloud.array, labels=cloud.labels, supports=supports)
        labeled = label_line_cloud(cloud, gt, cameras=cameras, tau_2d=cfg["label.tau_2d"])
    else:
        tau = cfg["label.tau_3d"] * cloud.bbox_diagonal()
        labeled = label_line_cloud(cloud, gt, tau_3d=tau)
    write_line_cloud(labeled, args.out)
    positive = int(np.sum(labeled.labels.f == 1))
    share = 100.0 * positive / max(len(labeled), 1)
    print(f"labeled {len(labeled)} segments: {positive} positive ({share:.1f}%)")
    return 0


# ---------------------------------------------------------------------------
# train


def _load_dataset(data_dir, cfg: RunConfig):
    root = Path(data_dir)
    scene_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not scene_dirs:
        raise ConfigError(f"no scene directories under {root}")
    prepared = []
    for d in scene_dirs:
        bundle = read_scene(d)
        if bundle.cloud.labels is None:
            raise ConfigError(f"{d}: cloud carries no labels (run `label` or `synth` first)")
        prepared.append(prepare_scene(bundle.cloud, bundle.wireframe, eps=cfg["patch.eps"]))
    return prepared


def cmd_train(args) -> int:
    cfg = _load_config(args)
    scenes = _load_dataset(args.data, cfg)
    models = _build_models(cfg)
    tc = cfg.train_config()
    opt_kw = dict(lr=tc.lr, beta1=tc.beta1, beta2=tc.beta2, clip_norm=tc.clip_norm)
    optimizers = (Adam(models["junction"].named_parameters(), **opt_kw),
                  Adam(models["pair"].named_parameters(), **opt_kw))
    start_step = 0
    if args.resume:
        ck = read_weights_file(args.resume)
        model_tensors = {}
        opt_tensors = {"junction": {}, "pair": {}}
        for name, arr in ck.tensors.items():
            prefix, _, rest = name.partition(".")
            if prefix in ("junction", "pair"):
                model_tensors[name] = arr
            elif prefix in ("adam_junction", "adam_pair"):
                opt_tensors[prefix.removeprefix("adam_")][rest] = arr
            else:
                raise WeightsError(f"unexpected tensor {name!r} in checkpoint")
        load_models_from_weights(models, type(ck)(tensors=model_tensors, meta=ck.meta))
        optimizers[0].load_state_tensors(opt_tensors["junction"])
        optimizers[1].load_state_tensors(opt_tensors["pair"])
        start_step = int(ck.meta.get("step", 0))
        _info(f"resumed from {args.resume} at step {start_step}")

    result = train_models(models["junction"], models["pair"], scenes, tc,
                          start_step=start_step, optimizers=optimizers,
                          log=lambda e, l: _info(f"epoch {e}: mean loss {l:.4f}"))

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    wfile = models_to_weights_file(models, meta={"step": result.steps})
    write_weights_file(wfile, out)
    ck_tensors = dict(wfile.tensors)
    for prefix, opt in (("adam_junction", optimizers[0]), ("adam_pair", optimizers[1])):
        for name, arr in opt.state_tensors().items():
            ck_tensors[f"{prefix}.{name}"] = arr
    write_weights_file(type(wfile)(tensors=ck_tensors, meta={"step": result.steps}),
                       out.with_suffix(out.suffix + ".ckpt"))
    curve_lines = ["step,e_total,e_vclf,e_vreg,e_eclf"]
    for r in result.curve:
        curve_lines.append(f"{r.step},{r.total:.9g},{r.e_vclf:.9g},{r.e_vreg:.9g},{r.e_eclf:.9g}")
    out.with_suffix(out.suffix + ".loss.csv").write_text("\n".join(curve_lines) + "\n")
    Path(str(out) + ".config.txt").write_text(cfg.echo())
    if result.aborted:
        return _err(f"training diverged at step {result.steps}; "
                    f"last-good checkpoint written to {out}")
    _info(f"trained {result.steps} steps; weights at {out}")
    return 0


# ---------------------------------------------------------------------------
# infer


def cmd_infer(args) -> int:
    cfg = _load_config(args)
    cloud = read_line_cloud(args.cloud)
    icfg = cfg.inference_config()
    if args.heuristic:
        wf, report = heuristic_wireframe(cloud, icfg)
    else:
        if not args.weights:
            return _err("provide --weights or --heuristic")
        models = _build_models(cfg)
        load_models_from_weights(models, read_weights_file(args.weights))
        wf, report = reconstruct_wireframe(models["junction"], models["pair"], cloud, icfg)
    violations = validate_wireframe(wf)
    if violations:
        return _err(f"internal error: invalid wireframe: {violations[0]}")
    write_wireframe(wf, args.out)
    if args.report:
        doc = {"stages": report, "vertices": wf.n_vertices, "edges": wf.n_edges,
               "mode": "heuristic" if args.heuristic else "model"}
        Path(args.report).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    Path(str(args.out) + ".config.txt").write_text(cfg.echo())
    _info(f"wrote {wf.n_vertices} vertices / {wf.n_edges} edges to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# eval


def _print_batch_row(name, report, stream):
    w = report.wed_components
    print(f"{name:24s} vAP {100 * report.v_ap_avg:6.2f}  vRec {100 * report.v_recall_avg:6.2f}"
          f"  sAP {100 * report.s_ap_avg:6.2f}  sRec {100 * report.s_recall_avg:6.2f}"
          f"  WED {w.total_num:7.3f} / {w.total_dist:8.3f}", file=stream)


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    pred_path, gt_path = Path(args.pred), Path(args.gt)
    if pred_path.is_dir() != gt_path.is_dir():
        return _err("--pred and --gt must both be files or both be directories")
    out_doc = {}
    if pred_path.is_dir():
        names = sorted(p.name for p in pred_path.glob("*.obj"))
        if not names:
            return _err(f"no .obj files in {pred_path}")
        reports = []
        for name in names:
            gt_file = gt_path / name
            if not gt_file.exists():
                return _err(f"missing ground truth for {name}")
            report = evaluate(read_wireframe(pred_path / name), read_wireframe(gt_file))
            reports.append(report)
            _print_batch_row(name, report, sys.stdout)
            out_doc[name] = json.loads(report.to_json())
        mean = aggregate_reports(reports)
        _print_batch_row("mean", mean, sys.stdout)
        out_doc["mean"] = json.loads(mean.to_json())
    else:
        report = evaluate(read_wireframe(pred_path), read_wireframe(gt_path))
        print(report.format_table(f"{pred_path.name} vs {gt_path.name}"))
        out_doc = json.loads(report.to_json())
    if args.out:
        Path(args.out).write_text(json.dumps(out_doc, sort_keys=True, indent=1) + "\n")
        Path(str(args.out) + ".config.txt").write_text(cfg.echo())
    return 0


# ---------------------------------------------------------------------------
# inspect-patch


def _parse_point(text: str) -> np.ndarray:
    try:
        parts = [float(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"bad point {text!r}; expected x,y,z") from None
    if len(parts) != 3:
        raise ConfigError(f"bad point {text!r}; expected 3 coordinates")
    return np.asarray(parts)


def cmd_inspect_patch(args) -> int:
    _load_config(args)
    cloud = read_line_cloud(args.cloud)
    x = _parse_point(args.point)
    n = args.n_lines
    if args.point2:
        patch = build_pair_patch(cloud, x, _parse_point(args.point2), args.eps, n)
    else:
        patch = build_patch(cloud, x, args.eps, n)
    if patch.valid_count == 0:
        print("empty patch")
        return 0
    kind = "pair" if args.point2 else "single"
    print(f"{kind} patch: {patch.valid_count} members (eps={args.eps:g})")
    for row, idx in enumerate(patch.member_indices.tolist()):
        seg = cloud.array[idx]
        feat = patch.features[row]
        dist = feat[6] if not args.point2 else min(feat[6], feat[7])
        print(f"  line {idx:5d}  dist {dist:.6g}  p=({seg[0][0]:.6g},{seg[0][1]:.6g},{seg[0][2]:.6g})"
              f"  q=({seg[1][0]:.6g},{seg[1][1]:.6g},{seg[1][2]:.6g})")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config value (repeatable)")
    common.add_argument("--seed", type=int, help="global random seed")
    common.add_argument("--jobs", type=int, help="parallel workers")

    parser = argparse.ArgumentParser(prog="linewire",
                                     description="Building wireframes from 3D line clouds")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate labeled synthetic scenes")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("label", parents=[common], help="label a line cloud against a GT wireframe")
    p.add_argument("--cloud", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--cameras")
    p.add_argument("--supports")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_label)

    p = sub.add_parser("train", parents=[common], help="train junction + connectivity models")
    p.add_argument("--data", required=True, help="directory of scene subdirectories")
    p.add_argument("--out", required=True, help="output weights file")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("infer", parents=[common], help="reconstruct a wireframe from a cloud")
    p.add_argument("--cloud", required=True)
    p.add_argument("--weights")
    p.add_argument("--heuristic", action="store_true", help="training-free baseline")
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="write per-stage counts as JSON")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("eval", parents=[common], help="score predictions against ground truth")
    p.add_argument("--pred", required=True, help="wireframe file or directory")
    p.add_argument("--gt", required=True, help="wireframe file or directory")
    p.add_argument("--out", help="write the report(s) as JSON")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("inspect-patch", parents=[common], help="dump a line patch as text")
    p.add_argument("--cloud", required=True)
    p.add_argument("--point", required=True, metavar="X,Y,Z")
    p.add_argument("--point2", metavar="X,Y,Z", help="second point for a pair patch")
    p.add_argument("--eps", type=float, default=0.03)
    p.add_argument("--n-lines", type=int, default=64)
    p.set_defaults(fn=cmd_inspect_patch)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except USER_ERRORS as e:
        return _err(str(e))
    except OSError as e:
        return _err(f"i/o failure: {e}")


if __name__ == "__main__":
    sys.exit(main())
