"""Layered run configuration: defaults < config file < environment < flags.

Config files are plain `key = value` lines with `#` comments; keys are
dotted paths. Environment overrides use the LINEWIRE_ prefix with dots
replaced by underscores (LINEWIRE_PATCH_EPS). Every value is range-checked
at load time, and the fully resolved config can be echoed to a file for
reproducibility.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

ENV_PREFIX = "LINEWIRE_"


class ConfigError(ValueError):
    pass


def _positive(x):
    return x > 0


def _non_negative(x):
    return x >= 0


def _fraction(x):
    return 0.0 <= x <= 1.0


@dataclass(frozen=True)
class _Entry:
    default: object
    kind: type
    check: callable = None
    doc: str = ""


_SCHEMA: dict[str, _Entry] = {
    "seed": _Entry(0, int, doc="global random seed"),
    "jobs": _Entry(1, int, _positive, "parallel workers for batch subcommands"),

    "patch.eps": _Entry(0.03, float, _positive, "patch radius, normalized units"),
    "patch.n_lines": _Entry(64, int, _positive, "lines per single patch (N)"),
    "patch.n_pair_lines": _Entry(128, int, _positive, "lines per pair patch"),
    "patch.g_queries": _Entry(256, int, _positive, "query points per cloud (G)"),
    "patch.density_fraction": _Entry(0.25, float, _fraction, "density-drawn share of queries"),

    "label.tau_2d": _Entry(3.0, float, _positive, "2D support distance, pixels"),
    "label.tau_3d": _Entry(0.05, float, _positive, "3D line distance, fraction of the diagonal"),
    "label.eps_fp": _Entry(0.15, float, _positive, "false-positive junction radius, world units"),
    "label.dihedral_deg": _Entry(5.0, float, lambda x: 0 < x < 90, "sharp-edge threshold"),

    "net.heads": _Entry(4, int, lambda x: x >= 1 and 256 % x == 0, "attention heads"),
    "net.seed": _Entry(0, int, doc="parameter init seed"),
    "net.dtype": _Entry("float64", str, lambda x: x in ("float64", "float32"),
                        "float32 roughly doubles training throughput"),

    "train.epochs": _Entry(5, int, _positive),
    "train.lr": _Entry(1e-3, float, _non_negative),
    "train.beta1": _Entry(0.9, float, lambda x: 0 <= x < 1),
    "train.beta2": _Entry(0.999, float, lambda x: 0 <= x < 1),
    "train.clip_norm": _Entry(5.0, float, _non_negative),
    "train.lambda_v": _Entry(1.0, float, _non_negative),
    "train.lambda_e": _Entry(1.0, float, _non_negative),
    "train.g_junction": _Entry(64, int, _positive, "junction patches per scene step"),
    "train.n_lines": _Entry(24, int, _positive),
    "train.g_pair": _Entry(64, int, _positive, "pair patches per scene step"),
    "train.n_pair_lines": _Entry(48, int, _positive),
    "train.junction_fraction": _Entry(0.5, float, _fraction,
                                      "share of training queries near GT junctions"),
    "train.eps_fp": _Entry(0.05, float, _positive, "pair FP radius, normalized units"),

    "infer.tau_conf": _Entry(0.5, float, lambda x: 0 <= x <= 1.0 + 1e-9),
    "infer.tau_edge": _Entry(0.5, float, _fraction),
    "infer.tau_nms": _Entry(0.05, float, _positive, "NMS radius, normalized units"),
    "infer.h_max": _Entry(1, int, _non_negative, "adjacency-merge Hamming budget"),
    "infer.adjacency_merge_factor": _Entry(2.0, float, lambda x: x >= 1.0),
    "infer.top_m": _Entry(64, int, lambda x: x >= 2),
    "infer.pair_budget": _Entry(128, int, _positive),
    "infer.heuristic_angle_deg": _Entry(15.0, float, lambda x: 0 < x < 90),
    "infer.heuristic_coverage": _Entry(0.5, float, _fraction),

    "synth.family": _Entry("mixed", str,
                           lambda x: x in ("box", "gabled", "hipped", "lshape", "mixed")),
    "synth.noise_sigma": _Entry(0.0, float, _non_negative, "fraction of the diagonal"),
    "synth.clutter_ratio": _Entry(0.0, float, _non_negative),
    "synth.frag_min": _Entry(2, int, _positive),
    "synth.frag_max": _Entry(8, int, _positive),
    "synth.duplicate_prob": _Entry(0.25, float, _fraction),
    "synth.with_cameras": _Entry(False, bool),
    "synth.n_views": _Entry(8, int, lambda x: x >= 2),
}


def _parse_value(key: str, raw: str, kind: type):
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError as e:
        raise ConfigError(f"{key}: {e}") from e


class RunConfig:
    """Resolved configuration with validated values."""

    def __init__(self, values: dict | None = None):
        self._values = {k: e.default for k, e in _SCHEMA.items()}
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key: str, value) -> None:
        if key not in _SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        entry = _SCHEMA[key]
        if isinstance(value, str) and entry.kind is not str:
            value = _parse_value(key, value, entry.kind)
        if entry.kind is float and isinstance(value, int):
            value = float(value)
        if not isinstance(value, entry.kind):
            raise ConfigError(f"{key}: expected {entry.kind.__name__}, got {type(value).__name__}")
        if entry.check is not None and not entry.check(value):
            raise ConfigError(f"{key}: value {value!r} out of range")
        self._values[key] = value

    def get(self, key: str):
        if key not in self._values:
            raise ConfigError(f"unknown config key {key!r}")
        return self._values[key]

    def values(self) -> dict:
        return dict(self._values)

    def __getitem__(self, key: str):
        return self.get(key)

    def apply_file(self, path) -> None:
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from e
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            try:
                self.set(key.strip(), value.strip())
            except ConfigError as e:
                raise ConfigError(f"{path}:{lineno}: {e}") from e

    def apply_env(self, environ=None) -> None:
        environ = os.environ if environ is None else environ
        for key in _SCHEMA:
            env_key = ENV_PREFIX + key.replace(".", "_").upper()
            if env_key in environ:
                self.set(key, environ[env_key])

    def apply_overrides(self, overrides: list[str]) -> None:
        """Apply `key=value` strings from command-line flags."""
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} must look like key=value")
            key, _, value = item.partition("=")
            self.set(key.strip(), value.strip())

    def echo(self) -> str:
        """Canonical text form of the fully resolved config."""
        lines = []
        for key in sorted(self._values):
            v = self._values[key]
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"

    # -- adapters ------------------------------------------------------------

    def scene_spec(self):
        from .synth import SceneSpec

        return SceneSpec(
            family=self["synth.family"],
            noise_sigma=self["synth.noise_sigma"],
            clutter_ratio=self["synth.clutter_ratio"],
            frag_min=self["synth.frag_min"],
            frag_max=self["synth.frag_max"],
            duplicate_prob=self["synth.duplicate_prob"],
            with_cameras=self["synth.with_cameras"],
            n_views=self["synth.n_views"],
        )

    def inference_config(self):
        from .reconstruct import InferenceConfig

        return InferenceConfig(
            eps=self["patch.eps"],
            g_queries=self["patch.g_queries"],
            n_lines=self["patch.n_lines"],
            n_pair_lines=self["patch.n_pair_lines"],
            density_fraction=self["patch.density_fraction"],
            tau_conf=self["infer.tau_conf"],
            tau_edge=self["infer.tau_edge"],
            tau_nms=self["infer.tau_nms"],
            adjacency_merge_factor=self["infer.adjacency_merge_factor"],
            h_max=self["infer.h_max"],
            top_m=self["infer.top_m"],
            pair_budget=self["infer.pair_budget"],
            seed=self["seed"],
            heuristic_angle_deg=self["infer.heuristic_angle_deg"],
            heuristic_coverage=self["infer.heuristic_coverage"],
        )

    def train_config(self):
        from .net.train import TrainConfig

        return TrainConfig(
            epochs=self["train.epochs"],
            lr=self["train.lr"],
            beta1=self["train.beta1"],
            beta2=self["train.beta2"],
            clip_norm=self["train.clip_norm"],
            seed=self["seed"],
            lambda_v=self["train.lambda_v"],
            lambda_e=self["train.lambda_e"],
            g_junction=self["train.g_junction"],
            n_lines=self["train.n_lines"],
            g_pair=self["train.g_pair"],
            n_pair_lines=self["train.n_pair_lines"],
            eps=self["patch.eps"],
            eps_fp=self["train.eps_fp"],
            junction_fraction=self["train.junction_fraction"],
            density_fraction=self["patch.density_fraction"],
        )


def resolve_config(config_file=None, overrides=(), seed=None, jobs=None, environ=None) -> RunConfig:
    cfg = RunConfig()
    if config_file is not None:
        cfg.apply_file(config_file)
    cfg.apply_env(environ)
    cfg.apply_overrides(list(overrides))
    if seed is not None:
        cfg.set("seed", seed)
    if jobs is not None:
        cfg.set("jobs", jobs)
    return cfg
