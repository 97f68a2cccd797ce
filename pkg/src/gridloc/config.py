"""Run configuration: one JSON file, fully validated before any work starts."""

from __future__ import annotations

import copy
import importlib.resources
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .decoding import DecodeOptions
from .geometry import GridSpec
from .nms import PipelineConfig
from .sampler import SampleBudget, make_count_source
from .simulator import NoiseModel


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "output_dir": "gridloc-out",
    "variants": [
        {"points_per_side": 3, "heatmap_resolution": 28, "mode": "quarter", "extension_factor": 2.0},
        {"points_per_side": 3, "heatmap_resolution": 56, "mode": "whole", "extension_factor": 2.0},
        {"points_per_side": 3, "heatmap_resolution": 28, "mode": "whole", "extension_factor": 2.0},
    ],
    "noise": {"peak_sigma": 0.0, "jitter_sigma": 0.0, "background": 0.0, "false_peak_prob": 0.0},
    "pipeline": PipelineConfig().to_dict(),
    "original_pipeline": PipelineConfig.original().to_dict(),
    "decode": DecodeOptions().to_dict(),
    "positive_iou": 0.5,
    "scenes": {
        "count": 200,
        "image_size": [640.0, 480.0],
        "objects_per_image": 3,
        "proposal_noise": 0.1,
        "proposals_per_object": 6,
        "distractors": 4,
        "num_classes": 3,
        "score_blend": 0.8,
        "min_size": 16.0,
        "max_size": 200.0,
    },
    "sampler": SampleBudget().to_dict(),
    "sample_stats": {
        "trials": 10000,
        "distribution": {
            "kind": "mixture",
            "sparse_prob": 0.8,
            "sparse_range": [0, 20],
            "dense_range": [301, 600],
        },
    },
    "nms_bench": {
        "count": 100,
        "objects_per_image": 6,
        "proposals_per_object": 10,
        "distractors": 20,
        "num_classes": 80,
        "proposal_noise": 0.15,
    },
}

_DISTRIBUTION_KEYS = {
    "mixture": {"kind", "sparse_prob", "sparse_range", "dense_range"},
    "lognormal": {"kind", "median", "sigma"},
    "empirical": {"kind", "counts"},
}


def _merge(base: dict, override: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(path, "unknown key")
        if isinstance(base[key], dict) and key != "distribution":
            if not isinstance(value, dict):
                raise ConfigError(path, "expected an object")
            out[key] = _merge(base[key], value, path + ".")
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass
class RunConfig:
    raw: dict
    seed: int
    output_dir: Path
    variants: list[GridSpec]
    noise: NoiseModel
    pipeline: PipelineConfig
    original_pipeline: PipelineConfig
    decode: DecodeOptions
    positive_iou: float
    scenes: dict
    sampler: SampleBudget
    sample_stats: dict
    nms_bench: dict = field(default_factory=dict)

    def resolved(self) -> dict:
        return copy.deepcopy(self.raw)


def _build(key: str, fn, value):
    try:
        if isinstance(value, dict):
            return fn(**value)
        return fn(value)
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(key, str(exc)) from None


def build_config(
    override: dict | None = None, seed: int | None = None, output_dir: str | None = None
) -> RunConfig:
    if override is not None and not isinstance(override, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    raw = _merge(DEFAULTS, override or {})
    if seed is not None:
        raw["seed"] = seed
    if output_dir is not None:
        raw["output_dir"] = output_dir
    if not isinstance(raw["seed"], int) or raw["seed"] < 0:
        raise ConfigError("seed", "must be a non-negative integer")
    if not isinstance(raw["variants"], list) or not raw["variants"]:
        raise ConfigError("variants", "must be a non-empty list")

    variants = []
    for k, v in enumerate(raw["variants"]):
        if not isinstance(v, dict):
            raise ConfigError(f"variants[{k}]", "expected an object")
        unknown = set(v) - set(GridSpec.__dataclass_fields__) - {"mode"}
        if unknown:
            raise ConfigError(f"variants[{k}].{sorted(unknown)[0]}", "unknown key")
        variants.append(_build(f"variants[{k}]", GridSpec, v))
    labels = [s.label for s in variants]
    if len(set(labels)) != len(labels):
        raise ConfigError("variants", f"duplicate variants {labels}")

    noise = _build("noise", NoiseModel, dict(raw["noise"], seed=raw["seed"]))
    pipeline = _build("pipeline", PipelineConfig, raw["pipeline"])
    original = _build("original_pipeline", PipelineConfig, raw["original_pipeline"])
    decode = _build("decode", DecodeOptions, raw["decode"])
    sampler = _build("sampler", SampleBudget, raw["sampler"])

    pos = raw["positive_iou"]
    if not isinstance(pos, (int, float)) or not 0 <= pos < 1:
        raise ConfigError("positive_iou", "must be in [0, 1)")
    sc = raw["scenes"]
    if not isinstance(sc["count"], int) or sc["count"] < 1:
        raise ConfigError("scenes.count", "must be a positive integer")
    if not (isinstance(sc["image_size"], list) and len(sc["image_size"]) == 2):
        raise ConfigError("scenes.image_size", "must be [width, height]")
    if sc["min_size"] <= 0 or sc["max_size"] < sc["min_size"]:
        raise ConfigError("scenes.max_size", "need 0 < min_size <= max_size")

    ss = raw["sample_stats"]
    if not isinstance(ss["trials"], int) or ss["trials"] < 1:
        raise ConfigError("sample_stats.trials", "must be a positive integer")
    dist = ss["distribution"]
    if not isinstance(dist, dict) or dist.get("kind") not in _DISTRIBUTION_KEYS:
        raise ConfigError(
            "sample_stats.distribution.kind", f"must be one of {sorted(_DISTRIBUTION_KEYS)}"
        )
    extra = set(dist) - _DISTRIBUTION_KEYS[dist["kind"]]
    missing = _DISTRIBUTION_KEYS[dist["kind"]] - set(dist)
    if extra:
        raise ConfigError(f"sample_stats.distribution.{sorted(extra)[0]}", "unknown key")
    if missing:
        raise ConfigError(f"sample_stats.distribution.{sorted(missing)[0]}", "missing key")
    _build("sample_stats.distribution", lambda **d: make_count_source(**d), dist)

    nb = raw["nms_bench"]
    if not isinstance(nb["count"], int) or nb["count"] < 1:
        raise ConfigError("nms_bench.count", "must be a positive integer")

    return RunConfig(
        raw=raw,
        seed=raw["seed"],
        output_dir=Path(raw["output_dir"]),
        variants=variants,
        noise=noise,
        pipeline=pipeline,
        original_pipeline=original,
        decode=decode,
        positive_iou=float(pos),
        scenes=sc,
        sampler=sampler,
        sample_stats=ss,
        nms_bench=nb,
    )


def bundled_default_path() -> Path:
    """Path of the packaged default config (a JSON dump of ``DEFAULTS``)."""
    return Path(str(importlib.resources.files("gridloc") / "configs" / "default.json"))


def load_config(
    path: str | Path | None, seed: int | None = None, output_dir: str | None = None
) -> RunConfig:
    """Load and validate a JSON config; ``None`` means the built-in defaults."""
    if path is None:
        return build_config(None, seed, output_dir)
    p = Path(path)
    try:
        text = p.read_text()
    except FileNotFoundError:
        raise ConfigError("--config", f"file not found: {p}") from None
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {p}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"invalid JSON in {p}: {exc}") from None
    return build_config(data, seed, output_dir)
