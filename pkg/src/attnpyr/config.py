"""Flat key-value run configuration.

Every key has a documented default; unknown keys are rejected. Config
files are plain text, one ``key = value`` per line, ``#`` comments
allowed; ``--set key=value`` overrides on top. ``dump-defaults`` prints
the whole table.
"""

from __future__ import annotations

from .data import SyntheticIdentitySpec
from .errors import ConfigError
from .losses import LossConfig
from .pyramid import PyramidConfig


def _bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _int_list(s):
    if isinstance(s, (list, tuple)):
        return [int(v) for v in s]
    s = str(s).strip()
    return [int(v) for v in s.split(",") if v.strip()] if s else []


def _str_list(s):
    if isinstance(s, (list, tuple)):
        return [str(v) for v in s]
    s = str(s).strip()
    return [v.strip() for v in s.split(",") if v.strip()] if s else []


# key -> (default, parser, help)
DEFAULTS = {
    "seed": (0, int, "master seed for data, init and sampling"),
    "pyramid.kind": ("channel", str, "gate domain: channel | spatial"),
    "pyramid.radix": (2, int, "split-count base; parts at level i = radix^i"),
    "pyramid.levels": (2, int, "pyramid depth; 0 disables gating"),
    "loss.margin": (0.3, float, "triplet hinge margin"),
    "loss.epsilon": (0.1, float, "label smoothing rate in [0,1)"),
    "loss.lambda": (1.0, float, "triplet term weight in the total loss"),
    "optim.lr": (4e-4, float, "initial Adam learning rate"),
    "optim.epochs": (60, int, "training epochs"),
    "optim.milestones": ([30, 45], _int_list, "epochs where lr decays x0.1"),
    "batch.p": (8, int, "identities per batch"),
    "batch.k": (4, int, "images per identity per batch"),
    "data.train_identities": (16, int, "training identity count"),
    "data.test_identities": (8, int, "held-out identity count (query+gallery)"),
    "data.samples_per_identity": (8, int, "train images per identity"),
    "data.query_per_identity": (2, int, "query images per test identity"),
    "data.gallery_per_identity": (4, int, "gallery images per test identity"),
    "data.image_height": (48, int, "image height"),
    "data.image_width": (24, int, "image width"),
    "data.jitter": (2, int, "translation jitter in pixels"),
    "data.brightness_lo": (0.85, float, "brightness scale lower bound"),
    "data.brightness_hi": (1.15, float, "brightness scale upper bound"),
    "data.flip_prob": (0.5, float, "horizontal flip probability"),
    "data.occlusion_prob": (0.0, float, "occlusion rectangle probability"),
    "data.occlusion_max_frac": (0.25, float, "max occluded area fraction"),
    "data.occlusion_splits": (
        ["train", "query", "gallery"],
        _str_list,
        "splits the occlusion nuisance applies to",
    ),
    "eval.metric": ("cosine", str, "retrieval metric: cosine | euclidean"),
    "eval.flip_average": (True, _bool, "average features with the mirrored pass"),
    "eval.every": (1, int, "epochs between retrieval snapshots (0 = never)"),
    "ablate.workers": (2, int, "worker threads for ablation cells"),
}


def resolve(overrides=None) -> dict:
    """Full config dict from defaults plus overrides; rejects unknown keys."""
    cfg = {k: v for k, (v, _, _) in DEFAULTS.items()}
    for key, raw in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        _, parser, _ = DEFAULTS[key]
        try:
            cfg[key] = parser(raw)
        except (ValueError, TypeError) as e:
            raise ConfigError(f"bad value for {key!r}: {raw!r} ({e})") from e
    _validate(cfg)
    return cfg


def _validate(cfg):
    if cfg["pyramid.kind"] not in ("channel", "spatial"):
        raise ConfigError(f"pyramid.kind must be channel|spatial, got {cfg['pyramid.kind']!r}")
    if cfg["eval.metric"] not in ("cosine", "euclidean"):
        raise ConfigError(f"eval.metric must be cosine|euclidean, got {cfg['eval.metric']!r}")
    if cfg["pyramid.radix"] < 1 or cfg["pyramid.levels"] < 0:
        raise ConfigError("pyramid.radix must be >= 1 and pyramid.levels >= 0")
    if cfg["batch.k"] < 2:
        raise ConfigError("batch.k must be >= 2 (mining needs a positive per anchor)")
    if cfg["batch.p"] < 2:
        raise ConfigError("batch.p must be >= 2 (mining needs a negative per anchor)")
    if not 0 <= cfg["loss.epsilon"] < 1:
        raise ConfigError("loss.epsilon must be in [0,1)")
    if cfg["loss.margin"] < 0:
        raise ConfigError("loss.margin must be >= 0")


def parse_file(path) -> dict:
    overrides = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, _, value = line.partition("=")
            overrides[key.strip()] = value.strip()
    return overrides


def parse_sets(pairs) -> dict:
    overrides = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"--set needs key=value, got {pair!r}")
        key, _, value = pair.partition("=")
        overrides[key.strip()] = value.strip()
    return overrides


def dump_defaults() -> str:
    lines = []
    for key, (default, _, help_text) in DEFAULTS.items():
        if isinstance(default, list):
            value = ",".join(str(v) for v in default)
        elif isinstance(default, bool):
            value = "true" if default else "false"
        else:
            value = str(default)
        lines.append(f"{key} = {value}  # {help_text}")
    return "\n".join(lines) + "\n"


# adapters -------------------------------------------------------------


def pyramid_config(cfg) -> PyramidConfig:
    return PyramidConfig(cfg["pyramid.radix"], cfg["pyramid.levels"], cfg["pyramid.kind"])


def loss_config(cfg) -> LossConfig:
    return LossConfig(
        margin=cfg["loss.margin"],
        epsilon=cfg["loss.epsilon"],
        balance=cfg["loss.lambda"],
        num_classes=cfg["data.train_identities"],
    )


def data_spec(cfg) -> SyntheticIdentitySpec:
    return SyntheticIdentitySpec(
        num_train_identities=cfg["data.train_identities"],
        num_test_identities=cfg["data.test_identities"],
        samples_per_identity=cfg["data.samples_per_identity"],
        query_per_identity=cfg["data.query_per_identity"],
        gallery_per_identity=cfg["data.gallery_per_identity"],
        image_height=cfg["data.image_height"],
        image_width=cfg["data.image_width"],
        jitter=cfg["data.jitter"],
        brightness_lo=cfg["data.brightness_lo"],
        brightness_hi=cfg["data.brightness_hi"],
        flip_prob=cfg["data.flip_prob"],
        occlusion_prob=cfg["data.occlusion_prob"],
        occlusion_max_frac=cfg["data.occlusion_max_frac"],
        occlusion_splits=tuple(cfg["data.occlusion_splits"]),
    )
