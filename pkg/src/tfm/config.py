"""Experiment configuration: a flat dotted-key text format with a strict registry.

Files contain ``section.key = value`` lines (``#`` comments allowed). Values are ints,
floats, bare or quoted strings, or bracketed lists. Unknown keys are hard errors, so a
typo cannot silently fall back to a default. Serialization is canonical (sorted keys,
round-trip float formatting), which makes the config hash independent of key order.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from . import data, objectives
from .flowcore import TimeSamplerConfig, TimeSamplerKind
from .nets import ConditioningMode, ParamMode, TimeEmbedConfig


class ConfigError(ValueError):
    """Bad config file: unknown key, wrong type, or invalid value."""


# --------------------------------------------------------------------- key registry

@dataclass(frozen=True)
class _Key:
    kind: str  # int | float | str | int_list | float_list
    default: object = None  # None with required=False means "absent unless set"
    choices: tuple | None = None
    required: bool = False
    family: str | None = None  # dataset.* keys tied to one dataset family


_REGISTRY: dict[str, _Key] = {
    "objective": _Key("str", "tfm", choices=("tfm", "fm")),
    "dataset.name": _Key("str", "letter_glyph", choices=tuple(d.value for d in data.DatasetName)),
    "dataset.n": _Key("int", 20000),
    "dataset.n_classes": _Key("int", 0),
    "dataset.scale": _Key("float", None),
    "dataset.glyph": _Key("str", None, family="letter_glyph"),
    "dataset.components": _Key("int", None, family="gaussian_mixture"),
    "dataset.radius": _Key("float", None, family="gaussian_mixture"),
    "dataset.std": _Key("float", None),
    "dataset.noise": _Key("float", None, family="moons"),
    "dataset.mean": _Key("float_list", None, family="gaussian"),
    "source.kind": _Key("str", "ring", choices=tuple(k.value for k in data.SourceKind)),
    "source.radius": _Key("float", 2.0),
    "source.width": _Key("float", 0.25),
    "model.hidden": _Key("int_list", [256, 256, 256, 256]),
    "model.time_dim": _Key("int", 64),
    "model.max_period": _Key("float", 1.0e4),
    "model.cond_mode": _Key("str", "t_dt", choices=tuple(m.value for m in ConditioningMode)),
    "model.param_mode": _Key("str", "residual", choices=tuple(m.value for m in ParamMode)),
    "loss.p": _Key("float", 1.0),
    "loss.c": _Key("float", 1.0e-3),
    "loss.cfg_dropout": _Key("float", 0.1),
    "time_sampler.kind": _Key("str", "lognorm", choices=tuple(k.value for k in TimeSamplerKind)),
    "time_sampler.mu": _Key("float", -0.4),
    "time_sampler.sigma": _Key("float", 1.0),
    "time_sampler.mu_d": _Key("float", None),
    "time_sampler.sigma_d": _Key("float", None),
    "optim.lr": _Key("float", 1.0e-3),
    "optim.beta1": _Key("float", 0.9),
    "optim.beta2": _Key("float", 0.999),
    "optim.steps": _Key("int", 50000),
    "optim.batch": _Key("int", 128),
    "optim.ema": _Key("float", 0.999),
    "optim.seed": _Key("int", None, required=True),
    "optim.lr_schedule": _Key("str", "constant", choices=("constant", "cosine")),
    "optim.log_every": _Key("int", 500),
    "eval.every": _Key("int", 0),
    "eval.n": _Key("int", 2048),
    "sampling.steps": _Key("int", 1),
    "sampling.n": _Key("int", 4096),
    "sampling.cfg_scale": _Key("float", 0.0),
}

_DATASET_STD_FAMILIES = ("gaussian_mixture", "gaussian")


# ------------------------------------------------------------------- parse / render

def _parse_scalar(tok: str):
    tok = tok.strip()
    if not tok:
        raise ConfigError("empty value")
    if tok.startswith('"') and tok.endswith('"') and len(tok) >= 2:
        return tok[1:-1]
    if tok in ("true", "false"):
        return tok == "true"
    try:
        return int(tok)
    except ValueError:
        pass
    try:
        return float(tok)
    except ValueError:
        return tok


def parse_config_text(text: str) -> dict[str, object]:
    """Raw key/value pairs, no validation beyond syntax."""
    out: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"line {lineno}: missing key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if value.startswith("[") and value.endswith("]"):
            inner = value[1:-1].strip()
            out[key] = [] if not inner else [_parse_scalar(v) for v in inner.split(",")]
        else:
            out[key] = _parse_scalar(value)
    return out


def _render_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        return value if value.replace("_", "").replace("-", "").isalnum() else f'"{value}"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_render_value(v) for v in value) + "]"
    raise ConfigError(f"cannot render {value!r}")


def serialize_values(values: dict[str, object]) -> str:
    lines = [f"{k} = {_render_value(values[k])}" for k in sorted(values)]
    return "\n".join(lines) + "\n"


def _coerce(key: str, value, spec: _Key):
    kind = spec.kind
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected integer, got {value!r}")
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected number, got {value!r}")
        return float(value)
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected string, got {value!r}")
        if spec.choices and value not in spec.choices:
            raise ConfigError(f"{key}: {value!r} not one of {spec.choices}")
        return value
    if kind in ("int_list", "float_list"):
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        want = int if kind == "int_list" else float
        try:
            return [want(v) for v in value]
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected a list of {want.__name__}s, got {value!r}")
    raise ConfigError(f"{key}: unhandled kind {kind}")


# --------------------------------------------------------------- resolved experiment

@dataclass
class ExperimentConfig:
    """A fully resolved experiment: typed sub-configs plus the canonical value map."""

    values: dict[str, object]

    @property
    def objective(self) -> str:
        return self.values["objective"]

    @property
    def dataset(self) -> data.DatasetSpec:
        params = {}
        for short in ("glyph", "components", "radius", "std", "noise", "mean", "scale"):
            v = self.values.get(f"dataset.{short}")
            if v is not None:
                params[short] = tuple(v) if isinstance(v, list) else v
        return data.DatasetSpec(
            data.DatasetName(self.values["dataset.name"]),
            params,
            self.values["dataset.n_classes"],
        )

    @property
    def dataset_n(self) -> int:
        return self.values["dataset.n"]

    @property
    def source(self) -> data.SourceSpec:
        return data.SourceSpec(
            data.SourceKind(self.values["source.kind"]),
            self.values["source.radius"],
            self.values["source.width"],
        )

    @property
    def model_kw(self) -> dict:
        return dict(
            data_dim=2,
            hidden_sizes=tuple(self.values["model.hidden"]),
            time_cfg=TimeEmbedConfig(self.values["model.time_dim"], self.values["model.max_period"]),
            cond_mode=ConditioningMode(self.values["model.cond_mode"]),
            param_mode=ParamMode(self.values["model.param_mode"]),
        )

    @property
    def loss(self) -> objectives.LossConfig:
        return objectives.LossConfig(
            self.values["loss.p"], self.values["loss.c"], self.values["loss.cfg_dropout"]
        )

    @property
    def time_sampler(self) -> TimeSamplerConfig:
        return TimeSamplerConfig(
            TimeSamplerKind(self.values["time_sampler.kind"]),
            self.values["time_sampler.mu"],
            self.values["time_sampler.sigma"],
            self.values.get("time_sampler.mu_d"),
            self.values.get("time_sampler.sigma_d"),
        )

    def train_kwargs(self) -> dict:
        v = self.values
        return dict(
            objective=self.objective,
            dataset=self.dataset,
            source=self.source,
            model_kw=self.model_kw,
            loss_cfg=self.loss,
            time_cfg=self.time_sampler,
            steps=v["optim.steps"],
            batch=v["optim.batch"],
            lr=v["optim.lr"],
            betas=(v["optim.beta1"], v["optim.beta2"]),
            ema_decay=v["optim.ema"],
            seed=v["optim.seed"],
            lr_schedule=v["optim.lr_schedule"],
            dataset_n=v["dataset.n"],
            eval_every=v["eval.every"],
            eval_n=v["eval.n"],
            log_every=v["optim.log_every"],
        )

    def to_text(self) -> str:
        return serialize_values(self.values)

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()


def resolve(raw: dict[str, object]) -> ExperimentConfig:
    """Validate raw pairs against the registry and fill defaults."""
    unknown = sorted(set(raw) - set(_REGISTRY))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    values: dict[str, object] = {}
    for key, spec in _REGISTRY.items():
        if key in raw:
            values[key] = _coerce(key, raw[key], spec)
        elif spec.required:
            raise ConfigError(f"missing required key {key}")
        elif spec.default is not None:
            values[key] = spec.default
        # absent optional keys stay absent (family-specific dataset parameters)
    family = values["dataset.name"]
    for key, spec in _REGISTRY.items():
        if key in raw and spec.family is not None and spec.family != family:
            raise ConfigError(f"{key} does not apply to dataset.name = {family}")
    if "dataset.std" in raw and family not in _DATASET_STD_FAMILIES:
        raise ConfigError(f"dataset.std does not apply to dataset.name = {family}")
    if values["dataset.n_classes"] < 0:
        raise ConfigError("dataset.n_classes must be >= 0")
    if values["optim.steps"] < 0:
        raise ConfigError("optim.steps must be >= 0")
    if not values["model.hidden"]:
        raise ConfigError("model.hidden must name at least one layer width")
    cfg = ExperimentConfig(values)
    try:  # constructing the typed views validates value ranges early
        _ = (cfg.dataset, cfg.source, cfg.loss, cfg.time_sampler, cfg.model_kw)
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return resolve(parse_config_text(fh.read()))


# -------------------------------------------------------------------- run manifest

@dataclass
class RunManifest:
    config_hash: str
    checkpoint: str
    version: str
    wall_clock_s: float
    metrics: dict[str, float] = field(default_factory=dict)

    def to_text(self) -> str:
        values = {
            "run.config_hash": self.config_hash,
            "run.checkpoint": self.checkpoint,
            "run.version": self.version,
            "run.wall_clock_s": round(self.wall_clock_s, 3),
        }
        for name, value in self.metrics.items():
            values[f"metric.{name}"] = float(value)
        return serialize_values(values)
