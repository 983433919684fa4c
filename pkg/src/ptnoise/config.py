"""JSON experiment configuration: parsing with defaults, validation, round-trip."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .encoder import EncoderConfig
from .errors import ConfigError, ConfigSyntax, InvalidValue, PtnoiseError, UnknownKey
from .instrumentation import CONFUSION_RUNS, DEFAULT_RATES, DEFAULT_SEEDS, PROBE_SIZE
from .losses import LossSpec
from .methods import MethodSpec, TrainConfig
from .upl import UplConfig
from .world import NoiseSpec, WorldConfig

# The six trainable strategies compared in the ablations.
DEFAULT_METHODS = (
    "PromptTuning",
    "ClassifierR",
    "ClassifierC",
    "TEncFT",
    "FullPromptTuning",
    "CLSTuning",
)


@dataclass(frozen=True)
class ExperimentConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    methods: tuple = tuple(MethodSpec(k) for k in DEFAULT_METHODS)
    noise: tuple = tuple(NoiseSpec("random", r) for r in DEFAULT_RATES)
    losses: tuple = (LossSpec("CE"),)
    train: TrainConfig = field(default_factory=TrainConfig)
    upl: UplConfig | None = None
    output_dir: str = "out"
    seeds: tuple = DEFAULT_SEEDS
    probe_size: int = PROBE_SIZE
    confusion_runs: int = CONFUSION_RUNS

    def to_dict(self):
        """Plain-JSON form; ``parse_config(json.dumps(cfg.to_dict()))`` gives ``cfg`` back."""
        train = self.train.to_dict()
        del train["loss"], train["seed"]  # set per cell from ``losses`` and ``seeds``
        world = self.world.to_dict()
        del world["seed"]
        noise = []
        for n in self.noise:
            d = n.to_dict()
            if n.confusion_matrix is not None:
                d["confusion_matrix"] = [list(r) for r in n.confusion_matrix]
            noise.append(d)
        return {
            "world": world,
            "methods": [m.to_dict() for m in self.methods],
            "noise": noise,
            "losses": [x.to_dict() for x in self.losses],
            "train": train,
            "upl": None if self.upl is None else self.upl.to_dict(),
            "output_dir": self.output_dir,
            "seeds": list(self.seeds),
            "probe_size": self.probe_size,
            "confusion_runs": self.confusion_runs,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


# -- field checking -----------------------------------------------------------


def _obj(doc, path, allowed):
    if not isinstance(doc, dict):
        raise InvalidValue(path or "config", "a JSON object")
    for k in doc:
        if k not in allowed:
            raise UnknownKey(f"{path}.{k}" if path else k)
    return doc


def _int(v, path):
    if isinstance(v, bool) or not isinstance(v, int):
        raise InvalidValue(path, "an integer")
    return v


def _num(v, path):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise InvalidValue(path, "a number")
    return float(v)


def _str(v, path):
    if not isinstance(v, str):
        raise InvalidValue(path, "a string")
    return v


def _list(v, path):
    if not isinstance(v, list):
        raise InvalidValue(path, "a list")
    if not v:
        raise InvalidValue(path, "a non-empty list")
    return v


def _build(cls, path, **kwargs):
    """Construct ``cls`` and re-tag its own validation errors with ``path``."""
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except PtnoiseError as exc:
        raise InvalidValue(path, str(exc)) from exc


def _fields(doc, path, spec):
    """Pick the keys of ``doc`` present in ``spec`` ({name: checker}) and check them."""
    _obj(doc, path, spec)
    return {k: spec[k](v, f"{path}.{k}" if path else k) for k, v in doc.items()}


def _opt(check):
    return lambda v, p: None if v is None else check(v, p)


def _encoder(doc, path):
    kw = _fields(doc, path, {
        "token_dim": _int, "embed_dim": _int, "context_len": _int,
        "hidden_width": _opt(_int), "temperature": _num,
    })
    return _build(EncoderConfig, path, **kw)


def _world(doc, path="world"):
    kw = _fields(doc, path, {
        "class_count": _int, "shots_per_class": _int, "test_per_class": _int,
        "pool_per_class": _int, "image_noise_std": _num, "prompt_std": _num,
        "encoder": _encoder,
    })
    return _build(WorldConfig, path, **kw)


def _method(doc, path):
    if isinstance(doc, str):
        doc = {"kind": doc}
    kw = _fields(doc, path, {"kind": _str, "context_len": _opt(_int)})
    return _build(MethodSpec, path, **kw)


def _matrix(v, path):
    rows = _list(v, path)
    return tuple(tuple(_num(x, f"{path}[{i}]") for x in _list(r, f"{path}[{i}]")) for i, r in enumerate(rows))


def _noise(doc, path):
    kw = _fields(doc, path, {"kind": _str, "rate": _num, "confusion_matrix": _opt(_matrix)})
    return _build(NoiseSpec, path, **kw)


def _loss(doc, path):
    if isinstance(doc, str):
        doc = {"kind": doc}
    kw = _fields(doc, path, {
        "kind": _str, "q": _num, "alpha": _opt(_num), "beta": _opt(_num), "clip": _num,
    })
    return _build(LossSpec, path, **kw)


def _train(doc, path="train"):
    kw = _fields(doc, path, {"epochs": _int, "batch_size": _int, "lr": _num, "momentum": _num})
    return _build(TrainConfig, path, **kw)


def _upl(doc, path="upl"):
    kw = _fields(doc, path, {
        "per_class": _int, "selection": _str, "loss": _loss, "ensemble_size": _int, "seed": _int,
    })
    return _build(UplConfig, path, **kw)


def _items(v, path, each):
    return tuple(each(x, f"{path}[{i}]") for i, x in enumerate(_list(v, path)))


_TOP = {
    "world": _world,
    "methods": lambda v, p: _items(v, p, _method),
    "noise": lambda v, p: _items(v, p, _noise),
    "losses": lambda v, p: _items(v, p, _loss),
    "train": _train,
    "upl": _opt(_upl),
    "output_dir": _str,
    "seeds": lambda v, p: _items(v, p, _int),
    "probe_size": _int,
    "confusion_runs": _int,
}


def config_from_dict(doc) -> ExperimentConfig:
    kw = _fields(doc, "", _TOP)
    cfg = ExperimentConfig(**kw)
    if cfg.probe_size < 1:
        raise InvalidValue("probe_size", ">= 1")
    if cfg.confusion_runs < 1:
        raise InvalidValue("confusion_runs", ">= 1")
    if not cfg.output_dir:
        raise InvalidValue("output_dir", "a non-empty path")
    return cfg


def parse_config(text) -> ExperimentConfig:
    """Parse a JSON document; every missing field takes its default."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigSyntax(exc.msg, exc.lineno, exc.colno) from None
    return config_from_dict(doc)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())
