"""Run configuration: flat ``key = value`` text with one section per concern.

Example::

    [run]
    seed = 0
    [data]
    triples = triples.tsv
    features = semantic.hhkf
    labels = labels.tsv
    [train]
    max_epochs = 500
    mode = full

Relative paths resolve against the directory holding the config file.
Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .fusion import MODES, ModelConfig
from .train import TrainConfig


class ConfigError(ValueError):
    """Malformed or unknown configuration (usage error)."""


def _bool(v):
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _ints(v):
    return tuple(int(x) for x in str(v).replace(",", " ").split())


def _strs(v):
    return tuple(x for x in str(v).replace(",", " ").split())


# section -> key -> (parser, default); "path" / "paths" mark file references
SCHEMA = {
    "run": {
        "seed": (int, 0),
        "jobs": (int, 1),
        "out": ("path", "out"),
    },
    "data": {
        "triples": ("paths", ()),
        "node_types": ("path", None),
        "features": ("path", None),
        "labels": ("path", None),
        "hypergraph": ("path", None),
        "grouping": (str, "relation_item"),
        "k_folds": (int, 3),
        "ratios": (_ints, (7, 1, 2)),
    },
    "train": {
        "lr": (float, 0.005),
        "weight_decay": (float, 5e-4),
        "max_epochs": (int, 10000),
        "patience": (int, 2000),
        "contrastive_batch": (int, 2000),
        "alpha": (float, 0.1),
        "beta": (float, 0.2),
        "use_contrastive": (_bool, True),
        "use_unimodal": (_bool, True),
        "mode": (str, "full"),
        "hidden": (int, 20),
        "struct_heads": (int, 4),
        "sem_heads": (int, 4),
        "struct_layers": (int, 1),
        "sem_layers": (int, 1),
        "type_dim": (int, 16),
        "dropout": (float, 0.3),
        "chunk_size": (int, 2000),
        "eta1": (float, 0.3),
        "learn_eta": (_bool, True),
        "tau": (float, 0.5),
        "learn_tau": (_bool, True),
        "raw_dot": (_bool, False),
        "ffn_on_attended": (_bool, False),
        "dtype": (str, "float32"),
    },
    "eval": {
        "checkpoint": ("path", None),
        "split": (str, "test"),
        "ks": (_ints, (20, 50, 100, 200)),
    },
    "bench": {
        "random": (_bool, True),
        "n_nodes": (int, 512),
        "n_edges": (int, 256),
        "density": (float, 0.01),
        "d_semantic": (int, 16),
        "modes": (_strs, ("dense", "sparse")),
        "chunk_sweep": (_ints, (10, 100, 1000)),
        "repeats": (int, 3),
    },
    "synth": {
        "n_users": (int, 200),
        "n_items": (int, 100),
        "n_relations": (int, 5),
        "avg_degree": (float, 5.0),
        "d_semantic": (int, 16),
        "noise": (float, 0.1),
    },
}

MODEL_KEYS = ("mode", "hidden", "struct_heads", "sem_heads", "struct_layers", "sem_layers",
              "type_dim", "dropout", "chunk_size", "eta1", "learn_eta", "tau", "learn_tau",
              "raw_dot", "ffn_on_attended", "dtype")


@dataclass
class RunConfig:
    sections: dict = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path.cwd)

    def __getitem__(self, section):
        return self.sections[section]

    def get(self, section, key):
        return self.sections[section][key]

    def train_config(self) -> TrainConfig:
        t = self.sections["train"]
        model = ModelConfig(**{k: t[k] for k in MODEL_KEYS})
        rest = {k: v for k, v in t.items() if k not in MODEL_KEYS}
        return TrainConfig(seed=self.sections["run"]["seed"], model=model, **rest)

    def echo(self, sections=None) -> str:
        """``key = value`` text of the resolved settings (output dir excluded)."""
        lines = []
        for name in sections or SCHEMA:
            lines.append(f"[{name}]")
            for key, value in self.sections[name].items():
                if (name, key) == ("run", "out"):
                    continue
                lines.append(f"{key} = {_fmt(value, self.base_dir)}")
        return "\n".join(lines) + "\n"

    def write(self, path):
        Path(path).write_text(self.echo(), encoding="utf-8")


def _fmt(value, base):
    if isinstance(value, Path):
        try:
            return str(value.relative_to(base))
        except ValueError:
            return str(value)
    if isinstance(value, tuple):
        return ", ".join(_fmt(v, base) for v in value)
    if value is None:
        return ""
    return str(value)


def _parse_value(section, key, raw, base):
    kind, _ = SCHEMA[section][key]
    raw = raw.strip()
    try:
        if kind == "path":
            return (base / raw) if raw else None
        if kind == "paths":
            return tuple(base / p for p in _strs(raw))
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from None


def defaults() -> dict:
    out = {}
    for section, keys in SCHEMA.items():
        out[section] = {}
        for key, (kind, default) in keys.items():
            if kind == "path" and default is not None:
                default = Path(default)
            out[section][key] = default
    return out


def load_config(path=None, text=None) -> RunConfig:
    """Parse a config file (or ``text``) over the defaults."""
    sections = defaults()
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        text = path.read_text(encoding="utf-8")
        base = path.resolve().parent
    if text:
        parser = configparser.ConfigParser(interpolation=None, default_section="__none__",
                                           inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc).splitlines()[0]) from None
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]")
            for key, raw in parser.items(section):
                if key not in SCHEMA[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                sections[section][key] = _parse_value(section, key, raw, base)
    if sections["run"]["out"] is not None and not Path(sections["run"]["out"]).is_absolute():
        sections["run"]["out"] = Path.cwd() / sections["run"]["out"]
    cfg = RunConfig(sections, base)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig):
    t = cfg["train"]
    if t["mode"] not in MODES:
        raise ConfigError(f"[train] mode must be one of {MODES}, got {t['mode']!r}")
    if cfg["data"]["grouping"] not in ("relation", "relation_item"):
        raise ConfigError("[data] grouping must be 'relation' or 'relation_item'")
    if cfg["eval"]["split"] not in ("train", "val", "test"):
        raise ConfigError("[eval] split must be train, val or test")
    if len(cfg["data"]["ratios"]) != 3:
        raise ConfigError("[data] ratios needs three integers")
    if cfg["run"]["jobs"] < 1:
        raise ConfigError("[run] jobs must be >= 1")
    try:
        cfg.train_config()
    except ValueError as exc:
        raise ConfigError(f"[train] {exc}") from None


def require_paths(cfg: RunConfig, keys):
    """Check that every ``(section, key)`` names existing files before work starts."""
    for section, key in keys:
        value = cfg[section][key]
        if value is None or value == ():
            raise ConfigError(f"[{section}] {key} is required for this command")
        for p in value if isinstance(value, tuple) else (value,):
            if not Path(p).is_file():
                raise FileNotFoundError(f"[{section}] {key}: file not found: {p}")
