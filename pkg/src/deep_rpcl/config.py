"""Run configuration: flat ``key = value`` files with optional per-command
sections, plus ``--set key=value`` overrides.

Precedence, lowest first: built-in defaults, unsectioned file keys, the
``[command]`` section, command-line overrides.
"""

import difflib
from dataclasses import dataclass, field

from .embed_net import TrainConfig
from .margin_losses import CenterLossState, MarginConfig
from .rpcl_cluster import RpclParams

COMMANDS = ("gen", "train", "eval", "cluster", "compare")


class ConfigError(ValueError):
    pass


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _ints(text):
    text = str(text).strip()
    return [int(v) for v in text.split(",") if v.strip()] if text else []


def _opt_float(text):
    return None if str(text).strip().lower() in ("", "auto", "none") else float(text)


# key -> (parser, default)
SCHEMA = {
    "seed": (int, 0),
    "out": (str, "out"),
    # generation
    "n_classes": (int, 8),
    "per_class": (int, 500),
    "test_per_class": (int, 100),
    "dim": (int, 2),
    "spread": (float, 0.05),
    "noise_sigma": (float, 0.3),
    "min_angle": (float, 15.0),
    "normalize": (_bool, False),
    # model / training
    "data": (str, ""),
    "gallery": (str, ""),
    "checkpoint": (str, ""),
    "hidden": (_ints, [64]),
    "embed_dim": (int, 2),
    "activation": (str, "relu"),
    "variant": (str, "rpcl_cos"),
    "variants": (str, "cos,rpcl_cos"),
    "s": (float, 30.0),
    "margin": (_opt_float, None),
    "gamma": (_opt_float, None),
    "epochs": (int, 50),
    "batch_size": (int, 128),
    "lr0": (float, 0.1),
    "decay_every": (int, 10),
    "decay_factor": (float, 10.0),
    "optimizer": (str, "adam"),
    "momentum": (float, 0.9),
    "center_loss": (_bool, False),
    "beta_c": (float, 0.008),
    "gamma_c": (float, 0.002),
    "alpha": (float, 0.5),
    # evaluation
    "n_pos": (int, 3000),
    "n_neg": (int, 3000),
    "max_k": (int, 0),
    # clustering
    "k_init": (int, 5),
    "eta": (float, 0.05),
    "rpcl_gamma": (float, 0.1),
    "rpcl_epochs": (int, 200),
    "tol": (float, 1e-4),
    "expel_radius_factor": (float, 3.0),
    "anneal": (_bool, True),
    "rpcl_init": (str, "kmeans++"),
}


@dataclass
class RunConfig:
    command: str
    values: dict
    origin: dict = field(default_factory=dict)  # key -> where the value came from

    def __getitem__(self, key):
        return self.values[key]

    def __getattr__(self, key):
        try:
            return self.__dict__["values"][key]
        except KeyError:
            raise AttributeError(key) from None

    def margin_config(self, variant=None):
        return MarginConfig(variant or self.variant, s=self.s, m=self.margin, gamma=self.gamma)

    def train_config(self):
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, lr0=self.lr0,
            decay_every=self.decay_every, decay_factor=self.decay_factor,
            optimizer=self.optimizer, momentum=self.momentum, seed=self.seed,
        )

    def center_state(self, n_classes, dim):
        if not self.center_loss:
            return None
        return CenterLossState.zeros(n_classes, dim, beta_c=self.beta_c, gamma_c=self.gamma_c, alpha=self.alpha)

    def rpcl_params(self):
        return RpclParams(
            eta=self.eta, gamma=self.rpcl_gamma, epochs=self.rpcl_epochs, tol=self.tol,
            expel_radius_factor=self.expel_radius_factor, anneal=self.anneal, init=self.rpcl_init,
        )

    def echo(self):
        """``key = value`` lines in schema order; enough to rerun the command."""
        lines = [f"# command: {self.command}"]
        for key in SCHEMA:
            v = self.values[key]
            if isinstance(v, list):
                v = ",".join(str(x) for x in v)
            elif v is None:
                v = "auto"
            elif isinstance(v, bool):
                v = str(v).lower()
            lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"


def _unknown(key, where):
    hint = difflib.get_close_matches(key, SCHEMA, n=1)
    extra = f"; did you mean '{hint[0]}'?" if hint else ""
    return ConfigError(f"{where}: unknown key '{key}'{extra}")


def _coerce(key, raw, where):
    parse, _ = SCHEMA[key]
    try:
        return parse(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: key '{key}': {exc}") from None


def read_config_file(path, command):
    """Entries that apply to ``command``: ``{key: (raw, 'path:line')}``."""
    entries = {}
    section = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            where = f"{path}:{lineno}"
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if text.startswith("[") and text.endswith("]"):
                section = text[1:-1].strip()
                if section not in COMMANDS:
                    raise ConfigError(f"{where}: unknown section [{section}]")
                continue
            if "=" not in text:
                raise ConfigError(f"{where}: expected 'key = value'")
            key, raw = (t.strip() for t in text.split("=", 1))
            if key not in SCHEMA:
                raise _unknown(key, where)
            _coerce(key, raw, where)
            if section is None or section == command:
                entries.setdefault(section is not None, {})[key] = (raw, where)
    merged = dict(entries.get(False, {}))
    merged.update(entries.get(True, {}))
    return merged


def parse_config(command, path=None, overrides=(), seed=None, out=None):
    if command not in COMMANDS:
        raise ConfigError(f"unknown command '{command}'")
    values = {k: d for k, (_, d) in SCHEMA.items()}
    origin = {k: "default" for k in SCHEMA}
    if path:
        for key, (raw, where) in read_config_file(path, command).items():
            values[key] = _coerce(key, raw, where)
            origin[key] = where
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set {item}: expected key=value")
        key, raw = (t.strip() for t in item.split("=", 1))
        if key not in SCHEMA:
            raise _unknown(key, f"--set {item}")
        values[key] = _coerce(key, raw, f"--set {item}")
        origin[key] = "--set"
    if seed is not None:
        values["seed"], origin["seed"] = int(seed), "--seed"
    if out is not None:
        values["out"], origin["out"] = out, "--out"
    cfg = RunConfig(command, values, origin)
    validate(cfg)
    return cfg


def validate(cfg):
    """Rebuild every wrapped type so its own constraints are checked now."""

    def check(keys, build):
        try:
            return build()
        except (ValueError, TypeError) as exc:
            where = ", ".join(f"{k} ({cfg.origin[k]})" for k in keys)
            raise ConfigError(f"{where}: {exc}") from None

    variants = [cfg.variant]
    if cfg.command == "compare":
        variants = [v.strip() for v in cfg.variants.split(",") if v.strip()]
        if len(variants) != 2:
            raise ConfigError(f"variants ({cfg.origin['variants']}): compare needs exactly two variants")
    for v in variants:
        check(["variant", "s", "margin", "gamma"], lambda: cfg.margin_config(v))
    check(["epochs", "batch_size", "lr0", "decay_every", "decay_factor", "optimizer"], cfg.train_config)
    check(["beta_c", "gamma_c", "alpha"],
          lambda: CenterLossState(None, cfg.beta_c, cfg.gamma_c, cfg.alpha))
    check(["eta", "rpcl_gamma", "rpcl_epochs", "tol", "expel_radius_factor", "rpcl_init"], cfg.rpcl_params)
    if cfg.activation not in ("relu", "tanh", "none"):
        raise ConfigError(f"activation ({cfg.origin['activation']}): must be relu, tanh or none")
    for key in ("n_classes", "per_class", "test_per_class", "dim", "embed_dim", "k_init"):
        if cfg[key] < 1:
            raise ConfigError(f"{key} ({cfg.origin[key]}): must be positive")
    if any(h < 1 for h in cfg.hidden):
        raise ConfigError(f"hidden ({cfg.origin['hidden']}): layer widths must be positive")
    for key in ("spread", "noise_sigma", "n_pos", "n_neg", "max_k"):
        if cfg[key] < 0:
            raise ConfigError(f"{key} ({cfg.origin[key]}): must be non-negative")
    need = {"train": ["data"], "eval": ["data", "checkpoint"], "cluster": ["data"]}
    for key in need.get(cfg.command, []):
        if not cfg[key]:
            raise ConfigError(f"{cfg.command} requires '{key}'")
