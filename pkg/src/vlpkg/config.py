"""Run configuration: defaults, config-file parsing, validation.

Config files are flat UTF-8 ``key = value`` lines with ``#`` comments.
Keys are the CLI flag names (without the leading dashes); a flag given on
the command line overrides the file value. Unknown keys are errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .models import ModelKind
from .sampling import SamplerConfig

MODES = ("hlp", "vlp")
EVAL_MODES = ("combined-f", "fg-only", "fc-only")


class ConfigError(Exception):
    """One or more invalid configuration values; message lists them all."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class TrainConfig:
    dataset: str = ""
    model: str = "rotate"
    mode: str = "vlp"            # hlp: plain triple scores; vlp: + references
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    dim: int = 100
    batch: int = 256
    lr: float = 1e-3
    steps: int = 10000
    gamma: float = 6.0
    lam: float = 0.5             # weight of f_g inside the combined score
    alpha: float = 0.5           # weight of L2 in the total loss
    refs: int = 8
    cap: int = 8
    seed: int = 0
    threads: int = 1
    out: str = "run"
    norm: str = "l2"             # transe distance norm
    eval_every: int = 500
    postweight_score: str = "fg" # score feeding the post-weights: fg or f

    def validate(self):
        errors = []
        if self.model not in [k.value for k in ModelKind]:
            errors.append(f"model must be one of "
                          f"{[k.value for k in ModelKind]}, got {self.model!r}")
        if self.mode not in MODES:
            errors.append(f"mode must be one of {MODES}, got {self.mode!r}")
        errors.extend(self.sampler.validate())
        if self.dim < 1:
            errors.append("dim must be >= 1")
        if self.batch < 1:
            errors.append("batch must be >= 1")
        if self.lr <= 0:
            errors.append("lr must be > 0")
        if self.steps < 0:
            errors.append("steps must be >= 0")
        if self.gamma <= 0:
            errors.append("gamma must be > 0")
        if self.lam < 0:
            errors.append("lambda must be >= 0")
        if self.alpha < 0:
            errors.append("alpha must be >= 0")
        if self.refs < 0 or self.refs > 254:
            errors.append("refs must be in [0, 254]")
        if not 1 <= self.cap <= 255:
            errors.append("cap must be in [1, 255]")
        if self.threads < 1:
            errors.append("threads must be >= 1")
        if self.eval_every < 0:
            errors.append("eval-every must be >= 0")
        if self.norm not in ("l1", "l2"):
            errors.append("norm must be l1 or l2")
        if self.postweight_score not in ("fg", "f"):
            errors.append("postweight-score must be fg or f")
        return errors

    def validated(self):
        errors = self.validate()
        if errors:
            raise ConfigError(errors)
        return self

    @property
    def eval_mode(self):
        """Score used for in-training validation and default evaluation."""
        return "combined-f" if self.mode == "vlp" else "fg-only"

    def to_items(self):
        """(key, value) pairs in config-file syntax, sorted by key."""
        s = self.sampler
        items = {
            "dataset": self.dataset, "model": self.model, "mode": self.mode,
            "sampler": s.mode, "dim": self.dim, "batch": self.batch,
            "lr": self.lr, "steps": self.steps, "gamma": self.gamma,
            "lambda": self.lam, "alpha": self.alpha, "alpha0": s.alpha0,
            "alpha1": s.alpha1, "alpha2": s.alpha2, "tau": s.tau,
            "negs": s.n_negatives, "refs": self.refs, "cap": self.cap,
            "seed": self.seed, "threads": self.threads, "out": self.out,
            "norm": self.norm, "eval-every": self.eval_every,
            "postweight-score": self.postweight_score,
            "no-pre": not s.use_pre, "no-post": not s.use_post,
        }
        return sorted((k, _render(v)) for k, v in items.items())


def _render(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


_INT_KEYS = {"dim", "batch", "steps", "negs", "refs", "cap", "seed",
             "threads", "eval-every"}
_FLOAT_KEYS = {"lr", "gamma", "lambda", "alpha", "alpha0", "alpha1",
               "alpha2", "tau"}
_STR_KEYS = {"dataset", "model", "mode", "sampler", "out", "norm",
             "postweight-score"}
_BOOL_KEYS = {"no-pre", "no-post"}

CONFIG_KEYS = _INT_KEYS | _FLOAT_KEYS | _STR_KEYS | _BOOL_KEYS

# sweep grids may use the paper-style axis name for the reference count
KEY_ALIASES = {"n": "refs"}


def canonical_key(key):
    key = key.strip().lower().replace("_", "-")
    return KEY_ALIASES.get(key, key)


def parse_value(key, text):
    text = text.strip()
    try:
        if key in _INT_KEYS:
            return int(text)
        if key in _FLOAT_KEYS:
            return float(text)
        if key in _BOOL_KEYS:
            low = text.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
    except ValueError as exc:
        raise ConfigError([f"bad value for {key}: {exc}"]) from None
    return text


def parse_config_file(path):
    """Read ``key = value`` lines into a {canonical key: parsed value} dict."""
    values = {}
    problems = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                problems.append(f"{path}:{line_no}: expected key = value")
                continue
            raw_key, raw_value = line.split("=", 1)
            key = canonical_key(raw_key)
            if key not in CONFIG_KEYS:
                problems.append(f"{path}:{line_no}: unknown key {raw_key.strip()!r}")
                continue
            try:
                values[key] = parse_value(key, raw_value)
            except ConfigError as exc:
                problems.extend(f"{path}:{line_no}: {p}" for p in exc.problems)
    if problems:
        raise ConfigError(problems)
    return values


def apply_values(cfg, values):
    """Overlay a {key: value} dict onto a TrainConfig, returning a new one."""
    cfg = replace(cfg, sampler=replace(cfg.sampler))
    direct = {
        "dataset": "dataset", "model": "model", "mode": "mode", "dim": "dim",
        "batch": "batch", "lr": "lr", "steps": "steps", "gamma": "gamma",
        "lambda": "lam", "alpha": "alpha", "refs": "refs", "cap": "cap",
        "seed": "seed", "threads": "threads", "out": "out", "norm": "norm",
        "eval-every": "eval_every", "postweight-score": "postweight_score",
    }
    unknown = [k for k in values if k not in CONFIG_KEYS]
    if unknown:
        raise ConfigError([f"unknown key {k!r}" for k in unknown])
    for key, value in values.items():
        if key in direct:
            setattr(cfg, direct[key], value)
        elif key == "sampler":
            cfg.sampler.mode = value
        elif key == "alpha0":
            cfg.sampler.alpha0 = value
        elif key == "alpha1":
            cfg.sampler.alpha1 = value
        elif key == "alpha2":
            cfg.sampler.alpha2 = value
        elif key == "tau":
            cfg.sampler.tau = value
        elif key == "negs":
            cfg.sampler.n_negatives = value
        elif key == "no-pre":
            cfg.sampler.use_pre = not value
        elif key == "no-post":
            cfg.sampler.use_post = not value
    return cfg


def build_config(file_values=None, cli_values=None):
    """defaults <- config file <- command line, then validate."""
    cfg = TrainConfig()
    if file_values:
        cfg = apply_values(cfg, file_values)
    if cli_values:
        cfg = apply_values(cfg, cli_values)
    return cfg.validated()


# Default sweep grids (the standard search space).
DEFAULT_SEARCH_SPACE = {
    "batch": [256, 512, 1024],
    "dim": [500, 1000],
    "gamma": [4.0, 6.0, 8.0, 11.0, 15.0],
    "lambda": [0.1, 0.3, 0.5, 0.7, 0.9],
    "alpha": [0.1, 0.5, 1.0, 1.5],
    "alpha0": [0.1, 0.5, 1.0, 1.5],
    "alpha1": [0.1, 0.5, 1.0, 1.5],
    "alpha2": [0.1, 0.5, 1.0, 1.5],
}
