"""Run configuration: INI-style files with strict, schema-checked keys.

Sections: [problem], [run], [train], [experiments.adversarial],
[experiments.doa], [experiments.dose], [experiments.envelope].  Unknown
sections or keys are hard errors; a misspelled hyperparameter must never
be silently ignored.  A minimal file needs only

    [problem]
    name = double_integrator

and inherits the per-problem reproduction defaults.  The environment
variable LNODEC_SEED overrides every configured seed.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, replace

from .losses import MODE_LYAPUNOV
from .train import TrainConfig

ENV_SEED = "LNODEC_SEED"


class ParseError(ValueError):
    """Malformed configuration file (carries a line number when known)."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(ValueError):
    """Structurally valid file that violates an invariant."""


@dataclass(frozen=True)
class AdversarialConfig:
    n_points: int = 100
    radius: float = 0.1
    gamma: int | None = None   # None: reuse the training grid


@dataclass(frozen=True)
class DoaConfig:
    x1_min: float = -0.25
    x1_max: float = 1.25
    x2_min: float = -0.5
    x2_max: float = 0.5
    n1: int = 31
    n2: int = 21
    tol: float = 0.1
    gamma: int | None = None


@dataclass(frozen=True)
class DoseConfig:
    n_points: int = 50
    radius: float = 5.0
    target_cem: float = 1.5
    gamma: int | None = None


@dataclass(frozen=True)
class EnvelopeConfig:
    t_start: float = 0.4
    tol_rel: float = 1e-3


@dataclass(frozen=True)
class RunSpec:
    problem: str
    train: TrainConfig
    adversarial: AdversarialConfig = field(default_factory=AdversarialConfig)
    doa: DoaConfig = field(default_factory=DoaConfig)
    dose: DoseConfig = field(default_factory=DoseConfig)
    envelope: EnvelopeConfig = field(default_factory=EnvelopeConfig)
    out_dir: str = "runs/out"
    seed: int = 0


def problem_defaults(name: str) -> TrainConfig:
    """Reproduction hyperparameters per preset (M=400, Gamma=500,
    alpha=0.025, kappa=5; beta=5 for the double integrator, 50 for plasma,
    where the penalty is on by default)."""
    if name == "double_integrator":
        return TrainConfig()
    if name == "plasma":
        return TrainConfig(beta=50.0, constrained=True)
    raise ValidationError(f"unknown problem preset '{name}'")


def _parse_bool(raw: str, key: str) -> bool:
    v = raw.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"key '{key}' expects a boolean, got '{raw}'")


def _parse_hidden(raw: str, key: str) -> tuple:
    try:
        return tuple(int(tok) for tok in raw.replace(",", " ").split())
    except ValueError:
        raise ValidationError(f"key '{key}' expects a list of ints, got '{raw}'") from None


def _convert(raw: str, kind, key: str):
    if kind is bool:
        return _parse_bool(raw, key)
    if kind is tuple:
        return _parse_hidden(raw, key)
    if kind is str:
        return raw.strip()
    try:
        return kind(raw)
    except ValueError:
        raise ValidationError(
            f"key '{key}' expects {kind.__name__}, got '{raw}'") from None


_SCHEMA = {
    "problem": {"name": str},
    "run": {"out_dir": str, "seed": int},
    "train": {
        "M": int, "gamma": int, "alpha": float, "kappa": float, "beta": float,
        "mode": str, "constrained": bool, "seed": int, "grad_engine": str,
        "dt_weighted": bool, "optimizer": str, "hidden": tuple,
    },
    "experiments.adversarial": {"n_points": int, "radius": float, "gamma": int},
    "experiments.doa": {
        "x1_min": float, "x1_max": float, "x2_min": float, "x2_max": float,
        "n1": int, "n2": int, "tol": float, "gamma": int,
    },
    "experiments.dose": {"n_points": int, "radius": float,
                         "target_cem": float, "gamma": int},
    "experiments.envelope": {"t_start": float, "tol_rel": float},
}


def parse_config(path) -> RunSpec:
    """Parse and validate a run configuration file."""
    if not os.path.exists(path):
        raise ParseError(f"config file not found: {path}")
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        with open(path) as f:
            cp.read_file(f, source=str(path))
    except configparser.Error as e:
        line = getattr(e, "lineno", None)
        raise ParseError(str(e), line=line) from None

    values: dict[str, dict] = {}
    for section in cp.sections():
        if section not in _SCHEMA:
            known = ", ".join(sorted(_SCHEMA))
            raise ValidationError(
                f"unknown section [{section}] (known: {known})")
        schema = _SCHEMA[section]
        values[section] = {}
        for key, raw in cp.items(section):
            if key not in schema:
                known = ", ".join(sorted(schema))
                raise ValidationError(
                    f"unknown key '{key}' in [{section}] (known: {known})")
            values[section][key] = _convert(raw, schema[key], key)

    if "problem" not in values or "name" not in values["problem"]:
        raise ValidationError("config must set name in a [problem] section")
    problem = values["problem"]["name"]

    train = problem_defaults(problem)
    try:
        train = train.replace(**values.get("train", {}))
    except ValueError as e:
        raise ValidationError(str(e)) from None

    seed = train.seed
    if "run" in values and "seed" in values["run"]:
        seed = values["run"]["seed"]
    env_seed = os.environ.get(ENV_SEED)
    if env_seed is not None:
        try:
            seed = int(env_seed)
        except ValueError:
            raise ValidationError(f"{ENV_SEED} must be an integer, got '{env_seed}'") from None
    train = train.replace(seed=seed)

    def block(cls, section):
        try:
            return cls(**values.get(section, {}))
        except TypeError as e:
            raise ValidationError(f"[{section}]: {e}") from None

    adversarial = block(AdversarialConfig, "experiments.adversarial")
    doa = block(DoaConfig, "experiments.doa")
    dose = block(DoseConfig, "experiments.dose")
    envelope = block(EnvelopeConfig, "experiments.envelope")
    if not adversarial.radius >= 0:
        raise ValidationError("adversarial radius must be nonnegative")
    if not envelope.tol_rel >= 0:
        raise ValidationError("envelope tol_rel must be nonnegative")

    out_dir = values.get("run", {}).get("out_dir", "runs/out")
    return RunSpec(problem=problem, train=train, adversarial=adversarial,
                   doa=doa, dose=dose, envelope=envelope, out_dir=out_dir,
                   seed=seed)


def spec_to_dict(spec: RunSpec) -> dict:
    """Plain-dict view of a RunSpec for manifests."""
    from dataclasses import asdict
    d = asdict(spec)
    d["train"]["hidden"] = list(spec.train.hidden)
    return d
