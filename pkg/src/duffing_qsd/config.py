"""Run configuration: flat dotted keys (TOML syntax), defaults and presets."""
from __future__ import annotations

import copy
from dataclasses import dataclass

import tomli

# key -> (type, default)
SCHEMA: dict[str, tuple[type, object]] = {
    "model.Gamma": (float, 0.125),
    "model.g": (float, 0.3),
    "model.Omega": (float, 1.0),
    "model.beta": (float, 1.0),
    "model.beta_list": (list, None),
    "integrator.steps_per_period": (int, 4096),
    "integrator.scheme": (str, "semi-implicit"),
    "integrator.recenter_threshold": (float, 1.0),
    "integrator.moving_frame": (bool, True),
    "integrator.cutoff": (int, 0),  # 0: choose per beta
    "integrator.leakage_bound": (float, 1e-6),
    "protocol.periods_total": (int, 600),
    "protocol.transient_periods": (int, 100),
    "protocol.fine_sample_per_period": (int, 32),
    "initial.alpha_re": (float, 0.7),
    "initial.alpha_im": (float, -0.2),
    "seeds.base": (int, 20070601),
    "seeds.trajectories": (int, 1),
    "outputs.directory": (str, "qsd_output"),
    "diagnostics.knot_count": (int, 24),
    "diagnostics.threshold_fraction": (float, 0.5),
    "diagnostics.low_band": (list, [0.0, 0.1]),
    "diagnostics.high_band": (list, [0.2, 0.5]),
    "diagnostics.order_threshold": (float, 1.0),
    "classical.q0": (float, 0.0),
    "classical.p0": (float, 0.0),
    "classical.periods": (int, 5000),
    "classical.transient_periods": (int, 100),
    "classical.renorm_steps": (int, 100),
    "oracle.cutoff": (int, 30),
    "oracle.trajectories": (int, 500),
    "oracle.periods": (int, 10),
    "oracle.checkpoints": (int, 10),
}

PRESETS: dict[str, dict[str, object]] = {
    "fig1": {"model.Gamma": 0.125, "model.g": 0.3, "model.Omega": 1.0, "model.beta_list": [0.01, 0.3, 1.0]},
    "fig3": {"model.Gamma": 0.3, "model.g": 0.3, "model.Omega": 1.0, "model.beta_list": [0.01, 0.3, 1.0]},
    # beta = 0.01 dropped to keep continuous-integration runtimes short
    "fig1-ci": {"model.Gamma": 0.125, "model.g": 0.3, "model.Omega": 1.0, "model.beta_list": [0.1, 0.3, 1.0]},
    "fig3-ci": {"model.Gamma": 0.3, "model.g": 0.3, "model.Omega": 1.0, "model.beta_list": [0.1, 0.3, 1.0]},
    "oracle": {"model.Gamma": 0.3, "model.g": 0.3, "model.Omega": 1.0, "model.beta": 1.0},
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    values: dict[str, object]

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def betas(self) -> list[float]:
        bl = self.values["model.beta_list"]
        return [float(b) for b in bl] if bl else [float(self.values["model.beta"])]

    @property
    def alpha(self) -> complex:
        return complex(self["initial.alpha_re"], self["initial.alpha_im"])

    def to_flat(self) -> dict[str, object]:
        return copy.deepcopy(self.values)

    def to_toml(self) -> str:
        lines = []
        for key in SCHEMA:
            v = self.values[key]
            if v is None:
                continue
            lines.append(f"{key} = {_toml_value(v)}")
        return "\n".join(lines) + "\n"


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return str(v)


def _flatten(d: dict, prefix: str = "") -> dict[str, object]:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key: str, value):
    kind, default = SCHEMA[key]
    if value is None and default is None:
        return None
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if kind is list:
        if not isinstance(value, list) or not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in value
        ):
            raise ConfigError(f"{key}: expected a list of numbers, got {value!r}")
        return [float(x) for x in value]
    raise AssertionError(kind)


def build_config(overrides: dict[str, object] | None = None, preset: str | None = None) -> RunConfig:
    values = {k: copy.deepcopy(d) for k, (_, d) in SCHEMA.items()}
    layers = []
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        layers.append(PRESETS[preset])
    if overrides:
        layers.append(overrides)
    for layer in layers:
        for key, value in layer.items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = _coerce(key, value)
    _validate(values)
    return RunConfig(values)


def parse_config(text: str, preset: str | None = None) -> RunConfig:
    """Parse dotted ``section.key = value`` lines; unknown keys are rejected."""
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return build_config(_flatten(data), preset)


def _validate(v: dict[str, object]) -> None:
    betas = v["model.beta_list"] or [v["model.beta"]]
    if any(b <= 0 for b in betas):
        raise ConfigError("beta must be > 0")
    if v["model.Omega"] <= 0:
        raise ConfigError("model.Omega must be > 0")
    if v["model.Gamma"] < 0:
        raise ConfigError("model.Gamma must be >= 0")
    if v["protocol.periods_total"] <= v["protocol.transient_periods"]:
        raise ConfigError("protocol.periods_total must exceed protocol.transient_periods")
    if v["seeds.trajectories"] < 1:
        raise ConfigError("seeds.trajectories must be >= 1")
    if not 0 <= v["seeds.base"] < 2**64:
        raise ConfigError("seeds.base must fit in an unsigned 64-bit integer")
    for key in ("diagnostics.low_band", "diagnostics.high_band"):
        if len(v[key]) != 2 or v[key][0] >= v[key][1]:
            raise ConfigError(f"{key} must be [low, high] with low < high")
