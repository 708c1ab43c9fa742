"""Plain-text run configuration.

INI files with up to four sections: [vehicle] keys are exactly the
VehicleParams field names (vectors as whitespace- or comma-separated
numbers), [controller], [downwash] and [training] hold optional overrides
of the corresponding defaults.  Two vehicle presets ship with the package.
"""

import configparser
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

import numpy as np

from .controller import ControllerGains
from .disturbances import DownwashParams
from .ppo import TrainConfig
from .sim import VehicleParams

PRESET_NAMES = ("small_quad", "large_quad")

DEFAULT_CONFIG_NAME = "proxfly.conf"

_VECTOR_KEYS = {"inertia_diag": 3, "per_propeller_thrust_factors": 4}
_VEHICLE_OPTIONAL = frozenset(["per_propeller_thrust_factors"])


class ConfigError(ValueError):
    """Invalid or incomplete configuration; the message names the key."""


@dataclass
class RunSettings:
    """Everything a run needs, resolved from file plus defaults."""

    vehicle: VehicleParams | None
    gains: ControllerGains
    downwash: DownwashParams
    training: TrainConfig
    source: str


def _parse_vector(key, raw, size):
    parts = raw.replace(",", " ").split()
    try:
        values = np.array([float(p) for p in parts])
    except ValueError:
        raise ConfigError(f"key 'vehicle.{key}': expected numbers, got {raw!r}") from None
    if values.size != size:
        raise ConfigError(f"key 'vehicle.{key}': expected {size} values, got {values.size}")
    return values


def parse_vehicle(section):
    """Vehicle parameters from a config section; every scalar key required."""
    names = [f.name for f in fields(VehicleParams)]
    for key in section:
        if key not in names:
            raise ConfigError(f"unknown key 'vehicle.{key}'")
    kwargs = {}
    for key in names:
        if key not in section:
            if key in _VEHICLE_OPTIONAL:
                continue
            raise ConfigError(f"missing key 'vehicle.{key}'")
        raw = section[key]
        if key in _VECTOR_KEYS:
            kwargs[key] = _parse_vector(key, raw, _VECTOR_KEYS[key])
        else:
            try:
                kwargs[key] = float(raw)
            except ValueError:
                raise ConfigError(
                    f"key 'vehicle.{key}': expected a number, got {raw!r}"
                ) from None
    return VehicleParams(**kwargs)


def _parse_overrides(section, default, section_name):
    """Typed overrides of a defaults dataclass; unknown keys rejected."""
    by_name = {f.name: getattr(default, f.name) for f in fields(type(default))}
    kwargs = {}
    for key, raw in section.items():
        if key not in by_name:
            raise ConfigError(f"unknown key '{section_name}.{key}'")
        current = by_name[key]
        try:
            if isinstance(current, bool):
                kwargs[key] = section.getboolean(key)
            elif isinstance(current, int):
                kwargs[key] = int(raw)
            elif isinstance(current, float):
                kwargs[key] = float(raw)
            else:
                kwargs[key] = raw
        except ValueError:
            raise ConfigError(
                f"key '{section_name}.{key}': expected {type(current).__name__}, got {raw!r}"
            ) from None
    return type(default)(**{**by_name, **kwargs})


def load_config(path):
    """Parse one INI file into RunSettings; absent sections keep defaults."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    except configparser.Error as err:
        raise ConfigError(f"malformed config {path}: {err}") from None
    known = {"vehicle", "controller", "downwash", "training"}
    for name in parser.sections():
        if name not in known:
            raise ConfigError(f"unknown section [{name}]")
    vehicle = None
    if parser.has_section("vehicle"):
        vehicle = parse_vehicle(parser["vehicle"])
    gains = ControllerGains()
    if parser.has_section("controller"):
        gains = _parse_overrides(parser["controller"], gains, "controller")
    downwash = DownwashParams()
    if parser.has_section("downwash"):
        downwash = _parse_overrides(parser["downwash"], downwash, "downwash")
    training = TrainConfig()
    if parser.has_section("training"):
        training = _parse_overrides(parser["training"], training, "training")
    return RunSettings(
        vehicle=vehicle,
        gains=gains,
        downwash=downwash,
        training=training,
        source=str(path),
    )


def default_settings():
    return RunSettings(
        vehicle=None,
        gains=ControllerGains(),
        downwash=DownwashParams(),
        training=TrainConfig(),
        source="defaults",
    )


def find_config(explicit=None):
    """Config search order: explicit path first, then ./proxfly.conf."""
    if explicit is not None:
        return Path(explicit)
    local = Path(DEFAULT_CONFIG_NAME)
    if local.is_file():
        return local
    return None


def preset_path(name):
    if name not in PRESET_NAMES:
        raise ConfigError(f"unknown vehicle preset {name!r}, expected one of {PRESET_NAMES}")
    return resources.files("proxfly") / "presets" / f"{name}.conf"


def load_preset(name):
    """VehicleParams of a shipped preset."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    with preset_path(name).open() as fh:
        parser.read_file(fh)
    return parse_vehicle(parser["vehicle"])


def settings_snapshot(settings, vehicle):
    """JSON-ready dict of the fully resolved configuration."""

    def as_plain(obj):
        out = {}
        for f in fields(type(obj)):
            value = getattr(obj, f.name)
            out[f.name] = value.tolist() if isinstance(value, np.ndarray) else value
        return out

    return {
        "source": settings.source,
        "vehicle": as_plain(vehicle) if vehicle is not None else None,
        "controller": as_plain(settings.gains),
        "downwash": as_plain(settings.downwash),
        "training": as_plain(settings.training),
    }
