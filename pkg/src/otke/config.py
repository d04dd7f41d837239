"""INI run configuration: ``key = value`` pairs under an ``[otke]`` section."""
import configparser
import dataclasses
import re
from importlib import resources

from .data import SynthSpec
from .exceptions import OTKEError
from .training import TrainConfig

__all__ = ["ConfigError", "load_config", "preset_path", "PRESETS", "GRID_KEYS", "DATA_KEYS"]

PRESETS = ("scop", "sst2", "cifar")

# grids over TrainConfig fields, searched on the validation set
GRID_KEYS = {"lambda_grid": "lam", "epsilon_grid": "epsilon", "sigma_grid": "sigma",
             "sigma_pos_grid": "sigma_pos", "lr_grid": "lr"}
DATA_KEYS = {"train": str, "val": str, "test": str, "alphabet": str, "kmer_size": int}


class ConfigError(OTKEError, ValueError):
    """Unknown key or malformed value in a configuration file."""


def _optional_float(text):
    return None if text.strip().lower() in ("", "none", "off") else float(text)


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _float_list(text):
    return [_optional_float(v) for v in text.split(",") if v.strip()]


def _field_parsers(cls):
    out = {}
    for f in dataclasses.fields(cls):
        default = f.default
        if isinstance(default, bool):
            out[f.name] = _bool
        elif isinstance(default, int):
            out[f.name] = int
        elif isinstance(default, float) or default is None:
            out[f.name] = _optional_float
        elif isinstance(default, tuple):
            out[f.name] = lambda t: tuple(int(v) for v in t.split(","))
        else:
            out[f.name] = str
    return out


def _parsers():
    parsers = _field_parsers(TrainConfig)
    parsers["lambda"] = parsers.pop("lam")
    for name, parse in _field_parsers(SynthSpec).items():
        parsers.setdefault(f"synth_{name}", parse)
    parsers.update({key: _float_list for key in GRID_KEYS})
    parsers.update(DATA_KEYS)
    return parsers


PARSERS = _parsers()


def preset_path(name):
    """Filesystem path of a shipped preset."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return str(resources.files("otke") / "presets" / f"{name}.ini")


def load_config(path):
    """Parse a config file into a dict of typed values.

    Keys are TrainConfig fields (``lambda`` for the L2 weight), SynthSpec
    fields prefixed with ``synth_``, ``*_grid`` lists and data paths.
    Unknown keys raise :class:`ConfigError`.
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if not re.search(r"^\s*\[", text, flags=re.MULTILINE):
        text = "[otke]\n" + text
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    unknown_sections = [s for s in parser.sections() if s != "otke"]
    if unknown_sections:
        raise ConfigError(f"{path}: unknown section [{unknown_sections[0]}]")
    out = {}
    for key, raw in parser.items("otke") if parser.has_section("otke") else []:
        if key not in PARSERS:
            raise ConfigError(f"{path}: unknown key {key!r}")
        try:
            out[key] = PARSERS[key](raw)
        except ValueError as exc:
            raise ConfigError(f"{path}: bad value for {key!r}: {exc}") from None
    return out
