"""Experiment config files: JSON schema validation and ``key=value`` overrides."""
from __future__ import annotations

import copy
import json
from importlib import resources
from pathlib import Path

import jsonschema

CONFIG_VERSION = 1
RESULTS_VERSION = 1


class ConfigError(ValueError):
    pass


def _schema(name: str) -> dict:
    return json.loads(resources.files("lmmvae").joinpath("schemas", name).read_text(encoding="utf-8"))


def config_schema() -> dict:
    return _schema("config.schema.json")


def results_schema() -> dict:
    return _schema("results.schema.json")


def _check(instance, schema: dict, what: str) -> None:
    v = jsonschema.Draft202012Validator(schema)
    errors = sorted(v.iter_errors(instance), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"  {'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}" for e in errors]
        raise ConfigError(f"invalid {what}:\n" + "\n".join(lines))


def validate_config(cfg: dict) -> dict:
    _check(cfg, config_schema(), "config")
    return cfg


def validate_results(bundle: dict) -> dict:
    _check(bundle, results_schema(), "results bundle")
    return bundle


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, item: str) -> dict:
    """Set a dotted path, e.g. ``training.epochs=5`` or ``models.0.objective=gsnn``.

    The value is parsed as JSON when possible and kept as a string otherwise.
    """
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key=value")
    key, raw = item.split("=", 1)
    parts = key.strip().split(".")
    if not all(parts):
        raise ConfigError(f"override {item!r}: empty path component")
    node = cfg
    for i, p in enumerate(parts[:-1]):
        if isinstance(node, list):
            try:
                node = node[int(p)]
            except (ValueError, IndexError):
                raise ConfigError(f"override {item!r}: no list index {p!r}") from None
        else:
            nxt = parts[i + 1]
            node = node.setdefault(p, [] if nxt.isdigit() else {})
    last = parts[-1]
    value = _parse_value(raw)
    if isinstance(node, list):
        try:
            node[int(last)] = value
        except (ValueError, IndexError):
            raise ConfigError(f"override {item!r}: no list index {last!r}") from None
    else:
        node[last] = value
    return cfg


def load_config(path, overrides=()) -> dict:
    path = Path(path)
    try:
        cfg = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from None
    cfg = copy.deepcopy(cfg)
    for item in overrides:
        apply_override(cfg, item)
    # relative data paths are resolved against the config file's directory
    data = cfg.get("data", {})
    for key in ("csv", "manifest", "truth"):
        if isinstance(data.get(key), str) and not Path(data[key]).is_absolute():
            data[key] = str((path.parent / data[key]).resolve())
    return validate_config(cfg)


def packaged_config(name: str) -> dict:
    """One of the bundled experiment configs (``lmmvae/configs/<name>.json``)."""
    ref = resources.files("lmmvae").joinpath("configs", f"{name}.json")
    if not ref.is_file():
        raise ConfigError(f"no packaged config named {name!r}")
    return validate_config(json.loads(ref.read_text(encoding="utf-8")))
