"""Flat key=value configuration files.

One assignment per line, # starts a comment, blank lines are ignored.
Keys are validated exhaustively against the consumer's schema so a
typo cannot silently fall back to a default and change the run.
"""

import dataclasses

from .errors import FormatError
from .train import TrainConfig

_BOOL = {"true": True, "yes": True, "1": True,
         "false": False, "no": False, "0": False}


def parse_kv(text, source="config"):
    """Text -> insertion-ordered {key: raw string value}."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(
                f"{source}:{lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise FormatError(f"{source}:{lineno}: empty key")
        if not value:
            raise FormatError(f"{source}:{lineno}: empty value for {key!r}")
        if key in out:
            raise FormatError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_kv(path):
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise FormatError(f"{path}: {e.strerror or e}")
    return parse_kv(text, source=path)


def _coerce(key, value, target_type, source):
    try:
        if target_type is bool:
            try:
                return _BOOL[value.lower()]
            except KeyError:
                raise ValueError
        if target_type is int:
            return int(value)
        if target_type is float:
            return float(value)
        return value
    except ValueError:
        raise FormatError(
            f"{source}: key {key!r} expects {target_type.__name__}, "
            f"got {value!r}")


def train_config_from_kv(kv, source="config"):
    """Config mapping -> (variant name, model seed, TrainConfig).

    `variant` is required; `model_seed` is optional; every other key
    must be a TrainConfig field. Unknown keys are rejected by name.
    """
    kv = dict(kv)
    if "variant" not in kv:
        raise FormatError(f"{source}: missing required key 'variant'")
    variant = kv.pop("variant")
    model_seed = int(_coerce("model_seed", kv.pop("model_seed", "0"),
                             int, source))
    fields = {f.name: type(f.default) for f in
              dataclasses.fields(TrainConfig)}
    unknown = sorted(set(kv) - set(fields))
    if unknown:
        valid = ", ".join(sorted(fields) + ["model_seed", "variant"])
        raise FormatError(
            f"{source}: unknown key(s) {', '.join(map(repr, unknown))}; "
            f"valid keys: {valid}")
    values = {k: _coerce(k, v, fields[k], source) for k, v in kv.items()}
    return variant, model_seed, TrainConfig(**values)
