"""Key = value config files mapped onto the run dataclasses.

One flat UTF-8 file feeds both the corpus generator and the trainer;
every key must name a dataclass field and every value must parse into
that field's annotated type, so typos fail loudly at load time instead
of surfacing as silently ignored settings.
"""

from __future__ import annotations

from dataclasses import fields

from .corpus import SynthSpec
from .errors import BadConfig, DuplicateEntry, ParseError
from .training import TrainConfig

_TRUE_WORDS = ("true", "yes", "on", "1")
_FALSE_WORDS = ("false", "no", "off", "0")
_NONE_WORDS = ("none", "null")


def read_config(path) -> dict[str, str]:
    """Parse a key = value file; '#' starts a comment, blanks are skipped."""
    mapping: dict[str, str] = {}
    try:
        with open(path, encoding="utf-8") as handle:
            lines = handle.readlines()
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not UTF-8 text: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not key:
            raise ParseError(f"{path}:{lineno}: empty key")
        if key in mapping:
            raise DuplicateEntry(f"{path}:{lineno}: duplicate key {key!r}")
        mapping[key] = value
    return mapping


def _annotation_text(annotation) -> str:
    return annotation if isinstance(annotation, str) else getattr(
        annotation, "__name__", str(annotation)
    )


def _cast(key: str, text: str, annotation) -> object:
    """String to field value, guided by the annotated type."""
    names = _annotation_text(annotation)
    if "None" in names and text.lower() in _NONE_WORDS:
        return None
    if "bool" in names:
        low = text.lower()
        if low in _TRUE_WORDS:
            return True
        if low in _FALSE_WORDS:
            return False
        raise BadConfig(f"{key}: expected a boolean, got {text!r}")
    if "int" in names:
        try:
            return int(text)
        except ValueError:
            raise BadConfig(f"{key}: expected an integer, got {text!r}") from None
    if "float" in names:
        try:
            return float(text)
        except ValueError:
            raise BadConfig(f"{key}: expected a number, got {text!r}") from None
    return text


def _build(cls, mapping: dict, overrides: dict):
    known = {f.name: f.type for f in fields(cls)}
    kwargs: dict = {}
    for key, text in mapping.items():
        if key not in known:
            raise BadConfig(
                f"unknown config key {key!r}; valid keys: {', '.join(sorted(known))}"
            )
        kwargs[key] = _cast(key, str(text), known[key])
    for key, value in overrides.items():
        if value is not None:
            kwargs[key] = value
    return cls(**kwargs)


def train_config_from(mapping: dict, **overrides) -> TrainConfig:
    """TrainConfig from parsed keys plus programmatic overrides."""
    cfg = _build(TrainConfig, mapping, overrides)
    cfg.validate()
    return cfg


def synth_spec_from(mapping: dict, **overrides) -> SynthSpec:
    """SynthSpec from parsed keys plus programmatic overrides."""
    spec = _build(SynthSpec, mapping, overrides)
    spec.validate()
    return spec
