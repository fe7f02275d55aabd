"""
Flat key=value text shared by config files, checkpoints and run records.

Lines look like ``train.base_lr=0.001``; ``#`` starts a comment and blank
lines are ignored. Values are typed from dataclass field annotations.
"""

import dataclasses
import enum
import typing

import environ


class KeyValueError(ValueError):
    """A line or value that cannot be parsed."""


def parse_lines(text: str, source: str = '') -> dict[str, str]:
    """Parse key=value lines into an ordered mapping; later keys win."""
    values = {}
    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition('=')
        if not sep or not key.strip():
            where = f"{source}:{line_number}" if source else f"line {line_number}"
            raise KeyValueError(f"{where}: expected key=value, got {raw.strip()!r}")
        values[key.strip()] = value.strip()
    return values


def format_value(value) -> str:
    if isinstance(value, enum.Enum):
        return str(value.value)
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, tuple):
        return ','.join(format_value(item) for item in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


SCALAR_TYPES = (bool, int, float, str)


def coerce(annotation, text: str):
    """
    Convert text to the type named by a dataclass field annotation.

    Casting is django-environ's, so config files read values the same way
    settings read the environment.
    """
    if isinstance(annotation, type) and issubclass(annotation, enum.Enum):
        # Enum validation (with the allowed set) is left to the dataclass
        return text

    if typing.get_origin(annotation) is tuple:
        item_types = typing.get_args(annotation)
        if len(set(item_types)) != 1 or item_types[0] not in SCALAR_TYPES:
            raise KeyValueError(f"unsupported field type {annotation!r}")
        cast = (item_types[0],)
    elif annotation in SCALAR_TYPES:
        cast = annotation
    else:
        raise KeyValueError(f"unsupported field type {annotation!r}")

    try:
        value = environ.Env.parse_value(text.strip(), cast)
    except ValueError:
        raise KeyValueError(f"expected {_type_name(annotation)}, got {text!r}") from None
    if isinstance(cast, tuple) and len(value) != len(item_types):
        raise KeyValueError(f"expected {len(item_types)} comma-separated values, got {text!r}")
    return value


def _type_name(annotation) -> str:
    return getattr(annotation, '__name__', str(annotation))


def field_types(cls) -> dict[str, object]:
    hints = typing.get_type_hints(cls)
    return {field.name: hints[field.name] for field in dataclasses.fields(cls)}


def dataclass_lines(prefix: str, instance) -> list[str]:
    return [
        f"{prefix}.{field.name}={format_value(getattr(instance, field.name))}"
        for field in dataclasses.fields(instance)
    ]


def dataclass_from_values(cls, values: dict[str, str], prefix: str, base=None):
    """
    Build cls from the ``prefix.*`` keys of values, on top of base (or defaults).

    Keys under the prefix that name no field raise KeyValueError.
    """
    types = field_types(cls)
    overrides = {}
    for key, text in values.items():
        section, _, name = key.partition('.')
        if section != prefix:
            continue
        if name not in types:
            raise KeyValueError(f"unknown key {key!r}")
        try:
            overrides[name] = coerce(types[name], text)
        except KeyValueError as exc:
            raise KeyValueError(f"{key}: {exc}") from None
    if base is None:
        return cls(**overrides)
    return dataclasses.replace(base, **overrides)
