"""Exception types shared across the package."""

from __future__ import annotations


class RfodError(Exception):
    """Base class for all errors raised by this package."""


class LoadError(RfodError):
    """A file could not be read or parsed (CSV, schema, model artifacts)."""


class ConfigError(RfodError):
    """A configuration value is out of its documented range."""


class SchemaMismatchError(RfodError):
    """Test data does not match the schema the model was trained on."""


class DegenerateLabelsError(RfodError):
    """An evaluation metric needs both classes but the labels contain one."""
