"""Small input-validation helpers used by the estimators and file loaders."""

import math
import numbers

import numpy as np

from .errors import NonFiniteError, NotFittedError, SchemaError, ValidationError


def check_int(value, field, minimum=None, maximum=None):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise SchemaError(f"expected integer, got {value!r}", field)
    value = int(value)
    if minimum is not None and value < minimum:
        raise SchemaError(f"must be >= {minimum}, got {value}", field)
    if maximum is not None and value > maximum:
        raise SchemaError(f"must be <= {maximum}, got {value}", field)
    return value


def check_number(value, field, minimum=None, maximum=None, strict_min=False):
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise SchemaError(f"expected number, got {value!r}", field)
    value = float(value)
    if not math.isfinite(value):
        raise NonFiniteError(f"non-finite value {value!r}", field)
    if minimum is not None:
        if strict_min and value <= minimum:
            raise SchemaError(f"must be > {minimum}, got {value}", field)
        if value < minimum:
            raise SchemaError(f"must be >= {minimum}, got {value}", field)
    if maximum is not None and value > maximum:
        raise SchemaError(f"must be <= {maximum}, got {value}", field)
    return value


def check_str(value, field, choices=None):
    if not isinstance(value, str) or not value:
        raise SchemaError(f"expected non-empty string, got {value!r}", field)
    if choices is not None and value not in choices:
        raise SchemaError(f"must be one of {sorted(choices)}, got {value!r}", field)
    return value


def check_keys(mapping, field, required, optional=()):
    """Reject missing and unknown keys of a decoded JSON object."""
    if not isinstance(mapping, dict):
        raise SchemaError(f"expected object, got {type(mapping).__name__}", field)
    missing = [k for k in required if k not in mapping]
    if missing:
        raise SchemaError(f"missing field(s) {missing}", field)
    unknown = sorted(set(mapping) - set(required) - set(optional))
    if unknown:
        raise SchemaError(f"unknown field(s) {unknown}", field)
    return mapping


def check_list(value, field, min_len=0):
    if not isinstance(value, list):
        raise SchemaError(f"expected list, got {type(value).__name__}", field)
    if len(value) < min_len:
        raise SchemaError(f"expected at least {min_len} item(s)", field)
    return value


def check_schema_version(doc, field, kind):
    if not isinstance(doc, dict):
        raise SchemaError("expected object", field)
    for key in ("schema_version", "kind"):
        if key not in doc:
            raise SchemaError(f"missing field {key!r}", field)
    if doc["schema_version"] != 1:
        raise SchemaError(f"unsupported schema_version {doc['schema_version']!r}", field)
    if doc["kind"] != kind:
        raise SchemaError(f"expected kind {kind!r}, got {doc['kind']!r}", field)


def check_points(X):
    """Coerce (latency, accuracy) pairs to a finite float array of shape (n, 2)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or (X.size and X.shape[1] != 2):
        if X.size == 0:
            return X.reshape(0, 2)
        raise ValidationError(f"expected array of shape (n, 2), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise NonFiniteError("points contain NaN or inf")
    return X.reshape(-1, 2)


def check_is_fitted(estimator, attribute):
    if not hasattr(estimator, attribute):
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call 'fit' first"
        )
