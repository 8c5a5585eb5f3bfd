"""JSON-schema validation for every on-disk artifact format.

Schemas are packaged under ``sept/data/schemas`` (copies are shipped in
``docs/schemas``). Validation failures raise SchemaError with one
JSON-pointer path per violation.
"""

from __future__ import annotations

import json
from importlib import resources

import jsonschema

from .errors import SchemaError

_validators: dict[str, jsonschema.protocols.Validator] = {}


def _validator(schema_name: str) -> jsonschema.protocols.Validator:
    validator = _validators.get(schema_name)
    if validator is None:
        path = resources.files("sept").joinpath(f"data/schemas/{schema_name}")
        schema = json.loads(path.read_text(encoding="utf-8"))
        validator = jsonschema.Draft202012Validator(schema)
        _validators[schema_name] = validator
    return validator


def validate_document(doc, schema_name: str):
    errors = sorted(_validator(schema_name).iter_errors(doc),
                    key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for e in errors:
            pointer = "/" + "/".join(str(p) for p in e.absolute_path)
            lines.append(f"{pointer}: {e.message}")
        raise SchemaError(f"{schema_name} validation failed:\n" + "\n".join(lines))
