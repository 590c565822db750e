"""Schema validation for train configs, generator specs and run manifests."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Any

import yaml
from jsonschema import Draft202012Validator, ValidationError

from clinevent.errors import ConfigError


def load_schema(name: str) -> dict[str, Any]:
    """Load a JSON Schema shipped in ``clinevent/schemas``."""
    text = resources.files("clinevent").joinpath("schemas", name).read_text(encoding="utf-8")
    return json.loads(text)


class SchemaValidator:
    """Validates mappings against one packaged schema."""

    schema_name = ""

    def __init__(self, schema_name: str | None = None):
        self.schema = load_schema(schema_name or self.schema_name)
        self.validator = Draft202012Validator(self.schema)

    def _format_validation_error(self, error: ValidationError) -> str:
        """Format a JSON Schema validation error for display."""
        if error.absolute_path:
            path = ".".join(str(p) for p in error.absolute_path)
            return f"Field '{path}': {error.message}"
        return error.message

    def validate_data(self, data: Any) -> tuple[bool, list[str]]:
        """Validate data against the schema plus any semantic checks.

        Returns:
            Tuple of (is_valid, list_of_errors)
        """
        errors = [self._format_validation_error(e) for e in self.validator.iter_errors(data)]
        if not errors:
            errors.extend(self._validate_semantics(data))
        return len(errors) == 0, errors

    def _validate_semantics(self, data: Any) -> list[str]:
        return []

    def _read(self, path: Path) -> Any:
        with open(path, encoding="utf-8") as f:
            return yaml.safe_load(f)

    def validate_file(self, path: Path) -> tuple[bool, list[str]]:
        """Validate a file, reporting read errors the same way as schema errors."""
        try:
            data = self._read(Path(path))
        except yaml.YAMLError as e:
            return False, [f"YAML parsing error: {e}"]
        except ConfigError as e:
            return False, [str(e)]
        except FileNotFoundError:
            return False, [f"File not found: {path}"]
        if data is None:
            return False, ["YAML parsing error: empty document"]
        return self.validate_data(data)

    def load(self, path: Path) -> Any:
        """Read and validate a file, raising ConfigError with every problem found."""
        data = self._read(Path(path))
        if data is None:
            msg = f"{path}: empty document"
            raise ConfigError(msg)
        is_valid, errors = self.validate_data(data)
        if not is_valid:
            msg = f"{path}: " + "; ".join(errors)
            raise ConfigError(msg)
        return data


def _coerce(raw: str) -> Any:
    """Type a config value: int, then float, then YAML booleans, else the string."""
    for convert in (int, float):
        try:
            return convert(raw)
        except ValueError:
            pass
    if not raw:
        return raw
    value = yaml.safe_load(raw)
    return value if isinstance(value, bool) else raw


def parse_key_values(text: str, source: str = "<config>") -> dict[str, Any]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values: dict[str, Any] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep or not key:
            msg = f"{source}:{number}: expected 'key = value', got {line!r}"
            raise ConfigError(msg)
        if key in values:
            msg = f"{source}:{number}: duplicate key {key!r}"
            raise ConfigError(msg)
        values[key] = _coerce(raw.strip())
    return values


class ConfigValidator(SchemaValidator):
    """Validates key-value train configs against the train config schema."""

    schema_name = "train-config-v1.json"

    def _read(self, path: Path) -> Any:
        return parse_key_values(path.read_text(encoding="utf-8"), str(path))


class SynthSpecValidator(SchemaValidator):
    """Validates synthetic corpus generator specs."""

    schema_name = "synth-spec-v1.json"

    def _validate_semantics(self, data: dict[str, Any]) -> list[str]:
        errors = []
        events = [entry["word"].lower() for entry in data["events"]]
        oov = [entry["word"].lower() for entry in data.get("oov_events", [])]
        distractors = [entry["word"].lower() for entry in data.get("distractors", [])]

        for label, words in (("events", events), ("oov_events", oov), ("distractors", distractors)):
            duplicates = sorted({word for word in words if words.count(word) > 1})
            if duplicates:
                errors.append(f"Duplicate words in {label}: {', '.join(duplicates)}")
        overlap = sorted(set(events) & set(oov))
        if overlap:
            errors.append(f"oov_events repeat training event words: {', '.join(overlap)}")
        if data.get("oov_rate", 0) > 0 and not oov:
            errors.append("oov_rate > 0 requires at least one oov_events entry")

        cue_words = {
            value.rpartition("/")[0].lower() for cues in data.get("cues", {}).values() for value in cues.values()
        }
        template_words = set()
        for i, template in enumerate(data["templates"]):
            slots = [item for item in template.split(" ") if item.startswith("{")]
            if "{EVENT}" not in slots:
                errors.append(f"Template {i} has no {{EVENT}} slot")
            unknown = sorted(set(slots) - {"{EVENT}", "{DISTRACTOR}"})
            if unknown:
                errors.append(f"Template {i} uses unknown slots: {', '.join(unknown)}")
            for item in template.split(" "):
                if item.startswith("{"):
                    continue
                word, sep, pos = item.rpartition("/")
                if not sep or not word or not pos:
                    errors.append(f"Template {i}: expected word/TAG, got {item!r}")
                template_words.add(word.lower())

        clash = sorted((set(events) | set(oov)) & (template_words | cue_words | set(distractors)))
        if clash:
            errors.append(f"Event words also used as context words: {', '.join(clash)}")

        distributions = [("attributes", data.get("attributes", {}))]
        distributions += [(f"events.{entry['word']}", entry.get("attributes", {})) for entry in data["events"]]
        for where, attributes in distributions:
            for name, weights in attributes.items():
                if abs(sum(weights.values()) - 1.0) > 1e-6:
                    errors.append(f"{where}.{name}: probabilities sum to {sum(weights.values()):.6f}, not 1")
        return errors


class ManifestValidator(SchemaValidator):
    """Validates run manifests written next to trained models."""

    schema_name = "run-manifest-v1.json"
