"""Model file parsing, canonical serialization and digests.

Two interchange forms, both JSON:

* finite, explicit::

    {"type": "finite",
     "neurons": [{"id": 1, "rates": [1.0, 0.5], "post": {"1": [2]}},
                 {"id": 2, "rates": [9.0, 1.0]}]}

  ``rates`` lists ``(lambda(0), lambda(1), ...)``; ``post`` maps a threshold
  (as a string key, >= 1) to the postsynaptic neuron ids. Presynaptic sets
  are derived by inversion.

* countable feedforward family::

    {"type": "decaying_feedforward", "a0": 1.0, "r": 0.1,
     "s": [1.0, 1.0], "window": [1]}

Unknown fields are rejected. Serialization is canonical (sorted keys, floats
at 17 significant digits), so equal models produce byte-identical files and
stable digests.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .errors import SchemaError
from .model import DecayingFeedforward, FiniteModel, ModelSpec, build_decaying_feedforward

_NUMBER = (int, float)


def _require_fields(doc: dict, allowed: set[str], required: set[str], where: str):
    for key in doc:
        if key not in allowed:
            raise SchemaError(f"{where}.{key}", "unknown field")
    for key in required:
        if key not in doc:
            raise SchemaError(f"{where}.{key}", "missing field")


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, _NUMBER):
        raise SchemaError(where, f"expected a number, got {type(value).__name__}")
    return float(value)


def _int(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(where, f"expected an integer, got {type(value).__name__}")
    return value


def parse_model_dict(doc) -> ModelSpec:
    if not isinstance(doc, dict):
        raise SchemaError("$", "model file must hold a JSON object")
    kind = doc.get("type")
    if kind == "finite":
        return _parse_finite(doc)
    if kind == "decaying_feedforward":
        return _parse_feedforward(doc)
    raise SchemaError("type", f"unknown model type {kind!r}")


def _parse_finite(doc: dict) -> FiniteModel:
    _require_fields(doc, {"type", "neurons"}, {"neurons"}, "$")
    neurons = doc["neurons"]
    if not isinstance(neurons, list) or not neurons:
        raise SchemaError("neurons", "expected a nonempty list")
    rates: dict[int, list[float]] = {}
    post_blocks: dict[int, dict] = {}
    for pos, entry in enumerate(neurons):
        where = f"neurons[{pos}]"
        if not isinstance(entry, dict):
            raise SchemaError(where, "expected an object")
        _require_fields(entry, {"id", "rates", "post"}, {"id", "rates"}, where)
        nid = _int(entry["id"], f"{where}.id")
        if nid < 0:
            raise SchemaError(f"{where}.id", "neuron ids must be >= 0")
        if nid in rates:
            raise SchemaError(f"{where}.id", f"duplicate neuron id {nid}")
        rv = entry["rates"]
        if not isinstance(rv, list) or not rv:
            raise SchemaError(f"{where}.rates", "expected a nonempty list")
        rates[nid] = [_number(x, f"{where}.rates[{j}]") for j, x in enumerate(rv)]
        if "post" in entry:
            if not isinstance(entry["post"], dict):
                raise SchemaError(f"{where}.post", "expected an object")
            post_blocks[nid] = entry["post"]
    post: dict[tuple[int, int], frozenset[int]] = {}
    for nid, block in post_blocks.items():
        for key, targets in block.items():
            where = f"neurons[id={nid}].post[{key!r}]"
            try:
                k = int(key)
            except ValueError:
                raise SchemaError(where, "threshold keys must be integers") from None
            if k < 1:
                raise SchemaError(where, "synapse thresholds must be >= 1")
            if not isinstance(targets, list):
                raise SchemaError(where, "expected a list of neuron ids")
            ids = [_int(t, f"{where}[{j}]") for j, t in enumerate(targets)]
            for t in ids:
                if t not in rates:
                    raise SchemaError(where, f"unknown neuron id {t}")
            post[(nid, k)] = frozenset(ids)
    return FiniteModel(rates, post)


def _parse_feedforward(doc: dict) -> DecayingFeedforward:
    fields = {"type", "a0", "r", "s", "window"}
    _require_fields(doc, fields, fields - {"type"}, "$")
    s = doc["s"]
    window = doc["window"]
    if not isinstance(s, list) or not s:
        raise SchemaError("s", "expected a nonempty list")
    if not isinstance(window, list):
        raise SchemaError("window", "expected a list")
    try:
        return build_decaying_feedforward(
            _number(doc["a0"], "a0"),
            _number(doc["r"], "r"),
            [_number(x, f"s[{j}]") for j, x in enumerate(s)],
            [_int(w, f"window[{j}]") for j, w in enumerate(window)],
        )
    except ValueError as err:
        raise SchemaError("$", str(err)) from None


def parse_model(path) -> ModelSpec:
    """Load and validate a model file; see the module docstring for schemas."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise SchemaError("$", f"invalid JSON: {err}") from None
    return parse_model_dict(doc)


def serialize_model(model: ModelSpec) -> dict:
    """Canonical plain-dict form; parse(serialize(m)) reproduces m exactly."""
    if isinstance(model, DecayingFeedforward):
        return {
            "type": "decaying_feedforward",
            "a0": model.a0,
            "r": model.r,
            "s": [float(x) for x in model.s],
            "window": list(model.window),
        }
    if model.neurons is None:
        raise ValueError("cannot serialize a custom countable model")
    neurons = []
    for i in model.neurons:
        entry: dict = {"id": i, "rates": [float(x) for x in model.rate_vector(i)]}
        block = {}
        for k in range(1, model.max_threshold + 1):
            targets = model.post(i, k)
            if targets:
                block[str(k)] = sorted(targets)
        if block:
            entry["post"] = block
        neurons.append(entry)
    return {"type": "finite", "neurons": neurons}


# --- canonical JSON ----------------------------------------------------------

def _canonical_scalar(value) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if value != value or value in (float("inf"), float("-inf")):
            raise ValueError(f"non-finite value {value} cannot be serialized")
        if value == int(value) and abs(value) < 1e16:
            return f"{value:.1f}"
        return format(value, ".17g")
    if isinstance(value, str):
        return json.dumps(value)
    raise TypeError(f"unsupported type {type(value).__name__}")


def canonical_json(obj, indent: int = 0) -> str:
    """Deterministic JSON: sorted keys, floats at 17 significant digits."""
    pad = " " * indent
    inner = " " * (indent + 2)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        parts = [
            f"{inner}{json.dumps(str(key))}: {canonical_json(obj[key], indent + 2)}"
            for key in sorted(obj, key=str)
        ]
        return "{\n" + ",\n".join(parts) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        parts = [canonical_json(x, indent + 2) for x in obj]
        if all(not isinstance(x, (dict, list, tuple)) for x in obj):
            return "[" + ", ".join(parts) + "]"
        return "[\n" + ",\n".join(inner + p for p in parts) + "\n" + pad + "]"
    return _canonical_scalar(obj)


def model_digest(model: ModelSpec) -> str:
    """Stable sha256 hex digest of the canonical model serialization."""
    payload = canonical_json(serialize_model(model)).encode()
    return hashlib.sha256(payload).hexdigest()
