"""Optional chat-completion client for generating semantic neighbors.

Strictly optional: offline mode reads committed fixture files so the whole
test suite runs without network access. Online mode speaks the common
chat-completion wire shape ({model, messages:[{role, content}]}) against
any provider; responses are cached on disk keyed by the class list and the
model id so repeated runs never re-issue a request.
"""

from __future__ import annotations

import ast
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import ConfigError, DataError
from .prompting import ClassSet, NeighborSet

log = logging.getLogger(__name__)

MAX_RETRIES = 3


@dataclass
class LlmClientConfig:
    endpoint: str | None = None
    model_id: str = "gpt-4o"
    auth_env: str = "SEPT_LLM_TOKEN"
    timeout: float = 30.0
    offline_fixture: str | None = None
    cache_dir: str | None = None

    def __post_init__(self):
        if self.offline_fixture is None and self.endpoint is None:
            raise ConfigError(
                "either an offline fixture path or an endpoint is required")


def neighbor_request_prompt(names, n: int) -> str:
    """Instruction text sent to the model, with the class list filled in."""
    template = resources.files("sept").joinpath(
        "data/neighbor_request_prompt.txt").read_text(encoding="utf-8")
    return template.replace("<N>", str(n)).replace("<CLASSES>", ", ".join(names))


def template_request_prompt(n: int) -> str:
    """Instruction text for generating a diverse template-prefix pool."""
    template = resources.files("sept").joinpath(
        "data/template_request_prompt.txt").read_text(encoding="utf-8")
    return template.replace("<N>", str(n))


def _cache_key(classes: ClassSet, model_id: str, n: int) -> str:
    canonical = json.dumps({"classes": list(classes.names), "model": model_id,
                            "n": n}, sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def parse_neighbor_response(text: str) -> dict:
    """Extract the {class: [terms...]} mapping from an associative reply.

    Models are asked for a dict literal; anything around the outermost
    braces (prose, code fences) is ignored.
    """
    start, end = text.find("{"), text.rfind("}")
    if start < 0 or end <= start:
        raise DataError("no dict literal found in model response")
    body = text[start:end + 1]
    try:
        parsed = ast.literal_eval(body)
    except (ValueError, SyntaxError) as exc:
        raise DataError(f"could not parse model response: {exc}") from exc
    if not isinstance(parsed, dict):
        raise DataError("model response is not a mapping")
    out = {}
    for key, values in parsed.items():
        if not isinstance(values, (list, tuple)):
            raise DataError(f"entry for {key!r} is not a list")
        out[str(key)] = [str(v) for v in values]
    return out


def _default_post(url: str, payload: dict, headers: dict, timeout: float) -> str:
    import requests

    resp = requests.post(url, json=payload, headers=headers, timeout=timeout)
    resp.raise_for_status()
    doc = resp.json()
    return doc["choices"][0]["message"]["content"]


def generate_neighbors(classes: ClassSet, config: LlmClientConfig, n: int,
                       post_fn=None) -> NeighborSet:
    """Neighbor strings for every class, from fixture, cache, or live call.

    Entries that repeat another class name are dropped (the request forbids
    them, but providers are not trusted to comply).
    """
    if config.offline_fixture is not None:
        return NeighborSet.load(config.offline_fixture, classes, n=n)

    cache_path = None
    if config.cache_dir is not None:
        cache_path = Path(config.cache_dir) / f"{_cache_key(classes, config.model_id, n)}.json"
        if cache_path.exists():
            log.info("neighbor cache hit: %s", cache_path)
            return NeighborSet.load(cache_path, classes)

    token = os.environ.get(config.auth_env)
    if not token:
        raise ConfigError(f"auth token env var {config.auth_env} is not set")
    payload = {
        "model": config.model_id,
        "messages": [{"role": "user",
                      "content": neighbor_request_prompt(classes.names, n)}],
    }
    headers = {"Authorization": f"Bearer {token}"}
    post = post_fn or _default_post

    text = None
    last_error = None
    for attempt in range(MAX_RETRIES):
        try:
            text = post(config.endpoint, payload, headers, config.timeout)
            break
        except Exception as exc:  # network layer errors are provider-specific
            last_error = exc
            log.warning("neighbor request attempt %d failed: %s", attempt + 1, exc)
            time.sleep(min(2.0 ** attempt, 4.0))
    if text is None:
        raise DataError(f"neighbor request failed after {MAX_RETRIES} attempts: "
                        f"{last_error}")

    try:
        mapping = parse_neighbor_response(text)
    except DataError:
        if config.cache_dir is not None:
            raw_path = Path(config.cache_dir) / "last_bad_response.txt"
            raw_path.parent.mkdir(parents=True, exist_ok=True)
            raw_path.write_text(text, encoding="utf-8")
            log.error("raw payload saved to %s", raw_path)
        raise

    normalized = {k.strip().lower(): k for k in mapping}
    blocked = {c.strip().lower() for c in classes.names}
    lists = []
    for name in classes.names:
        key = normalized.get(name.strip().lower())
        if key is None:
            raise DataError(f"model response missing class {name!r}")
        entries = []
        for s in mapping[key]:
            if s.strip().lower() in blocked:
                log.warning("dropping neighbor %r of %r: repeats a class name",
                            s, name)
                continue
            entries.append(s)
        if not entries:
            raise DataError(f"model returned no usable neighbors for {name!r}")
        lists.append(entries)
    result = NeighborSet.build(lists, n=n)

    if cache_path is not None:
        cache_path.parent.mkdir(parents=True, exist_ok=True)
        result.save(cache_path, classes)
    return result
