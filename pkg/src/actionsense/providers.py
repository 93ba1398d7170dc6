"""Provider plumbing: errors, content-addressed response cache, HTTP adapters.

Text-tool providers speak a single JSON-over-HTTP envelope:

    POST {"task": "coref" | "parse" | "rc", "inputs": [...]}
    ->   {"outputs": [...]}

and the language-model provider speaks:

    POST {"op": "sample" | "logprobs",
          "sequence": {"text_fields": {...}, "visual_refs": [...]},
          "params": {...}}
    ->   {"texts": [...]} or {"logprobs": [...]}

Live responses are cached to disk keyed by the SHA-256 of the request payload
so that reruns are deterministic and work offline. Cache writes are atomic and
write-once, which makes them safe under concurrent writers.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import time
import urllib.error
import urllib.request
from pathlib import Path

CREDENTIALS_ENV_VAR = "ACTIONSENSE_PROVIDER_TOKEN"


class ProviderError(Exception):
    """A provider call failed or returned a malformed response."""


def canonical_payload(payload) -> str:
    return json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def content_key(payload) -> str:
    return hashlib.sha256(canonical_payload(payload).encode("utf-8")).hexdigest()


class ResponseCache:
    """Write-once response store addressed by request-content hash."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, payload):
        path = self._path(content_key(payload))
        if not path.exists():
            return None
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)

    def put(self, payload, response) -> None:
        path = self._path(content_key(payload))
        if path.exists():  # first writer wins
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(response, fh, ensure_ascii=False)
            os.replace(tmp, path)
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)

    def digest(self) -> str:
        """Combined digest over all cached keys, for run manifests."""
        names = sorted(p.stem for p in self.root.glob("*/*.json"))
        return hashlib.sha256("\n".join(names).encode("utf-8")).hexdigest()


def with_retries(fn, attempts: int = 3, base_delay: float = 0.1, sleep=time.sleep):
    """Call fn(), retrying ProviderError with exponential backoff."""
    last = None
    for attempt in range(attempts):
        try:
            return fn()
        except ProviderError as exc:
            last = exc
            if attempt + 1 < attempts:
                sleep(base_delay * (2**attempt))
    raise last


def _post_json(url: str, payload, timeout: float = 30.0):
    body = json.dumps(payload, ensure_ascii=False).encode("utf-8")
    headers = {"Content-Type": "application/json"}
    token = os.environ.get(CREDENTIALS_ENV_VAR)
    if token:
        headers["Authorization"] = f"Bearer {token}"
    request = urllib.request.Request(url, data=body, headers=headers, method="POST")
    try:
        with urllib.request.urlopen(request, timeout=timeout) as resp:
            if resp.status != 200:
                raise ProviderError(f"{url} returned HTTP {resp.status}")
            return json.loads(resp.read().decode("utf-8"))
    except urllib.error.URLError as exc:
        raise ProviderError(f"request to {url} failed: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ProviderError(f"{url} returned invalid JSON: {exc}") from exc


class _HttpTaskProvider:
    """Shared plumbing for the task/inputs -> outputs envelope."""

    task = ""

    def __init__(self, url: str, cache: ResponseCache | None = None, timeout: float = 30.0):
        self.url = url
        self.cache = cache
        self.timeout = timeout

    def _call(self, inputs: list):
        payload = {"task": self.task, "inputs": inputs}
        if self.cache is not None:
            hit = self.cache.get(payload)
            if hit is not None:
                return hit["outputs"]
        response = _post_json(self.url, payload, timeout=self.timeout)
        if not isinstance(response, dict) or "outputs" not in response:
            raise ProviderError(f"{self.url} response missing 'outputs'")
        outputs = response["outputs"]
        if len(outputs) != len(inputs):
            raise ProviderError(
                f"{self.url} returned {len(outputs)} outputs for {len(inputs)} inputs"
            )
        if self.cache is not None:
            self.cache.put(payload, {"outputs": outputs})
        return outputs


class HttpCorefProvider(_HttpTaskProvider):
    task = "coref"

    def resolve(self, texts) -> list[str]:
        return [str(t) for t in self._call(list(texts))]


class HttpParseProvider(_HttpTaskProvider):
    task = "parse"

    def parse(self, sentence: str):
        from .extraction import ParseTree

        raw = self._call([sentence])[0]
        try:
            return ParseTree.from_dict(raw)
        except (KeyError, TypeError, ValueError) as exc:
            raise ProviderError(f"malformed parse for {sentence!r}: {exc}") from exc


class HttpRCProvider(_HttpTaskProvider):
    task = "rc"

    def answer(self, context: str, question: str) -> str | None:
        out = self._call([{"context": context, "question": question}])[0]
        if out is None:
            return None
        answer = str(out)
        if answer not in context:
            raise ProviderError(f"rc answer {answer!r} is not a span of the context")
        return answer


class HttpLMProvider:
    """Language-model provider over the op/sequence/params envelope."""

    def __init__(self, url: str, cache: ResponseCache | None = None, timeout: float = 60.0):
        self.url = url
        self.cache = cache
        self.timeout = timeout

    def _call(self, payload, result_key):
        if self.cache is not None:
            hit = self.cache.get(payload)
            if hit is not None:
                return hit[result_key]
        response = _post_json(self.url, payload, timeout=self.timeout)
        if not isinstance(response, dict) or result_key not in response:
            raise ProviderError(f"{self.url} response missing {result_key!r}")
        if self.cache is not None:
            self.cache.put(payload, {result_key: response[result_key]})
        return response[result_key]

    def sample(self, sequence, nucleus_p: float, max_new: int, n: int) -> list[str]:
        payload = {
            "op": "sample",
            "sequence": sequence.to_wire(),
            "params": {"p": nucleus_p, "n": n, "max_new": max_new},
        }
        texts = self._call(payload, "texts")
        if len(texts) != n:
            raise ProviderError(f"asked for {n} samples, got {len(texts)}")
        return [str(t) for t in texts]

    def logprobs(self, sequence, continuation: str) -> list[float]:
        payload = {
            "op": "logprobs",
            "sequence": sequence.to_wire(),
            "params": {"continuation": continuation},
        }
        return [float(v) for v in self._call(payload, "logprobs")]
