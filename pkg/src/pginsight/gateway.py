"""Optional remote model gateway for utterance parsing.

The gateway receives the utterance plus a compact schema digest and must
return a structured intent document. Any failure (transport, malformed
payload, invariant violation) silently degrades to the rule-based parser;
the fallback is logged but never surfaced to the caller.
"""

from __future__ import annotations

import logging
from datetime import datetime
from typing import Callable, Protocol

from .catalog import SchemaCatalog, SchemaLexicon
from .intent import QueryIntent, intent_from_dict, parse_utterance

logger = logging.getLogger(__name__)

SCHEMA_DIGEST_CAP = 4000


class Gateway(Protocol):
    def parse(self, utterance: str, schema_digest: str) -> dict: ...


class HttpGateway:
    """POSTs {utterance, schema_digest} and expects {"intent": {...}} back."""

    def __init__(self, url: str, api_key: str | None = None, timeout_s: float = 10.0):
        self.url = url
        self.api_key = api_key
        self.timeout_s = timeout_s

    def parse(self, utterance: str, schema_digest: str) -> dict:
        import httpx

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        response = httpx.post(
            self.url,
            json={"utterance": utterance, "schema_digest": schema_digest},
            headers=headers,
            timeout=self.timeout_s,
        )
        response.raise_for_status()
        return response.json()


def schema_digest(catalog: SchemaCatalog, cap: int = SCHEMA_DIGEST_CAP) -> str:
    """Compact one-line summary of tables and typed columns, capped in length."""
    parts = []
    for table in catalog.tables.values():
        cols = ",".join(f"{c.name}:{c.type_tag}" for c in table.columns)
        parts.append(f"{table.name}({cols})")
    digest = "; ".join(parts)
    return digest[:cap]


def gateway_parse(
    text: str,
    catalog: SchemaCatalog,
    lexicon: SchemaLexicon,
    gateway: Gateway,
    clock: Callable[[], datetime] | None = None,
) -> QueryIntent:
    """Parse via the gateway, falling back to the rule-based parser on any failure."""
    try:
        payload = gateway.parse(text, schema_digest(catalog))
        doc = payload.get("intent") if isinstance(payload, dict) else None
        if doc is None:
            raise ValueError("gateway response missing 'intent'")
        intent = intent_from_dict(doc)
        if intent.raw_text != text:
            intent.raw_text = text
        intent.validate()
        return intent
    except Exception as exc:
        logger.warning("gateway parse failed (%s); using rule-based parser", exc)
        return parse_utterance(text, lexicon, clock=clock)
