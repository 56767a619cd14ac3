"""Service configuration from environment variables, overridable by flags."""

from __future__ import annotations

import os
from dataclasses import dataclass

ENV_DATABASE_URL = "PGI_DATABASE_URL"
ENV_GATEWAY_URL = "PGI_GATEWAY_URL"
ENV_GATEWAY_KEY = "PGI_GATEWAY_KEY"
ENV_CACHE_TTL_S = "PGI_CACHE_TTL_S"
ENV_ROW_CAP = "PGI_ROW_CAP"
ENV_LISTEN_ADDR = "PGI_LISTEN_ADDR"


@dataclass(frozen=True)
class ServiceConfig:
    database_url: str = "fixture://"
    gateway_url: str | None = None
    gateway_key: str | None = None
    cache_ttl_s: float = 300.0
    row_cap: int = 10_000
    listen_addr: str = "127.0.0.1:8080"
    session_ttl_s: float = 600.0

    @classmethod
    def from_env(cls, environ: dict[str, str] | None = None, **overrides) -> "ServiceConfig":
        env = os.environ if environ is None else environ
        values = dict(
            database_url=env.get(ENV_DATABASE_URL, cls.database_url),
            gateway_url=env.get(ENV_GATEWAY_URL) or None,
            gateway_key=env.get(ENV_GATEWAY_KEY) or None,
            cache_ttl_s=float(env.get(ENV_CACHE_TTL_S, cls.cache_ttl_s)),
            row_cap=int(env.get(ENV_ROW_CAP, cls.row_cap)),
            listen_addr=env.get(ENV_LISTEN_ADDR, cls.listen_addr),
        )
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @property
    def host(self) -> str:
        return self.listen_addr.rsplit(":", 1)[0]

    @property
    def port(self) -> int:
        return int(self.listen_addr.rsplit(":", 1)[1])
