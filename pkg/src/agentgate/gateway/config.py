"""Gateway configuration: one TOML document validated at startup.

Environment overrides exist for the listen address and the data directory
only (AGENTGATE_LISTEN, AGENTGATE_DATA_DIR); everything else is file-owned.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):  # pragma: no cover
    import tomllib
else:
    import tomli as tomllib

from ..errors import ConfigError
from ..governance import Principal, ScopePath
from ..resolution import ResolutionThresholds

ENV_LISTEN = "AGENTGATE_LISTEN"
ENV_DATA_DIR = "AGENTGATE_DATA_DIR"

DEFAULT_CONFIG_PATH = Path(__file__).parent / "data" / "config.toml"
DEFAULT_FIXTURES_PATH = Path(__file__).parent / "data" / "fixtures.jsonl"
DEFAULT_TASKS_PATH = Path(__file__).parent / "data" / "tasks.json"


@dataclass
class GatewayConfig:
    listen: str = "127.0.0.1:8787"
    data_dir: Path | None = None
    fixtures_path: Path | None = None
    thresholds: ResolutionThresholds = field(default_factory=ResolutionThresholds)
    idempotency_window: float = 24 * 3600.0
    snapshot_expiry: float = 7 * 24 * 3600.0
    default_wait: float = 600.0
    tenants: tuple[str, ...] = ()
    capability_entries: tuple[tuple[str, str], ...] = ()
    approver_roles: dict[str, str] = field(default_factory=dict)
    principals_by_token: dict[str, Principal] = field(default_factory=dict)
    console_dir: Path | None = None

    @property
    def host(self) -> str:
        return self.listen.rsplit(":", 1)[0]

    @property
    def port(self) -> int:
        return int(self.listen.rsplit(":", 1)[1])

    def principal_for_token(self, token: str) -> Principal | None:
        return self.principals_by_token.get(token)

    def approver_role_for(self, capability: str) -> str:
        # absent mapping: the capability id doubles as the approver role
        return self.approver_roles.get(capability, capability)

    def journal_path(self, name: str) -> str | None:
        if self.data_dir is None:
            return None
        return str(Path(self.data_dir) / name)


def _parse_principal(entry: Mapping[str, Any]) -> tuple[str, Principal]:
    try:
        token = entry["token"]
        scope_data = entry["scope"]
        principal = Principal(
            user_id=entry["user_id"],
            tenant=entry["tenant"],
            role=entry["role"],
            scope=ScopePath(
                tenant=scope_data["tenant"],
                brand=scope_data.get("brand"),
                store=scope_data.get("store"),
                user=scope_data.get("user"),
            ),
            capability_flags=frozenset(entry.get("capability_flags", ())),
        )
    except KeyError as exc:
        raise ConfigError(f"principal entry missing {exc}: {dict(entry)!r}") from exc
    return token, principal


def load_config(path: str | Path | None = None, *, env: Mapping[str, str] | None = None) -> GatewayConfig:
    env = os.environ if env is None else env
    config_path = Path(path) if path is not None else DEFAULT_CONFIG_PATH
    try:
        with open(config_path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {config_path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse failure in {config_path}: {exc}") from exc

    gateway = doc.get("gateway", {})
    thresholds_doc = doc.get("thresholds", {})
    thresholds = ResolutionThresholds(
        tau_s=float(thresholds_doc.get("tau_s", 0.30)),
        tau_r=float(thresholds_doc.get("tau_r", 0.70)),
        margin=float(thresholds_doc.get("margin", 0.15)),
    )

    window = float(doc.get("idempotency", {}).get("window_seconds", 24 * 3600))
    if window <= 0:
        raise ConfigError("idempotency window_seconds must be positive")

    approvals_doc = doc.get("approvals", {})

    capability_entries: list[tuple[str, str]] = []
    for entry in doc.get("capabilities", []):
        patterns = entry.get("tools", [])
        if isinstance(patterns, str):
            patterns = [patterns]
        for pattern in patterns:
            capability_entries.append((entry["role"], pattern))

    principals: dict[str, Principal] = {}
    for entry in doc.get("principals", []):
        token, principal = _parse_principal(entry)
        if token in principals:
            raise ConfigError(f"duplicate token for principal {principal.user_id!r}")
        principals[token] = principal

    tenants = tuple(doc.get("tenants", {}).get("names", ()))
    if not tenants:
        tenants = tuple(sorted({p.tenant for p in principals.values()}))

    listen = env.get(ENV_LISTEN) or gateway.get("listen", "127.0.0.1:8787")
    data_dir_raw = env.get(ENV_DATA_DIR) or gateway.get("data_dir")
    data_dir = Path(data_dir_raw) if data_dir_raw else None
    if data_dir is not None:
        data_dir.mkdir(parents=True, exist_ok=True)

    fixtures_raw = gateway.get("fixtures")
    if fixtures_raw:
        fixtures_path = Path(fixtures_raw)
        if not fixtures_path.is_absolute():
            fixtures_path = config_path.parent / fixtures_path
    else:
        fixtures_path = DEFAULT_FIXTURES_PATH

    console_raw = gateway.get("console_dir")
    console_dir = Path(console_raw) if console_raw else None

    return GatewayConfig(
        listen=listen,
        data_dir=data_dir,
        fixtures_path=fixtures_path,
        thresholds=thresholds,
        idempotency_window=window,
        snapshot_expiry=float(approvals_doc.get("snapshot_expiry_seconds", 7 * 24 * 3600)),
        default_wait=float(approvals_doc.get("default_wait_seconds", 600)),
        tenants=tenants,
        capability_entries=tuple(capability_entries),
        approver_roles=dict(doc.get("approvers", {})),
        principals_by_token=principals,
        console_dir=console_dir,
    )
