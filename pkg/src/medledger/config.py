"""Channel configuration file: INI-style key=value sections.

Example:

    [channel]
    channel_id = ehr-main
    orderer_id = orderer0
    ordering = solo
    member_orgs = orgA, orgB
    endorsement_k = auto
    max_block_txs = 1
    block_timeout_ticks = 5

    [tokens]
    initial_balance = 100
    default_price = 10

    [cas]
    replication_factor = 3
    nodes = ipfs1:orgA, ipfs2:orgA, ipfs3:orgB, ipfs4:orgB, ipfs5:orgB

`endorsement_k = auto` means ceil(n/2) over the member orgs. Ordering modes
raft and kafka are recognized names but rejected at startup; only solo runs.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field

from .errors import ConfigError

DEFAULT_CONFIG_TEXT = """\
[channel]
channel_id = ehr-main
orderer_id = orderer0
ordering = solo
member_orgs = orgA, orgB
endorsement_k = auto
max_block_txs = 1
block_timeout_ticks = 5

[tokens]
initial_balance = 100
default_price = 10

[cas]
replication_factor = 3
nodes = ipfs1:orgA, ipfs2:orgA, ipfs3:orgB, ipfs4:orgB, ipfs5:orgB
"""

ORDERING_MODES = ("solo", "raft", "kafka")


@dataclass
class ChannelSpec:
    channel_id: str = "ehr-main"
    orderer_id: str = "orderer0"
    ordering: str = "solo"
    member_orgs: list[str] = field(default_factory=lambda: ["orgA", "orgB"])
    endorsement_k: int | None = None  # None = auto = ceil(n/2)
    max_block_txs: int = 1
    block_timeout_ticks: int = 5
    initial_balance: int = 100
    default_price: int = 10
    replication_factor: int = 3
    cas_nodes: list[tuple[str, str]] = field(
        default_factory=lambda: [("ipfs1", "orgA"), ("ipfs2", "orgA"),
                                 ("ipfs3", "orgB"), ("ipfs4", "orgB"),
                                 ("ipfs5", "orgB")])

    @property
    def k(self) -> int:
        if self.endorsement_k is not None:
            return self.endorsement_k
        return math.ceil(len(self.member_orgs) / 2)

    def validate(self) -> "ChannelSpec":
        if self.ordering not in ORDERING_MODES:
            raise ConfigError(f"unknown ordering mode {self.ordering!r}")
        if not self.member_orgs:
            raise ConfigError("at least one member org is required")
        if len(set(self.member_orgs)) != len(self.member_orgs):
            raise ConfigError("duplicate member org")
        if not 1 <= self.k <= len(self.member_orgs):
            raise ConfigError(f"endorsement_k={self.k} out of range for "
                              f"{len(self.member_orgs)} orgs")
        if self.max_block_txs < 1:
            raise ConfigError("max_block_txs must be >= 1")
        if self.block_timeout_ticks < 1:
            raise ConfigError("block_timeout_ticks must be >= 1")
        if self.replication_factor < 1:
            raise ConfigError("replication_factor must be >= 1")
        if not self.cas_nodes:
            raise ConfigError("at least one cas node is required")
        if len({n for n, _ in self.cas_nodes}) != len(self.cas_nodes):
            raise ConfigError("duplicate cas node id")
        return self


def _split_csv(raw: str) -> list[str]:
    return [item.strip() for item in raw.split(",") if item.strip()]


def parse_channel_config(text: str) -> ChannelSpec:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"bad channel config: {exc}") from exc

    spec = ChannelSpec()
    try:
        if parser.has_section("channel"):
            sec = parser["channel"]
            spec.channel_id = sec.get("channel_id", spec.channel_id)
            spec.orderer_id = sec.get("orderer_id", spec.orderer_id)
            spec.ordering = sec.get("ordering", spec.ordering).lower()
            if "member_orgs" in sec:
                spec.member_orgs = _split_csv(sec["member_orgs"])
            raw_k = sec.get("endorsement_k", "auto").strip().lower()
            spec.endorsement_k = None if raw_k == "auto" else int(raw_k)
            spec.max_block_txs = sec.getint("max_block_txs", spec.max_block_txs)
            spec.block_timeout_ticks = sec.getint("block_timeout_ticks",
                                                  spec.block_timeout_ticks)
        if parser.has_section("tokens"):
            sec = parser["tokens"]
            spec.initial_balance = sec.getint("initial_balance", spec.initial_balance)
            spec.default_price = sec.getint("default_price", spec.default_price)
        if parser.has_section("cas"):
            sec = parser["cas"]
            spec.replication_factor = sec.getint("replication_factor",
                                                 spec.replication_factor)
            if "nodes" in sec:
                nodes = []
                for item in _split_csv(sec["nodes"]):
                    if ":" not in item:
                        raise ConfigError(f"cas node must be id:org, got {item!r}")
                    node_id, org = item.split(":", 1)
                    nodes.append((node_id.strip(), org.strip()))
                spec.cas_nodes = nodes
    except ValueError as exc:
        raise ConfigError(f"bad channel config value: {exc}") from exc

    return spec.validate()


def load_channel_config(path: str) -> ChannelSpec:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_channel_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read channel config {path!r}: {exc}") from exc


def default_channel_config() -> ChannelSpec:
    return parse_channel_config(DEFAULT_CONFIG_TEXT)
