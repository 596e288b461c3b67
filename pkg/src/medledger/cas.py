"""Content-addressed replicated store with explicit pinning.

Content is keyed by its SHA-256 digest, so mutation under an existing CID is
unrepresentable. Replica placement is deterministic: the lowest node ids in
byte order among live nodes, up to the configured replication factor.
Liveness toggling and corruption injection exist for failure scenarios.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .codec import Decoder, Encoder
from .errors import (
    CorruptFile,
    IntegrityFailure,
    NoLiveNodes,
    NodeDown,
    NotFound,
    UnknownNode,
)


@dataclass(frozen=True, order=True)
class Cid:
    digest: bytes

    def __post_init__(self) -> None:
        if len(self.digest) != 32:
            raise ValueError("cid digest must be 32 bytes")

    @property
    def text(self) -> str:
        return "sha256:" + self.digest.hex()

    @classmethod
    def parse(cls, text: str) -> "Cid":
        if not text.startswith("sha256:"):
            raise ValueError(f"bad cid: {text!r}")
        hexpart = text[len("sha256:"):]
        if len(hexpart) != 64 or hexpart != hexpart.lower():
            raise ValueError(f"bad cid: {text!r}")
        return cls(bytes.fromhex(hexpart))

    def __str__(self) -> str:
        return self.text


def cid_of(content: bytes) -> Cid:
    return Cid(hashlib.sha256(content).digest())


@dataclass
class StorageNode:
    node_id: str
    operator_org: str
    alive: bool = True
    pinned: dict[Cid, bytes] = field(default_factory=dict)


class CasNetwork:
    def __init__(self, nodes: list[StorageNode], replication_factor: int):
        if replication_factor < 1:
            raise ValueError("replication factor must be >= 1")
        self.nodes: dict[str, StorageNode] = {}
        for node in nodes:
            if node.node_id in self.nodes:
                raise ValueError(f"duplicate node id {node.node_id!r}")
            self.nodes[node.node_id] = node
        self.replication_factor = replication_factor
        # (node_id, cid) pairs whose stored bytes failed the read-time re-hash
        self.corruption_events: list[tuple[str, Cid]] = []

    def _node(self, node_id: str) -> StorageNode:
        node = self.nodes.get(node_id)
        if node is None:
            raise UnknownNode(node_id)
        return node

    def _live_sorted(self) -> list[StorageNode]:
        return [self.nodes[nid] for nid in sorted(self.nodes) if self.nodes[nid].alive]

    def put(self, content: bytes) -> Cid:
        """Pin on min(r, live) lowest-id live nodes; idempotent."""
        live = self._live_sorted()
        if not live:
            raise NoLiveNodes("no live storage node")
        cid = cid_of(content)
        for node in live[: min(self.replication_factor, len(live))]:
            node.pinned[cid] = content
        return cid

    def get(self, cid: Cid) -> bytes:
        """Read from any live replica, re-hashing before returning.

        Corrupt replicas are skipped (and recorded) as long as a clean one
        remains; IntegrityFailure is raised only when every live copy is bad.
        """
        found_corrupt = False
        for node in self._live_sorted():
            if cid not in node.pinned:
                continue
            content = node.pinned[cid]
            if cid_of(content) == cid:
                return content
            found_corrupt = True
            self.corruption_events.append((node.node_id, cid))
        if found_corrupt:
            raise IntegrityFailure(f"all live replicas of {cid} are corrupt")
        raise NotFound(str(cid))

    def pin(self, cid: Cid, node_id: str) -> None:
        """Copy content to the named node from some live clean replica."""
        target = self._node(node_id)
        if not target.alive:
            raise NodeDown(node_id)
        content = self.get(cid)
        target.pinned[cid] = content

    def unpin(self, cid: Cid, node_id: str) -> None:
        node = self._node(node_id)
        if not node.alive:
            raise NodeDown(node_id)
        if cid not in node.pinned:
            raise NotFound(f"{cid} not pinned on {node_id}")
        del node.pinned[cid]

    def set_node_alive(self, node_id: str, alive: bool) -> None:
        self._node(node_id).alive = alive

    def inject_corruption(self, node_id: str, cid: Cid, bad_content: bytes) -> None:
        """Failure injection: overwrite a node's stored bytes in place."""
        node = self._node(node_id)
        if cid not in node.pinned:
            raise NotFound(f"{cid} not pinned on {node_id}")
        node.pinned[cid] = bad_content

    def pin_locations(self, cid: Cid) -> list[str]:
        return [nid for nid in sorted(self.nodes) if cid in self.nodes[nid].pinned]

    # --- snapshot export/import ---------------------------------------

    def encode(self) -> bytes:
        enc = Encoder().u32(self.replication_factor).count(len(self.nodes))
        for nid in sorted(self.nodes):
            node = self.nodes[nid]
            enc.str(node.node_id).str(node.operator_org).u8(1 if node.alive else 0)
            enc.count(len(node.pinned))
            for cid in sorted(node.pinned):
                enc.raw(cid.digest).bytes(node.pinned[cid])
        return enc.done()

    @classmethod
    def decode(cls, data: bytes) -> "CasNetwork":
        dec = Decoder(data)
        replication = dec.u32()
        if replication < 1:
            raise CorruptFile("bad replication factor")
        nodes = []
        for _ in range(dec.count()):
            node = StorageNode(node_id=dec.str(), operator_org=dec.str(),
                               alive=dec.u8() == 1)
            for _ in range(dec.count()):
                cid = Cid(dec.raw(32))
                node.pinned[cid] = dec.bytes()
            nodes.append(node)
        dec.expect_end()
        return cls(nodes, replication)
