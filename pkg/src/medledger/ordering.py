"""Proposal endorsement, transaction assembly, solo ordering and delivery.

Endorsers simulate chaincode against their current world state without
committing; a chaincode failure becomes a signed REJECT payload with no
write effects. Assembly enforces the k-of-n distinct-org endorsement policy
and rejects non-deterministic endorsements outright. The solo orderer cuts
blocks FIFO by size or by timeout ticks and is the only ordering mode built;
raft/kafka config values are recognized but refused.
"""

from __future__ import annotations

from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

from .chaincode import StateView, encode_reject, encode_result
from .codec import Encoder
from .errors import (
    BadSignature,
    ChaincodeError,
    ChainMismatch,
    DeliveryMismatch,
    MalformedTransaction,
    NotEligible,
    PolicyUnsatisfied,
    NondeterministicEndorsement,
)
from .identity import Certificate, KeyPair, verify
from .ledger import (
    Block,
    PeerLedger,
    Transaction,
    TxValidity,
    ValidationContext,
    WriteEntry,
    Version,
    block_hash,
    endorsement_payload_bytes,
    make_block,
)


@dataclass
class LogicalClock:
    now: int = 0

    def tick(self) -> int:
        self.now += 1
        return self.now


@dataclass(frozen=True)
class EndorsementPolicy:
    k: int
    eligible_orgs: tuple[str, ...]


@dataclass
class ChannelConfig:
    channel_id: str
    member_orgs: list[str]
    trusted_ca_keys: list[bytes]
    endorsement_policy: EndorsementPolicy
    max_block_txs: int
    block_timeout_ticks: int
    orderer_id: str
    initial_balance: int = 100
    default_price: int = 10

    def validation_context(self, cert_resolver) -> ValidationContext:
        return ValidationContext(
            channel_id=self.channel_id,
            trusted_ca_keys=self.trusted_ca_keys,
            endorsement_k=self.endorsement_policy.k,
            eligible_orgs=frozenset(self.endorsement_policy.eligible_orgs),
            cert_resolver=cert_resolver,
        )


@dataclass(frozen=True)
class Proposal:
    channel_id: str
    creator: Certificate
    operation: str
    args: tuple[bytes, ...]
    client_signature: bytes

    def signed_bytes(self) -> bytes:
        enc = Encoder().str(self.channel_id).str(self.operation).count(len(self.args))
        for arg in self.args:
            enc.bytes(arg)
        return enc.done()


def make_proposal(channel_id: str, creator: Certificate, signing_key: KeyPair,
                  operation: str, args: tuple[bytes, ...]) -> Proposal:
    unsigned = Proposal(channel_id, creator, operation, args, b"")
    return Proposal(channel_id, creator, operation, args,
                    signing_key.sign(unsigned.signed_bytes()))


@dataclass(frozen=True)
class Endorsement:
    endorser_subject_id: str
    endorser_org: str
    read_set: tuple[tuple[str, Version], ...]
    write_set: tuple[WriteEntry, ...]
    response_payload: bytes
    signature: bytes


@dataclass
class Peer:
    """Endorsing + committing peer: hosts the ledger and the chaincode."""

    peer_id: str
    org: str
    cert: Certificate
    signing_key: KeyPair
    ledger: PeerLedger
    chaincode: object  # anything with execute(operation, args, creator, view)

    def endorse(self, proposal: Proposal, policy: EndorsementPolicy) -> Endorsement:
        """Simulate without committing; failures become REJECT payloads."""
        creator = proposal.creator
        trusted = self.ledger.validation.trusted_ca_keys
        if not any(verify(ca, creator.body_bytes(), creator.ca_signature)
                   for ca in trusted):
            raise BadSignature(f"creator cert of {creator.subject_id!r} not trusted")
        if not verify(creator.signing_public_key, proposal.signed_bytes(),
                      proposal.client_signature):
            raise BadSignature("proposal signature invalid")
        if self.org not in policy.eligible_orgs:
            raise NotEligible(f"org {self.org!r} is not an eligible endorser")

        view = StateView(self.ledger.world_state)
        try:
            result = self.chaincode.execute(proposal.operation, proposal.args,
                                            creator, view)
            read_set, write_set = view.read_set(), view.write_set()
            payload = encode_result(result)
        except ChaincodeError as err:
            read_set, write_set = (), ()
            payload = encode_reject(err)
        signature = self.signing_key.sign(
            endorsement_payload_bytes(read_set, write_set, payload))
        return Endorsement(self.cert.subject_id, self.org, read_set, write_set,
                           payload, signature)


def assemble_transaction(proposal: Proposal, endorsements: list[Endorsement],
                         policy: EndorsementPolicy,
                         client_signing_key: KeyPair) -> Transaction:
    """Check the k-of-n policy and build a PENDING transaction."""
    if not endorsements:
        raise PolicyUnsatisfied("no endorsements")
    first = endorsements[0]
    for other in endorsements[1:]:
        if (other.read_set, other.write_set, other.response_payload) != \
                (first.read_set, first.write_set, first.response_payload):
            raise NondeterministicEndorsement(
                f"endorsers {first.endorser_subject_id!r} and "
                f"{other.endorser_subject_id!r} disagree")
    orgs = {e.endorser_org for e in endorsements if e.endorser_org in policy.eligible_orgs}
    if len(orgs) < policy.k:
        raise PolicyUnsatisfied(f"{len(orgs)} orgs endorsed, policy requires {policy.k}")

    tx = Transaction(
        tx_id=b"\x00" * 32,
        channel_id=proposal.channel_id,
        creator=proposal.creator,
        operation=proposal.operation,
        args=proposal.args,
        read_set=first.read_set,
        write_set=first.write_set,
        response_payload=first.response_payload,
        endorsements=tuple((e.endorser_subject_id, e.signature) for e in endorsements),
        client_signature=b"",
    )
    tx_id = tx.computed_tx_id()
    return replace(tx, tx_id=tx_id, client_signature=client_signing_key.sign(tx_id))


class SoloOrderer:
    """Single trusted orderer: FIFO queue, deterministic block cutting."""

    def __init__(self, orderer_id: str, tip: Block, clock: LogicalClock,
                 max_block_txs: int, block_timeout_ticks: int):
        self.orderer_id = orderer_id
        self.clock = clock
        self.max_block_txs = max_block_txs
        self.block_timeout_ticks = block_timeout_ticks
        self.pending: deque[tuple[Transaction, int]] = deque()
        self.next_height = tip.height + 1
        self.tip_hash = block_hash(tip)
        self._seen: set[bytes] = set()

    def submit(self, tx: Transaction) -> None:
        if tx.computed_tx_id() != tx.tx_id:
            raise MalformedTransaction("tx_id does not match content")
        if tx.tx_id in self._seen:
            raise MalformedTransaction(f"duplicate tx {tx.tx_id.hex()[:16]}")
        self._seen.add(tx.tx_id)
        self.pending.append((tx, self.clock.now))

    def _should_cut(self) -> bool:
        if not self.pending:
            return False
        if len(self.pending) >= self.max_block_txs:
            return True
        oldest_enqueued = self.pending[0][1]
        return self.clock.now - oldest_enqueued >= self.block_timeout_ticks

    def tick(self) -> Block | None:
        """Advance the clock; emit a block if a cut rule fires."""
        self.clock.tick()
        if not self._should_cut():
            return None
        count = min(len(self.pending), self.max_block_txs)
        txs = tuple(self.pending.popleft()[0] for _ in range(count))
        block = make_block(self.next_height, self.tip_hash, self.clock.now, txs)
        self.next_height += 1
        self.tip_hash = block_hash(block)
        return block


@dataclass
class DeliveryResult:
    peer_id: str
    report: list[tuple[bytes, TxValidity]] | None
    error: str | None = None


def deliver(block: Block, peers: list[Peer], parallel: bool = False) -> list[DeliveryResult]:
    """Commit on every peer; all successful reports must agree."""
    def commit(peer: Peer) -> DeliveryResult:
        try:
            return DeliveryResult(peer.peer_id, peer.ledger.append_block(block))
        except ChainMismatch as err:
            return DeliveryResult(peer.peer_id, None, error=str(err))

    if parallel and len(peers) > 1:
        with ThreadPoolExecutor(max_workers=len(peers)) as pool:
            results = list(pool.map(commit, peers))
    else:
        results = [commit(peer) for peer in peers]

    reports = [r.report for r in results if r.report is not None]
    if reports and any(r != reports[0] for r in reports[1:]):
        raise DeliveryMismatch(f"peers disagree on block {block.height}")
    return results
