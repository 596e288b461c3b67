"""Append-only hash-chained block store plus versioned world state.

The ledger is two-part: the chain of blocks (the transaction log) and the
world state derived from valid transactions. Commit-time validation runs
per transaction, in order: client signature, endorsement policy, then the
MVCC read-set check against the state as updated by earlier transactions in
the same block. Invalid transactions stay in the block with their flag set;
they apply nothing.

Hash formulas: block_hash = SHA-256(u64 height || prev_hash || data_hash);
data_hash = SHA-256(canonical transaction list); tx_id = SHA-256 of the
transaction core (channel, creator, operation, args, read set, write set,
response payload). Fixed-width digests are encoded raw; timestamps and
validity flags are outside every hash.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field, replace
from typing import Mapping

from .codec import Decoder, Encoder
from .errors import ChainMismatch, CorruptFile
from .identity import Certificate, Role, msp_validate, verify

Version = tuple[int, int]

GENESIS_PREV_HASH = b"\x00" * 32
ABSENT_VERSION: Version = (0, 0xFFFFFFFF)

CHAIN_MAGIC = b"MLEDGER1"
STATE_TAG = b"STATE"
CAS_TAG = b"CASNET"


class TxValidity(enum.IntEnum):
    PENDING = 0
    VALID = 1
    INVALID_MVCC = 2
    INVALID_ENDORSEMENT = 3
    INVALID_SIGNATURE = 4


@dataclass(frozen=True)
class WriteEntry:
    key: str
    value: bytes | None  # None marks a delete

    @property
    def is_delete(self) -> bool:
        return self.value is None


def _encode_read_set(enc: Encoder, read_set: tuple[tuple[str, Version], ...]) -> None:
    enc.count(len(read_set))
    for key, (height, index) in read_set:
        enc.str(key).u64(height).u32(index)


def _decode_read_set(dec: Decoder) -> tuple[tuple[str, Version], ...]:
    return tuple((dec.str(), (dec.u64(), dec.u32())) for _ in range(dec.count()))


def _encode_write_set(enc: Encoder, write_set: tuple[WriteEntry, ...]) -> None:
    enc.count(len(write_set))
    for entry in write_set:
        enc.str(entry.key)
        if entry.is_delete:
            enc.u8(1)
        else:
            enc.u8(0).bytes(entry.value)


def _decode_write_set(dec: Decoder) -> tuple[WriteEntry, ...]:
    entries = []
    for _ in range(dec.count()):
        key = dec.str()
        flag = dec.u8()
        if flag == 1:
            entries.append(WriteEntry(key, None))
        elif flag == 0:
            entries.append(WriteEntry(key, dec.bytes()))
        else:
            raise CorruptFile(f"bad write entry flag {flag}")
    return tuple(entries)


@dataclass(frozen=True)
class Transaction:
    tx_id: bytes
    channel_id: str
    creator: Certificate
    operation: str
    args: tuple[bytes, ...]
    read_set: tuple[tuple[str, Version], ...]
    write_set: tuple[WriteEntry, ...]
    response_payload: bytes
    endorsements: tuple[tuple[str, bytes], ...]  # (endorser_subject_id, signature)
    client_signature: bytes
    validity: TxValidity = TxValidity.PENDING

    def core_bytes(self) -> bytes:
        """tx_id preimage: everything except tx_id, endorsements, client
        signature and validity."""
        enc = (
            Encoder()
            .str(self.channel_id)
            .raw(self.creator.encode())
            .str(self.operation)
            .count(len(self.args))
        )
        for arg in self.args:
            enc.bytes(arg)
        _encode_read_set(enc, self.read_set)
        _encode_write_set(enc, self.write_set)
        enc.bytes(self.response_payload)
        return enc.done()

    def computed_tx_id(self) -> bytes:
        return hashlib.sha256(self.core_bytes()).digest()

    def endorsement_payload(self) -> bytes:
        """What each endorser signed: read set, write set, response payload."""
        return endorsement_payload_bytes(self.read_set, self.write_set,
                                         self.response_payload)

    def encode(self) -> bytes:
        enc = Encoder().raw(self.tx_id).raw(self.core_bytes())
        enc.count(len(self.endorsements))
        for subject, signature in self.endorsements:
            enc.str(subject).bytes(signature)
        enc.bytes(self.client_signature)
        return enc.done()

    @classmethod
    def decode(cls, dec: Decoder) -> "Transaction":
        tx_id = dec.raw(32)
        channel_id = dec.str()
        creator = Certificate.decode(dec)
        operation = dec.str()
        args = tuple(dec.bytes() for _ in range(dec.count()))
        read_set = _decode_read_set(dec)
        write_set = _decode_write_set(dec)
        response_payload = dec.bytes()
        endorsements = tuple((dec.str(), dec.bytes()) for _ in range(dec.count()))
        client_signature = dec.bytes()
        return cls(tx_id, channel_id, creator, operation, args, read_set,
                   write_set, response_payload, endorsements, client_signature)


def endorsement_payload_bytes(read_set, write_set, response_payload: bytes) -> bytes:
    enc = Encoder()
    _encode_read_set(enc, tuple(read_set))
    _encode_write_set(enc, tuple(write_set))
    enc.bytes(response_payload)
    return enc.done()


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: bytes
    data_hash: bytes
    timestamp: int
    transactions: tuple[Transaction, ...]
    validity_flags: tuple[TxValidity, ...]


def encode_tx_list(transactions: tuple[Transaction, ...]) -> bytes:
    enc = Encoder().count(len(transactions))
    for tx in transactions:
        enc.raw(tx.encode())
    return enc.done()


def data_hash_of(transactions: tuple[Transaction, ...]) -> bytes:
    return hashlib.sha256(encode_tx_list(transactions)).digest()


def make_block(height: int, prev_hash: bytes, timestamp: int,
               transactions: tuple[Transaction, ...]) -> Block:
    return Block(
        height=height,
        prev_hash=prev_hash,
        data_hash=data_hash_of(transactions),
        timestamp=timestamp,
        transactions=transactions,
        validity_flags=tuple(TxValidity.PENDING for _ in transactions),
    )


def make_genesis() -> Block:
    return make_block(0, GENESIS_PREV_HASH, 0, ())


def block_hash(block: Block) -> bytes:
    """SHA-256 over (height, prev_hash, data_hash); timestamp and validity
    flags are deliberately uncovered."""
    preimage = Encoder().u64(block.height).raw(block.prev_hash).raw(block.data_hash).done()
    return hashlib.sha256(preimage).digest()


def block_core_bytes(block: Block) -> bytes:
    """Header triple plus transactions: the tamper-detection surface."""
    return (
        Encoder()
        .u64(block.height)
        .raw(block.prev_hash)
        .raw(block.data_hash)
        .raw(encode_tx_list(block.transactions))
        .done()
    )


def decode_block_core(data: bytes, timestamp: int = 0) -> Block:
    dec = Decoder(data)
    height = dec.u64()
    prev_hash = dec.raw(32)
    data_hash = dec.raw(32)
    transactions = tuple(Transaction.decode(dec) for _ in range(dec.count()))
    dec.expect_end()
    return Block(height, prev_hash, data_hash, timestamp, transactions,
                 tuple(TxValidity.PENDING for _ in transactions))


def encode_block(block: Block) -> bytes:
    """Full-fidelity encoding for chain export (includes timestamp/flags)."""
    enc = Encoder().raw(block_core_bytes(block)).u64(block.timestamp)
    enc.count(len(block.validity_flags))
    for flag in block.validity_flags:
        enc.u8(int(flag))
    return enc.done()


def decode_block(data: bytes) -> Block:
    dec = Decoder(data)
    height = dec.u64()
    prev_hash = dec.raw(32)
    data_hash = dec.raw(32)
    transactions = tuple(Transaction.decode(dec) for _ in range(dec.count()))
    timestamp = dec.u64()
    flags = tuple(TxValidity(dec.u8()) for _ in range(dec.count()))
    dec.expect_end()
    if len(flags) != len(transactions):
        raise CorruptFile("validity flag count mismatch")
    txs = tuple(replace(tx, validity=flag) for tx, flag in zip(transactions, flags))
    return Block(height, prev_hash, data_hash, timestamp, txs, flags)


class WorldState:
    """key -> (value, version) map plus a canonical hash of the whole map."""

    def __init__(self) -> None:
        self.entries: dict[str, tuple[bytes, Version]] = {}

    def get(self, key: str) -> tuple[bytes, Version] | None:
        return self.entries.get(key)

    def version_of(self, key: str) -> Version:
        entry = self.entries.get(key)
        return entry[1] if entry else ABSENT_VERSION

    def apply(self, entry: WriteEntry, version: Version) -> None:
        if entry.is_delete:
            self.entries.pop(entry.key, None)
        else:
            self.entries[entry.key] = (entry.value, version)

    def items_with_prefix(self, prefix: str) -> list[tuple[str, bytes, Version]]:
        return [(k, v, ver) for k, (v, ver) in sorted(self.entries.items())
                if k.startswith(prefix)]

    def encode(self) -> bytes:
        enc = Encoder().count(len(self.entries))
        for key in sorted(self.entries):
            value, (height, index) = self.entries[key]
            enc.str(key).bytes(value).u64(height).u32(index)
        return enc.done()

    @classmethod
    def decode(cls, data: bytes) -> "WorldState":
        dec = Decoder(data)
        state = cls()
        for _ in range(dec.count()):
            key = dec.str()
            value = dec.bytes()
            version = (dec.u64(), dec.u32())
            state.entries[key] = (value, version)
        dec.expect_end()
        return state

    def state_hash(self) -> bytes:
        return hashlib.sha256(self.encode()).digest()


@dataclass
class ValidationContext:
    """Everything a committing peer needs to judge a transaction."""

    channel_id: str
    trusted_ca_keys: list[bytes]
    endorsement_k: int
    eligible_orgs: frozenset[str]
    cert_resolver: Mapping[str, Certificate]


@dataclass
class AuditRow:
    block_height: int
    tx_index: int
    tx_id: bytes
    operation: str
    creator_subject: str
    validity: TxValidity


class PeerLedger:
    def __init__(self, peer_id: str, validation: ValidationContext,
                 genesis: Block | None = None):
        self.peer_id = peer_id
        self.validation = validation
        self.chain: list[Block] = [genesis if genesis is not None else make_genesis()]
        self.world_state = WorldState()
        self.tx_index: dict[bytes, tuple[int, int]] = {}

    @property
    def height(self) -> int:
        return len(self.chain) - 1

    @property
    def tip_hash(self) -> bytes:
        return block_hash(self.chain[-1])

    def _validate_tx(self, tx: Transaction) -> TxValidity:
        if tx.computed_tx_id() != tx.tx_id:
            return TxValidity.INVALID_SIGNATURE
        if tx.channel_id != self.validation.channel_id:
            return TxValidity.INVALID_SIGNATURE
        if not any(verify(ca, tx.creator.body_bytes(), tx.creator.ca_signature)
                   for ca in self.validation.trusted_ca_keys):
            return TxValidity.INVALID_SIGNATURE
        if not verify(tx.creator.signing_public_key, tx.tx_id, tx.client_signature):
            return TxValidity.INVALID_SIGNATURE

        payload = tx.endorsement_payload()
        endorsing_orgs: set[str] = set()
        for subject, signature in tx.endorsements:
            cert = self.validation.cert_resolver.get(subject)
            if cert is None:
                continue
            if not msp_validate(cert, Role.PEER, self.validation.trusted_ca_keys):
                continue
            if cert.organization not in self.validation.eligible_orgs:
                continue
            if not verify(cert.signing_public_key, payload, signature):
                continue
            endorsing_orgs.add(cert.organization)
        if len(endorsing_orgs) < self.validation.endorsement_k:
            return TxValidity.INVALID_ENDORSEMENT

        for key, version in tx.read_set:
            if self.world_state.version_of(key) != version:
                return TxValidity.INVALID_MVCC
        return TxValidity.VALID

    def append_block(self, block: Block) -> list[tuple[bytes, TxValidity]]:
        """Validate and commit; returns the per-transaction commit report."""
        if block.height != len(self.chain):
            raise ChainMismatch(
                f"peer {self.peer_id}: expected height {len(self.chain)}, got {block.height}")
        if block.prev_hash != self.tip_hash:
            raise ChainMismatch(f"peer {self.peer_id}: prev_hash does not match tip")
        if block.data_hash != data_hash_of(block.transactions):
            raise ChainMismatch(f"peer {self.peer_id}: data_hash mismatch")

        report: list[tuple[bytes, TxValidity]] = []
        flags: list[TxValidity] = []
        for index, tx in enumerate(block.transactions):
            validity = self._validate_tx(tx)
            if validity is TxValidity.VALID:
                for entry in tx.write_set:
                    self.world_state.apply(entry, (block.height, index))
            self.tx_index[tx.tx_id] = (block.height, index)
            flags.append(validity)
            report.append((tx.tx_id, validity))

        committed = replace(
            block,
            transactions=tuple(replace(tx, validity=v)
                               for tx, v in zip(block.transactions, flags)),
            validity_flags=tuple(flags),
        )
        self.chain.append(committed)
        return report

    def get_state(self, key: str) -> tuple[bytes, Version] | None:
        return self.world_state.get(key)

    def audit_trail(self, key_prefix: str) -> list[AuditRow]:
        return audit_trail_blocks(self.chain, key_prefix)

    def replay_world_state(self) -> WorldState:
        """Independent rebuild from valid committed transactions."""
        state = WorldState()
        for block in self.chain:
            for index, tx in enumerate(block.transactions):
                if block.validity_flags[index] is TxValidity.VALID:
                    for entry in tx.write_set:
                        state.apply(entry, (block.height, index))
        return state


def audit_trail_blocks(chain: list[Block], key_prefix: str) -> list[AuditRow]:
    """Every transaction, valid or not, that touches the prefix, in chain order."""
    rows: list[AuditRow] = []
    for block in chain:
        for index, tx in enumerate(block.transactions):
            touched = any(k.startswith(key_prefix) for k, _ in tx.read_set) or \
                any(e.key.startswith(key_prefix) for e in tx.write_set)
            if touched:
                rows.append(AuditRow(block.height, index, tx.tx_id, tx.operation,
                                     tx.creator.subject_id,
                                     block.validity_flags[index]))
    return rows


@dataclass
class ChainCheck:
    ok: bool
    first_failure_height: int | None = None
    reason: str = ""


def verify_chain_blocks(chain: list[Block]) -> ChainCheck:
    if not chain:
        return ChainCheck(False, None, "empty chain")
    genesis = chain[0]
    if genesis.height != 0 or genesis.prev_hash != GENESIS_PREV_HASH \
            or genesis.transactions or genesis.data_hash != data_hash_of(()):
        return ChainCheck(False, 0, "bad genesis")
    for i, block in enumerate(chain):
        if block.height != i:
            return ChainCheck(False, i, "height gap")
        if i > 0 and block.prev_hash != block_hash(chain[i - 1]):
            return ChainCheck(False, i, "broken prev_hash link")
        if block.data_hash != data_hash_of(block.transactions):
            return ChainCheck(False, i, "data_hash mismatch")
        for tx in block.transactions:
            if tx.computed_tx_id() != tx.tx_id:
                return ChainCheck(False, i, "tx_id mismatch")
    return ChainCheck(True)


def verify_chain(ledger: PeerLedger) -> bool:
    return verify_chain_blocks(ledger.chain).ok


# --- file export / import ---------------------------------------------------

def with_integrity_footer(payload: bytes) -> bytes:
    return payload + hashlib.sha256(payload).digest()


def strip_integrity_footer(data: bytes, what: str) -> bytes:
    if len(data) < 32:
        raise CorruptFile(f"{what}: truncated")
    payload, footer = data[:-32], data[-32:]
    if hashlib.sha256(payload).digest() != footer:
        raise CorruptFile(f"{what}: integrity hash mismatch")
    return payload


def export_chain_bytes(chain: list[Block]) -> bytes:
    enc = Encoder().raw(CHAIN_MAGIC)
    for block in chain:
        enc.bytes(encode_block(block))
    return with_integrity_footer(enc.done())


def import_chain_bytes(data: bytes) -> list[Block]:
    payload = strip_integrity_footer(data, "chain file")
    if not payload.startswith(CHAIN_MAGIC):
        raise CorruptFile("chain file: bad magic")
    dec = Decoder(payload[len(CHAIN_MAGIC):])
    blocks: list[Block] = []
    while dec.remaining:
        blocks.append(decode_block(dec.bytes()))
    check = verify_chain_blocks(blocks)
    if not check.ok:
        raise CorruptFile(f"chain file: {check.reason} at height {check.first_failure_height}")
    return blocks


def export_state_bytes(state: WorldState) -> bytes:
    return with_integrity_footer(CHAIN_MAGIC + STATE_TAG + state.encode())


def import_state_bytes(data: bytes) -> WorldState:
    payload = strip_integrity_footer(data, "state file")
    if not payload.startswith(CHAIN_MAGIC + STATE_TAG):
        raise CorruptFile("state file: bad magic")
    return WorldState.decode(payload[len(CHAIN_MAGIC) + len(STATE_TAG):])
