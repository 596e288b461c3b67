"""Platform wiring: CAs, peers, orderer, CAS and the client-side flows.

One Platform is a complete single-channel network simulation. All randomness
flows through one seeded generator and all time through one logical clock, so
a fixed sequence of calls replays byte-identically. The platform also plays
the client parties: it keeps every enrolled subject's key material in a
wallet and drives the full propose/endorse/assemble/order/deliver pipeline.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from random import Random

from . import envelope
from .cas import CasNetwork, Cid, StorageNode
from .chaincode import (
    EhrChaincode,
    RecordEntry,
    decode_balance,
    decode_response,
    is_reject,
    u64_arg_bytes,
    NEVER,
)
from .codec import Decoder
from .config import ChannelSpec
from .errors import (
    ChainMismatch,
    ConfigError,
    CorruptFile,
    DeliveryMismatch,
    MedLedgerError,
    OrderingNotImplemented,
    TxInvalidated,
    UnknownRecord,
)
from .identity import CertAuthority, Certificate, KeyPair, Role
from .ledger import (
    AuditRow,
    Block,
    PeerLedger,
    block_hash,
    Transaction,
    TxValidity,
    WorldState,
    audit_trail_blocks,
    export_chain_bytes,
    export_state_bytes,
    import_chain_bytes,
    import_state_bytes,
    make_genesis,
    verify_chain_blocks,
    CAS_TAG,
    CHAIN_MAGIC,
    strip_integrity_footer,
    with_integrity_footer,
)
from .ordering import (
    ChannelConfig,
    EndorsementPolicy,
    LogicalClock,
    Peer,
    SoloOrderer,
    assemble_transaction,
    deliver,
    make_proposal,
)

CHAIN_FILE = "chain.bin"
STATE_FILE = "state.bin"
CAS_FILE = "cas.bin"

REGISTER_OP_FOR_ROLE = {
    Role.HOSPITAL: "register_hospital",
    Role.PATIENT: "register_patient",
    Role.PRACTITIONER: "register_practitioner",
    Role.RESEARCHER: "register_researcher",
}


@dataclass
class WalletEntry:
    cert: Certificate
    signing: KeyPair
    agreement: KeyPair


@dataclass
class InvokeResult:
    result: bytes
    tx_id: bytes
    block_height: int
    validity: TxValidity


@dataclass
class FetchResult:
    plaintext: bytes
    cid: Cid
    provider_hospital_id: str
    tx_id: bytes
    block_height: int


class Platform:
    def __init__(self, spec: ChannelSpec, seed: int, parallel_delivery: bool = False):
        spec.validate()
        if spec.ordering != "solo":
            raise OrderingNotImplemented(
                f"ordering mode {spec.ordering!r} is recognized but not implemented; "
                "only 'solo' is available")
        self.spec = spec
        self.seed = seed
        self.parallel_delivery = parallel_delivery
        self.rng = Random(seed)
        self.clock = LogicalClock()
        self.directory: dict[str, Certificate] = {}
        self.wallet: dict[str, WalletEntry] = {}
        # plaintext/record-key material generated client-side, kept so the
        # test harness can scan transcripts and on-chain bytes for leaks
        self.secrets: list[bytes] = []

        self.cas = CasNetwork(
            [StorageNode(node_id, org) for node_id, org in spec.cas_nodes],
            spec.replication_factor,
        )

        self.cert_authorities: dict[str, CertAuthority] = {}
        for org in spec.member_orgs:
            self.cert_authorities[org] = CertAuthority.create(f"ca.{org}", self.rng)

        self.config = ChannelConfig(
            channel_id=spec.channel_id,
            member_orgs=list(spec.member_orgs),
            trusted_ca_keys=[self.cert_authorities[o].public_key for o in spec.member_orgs],
            endorsement_policy=EndorsementPolicy(spec.k, tuple(spec.member_orgs)),
            max_block_txs=spec.max_block_txs,
            block_timeout_ticks=spec.block_timeout_ticks,
            orderer_id=spec.orderer_id,
            initial_balance=spec.initial_balance,
            default_price=spec.default_price,
        )

        genesis = make_genesis()
        self.peers: list[Peer] = []
        for org in spec.member_orgs:
            peer_id = f"peer0.{org}"
            cert, signing, _ = self._enroll_infra(peer_id, org, Role.PEER)
            ledger = PeerLedger(peer_id, self.config.validation_context(self.directory),
                                genesis)
            chaincode = EhrChaincode(self.config.trusted_ca_keys, spec.initial_balance)
            self.peers.append(Peer(peer_id, org, cert, signing, ledger, chaincode))

        self._enroll_infra(spec.orderer_id, spec.member_orgs[0], Role.ORDERER)
        self.orderer = SoloOrderer(spec.orderer_id, genesis, self.clock,
                                   spec.max_block_txs, spec.block_timeout_ticks)

    def _enroll_infra(self, subject_id: str, org: str, role: Role):
        ca = self.cert_authorities[org]
        cert, signing, agreement = ca.enroll(subject_id, org, role, self.rng,
                                             issued_at=self.clock.now)
        self.directory[subject_id] = cert
        self.wallet[subject_id] = WalletEntry(cert, signing, agreement)
        return cert, signing, agreement

    # --- identities ---------------------------------------------------------

    def enroll(self, subject_id: str, org: str, role: Role) -> Certificate:
        if org not in self.cert_authorities:
            raise ConfigError(f"no certificate authority for org {org!r}")
        cert, *_ = self._enroll_infra(subject_id, org, role)
        return cert

    def _wallet(self, subject_id: str) -> WalletEntry:
        entry = self.wallet.get(subject_id)
        if entry is None:
            raise ConfigError(f"unknown subject {subject_id!r} (not enrolled)")
        return entry

    # --- transaction pipeline -------------------------------------------------

    def _eligible_peers(self) -> list[Peer]:
        eligible = set(self.config.endorsement_policy.eligible_orgs)
        return [p for p in self.peers if p.org in eligible]

    def submit_invocation(self, creator_id: str, operation: str,
                          args: tuple[bytes, ...]) -> Transaction:
        """Endorse, assemble and enqueue without ticking the orderer.

        Raises the chaincode error if endorsement rejected the invocation.
        """
        entry = self._wallet(creator_id)
        full_args = tuple(args) + (u64_arg_bytes(self.clock.now),)
        proposal = make_proposal(self.config.channel_id, entry.cert, entry.signing,
                                 operation, full_args)
        policy = self.config.endorsement_policy
        endorsements = [peer.endorse(proposal, policy) for peer in self._eligible_peers()]
        if endorsements and is_reject(endorsements[0].response_payload):
            decode_response(endorsements[0].response_payload)  # raises
        tx = assemble_transaction(proposal, endorsements, policy, entry.signing)
        self.orderer.submit(tx)
        return tx

    def run_ticks(self, count: int = 1) -> list[Block]:
        """Advance the orderer clock, delivering any blocks it cuts."""
        delivered = []
        for _ in range(count):
            block = self.orderer.tick()
            if block is not None:
                self._deliver(block)
                delivered.append(block)
        return delivered

    def _deliver(self, block: Block) -> list[tuple[bytes, TxValidity]]:
        results = deliver(block, self.peers, parallel=self.parallel_delivery)
        for result in results:
            if result.error is not None:
                raise ChainMismatch(result.error)
        self._post_commit_checks()
        return results[0].report if results else []

    def _post_commit_checks(self) -> None:
        tips = {peer.ledger.tip_hash for peer in self.peers}
        if len(tips) > 1:
            raise DeliveryMismatch("peer tip hashes diverged")
        if not self.token_conservation_holds():
            raise DeliveryMismatch("token conservation violated")

    def invoke(self, creator_id: str, operation: str,
               args: tuple[bytes, ...]) -> InvokeResult:
        """Full pipeline: endorse, order, deliver; waits for the commit."""
        tx = self.submit_invocation(creator_id, operation, args)
        budget = self.config.block_timeout_ticks * (len(self.orderer.pending) + 2) + 2
        for _ in range(budget):
            block = self.orderer.tick()
            if block is None:
                continue
            report = self._deliver(block)
            for tx_id, validity in report:
                if tx_id == tx.tx_id:
                    if validity is not TxValidity.VALID:
                        raise TxInvalidated(
                            f"{operation} invalidated: {validity.name}")
                    committed = next(t for t in block.transactions
                                     if t.tx_id == tx.tx_id)
                    return InvokeResult(decode_response(committed.response_payload),
                                        tx.tx_id, block.height, validity)
        raise MedLedgerError("orderer never cut a block for the transaction")

    # --- EHR flows ------------------------------------------------------------

    def register(self, subject_id: str) -> InvokeResult:
        entry = self._wallet(subject_id)
        op = REGISTER_OP_FOR_ROLE.get(entry.cert.role)
        if op is None:
            raise ConfigError(f"role {entry.cert.role.name} cannot register on-chain")
        return self.invoke(subject_id, op, (entry.cert.encode(),))

    def upload(self, patient_id: str, hospital_id: str, plaintext: bytes,
               metadata: str = "") -> tuple[str, Cid, InvokeResult]:
        hospital = self._wallet(hospital_id)
        patient_cert = self.directory.get(patient_id)
        if patient_cert is None:
            raise ConfigError(f"unknown patient {patient_id!r} (not enrolled)")

        record_key = envelope.generate_record_key(self.rng)
        self.secrets.append(record_key.key_bytes)
        self.secrets.append(plaintext)
        bundle = envelope.seal(plaintext, record_key, hospital.signing,
                               hospital_id, self.rng)
        cid = self.cas.put(bundle.encode())
        provider_signature = envelope.sign_cid_digest(hospital.signing, cid.digest)
        wrapped_for_patient = envelope.wrap_key(
            record_key, patient_cert.encryption_public_key, self.rng)

        result = self.invoke(hospital_id, "upload_record", (
            patient_id.encode(),
            hospital_id.encode(),
            cid.text.encode(),
            wrapped_for_patient,
            provider_signature,
            metadata.encode(),
        ))
        return result.result.decode("utf-8"), cid, result

    def _record_entry(self, record_id: str) -> RecordEntry:
        state = self.peers[0].ledger.world_state.get("record/" + record_id)
        if state is None:
            raise UnknownRecord(record_id)
        return RecordEntry.from_bytes(state[0])

    def grant(self, owner_id: str, record_id: str, grantee_id: str,
              price: int | None = None, expires_at: int | None = None) -> InvokeResult:
        """Owner re-wraps the record key for the grantee and grants access.

        The owner's wrapped key is read locally (their own material); only the
        grant itself becomes a ledger transaction.
        """
        owner = self._wallet(owner_id)
        grantee_cert = self.directory.get(grantee_id)
        if grantee_cert is None:
            raise ConfigError(f"unknown grantee {grantee_id!r} (not enrolled)")
        entry = self._record_entry(record_id)
        wrapped_for_owner = entry.wrapped_keys.get(owner_id)
        if wrapped_for_owner is None:
            raise UnknownRecord(f"{owner_id!r} holds no key for {record_id}")
        record_key = envelope.unwrap_key(wrapped_for_owner, owner.agreement)
        wrapped_for_grantee = envelope.wrap_key(
            record_key, grantee_cert.encryption_public_key, self.rng)

        return self.invoke(owner_id, "grant_access", (
            record_id.encode(),
            grantee_id.encode(),
            wrapped_for_grantee,
            u64_arg_bytes(NEVER if expires_at is None else expires_at),
            u64_arg_bytes(self.config.default_price if price is None else price),
        ))

    def fetch(self, requester_id: str, record_id: str) -> FetchResult:
        """Authorized retrieval: on-chain query, CAS get, unwrap, open."""
        requester = self._wallet(requester_id)
        result = self.invoke(requester_id, "get_record",
                             (record_id.encode(), requester_id.encode()))
        dec = Decoder(result.result)
        cid = Cid.parse(dec.str())
        wrapped_key = dec.bytes()
        provider_hospital_id = dec.str()
        provider_signature = dec.bytes()
        dec.expect_end()

        provider_cert = self.directory[provider_hospital_id]
        if not envelope.verify_cid_signature(provider_cert.signing_public_key,
                                             cid.digest, provider_signature):
            raise MedLedgerError("on-chain provider signature does not verify")
        content = self.cas.get(cid)
        bundle = envelope.Bundle.from_bytes(content)
        record_key = envelope.unwrap_key(wrapped_key, requester.agreement)
        plaintext = envelope.open_bundle(bundle, record_key,
                                         provider_cert.signing_public_key)
        return FetchResult(plaintext, cid, provider_hospital_id,
                           result.tx_id, result.block_height)

    # --- queries (pure, local) -------------------------------------------------

    def balance_of(self, subject_id: str) -> int | None:
        state = self.peers[0].ledger.world_state.get("account/" + subject_id)
        return decode_balance(state[0]) if state else None

    def balances(self) -> dict[str, int]:
        out = {}
        for key, value, _ in self.peers[0].ledger.world_state.items_with_prefix("account/"):
            out[key[len("account/"):]] = decode_balance(value)
        return out

    def records_of(self, patient_id: str) -> list[str]:
        out = []
        for _, value, _ in self.peers[0].ledger.world_state.items_with_prefix("record/"):
            entry = RecordEntry.from_bytes(value)
            if entry.owner_patient_id == patient_id:
                out.append(entry.record_id)
        return out

    def record_owner(self, record_id: str) -> str:
        return self._record_entry(record_id).owner_patient_id

    def audit(self, record_id: str) -> list[AuditRow]:
        rows = self.peers[0].ledger.audit_trail("record/" + record_id)
        if not rows:
            raise UnknownRecord(record_id)
        return rows

    def token_conservation_holds(self) -> bool:
        balances = self.balances()
        expected = self.spec.initial_balance * len(balances)
        return sum(balances.values()) == expected

    @property
    def tip_hash(self) -> bytes:
        return self.peers[0].ledger.tip_hash

    @property
    def chain_height(self) -> int:
        return self.peers[0].ledger.height

    def state_hash(self) -> bytes:
        return self.peers[0].ledger.world_state.state_hash()

    def verify_chain(self) -> bool:
        return verify_chain_blocks(self.peers[0].ledger.chain).ok

    # --- export ---------------------------------------------------------------

    def export_state(self, directory: str) -> list[str]:
        os.makedirs(directory, exist_ok=True)
        ledger = self.peers[0].ledger
        written = []
        for name, payload in (
            (CHAIN_FILE, export_chain_bytes(ledger.chain)),
            (STATE_FILE, export_state_bytes(ledger.world_state)),
            (CAS_FILE, export_cas_bytes(self.cas)),
        ):
            path = os.path.join(directory, name)
            with open(path, "wb") as fh:
                fh.write(payload)
            written.append(path)
        return written


def export_cas_bytes(cas: CasNetwork) -> bytes:
    return with_integrity_footer(CHAIN_MAGIC + CAS_TAG + cas.encode())


def import_cas_bytes(data: bytes) -> CasNetwork:
    payload = strip_integrity_footer(data, "cas file")
    if not payload.startswith(CHAIN_MAGIC + CAS_TAG):
        raise CorruptFile("cas file: bad magic")
    return CasNetwork.decode(payload[len(CHAIN_MAGIC) + len(CAS_TAG):])


@dataclass
class LedgerView:
    """Read-only network state rebuilt from an export directory."""

    chain: list[Block]
    world_state: WorldState
    cas: CasNetwork | None

    @classmethod
    def load(cls, directory: str) -> "LedgerView":
        def read(name: str) -> bytes:
            path = os.path.join(directory, name)
            try:
                with open(path, "rb") as fh:
                    return fh.read()
            except OSError as exc:
                raise CorruptFile(f"cannot read {path!r}: {exc}") from exc

        chain = import_chain_bytes(read(CHAIN_FILE))
        world_state = import_state_bytes(read(STATE_FILE))
        cas_path = os.path.join(directory, CAS_FILE)
        cas = import_cas_bytes(read(CAS_FILE)) if os.path.exists(cas_path) else None
        return cls(chain, world_state, cas)

    @property
    def tip_hash(self) -> bytes:
        return block_hash(self.chain[-1])

    def audit(self, record_id: str) -> list[AuditRow]:
        rows = audit_trail_blocks(self.chain, "record/" + record_id)
        if not rows:
            raise UnknownRecord(record_id)
        return rows

    def save_cas(self, directory: str) -> None:
        if self.cas is None:
            raise CorruptFile("no cas inventory loaded")
        with open(os.path.join(directory, CAS_FILE), "wb") as fh:
            fh.write(export_cas_bytes(self.cas))
