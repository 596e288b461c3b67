"""EHR chaincode: registration, record upload, access grants, retrieval.

Runs inside endorsement against a read view of the world state. Reads are
served from committed state only (writes are buffered, not read back), every
read is recorded with its observed version, and execution is deterministic
given the view and the arguments: the current logical tick travels as the
final argument of every invocation rather than being sampled per endorser.

World-state namespaces: hospital/, patient/, practitioner/, researcher/,
record/, grant/, account/. Values are canonical encodings; accounts are a
bare u64 balance.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

from .cas import Cid
from .codec import Decoder, Encoder, decode_str_map, encode_str_map
from .errors import (
    AccessDenied,
    AlreadyRegistered,
    BadProviderSignature,
    BadRequest,
    ChaincodeError,
    CreatorNotProvider,
    InsufficientTokens,
    InvalidIdentity,
    NotOwner,
    UnknownAccount,
    UnknownGrantee,
    UnknownHospital,
    UnknownPatient,
    UnknownRecord,
    chaincode_error,
)
from .identity import Certificate, Role, msp_validate, verify
from .ledger import Version, WorldState, WriteEntry

NEVER = 0xFFFFFFFFFFFFFFFF

ROLE_NAMESPACE = {
    Role.HOSPITAL: "hospital/",
    Role.PATIENT: "patient/",
    Role.PRACTITIONER: "practitioner/",
    Role.RESEARCHER: "researcher/",
}

# lookup order for grant_access grantees, fixed for determinism
GRANTEE_NAMESPACES = ("practitioner/", "researcher/", "hospital/")

REGISTER_OPS = {
    "register_hospital": Role.HOSPITAL,
    "register_patient": Role.PATIENT,
    "register_practitioner": Role.PRACTITIONER,
    "register_researcher": Role.RESEARCHER,
}


class StateView:
    """Endorsement-time view: committed reads, buffered writes."""

    def __init__(self, state: WorldState):
        self._state = state
        self._reads: dict[str, Version] = {}
        self._writes: dict[str, WriteEntry] = {}
        self._write_order: list[str] = []

    def get(self, key: str) -> bytes | None:
        if key not in self._reads:
            self._reads[key] = self._state.version_of(key)
        entry = self._state.get(key)
        return entry[0] if entry else None

    def put(self, key: str, value: bytes) -> None:
        self._record_write(WriteEntry(key, value))

    def delete(self, key: str) -> None:
        self._record_write(WriteEntry(key, None))

    def _record_write(self, entry: WriteEntry) -> None:
        if entry.key not in self._writes:
            self._write_order.append(entry.key)
        self._writes[entry.key] = entry

    def scan_prefix(self, prefix: str) -> list[tuple[str, bytes]]:
        """Committed entries under a prefix, each recorded as a read."""
        out = []
        for key, value, version in self._state.items_with_prefix(prefix):
            self._reads.setdefault(key, version)
            out.append((key, value))
        return out

    def read_set(self) -> tuple[tuple[str, Version], ...]:
        return tuple(self._reads.items())

    def write_set(self) -> tuple[WriteEntry, ...]:
        return tuple(self._writes[key] for key in self._write_order)


# --- on-chain value encodings -----------------------------------------------

@dataclass(frozen=True)
class RecordEntry:
    record_id: str
    owner_patient_id: str
    provider_hospital_id: str
    cid: Cid
    provider_signature: bytes
    wrapped_keys: dict[str, bytes]
    created_at: int
    metadata: str

    def encode(self) -> bytes:
        return (
            Encoder()
            .str(self.record_id)
            .str(self.owner_patient_id)
            .str(self.provider_hospital_id)
            .raw(self.cid.digest)
            .bytes(self.provider_signature)
            .raw(encode_str_map(self.wrapped_keys))
            .u64(self.created_at)
            .str(self.metadata)
            .done()
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "RecordEntry":
        dec = Decoder(data)
        entry = cls(
            record_id=dec.str(),
            owner_patient_id=dec.str(),
            provider_hospital_id=dec.str(),
            cid=Cid(dec.raw(32)),
            provider_signature=dec.bytes(),
            wrapped_keys=decode_str_map(dec),
            created_at=dec.u64(),
            metadata=dec.str(),
        )
        dec.expect_end()
        return entry


@dataclass(frozen=True)
class AccessGrant:
    record_id: str
    grantee_id: str
    granted_at: int
    expires_at: int  # NEVER for unlimited
    price_paid: int

    def encode(self) -> bytes:
        return (
            Encoder()
            .str(self.record_id)
            .str(self.grantee_id)
            .u64(self.granted_at)
            .u64(self.expires_at)
            .u64(self.price_paid)
            .done()
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "AccessGrant":
        dec = Decoder(data)
        grant = cls(dec.str(), dec.str(), dec.u64(), dec.u64(), dec.u64())
        dec.expect_end()
        return grant

    @property
    def live_until(self) -> int:
        return self.expires_at


def encode_balance(balance: int) -> bytes:
    return struct.pack(">Q", balance)


def decode_balance(data: bytes) -> int:
    if len(data) != 8:
        raise BadRequest("malformed account value")
    return struct.unpack(">Q", data)[0]


# --- response payload wire format -------------------------------------------

def encode_result(data: bytes) -> bytes:
    return Encoder().u8(0).str("").bytes(data).done()


def encode_reject(err: ChaincodeError) -> bytes:
    return Encoder().u8(1).str(err.name).bytes(str(err).encode("utf-8")).done()


def decode_response(payload: bytes) -> bytes:
    """Return the result bytes, or raise the rebuilt chaincode error."""
    dec = Decoder(payload)
    status = dec.u8()
    name = dec.str()
    data = dec.bytes()
    dec.expect_end()
    if status == 0:
        return data
    raise chaincode_error(name, data.decode("utf-8", errors="replace"))


def is_reject(payload: bytes) -> bool:
    return len(payload) > 0 and payload[0] == 1


# --- argument helpers ---------------------------------------------------------

def _u64_arg(raw: bytes, what: str) -> int:
    if len(raw) != 8:
        raise BadRequest(f"{what} must be 8 bytes")
    return struct.unpack(">Q", raw)[0]


def _str_arg(raw: bytes, what: str) -> str:
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError:
        raise BadRequest(f"{what} is not valid utf-8") from None


def u64_arg_bytes(value: int) -> bytes:
    return struct.pack(">Q", value)


def record_id_for(patient_id: str, hospital_id: str, cid: Cid, created_at: int) -> str:
    preimage = (
        Encoder().str(patient_id).str(hospital_id).raw(cid.digest).u64(created_at).done()
    )
    return hashlib.sha256(preimage).hexdigest()


class EhrChaincode:
    """State-transition logic; one instance per peer, stateless itself."""

    def __init__(self, trusted_ca_keys: list[bytes], initial_balance: int):
        self.trusted_ca_keys = trusted_ca_keys
        self.initial_balance = initial_balance

    def execute(self, operation: str, args: tuple[bytes, ...],
                creator: Certificate, view: StateView) -> bytes:
        """Run one invocation; returns result bytes or raises ChaincodeError."""
        if not args:
            raise BadRequest("missing logical-clock argument")
        now = _u64_arg(args[-1], "now")
        body = args[:-1]
        if operation in REGISTER_OPS:
            return self._register(REGISTER_OPS[operation], body, creator, view)
        handler = {
            "upload_record": self._upload_record,
            "grant_access": self._grant_access,
            "get_record": self._get_record,
            "get_balance": self._get_balance,
            "list_records": self._list_records,
        }.get(operation)
        if handler is None:
            raise BadRequest(f"unknown operation {operation!r}")
        return handler(body, creator, view, now)

    def _register(self, role: Role, body, creator: Certificate,
                  view: StateView) -> bytes:
        if len(body) != 1:
            raise BadRequest("registration takes 1 argument + now")
        cert = Certificate.from_bytes(body[0])
        if cert.encode() != creator.encode():
            raise InvalidIdentity("registration must be signed by the subject")
        if cert.role is not role:
            raise InvalidIdentity(f"expected role {role.name}, got {cert.role.name}")
        if not msp_validate(cert, role, self.trusted_ca_keys):
            raise InvalidIdentity("certificate does not verify under a trusted CA")
        ns_key = ROLE_NAMESPACE[role] + cert.subject_id
        account_key = "account/" + cert.subject_id
        if view.get(ns_key) is not None or view.get(account_key) is not None:
            raise AlreadyRegistered(cert.subject_id)
        view.put(ns_key, cert.encode())
        view.put(account_key, encode_balance(self.initial_balance))
        return b""

    def _upload_record(self, body, creator, view, now) -> bytes:
        if len(body) != 6:
            raise BadRequest("upload_record takes 6 arguments + now")
        patient_id = _str_arg(body[0], "patient_id")
        hospital_id = _str_arg(body[1], "hospital_id")
        try:
            cid = Cid.parse(_str_arg(body[2], "cid"))
        except ValueError as exc:
            raise BadRequest(str(exc)) from None
        wrapped_key = body[3]
        provider_signature = body[4]
        metadata = _str_arg(body[5], "metadata")

        if creator.role is not Role.HOSPITAL or creator.subject_id != hospital_id:
            raise CreatorNotProvider(
                f"record must be uploaded by hospital {hospital_id!r}")
        hospital_raw = view.get("hospital/" + hospital_id)
        if hospital_raw is None:
            raise UnknownHospital(hospital_id)
        if view.get("patient/" + patient_id) is None:
            raise UnknownPatient(patient_id)
        hospital_cert = Certificate.from_bytes(hospital_raw)
        if not verify(hospital_cert.signing_public_key, cid.digest, provider_signature):
            raise BadProviderSignature("signature does not cover the cid digest")

        record_id = record_id_for(patient_id, hospital_id, cid, now)
        record_key = "record/" + record_id
        if view.get(record_key) is not None:
            raise BadRequest(f"record {record_id} already exists")
        entry = RecordEntry(
            record_id=record_id,
            owner_patient_id=patient_id,
            provider_hospital_id=hospital_id,
            cid=cid,
            provider_signature=provider_signature,
            wrapped_keys={patient_id: wrapped_key},
            created_at=now,
            metadata=metadata,
        )
        view.put(record_key, entry.encode())
        return record_id.encode("utf-8")

    def _grant_access(self, body, creator, view, now) -> bytes:
        if len(body) != 5:
            raise BadRequest("grant_access takes 5 arguments + now")
        record_id = _str_arg(body[0], "record_id")
        grantee_id = _str_arg(body[1], "grantee_id")
        wrapped_key = body[2]
        expires_at = _u64_arg(body[3], "expires_at")
        price = _u64_arg(body[4], "price")

        record_raw = view.get("record/" + record_id)
        if record_raw is None:
            raise UnknownRecord(record_id)
        entry = RecordEntry.from_bytes(record_raw)
        if creator.subject_id != entry.owner_patient_id:
            raise NotOwner(f"{creator.subject_id!r} does not own {record_id}")
        if not any(view.get(ns + grantee_id) is not None for ns in GRANTEE_NAMESPACES):
            raise UnknownGrantee(grantee_id)
        if expires_at != NEVER and expires_at <= now:
            raise BadRequest("expires_at must be in the future (or NEVER)")

        grantee_raw = view.get("account/" + grantee_id)
        owner_raw = view.get("account/" + entry.owner_patient_id)
        if grantee_raw is None or owner_raw is None:
            raise UnknownGrantee(grantee_id)
        grantee_balance = decode_balance(grantee_raw)
        owner_balance = decode_balance(owner_raw)
        if grantee_balance < price:
            raise InsufficientTokens(
                f"{grantee_id} has {grantee_balance}, price is {price}")

        updated = RecordEntry(
            record_id=entry.record_id,
            owner_patient_id=entry.owner_patient_id,
            provider_hospital_id=entry.provider_hospital_id,
            cid=entry.cid,
            provider_signature=entry.provider_signature,
            wrapped_keys={**entry.wrapped_keys, grantee_id: wrapped_key},
            created_at=entry.created_at,
            metadata=entry.metadata,
        )
        grant = AccessGrant(record_id, grantee_id, now, expires_at, price)
        view.put("record/" + record_id, updated.encode())
        view.put(f"grant/{record_id}/{grantee_id}", grant.encode())
        view.put("account/" + grantee_id, encode_balance(grantee_balance - price))
        view.put("account/" + entry.owner_patient_id, encode_balance(owner_balance + price))
        return b""

    def _get_record(self, body, creator, view, now) -> bytes:
        if len(body) != 2:
            raise BadRequest("get_record takes 2 arguments + now")
        record_id = _str_arg(body[0], "record_id")
        requester_id = _str_arg(body[1], "requester_id")

        record_raw = view.get("record/" + record_id)
        if record_raw is None:
            raise UnknownRecord(record_id)
        entry = RecordEntry.from_bytes(record_raw)
        if creator.subject_id != requester_id:
            raise AccessDenied("requester must sign the query")
        if requester_id != entry.owner_patient_id:
            grant_raw = view.get(f"grant/{record_id}/{requester_id}")
            if grant_raw is None:
                raise AccessDenied(f"no grant for {requester_id!r}")
            grant = AccessGrant.from_bytes(grant_raw)
            if grant.expires_at != NEVER and now >= grant.expires_at:
                raise AccessDenied(f"grant expired at tick {grant.expires_at}")
        wrapped = entry.wrapped_keys.get(requester_id)
        if wrapped is None:
            raise AccessDenied(f"no wrapped key for {requester_id!r}")
        return (
            Encoder()
            .str(entry.cid.text)
            .bytes(wrapped)
            .str(entry.provider_hospital_id)
            .bytes(entry.provider_signature)
            .done()
        )

    def _get_balance(self, body, creator, view, now) -> bytes:
        if len(body) != 1:
            raise BadRequest("get_balance takes 1 argument + now")
        subject_id = _str_arg(body[0], "subject_id")
        raw = view.get("account/" + subject_id)
        if raw is None:
            raise UnknownAccount(subject_id)
        return raw

    def _list_records(self, body, creator, view, now) -> bytes:
        if len(body) != 1:
            raise BadRequest("list_records takes 1 argument + now")
        patient_id = _str_arg(body[0], "patient_id")
        owned = []
        for key, value in view.scan_prefix("record/"):
            entry = RecordEntry.from_bytes(value)
            if entry.owner_patient_id == patient_id:
                owned.append(entry.record_id)
        enc = Encoder().count(len(owned))
        for record_id in owned:
            enc.str(record_id)
        return enc.done()
