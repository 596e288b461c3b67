"""Certification authority, enrollment and membership validation.

Certificates are a simplified canonical-encoded structure signed by the
issuing CA (Ed25519), not wire-format X.509. Key agreement pairs are X25519.
All key material is generated from the caller-supplied seeded generator so
enrollment sequences replay byte-identically.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from random import Random

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives import serialization

from .codec import Decoder, Encoder
from .errors import DuplicateSubject, WrongScheme

_RAW = serialization.Encoding.Raw
_RAW_PUB = serialization.PublicFormat.Raw


class KeyScheme(enum.IntEnum):
    SIGNING = 0
    KEY_AGREEMENT = 1


class Role(enum.IntEnum):
    HOSPITAL = 0
    PATIENT = 1
    PRACTITIONER = 2
    RESEARCHER = 3
    ORDERER = 4
    PEER = 5


@dataclass(frozen=True)
class KeyPair:
    public_key: bytes
    private_key: bytes
    scheme: KeyScheme

    def sign(self, message: bytes) -> bytes:
        if self.scheme is not KeyScheme.SIGNING:
            raise WrongScheme("key agreement keys cannot sign")
        return sign(self.private_key, message)


def generate_signing_keypair(rng: Random) -> KeyPair:
    seed = rng.randbytes(32)
    priv = Ed25519PrivateKey.from_private_bytes(seed)
    pub = priv.public_key().public_bytes(_RAW, _RAW_PUB)
    return KeyPair(public_key=pub, private_key=seed, scheme=KeyScheme.SIGNING)


def generate_key_agreement_keypair(rng: Random) -> KeyPair:
    seed = rng.randbytes(32)
    priv = X25519PrivateKey.from_private_bytes(seed)
    pub = priv.public_key().public_bytes(_RAW, _RAW_PUB)
    return KeyPair(public_key=pub, private_key=seed, scheme=KeyScheme.KEY_AGREEMENT)


def sign(private_key: bytes, message: bytes) -> bytes:
    """Deterministic Ed25519 signature over the raw message."""
    return Ed25519PrivateKey.from_private_bytes(private_key).sign(message)


def verify(public_key: bytes, message: bytes, signature: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
        return True
    except (InvalidSignature, ValueError, TypeError):
        return False


def x25519_exchange(private_key: bytes, peer_public_key: bytes) -> bytes:
    priv = X25519PrivateKey.from_private_bytes(private_key)
    return priv.exchange(X25519PublicKey.from_public_bytes(peer_public_key))


@dataclass(frozen=True)
class Certificate:
    subject_id: str
    organization: str
    role: Role
    signing_public_key: bytes
    encryption_public_key: bytes
    issued_at: int
    ca_signature: bytes

    def body_bytes(self) -> bytes:
        """Canonical encoding of everything the CA signs."""
        return (
            Encoder()
            .str(self.subject_id)
            .str(self.organization)
            .u8(int(self.role))
            .bytes(self.signing_public_key)
            .bytes(self.encryption_public_key)
            .u64(self.issued_at)
            .done()
        )

    def encode(self) -> bytes:
        return Encoder().raw(self.body_bytes()).bytes(self.ca_signature).done()

    @classmethod
    def decode(cls, dec: Decoder) -> "Certificate":
        subject_id = dec.str()
        organization = dec.str()
        role = Role(dec.u8())
        signing_public_key = dec.bytes()
        encryption_public_key = dec.bytes()
        issued_at = dec.u64()
        ca_signature = dec.bytes()
        return cls(subject_id, organization, role, signing_public_key,
                   encryption_public_key, issued_at, ca_signature)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Certificate":
        dec = Decoder(data)
        cert = cls.decode(dec)
        dec.expect_end()
        return cert

    def fingerprint(self) -> str:
        return hashlib.sha256(self.encode()).hexdigest()[:16]

    def hexdump(self) -> str:
        """Text form for CLI display."""
        blob = self.encode().hex()
        lines = [blob[i:i + 64] for i in range(0, len(blob), 64)]
        head = f"certificate {self.subject_id} org={self.organization} role={self.role.name}"
        return "\n".join([head] + lines)


def verify_certificate(cert: Certificate, ca_public_key: bytes) -> bool:
    try:
        return verify(ca_public_key, cert.body_bytes(), cert.ca_signature)
    except Exception:
        return False


def msp_validate(cert: Certificate, required_role: Role, trusted_cas: list[bytes]) -> bool:
    """True iff the cert verifies under some trusted CA and the role matches."""
    if cert.role is not required_role:
        return False
    return any(verify_certificate(cert, ca_key) for ca_key in trusted_cas)


@dataclass
class CertAuthority:
    ca_id: str
    ca_keypair: KeyPair
    issued: dict[str, Certificate] = field(default_factory=dict)

    @classmethod
    def create(cls, ca_id: str, rng: Random) -> "CertAuthority":
        return cls(ca_id=ca_id, ca_keypair=generate_signing_keypair(rng))

    @property
    def public_key(self) -> bytes:
        return self.ca_keypair.public_key

    def enroll(self, subject_id: str, organization: str, role: Role,
               rng: Random, issued_at: int = 0) -> tuple[Certificate, KeyPair, KeyPair]:
        """Issue a certificate plus fresh signing and key-agreement pairs."""
        if subject_id in self.issued:
            raise DuplicateSubject(f"{subject_id!r} already enrolled with {self.ca_id}")
        signing = generate_signing_keypair(rng)
        agreement = generate_key_agreement_keypair(rng)
        unsigned = Certificate(
            subject_id=subject_id,
            organization=organization,
            role=role,
            signing_public_key=signing.public_key,
            encryption_public_key=agreement.public_key,
            issued_at=issued_at,
            ca_signature=b"",
        )
        signed = Certificate(
            **{**unsigned.__dict__, "ca_signature": self.ca_keypair.sign(unsigned.body_bytes())}
        )
        self.issued[subject_id] = signed
        return signed, signing, agreement
