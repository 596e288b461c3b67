"""Record-key generation, bundle sealing and per-recipient key wrapping.

A bundle is AES-256-GCM ciphertext plus the provider's Ed25519 signature over
SHA-256(provider_id || nonce || ciphertext || auth_tag); its canonical
encoding is exactly the byte-string the CAS addresses. Key wrapping is a
sealed box: ephemeral X25519 agreement, HKDF-SHA256, then the same AEAD.
Nonces and ephemeral keys come from the caller's seeded generator.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from random import Random

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.hashes import SHA256
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .codec import Decoder, Encoder
from .errors import CorruptFile, DecryptFailure, ProvenanceFailure, UnwrapFailure
from .identity import KeyPair, KeyScheme, generate_key_agreement_keypair, sign, verify, x25519_exchange

NONCE_LEN = 12
TAG_LEN = 16
KEY_LEN = 32
SIG_LEN = 64
BUNDLE_VERSION = 1

_WRAP_INFO = b"medledger/record-key-wrap/v1"


@dataclass(frozen=True)
class RecordKey:
    key_bytes: bytes

    def __post_init__(self) -> None:
        if len(self.key_bytes) != KEY_LEN:
            raise ValueError("record key must be 32 bytes")


def generate_record_key(rng: Random) -> RecordKey:
    return RecordKey(rng.randbytes(KEY_LEN))


@dataclass(frozen=True)
class Bundle:
    version: int
    provider_id: str
    ciphertext: bytes
    nonce: bytes
    auth_tag: bytes
    provider_signature: bytes

    def signed_digest(self) -> bytes:
        preimage = (self.provider_id.encode("utf-8") + self.nonce
                    + self.ciphertext + self.auth_tag)
        return hashlib.sha256(preimage).digest()

    def encode(self) -> bytes:
        return (
            Encoder()
            .u8(self.version)
            .str(self.provider_id)
            .bytes(self.ciphertext)
            .bytes(self.nonce)
            .bytes(self.auth_tag)
            .bytes(self.provider_signature)
            .done()
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bundle":
        dec = Decoder(data)
        version = dec.u8()
        if version != BUNDLE_VERSION:
            raise CorruptFile(f"unsupported bundle version {version}")
        bundle = cls(
            version=version,
            provider_id=dec.str(),
            ciphertext=dec.bytes(),
            nonce=dec.bytes(),
            auth_tag=dec.bytes(),
            provider_signature=dec.bytes(),
        )
        dec.expect_end()
        if len(bundle.nonce) != NONCE_LEN or len(bundle.auth_tag) != TAG_LEN \
                or len(bundle.provider_signature) != SIG_LEN:
            raise CorruptFile("bad bundle field lengths")
        return bundle


def _aead_seal(key: bytes, nonce: bytes, plaintext: bytes) -> tuple[bytes, bytes]:
    out = AESGCM(key).encrypt(nonce, plaintext, None)
    return out[:-TAG_LEN], out[-TAG_LEN:]


def _aead_open(key: bytes, nonce: bytes, ciphertext: bytes, tag: bytes) -> bytes:
    try:
        return AESGCM(key).decrypt(nonce, ciphertext + tag, None)
    except (InvalidTag, ValueError) as exc:
        raise DecryptFailure("AEAD tag check failed") from exc


def seal(plaintext: bytes, key: RecordKey, provider_signing_key: KeyPair,
         provider_id: str, rng: Random) -> Bundle:
    """Encrypt under the record key and sign for provenance."""
    nonce = rng.randbytes(NONCE_LEN)
    ciphertext, tag = _aead_seal(key.key_bytes, nonce, plaintext)
    unsigned = Bundle(BUNDLE_VERSION, provider_id, ciphertext, nonce, tag, b"\x00" * SIG_LEN)
    signature = provider_signing_key.sign(unsigned.signed_digest())
    return Bundle(BUNDLE_VERSION, provider_id, ciphertext, nonce, tag, signature)


def open_bundle(bundle: Bundle, key: RecordKey, provider_public_key: bytes) -> bytes:
    """Verify provenance first, then decrypt."""
    if not verify(provider_public_key, bundle.signed_digest(), bundle.provider_signature):
        raise ProvenanceFailure(f"provider signature invalid for {bundle.provider_id!r}")
    return _aead_open(key.key_bytes, bundle.nonce, bundle.ciphertext, bundle.auth_tag)


def _wrap_key_for(shared_secret: bytes, ephemeral_pub: bytes, recipient_pub: bytes) -> bytes:
    hkdf = HKDF(algorithm=SHA256(), length=KEY_LEN,
                salt=ephemeral_pub + recipient_pub, info=_WRAP_INFO)
    return hkdf.derive(shared_secret)


def wrap_key(key: RecordKey, recipient_encryption_public_key: bytes, rng: Random) -> bytes:
    """Sealed box: ephemeral_pub || nonce || ciphertext || tag."""
    ephemeral = generate_key_agreement_keypair(rng)
    shared = x25519_exchange(ephemeral.private_key, recipient_encryption_public_key)
    wrap = _wrap_key_for(shared, ephemeral.public_key, recipient_encryption_public_key)
    nonce = rng.randbytes(NONCE_LEN)
    ciphertext, tag = _aead_seal(wrap, nonce, key.key_bytes)
    return ephemeral.public_key + nonce + ciphertext + tag


def unwrap_key(wrapped: bytes, recipient_keypair: KeyPair) -> RecordKey:
    if recipient_keypair.scheme is not KeyScheme.KEY_AGREEMENT:
        raise UnwrapFailure("recipient key must be a key-agreement pair")
    if len(wrapped) != 32 + NONCE_LEN + KEY_LEN + TAG_LEN:
        raise UnwrapFailure("malformed wrapped key")
    ephemeral_pub = wrapped[:32]
    nonce = wrapped[32:32 + NONCE_LEN]
    ciphertext = wrapped[32 + NONCE_LEN:32 + NONCE_LEN + KEY_LEN]
    tag = wrapped[-TAG_LEN:]
    recipient_pub = recipient_keypair.public_key
    try:
        shared = x25519_exchange(recipient_keypair.private_key, ephemeral_pub)
        wrap = _wrap_key_for(shared, ephemeral_pub, recipient_pub)
        return RecordKey(_aead_open(wrap, nonce, ciphertext, tag))
    except (DecryptFailure, ValueError) as exc:
        raise UnwrapFailure("wrong key or corrupted blob") from exc


def sign_cid_digest(provider_signing_key: KeyPair, cid_digest: bytes) -> bytes:
    """Record-level provenance signature over the 32-byte CAS digest."""
    return provider_signing_key.sign(cid_digest)


def verify_cid_signature(provider_public_key: bytes, cid_digest: bytes, signature: bytes) -> bool:
    return verify(provider_public_key, cid_digest, signature)
