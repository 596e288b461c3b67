"""Error taxonomy shared by every module.

Error class names are part of the wire contract: endorsers embed them in
REJECT payloads and the CLI maps them to exit codes, so they must stay
stable.
"""

from __future__ import annotations


class MedLedgerError(Exception):
    """Base class; `name` is the stable contract identifier."""

    @property
    def name(self) -> str:
        return type(self).__name__


# --- identity ---------------------------------------------------------------

class DuplicateSubject(MedLedgerError):
    pass


class WrongScheme(MedLedgerError):
    pass


# --- ledger -----------------------------------------------------------------

class ChainMismatch(MedLedgerError):
    pass


class CorruptFile(MedLedgerError):
    pass


# --- ordering ---------------------------------------------------------------

class BadSignature(MedLedgerError):
    pass


class NotEligible(MedLedgerError):
    pass


class PolicyUnsatisfied(MedLedgerError):
    pass


class NondeterministicEndorsement(MedLedgerError):
    pass


class MalformedTransaction(MedLedgerError):
    pass


class DeliveryMismatch(MedLedgerError):
    """Peers produced diverging commit reports for the same block."""


class OrderingNotImplemented(MedLedgerError):
    """Raft/Kafka are recognized config values but only solo is built."""


class TxInvalidated(MedLedgerError):
    """A submitted transaction committed with a non-VALID flag."""


# --- chaincode --------------------------------------------------------------

class ChaincodeError(MedLedgerError):
    """Raised during endorsement; becomes a signed REJECT payload."""


class AlreadyRegistered(ChaincodeError):
    pass


class InvalidIdentity(ChaincodeError):
    pass


class UnknownPatient(ChaincodeError):
    pass


class UnknownHospital(ChaincodeError):
    pass


class BadProviderSignature(ChaincodeError):
    pass


class CreatorNotProvider(ChaincodeError):
    pass


class NotOwner(ChaincodeError):
    pass


class UnknownGrantee(ChaincodeError):
    pass


class InsufficientTokens(ChaincodeError):
    pass


class UnknownRecord(ChaincodeError):
    pass


class AccessDenied(ChaincodeError):
    pass


class UnknownAccount(ChaincodeError):
    pass


class BadRequest(ChaincodeError):
    """Malformed or inconsistent chaincode arguments."""


# --- cas --------------------------------------------------------------------

class NoLiveNodes(MedLedgerError):
    pass


class NotFound(MedLedgerError):
    pass


class IntegrityFailure(MedLedgerError):
    pass


class UnknownNode(MedLedgerError):
    pass


class NodeDown(MedLedgerError):
    pass


# --- envelope ---------------------------------------------------------------

class DecryptFailure(MedLedgerError):
    pass


class ProvenanceFailure(MedLedgerError):
    pass


class UnwrapFailure(MedLedgerError):
    pass


# --- scenario / config ------------------------------------------------------

class ScenarioError(MedLedgerError):
    """Scenario file problem; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ConfigError(MedLedgerError):
    pass


class ServerUnreachable(MedLedgerError):
    pass


CHAINCODE_ERRORS: dict[str, type[ChaincodeError]] = {
    cls.__name__: cls
    for cls in (
        AlreadyRegistered, InvalidIdentity, UnknownPatient, UnknownHospital,
        BadProviderSignature, CreatorNotProvider, NotOwner, UnknownGrantee,
        InsufficientTokens, UnknownRecord, AccessDenied, UnknownAccount,
        BadRequest,
    )
}


def chaincode_error(name: str, message: str) -> ChaincodeError:
    """Rebuild a chaincode error from a REJECT payload."""
    cls = CHAINCODE_ERRORS.get(name, ChaincodeError)
    return cls(message)
