"""Deterministic desk-scale platform for patient-controlled EHR sharing.

A permissioned, channel-scoped ledger with endorsement/ordering/validation,
a content-addressed replicated store, envelope encryption with per-recipient
key wrapping, and token-compensated access grants — driven by a scenario CLI
and exposed as a FastAPI service.
"""

__version__ = "0.1.0"

from .cas import CasNetwork, Cid, StorageNode, cid_of
from .config import ChannelSpec, default_channel_config, parse_channel_config
from .identity import CertAuthority, Certificate, KeyPair, Role
from .ledger import Block, PeerLedger, Transaction, TxValidity, WorldState
from .network import LedgerView, Platform
from .ordering import ChannelConfig, Proposal, SoloOrderer

__all__ = [
    "CasNetwork", "Cid", "StorageNode", "cid_of",
    "ChannelSpec", "default_channel_config", "parse_channel_config",
    "CertAuthority", "Certificate", "KeyPair", "Role",
    "Block", "PeerLedger", "Transaction", "TxValidity", "WorldState",
    "LedgerView", "Platform",
    "ChannelConfig", "Proposal", "SoloOrderer",
    "__version__",
]
