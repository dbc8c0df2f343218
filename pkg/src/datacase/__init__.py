"""Compliance-aware storage: data units with purpose policies, an action
ledger, four erasure interpretations, invariant audits and a benchmark harness."""

from .checker import Violation, audit, characterize, characterize_all
from .errors import DataCaseError
from .ledger import Ledger
from .model import (COMPLIANCE_ERASE, ActionKind, ActionRecord, Category, DataUnit, Entity,
                    EntityKind, ErasureMode, ErasureStatus, Policy, ProvenanceEdge,
                    derive_unit, is_policy_consistent, subject)
from .store import Store, StoreConfig

__version__ = "0.1.0"

__all__ = [
    "COMPLIANCE_ERASE", "ActionKind", "ActionRecord", "Category", "DataCaseError", "DataUnit",
    "Entity", "EntityKind", "ErasureMode", "ErasureStatus", "Ledger", "Policy",
    "ProvenanceEdge", "Store", "StoreConfig", "Violation", "audit", "characterize",
    "characterize_all", "derive_unit", "is_policy_consistent", "subject",
]
