"""Standard 12-lead labels in canonical order."""

from __future__ import annotations

from enum import Enum


class LeadLabel(str, Enum):
    I = "I"
    II = "II"
    III = "III"
    aVR = "aVR"
    aVL = "aVL"
    aVF = "aVF"
    V1 = "V1"
    V2 = "V2"
    V3 = "V3"
    V4 = "V4"
    V5 = "V5"
    V6 = "V6"

    @property
    def index(self) -> int:
        return _INDEX[self]

    def __str__(self) -> str:
        return self.value


ALL_LEADS: tuple[LeadLabel, ...] = tuple(LeadLabel)
_INDEX = {lead: i for i, lead in enumerate(ALL_LEADS)}
_BY_NAME = {lead.value.lower(): lead for lead in ALL_LEADS}

LIMB_LEADS = (LeadLabel.I, LeadLabel.II, LeadLabel.III)
AUGMENTED_LEADS = (LeadLabel.aVR, LeadLabel.aVL, LeadLabel.aVF)
PRECORDIAL_LEADS = (
    LeadLabel.V1,
    LeadLabel.V2,
    LeadLabel.V3,
    LeadLabel.V4,
    LeadLabel.V5,
    LeadLabel.V6,
)


def parse_lead(name: str | LeadLabel) -> LeadLabel:
    """Map a lead name to its label, case-insensitively ("avr", "AVR", "aVR")."""
    if isinstance(name, LeadLabel):
        return name
    try:
        return _BY_NAME[str(name).strip().lower()]
    except KeyError:
        raise ValueError(f"unknown lead label {name!r}") from None


def lead_indices(leads) -> list[int]:
    return [parse_lead(lead).index for lead in leads]
