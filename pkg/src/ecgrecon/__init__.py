"""Reduced-lead ECG reconstruction with a 1D U-net."""

PIPELINE_VERSION = "1.0"

from ecgrecon.leads import LeadLabel, LIMB_LEADS, PRECORDIAL_LEADS, parse_lead  # noqa: E402

__all__ = [
    "PIPELINE_VERSION",
    "LeadLabel",
    "LIMB_LEADS",
    "PRECORDIAL_LEADS",
    "parse_lead",
]
