"""Conversational antenatal-care EMR toolkit.

Interview flows over a messaging channel, colloquial Urdu/English value
extraction, guideline red-flag alerts, GA-scheduled education, and a
patient-owned event-sourced record with QR-shareable capability tokens.
"""

__version__ = "0.1.0"
