"""Patient-outreach orchestration: scheduled instrument-bearing conversations
over simulated voice/SMS channels, clinician-facing call summaries with
escalation flags, and a pairwise judge harness for summary quality."""

__version__ = "0.1.0"
