"""Adapters bridging NLP/vision tooling to the gritkit wire formats.

Nothing here imports gritkit: the contract is purely the JSONL schemas
(parses.jsonl, detections.jsonl) consumed by the core CLI.
"""

__version__ = "0.1.0"
