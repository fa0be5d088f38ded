"""Joint multimodal entity-relation extraction with edge-enhanced graph alignment."""

__version__ = "0.1.0"
