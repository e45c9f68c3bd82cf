"""Form key-value extraction toolkit: synthetic Form-604 corpus generation,
multi-aspect segment features, geometric positional encoding, a dual-level
pointer model, and the matching evaluation suite."""

__version__ = "0.1.0"
