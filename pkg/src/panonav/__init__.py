"""Street-level panorama navigation: graph construction, visual-sentence generation,
tokenization, a Markovian step environment and evaluation tooling."""

from __future__ import annotations

__version__ = "0.1.0"
