"""Rare-earth electron-spin coherence toolkit.

Zeeman transition maps, spin-echo decay models with spectral diffusion,
Bloch-equation pulse simulation, decay fitting, and an excited-state
microwave/optical transduction model.
"""

from erspin.errors import ConfigError, DomainError, NumericError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DomainError", "NumericError", "__version__"]
