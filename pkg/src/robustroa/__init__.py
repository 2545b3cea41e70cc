"""Inner approximations of robust domains of attraction for polynomial
systems with bounded perturbations, certified by sum-of-squares programs."""

from .poly import Polynomial
from .sos import ConfigurationError, DegreeConfig
from .zubov import Certificate, SpecError, SynthesisFailure, SystemSpec, contains, load_spec, synthesize

__all__ = [
    "Certificate",
    "ConfigurationError",
    "DegreeConfig",
    "Polynomial",
    "SpecError",
    "SynthesisFailure",
    "SystemSpec",
    "contains",
    "load_spec",
    "synthesize",
]
