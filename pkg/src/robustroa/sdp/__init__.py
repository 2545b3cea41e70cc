"""Semidefinite programs: problem model, embedded solver and SDPA bridge."""
from .problem import SdpBuilder, SdpProblem, SdpSolution, Status
from .solver import DEFAULT_MAX_ITER, DEFAULT_TOL, solve
from .sdpa import SdpaParseError, export_sdpa, import_sdpa

__all__ = ["SdpBuilder", "SdpProblem", "SdpSolution", "Status", "solve", "DEFAULT_TOL",
           "DEFAULT_MAX_ITER", "export_sdpa", "import_sdpa", "SdpaParseError"]
