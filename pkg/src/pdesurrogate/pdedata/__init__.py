"""Reference PDE solvers, trajectory generation, and the dataset container."""

from .datafile import (BadMagicError, Dataset, DatasetFormatError,
                       ShapeMismatchError, TruncatedFileError,
                       VersionMismatchError, read_dataset, read_sidecar,
                       write_dataset, write_sidecar)
from .generate import GenerateSpec, generate_dataset, generate_split
from .navier_stokes import SimulationError

__all__ = [
    "Dataset", "DatasetFormatError", "BadMagicError", "VersionMismatchError",
    "TruncatedFileError", "ShapeMismatchError",
    "read_dataset", "write_dataset", "read_sidecar", "write_sidecar",
    "GenerateSpec", "generate_dataset", "generate_split", "SimulationError",
]
