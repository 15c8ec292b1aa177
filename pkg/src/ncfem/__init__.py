"""Nonconforming finite elements whose loads are smoothed by right inverses of the energy projection."""

__version__ = "0.1.0"

from .service import NcfemService  # noqa: E402

__all__ = ["NcfemService", "__version__"]
