"""Coherent microwave scattering off a two-level artificial atom in an open
transmission line: master-equation theory, photon statistics and a synthetic
Hanbury Brown-Twiss measurement chain."""

from qubitline.params import AtomParams, DriveSpec, FilterMode, DEFAULT_ATOM

__version__ = "0.1.0"

__all__ = ["AtomParams", "DriveSpec", "FilterMode", "DEFAULT_ATOM", "__version__"]
