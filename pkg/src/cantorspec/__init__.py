"""Fourier-analytic construction of measures on well-approximable numbers.

Modules: ``numtheory`` (prime windows, progression moduli), ``bumps``
(bump profiles and certified transforms), ``spectrum`` (sparse lattice
spectra and convolution), ``construction`` (schedules, g_k, stage
measures), ``analysis`` (verifiers and experiments) and ``cli``.
"""

from .construction import ConstructionParams, ScheduleConfig, build_schedule, build_stage
from .spectrum import SparseSpectrum, convolve

__version__ = "0.1.0"

__all__ = ["ConstructionParams", "ScheduleConfig", "SparseSpectrum", "build_schedule",
           "build_stage", "convolve", "__version__"]
