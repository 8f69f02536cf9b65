"""Two-stage 3D ground-penetrating-radar inversion built from scratch on NumPy.

A Denoiser removes clutter from C-scans, an Inverter maps the cleaned C-scan
to a relative-permittivity volume. ``gprinv.forge`` synthesises training data.
"""
from .denoiser import Denoiser, DenoiserConfig, denoiser_forward
from .inverter import Inverter, InverterConfig, inverter_forward, receptive_field
from .kernels import BACKEND
from .layers import count_parameters
from .tensor import ConvParams, Tensor

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ConvParams", "Denoiser", "DenoiserConfig", "Inverter", "InverterConfig", "Tensor",
    "count_parameters", "denoiser_forward", "inverter_forward", "receptive_field",
]
