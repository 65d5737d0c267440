"""Spiking voice activity detection: sinc front end, spiking attention, recurrent spiking classifier."""

from .model import SVAD, Architecture, param_count
from .snn import LifParams

__all__ = ["SVAD", "Architecture", "LifParams", "param_count"]
__version__ = "0.1.0"
