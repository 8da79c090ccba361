from ._accel import BACKEND

__version__ = "0.1.0"
