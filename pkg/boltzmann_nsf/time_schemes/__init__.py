from .base_scheme import BaseTimeScheme
from .exponential_euler import ExponentialEuler
from .scheme_factory import get_time_scheme
from .strang_split import StrangSplit

__all__ = ["BaseTimeScheme", "ExponentialEuler", "StrangSplit", "get_time_scheme"]
