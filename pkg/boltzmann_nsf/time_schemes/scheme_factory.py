from typing import Any

from .base_scheme import BaseTimeScheme
from .exponential_euler import ExponentialEuler
from .strang_split import StrangSplit

"""
Factory returning the time integrator named in the run configuration.
Input :
    - scheme_name: str : "exponential-euler" or "strang-split".
    - **kwargs: Any : Options forwarded to the scheme.
Output :
    - BaseTimeScheme : The integrator.
"""


def get_time_scheme(scheme_name: str, **kwargs: Any) -> BaseTimeScheme:
    """
    Factory function to get a time integrator by name.
    """
    if isinstance(scheme_name, BaseTimeScheme):
        return scheme_name
    if scheme_name in ("exponential-euler", "etd1"):
        return ExponentialEuler(**kwargs)
    elif scheme_name in ("strang-split", "strang"):
        return StrangSplit(**kwargs)
    else:
        raise ValueError(f"Unknown time scheme: {scheme_name}")
