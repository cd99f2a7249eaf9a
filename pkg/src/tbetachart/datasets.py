"""Relative humidity example data (daily readings for May, as proportions).

The first reading of each month is conventionally dropped, leaving 30
observations that split into three subgroups of 10.
"""
from __future__ import annotations

import numpy as np

RH_MAY_2007 = (
    0.40, 0.44, 0.50, 0.55, 0.58, 0.62, 0.65, 0.69, 0.72, 0.72, 0.73,
    0.75, 0.77, 0.80, 0.81, 0.81, 0.83, 0.83, 0.85, 0.85, 0.85, 0.85,
    0.86, 0.86, 0.87, 0.87, 0.89, 0.92, 0.94, 0.94, 0.97,
)
RH_MAY_2008 = (
    0.39, 0.40, 0.42, 0.43, 0.43, 0.43, 0.44, 0.46, 0.48, 0.49, 0.51,
    0.52, 0.53, 0.54, 0.56, 0.59, 0.62, 0.64, 0.66, 0.73, 0.75, 0.76,
    0.83, 0.85, 0.88, 0.91, 0.92, 0.92, 0.95, 0.97, 0.98,
)

EMBEDDED = {
    "rh-may-2007": RH_MAY_2007,
    "rh-may-2008": RH_MAY_2008,
}
# defaults applied when an embedded name is given without explicit options
EMBEDDED_DEFAULTS = {"support": (0.3, 1.0), "subgroup_size": 10, "drop_first": True}


def load(name: str, drop_first: bool = True) -> np.ndarray:
    try:
        values = np.array(EMBEDDED[name], dtype=float)
    except KeyError:
        raise KeyError(f"unknown dataset {name!r}; choose from {sorted(EMBEDDED)}") from None
    return values[1:] if drop_first else values
