"""Global bounds for nonconvex QPs via DNN relaxations and cutting planes."""

from .instance import (
    QpInstance,
    ReducedInstance,
    SyntheticSpec,
    generate_synthetic,
    load_instance,
    radius_bound,
    reduce_instance,
    save_instance,
)

__all__ = [
    "QpInstance",
    "ReducedInstance",
    "SyntheticSpec",
    "generate_synthetic",
    "load_instance",
    "radius_bound",
    "reduce_instance",
    "save_instance",
]

__version__ = "0.1.0"
