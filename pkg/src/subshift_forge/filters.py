from ._core.filters import (
    AbstractBlockTest,
    BernsteinFilter,
    CorrelationFilter,
    EmptyFilter,
)

__all__ = [
    "AbstractBlockTest",
    "BernsteinFilter",
    "CorrelationFilter",
    "EmptyFilter",
]
