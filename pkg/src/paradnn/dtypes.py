"""Numeric storage formats and their byte widths."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class DType:
    name: str
    width: int

    def __post_init__(self):
        if self.width not in (1, 2, 4, 8):
            raise ValueError(f"dtype {self.name!r}: width must be 1, 2, 4 or 8 bytes, got {self.width}")

    def __str__(self) -> str:
        return self.name


FLOAT64 = DType("float64", 8)
FLOAT32 = DType("float32", 4)
BFLOAT16 = DType("bfloat16", 2)
FLOAT16 = DType("float16", 2)
INT8 = DType("int8", 1)

DTYPES: dict[str, DType] = {d.name: d for d in (FLOAT64, FLOAT32, BFLOAT16, FLOAT16, INT8)}

# Master weights, gradients, optimizer slots and cross-replica sums stay in 32 bits.
ACCUMULATOR = FLOAT32


def get_dtype(dtype: str | DType) -> DType:
    if isinstance(dtype, DType):
        return dtype
    try:
        return DTYPES[dtype]
    except KeyError:
        raise ValueError(f"unknown dtype {dtype!r}; known: {sorted(DTYPES)}") from None
