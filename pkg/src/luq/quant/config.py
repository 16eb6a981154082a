from __future__ import annotations

from dataclasses import asdict, dataclass

LOW_METHODS = ("bin",)
HIGH_METHODS = ("gptq", "rtn")


@dataclass(frozen=True)
class QuantConfig:
    """Settings for the two quantizer tiers.

    ``salient_fraction=None`` lets the binarizer size its salient set per
    tensor so the realized cost lands near ``low_bits``.
    """

    high_method: str = "gptq"
    high_bits: int = 4
    low_method: str = "bin"
    low_bits: float = 1.08
    block_size: int = 128
    group_size: int = 128
    damp: float = 0.01
    salient_fraction: float | None = None
    split_grid: int = 40

    def __post_init__(self):
        if self.block_size < 1 or self.group_size < 1:
            raise ValueError("block_size and group_size must be >= 1")
        if self.high_bits != 4:
            # stacks store only the 4-bit high tier (rtn4 / gptq4)
            raise ValueError("high_bits must be 4")
        if self.high_method not in HIGH_METHODS:
            raise ValueError(f"unknown high-precision method {self.high_method!r}")
        if self.low_method not in LOW_METHODS:
            raise ValueError(f"unknown ultra-low method {self.low_method!r}")
        if self.salient_fraction is not None and not 0.0 <= self.salient_fraction <= 1.0:
            raise ValueError("salient_fraction must lie in [0, 1]")

    @property
    def high_tag(self) -> str:
        return f"{self.high_method}{self.high_bits}"

    @property
    def low_tag(self) -> str:
        return self.low_method

    def to_dict(self) -> dict:
        return asdict(self)
