from __future__ import annotations

from dataclasses import dataclass

DEFAULT_INPUT_SIZE = 448
DEFAULT_PATCH_SIZE = 14


@dataclass(frozen=True)
class ExtractorConfig:
    """Backbone selection and geometry.

    input_size must be divisible by patch_size; the resulting patch grid
    is input_size / patch_size per side (32 at the defaults).
    """

    backbone_id: str = "patch-moments"
    input_size: int = DEFAULT_INPUT_SIZE
    patch_size: int = DEFAULT_PATCH_SIZE
    device: str = "cpu"

    def __post_init__(self) -> None:
        if self.input_size < 1 or self.patch_size < 1:
            raise ValueError("input_size and patch_size must be >= 1")
        if self.input_size % self.patch_size != 0:
            raise ValueError(
                f"input_size {self.input_size} is not divisible by "
                f"patch_size {self.patch_size}"
            )

    @property
    def n_patches(self) -> int:
        return self.input_size // self.patch_size
