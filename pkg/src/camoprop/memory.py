"""FIFO store of per-frame image and mask embeddings.

The bank keeps at most ``capacity`` frames; pushing beyond that evicts the
oldest record. Stored embeddings are never mutated by the bank, so a
``gather`` snapshot stays valid across later pushes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import tensor as T
from .tensor import ShapeError, Tensor


@dataclass
class FrameRecord:
    """One remembered frame: its image embedding and mask embedding."""

    frame_index: int
    image_emb: Tensor
    mask_emb: Tensor

    def __post_init__(self):
        if self.image_emb.shape != self.mask_emb.shape:
            raise ShapeError(
                f"frame {self.frame_index}: image embedding {self.image_emb.shape} "
                f"!= mask embedding {self.mask_emb.shape}")


class MemoryError_(ValueError):
    """Invalid memory-bank operation (bad index order, empty gather...)."""


@dataclass
class MemoryBank:
    """Fixed-capacity FIFO of ``FrameRecord``s, oldest first.

    ``pin_first`` exempts the very first record from eviction (ablation
    aid; off by default, which matches strict oldest-out behaviour).
    """

    capacity: int
    pin_first: bool = False
    records: list[FrameRecord] = field(default_factory=list)

    def __post_init__(self):
        if self.capacity < 1:
            raise MemoryError_(f"capacity must be >= 1, got {self.capacity}")

    def __len__(self) -> int:
        return len(self.records)

    def indices(self) -> list[int]:
        return [r.frame_index for r in self.records]

    def push(self, rec: FrameRecord) -> None:
        if self.records and rec.frame_index <= self.records[-1].frame_index:
            raise MemoryError_(
                f"frame_index {rec.frame_index} not greater than last stored "
                f"{self.records[-1].frame_index}")
        self.records.append(rec)
        if len(self.records) > self.capacity:
            evict_at = 1 if self.pin_first and len(self.records) > 1 else 0
            del self.records[evict_at]

    def gather(self) -> tuple[Tensor, Tensor]:
        """Stack stored embeddings oldest-to-newest along a new axis.

        Returns (image stack, mask stack), each t x (embedding shape).
        """
        if not self.records:
            raise MemoryError_(
                "gather on empty memory; seed it with the first frame first")
        image = T.stack([r.image_emb for r in self.records])
        mask = T.stack([r.mask_emb for r in self.records])
        return image, mask
