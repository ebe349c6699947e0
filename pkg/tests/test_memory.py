"""FIFO memory bank semantics."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from camoprop.memory import FrameRecord, MemoryBank, MemoryError_
from camoprop.tensor import ShapeError, Tensor


def rec(i: int, value: float = 0.0) -> FrameRecord:
    emb = Tensor(np.full((2, 2, 2), value if value else float(i)))
    return FrameRecord(frame_index=i, image_emb=emb,
                       mask_emb=Tensor(emb.data.copy()))


class TestPush:
    def test_eviction_keeps_newest_two(self):
        bank = MemoryBank(capacity=2)
        for i in (0, 1, 2):
            bank.push(rec(i))
        assert bank.indices() == [1, 2]

    def test_push_into_empty(self):
        bank = MemoryBank(capacity=3)
        bank.push(rec(0))
        assert len(bank) == 1

    def test_hundred_pushes_keep_last_two(self):
        bank = MemoryBank(capacity=2)
        for i in range(100):
            bank.push(rec(i))
        assert bank.indices() == [98, 99]

    def test_non_increasing_index_rejected(self):
        bank = MemoryBank(capacity=2)
        bank.push(rec(5))
        with pytest.raises(MemoryError_):
            bank.push(rec(5))
        with pytest.raises(MemoryError_):
            bank.push(rec(3))

    def test_capacity_must_be_positive(self):
        with pytest.raises(MemoryError_):
            MemoryBank(capacity=0)

    def test_record_shape_consistency_enforced(self):
        with pytest.raises(ShapeError):
            FrameRecord(0, Tensor(np.zeros((2, 2, 2))),
                        Tensor(np.zeros((2, 2, 3))))

    def test_pin_first_keeps_seed_record(self):
        bank = MemoryBank(capacity=2, pin_first=True)
        for i in range(5):
            bank.push(rec(i))
        assert bank.indices() == [0, 4]


class TestGather:
    def test_empty_gather_is_error(self):
        with pytest.raises(MemoryError_, match="seed"):
            MemoryBank(capacity=2).gather()

    def test_single_record(self):
        bank = MemoryBank(capacity=2)
        bank.push(rec(0, value=3.5))
        img, mask = bank.gather()
        assert img.shape == (1, 2, 2, 2)
        assert np.all(img.data == 3.5) and np.all(mask.data == 3.5)

    def test_two_records_ordered_oldest_first(self):
        bank = MemoryBank(capacity=2)
        bank.push(rec(0, value=1.0))
        bank.push(rec(1, value=2.0))
        img, _ = bank.gather()
        assert img.shape[0] == 2
        assert np.all(img.data[0] == 1.0) and np.all(img.data[1] == 2.0)

    def test_gather_after_eviction_excludes_evicted(self):
        bank = MemoryBank(capacity=2)
        for i in range(4):
            bank.push(rec(i, value=float(i + 1)))
        img, _ = bank.gather()
        assert [img.data[t, 0, 0, 0] for t in range(2)] == [3.0, 4.0]

    def test_gather_does_not_mutate_records(self):
        bank = MemoryBank(capacity=2)
        bank.push(rec(0, value=1.5))
        before = bank.records[0].image_emb.data.copy()
        img, mask = bank.gather()
        img.data[0] += 100.0
        assert np.array_equal(bank.records[0].image_emb.data, before)


@settings(max_examples=200, deadline=None)
@given(capacity=st.sampled_from([1, 2, 5]),
       n_push=st.integers(min_value=0, max_value=30))
def test_fifo_law(capacity, n_push):
    """Bank contents always equal the last min(len, capacity) pushes."""
    bank = MemoryBank(capacity=capacity)
    pushed = []
    for i in range(n_push):
        bank.push(rec(i))
        pushed.append(i)
    assert bank.indices() == pushed[-capacity:] if pushed else bank.indices() == []
