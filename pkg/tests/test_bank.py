import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from caststyle.bank import StyleBank
from caststyle.projector import StyleCode


def unit_code(dims=(4, 6), batch=1, seed=0):
    gen = torch.Generator().manual_seed(seed)
    codes = []
    for k in dims:
        v = torch.randn(batch, k, generator=gen, dtype=torch.float64)
        codes.append((v / v.norm(dim=1, keepdim=True)).float())
    return StyleCode(codes)


class TestPush:
    def test_single_push_occupancy(self):
        bank = StyleBank(dims=(4, 6), capacity=8)
        bank.push(unit_code())
        assert len(bank) == 1

    def test_batched_push_occupancy(self):
        bank = StyleBank(dims=(4, 6), capacity=8)
        bank.push(unit_code(batch=3))
        assert len(bank) == 3

    def test_fifo_eviction_at_full_capacity(self):
        # 4096 pushes then 3 more: oldest 3 gone, order preserved.
        bank = StyleBank(dims=(2,), capacity=4096)
        codes = []
        for i in range(4096 + 3):
            c = unit_code(dims=(2,), seed=i)
            codes.append(c.codes[0])
            bank.push(c)
        assert len(bank) == 4096
        negatives = bank.negatives()[0]
        expected = torch.cat(codes[3:])
        assert torch.equal(negatives, expected)

    def test_capacity_cap_after_5000_pushes(self):
        bank = StyleBank(dims=(2,), capacity=4096)
        for i in range(5000):
            bank.push(unit_code(dims=(2,), seed=i))
        assert len(bank) == 4096

    def test_pushed_codes_equal_source(self):
        bank = StyleBank(dims=(4, 6), capacity=8)
        code = unit_code(seed=3)
        bank.push(code)
        for stored, src in zip(bank.negatives(), code.codes):
            assert torch.equal(stored[0], src[0])

    def test_dim_mismatch_rejected(self):
        bank = StyleBank(dims=(4, 6), capacity=8)
        with pytest.raises(ValueError):
            bank.push(unit_code(dims=(4, 7)))

    def test_stored_codes_detached(self):
        bank = StyleBank(dims=(3,), capacity=4)
        v = torch.randn(1, 3, requires_grad=True)
        z = v / (v.norm(dim=1, keepdim=True) + 1e-8)
        bank.push(StyleCode([z]))
        negs = bank.negatives()[0]
        assert not negs.requires_grad
        assert negs.grad_fn is None


class TestNegatives:
    def test_empty_bank(self):
        bank = StyleBank(dims=(4, 6), capacity=8)
        negs = bank.negatives()
        assert [n.shape for n in negs] == [(0, 4), (0, 6)]

    def test_partial_fill(self):
        bank = StyleBank(dims=(4, 6), capacity=8)
        for i in range(5):
            bank.push(unit_code(seed=i))
        assert all(n.shape[0] == 5 for n in bank.negatives())

    def test_no_aliasing_of_future_pushes(self):
        bank = StyleBank(dims=(3,), capacity=4)
        bank.push(unit_code(dims=(3,), seed=0))
        before = bank.negatives()[0].clone()
        snapshot = bank.negatives()[0]
        for i in range(1, 6):
            bank.push(unit_code(dims=(3,), seed=i))
        assert torch.equal(snapshot, before)


@settings(max_examples=50, deadline=None)
@given(
    capacity=st.integers(min_value=1, max_value=16),
    pushes=st.lists(st.integers(min_value=0, max_value=10_000), min_size=0, max_size=40),
)
def test_fifo_matches_naive_list_model(capacity, pushes):
    """negatives() always equals the last min(k, capacity) pushes, in order."""
    bank = StyleBank(dims=(2,), capacity=capacity)
    model = []
    for seed in pushes:
        code = unit_code(dims=(2,), seed=seed)
        bank.push(code)
        model.append(code.codes[0])
        model = model[-capacity:]
    got = bank.negatives()[0]
    if model:
        assert torch.equal(got, torch.cat(model))
    else:
        assert got.shape == (0, 2)


def test_state_dict_round_trip():
    bank = StyleBank(dims=(4, 6), capacity=8)
    for i in range(11):
        bank.push(unit_code(seed=i), source_ids=[f"img{i}"])
    restored = StyleBank.from_state_dict(bank.state_dict())
    assert len(restored) == len(bank)
    for a, b in zip(bank.negatives(), restored.negatives()):
        assert torch.equal(a, b)
    assert restored.negative_ids() == bank.negative_ids()


class TestSourceIds:
    def test_ids_align_with_negatives_order(self):
        bank = StyleBank(dims=(2,), capacity=4)
        for i in range(6):  # wraps twice
            bank.push(unit_code(dims=(2,), seed=i), source_ids=[f"img{i}"])
        assert bank.negative_ids() == ["img2", "img3", "img4", "img5"]
        # row k of negatives() must be the code pushed with id k+2
        negs = bank.negatives()[0]
        for k, i in enumerate(range(2, 6)):
            assert torch.equal(negs[k], unit_code(dims=(2,), seed=i).codes[0][0])

    def test_ids_default_to_none(self):
        bank = StyleBank(dims=(2,), capacity=4)
        bank.push(unit_code(dims=(2,)))
        assert bank.negative_ids() == [None]

    def test_id_length_mismatch_rejected(self):
        bank = StyleBank(dims=(2,), capacity=4)
        with pytest.raises(ValueError):
            bank.push(unit_code(dims=(2,), batch=2), source_ids=["only_one"])
