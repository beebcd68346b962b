"""FIFO memory bank of negative style codes.

One ring buffer per tap layer, all sharing a single occupancy count and
write cursor because codes are always pushed together. Stored vectors are
detached copies, so no gradient ever flows into bank contents. Default
capacity follows the 4096-entry negative dictionary.
"""

import torch

from .projector import CODE_DIMS, StyleCode

DEFAULT_CAPACITY = 4096


class StyleBank:
    """Per-layer FIFO dictionary of unit-norm negative style codes.

    Single-writer: only the training loop pushes; concurrent readers are
    fine between writes ( :meth:`negatives` returns copies, never views of
    the underlying ring).
    """

    def __init__(self, dims: tuple[int, ...] = CODE_DIMS, capacity: int = DEFAULT_CAPACITY):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.dims = tuple(dims)
        self.capacity = capacity
        self.buffers = [torch.zeros(capacity, k) for k in self.dims]
        self.source_ids: list = [None] * capacity
        self.occupancy = 0
        self.cursor = 0

    def __len__(self):
        return self.occupancy

    def push(self, code: StyleCode, source_ids: list | None = None):
        """Append a (possibly batched) code layer-wise, evicting oldest entries when full.

        ``source_ids`` optionally tags each sample with the identity of the
        image it came from, letting callers exclude an anchor's own codes
        from its negative set.
        """
        if code.dims != self.dims:
            raise ValueError(f"code dims {code.dims} do not match bank dims {self.dims}")
        batch = code.batch_size
        if source_ids is not None and len(source_ids) != batch:
            raise ValueError("source_ids length must match the code batch")
        rows = [z.detach().to(buf.dtype).cpu() for z, buf in zip(code.codes, self.buffers)]
        for b in range(batch):
            for buf, layer_rows in zip(self.buffers, rows):
                buf[self.cursor] = layer_rows[b]
            self.source_ids[self.cursor] = source_ids[b] if source_ids is not None else None
            self.cursor = (self.cursor + 1) % self.capacity
            self.occupancy = min(self.occupancy + 1, self.capacity)

    def negatives(self) -> list[torch.Tensor]:
        """All current entries per layer as [N, K_i] matrices, oldest first."""
        if self.occupancy < self.capacity:
            return [buf[: self.occupancy].clone() for buf in self.buffers]
        return [
            torch.cat([buf[self.cursor :], buf[: self.cursor]]).clone()
            for buf in self.buffers
        ]

    def negative_ids(self) -> list:
        """Source ids aligned row-for-row with :meth:`negatives`."""
        if self.occupancy < self.capacity:
            return list(self.source_ids[: self.occupancy])
        return list(self.source_ids[self.cursor :]) + list(self.source_ids[: self.cursor])

    def state_dict(self) -> dict:
        return {
            "dims": self.dims,
            "capacity": self.capacity,
            "occupancy": self.occupancy,
            "cursor": self.cursor,
            "buffers": [buf.clone() for buf in self.buffers],
            "source_ids": list(self.source_ids),
        }

    @classmethod
    def from_state_dict(cls, state: dict) -> "StyleBank":
        bank = cls(dims=tuple(state["dims"]), capacity=state["capacity"])
        bank.occupancy = state["occupancy"]
        bank.cursor = state["cursor"]
        bank.buffers = [buf.clone() for buf in state["buffers"]]
        bank.source_ids = list(state.get("source_ids", [None] * bank.capacity))
        return bank
