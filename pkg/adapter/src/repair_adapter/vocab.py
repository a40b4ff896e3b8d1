"""Byte-level vocabulary with special tokens shared by both models."""

from __future__ import annotations

import torch

PAD = 256
BOS = 257
EOS = 258
SEP = 259  # separates the conditioning text from the target
VOCAB_SIZE = 260

SPECIAL_NAMES = {PAD: "<pad>", BOS: "<bos>", EOS: "<eos>", SEP: "<sep>"}


def encode(text: str) -> list[int]:
    return list(text.encode("utf-8"))


def decode(ids: list[int]) -> str:
    return bytes(i for i in ids if i < 256).decode("utf-8", errors="replace")


def pad_batch(sequences: list[list[int]], device=None) -> tuple[torch.Tensor, torch.Tensor]:
    """Right-padded id tensor plus a boolean mask of real positions."""
    width = max(len(s) for s in sequences)
    batch = torch.full((len(sequences), width), PAD, dtype=torch.long,
                       device=device)
    mask = torch.zeros((len(sequences), width), dtype=torch.bool,
                       device=device)
    for row, seq in enumerate(sequences):
        batch[row, :len(seq)] = torch.tensor(seq, dtype=torch.long)
        mask[row, :len(seq)] = True
    return batch, mask
