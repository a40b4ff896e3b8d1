"""Tiny GRU models: an attention seq2seq matcher and a causal LM generator.

Sized for desk-scale training; the serving protocol hides the architecture,
so larger backbones can be swapped in behind the same checkpoints.
"""

from __future__ import annotations

import torch
from torch import nn

from .vocab import BOS, EOS, PAD, VOCAB_SIZE


class Seq2SeqMatcher(nn.Module):
    """Encoder-decoder over bytes with dot-product attention."""

    def __init__(self, emb_dim: int = 64, hidden: int = 128):
        super().__init__()
        self.emb_dim = emb_dim
        self.hidden = hidden
        self.embedding = nn.Embedding(VOCAB_SIZE, emb_dim, padding_idx=PAD)
        self.encoder = nn.GRU(emb_dim, hidden, batch_first=True)
        self.decoder = nn.GRU(emb_dim, hidden, batch_first=True)
        self.combine = nn.Linear(2 * hidden, hidden)
        self.out = nn.Linear(hidden, VOCAB_SIZE)

    def encode(self, src: torch.Tensor, src_mask: torch.Tensor):
        enc_out, enc_h = self.encoder(self.embedding(src))
        return enc_out, enc_h, src_mask

    def _attend(self, dec_out, enc_out, src_mask):
        scores = dec_out @ enc_out.transpose(1, 2)  # (B, T_dec, T_src)
        scores = scores.masked_fill(~src_mask.unsqueeze(1), float("-inf"))
        context = torch.softmax(scores, dim=-1) @ enc_out
        mixed = torch.tanh(self.combine(torch.cat([dec_out, context], -1)))
        return self.out(mixed)

    def forward(self, src, src_mask, tgt_in):
        """Teacher-forced logits for every target position."""
        enc_out, enc_h, _ = self.encode(src, src_mask)
        dec_out, _ = self.decoder(self.embedding(tgt_in), enc_h)
        return self._attend(dec_out, enc_out, src_mask)

    @torch.no_grad()
    def beam_search(self, src_ids: list[int], beam_width: int,
                    max_tokens: int) -> list[tuple[list[int], float]]:
        """Top sequences by summed log-probability, best first."""
        self.eval()
        src, src_mask = _single_batch(src_ids)
        enc_out, enc_h, _ = self.encode(src, src_mask)
        beams = [([BOS], 0.0, enc_h, False)]
        for _ in range(max_tokens):
            if all(done for _, _, _, done in beams):
                break
            expanded = []
            for ids, score, hidden, done in beams:
                if done:
                    expanded.append((ids, score, hidden, True))
                    continue
                step = torch.tensor([[ids[-1]]], dtype=torch.long)
                dec_out, new_h = self.decoder(self.embedding(step), hidden)
                logits = self._attend(dec_out, enc_out, src_mask)[0, -1]
                log_probs = torch.log_softmax(logits, dim=-1)
                top = torch.topk(log_probs, beam_width)
                for lp, token in zip(top.values.tolist(),
                                     top.indices.tolist()):
                    expanded.append((ids + [token], score + lp, new_h,
                                     token == EOS))
            expanded.sort(key=lambda b: -b[1])
            beams = expanded[:beam_width]
        return [(ids[1:], score) for ids, score, _, _ in beams]


class CausalLM(nn.Module):
    """Decoder-only byte LM used for completion-style repair generation."""

    def __init__(self, emb_dim: int = 64, hidden: int = 256):
        super().__init__()
        self.emb_dim = emb_dim
        self.hidden = hidden
        self.embedding = nn.Embedding(VOCAB_SIZE, emb_dim, padding_idx=PAD)
        self.rnn = nn.GRU(emb_dim, hidden, batch_first=True)
        self.out = nn.Linear(hidden, VOCAB_SIZE)

    def forward(self, ids, hidden=None):
        output, hidden = self.rnn(self.embedding(ids), hidden)
        return self.out(output), hidden

    @torch.no_grad()
    def sample(self, prompt_ids: list[int], max_tokens: int,
               temperature: float,
               generator: torch.Generator | None = None) -> list[int]:
        """One continuation; temperature 0 decodes greedily."""
        self.eval()
        ids = torch.tensor([prompt_ids], dtype=torch.long)
        _, hidden = self.forward(ids[:, :-1]) if ids.shape[1] > 1 \
            else (None, None)
        token = ids[:, -1:]
        generated: list[int] = []
        for _ in range(max_tokens):
            logits, hidden = self.forward(token, hidden)
            logits = logits[0, -1]
            if temperature <= 0.0:
                next_token = int(torch.argmax(logits))
            else:
                probs = torch.softmax(logits / temperature, dim=-1)
                next_token = int(torch.multinomial(
                    probs, 1, generator=generator))
            if next_token == EOS:
                break
            generated.append(next_token)
            token = torch.tensor([[next_token]], dtype=torch.long)
        return generated


def _single_batch(ids: list[int]) -> tuple[torch.Tensor, torch.Tensor]:
    src = torch.tensor([ids], dtype=torch.long)
    mask = torch.ones_like(src, dtype=torch.bool)
    return src, mask
