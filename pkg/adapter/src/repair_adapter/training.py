"""Training loops for the matcher and the two-phase generator."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import torch
from torch import nn

from . import data
from .checkpoints import ModelCheckpoint
from .models import CausalLM, Seq2SeqMatcher
from .vocab import PAD, pad_batch

logger = logging.getLogger(__name__)


@dataclass
class MatcherHyperparams:
    learning_rate: float = 1e-5
    epochs: int = 10
    max_input_len: int = 512
    max_output_len: int = 512
    batch_size: int = 16
    emb_dim: int = 64
    hidden: int = 128
    seed: int = 0


@dataclass
class GeneratorHyperparams:
    learning_rate: float = 5e-5
    epochs: int = 10
    max_len: int = 2048
    batch_size: int = 8
    emb_dim: int = 64
    hidden: int = 256
    seed: int = 0
    loss_floor: float = 0.0  # stop early once mean epoch loss drops below


@dataclass
class TrainResult:
    checkpoint: ModelCheckpoint
    loss_history: list[float] = field(default_factory=list)


def _batches(items, size):
    for start in range(0, len(items), size):
        yield items[start:start + size]


def train_matcher(pairs_path: str | Path, patterns_path: str | Path,
                  out_dir: str | Path,
                  hyperparams: MatcherHyperparams | None = None,
                  splits: list[str] | None = None) -> TrainResult:
    """Cross-entropy on action/key tokens given CWE text plus function."""
    hp = hyperparams or MatcherHyperparams()
    torch.manual_seed(hp.seed)
    pairs = data.load_pairs(pairs_path, splits)
    patterns = data.load_patterns(patterns_path)
    if not pairs:
        raise ValueError("no training pairs")
    examples, truncated = data.build_matcher_examples(
        pairs, patterns, hp.max_input_len, hp.max_output_len)
    if truncated:
        logger.info("matcher: %d/%d samples truncated to max lengths",
                    truncated, len(examples))

    model = Seq2SeqMatcher(emb_dim=hp.emb_dim, hidden=hp.hidden)
    optimizer = torch.optim.Adam(model.parameters(), lr=hp.learning_rate)
    criterion = nn.CrossEntropyLoss(ignore_index=PAD)
    history = []
    for _ in range(hp.epochs):
        model.train()
        total, count = 0.0, 0
        for batch in _batches(examples, hp.batch_size):
            src, src_mask = pad_batch([ex.source for ex in batch])
            tgt_in, _ = pad_batch([ex.target_in for ex in batch])
            tgt_out, _ = pad_batch([ex.target_out for ex in batch])
            logits = model(src, src_mask, tgt_in)
            loss = criterion(logits.reshape(-1, logits.shape[-1]),
                             tgt_out.reshape(-1))
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += loss.item() * len(batch)
            count += len(batch)
        history.append(total / count)

    checkpoint = ModelCheckpoint(
        role="matcher", base_model_id="gru-attn-seq2seq-tiny",
        phase="matcher", path=str(out_dir),
        manifest={
            "data_hash": data.data_hash([pairs_path, patterns_path]),
            "examples": len(examples), "truncated_samples": truncated,
            "epochs": hp.epochs, "learning_rate": hp.learning_rate,
            "max_input_len": hp.max_input_len,
            "max_output_len": hp.max_output_len, "seed": hp.seed,
            "adaptation": "full", "loss_history": history,
        })
    checkpoint.save(model)
    return TrainResult(checkpoint=checkpoint, loss_history=history)


def train_generator(pairs_path: str | Path, out_dir: str | Path,
                    phase: str,
                    parent: ModelCheckpoint | None = None,
                    hyperparams: GeneratorHyperparams | None = None,
                    splits: list[str] | None = None) -> TrainResult:
    """Autoregressive loss on the fix tokens given the marked function.

    ``bug_fix`` trains from scratch on a broad fix corpus; ``vul_fix``
    continues from a bug_fix parent checkpoint on security fixes.
    """
    if phase not in ("bug_fix", "vul_fix"):
        raise ValueError(f"unknown phase {phase!r}")
    if phase == "vul_fix" and parent is None:
        raise ValueError("vul_fix training requires a bug_fix parent "
                         "checkpoint")
    hp = hyperparams or GeneratorHyperparams()
    torch.manual_seed(hp.seed)
    pairs = data.load_pairs(pairs_path, splits)
    if not pairs:
        raise ValueError("no training pairs")
    examples, truncated = data.build_generator_examples(pairs, hp.max_len)
    if truncated:
        logger.info("generator: %d/%d samples truncated to max length",
                    truncated, len(examples))

    if parent is not None:
        if parent.phase != "bug_fix":
            raise ValueError("parent checkpoint must be a bug_fix phase")
        model = parent.load_model()
    else:
        model = CausalLM(emb_dim=hp.emb_dim, hidden=hp.hidden)
    optimizer = torch.optim.Adam(model.parameters(), lr=hp.learning_rate)
    criterion = nn.CrossEntropyLoss(ignore_index=PAD)
    history = []
    for _ in range(hp.epochs):
        model.train()
        total, count = 0.0, 0
        for batch in _batches(examples, hp.batch_size):
            sequences = [ex.source + ex.target_out for ex in batch]
            ids, _ = pad_batch(sequences)
            inputs, labels = ids[:, :-1], ids[:, 1:].clone()
            # score only the fix tokens: mask out the conditioning prefix
            for row, ex in enumerate(batch):
                labels[row, :len(ex.source) - 1] = PAD
            logits, _ = model(inputs)
            loss = criterion(logits.reshape(-1, logits.shape[-1]),
                             labels.reshape(-1))
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += loss.item() * len(batch)
            count += len(batch)
        history.append(total / count)
        if history[-1] < hp.loss_floor:
            break

    manifest = {
        "data_hash": data.data_hash([pairs_path]),
        "examples": len(examples), "truncated_samples": truncated,
        "epochs_configured": hp.epochs, "epochs_run": len(history),
        "learning_rate": hp.learning_rate, "max_len": hp.max_len,
        "seed": hp.seed, "adaptation": "full", "loss_history": history,
        "parent": None,
    }
    if parent is not None:
        manifest["parent"] = parent.path
        manifest["parent_data_hash"] = parent.manifest.get("data_hash")
    checkpoint = ModelCheckpoint(
        role="generator", base_model_id="gru-lm-tiny", phase=phase,
        path=str(out_dir), manifest=manifest)
    checkpoint.save(model)
    return TrainResult(checkpoint=checkpoint, loss_history=history)
