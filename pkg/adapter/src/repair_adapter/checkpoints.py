"""Checkpoint directories: model weights plus a training manifest."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .models import CausalLM, Seq2SeqMatcher

WEIGHTS_FILE = "weights.pt"
MANIFEST_FILE = "manifest.json"

SEPARATORS = {"sep_token_id": 259, "bos_token_id": 257, "eos_token_id": 258,
              "pad_token_id": 256}


@dataclass
class ModelCheckpoint:
    role: str                 # "matcher" | "generator"
    base_model_id: str
    phase: str                # "matcher" | "bug_fix" | "vul_fix"
    path: str
    manifest: dict = field(default_factory=dict)

    def save(self, model: torch.nn.Module) -> None:
        directory = Path(self.path)
        directory.mkdir(parents=True, exist_ok=True)
        torch.save({"state_dict": model.state_dict(),
                    "emb_dim": model.emb_dim, "hidden": model.hidden},
                   directory / WEIGHTS_FILE)
        payload = {"role": self.role, "base_model_id": self.base_model_id,
                   "phase": self.phase, "separators": SEPARATORS}
        payload.update(self.manifest)
        (directory / MANIFEST_FILE).write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n",
            encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ModelCheckpoint":
        directory = Path(path)
        manifest = json.loads((directory / MANIFEST_FILE).read_text())
        return cls(role=manifest["role"],
                   base_model_id=manifest["base_model_id"],
                   phase=manifest["phase"], path=str(directory),
                   manifest=manifest)

    def load_model(self) -> torch.nn.Module:
        blob = torch.load(Path(self.path) / WEIGHTS_FILE,
                          map_location="cpu", weights_only=True)
        if self.role == "matcher":
            model = Seq2SeqMatcher(emb_dim=blob["emb_dim"],
                                   hidden=blob["hidden"])
        elif self.role == "generator":
            model = CausalLM(emb_dim=blob["emb_dim"], hidden=blob["hidden"])
        else:
            raise ValueError(f"unknown checkpoint role {self.role!r}")
        model.load_state_dict(blob["state_dict"])
        model.eval()
        return model
