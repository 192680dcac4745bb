"""Batched hidden-state extraction from pretrained transformer encoders."""

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .tedh import write_tedh


class JobError(Exception):
    """The job as a whole cannot run (bad arguments, model load failure)."""


@dataclass
class ExtractJob:
    model_id: str
    texts: list
    out_dir: str
    max_tokens: int = 128
    batch_size: int = 8
    device: str = "cpu"
    include_embedding_layer: bool = True
    prompt_template: str = None      # applied as template.format(text=...)

    def __post_init__(self):
        self.texts = [t for t in self.texts if t]
        if not self.texts:
            raise JobError("text list is empty")
        if self.max_tokens < 1 or self.batch_size < 1:
            raise JobError("max_tokens and batch_size must be >= 1")


@dataclass
class Manifest:
    model_id: str
    tokenizer_id: str
    entries: dict = field(default_factory=dict)   # hash -> record
    failures: dict = field(default_factory=dict)  # hash -> message
    skipped: int = 0

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for h, rec in sorted(self.entries.items()):
                f.write(json.dumps({"hash": h, **rec}) + "\n")
            for h, msg in sorted(self.failures.items()):
                f.write(json.dumps({"hash": h, "error": msg}) + "\n")


def text_hash(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _load_model(job):
    try:
        import torch
        from transformers import AutoModel, AutoTokenizer
    except ImportError as exc:  # pragma: no cover
        raise JobError(f"transformers/torch unavailable: {exc}") from exc
    try:
        tokenizer = AutoTokenizer.from_pretrained(job.model_id)
        model = AutoModel.from_pretrained(job.model_id)
    except Exception as exc:
        raise JobError(f"cannot load model {job.model_id!r}: {exc}") from exc
    if tokenizer.pad_token is None:
        tokenizer.pad_token = tokenizer.eos_token or tokenizer.unk_token
    model.eval().to(job.device)
    return torch.no_grad, tokenizer, model


def _right_align(states, mask_row):
    """Move any left padding behind the valid tokens (mask stays boolean)."""
    valid = np.flatnonzero(mask_row)
    pad = np.flatnonzero(~mask_row)
    order = np.concatenate([valid, pad])
    return states[:, order, :], mask_row[order]


def extract(job):
    """Run the job; returns a Manifest. Existing hash files are skipped."""
    os.makedirs(job.out_dir, exist_ok=True)
    no_grad, tokenizer, model = _load_model(job)

    # dedup inputs first: one file per distinct text
    distinct = {}
    for text in job.texts:
        rendered = (job.prompt_template.format(text=text)
                    if job.prompt_template else text)
        distinct.setdefault(text_hash(rendered), rendered)

    manifest = Manifest(model_id=job.model_id,
                        tokenizer_id=tokenizer.name_or_path)
    pending = []
    for h, text in distinct.items():
        if os.path.exists(os.path.join(job.out_dir, h + ".tedh")):
            manifest.skipped += 1
        else:
            pending.append((h, text))

    for start in range(0, len(pending), job.batch_size):
        batch = pending[start:start + job.batch_size]
        try:
            records = _run_batch(no_grad, tokenizer, model, job,
                                 [t for _, t in batch])
        except RuntimeError as exc:
            msg = str(exc)
            if "out of memory" in msg.lower():
                msg += " (try a smaller --batch)"
            for h, _ in batch:
                manifest.failures[h] = msg
            continue
        for (h, _text), (states, mask) in zip(batch, records):
            path = os.path.join(job.out_dir, h + ".tedh")
            try:
                write_tedh(states, mask, _meta(job, manifest, h), path)
            except Exception as exc:
                manifest.failures[h] = str(exc)
                continue
            l, n, d = states.shape
            manifest.entries[h] = {"file": os.path.basename(path),
                                   "L": l, "N": n, "D": d}
    return manifest


def _meta(job, manifest, h):
    meta = {
        "model_id": job.model_id,
        "tokenizer_id": manifest.tokenizer_id,
        "text_hash": h,
        "includes_embedding_layer":
            "true" if job.include_embedding_layer else "false",
    }
    if job.prompt_template:
        meta["prompt_template"] = job.prompt_template
    return meta


def _run_batch(no_grad, tokenizer, model, job, texts):
    enc = tokenizer(texts, return_tensors="pt", padding=True,
                    truncation=True, max_length=job.max_tokens)
    enc = {k: v.to(job.device) for k, v in enc.items()}
    with no_grad():
        out = model(**enc, output_hidden_states=True)
    # (n_layers+1, B, N, D) including the embedding layer at index 0
    hidden = np.stack([h.float().cpu().numpy() for h in out.hidden_states])
    if not job.include_embedding_layer:
        hidden = hidden[1:]
    masks = enc["attention_mask"].cpu().numpy().astype(bool)
    records = []
    for b in range(hidden.shape[1]):
        # stored sequences are always right-padded; the mask records padding
        states, mask = _right_align(hidden[:, b], masks[b])
        records.append((np.ascontiguousarray(states, dtype=np.float32), mask))
    return records
