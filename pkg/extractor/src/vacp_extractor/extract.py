"""Run a causal LM over prompts and dump full next-token logit vectors.

This is a dumb logit faucet: no masking, no temperature, no filtering.
All of that belongs to the conformal engine downstream; keeping the
science out of the adapter leaves a single source of truth.

Prompt files are JSON lines in one of two shapes:

  {"context": ..., "question": ..., "answer": ...}
      The prompt is the rendered template; the target is the first
      token of the answer, tokenized with a leading space (recorded in
      the manifest, since tokenization of answers is context-dependent).
  {"text": ...}
      Continuation style: the first max_context_tokens tokens are the
      context and the following token is the target.

Samples whose target cannot be derived (empty answer tokenization, text
shorter than two tokens) are skipped and logged.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import torch
from transformers import AutoModelForCausalLM, AutoTokenizer

from . import formats

logger = logging.getLogger(__name__)

DEFAULT_TEMPLATE = "Context: {context} Question: {question} Answer:"


@dataclass
class ExtractionConfig:
    model_id: str
    prompt_file: str
    out_dir: str
    prompt_template: str = DEFAULT_TEMPLATE
    max_context_tokens: int = 256
    device: str = "cpu"
    dataset_id: str = "extraction"
    seed: int = 0
    validation_fraction: float = 0.2
    calibration_share: float = 0.6
    batch_size: int = 8


@dataclass
class ExtractionResult:
    dataset_path: Path
    manifest_path: Path
    n_records: int
    n_skipped: int
    vocab_size: int
    skipped_ids: list = field(default_factory=list)


def _read_prompts(path: Path) -> list[dict]:
    prompts = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise ValueError(f"{path}:{lineno}: expected a JSON object")
            qa = {"context", "question", "answer"} <= obj.keys()
            if not qa and "text" not in obj:
                raise ValueError(
                    f"{path}:{lineno}: need either context/question/answer or text"
                )
            obj.setdefault("id", f"{lineno:06d}")
            prompts.append(obj)
    if not prompts:
        raise ValueError(f"{path}: no prompts")
    return prompts


def _derive_sample(tokenizer, config, prompt):
    """Returns (input_ids, target_id) or None when no target is derivable."""
    if "text" in prompt and not {"context", "question", "answer"} <= prompt.keys():
        ids = tokenizer.encode(prompt["text"], add_special_tokens=False)
        if len(ids) < 2:
            return None
        context = ids[: min(config.max_context_tokens, len(ids) - 1)]
        return context, ids[len(context)]

    rendered = config.prompt_template.format(
        context=prompt["context"], question=prompt["question"]
    )
    input_ids = tokenizer.encode(rendered, add_special_tokens=False)
    input_ids = input_ids[-config.max_context_tokens:]
    answer_ids = tokenizer.encode(" " + str(prompt["answer"]),
                                  add_special_tokens=False)
    if not input_ids or not answer_ids:
        return None
    return input_ids, answer_ids[0]


def _forward_batch(model, device, pad_id, batch):
    """Final-position logits for a batch of variable-length id lists.

    Left-padding keeps the last position meaningful for every row;
    mask-aware position ids make padded rows match their unpadded runs.
    """
    width = max(len(ids) for _, ids, _ in batch)
    input_ids = torch.full((len(batch), width), pad_id, dtype=torch.long)
    attention = torch.zeros((len(batch), width), dtype=torch.long)
    for row, (_, ids, _) in enumerate(batch):
        input_ids[row, width - len(ids):] = torch.tensor(ids, dtype=torch.long)
        attention[row, width - len(ids):] = 1
    position_ids = (attention.cumsum(-1) - 1).clamp(min=0)
    out = model(
        input_ids=input_ids.to(device),
        attention_mask=attention.to(device),
        position_ids=position_ids.to(device),
    )
    return out.logits[:, -1, :].float().cpu().numpy()


def extract_logits(config: ExtractionConfig) -> ExtractionResult:
    """Batched forward passes; the full final-position logit vector over
    the tokenizer's vocabulary becomes one record per prompt (models
    with padded output embeddings have the artifact columns beyond the
    vocabulary sliced off). Sample ids and the split manifest are
    deterministic given the config; logit bytes additionally depend on
    the runtime being deterministic."""
    prompts = _read_prompts(Path(config.prompt_file))
    tokenizer = AutoTokenizer.from_pretrained(config.model_id)
    model = AutoModelForCausalLM.from_pretrained(config.model_id)
    model.eval()
    device = torch.device(config.device)
    model.to(device)

    vocab_size = len(tokenizer)
    n_emitted = model.get_output_embeddings().weight.shape[0]
    if n_emitted < vocab_size:
        raise ValueError(
            f"model emits {n_emitted} logits but the tokenizer defines "
            f"{vocab_size} tokens"
        )
    pad_id = tokenizer.pad_token_id
    if pad_id is None:
        pad_id = tokenizer.eos_token_id if tokenizer.eos_token_id is not None else 0

    pending = []
    skipped = []
    for prompt in prompts:
        sample_id = f"{config.dataset_id}-{prompt['id']}"
        derived = _derive_sample(tokenizer, config, prompt)
        if derived is None:
            logger.warning("skipping %s: no target token derivable", sample_id)
            skipped.append(sample_id)
            continue
        input_ids, target_id = derived
        pending.append((sample_id, input_ids, int(target_id)))

    if not pending:
        raise ValueError("every prompt was skipped; nothing to write")

    records = []
    batch_size = max(1, config.batch_size)
    with torch.no_grad():
        for start in range(0, len(pending), batch_size):
            batch = pending[start : start + batch_size]
            logits = _forward_batch(model, device, pad_id, batch)
            for (sample_id, _, target_id), vec in zip(batch, logits):
                records.append((sample_id, target_id, vec[:vocab_size]))

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset_path = out_dir / "dataset.bin"
    manifest_path = out_dir / "manifest.json"
    formats.write_logit_dataset(dataset_path, records, vocab_size)
    splits = formats.make_splits(
        [r[0] for r in records],
        seed=config.seed,
        validation_fraction=config.validation_fraction,
        calibration_share=config.calibration_share,
    )
    rest = 1.0 - config.validation_fraction
    formats.write_manifest(
        manifest_path,
        dataset_id=config.dataset_id,
        splits=splits,
        fractions={
            "calibration": rest * config.calibration_share,
            "validation": config.validation_fraction,
            "evaluation": rest * (1.0 - config.calibration_share),
        },
        extraction_info={
            "model_id": config.model_id,
            "prompt_template": config.prompt_template,
            "max_context_tokens": config.max_context_tokens,
            "answer_leading_space": True,
            "seed": config.seed,
            "n_skipped": len(skipped),
        },
    )
    return ExtractionResult(
        dataset_path=dataset_path,
        manifest_path=manifest_path,
        n_records=len(records),
        n_skipped=len(skipped),
        vocab_size=vocab_size,
        skipped_ids=skipped,
    )
