import json
import os

import pytest
import torch

os.environ.setdefault("HF_HUB_OFFLINE", "1")
os.environ.setdefault("TRANSFORMERS_OFFLINE", "1")

WORDS = [
    "the", "capital", "of", "france", "is", "paris", "a", "city",
    "atomic", "number", "oxygen", "eight", "light", "travels", "fast",
    "water", "boils", "at", "hundred", "degrees", "context", "question",
    "answer", "and", "in", "to",
]


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory):
    """A small causal LM with special tokens, built fully offline:
    from-scratch word-level tokenizer + randomly initialized 1-layer
    transformer, saved where the auto-loaders can find them."""
    from tokenizers import Tokenizer, models, pre_tokenizers
    from transformers import GPT2Config, GPT2LMHeadModel, PreTrainedTokenizerFast

    vocab = {}
    for token in ("<pad>", "<eos>", "<bos>", "<unk>"):
        vocab[token] = len(vocab)
    for i in range(6):
        vocab[f"<unused{i}>"] = len(vocab)
    vocab["\x01\x02"] = len(vocab)  # control-character token
    for word in WORDS:
        vocab[word] = len(vocab)

    tok = Tokenizer(models.WordLevel(vocab, unk_token="<unk>"))
    tok.pre_tokenizer = pre_tokenizers.Whitespace()
    fast = PreTrainedTokenizerFast(
        tokenizer_object=tok,
        pad_token="<pad>",
        eos_token="<eos>",
        bos_token="<bos>",
        unk_token="<unk>",
    )

    torch.manual_seed(20240601)
    config = GPT2Config(
        vocab_size=len(vocab),
        n_positions=64,
        n_embd=32,
        n_layer=1,
        n_head=2,
        bos_token_id=vocab["<bos>"],
        eos_token_id=vocab["<eos>"],
    )
    model = GPT2LMHeadModel(config)

    out = tmp_path_factory.mktemp("tiny-model")
    fast.save_pretrained(out)
    model.save_pretrained(out)
    return str(out)


@pytest.fixture(scope="session")
def prompt_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("prompts") / "prompts.jsonl"
    rows = []
    qa = [
        ("paris is a city in france", "the capital of france is", "paris"),
        ("oxygen has atomic number eight", "the atomic number of oxygen is", "eight"),
        ("water boils at a hundred degrees", "water boils at", "hundred"),
        ("light travels fast", "light travels", "fast"),
    ]
    for i, (context, question, answer) in enumerate(qa * 5):
        rows.append({"id": f"qa-{i:03d}", "context": context,
                     "question": question, "answer": answer})
    texts = [
        "the capital of france is paris and paris is a city",
        "water boils at a hundred degrees",
        "light travels fast in water",
        "the atomic number of oxygen is eight",
    ]
    for i, text in enumerate(texts * 5):
        rows.append({"id": f"txt-{i:03d}", "text": text})
    # one degenerate prompt that must be skipped (single-token text)
    rows.append({"id": "short", "text": "the"})
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    return str(path)
