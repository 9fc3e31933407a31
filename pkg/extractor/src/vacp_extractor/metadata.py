"""Tokenizer inspection: dense per-token metadata for structural filtering.

The string heuristics (which surfaces count as reserved, what counts as
printable) live here, on the ingestion side; the conformal engine only
reads the resulting flags.
"""

from __future__ import annotations

import unicodedata

from transformers import AutoTokenizer


def _is_reserved_surface(surface: str) -> bool:
    return "unused" in surface.lower() or surface.startswith("<reserved")


def _is_printable_surface(surface: str) -> bool:
    if not surface:
        return False
    return any(unicodedata.category(ch) != "Cc" for ch in surface)


def extract_token_metadata(model_id: str) -> list[dict]:
    """Dense metadata rows over [0, vocab_size) for a tokenizer.

    vocab_size is the full id space including added tokens; ids the
    tokenizer cannot decode (holes in some vocabularies) are flagged as
    reserved placeholders.
    """
    tokenizer = AutoTokenizer.from_pretrained(model_id)
    vocab = tokenizer.get_vocab()
    vocab_size = max(len(tokenizer), max(vocab.values()) + 1 if vocab else 0)
    special_ids = set(tokenizer.all_special_ids)
    special_tokens = set(tokenizer.all_special_tokens)

    rows = []
    for token_id in range(vocab_size):
        surface = tokenizer.convert_ids_to_tokens(token_id)
        if surface is None:
            rows.append({
                "token_id": token_id,
                "surface": "",
                "is_special": False,
                "is_reserved": True,
                "is_printable": False,
            })
            continue
        rows.append({
            "token_id": token_id,
            "surface": surface,
            "is_special": token_id in special_ids or surface in special_tokens,
            "is_reserved": _is_reserved_surface(surface),
            "is_printable": _is_printable_surface(surface),
        })
    return rows
