"""Byte-level tokenizer.

Token ids 0..255 are raw bytes; EOS and PAD are appended specials. Targets
always end with EOS so greedy decoding has a stopping symbol; prompt positions
carry the ignore label so the loss covers target tokens only.
"""

from __future__ import annotations

EOS_ID = 256
PAD_ID = 257
VOCAB_SIZE = 258
IGNORE_INDEX = -100


def encode_text(text: str) -> list[int]:
    return list(text.encode("utf-8"))


def decode_ids(ids: list[int]) -> str:
    out = bytearray()
    for token in ids:
        if token == EOS_ID:
            break
        if token < 256:
            out.append(token)
    return out.decode("utf-8", errors="replace")


def encode_pair(prompt: str, target: str,
                max_seq_len: int) -> tuple[list[int], list[int], bool]:
    """Return (input ids, labels, truncated). Overlong pairs lose tokens from
    the target tail; the prompt is never cut."""
    prompt_ids = encode_text(prompt)
    target_ids = encode_text(target) + [EOS_ID]
    truncated = False
    overflow = len(prompt_ids) + len(target_ids) - max_seq_len
    if overflow > 0:
        target_ids = target_ids[:max(0, len(target_ids) - overflow)]
        truncated = True
    ids = prompt_ids + target_ids
    labels = [IGNORE_INDEX] * len(prompt_ids) + list(target_ids)
    return ids, labels, truncated
