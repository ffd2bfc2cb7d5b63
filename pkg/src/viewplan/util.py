"""Small shared helpers: canonical JSON lines and stable seed derivation."""

from __future__ import annotations

import hashlib
import json


def dumps_canonical(obj) -> str:
    """Deterministic single-line JSON: sorted keys, no whitespace variance."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_jsonl(path, records) -> None:
    with open(str(path), "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(dumps_canonical(rec) + "\n")


def read_jsonl(path) -> list:
    out = []
    with open(str(path), "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def derive_seed(seed: int, tag: str) -> int:
    """Stable child seed from a master seed and a string tag (hash-salt free)."""
    digest = hashlib.sha256(f"{seed}:{tag}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")
