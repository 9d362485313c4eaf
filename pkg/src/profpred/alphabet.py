"""Fixed amino-acid alphabet and model token vocabulary.

The 20-letter ordering is alphabetical by one-letter code and is the
ordering of every emission vector, label row, and profile-head output in
the package. Token ids are frozen: 0..19 are the residues in this order,
followed by the special tokens below. Both orderings are part of the
on-disk formats and must not change.
"""
from __future__ import annotations

import numpy as np

from .exceptions import TokenOutOfRangeError

AMINO_ACIDS = "ACDEFGHIKLMNPQRSTVWY"
ALPHABET_SIZE = len(AMINO_ACIDS)  # 20

AA_INDEX = {aa: i for i, aa in enumerate(AMINO_ACIDS)}

GAP_CHARS = frozenset("-.")
UNKNOWN_RESIDUE = "X"

# Token vocabulary: 20 residues + 5 specials = 25.
PAD_ID = 20
MASK_ID = 21
UNK_ID = 22
BOS_ID = 23
EOS_ID = 24
VOCAB_SIZE = 25

SPECIAL_TOKENS = {PAD_ID: "<pad>", MASK_ID: "<mask>", UNK_ID: "<unk>",
                  BOS_ID: "<bos>", EOS_ID: "<eos>"}


def is_gap(char: str) -> bool:
    return char in GAP_CHARS


def is_residue(char: str) -> bool:
    """True for the 20 standard residues and the unknown marker 'X'."""
    return char in AA_INDEX or char == UNKNOWN_RESIDUE


def encode_sequence(residues: str) -> np.ndarray:
    """Map an ungapped residue string to an int64 token-id array.

    'X' maps to the unknown token. Raises TokenOutOfRangeError for any
    other character outside the alphabet.
    """
    ids = np.empty(len(residues), dtype=np.int64)
    for i, ch in enumerate(residues):
        if ch in AA_INDEX:
            ids[i] = AA_INDEX[ch]
        elif ch == UNKNOWN_RESIDUE:
            ids[i] = UNK_ID
        else:
            raise TokenOutOfRangeError(f"cannot encode character {ch!r}")
    return ids


def decode_tokens(ids) -> str:
    """Inverse of encode_sequence; specials render as their tag names."""
    out = []
    for t in np.asarray(ids, dtype=np.int64):
        t = int(t)
        if 0 <= t < ALPHABET_SIZE:
            out.append(AMINO_ACIDS[t])
        elif t in SPECIAL_TOKENS:
            out.append(SPECIAL_TOKENS[t])
        else:
            raise TokenOutOfRangeError(f"token id {t} outside vocabulary")
    return "".join(out)
