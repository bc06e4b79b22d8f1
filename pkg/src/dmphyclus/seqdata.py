"""Nucleotide alignments with ambiguity-aware encoding.

Each site of each sequence is stored as a 4-bit mask over the canonical
state order A, C, G, T (bit 0 = A, ..., bit 3 = T). The mask doubles as the
tip partial likelihood vector used by pruning: an ambiguous code sets every
compatible state to 1, and gaps/N set all four.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AlignmentShapeError, ParseError, ValidationError

STATES = "ACGT"

_BITS = {"A": 1, "C": 2, "G": 4, "T": 8}
IUPAC = {
    "A": 1, "C": 2, "G": 4, "T": 8, "U": 8,
    "R": 1 | 4, "Y": 2 | 8, "S": 2 | 4, "W": 1 | 8, "K": 4 | 8, "M": 1 | 2,
    "B": 2 | 4 | 8, "D": 1 | 4 | 8, "H": 1 | 2 | 8, "V": 1 | 2 | 4,
    "N": 15, "X": 15, "-": 15, "?": 15, ".": 15,
}
# canonical code for writing: one character per mask
_MASK_TO_CHAR = {}
for _ch in "ACGTRYSWKMBDHVN":
    _MASK_TO_CHAR.setdefault(IUPAC[_ch], _ch)

# (16, 4) lookup from mask to indicator vector
INDICATORS = np.array([[(m >> b) & 1 for b in range(4)] for m in range(16)], dtype=float)


def indicator(code: str) -> np.ndarray:
    """Indicator vector (A, C, G, T) for one IUPAC character."""
    try:
        return INDICATORS[IUPAC[code.upper()]].copy()
    except KeyError:
        raise ParseError(f"not an IUPAC nucleotide code: {code!r}") from None


@dataclass(frozen=True, eq=False)
class Alignment:
    """Aligned nucleotide sequences.

    ``codes`` is an ``(n, S)`` uint8 array of state masks. Site patterns are
    computed on first access and cached: ``patterns`` is ``(n, P)``,
    ``weights`` counts how many raw columns map to each pattern and
    ``pattern_index[s]`` gives the pattern of raw column ``s``.
    """

    labels: tuple[str, ...]
    codes: np.ndarray
    _compressed: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        codes = np.asarray(self.codes, dtype=np.uint8)
        if codes.ndim != 2 or codes.shape[0] != len(self.labels):
            raise AlignmentShapeError("codes must be (n_sequences, n_sites)")
        if codes.size and (codes.min() < 1 or codes.max() > 15):
            raise ValidationError("state masks must lie in 1..15")
        if len(set(self.labels)) != len(self.labels):
            raise ValidationError("sequence labels must be unique")
        codes.setflags(write=False)
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "codes", codes)

    @property
    def n_sequences(self) -> int:
        return self.codes.shape[0]

    @property
    def n_sites(self) -> int:
        return self.codes.shape[1]

    @property
    def indicators(self) -> np.ndarray:
        """``(n, S, 4)`` float array of indicator vectors."""
        return INDICATORS[self.codes]

    def _compress(self):
        if not self._compressed:
            if self.n_sites == 0:
                pats = self.codes.copy()
                inv = np.zeros(0, dtype=np.intp)
                counts = np.zeros(0, dtype=np.int64)
            else:
                pats, inv, counts = np.unique(
                    self.codes, axis=1, return_inverse=True, return_counts=True)
            self._compressed.update(
                patterns=pats, pattern_index=np.asarray(inv).ravel(),
                weights=counts.astype(np.int64))
        return self._compressed

    @property
    def patterns(self) -> np.ndarray:
        return self._compress()["patterns"]

    @property
    def weights(self) -> np.ndarray:
        return self._compress()["weights"]

    @property
    def pattern_index(self) -> np.ndarray:
        return self._compress()["pattern_index"]

    @property
    def n_patterns(self) -> int:
        return self.patterns.shape[1]

    def subset(self, labels) -> "Alignment":
        """Rows for ``labels`` in the given order."""
        pos = {lab: i for i, lab in enumerate(self.labels)}
        missing = [lab for lab in labels if lab not in pos]
        if missing:
            raise ValidationError(f"labels not in alignment: {', '.join(missing)}")
        return Alignment(tuple(labels), self.codes[[pos[lab] for lab in labels]])

    def sequence(self, label: str) -> str:
        row = self.codes[self.labels.index(label)]
        return "".join(_MASK_TO_CHAR[int(m)] for m in row)

    def __eq__(self, other):
        if not isinstance(other, Alignment):
            return NotImplemented
        return self.labels == other.labels and np.array_equal(self.codes, other.codes)

    __hash__ = None


def encode(seq: str, label: str = "?") -> np.ndarray:
    out = np.empty(len(seq), dtype=np.uint8)
    for j, ch in enumerate(seq.upper()):
        m = IUPAC.get(ch)
        if m is None:
            raise ParseError(
                f"record {label!r}, column {j + 1}: non-IUPAC character {ch!r}")
        out[j] = m
    return out


def parse_fasta(text) -> Alignment:
    """Parse FASTA text (or an iterable of lines) into an Alignment.

    The tip label is the header up to the first whitespace.
    """
    lines = text.splitlines() if isinstance(text, str) else list(text)
    labels, chunks = [], []
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith(";"):
            continue
        if line.startswith(">"):
            header = line[1:].strip()
            if not header:
                raise ParseError(f"line {lineno}: empty FASTA header")
            labels.append(header.split()[0])
            chunks.append([])
        else:
            if not labels:
                raise ParseError(f"line {lineno}: sequence data before first header")
            chunks[-1].append(line.replace(" ", ""))
    if not labels:
        raise ParseError("no FASTA records found")
    seqs = ["".join(c) for c in chunks]
    lengths = {len(s) for s in seqs}
    if len(lengths) > 1:
        detail = ", ".join(f"{lab}={len(s)}" for lab, s in zip(labels, seqs))
        raise AlignmentShapeError(f"sequences differ in length: {detail}")
    if len(set(labels)) != len(labels):
        dup = sorted({lab for lab in labels if labels.count(lab) > 1})
        raise ParseError(f"duplicate FASTA labels: {', '.join(dup)}")
    codes = np.vstack([encode(s, lab) for lab, s in zip(labels, seqs)]) if seqs[0] \
        else np.zeros((len(seqs), 0), dtype=np.uint8)
    return Alignment(tuple(labels), codes)


def read_fasta(path) -> Alignment:
    return parse_fasta(Path(path).read_text())


def format_fasta(a: Alignment, width: int = 70) -> str:
    out = []
    for lab in a.labels:
        seq = a.sequence(lab)
        out.append(f">{lab}")
        if width:
            out.extend(seq[i:i + width] for i in range(0, len(seq), width))
        else:
            out.append(seq)
    return "\n".join(out) + "\n"


def write_fasta(a: Alignment, path, width: int = 70) -> None:
    Path(path).write_text(format_fasta(a, width))


def compress_patterns(a: Alignment) -> Alignment:
    """Return ``a`` with its site patterns computed.

    Columns are independent under the model, so a weighted sum over distinct
    columns reproduces the raw-column likelihood exactly.
    """
    a._compress()
    return a


def decompress(a: Alignment) -> np.ndarray:
    """Raw ``(n, S)`` codes rebuilt from the patterns."""
    return a.patterns[:, a.pattern_index]


def bootstrap_columns(a: Alignment, seed) -> Alignment:
    """Resample alignment columns uniformly with replacement."""
    if a.n_sites < 1:
        raise ValidationError("cannot bootstrap an empty alignment")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rng = np.random.Generator(np.random.Philox(ss))
    idx = rng.integers(0, a.n_sites, size=a.n_sites)
    return Alignment(a.labels, a.codes[:, idx])
