from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from ..catalog import PLURALS, WORDS

PAD, CLS, UNK = "[PAD]", "[CLS]", "[UNK]"
SPECIALS = (PAD, CLS, UNK)


@dataclass
class Vocab:
    tokens: list[str]

    def __post_init__(self):
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def build(cls) -> Vocab:
        """Every word the instruction templates can emit, specials first."""
        from .generator import TEMPLATES

        words = set(WORDS.values()) | set(PLURALS.values()) | {"sliced"}
        for variants in TEMPLATES.values():
            for template in variants:
                words.update(w for w in template.split() if not w.startswith("{"))
        return cls(list(SPECIALS) + sorted(words))

    def encode(self, text: str) -> list[int]:
        """Token ids for ``text`` with the leading CLS id."""
        unk = self.index[UNK]
        return [self.index[CLS]] + [self.index.get(w, unk) for w in text.lower().split()]

    def decode(self, ids: list[int]) -> str:
        return " ".join(self.tokens[i] for i in ids if self.tokens[i] not in SPECIALS)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(f"{t}\t{i}\n" for i, t in enumerate(self.tokens)))

    @classmethod
    def load(cls, path: str | Path) -> Vocab:
        rows = [line.split("\t") for line in Path(path).read_text().splitlines() if line]
        rows.sort(key=lambda r: int(r[1]))
        if [int(r[1]) for r in rows] != list(range(len(rows))):
            raise ValueError(f"{path}: vocab indices are not contiguous")
        return cls([r[0] for r in rows])
