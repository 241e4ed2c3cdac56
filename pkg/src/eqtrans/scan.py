"""SCAN lexicon, lexical classes, dataset files and splits."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .groups import CyclicShiftGroup, TokenAction

EOS = "<EOS>"

INPUT_WORDS = (
    "run", "walk", "look", "jump", "left", "right", "after",
    "and", "turn", "around", "twice", "thrice", "opposite",
)
OUTPUT_WORDS = ("RUN", "WALK", "LOOK", "JUMP", "LTURN", "RTURN")

# class name -> (input members, output members), aligned by position
LEXICAL_CLASSES = {
    "verb": (("walk", "look", "run", "jump"), ("WALK", "LOOK", "RUN", "JUMP")),
    "direction": (("left", "right"), ("LTURN", "RTURN")),
}

# output spellings used by the public SCAN release
OUTPUT_ALIASES = {
    "I_RUN": "RUN", "I_WALK": "WALK", "I_LOOK": "LOOK", "I_JUMP": "JUMP",
    "I_TURN_LEFT": "LTURN", "I_TURN_RIGHT": "RTURN",
}

PERCENTS = (1, 2, 4, 8, 16, 32, 64)

SPLIT_FILES = {
    "simple": ("tasks_train_simple.txt", "tasks_test_simple.txt"),
    "add_jump": ("tasks_train_addprim_jump.txt", "tasks_test_addprim_jump.txt"),
    "around_right": ("tasks_train_template_around_right.txt", "tasks_test_template_around_right.txt"),
    "length": ("tasks_train_length.txt", "tasks_test_length.txt"),
}

SPLIT_GROUPS = {
    "simple": "verb",
    "add_jump": "verb",
    "around_right": "direction",
    "length": "verb",
    "low_data": "verb",
}


class DataError(ValueError):
    pass


class Vocabulary:
    def __init__(self, tokens: Iterable[str]):
        tokens = [t for t in tokens if t != EOS]
        if len(set(tokens)) != len(tokens):
            raise DataError("duplicate vocabulary tokens")
        self.tokens: tuple[str, ...] = tuple(tokens) + (EOS,)
        self._index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self._index

    def __iter__(self):
        return iter(self.tokens)

    @property
    def eos(self) -> int:
        return len(self.tokens) - 1

    def index(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise DataError(f"unknown token {token!r}") from None

    def encode(self, tokens: Sequence[str]) -> tuple[int, ...]:
        return tuple(self.index(t) for t in tokens)

    def decode(self, ids: Sequence[int]) -> tuple[str, ...]:
        return tuple(self.tokens[i] for i in ids)

    def __repr__(self):
        return f"Vocabulary({list(self.tokens)})"


@dataclass(frozen=True)
class LexicalClassMap:
    """Partition of both vocabularies into aligned lexical classes.

    Named classes come first (in declaration order); every remaining token,
    including <EOS>, forms its own singleton class.
    """

    source: Vocabulary
    target: Vocabulary
    named: tuple[tuple[str, tuple[str, ...], tuple[str, ...]], ...]
    equivariant: str
    input_classes: tuple[tuple[str, ...], ...] = field(init=False)
    output_classes: tuple[tuple[str, ...], ...] = field(init=False)

    def __post_init__(self):
        names = [n for n, _, _ in self.named]
        if self.equivariant not in names:
            raise DataError(f"equivariant class {self.equivariant!r} not among {names}")
        ins, outs = [], []
        for name, ci, co in self.named:
            if len(ci) != len(co):
                raise DataError(f"class {name!r}: input and output sizes differ")
            ins.append(tuple(ci))
            outs.append(tuple(co))
        for classes, vocab in ((ins, self.source), (outs, self.target)):
            seen = [t for c in classes for t in c]
            if len(seen) != len(set(seen)):
                raise DataError("lexical classes overlap")
            for t in seen:
                vocab.index(t)
            classes.extend((t,) for t in vocab if t not in set(seen))
        object.__setattr__(self, "input_classes", tuple(ins))
        object.__setattr__(self, "output_classes", tuple(outs))
        object.__setattr__(self, "_in_cls", {t: i for i, c in enumerate(ins) for t in c})
        object.__setattr__(self, "_out_cls", {t: j for j, c in enumerate(outs) for t in c})

    @property
    def equivariant_index(self) -> int:
        return [n for n, _, _ in self.named].index(self.equivariant)

    @property
    def n_input_classes(self) -> int:
        return len(self.input_classes)

    @property
    def n_output_classes(self) -> int:
        return len(self.output_classes)

    @property
    def group(self) -> CyclicShiftGroup:
        return CyclicShiftGroup(len(self.input_classes[self.equivariant_index]))

    def class_of_input(self, token: str) -> int:
        return self._in_cls[token]

    def class_of_output(self, token: str) -> int:
        return self._out_cls[token]

    def actions(self, ids: bool = False) -> tuple[TokenAction, TokenAction]:
        """Input- and output-side actions of the equivariant class's group.

        With ``ids=True`` the actions permute vocabulary indices instead of strings.
        """
        k = self.equivariant_index
        ci, co = self.input_classes[k], self.output_classes[k]
        if ids:
            ci, co = self.source.encode(ci), self.target.encode(co)
        g = self.group
        return TokenAction(g, ci), TokenAction(g, co)

    def with_equivariant(self, name: str) -> "LexicalClassMap":
        return LexicalClassMap(self.source, self.target, self.named, name)

    def input_class_ids(self) -> np.ndarray:
        """Class id of every input vocabulary index."""
        return np.array([self._in_cls[t] for t in self.source], dtype=np.int64)

    def output_class_ids(self) -> np.ndarray:
        return np.array([self._out_cls[t] for t in self.target], dtype=np.int64)


def delexicalize(seq: Sequence[int], side: str, cmap: LexicalClassMap) -> tuple[int, ...]:
    """Replace every token id by the id of its lexical class."""
    if side == "input":
        table = cmap.input_class_ids()
    elif side == "output":
        table = cmap.output_class_ids()
    else:
        raise DataError(f"side must be 'input' or 'output', got {side!r}")
    return tuple(int(table[i]) for i in seq)


def builtin_lexicon(equivariant: str = "verb") -> tuple[Vocabulary, Vocabulary, LexicalClassMap]:
    source = Vocabulary(INPUT_WORDS)
    target = Vocabulary(OUTPUT_WORDS)
    named = tuple((name, ci, co) for name, (ci, co) in LEXICAL_CLASSES.items())
    return source, target, LexicalClassMap(source, target, named, equivariant)


@dataclass(frozen=True)
class SentencePair:
    """Token-id sequences, both ending in <EOS>."""

    x: tuple[int, ...]
    y: tuple[int, ...]

    def __post_init__(self):
        if not self.x or not self.y:
            raise DataError("sentence pair sides must be nonempty")


class Dataset:
    def __init__(self, pairs: Sequence[SentencePair], source: Vocabulary, target: Vocabulary, name: str = ""):
        self.pairs = tuple(pairs)
        self.source = source
        self.target = target
        self.name = name

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]

    def subset(self, indices: Iterable[int], name: str | None = None) -> "Dataset":
        return Dataset([self.pairs[i] for i in indices], self.source, self.target, name or self.name)

    def __repr__(self):
        return f"Dataset({self.name!r}, {len(self)} pairs)"


def parse_line(line: str, source: Vocabulary, target: Vocabulary, lineno: int | None = None) -> SentencePair:
    where = f"line {lineno}: " if lineno is not None else ""
    text = line.strip()
    if not text.startswith("IN:") or " OUT:" not in text:
        raise DataError(f"{where}expected 'IN: <tokens> OUT: <tokens>', got {line.strip()!r}")
    src, tgt = text[3:].split(" OUT:", 1)
    xs, ys = src.split(), [OUTPUT_ALIASES.get(t, t) for t in tgt.split()]
    if not xs or not ys:
        raise DataError(f"{where}empty IN or OUT field")
    try:
        return SentencePair(source.encode(xs) + (source.eos,), target.encode(ys) + (target.eos,))
    except DataError as e:
        raise DataError(f"{where}{e}") from None


def format_pair(pair: SentencePair, source: Vocabulary, target: Vocabulary) -> str:
    x = source.decode(pair.x[:-1])
    y = target.decode(pair.y[:-1])
    return f"IN: {' '.join(x)} OUT: {' '.join(y)}"


def read_pairs(path: str | Path, source: Vocabulary, target: Vocabulary) -> Dataset:
    path = Path(path)
    pairs = []
    with path.open(encoding="utf-8") as f:
        for i, line in enumerate(f, 1):
            if line.strip():
                pairs.append(parse_line(line, source, target, lineno=i))
    return Dataset(pairs, source, target, path.name)


@dataclass(frozen=True)
class SplitSpec:
    name: str
    train_path: Path
    test_path: Path
    group: str = "verb"
    percent: int | None = None

    def __post_init__(self):
        if self.name not in SPLIT_GROUPS:
            raise DataError(f"unknown split {self.name!r}")
        if self.name == "low_data" and self.percent not in PERCENTS:
            raise DataError(f"low-data percent must be one of {PERCENTS}, got {self.percent}")


def find_split(name: str, data_dir: str | Path, percent: int | None = None) -> SplitSpec:
    """Locate a split's files under data_dir (flat or the release's nested layout)."""
    data_dir = Path(data_dir)
    if name not in SPLIT_GROUPS:
        raise DataError(f"unknown split {name!r}; choose from {sorted(SPLIT_GROUPS)}")
    files = SPLIT_FILES["simple" if name == "low_data" else name]
    paths = []
    for fname in files:
        direct = data_dir / fname
        if direct.is_file():
            paths.append(direct)
            continue
        found = sorted(data_dir.rglob(fname))
        if not found:
            raise FileNotFoundError(f"{fname} not found under {data_dir}")
        paths.append(found[0])
    return SplitSpec(name, paths[0], paths[1], SPLIT_GROUPS[name], percent)


def low_data_subset(train: Dataset, percent: int, seed: int) -> Dataset:
    """ceil(percent% of train) pairs: a prefix of one seeded permutation, so subsets nest."""
    if percent not in PERCENTS:
        raise DataError(f"percent must be one of {PERCENTS}, got {percent}")
    order = list(range(len(train)))
    random.Random(seed).shuffle(order)
    k = math.ceil(percent * len(train) / 100)
    return train.subset(order[:k], f"{train.name}[{percent}%]")


def load_split(spec: SplitSpec, seed: int, val_fraction: float = 0.1):
    """Return (train, val, test) with a seeded 90/10 train/validation split."""
    source, target, _ = builtin_lexicon(spec.group)
    full = read_pairs(spec.train_path, source, target)
    if spec.name == "low_data":
        full = low_data_subset(full, spec.percent, seed)
    test = read_pairs(spec.test_path, source, target)
    order = list(range(len(full)))
    random.Random(seed).shuffle(order)
    n_val = round(val_fraction * len(full))
    n_train = len(full) - n_val
    train = full.subset(sorted(order[:n_train]), f"{spec.name}/train")
    val = full.subset(sorted(order[n_train:]), f"{spec.name}/val")
    test.name = f"{spec.name}/test"
    return train, val, test


def class_map_for(spec: SplitSpec) -> LexicalClassMap:
    return builtin_lexicon(spec.group)[2]
