"""Cyclic shift groups and their actions on tokens, sentences and aligned pairs."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Hashable, Iterable, Sequence

Token = Hashable


class GroupError(ValueError):
    pass


@dataclass(frozen=True)
class CyclicShiftGroup:
    """The group generated by the cycle (1 2 ... p), stored by its order p."""

    order: int

    def __post_init__(self):
        if not isinstance(self.order, int) or self.order < 1:
            raise GroupError(f"group order must be a positive integer, got {self.order!r}")

    def __len__(self) -> int:
        return self.order

    def __iter__(self):
        return iter(self.elements())

    def element(self, shift: int) -> "GroupElement":
        return GroupElement(shift % self.order, self)

    def elements(self) -> list["GroupElement"]:
        return [GroupElement(k, self) for k in range(self.order)]

    @property
    def identity(self) -> "GroupElement":
        return GroupElement(0, self)


@dataclass(frozen=True)
class GroupElement:
    shift: int
    group: CyclicShiftGroup

    def __post_init__(self):
        if not 0 <= self.shift < self.group.order:
            raise GroupError(f"shift {self.shift} outside [0, {self.group.order})")

    def __matmul__(self, other: "GroupElement") -> "GroupElement":
        return compose(self, other)

    def __invert__(self) -> "GroupElement":
        return inverse(self)

    def __repr__(self) -> str:
        return f"g{self.shift}/{self.group.order}"


def compose(a: GroupElement, b: GroupElement) -> GroupElement:
    if a.group != b.group:
        raise GroupError(f"cannot compose elements of different groups: {a!r}, {b!r}")
    return GroupElement((a.shift + b.shift) % a.group.order, a.group)


def inverse(a: GroupElement) -> GroupElement:
    return GroupElement((-a.shift) % a.group.order, a.group)


@dataclass(frozen=True)
class ProductGroupElement:
    """An element (g_1, ..., g_N) of G^N, one component per input position."""

    components: tuple[GroupElement, ...]

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        groups = {c.group for c in self.components}
        if len(groups) > 1:
            raise GroupError("product element components must share one group")

    def __len__(self) -> int:
        return len(self.components)

    @classmethod
    def constant(cls, g: GroupElement, n: int) -> "ProductGroupElement":
        return cls((g,) * n)


@dataclass(frozen=True)
class TokenAction:
    """Action of a cyclic group on one class of tokens; all other tokens are fixed.

    Shift k sends the i-th class token to the ((i + k) mod p)-th one, so the
    declaration order of ``class_tokens`` defines the cycle.
    """

    group: CyclicShiftGroup
    class_tokens: tuple[Token, ...]

    def __post_init__(self):
        object.__setattr__(self, "class_tokens", tuple(self.class_tokens))
        if len(set(self.class_tokens)) != len(self.class_tokens):
            raise GroupError(f"class tokens must be distinct: {self.class_tokens}")
        if len(self.class_tokens) != self.group.order:
            raise GroupError(
                f"class has {len(self.class_tokens)} tokens but group order is {self.group.order}"
            )
        object.__setattr__(self, "_pos", {t: i for i, t in enumerate(self.class_tokens)})

    def __contains__(self, token: Token) -> bool:
        return token in self._pos

    def permutation(self, g: GroupElement, universe: Sequence[Token]) -> list[int]:
        """Index map of g over an indexed universe: result[i] = index of g∘universe[i]."""
        index = {t: i for i, t in enumerate(universe)}
        return [index[act_on_token(g, self, t)] for t in universe]


def act_on_token(g: GroupElement, action: TokenAction, token: Token) -> Token:
    if g.group != action.group:
        raise GroupError("group element does not belong to the action's group")
    i = action._pos.get(token)
    if i is None:
        return token
    return action.class_tokens[(i + g.shift) % action.group.order]


def act_on_sentence(g: GroupElement, action: TokenAction, sentence: Iterable[Token]) -> tuple:
    return tuple(act_on_token(g, action, t) for t in sentence)


def act_aligned(
    g: ProductGroupElement, action: TokenAction, y: Sequence[Token], a: Sequence[int]
) -> tuple:
    """G^N action on an output sequence through a 0-based alignment a."""
    if len(a) != len(y):
        raise GroupError(f"alignment length {len(a)} != output length {len(y)}")
    n = len(g.components)
    out = []
    for y_m, a_m in zip(y, a):
        if not 0 <= a_m < n:
            raise GroupError(f"alignment index {a_m} outside [0, {n})")
        out.append(act_on_token(g.components[a_m], action, y_m))
    return tuple(out)


def act_product_on_sentence(g: ProductGroupElement, action: TokenAction, x: Sequence[Token]) -> tuple:
    if len(g.components) != len(x):
        raise GroupError(f"product element has {len(g.components)} components for length {len(x)}")
    return tuple(act_on_token(gn, action, xn) for gn, xn in zip(g.components, x))


def orbit(
    pair: tuple[Sequence[Token], Sequence[Token]],
    in_action: TokenAction,
    out_action: TokenAction,
    group: CyclicShiftGroup | None = None,
) -> set[tuple[tuple, tuple]]:
    """{(g∘x, g∘y) : g in G}, deduplicated."""
    group = group or in_action.group
    x, y = pair
    return {(act_on_sentence(g, in_action, x), act_on_sentence(g, out_action, y)) for g in group}


def product_elements(group: CyclicShiftGroup, n: int):
    """All |G|^n elements of G^n."""
    for shifts in product(range(group.order), repeat=n):
        yield ProductGroupElement(tuple(group.element(s) for s in shifts))
