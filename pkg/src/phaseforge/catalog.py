"""Pass identifiers, phase orders, and the generators that populate the search space."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from random import Random
from typing import Iterator

DEFAULT_MAX_LEN = 256

_PASS_NAME_RE = re.compile(r"^[a-z0-9-]+$")


class PhaseOrderParseError(ValueError):
    """Raised when a phase-order string cannot be parsed."""

    def __init__(self, message: str, token_index: int):
        super().__init__(f"token {token_index}: {message}")
        self.token_index = token_index


@dataclass(frozen=True, order=True)
class PassId:
    """A single optimizer pass, named by its flag without the leading hyphen."""

    name: str

    def __post_init__(self) -> None:
        if not _PASS_NAME_RE.match(self.name):
            raise ValueError(
                f"invalid pass name {self.name!r}: only lowercase letters, "
                "digits, and hyphens are allowed"
            )

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class PhaseOrder:
    """An ordered sequence of passes; repetition is allowed, empty means no optimization."""

    passes: tuple[PassId, ...] = ()

    @classmethod
    def of(cls, *names: str) -> PhaseOrder:
        return cls(tuple(PassId(n) for n in names))

    def __len__(self) -> int:
        return len(self.passes)

    def __iter__(self) -> Iterator[PassId]:
        return iter(self.passes)

    def __getitem__(self, index: int) -> PassId:
        return self.passes[index]

    def multiset(self) -> Counter[PassId]:
        return Counter(self.passes)

    @property
    def text(self) -> str:
        return render_phase_order(self)


@dataclass(frozen=True)
class PassCatalog:
    """The canonical, ordered enumeration of passes available to the search."""

    passes: tuple[PassId, ...] = ()

    def __post_init__(self) -> None:
        if len(set(self.passes)) != len(self.passes):
            dupes = [p.name for p, n in Counter(self.passes).items() if n > 1]
            raise ValueError(f"duplicate passes in catalog: {dupes}")

    @classmethod
    def of(cls, *names: str) -> PassCatalog:
        return cls(tuple(PassId(n) for n in names))

    def __len__(self) -> int:
        return len(self.passes)

    def __iter__(self) -> Iterator[PassId]:
        return iter(self.passes)

    def __contains__(self, item: PassId) -> bool:
        return item in self.passes

    @classmethod
    def load(cls, path: str | Path) -> PassCatalog:
        """Load a catalog file: one pass name per line, ``#`` comments, and
        ``deny-prefix:<p>`` directives that filter matching names.

        A single leading hyphen on a name or deny prefix is tolerated and
        stripped, so files may list passes in flag form.
        """
        deny: list[str] = []
        names: list[str] = []
        for raw in Path(path).read_text().splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("deny-prefix:"):
                prefix = line[len("deny-prefix:"):].strip()
                deny.append(prefix[1:] if prefix.startswith("-") else prefix)
                continue
            names.append(line[1:] if line.startswith("-") else line)
        kept = [n for n in names if not any(n.startswith(p) for p in deny)]
        return cls(tuple(PassId(n) for n in kept))


def parse_phase_order(text: str) -> PhaseOrder:
    """Parse whitespace-separated, hyphen-prefixed pass tokens into a PhaseOrder."""
    passes: list[PassId] = []
    for index, token in enumerate(text.split()):
        if not token.startswith("-"):
            raise PhaseOrderParseError(f"expected leading hyphen in {token!r}", index)
        name = token[1:]
        if not name:
            raise PhaseOrderParseError("empty pass name", index)
        try:
            passes.append(PassId(name))
        except ValueError as exc:
            raise PhaseOrderParseError(str(exc), index) from exc
    return PhaseOrder(tuple(passes))


def render_phase_order(order: PhaseOrder) -> str:
    """Render an order as hyphen-prefixed tokens joined by single spaces."""
    return " ".join(f"-{p.name}" for p in order.passes)


def random_phase_order(catalog: PassCatalog, max_len: int, rng: Random) -> PhaseOrder:
    """Draw a candidate: length uniform in [1, max_len], passes i.i.d. uniform."""
    if len(catalog) == 0:
        raise ValueError("cannot sample a phase order from an empty catalog")
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    length = rng.randint(1, max_len)
    return PhaseOrder(tuple(rng.choices(catalog.passes, k=length)))


def _distinct_permutation_count(items: tuple[PassId, ...]) -> int:
    total = math.factorial(len(items))
    for multiplicity in Counter(items).values():
        total //= math.factorial(multiplicity)
    return total


def _distinct_permutations(items: tuple[PassId, ...]) -> Iterator[tuple[PassId, ...]]:
    # Lexicographic next-permutation walk over the sorted multiset.
    seq = sorted(items)
    while True:
        yield tuple(seq)
        i = len(seq) - 2
        while i >= 0 and seq[i] >= seq[i + 1]:
            i -= 1
        if i < 0:
            return
        j = len(seq) - 1
        while seq[j] <= seq[i]:
            j -= 1
        seq[i], seq[j] = seq[j], seq[i]
        seq[i + 1:] = reversed(seq[i + 1:])


def random_permutations(order: PhaseOrder, count: int, rng: Random) -> list[PhaseOrder]:
    """Multiset-preserving rearrangements of ``order``, deduplicated.

    When the number of distinct permutations does not exceed ``count``, all of
    them are returned (in lexicographic order); otherwise ``count`` random
    shuffles are drawn and duplicates dropped, keeping first occurrences.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if len(order) == 0:
        return [order]
    if _distinct_permutation_count(order.passes) <= count:
        return [PhaseOrder(p) for p in _distinct_permutations(order.passes)]
    seen: set[tuple[PassId, ...]] = set()
    result: list[PhaseOrder] = []
    for _ in range(count):
        shuffled = tuple(rng.sample(order.passes, len(order.passes)))
        if shuffled not in seen:
            seen.add(shuffled)
            result.append(PhaseOrder(shuffled))
    return result
