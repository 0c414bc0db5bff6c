"""Blocks over a finite alphabet, ±1 codes, correlation and frequency.

Symbols are the integers ``0 .. N-1``. Blocks serialize as base-N digit strings,
so ``"010211"`` is a block of length six over three symbols.
"""

from __future__ import annotations

import re
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from math import ceil, log2

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from subshift_forge._core.errors import CapacityError, InvalidArgumentError

DIGITS = "0123456789abcdefghijklmnopqrstuvwxyz"
MAX_ALPHABET = len(DIGITS)
# enumerate_codes walks all 2**(N**w) tables
MAX_CODE_DOMAIN = 16

_CODE_PATTERN = re.compile(r"^w:(\d+);table:([+-]+)$")


def _check_alphabet(N: int) -> None:
    if not 2 <= N <= MAX_ALPHABET:
        raise InvalidArgumentError(
            f"Alphabet size must lie in 2..{MAX_ALPHABET}, got {N}."
        )


@dataclass(frozen=True, eq=False)
class Block:
    """A finite word over the alphabet ``{0, ..., N-1}``.

    Parameters
    ----------
    symbols
        Symbol indices, each smaller than ``alphabet_size``.
    alphabet_size
        The alphabet size ``N >= 2``.
    """

    symbols: np.ndarray
    alphabet_size: int

    def __post_init__(self):
        _check_alphabet(self.alphabet_size)
        symbols = np.array(self.symbols, dtype=np.int64)
        if symbols.ndim != 1 or symbols.size < 1:
            raise InvalidArgumentError("A block needs at least one symbol.")
        if symbols.min() < 0 or symbols.max() >= self.alphabet_size:
            raise InvalidArgumentError(
                f"Block symbols must lie in 0..{self.alphabet_size - 1}."
            )
        symbols = symbols.astype(np.uint8)
        symbols.setflags(write=False)
        object.__setattr__(self, "symbols", symbols)

    @classmethod
    def from_string(cls, digits: str, alphabet_size: int) -> Block:
        """Parse a base-N digit string such as ``"0102"``."""
        _check_alphabet(alphabet_size)
        try:
            symbols = [DIGITS.index(ch) for ch in digits.strip().lower()]
        except ValueError:
            raise InvalidArgumentError(f"Not a base-{alphabet_size} block: {digits!r}") from None
        return cls(np.array(symbols), alphabet_size)

    def __len__(self) -> int:
        return self.symbols.size

    def __str__(self) -> str:
        return "".join(DIGITS[s] for s in self.symbols)

    def __repr__(self) -> str:
        return f"Block('{self}', N={self.alphabet_size})"

    def __getitem__(self, item: slice) -> Block:
        if not isinstance(item, slice):
            raise TypeError("Blocks are sliced, not indexed; use block.symbols[i].")
        return Block(self.symbols[item], self.alphabet_size)

    @cached_property
    def key(self) -> bytes:
        """Canonical packed form: ``ceil(log2 N)`` bits per symbol."""
        bits = max(1, ceil(log2(self.alphabet_size)))
        unpacked = np.unpackbits(self.symbols[:, None], axis=1)[:, 8 - bits :]
        return len(self).to_bytes(4, "little") + np.packbits(unpacked).tobytes()

    def __eq__(self, other) -> bool:
        if not isinstance(other, Block):
            return NotImplemented
        return self.alphabet_size == other.alphabet_size and self.key == other.key

    def __hash__(self) -> int:
        return hash((self.alphabet_size, self.key))

    def split(self, length: int) -> list[Block]:
        """Cut into consecutive pieces of ``length`` symbols."""
        if length < 1 or len(self) % length:
            raise InvalidArgumentError(
                f"A block of length {len(self)} does not split into pieces of {length}."
            )
        return [self[i : i + length] for i in range(0, len(self), length)]


@dataclass(frozen=True, eq=False)
class SignBlock:
    """A block over ``{-1, +1}``, the image of a block under a code."""

    signs: np.ndarray

    def __post_init__(self):
        signs = np.array(self.signs, dtype=np.int8)
        if signs.ndim != 1 or not np.all(np.abs(signs) == 1):
            raise InvalidArgumentError("A sign block holds only -1 and +1.")
        signs.setflags(write=False)
        object.__setattr__(self, "signs", signs)

    def __len__(self) -> int:
        return self.signs.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, SignBlock):
            return NotImplemented
        return np.array_equal(self.signs, other.signs)

    def __hash__(self) -> int:
        return hash(self.signs.tobytes())


def _as_real(block) -> np.ndarray:
    if isinstance(block, SignBlock):
        return block.signs.astype(np.float64)
    if isinstance(block, Block):
        return block.symbols.astype(np.float64)
    return np.asarray(block, dtype=np.float64)


def correlate(D, C) -> float:
    """Correlation ``(1/n) sum d_i c_i`` of two real blocks of equal length.

    Usage
    -----
    >>> sf.symbolic.correlate([1, 1, -1], [1, -1, -1])
    0.3333333333333333
    """
    d, c = _as_real(D), _as_real(C)
    if d.ndim != 1 or d.shape != c.shape or d.size < 1:
        raise InvalidArgumentError(
            f"Correlation needs two nonempty blocks of equal length, got {d.size} and {c.size}."
        )
    return float(np.dot(d, c) / d.size)


def window_codes(symbols: np.ndarray, w: int, N: int) -> np.ndarray:
    """Integer code of every length-``w`` window, in lexicographic order.

    Works along the last axis, so a ``(count, n)`` array of blocks gives a
    ``(count, n - w + 1)`` array of window indices in ``0 .. N**w - 1``.
    """
    symbols = np.asarray(symbols)
    if symbols.shape[-1] < w:
        raise InvalidArgumentError(
            f"Blocks of length {symbols.shape[-1]} have no windows of length {w}."
        )
    windows = sliding_window_view(symbols, w, axis=-1).astype(np.int64)
    weights = N ** np.arange(w - 1, -1, -1, dtype=np.int64)
    return windows @ weights


def occurrence_counts(blocks: np.ndarray, n: int, N: int) -> np.ndarray:
    """Occurrence counts of every ``D`` in ``Λ^n`` for each row of ``blocks``.

    Returns a ``(count, N**n)`` integer matrix with columns in lexicographic order.
    """
    blocks = np.atleast_2d(blocks)
    codes = window_codes(blocks, n, N)
    size = N**n
    offsets = np.arange(blocks.shape[0], dtype=np.int64)[:, None] * size
    counts = np.bincount((codes + offsets).ravel(), minlength=blocks.shape[0] * size)
    return counts.reshape(blocks.shape[0], size)


def freq(C: Block, D: Block) -> Fraction:
    """Frequency of ``D`` in ``C``: occurrences divided by ``len(C)``.

    The denominator is the full length of ``C``, so frequencies of all blocks of
    one length sum to ``(len(C) - len(D) + 1) / len(C)``.

    Usage
    -----
    >>> sf.symbolic.freq(Block.from_string("000", 2), Block.from_string("00", 2))
    Fraction(2, 3)
    """
    if len(D) > len(C):
        raise InvalidArgumentError(
            f"Cannot count a block of length {len(D)} inside one of length {len(C)}."
        )
    if D.alphabet_size != C.alphabet_size:
        raise InvalidArgumentError("Blocks over different alphabets.")
    windows = sliding_window_view(C.symbols, len(D))
    hits = int(np.count_nonzero(np.all(windows == D.symbols, axis=1)))
    return Fraction(hits, len(C))


def concat(parts: Sequence[Block]) -> Block:
    """Juxtapose blocks in order."""
    if not parts:
        raise InvalidArgumentError("concat needs at least one block.")
    sizes = {b.alphabet_size for b in parts}
    if len(sizes) > 1:
        raise InvalidArgumentError(f"Cannot concatenate blocks over alphabets {sorted(sizes)}.")
    return Block(np.concatenate([b.symbols for b in parts]), parts[0].alphabet_size)


@dataclass(frozen=True, eq=False)
class Code:
    """A ±1 function of ``window`` consecutive symbols.

    ``table[i]`` is the value on the window whose base-N digits spell ``i``,
    first symbol most significant.
    """

    window: int
    table: np.ndarray
    alphabet_size: int
    id: int = -1

    def __post_init__(self):
        _check_alphabet(self.alphabet_size)
        if self.window < 1:
            raise InvalidArgumentError(f"Code window must be >= 1, got {self.window}.")
        table = np.array(self.table, dtype=np.int8)
        if table.shape != (self.alphabet_size**self.window,):
            raise InvalidArgumentError(
                f"A window-{self.window} code over {self.alphabet_size} symbols needs "
                f"{self.alphabet_size ** self.window} table entries."
            )
        if not np.all(np.abs(table) == 1):
            raise InvalidArgumentError("Code values must be exactly -1 or +1.")
        table.setflags(write=False)
        object.__setattr__(self, "table", table)

    def __repr__(self) -> str:
        return f"Code(id={self.id}, {self.serialize()})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, Code):
            return NotImplemented
        return (
            self.alphabet_size == other.alphabet_size
            and self.window == other.window
            and np.array_equal(self.table, other.table)
        )

    def __hash__(self) -> int:
        return hash((self.alphabet_size, self.window, self.table.tobytes()))

    @property
    def is_constant(self) -> bool:
        """Whether ``f`` takes one value on every window."""
        return bool(np.all(self.table == self.table[0]))

    def negated(self) -> Code:
        """The code ``-f``."""
        return Code(self.window, -self.table, self.alphabet_size)

    def serialize(self) -> str:
        """The ``w:<window>;table:<signs>`` form read by :meth:`parse`."""
        signs = "".join("+" if v > 0 else "-" for v in self.table)
        return f"w:{self.window};table:{signs}"

    @classmethod
    def parse(cls, text: str, alphabet_size: int, id: int = -1) -> Code:
        """Read the ``w:<int>;table:<signs>`` form written by :meth:`serialize`."""
        match = _CODE_PATTERN.match(text.strip())
        if match is None:
            raise InvalidArgumentError(
                "Invalid code format. Valid format is 'w:{window};table:{+-...}'"
            )
        window, signs = match.groups()
        table = [1 if ch == "+" else -1 for ch in signs]
        return cls(int(window), np.array(table), alphabet_size, id)

    def __call__(self, B: Block) -> SignBlock:
        return apply_code(self, B)


def apply_code(f: Code, B: Block) -> SignBlock:
    """Slide ``f`` along ``B``: position ``i`` of the output is ``f(B[i .. i+w-1])``."""
    if f.alphabet_size != B.alphabet_size:
        raise InvalidArgumentError("Code and block use different alphabets.")
    if len(B) < f.window:
        raise InvalidArgumentError(
            f"Block of length {len(B)} is shorter than the code window {f.window}."
        )
    return SignBlock(f.table[window_codes(B.symbols, f.window, f.alphabet_size)])


def _factors_through_prefix(table: np.ndarray, N: int) -> bool:
    # depends only on the first w - 1 symbols
    return bool(np.all(table.reshape(-1, N) == table.reshape(-1, N)[:, :1]))


@dataclass(frozen=True)
class CodeFamily:
    """The finite family of codes used at one construction step."""

    step: int
    codes: tuple[Code, ...]

    def __len__(self) -> int:
        return len(self.codes)

    def __iter__(self):
        return iter(self.codes)

    def __contains__(self, f: Code) -> bool:
        return f in set(self.codes)

    @property
    def windows(self) -> list[int]:
        """Distinct code windows, ascending."""
        return sorted({f.window for f in self.codes})

    def issubset(self, other: CodeFamily) -> bool:
        """Whether every code of this family is in ``other``."""
        return set(self.codes) <= set(other.codes)


def enumerate_codes(N: int, w_max: int) -> CodeFamily:
    """Every ±1 code of window at most ``w_max``, each listed once.

    A window-``w`` code that only looks at its first ``w - 1`` symbols is the same
    code as the window-``(w - 1)`` one and is kept at the smaller window. Ids run
    in ``(window, table)`` order, so a family for a larger ``w_max`` extends the
    smaller one with identical ids.

    Usage
    -----
    >>> len(sf.symbolic.enumerate_codes(2, 2))
    16
    """
    _check_alphabet(N)
    if w_max < 1:
        raise InvalidArgumentError(f"w_max must be >= 1, got {w_max}.")
    if N**w_max > MAX_CODE_DOMAIN:
        raise CapacityError(
            f"Enumerating all codes on {N ** w_max} windows exceeds the guard "
            f"N**w_max <= {MAX_CODE_DOMAIN}; supply an explicit code list instead."
        )
    codes: list[Code] = []
    for w in range(1, w_max + 1):
        size = N**w
        bits = (np.arange(2**size, dtype=np.int64)[:, None] >> np.arange(size)) & 1
        for row in bits:
            table = np.where(row == 1, -1, 1)
            if w > 1 and _factors_through_prefix(table, N):
                continue
            codes.append(Code(w, table, N, id=len(codes)))
    return CodeFamily(step=0, codes=tuple(codes))


def window_for_step(k: int, windows: Mapping[str | int, int]) -> int:
    """Window size ``w_k``: the ``"default"`` entry, raised by any step key ``<= k``."""
    w = int(windows.get("default", 1))
    for key in sorted(int(s) for s in windows if s != "default"):
        if key <= k:
            w = int(windows[str(key)] if str(key) in windows else windows[key])
    return w


def code_family_for_step(N: int, k: int, windows: Mapping[str | int, int]) -> CodeFamily:
    """``F_k``: all codes with window at most ``w_k``."""
    family = enumerate_codes(N, window_for_step(k, windows))
    return CodeFamily(step=k, codes=family.codes)


def blocks_to_lines(blocks: np.ndarray | Iterable[Block]) -> list[str]:
    """Base-N digit lines for a ``(count, length)`` array or an iterable of blocks."""
    if isinstance(blocks, np.ndarray):
        digits = np.array(list(DIGITS))
        return ["".join(row) for row in digits[np.atleast_2d(blocks)]]
    return [str(b) for b in blocks]


def lines_to_blocks(lines: Iterable[str], N: int) -> np.ndarray:
    """Inverse of :func:`blocks_to_lines`, returning a ``(count, length)`` uint8 array."""
    _check_alphabet(N)
    rows = [line.strip().lower() for line in lines if line.strip()]
    if not rows:
        raise InvalidArgumentError("No blocks to read.")
    if len({len(r) for r in rows}) > 1:
        raise InvalidArgumentError("Blocks of one family must share a length.")
    lookup = {ch: i for i, ch in enumerate(DIGITS[:N])}
    try:
        values = [[lookup[ch] for ch in row] for row in rows]
    except KeyError as err:
        raise InvalidArgumentError(f"Symbol {err.args[0]!r} is not a base-{N} digit.") from None
    return np.array(values, dtype=np.uint8)
