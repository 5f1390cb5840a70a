"""Paired input listings: the row order defines the positive pairing.

A listing is a UTF-8 text file with one record per line, two refs separated
by a single tab: the modality-X ref first (e.g. an image path), then the
modality-Y ref (e.g. a caption). The same listing drives both extraction
passes, so row i of each latent file describes the same underlying item.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class PairListing:
    """Ordered positive pairs of modality refs."""

    refs_x: tuple[str, ...]
    refs_y: tuple[str, ...]

    def __post_init__(self):
        if len(self.refs_x) != len(self.refs_y):
            raise ValueError("listing sides must have equal length")
        if not self.refs_x:
            raise ValueError("listing is empty")

    def __len__(self) -> int:
        return len(self.refs_x)

    def side(self, which: str) -> tuple[str, ...]:
        if which == "x":
            return self.refs_x
        if which == "y":
            return self.refs_y
        raise ValueError(f"side must be 'x' or 'y', got {which!r}")


def load_pair_listing(path) -> PairListing:
    """Parse a tab-separated pair listing.

    Splits each line on the first tab only, so Y-side refs (typically free
    text) may themselves contain tabs. Blank lines are rejected rather than
    skipped: silently renumbering rows would corrupt the pairing.
    """
    refs_x, refs_y = [], []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            raise ValueError(f"blank line {lineno} in listing {path}")
        parts = line.split("\t", 1)
        if len(parts) != 2:
            raise ValueError(
                f"line {lineno} of {path} has no tab separator: {line!r}")
        refs_x.append(parts[0])
        refs_y.append(parts[1])
    return PairListing(refs_x=tuple(refs_x), refs_y=tuple(refs_y))


def write_pair_listing(path, pairs) -> None:
    """Write (ref_x, ref_y) records; the X ref must not contain a tab."""
    lines = []
    for ref_x, ref_y in pairs:
        if "\t" in ref_x:
            raise ValueError(f"X ref may not contain a tab: {ref_x!r}")
        if "\n" in ref_x or "\n" in ref_y:
            raise ValueError("refs may not contain newlines")
        lines.append(f"{ref_x}\t{ref_y}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
