"""Relation schema: the expert-defined partition into visual and non-visual.

The schema is configuration, not code. A representative default ships with the
package; deployments point at their own file once experts have iterated on the
relation set.
"""

from __future__ import annotations

import json
from importlib import resources
from typing import Iterable, Optional

from .errors import ParseError
from .graph import Kind, normalize_label


class RelationSchema:
    def __init__(self, visual: Iterable[str], non_visual: Iterable[str], version: int = 1):
        self.version = version
        self._kinds: dict[str, Kind] = {}
        self._display: dict[str, str] = {}
        for label in visual:
            self._add(label, Kind.VISUAL)
        for label in non_visual:
            self._add(label, Kind.NON_VISUAL)
        if not self._kinds:
            raise ParseError("relation schema is empty")

    def _add(self, label: str, kind: Kind):
        norm = normalize_label(label)
        if not norm:
            raise ParseError("relation schema contains an empty label")
        if norm in self._kinds and self._kinds[norm] is not kind:
            raise ParseError(f"relation {label!r} listed as both visual and non-visual")
        self._kinds[norm] = kind
        self._display.setdefault(norm, label.strip())

    def __contains__(self, label: str) -> bool:
        return normalize_label(label) in self._kinds

    def __len__(self) -> int:
        return len(self._kinds)

    def kind_of(self, label: str) -> Optional[Kind]:
        return self._kinds.get(normalize_label(label))

    def display(self, label: str) -> str:
        return self._display[normalize_label(label)]

    def labels(self, kind: Optional[Kind] = None) -> list[str]:
        norms = sorted(n for n, k in self._kinds.items() if kind is None or k is kind)
        return [self._display[n] for n in norms]

    def describe(self) -> str:
        """Serialization embedded into extraction prompts."""
        vis = ", ".join(self.labels(Kind.VISUAL))
        non = ", ".join(self.labels(Kind.NON_VISUAL))
        return f"Visual relations: {vis}\nNon-visual relations: {non}"

    @classmethod
    def from_dict(cls, data: dict) -> "RelationSchema":
        try:
            return cls(data["visual"], data["non_visual"], version=data.get("version", 1))
        except (KeyError, TypeError) as exc:
            raise ParseError(f"bad relation schema structure: {exc}") from exc

    @classmethod
    def from_file(cls, path: str) -> "RelationSchema":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def default(cls) -> "RelationSchema":
        text = resources.files("visknow.data").joinpath("relations.json").read_text("utf-8")
        return cls.from_dict(json.loads(text))
