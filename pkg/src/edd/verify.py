"""Attribute-based verification of class predictions with a reject option.

A knowledge base holds, per class, a set of *necessary* attribute values and
one or more *sufficient* value sets. Given hard attribute predictions, the
candidate set holds every class whose necessary values are all present and at
least one of whose sufficient sets is fully present. The prediction is then
placed in one of four Belnap categories, and only ``True`` is accepted under
the default (strict) policy.

Attribute values are referenced as ``(group, value)`` pairs, written
``"group=value"`` in KB files, since the same value name may occur in several
groups (e.g. a red main colour vs a red border).
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .data import AttributeSchema, SignClass

KB_FORMAT_VERSION = 1

Fact = tuple[str, str]


class KBError(ValueError):
    pass


class Belnap(enum.Enum):
    TRUE = "True"
    BOTH = "Both"
    FALSE = "False"
    NONE = "None"


class Policy(enum.Enum):
    STRICT = "strict"  # accept only True
    PERMISSIVE = "permissive"  # also accept Both (the prediction is among several candidates)


def parse_fact(text: str) -> Fact:
    group, sep, value = text.partition("=")
    if not sep or not group or not value:
        raise KBError(f"expected 'group=value', got {text!r}")
    return group.strip(), value.strip()


def format_fact(fact: Fact) -> str:
    return f"{fact[0]}={fact[1]}"


@dataclass(frozen=True)
class ConditionKB:
    schema: AttributeSchema
    class_names: tuple[str, ...]
    necessary: tuple[frozenset[Fact], ...]
    sufficient: tuple[tuple[frozenset[Fact], ...], ...]

    def __post_init__(self):
        n = len(self.class_names)
        if len(self.necessary) != n or len(self.sufficient) != n:
            raise KBError("necessary/sufficient conditions must be given for every class")
        for c, name in enumerate(self.class_names):
            for fact in self.necessary[c].union(*self.sufficient[c]):
                self._check_fact(fact, name)
            if not self.sufficient[c]:
                raise KBError(f"class {name!r} has no sufficient condition")
            for s in self.sufficient[c]:
                if not s:
                    raise KBError(f"class {name!r} has an empty sufficient condition")

    def _check_fact(self, fact: Fact, cls: str) -> None:
        group, value = fact
        try:
            g = self.schema.group(group)
        except ValueError:
            raise KBError(f"class {cls!r}: unknown attribute group {group!r}") from None
        if value not in g.values:
            raise KBError(f"class {cls!r}: {value!r} is not a value of {group!r}")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def check_against(self, classes: Sequence[SignClass]) -> None:
        """Necessary values of each class must be among its defining values."""
        if tuple(c.name for c in classes) != self.class_names:
            raise KBError("KB classes do not match the dataset classes")
        for c in classes:
            defining = set(zip(self.schema.names, c.assignment))
            extra = self.necessary[c.id] - defining
            if extra:
                raise KBError(f"class {c.name!r}: necessary values {sorted(extra)} contradict its definition")

    def to_dict(self) -> dict:
        return {
            "format_version": KB_FORMAT_VERSION,
            "schema": self.schema.to_dict(),
            "classes": [
                {
                    "name": name,
                    "necessary": sorted(format_fact(f) for f in self.necessary[c]),
                    "sufficient": [sorted(format_fact(f) for f in s) for s in self.sufficient[c]],
                }
                for c, name in enumerate(self.class_names)
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping, schema: AttributeSchema | None = None) -> "ConditionKB":
        if d.get("format_version") != KB_FORMAT_VERSION:
            raise KBError(f"unsupported KB format version {d.get('format_version')!r}")
        file_schema = AttributeSchema.from_dict(d["schema"])
        if schema is not None and file_schema != schema:
            raise KBError("KB schema does not match the dataset schema")
        rows = d["classes"]
        return cls(
            file_schema,
            tuple(r["name"] for r in rows),
            tuple(frozenset(parse_fact(f) for f in r["necessary"]) for r in rows),
            tuple(tuple(frozenset(parse_fact(f) for f in s) for s in r["sufficient"]) for r in rows),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path, schema: AttributeSchema | None = None) -> "ConditionKB":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise KBError(f"{path}: not valid JSON ({exc})") from None
        return cls.from_dict(d, schema)


def facts_of(attrs: Sequence[int] | Sequence[str] | Mapping[str, str], schema: AttributeSchema) -> frozenset[Fact]:
    """Hard attributes as facts: value indices or value names in group order, or a group->value mapping."""
    if isinstance(attrs, Mapping) or (len(attrs) and all(isinstance(a, str) for a in attrs)):
        if len(attrs) != len(schema.groups):
            raise KBError(f"expected one value per group ({len(schema.groups)}), got {len(attrs)}")
        try:
            idx = schema.encode(attrs)
        except ValueError as exc:
            raise KBError(str(exc)) from None
    else:
        idx = tuple(int(a) for a in attrs)
        if len(idx) != len(schema.groups):
            raise KBError(f"expected one value per group ({len(schema.groups)}), got {len(idx)}")
        for a, g in zip(idx, schema.groups):
            if not 0 <= a < len(g.values):
                raise KBError(f"value index {a} out of range for group {g.name!r}")
    return frozenset(zip(schema.names, schema.decode(idx)))


def candidate_classes(attrs, kb: ConditionKB) -> frozenset[int]:
    return candidates_for_facts(facts_of(attrs, kb.schema), kb)


def candidates_for_facts(facts: Iterable[Fact], kb: ConditionKB) -> frozenset[int]:
    """Candidate set for an arbitrary set of observed facts (not necessarily one per group)."""
    facts = frozenset(facts)
    return frozenset(
        c
        for c in range(kb.num_classes)
        if kb.necessary[c] <= facts and any(s <= facts for s in kb.sufficient[c])
    )


def belnap_category(predicted: int, candidates: Iterable[int]) -> Belnap:
    cands = frozenset(candidates)
    if not cands:
        return Belnap.NONE
    if predicted in cands:
        return Belnap.TRUE if len(cands) == 1 else Belnap.BOTH
    return Belnap.FALSE


def decide(predicted: int, candidates: Iterable[int], policy: Policy | str = Policy.STRICT) -> str:
    cands = frozenset(candidates)
    accepted = predicted in cands and not (cands - {predicted})
    if not accepted and Policy(policy) is Policy.PERMISSIVE:
        accepted = predicted in cands
    return "accept" if accepted else "reject"


@dataclass(frozen=True)
class VerificationResult:
    predicted: int
    candidates: frozenset[int]
    category: Belnap
    decision: str
    justification: str

    @property
    def accepted(self) -> bool:
        return self.decision == "accept"


def verify(predicted: int, attrs, kb: ConditionKB, policy: Policy | str = Policy.STRICT) -> VerificationResult:
    """Candidate set, category and decision for one prediction, with a readable justification."""
    facts = facts_of(attrs, kb.schema)
    cands = candidate_classes(attrs, kb)
    cat = belnap_category(predicted, cands)
    dec = decide(predicted, cands, policy)
    names = kb.class_names
    cand_txt = "{" + ", ".join(names[c] for c in sorted(cands)) + "}"
    lines = [f"predicted {names[predicted]}; candidates {cand_txt}; category {cat.value}; decision {dec}"]
    missing = sorted(format_fact(f) for f in kb.necessary[predicted] - facts)
    if missing:
        lines.append(f"  necessary for {names[predicted]} but not observed: {', '.join(missing)}")
    fired = [s for s in kb.sufficient[predicted] if s <= facts]
    if fired:
        lines.append(f"  sufficient for {names[predicted]}: " + "; ".join(
            "{" + ", ".join(sorted(format_fact(f) for f in s)) + "}" for s in fired))
    else:
        lines.append(f"  no sufficient condition of {names[predicted]} is met")
    others = sorted(cands - {predicted})
    if others:
        label = "also supported" if predicted in cands else "attributes support instead"
        lines.append(f"  {label}: {', '.join(names[c] for c in others)}")
    if cat is Belnap.NONE:
        lines.append("  no class has all of its conditions met")
    return VerificationResult(predicted, cands, cat, dec, "\n".join(lines))


def default_kb(schema: AttributeSchema, classes: Sequence[SignClass]) -> ConditionKB:
    """Construct conditions from class definitions.

    Necessary: the class's values in the medium and complex tier groups (shape,
    symbol). Sufficient: each defining value no other class shares, as a
    singleton; a class without such a value gets its full assignment as its
    only sufficient set.
    """
    defs = [frozenset(zip(schema.names, c.assignment)) for c in classes]
    for i in range(len(defs)):
        for j in range(i):
            if defs[i] == defs[j]:
                raise KBError(f"classes {classes[j].name!r} and {classes[i].name!r} are indistinguishable")
    structural = {g.name for g in schema.groups if g.tier in ("medium", "complex")}
    necessary, sufficient = [], []
    for i, d in enumerate(defs):
        necessary.append(frozenset(f for f in d if f[0] in structural))
        others = frozenset().union(*(defs[:i] + defs[i + 1 :]))
        unique = sorted(d - others, key=lambda f: schema.names.index(f[0]))
        sufficient.append(tuple(frozenset([f]) for f in unique) if unique else (d,))
    return ConditionKB(schema, tuple(c.name for c in classes), tuple(necessary), tuple(sufficient))
