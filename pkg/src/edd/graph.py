"""Dependency decompositions of ``p(y, z | x)`` as explicit factorization plans.

Variables are named ``"y"`` (the class) and ``"z1" .. "ze"`` (attribute groups,
ordered simple to complex). A plan is an ordered list of factors
``(variable, parents)``; the joint is the product of those conditionals.
"""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import Tensor, add_n, cross_entropy

CLASS_VAR = "y"
MODEL_TAGS = ("M-REF", "M-FI", "M-IACD", "M-DACD", "M-CDIA", "M-CDDA")


def zvar(k: int) -> str:
    """Name of attribute variable ``k`` (1-based)."""
    return f"z{k}"


def zindex(var: str) -> int:
    """1-based index of an attribute variable name."""
    if not var.startswith("z") or not var[1:].isdigit():
        raise ValueError(f"not an attribute variable: {var!r}")
    return int(var[1:])


class BaseEquation(enum.Enum):
    CLASS_FIRST = "ClassFirst"  # p(y|x) p(z|y,x)
    ATTRIBUTES_FIRST = "AttributesFirst"  # p(z|x) p(y|z,x)


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class FactorizationPlan:
    tag: str
    base: BaseEquation
    num_attributes: int
    factors: tuple[tuple[str, tuple[str, ...]], ...]
    teacher_forcing: bool = False

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(v for v, _ in self.factors)

    @property
    def attribute_vars(self) -> tuple[str, ...]:
        return tuple(v for v in self.variables if v != CLASS_VAR)

    @property
    def has_attributes(self) -> bool:
        return bool(self.attribute_vars)

    def parents(self, var: str) -> tuple[str, ...]:
        for v, pa in self.factors:
            if v == var:
                return pa
        raise KeyError(var)

    @property
    def class_parents(self) -> tuple[str, ...]:
        return self.parents(CLASS_VAR)

    def children(self, var: str) -> tuple[str, ...]:
        return tuple(v for v, pa in self.factors if var in pa)

    def edges(self) -> set[tuple[str, str]]:
        return {(p, v) for v, pa in self.factors for p in pa}

    def to_dict(self) -> dict:
        return {
            "tag": self.tag,
            "base": self.base.value,
            "num_attributes": self.num_attributes,
            "factors": {v: list(pa) for v, pa in self.factors},
            "teacher_forcing": self.teacher_forcing,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "FactorizationPlan":
        factors = d["factors"]
        items = factors.items() if isinstance(factors, Mapping) else factors
        return cls(
            tag=d.get("tag", "custom"),
            base=BaseEquation(d["base"]),
            num_attributes=int(d["num_attributes"]),
            factors=tuple((v, tuple(pa)) for v, pa in items),
            teacher_forcing=bool(d.get("teacher_forcing", False)),
        )


def plan_for(model_tag: str, num_attributes: int) -> FactorizationPlan:
    """The canonical factorization for one of the six model tags.

    ``num_attributes`` may also be an :class:`~edd.data.AttributeSchema`.
    The attribute chain for the dependent models runs from complex to simple:
    ``z_k`` conditions on ``z_{k+1} .. z_e``.
    """
    e = num_attributes if isinstance(num_attributes, int) else len(num_attributes.groups)
    if e < 0:
        raise PlanError("number of attributes must be >= 0")
    zs = [zvar(k) for k in range(1, e + 1)]

    def chain(k: int) -> tuple[str, ...]:
        return tuple(zs[k:])  # zs[k:] are z_{k+1}..z_e for 1-based k

    y = CLASS_VAR
    if model_tag == "M-REF":
        return FactorizationPlan(model_tag, BaseEquation.CLASS_FIRST, 0, ((y, ()),))
    if model_tag == "M-FI":
        facs = ((y, ()),) + tuple((z, ()) for z in zs)
        return FactorizationPlan(model_tag, BaseEquation.CLASS_FIRST, e, facs)
    if model_tag == "M-IACD":
        facs = ((y, ()),) + tuple((z, (y,)) for z in zs)
        return FactorizationPlan(model_tag, BaseEquation.CLASS_FIRST, e, facs, teacher_forcing=True)
    if model_tag == "M-DACD":
        facs = ((y, ()),) + tuple((z, chain(k) + (y,)) for k, z in enumerate(zs, start=1))
        return FactorizationPlan(model_tag, BaseEquation.CLASS_FIRST, e, facs, teacher_forcing=True)
    if model_tag == "M-CDIA":
        facs = ((y, tuple(zs)),) + tuple((z, ()) for z in zs)
        return FactorizationPlan(model_tag, BaseEquation.ATTRIBUTES_FIRST, e, facs, teacher_forcing=True)
    if model_tag == "M-CDDA":
        facs = ((y, tuple(zs)),) + tuple((z, chain(k)) for k, z in enumerate(zs, start=1))
        return FactorizationPlan(model_tag, BaseEquation.ATTRIBUTES_FIRST, e, facs, teacher_forcing=True)
    raise PlanError(f"unknown model tag {model_tag!r}; expected one of {', '.join(MODEL_TAGS)}")


def validate(plan: FactorizationPlan) -> list[str]:
    """Return a list of problems with ``plan``; an empty list means it is well formed."""
    problems: list[str] = []
    known = {CLASS_VAR} | {zvar(k) for k in range(1, plan.num_attributes + 1)}
    seen: dict[str, int] = {}
    for v, _ in plan.factors:
        seen[v] = seen.get(v, 0) + 1
    for v, c in seen.items():
        if c > 1:
            problems.append(f"duplicate factor for {v} ({c} times)")
        if v not in known:
            problems.append(f"unknown variable {v}")
    for v in sorted(known - set(seen)):
        problems.append(f"missing factor for {v}")
    for v, pa in plan.factors:
        if v in pa:
            problems.append(f"{v} is its own parent")
        if len(set(pa)) != len(pa):
            problems.append(f"repeated parent in p({v} | ...)")
        for p in pa:
            if p not in known:
                problems.append(f"unknown parent {p} of {v}")
    if CLASS_VAR in seen:
        ypa = plan.parents(CLASS_VAR)
        if plan.base is BaseEquation.CLASS_FIRST and ypa:
            problems.append("class-first plan gives the class attribute parents")
        if plan.base is BaseEquation.ATTRIBUTES_FIRST and any(CLASS_VAR in plan.parents(z) for z in plan.attribute_vars):
            problems.append("attributes-first plan makes an attribute depend on the class")
    cycle = _find_cycle(plan)
    if cycle:
        problems.append("cycle: " + " -> ".join(cycle))
    return problems


def _find_cycle(plan: FactorizationPlan) -> list[str] | None:
    graph: dict[str, list[str]] = {}
    for v, pa in plan.factors:
        for p in pa:
            if p != v:
                graph.setdefault(p, []).append(v)
    state: dict[str, int] = {}
    path: list[str] = []

    def dfs(u: str) -> list[str] | None:
        state[u] = 1
        path.append(u)
        for w in graph.get(u, []):
            if state.get(w) == 1:
                return path[path.index(w) :] + [w]
            if state.get(w) is None:
                found = dfs(w)
                if found:
                    return found
        state[u] = 2
        path.pop()
        return None

    for v in [v for v, _ in plan.factors]:
        if state.get(v) is None:
            found = dfs(v)
            if found:
                return found
    return None


def topological_head_order(plan: FactorizationPlan) -> list[str]:
    """Heads ordered so that parents precede children.

    Ties go by attribute index; the class comes first among ties only when it
    feeds another head, otherwise it is placed after the attributes.
    """
    problems = validate(plan)
    if problems:
        raise PlanError("; ".join(problems))
    class_is_parent = bool(plan.children(CLASS_VAR))

    def key(v: str) -> int:
        if v == CLASS_VAR:
            return 0 if class_is_parent else plan.num_attributes + 1
        return zindex(v)

    remaining = {v: set(pa) for v, pa in plan.factors}
    order: list[str] = []
    while remaining:
        ready = sorted((v for v, pa in remaining.items() if not pa), key=key)
        v = ready[0]
        order.append(v)
        del remaining[v]
        for pa in remaining.values():
            pa.discard(v)
    return order


def factor_losses(
    head_distributions: Mapping[str, Tensor],
    labels: Mapping[str, np.ndarray],
    plan: FactorizationPlan,
    class_mask=None,
    reduction: str = "mean",
) -> dict[str, Tensor]:
    """Cross-entropy of every factor's head against its one-hot labels."""
    want = set(plan.variables)
    got = set(head_distributions)
    if want != got:
        raise PlanError(f"heads {sorted(got)} do not match plan {plan.tag} variables {sorted(want)}")
    missing = want - set(labels)
    if missing:
        raise PlanError(f"no labels for {sorted(missing)}")
    out = {}
    for v in plan.variables:
        mask = class_mask if v == CLASS_VAR else None
        out[v] = cross_entropy(head_distributions[v], labels[v], mask=mask, reduction=reduction)
    return out


def joint_nll(
    head_distributions: Mapping[str, Tensor],
    labels: Mapping[str, np.ndarray],
    plan: FactorizationPlan,
    class_mask=None,
    reduction: str = "mean",
) -> Tensor:
    """``-log p(y, z | x)`` under the plan, i.e. the sum of per-factor cross-entropies.

    Samples with ``class_mask`` False contribute no class factor.
    """
    terms = factor_losses(head_distributions, labels, plan, class_mask, reduction)
    return add_n([terms[v] for v in plan.variables])


# -- decoding over explicit conditional tables ------------------------------

Conditional = Callable[[str, Mapping[str, int]], np.ndarray]


def joint_log_prob(plan: FactorizationPlan, conditional: Conditional, assignment: Mapping[str, int]) -> float:
    total = 0.0
    for v, pa in plan.factors:
        dist = conditional(v, {p: assignment[p] for p in pa})
        total += math.log(max(float(dist[assignment[v]]), 1e-300))
    return total


def greedy_decode(plan: FactorizationPlan, conditional: Conditional) -> dict[str, int]:
    """Per-head argmax in topological order, each head conditioned on its parents' argmax."""
    chosen: dict[str, int] = {}
    for v in topological_head_order(plan):
        dist = conditional(v, {p: chosen[p] for p in plan.parents(v)})
        chosen[v] = int(np.argmax(dist))
    return chosen


def exhaustive_decode(
    plan: FactorizationPlan, conditional: Conditional, cardinalities: Mapping[str, int]
) -> tuple[dict[str, int], float]:
    """Exact joint argmax by enumerating every assignment (first maximum wins)."""
    vars_ = list(plan.variables)
    best, best_score = None, -math.inf
    for values in itertools.product(*[range(cardinalities[v]) for v in vars_]):
        a = dict(zip(vars_, values))
        s = joint_log_prob(plan, conditional, a)
        if s > best_score:
            best, best_score = a, s
    return best, best_score


class ConditionalTables:
    """Explicit random conditional tables ``p(v | parents)`` for tiny cardinalities.

    With ``concentration`` set, rows are Dirichlet draws (1.0 is uniform over
    the simplex). Otherwise each row is a softmax of Gaussian logits with
    standard deviation ``scale``; larger scales give more peaked rows.
    """

    def __init__(
        self,
        plan: FactorizationPlan,
        cardinalities: Mapping[str, int],
        rng: np.random.Generator,
        scale: float = 1.0,
        concentration: float | None = None,
    ):
        self.plan = plan
        self.cards = dict(cardinalities)
        self.tables: dict[str, np.ndarray] = {}
        for v, pa in plan.factors:
            shape = tuple(self.cards[p] for p in pa) + (self.cards[v],)
            if concentration is not None:
                self.tables[v] = rng.dirichlet(np.full(shape[-1], concentration), size=shape[:-1])
                continue
            logits = rng.normal(0.0, scale, size=shape)
            e = np.exp(logits - logits.max(axis=-1, keepdims=True))
            self.tables[v] = e / e.sum(axis=-1, keepdims=True)

    def __call__(self, var: str, parent_values: Mapping[str, int]) -> np.ndarray:
        idx = tuple(parent_values[p] for p in self.plan.parents(var))
        return self.tables[var][idx]


def enumerate_assignments(plan: FactorizationPlan, cardinalities: Mapping[str, int]) -> list[dict[str, int]]:
    vars_ = list(plan.variables)
    return [dict(zip(vars_, vals)) for vals in itertools.product(*[range(cardinalities[v]) for v in vars_])]


def compare_decoders(
    plan: FactorizationPlan, conditional: Conditional, cardinalities: Mapping[str, int]
) -> dict:
    """Greedy vs exact decoding on one set of conditionals."""
    g = greedy_decode(plan, conditional)
    j, js = exhaustive_decode(plan, conditional, cardinalities)
    gs = joint_log_prob(plan, conditional, g)
    return {
        "match": g == j or math.isclose(gs, js, rel_tol=0, abs_tol=1e-12),
        "greedy": g,
        "greedy_log_prob": gs,
        "joint": j,
        "joint_log_prob": js,
    }


def cardinalities_for(plan: FactorizationPlan, num_classes: int, group_sizes: Sequence[int]) -> dict[str, int]:
    cards = {CLASS_VAR: num_classes}
    for k, size in enumerate(group_sizes[: plan.num_attributes], start=1):
        cards[zvar(k)] = size
    return cards
