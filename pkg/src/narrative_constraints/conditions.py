"""Personas (system prompts) and the five task conditions."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class PersonaKind(str, Enum):
    BASIC = "Basic"
    QUALITY = "Quality"
    CREATIVITY = "Creativity"


SYSTEM_PROMPTS = {
    PersonaKind.BASIC: (
        "You are a writer. Your task is to write narratives when requested. Your goal is to write "
        "complete narratives that fulfill the given requirements."
    ),
    PersonaKind.QUALITY: (
        "You are a highly skilled writer known for technical excellence and flawless execution of "
        "storytelling fundamentals. You write stories with precise character development, "
        "well-structured plots, polished prose, and carefully integrated themes. Your goal is to write "
        "stories of the highest quality through careful refinement and technical mastery."
    ),
    PersonaKind.CREATIVITY: (
        "You are an innovative writer celebrated for creating completely original and unexpected "
        "narratives. You excel at breaking conventional storytelling rules and exploring new creative "
        "possibilities. Your strength lies in developing unique characters, unusual plot structures, or "
        "experimental styles that surprise readers. Your goal is to create narratives that are unlike "
        "anything that has been written before, pushing the boundaries of what stories can be through "
        "creative experimentation."
    ),
}


@dataclass(frozen=True)
class Persona:
    kind: PersonaKind
    system_text: str

    @classmethod
    def of(cls, kind: "PersonaKind | str") -> "Persona":
        kind = parse_persona(kind)
        return cls(kind, SYSTEM_PROMPTS[kind])

    @property
    def name(self) -> str:
        return self.kind.value


def parse_persona(value: "PersonaKind | str") -> PersonaKind:
    if isinstance(value, PersonaKind):
        return value
    key = str(value).strip().lower()
    for kind in PersonaKind:
        if key in (kind.value.lower(), kind.name.lower(), f"{kind.value.lower()}-focused"):
            return kind
    raise ValueError(f"unknown persona {value!r}")


PERSONAS = tuple(Persona.of(k) for k in PersonaKind)


class ConditionKind(str, Enum):
    C1_1 = "1-1"
    C1_2 = "1-2"
    C2_1 = "2-1"
    C2_2 = "2-2"
    C3 = "3"


@dataclass(frozen=True)
class TaskCondition:
    """Selection rules for one condition.

    ``per_element_k`` is a fixed count per element list (1-2); ``total_k`` a fixed
    pooled budget (2-2, 3); ``quota`` a per-element requirement inside the pooled
    budget (3). All ``None`` means free choice, any k >= 0.
    """

    kind: ConditionKind
    element_wise: bool
    labels_visible: bool
    per_element_k: int | None = None
    total_k: int | None = None
    quota: int | None = None

    @property
    def code(self) -> str:
        return self.kind.value

    @property
    def free_choice(self) -> bool:
        return self.per_element_k is None and self.total_k is None and self.quota is None

    @property
    def expected_total(self) -> int | None:
        if self.total_k is not None:
            return self.total_k
        if self.per_element_k is not None:
            return 4 * self.per_element_k
        return None

    @classmethod
    def of(cls, kind: "ConditionKind | str") -> "TaskCondition":
        return CONDITIONS[parse_condition(kind)]


def parse_condition(value: "ConditionKind | str") -> ConditionKind:
    if isinstance(value, ConditionKind):
        return value
    key = str(value).strip().upper().replace("_", "-").lstrip("C")
    for kind in ConditionKind:
        if key == kind.value:
            return kind
    raise ValueError(f"unknown task condition {value!r}")


CONDITIONS = {
    ConditionKind.C1_1: TaskCondition(ConditionKind.C1_1, element_wise=True, labels_visible=True),
    ConditionKind.C1_2: TaskCondition(ConditionKind.C1_2, element_wise=True, labels_visible=True, per_element_k=5),
    ConditionKind.C2_1: TaskCondition(ConditionKind.C2_1, element_wise=False, labels_visible=False),
    ConditionKind.C2_2: TaskCondition(ConditionKind.C2_2, element_wise=False, labels_visible=False, total_k=20),
    ConditionKind.C3: TaskCondition(ConditionKind.C3, element_wise=False, labels_visible=True, total_k=20, quota=5),
}

# Planned condition contrasts, first-listed minus second-listed.
PLANNED_CONTRASTS = (
    (ConditionKind.C1_2, ConditionKind.C1_1),
    (ConditionKind.C2_2, ConditionKind.C2_1),
    (ConditionKind.C3, ConditionKind.C1_2),
    (ConditionKind.C3, ConditionKind.C2_2),
)

DEFAULT_DECODING = {"temperature": 1.0, "top_p": 1.0}
