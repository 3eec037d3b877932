"""User-prompt templates and prompt assembly."""
from __future__ import annotations

import hashlib
import json
import string
from dataclasses import dataclass
from typing import Sequence

from ..conditions import ConditionKind, TaskCondition
from ..library import ELEMENTS, POOL_SIZE, CandidateList


class PromptError(ValueError):
    pass


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    user_text: str

    def digest(self, model: str, decoding: dict) -> str:
        payload = json.dumps(
            {"system": self.system_text, "user": self.user_text, "decoding": decoding, "model": model},
            sort_keys=True, ensure_ascii=False,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


INTRO = (
    "As you plan to write a story, identify the specific constraints that would be most useful for "
    "writing a single fictional narrative, and explain your reasoning for why each constraint would "
    "help write a better narrative."
)

DYNAMICS = (
    "- After explaining your individual selections, assess the dynamics among your chosen constraints "
    "by explicitly identifying which specific constraints enhance each other and which might interfere "
    "with one another. Based on these interactions, evaluate the overall compatibility of your constraint "
    "combination and whether it would strengthen or weaken the resulting narrative when applied together "
    "in writing.\n"
    "- There are no restrictions on the length or style of your explanations. Feel free to elaborate as "
    "much or as little as you wish.\n"
    "- You do not need to mention constraints you are not selecting unless you wish to explain why you "
    "excluded them.\n"
    "- List your selections using the specified output format for easy parsing."
)

FORMAT_TAIL = (
    "- For each, write only the selected constraint as a JSON object, then your reason in the \"reason\" field.\n"
    "- Each constraint and its reason must appear as a separate element in a single JSON array containing "
    "all elements.\n"
    "- After listing all selected constraints, include only one paragraph that explains the overall "
    "compatibility among all your chosen constraints as a JSON object in the form "
    "{\"compatibility\": \"[your explanation]\"}, and place it at the end of the array."
)

TEMPLATE = (
    "${intro}\n\n"
    "Task:\n"
    "${task_rules}\n"
    "${dynamics}\n\n"
    "Output Format:\n"
    "${format_rule}\n"
    "${format_tail}\n\n"
    "Example Output: ${example}\n"
    "Constraint List: ${constraints}"
)

EXAMPLE_OUTPUT = (
    "[\n"
    "  {\"constraint\": \"<text of a selected constraint>\", \"reason\": \"<why it helps the narrative>\"},\n"
    "  {\"constraint\": \"<text of another selected constraint>\", \"reason\": \"<why it helps the narrative>\"},\n"
    "  {\"compatibility\": \"<one paragraph on how the selected constraints work together>\"}\n"
    "]"
)


def _task_rules(condition: TaskCondition, n_total: int, n_per_list: int) -> tuple[str, str]:
    kind = condition.kind
    if condition.element_wise:
        elements = ", ".join(ELEMENTS)
        given = (
            f"- You will be given four lists of {n_per_list} possible narrative constraints, one for each "
            f"narrative element ({elements}).\n"
            f"- Read through all {n_total} constraints carefully.\n"
        )
        if kind is ConditionKind.C1_2:
            k = condition.per_element_k
            return (
                given + f"- From each element list, select exactly {k} constraints you consider most useful "
                "for writing a fictional narrative.\n- For each selected constraint, explain your reason for choosing it.",
                f"- Select exactly {k} constraints from each element list ({4 * k} in total). "
                "The order in which you list them does not matter.",
            )
        return (
            given + "- From each element list, select any number of constraints (including none) you consider "
            "most useful for writing a fictional narrative.\n- For each selected constraint, explain your reason for choosing it.",
            "- Select any number of constraints from each element list. The order in which you list them does not matter.",
        )
    if kind is ConditionKind.C3:
        k, q = condition.total_k, condition.quota
        return (
            f"- You will be given a list of {n_total} possible narrative constraints, each labeled with its "
            f"narrative element ({', '.join(ELEMENTS)}).\n"
            f"- Read through all {n_total} constraints carefully.\n"
            f"- Select exactly {k} constraints in total, with exactly {q} from each element, that you consider "
            "most useful for writing a fictional narrative.\n"
            "- For each selected constraint, explain your reason for choosing it.",
            f"- Select exactly {k} constraints, {q} from each element. The order in which you list them does not matter.",
        )
    given = (
        f"- You will be given a list of {n_total} possible narrative constraints.\n"
        f"- Read through all {n_total} constraints carefully.\n"
    )
    if kind is ConditionKind.C2_2:
        k = condition.total_k
        return (
            given + f"- Select exactly {k} constraints you consider most useful for writing a fictional narrative.\n"
            "- For each selected constraint, explain your reason for choosing it.",
            f"- Select exactly {k} constraints. The order in which you list them does not matter.",
        )
    return (
        given + "- Select any number of constraints (including none) you consider most useful for writing a "
        "fictional narrative.\n- For each selected constraint, explain your reason for choosing it.",
        "- Select any number of constraints. The order in which you list them does not matter.",
    )


def render_constraints(candidates: Sequence[CandidateList]) -> str:
    blocks = []
    for cl in candidates:
        if cl.show_labels and cl.label is not None:
            lines = [f"{cl.label} constraints:"] + [f"- {c.text}" for c in cl.constraints]
        elif cl.show_labels:
            lines = [f"- [{c.element}] {c.text}" for c in cl.constraints]
        else:
            lines = [f"- {c.text}" for c in cl.constraints]
        blocks.append("\n".join(lines))
    return "\n" + "\n\n".join(blocks)


def check_candidates(condition: TaskCondition, candidates: Sequence[CandidateList], pool_size: int = POOL_SIZE) -> None:
    if condition.element_wise:
        labels = [cl.label for cl in candidates]
        if sorted(map(str, labels)) != sorted(ELEMENTS):
            raise PromptError(f"condition {condition.code} needs one list per element, got labels {labels}")
        per = pool_size // len(ELEMENTS)
        bad = [(cl.label, len(cl)) for cl in candidates if len(cl) != per]
        if bad:
            raise PromptError(f"condition {condition.code} needs {per} constraints per element list, got {bad}")
    else:
        if len(candidates) != 1:
            raise PromptError(f"condition {condition.code} needs a single pooled list, got {len(candidates)}")
        if len(candidates[0]) != pool_size:
            raise PromptError(
                f"condition {condition.code} needs {pool_size} pooled constraints, got {len(candidates[0])}"
            )


def assemble_prompt(config, candidates: Sequence[CandidateList], pool_size: int = POOL_SIZE) -> PromptBundle:
    """Build the system and user prompt for one run.

    ``candidates`` must already be in presentation order. Only constraint texts
    (and, where the condition shows them, element labels) reach the prompt.
    """
    condition = config.condition
    check_candidates(condition, candidates, pool_size)
    n_per_list = pool_size // len(ELEMENTS) if condition.element_wise else pool_size
    task_rules, format_rule = _task_rules(condition, pool_size, n_per_list)
    try:
        user_text = string.Template(TEMPLATE).substitute(
            intro=INTRO, task_rules=task_rules, dynamics=DYNAMICS, format_rule=format_rule,
            format_tail=FORMAT_TAIL, example=EXAMPLE_OUTPUT, constraints=render_constraints(candidates),
        )
    except (KeyError, ValueError) as exc:
        raise PromptError(f"template placeholder could not be filled: {exc}") from exc
    return PromptBundle(system_text=config.persona.system_text, user_text=user_text)
