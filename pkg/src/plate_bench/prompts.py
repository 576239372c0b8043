"""Stock prompt specs shipped with the bench.

The four numbered prompts are the sensitivity-sweep set; ``canonical`` is the
default recognition prompt used for backend comparisons. Prompts that pin the
letter/digit counts carry an expected format so token extraction can prefer a
matching run.
"""

from __future__ import annotations

from dataclasses import dataclass

from .labels import MALAYSIAN_SINGLE_LINE, PlateFormat


@dataclass(frozen=True)
class PromptSpec:
    id: str
    text: str
    expected_format: PlateFormat | None = None

    def __post_init__(self) -> None:
        if not self.id or not self.text:
            raise ValueError("prompt id and text must be non-empty")


BUILTIN_PROMPTS: dict[str, PromptSpec] = {
    p.id: p
    for p in (
        PromptSpec(
            "prompt1",
            "extract characters in this car's plate, print result in one word as: "
            "letters followed by numbers",
        ),
        PromptSpec(
            "prompt2",
            "extract three letters and four numbers from this car's plate; print the "
            "result in one word as: letters followed by numbers",
            expected_format=MALAYSIAN_SINGLE_LINE,
        ),
        PromptSpec(
            "prompt3",
            "use OCR to extract all characters in this car's plate, print result in "
            "one word as: letters followed by numbers",
        ),
        PromptSpec("prompt4", "extract the text from the image"),
        PromptSpec(
            "canonical",
            "Extract three letters and four numbers from this car's plate; print the "
            "result in one word as: letters followed by numbers",
            expected_format=MALAYSIAN_SINGLE_LINE,
        ),
    )
}

DETECT_CAR_PROMPT = "detect car"
DETECT_PLATE_PROMPT = "detect license plate"
RECOGNIZE_PROMPT = BUILTIN_PROMPTS["prompt4"].text
