"""Training-prompt serialization that puts each object's box and context in front of the instruction.

::

    <image>
    The dog located at [10, 20, 110, 220] in the image:Rex, a rescue from Lyon.
    Describe the image.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from ..core import AnnotatedImage, BoundingBox, validate_image

IMAGE_PLACEHOLDER = "<image>"
_LINE = re.compile(r"^The (.+?) located at \[(\d+), (\d+), (\d+), (\d+)\] in the image:(.*)$")


class FormatError(ValueError):
    pass


def object_line(category: str, bbox: BoundingBox, info_text: str) -> str:
    return f"The {category} located at {bbox} in the image:{info_text}"


def format_rcvit(image: AnnotatedImage, instruction: str) -> str:
    problems = validate_image(image)
    for obj in image.objects:
        if "\n" in obj.info_text or "\n" in obj.category:
            problems.append(f"info_text: newline in object {obj.object_id}")
    if problems:
        raise FormatError("; ".join(problems))
    lines = [IMAGE_PLACEHOLDER]
    lines += [object_line(o.category, o.bbox, o.info_text) for o in sorted(image.objects, key=lambda o: o.citation_key)]
    lines.append(instruction)
    return "\n".join(lines)


@dataclass(frozen=True)
class ParsedPrompt:
    objects: tuple[tuple[str, BoundingBox, str], ...]   # (category, bbox, info_text) in key order
    instruction: str


def parse_rcvit(prompt: str) -> ParsedPrompt:
    """Inverse of :func:`format_rcvit` on the structured fields."""
    head, sep, rest = prompt.partition("\n")
    if head != IMAGE_PLACEHOLDER or not sep:
        raise FormatError("prompt must start with the image placeholder line")
    lines = rest.split("\n")
    objects = []
    i = 0
    # the instruction is the final line block, so at least one line is left for it
    while i < len(lines) - 1:
        m = _LINE.match(lines[i])
        if not m:
            break
        category, x1, y1, x2, y2, info = m.groups()
        objects.append((category, BoundingBox(int(x1), int(y1), int(x2), int(y2)), info))
        i += 1
    return ParsedPrompt(tuple(objects), "\n".join(lines[i:]))
