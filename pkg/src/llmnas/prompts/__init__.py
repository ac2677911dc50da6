"""Prompt template store.

Templates are plain text files with ``{name}`` placeholders.  Only the
placeholders listed in ``PLACEHOLDERS`` are substituted, so braces that are
part of the text (JSON examples, for instance) survive untouched.  A user
directory can override any subset of the shipped files.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Optional, Union

PLACEHOLDERS = (
    "search_space_description",
    "strategy",
    "history",
    "n_candidates",
    "target",
    "constraint",
    "archs",
)
_PATTERN = re.compile(r"\{(" + "|".join(PLACEHOLDERS) + r")\}")


def render(template: str, **values) -> str:
    def sub(m: re.Match) -> str:
        name = m.group(1)
        if name not in values:
            raise KeyError(f"template placeholder {{{name}}} has no value")
        return str(values[name])

    return _PATTERN.sub(sub, template)


def read_asset(name: str) -> str:
    return resources.files(__name__).joinpath(name).read_text(encoding="utf-8")


@dataclass(frozen=True)
class PromptSet:
    navigator_system: str
    navigator_init: str
    navigator_refine: str
    navigator_feedback: str
    generator_system: str
    generator_user: str
    sillm_system: str
    ranking_system: str
    ranking_user: str

    @classmethod
    def load(cls, directory: Optional[Union[str, Path]] = None) -> "PromptSet":
        """Shipped templates, with ``<field>.txt`` files in ``directory`` taking precedence."""
        texts = {}
        for f in fields(cls):
            filename = f"{f.name}.txt"
            override = Path(directory) / filename if directory else None
            if override is not None and override.is_file():
                texts[f.name] = override.read_text(encoding="utf-8")
            else:
                texts[f.name] = read_asset(filename)
        return cls(**{k: v.rstrip("\n") for k, v in texts.items()})
