"""
Versioned prompt templates.

Templates are plain-text package files named `<name>_<version>.txt` with
`{{placeholder}}` slots. Rendering is a single pass, so placeholder-like
text inside inserted values (e.g. a clinical note) is left alone.
"""

import re
from functools import lru_cache
from importlib import resources
from typing import Dict

DEFAULT_VERSION = "v1"
_PLACEHOLDER = re.compile(r"\{\{(\w+)\}\}")


@lru_cache(maxsize=None)
def load_template(name: str, version: str = DEFAULT_VERSION) -> str:
    """Read a template shipped with the package."""
    resource = resources.files(__name__).joinpath(f"{name}_{version}.txt")
    if not resource.is_file():
        raise ValueError(f"No prompt template '{name}' version '{version}'")
    return resource.read_text(encoding="utf-8")


def placeholders(template: str) -> set:
    return set(_PLACEHOLDER.findall(template))


def render(template: str, **values: object) -> str:
    """Fill every {{placeholder}}; missing values are an error."""
    missing = placeholders(template) - set(values)
    if missing:
        raise ValueError(f"Missing template values: {sorted(missing)}")
    text: Dict[str, str] = {k: str(v) for k, v in values.items()}
    return _PLACEHOLDER.sub(lambda m: text[m.group(1)], template)
