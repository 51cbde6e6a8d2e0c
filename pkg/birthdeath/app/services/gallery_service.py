"""Chain gallery: named RateSpec documents shipped under app/data/gallery."""

from __future__ import annotations

import json
import logging
from functools import lru_cache
from pathlib import Path

from pydantic import ValidationError

from birthdeath.app.core.exceptions import ConfigError, InvalidRatesError
from birthdeath.app.models.rates import RateSpec

logger = logging.getLogger(__name__)

GALLERY_DIR = Path(__file__).resolve().parent.parent / "data" / "gallery"


def gallery_names() -> list[str]:
    return sorted(p.stem for p in GALLERY_DIR.glob("*.json"))


def parse_rates(document: dict | str, source: str = "<inline>") -> RateSpec:
    """Validate a RateSpec document; failures become InvalidRatesError."""
    try:
        if isinstance(document, str):
            return RateSpec.model_validate_json(document)
        return RateSpec.model_validate(document)
    except ValidationError as e:
        raise InvalidRatesError(f"{source}: {e.errors(include_url=False)}")


@lru_cache(maxsize=32)
def load_chain(name: str) -> RateSpec:
    path = GALLERY_DIR / f"{name}.json"
    if not path.is_file():
        raise ConfigError(f"unknown gallery chain '{name}'; known: {', '.join(gallery_names())}")
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path.name}: malformed JSON ({e.msg} at line {e.lineno})")
    return parse_rates(document, source=path.name)


def resolve_chain(chain: str | dict | RateSpec) -> RateSpec:
    """A gallery name, a RateSpec document, or a RateSpec."""
    if isinstance(chain, RateSpec):
        return chain
    if isinstance(chain, str):
        return load_chain(chain)
    return parse_rates(chain)


def gallery() -> dict[str, RateSpec]:
    chains = {name: load_chain(name) for name in gallery_names()}
    logger.debug("gallery: %d chains", len(chains))
    return chains
