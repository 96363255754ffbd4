from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Union

from ..errors import InvalidConfig
from .meta import get_lsp_logger

log = get_lsp_logger(__name__)

# dont want to force this as can be a pain on windows
try:
    import pyjson5

    use_pyjson = True
except ImportError:
    use_pyjson = False


def decode_json(str_json: str, source: str = "<document>") -> dict[str, Any]:
    """Decode a JSON object. With pyjson5 installed, comments and trailing commas are fine."""
    # preferred parsing, supports comments and other more "versatile" formats
    if use_pyjson:
        try:
            decoded = pyjson5.decode(str_json)
            if isinstance(decoded, dict):
                return decoded
        except Exception:  # cant just catch pyjson5 as might not be imported
            log.debug("pyjson5 couldn't decode %s, falling back to json", source, exc_info=True)

    try:
        decoded = json.loads(str_json)
    except json.JSONDecodeError as e:
        raise InvalidConfig(source, f"not valid JSON ({e.msg} at line {e.lineno})") from e
    if not isinstance(decoded, dict):
        raise InvalidConfig(source, "top level must be a JSON object")
    return decoded


def read_json(path: Union[str, Path]) -> dict[str, Any]:
    return decode_json(Path(path).read_text(), str(path))


def dump_json(data: Any) -> str:
    """Canonical JSON: sorted keys, two-space indent, trailing newline."""
    return json.dumps(data, indent=2, sort_keys=True) + "\n"
