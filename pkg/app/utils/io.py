"""
Small file-writing helpers.
"""

import json
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Union


def dumps_json(obj: Any) -> str:
    """Deterministic JSON text (sorted keys, two-space indent, trailing newline)."""
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_bytes(path: Union[str, Path], data: bytes) -> Path:
    """Write bytes atomically (temp file in the same directory, then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_text(path: Union[str, Path], text: str) -> Path:
    """Write UTF-8 text atomically; newlines are written as-is (LF)."""
    return write_bytes(path, text.encode("utf-8"))


def write_json(path: Union[str, Path], obj: Any) -> Path:
    return write_text(path, dumps_json(obj))


def write_jsonl(path: Union[str, Path], rows: Iterable[Any]) -> Path:
    lines = [json.dumps(row, sort_keys=True, ensure_ascii=False) for row in rows]
    return write_text(path, "".join(line + "\n" for line in lines))


def read_jsonl(path: Union[str, Path]) -> list:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
