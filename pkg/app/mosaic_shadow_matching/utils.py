"""
File helpers for scenarios and exports.

Thin wrappers around JSON and text I/O that convert every operating-system
or parsing failure into FileError, so callers only handle one error type.
"""

import json
from pathlib import Path
from typing import Any, Union

PathLike = Union[str, Path]


class FileError(RuntimeError):
    """
    Custom exception for file operation errors.

    Raised when a scenario or export file cannot be read, parsed or written.

    Attributes:
        lineno (int | None): Line of a JSON syntax error, when known.
    """

    def __init__(self, message: str, lineno: int = None):
        super().__init__(message)
        self.lineno = lineno


def read_json(path: PathLike) -> Any:
    """
    Read and parse a JSON document.

    Args:
        path (PathLike): File to read.

    Returns:
        Any: Parsed JSON data.

    Raises:
        FileError: If the file is missing, unreadable or not valid JSON.
            Syntax errors carry the offending line in ``lineno``.

    Example:
        >>> scenario = read_json("canyon.json")
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise FileError(f"Error reading {path}: {e}")
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise FileError(f"Error parsing {path} at line {e.lineno}, column {e.colno}: {e.msg}", lineno=e.lineno)


def write_json(path: PathLike, data: Any) -> Path:
    """
    Write data to a JSON file with pretty formatting.

    Keys are written in insertion order, so identical inputs give
    byte-identical files.

    Args:
        path (PathLike): Destination; parent directories are created.
        data (Any): JSON-serializable data.

    Returns:
        Path: The written path.

    Raises:
        FileError: If the file cannot be written.
    """
    return write_text(path, json.dumps(data, indent=2) + "\n")


def write_text(path: PathLike, text: str) -> Path:
    """Write ``text`` to ``path``, creating parent directories; raises FileError."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as e:
        raise FileError(f"Error writing {path}: {e}")
    return path
