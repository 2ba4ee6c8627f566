"""Atomic artifact writing and tiny CSV helpers.

Artifacts are written to a temporary file in the destination directory and
renamed into place, so interrupted runs never leave truncated CSV/JSON.
Floats are serialized with ``repr`` (shortest round-trip form), which makes
equal results byte-identical across runs.
"""

import json
import os
import tempfile

__all__ = ["write_text_atomic", "write_json_atomic", "write_csv_atomic", "read_csv"]


def write_text_atomic(path, text: str):
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json_atomic(path, obj):
    write_text_atomic(path, json.dumps(obj, indent=1, sort_keys=True))


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv_atomic(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_cell(v) for v in row))
    write_text_atomic(path, "\n".join(lines) + "\n")


def read_csv(path):
    """Read a small CSV into (header, list-of-string-rows)."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        return [], []
    header = lines[0].split(",")
    return header, [ln.split(",") for ln in lines[1:]]
