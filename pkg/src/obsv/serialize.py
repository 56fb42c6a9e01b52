import json
import os
import tempfile
from pathlib import Path

import numpy as np


def atomic_write_text(path, text):
    """Write via a temp file in the same directory, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def to_jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        # JSON has no infinity; keep it readable
        return "inf" if obj > 0 else "-inf"
    return obj


def from_float(v):
    if isinstance(v, str) and v in ("inf", "-inf"):
        return float(v)
    return float(v)


def dump_json(obj, path):
    atomic_write_text(path, json.dumps(to_jsonable(obj), indent=1) + "\n")
