"""Parameter checkpoint files.

A checkpoint is a numpy ``.npz`` archive. Each parameter is stored as an array
under ``param/<dotted name>`` with its own shape and dtype. Arbitrary extra
arrays (optimizer moments, etc.) live under ``extra/<key>``. The entry
``__meta__`` is a 0-d unicode array holding JSON with at least
``{"format_version": 1}`` plus caller metadata. Archives are written without
pickling and can be read with ``numpy.load(path, allow_pickle=False)``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


def save_checkpoint(path, params: dict[str, np.ndarray], meta: dict | None = None,
                    extra: dict[str, np.ndarray] | None = None) -> Path:
    path = Path(path)
    meta = {"format_version": FORMAT_VERSION, **(meta or {})}
    arrays = {f"param/{k}": np.asarray(v) for k, v in params.items()}
    arrays.update({f"extra/{k}": np.asarray(v) for k, v in (extra or {}).items()})
    arrays["__meta__"] = np.array(json.dumps(meta, sort_keys=True))
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict, dict[str, np.ndarray]]:
    """Return (params, meta, extra)."""
    with np.load(Path(path), allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format {meta.get('format_version')!r}")
        params = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
        extra = {k[len("extra/"):]: z[k] for k in z.files if k.startswith("extra/")}
    return params, meta, extra
