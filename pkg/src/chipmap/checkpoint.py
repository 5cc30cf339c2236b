"""Versioned zip container of named float arrays, grouped into sections."""

from __future__ import annotations

import io
import json
import zipfile

import numpy as np

CHECKPOINT_VERSION = 1
_FIXED_TIME = (2000, 1, 1, 0, 0, 0)


class CheckpointError(ValueError):
    pass


def _entry(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_FIXED_TIME)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, payload)


def save_checkpoint(path, sections: dict[str, dict[str, np.ndarray]],
                    meta: dict | None = None) -> None:
    """Write ``sections`` deterministically (fixed timestamps, sorted names)."""
    index = {}
    with zipfile.ZipFile(path, "w") as zf:
        for sec in sorted(sections):
            index[sec] = {}
            for name in sorted(sections[sec]):
                arr = np.ascontiguousarray(sections[sec][name])
                buf = io.BytesIO()
                np.save(buf, arr, allow_pickle=False)
                _entry(zf, f"{sec}/{name}.npy", buf.getvalue())
                index[sec][name] = list(arr.shape)
        header = {"version": CHECKPOINT_VERSION, "index": index, "meta": meta or {}}
        _entry(zf, "header.json", json.dumps(header, sort_keys=True).encode())


def load_checkpoint(path):
    """Return (sections, meta)."""
    with zipfile.ZipFile(path) as zf:
        header = json.loads(zf.read("header.json"))
        if header.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {header.get('version')!r}")
        sections = {}
        for sec, names in header["index"].items():
            sections[sec] = {}
            for name, shape in names.items():
                arr = np.load(io.BytesIO(zf.read(f"{sec}/{name}.npy")), allow_pickle=False)
                if list(arr.shape) != shape:
                    raise CheckpointError(f"{sec}/{name}: stored shape {arr.shape} != index {shape}")
                sections[sec][name] = arr
    return sections, header["meta"]


def match_arrays(expected: dict[str, np.ndarray], found: dict[str, np.ndarray],
                 section: str = "") -> None:
    """Raise unless ``found`` has exactly the names and shapes of ``expected``."""
    missing = sorted(set(expected) - set(found))
    extra = sorted(set(found) - set(expected))
    if missing or extra:
        raise CheckpointError(f"section {section!r}: missing {missing}, unexpected {extra}")
    for name, arr in expected.items():
        if found[name].shape != arr.shape:
            raise CheckpointError(f"section {section!r}: {name} has shape {found[name].shape},"
                                  f" expected {arr.shape}")
