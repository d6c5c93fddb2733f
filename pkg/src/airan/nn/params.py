"""Named parameter storage and the on-disk checkpoint container.

Checkpoint layout (``.npz``, format version 1):

* ``__header__``: a 0-d unicode array holding JSON with keys ``format``
  (``"airan-params"``), ``version`` (``1``), ``names`` (ordered parameter
  names), ``shapes`` (list of extents per name) and ``meta`` (free-form
  JSON-serialisable dict, e.g. model hyper-parameters or scaler statistics).
* one float64 array per parameter, stored under its name.
"""
from __future__ import annotations

import hashlib
import json
import zipfile
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from ..errors import ShapeError, TraceFormatError
from .tensor import Tensor

CHECKPOINT_FORMAT = "airan-params"
CHECKPOINT_VERSION = 1


class ParamStore:
    """Ordered mapping of parameter name to leaf tensor (with ``.grad``)."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(value, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def num_values(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def grad(self, name: str) -> np.ndarray:
        """Gradient for ``name``; zeros when the parameter did not participate."""
        p = self._params[name]
        return np.zeros_like(p.data) if p.grad is None else p.grad

    @contextmanager
    def frozen(self):
        """Temporarily exclude every parameter from gradient recording."""
        flags = {n: p.requires_grad for n, p in self._params.items()}
        for p in self._params.values():
            p.requires_grad = False
        try:
            yield self
        finally:
            for n, p in self._params.items():
                p.requires_grad = flags[n]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self._params.items()}

    def load_state_dict(self, arrays: Mapping[str, np.ndarray]) -> None:
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for n, p in self._params.items():
            arr = np.asarray(arrays[n], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ShapeError(f"{n}: checkpoint shape {arr.shape} != {p.data.shape}")
            p.data = arr.copy()
            p.grad = None

    def copy_from(self, other: "ParamStore") -> None:
        self.load_state_dict(other.state_dict())

    def soft_update(self, source: "ParamStore", tau: float) -> None:
        """``self <- tau * source + (1 - tau) * self`` parameter-wise."""
        for n, p in self._params.items():
            p.data = tau * source[n].data + (1.0 - tau) * p.data


def save_checkpoint(path: str | Path, arrays: Mapping[str, np.ndarray], meta: dict | None = None) -> Path:
    path = Path(path)
    if path.suffix != ".npz":
        path = path.with_suffix(".npz")
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(arrays)
    if "__header__" in names:
        raise KeyError("'__header__' is reserved")
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "names": names,
        "shapes": [list(np.shape(arrays[n])) for n in names],
        "meta": meta or {},
    }
    payload = {n: np.asarray(arrays[n], dtype=np.float64) for n in names}
    entries = {"__header__": np.array(json.dumps(header, sort_keys=True)), **payload}
    # same layout as np.savez, but with fixed entry timestamps so equal weights give equal bytes
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in entries.items():
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w", force_zip64=True) as fh:
                np.lib.format.write_array(fh, arr, allow_pickle=False)
    return path


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Return ``(arrays, meta)``; validates the header against the payload."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as data:
        if "__header__" not in data.files:
            raise TraceFormatError(f"{path}: not an airan checkpoint (no header)")
        header = json.loads(str(data["__header__"]))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise TraceFormatError(f"{path}: unknown format {header.get('format')!r}")
        if header.get("version") != CHECKPOINT_VERSION:
            raise TraceFormatError(f"{path}: unsupported version {header.get('version')!r}")
        arrays = {}
        for name, shape in zip(header["names"], header["shapes"]):
            arr = data[name]
            if list(arr.shape) != shape:
                raise TraceFormatError(f"{path}: {name} has shape {arr.shape}, header says {shape}")
            arrays[name] = arr.astype(np.float64)
    return arrays, header.get("meta", {})


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
