"""Process-level helpers: device selection and atomic file output."""

import contextlib
import os
import tempfile
from pathlib import Path

import torch

DEVICE_ENV_VAR = "CAST_DEVICE"


def resolve_device(override: str | None = None) -> torch.device:
    """Pick the compute device.

    Priority: explicit ``override`` argument, then the ``CAST_DEVICE``
    environment variable, then CUDA if available, else CPU.
    """
    name = override or os.environ.get(DEVICE_ENV_VAR)
    if name:
        return torch.device(name)
    return torch.device("cuda" if torch.cuda.is_available() else "cpu")


@contextlib.contextmanager
def atomic_output(path: Path):
    """Yield a temp path that replaces ``path`` only on success.

    On any exception the temp file is removed and ``path`` is left
    untouched, so failure paths never leave partial output behind.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    os.close(fd)
    tmp = Path(tmp_name)
    try:
        yield tmp
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            tmp.unlink()
        raise
