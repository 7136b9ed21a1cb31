import os
import tempfile
from contextlib import contextmanager
from pathlib import Path


def fmt_float(x):
    return format(float(x), ".17g")


@contextmanager
def atomic_write(path, mode="w"):
    """Write to a sibling temp file and rename over ``path`` on success."""
    path = Path(path)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, encoding="utf-8", newline="") as handle:
            yield handle
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
