"""
Atomic file output shared by the record writer and the result bundle.
"""

import logging
import os
import tempfile
from pathlib import Path
from typing import Union

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def format_float(value: float) -> str:
    """17 significant digits, enough to round-trip any double"""
    return FLOAT_FORMAT % value


def atomic_write_text(path: Union[str, Path], content: str) -> Path:
    """
    Write text to a temporary file in the target directory, then rename it
    over the destination.

    Args:
        path: Destination file
        content: Text to write

    Returns:
        The destination path
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=target.parent)
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='\n') as f:
            f.write(content)
        os.replace(tmp_name, target)
    except OSError:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    logger.debug(f"Wrote {target}")
    return target
