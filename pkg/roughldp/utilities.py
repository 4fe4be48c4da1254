import dataclasses
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def ordered_map(func, items, threads=1, window=None):
    """
    Apply `func` to `items` on up to `threads` worker threads and yield results
    in input order, so the output never depends on scheduling.
    At most `window` tasks are in flight to keep memory bounded.
    """
    items = list(items)
    threads = max(1, int(threads or 1))
    if threads == 1:
        for item in items:
            yield func(item)
        return

    window = max(threads, int(window or 2 * threads))
    with ThreadPoolExecutor(max_workers=threads) as pool:
        pending = []
        for item in items:
            pending.append(pool.submit(func, item))
            if len(pending) >= window:
                yield pending.pop(0).result()
        for future in pending:
            yield future.result()


def to_jsonable(value):
    """Convert numpy, dataclass and non-finite values into plain JSON types."""
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        if hasattr(value, "as_dict"):
            return to_jsonable(value.as_dict())
        return to_jsonable(dataclasses.asdict(value))
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def dump_json(document):
    return json.dumps(to_jsonable(document), indent=2, sort_keys=True, allow_nan=False) + "\n"


def ensure_directory(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise OSError(f"Output directory `{path}` is not writable: {e}") from e
    if not os.access(path, os.W_OK):
        raise OSError(f"Output directory `{path}` is not writable.")
    return path


def write_text(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    ensure_directory(directory)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    return path


def write_json(path, document):
    return write_text(path, dump_json(document))


def format_csv(header, columns):
    """
    Equal-length columns as CSV text: header row, LF endings, `%.17g` floats.
    """
    table = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    buffer = io.StringIO()
    np.savetxt(
        buffer,
        table,
        fmt="%.17g",
        delimiter=",",
        header=",".join(header),
        comments="",
        newline="\n",
    )
    return buffer.getvalue()


def write_csv(path, header, columns):
    return write_text(path, format_csv(header, columns))


def artifact(config, **payload):
    """Wrap a result payload with the library version and the config echo."""
    from . import __version__

    document = {"version": __version__, "config": config}
    document.update(payload)
    return document
