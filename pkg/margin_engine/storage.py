import csv
import json
import math
import os


def ensure_dirs(*paths):
    for path in paths:
        os.makedirs(path, exist_ok=True)


def run_paths(output_dir, command):
    """Directory and manifest path for one command's outputs."""
    run_dir = os.path.join(output_dir, command)
    return run_dir, os.path.join(run_dir, "manifest.json")


def checkpoint_path(run_dir, epoch=None):
    if epoch is None:
        return os.path.join(run_dir, "checkpoint.json")
    return os.path.join(run_dir, f"checkpoint_epoch{epoch:04d}.json")


def _plain(value):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if hasattr(value, "tolist"):
        return _plain(value.tolist())
    if isinstance(value, float) and not math.isfinite(value):
        return "nan" if math.isnan(value) else ("inf" if value > 0 else "-inf")
    return value


def write_json(path, payload):
    ensure_dirs(os.path.dirname(os.path.abspath(path)))
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(_plain(payload), handle, indent=2, sort_keys=True)
        handle.write("\n")
    return path


def read_json(path):
    with open(path, encoding="utf-8") as handle:
        return json.load(handle)


def _cell(value):
    if isinstance(value, float):
        if math.isfinite(value):
            return repr(value)
        return _plain(value)
    if hasattr(value, "item"):
        return _cell(value.item())
    if isinstance(value, bool):
        return int(value)
    return value


def write_csv(path, header, rows):
    ensure_dirs(os.path.dirname(os.path.abspath(path)))
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return path


def append_csv(path, header, rows):
    """Append rows, writing the header first if the file is new."""
    new = not os.path.exists(path)
    ensure_dirs(os.path.dirname(os.path.abspath(path)))
    with open(path, "a", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        if new:
            writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return path


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        return header, [row for row in reader]
