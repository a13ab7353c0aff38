"""Run manifests: everything needed to reproduce a command's outputs.

A manifest records the command, the fully resolved config, the seeds,
sha256 digests of every input file and of the resolved config, the tool
version and the output paths. It carries no wall-clock time, so two runs
with equal manifests produce byte-identical files.
"""

import gzip
import hashlib
import json
import os
from dataclasses import dataclass, field

from . import __version__
from .storage import write_json

# Bump when any CSV/JSON output schema changes.
FORMAT_VERSION = 1
HASH_CHUNK = 1 << 20


def hash_file(file_path: str, chunk_size: int = HASH_CHUNK) -> str:
    """sha256 of an input's content.

    Gzipped IDX files are digested after decompression, so `train-images.gz`
    and its unpacked copy record the same digest.
    """
    digest = hashlib.sha256()
    opener = gzip.open if file_path.endswith(".gz") else open
    with opener(file_path, "rb") as stream:
        while chunk := stream.read(chunk_size):
            digest.update(chunk)
    return digest.hexdigest()


def hash_options(options: dict) -> str:
    """Stable 16-char hex hash of a JSON-serialisable options dict."""
    return hashlib.sha256(
        json.dumps(options, sort_keys=True, default=str).encode()
    ).hexdigest()[:16]


@dataclass
class RunManifest:
    command: str
    config: dict
    seeds: list
    inputs: dict = field(default_factory=dict)  # role -> path
    outputs: dict = field(default_factory=dict)  # role -> path

    def input_digests(self) -> dict:
        return {role: hash_file(path) for role, path in sorted(self.inputs.items()) if os.path.exists(path)}

    def to_dict(self, base_dir: str = None) -> dict:
        def rel(path):
            return os.path.relpath(path, base_dir) if base_dir else path

        return {
            "command": self.command,
            "config": self.config,
            "config_digest": hash_options(self.config),
            "seeds": list(self.seeds),
            "inputs": {role: os.path.basename(path) for role, path in sorted(self.inputs.items())},
            "input_digests": self.input_digests(),
            "outputs": {role: rel(path) for role, path in sorted(self.outputs.items())},
            "tool_version": __version__,
            "format_version": FORMAT_VERSION,
        }

    def write(self, path: str) -> str:
        return write_json(path, self.to_dict(base_dir=os.path.dirname(os.path.abspath(path))))

    @property
    def digest(self) -> str:
        return hash_options(self.to_dict())
