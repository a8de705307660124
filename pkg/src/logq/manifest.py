"""Run manifests: enough to re-run a command and check its outputs."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field

MANIFEST_NAME = "manifest.json"


def file_digest(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    argv: list
    seed: int | None
    code_version: str
    kernel_backend: str
    config: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    cwd: str = ""

    def write(self, directory: str | os.PathLike) -> str:
        path = os.path.join(directory, MANIFEST_NAME)
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path

    @classmethod
    def read(cls, path: str | os.PathLike) -> "RunManifest":
        with open(path) as fh:
            return cls(**json.load(fh))

    def record_outputs(self, directory: str | os.PathLike, names) -> None:
        self.outputs = {n: file_digest(os.path.join(directory, n)) for n in sorted(names)}

    def verify_inputs(self) -> list[str]:
        """Inputs whose current digest differs from the recorded one."""
        bad = []
        for path, digest in self.inputs.items():
            if not os.path.exists(path) or file_digest(path) != digest:
                bad.append(path)
        return bad
