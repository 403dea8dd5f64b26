"""
Artifact I/O: atomic writes, JSONL helpers and the run manifest.

Every file the pipeline produces goes through atomic_write so that an
interrupted subcommand never leaves a half-written artifact behind.
"""

import hashlib
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Mapping, Union

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
MANIFEST_NAME = "manifest.json"


def atomic_write(path: PathLike, data: Union[str, bytes]) -> Path:
    """Write data to path via a temp file in the same directory and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode("utf-8") if isinstance(data, str) else data
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(raw)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def dumps_line(record: Mapping[str, Any]) -> str:
    return json.dumps(record, ensure_ascii=False, separators=(", ", ": "))


def write_jsonl(path: PathLike, records: Iterable[Mapping[str, Any]]) -> Path:
    text = "".join(dumps_line(r) + "\n" for r in records)
    return atomic_write(path, text)


def read_jsonl(path: PathLike) -> Iterator[Dict[str, Any]]:
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                yield json.loads(line)


def write_json(path: PathLike, payload: Any) -> Path:
    return atomic_write(path, json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n")


def read_json(path: PathLike) -> Any:
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)


def sha256_file(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


class Manifest:
    """Per-output-directory record of what each subcommand read and wrote.

    Paths are stored relative to the output directory and nothing
    time-dependent is recorded, so equal inputs and seeds give equal
    manifests.
    """

    def __init__(self, out_dir: PathLike):
        self.out_dir = Path(out_dir)
        self.path = self.out_dir / MANIFEST_NAME
        self.steps: Dict[str, Dict[str, Any]] = {}
        if self.path.exists():
            self.steps = read_json(self.path).get("steps", {})

    def _entry(self, path: PathLike) -> Dict[str, str]:
        path = Path(path)
        try:
            name = path.resolve().relative_to(self.out_dir.resolve()).as_posix()
        except ValueError:
            name = path.name
        return {"path": name, "sha256": sha256_file(path)}

    def record(
        self,
        command: str,
        inputs: List[PathLike],
        outputs: List[PathLike],
        seeds: Mapping[str, int],
        settings: Mapping[str, Any] = None,
    ) -> Path:
        self.steps[command] = {
            "inputs": [self._entry(p) for p in inputs],
            "outputs": [self._entry(p) for p in outputs],
            "seeds": dict(sorted(seeds.items())),
            "settings": dict(sorted((settings or {}).items())),
        }
        written = write_json(self.path, {"steps": self.steps})
        logger.info(f"✓ Manifest updated for '{command}' ({len(outputs)} artifacts)")
        return written
