"""Decision manifests for corpus curation and reproducibility manifests
for pipeline runs.

A curation manifest is an append-friendly JSONL partition of the input:
every document id appears exactly once, either kept or removed with a
reason. A run manifest records content digests of config, inputs, and
stage outputs; it deliberately excludes wall-clock data so that reruns
with equal inputs compare bit-identical (timings go to a sidecar log).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import FormatError, InternalError

KEEP = "keep"
REMOVE = "remove"


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    action: str
    reason: str | None = None
    score: float | None = None

    def __post_init__(self):
        if self.action not in (KEEP, REMOVE):
            raise FormatError(f"manifest action must be keep|remove, got {self.action!r}")

    def to_json(self) -> str:
        return json.dumps(
            {"id": self.id, "action": self.action, "reason": self.reason, "score": self.score},
            ensure_ascii=False,
            sort_keys=True,
        )


@dataclass
class CorpusManifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def keep(self, doc_id: str) -> None:
        self.entries.append(ManifestEntry(doc_id, KEEP))

    def remove(self, doc_id: str, reason: str, score: float | None = None) -> None:
        self.entries.append(ManifestEntry(doc_id, REMOVE, reason, score))

    def kept_ids(self) -> list[str]:
        return [e.id for e in self.entries if e.action == KEEP]

    def removed_ids(self) -> list[str]:
        return [e.id for e in self.entries if e.action == REMOVE]

    def verify_partition(self, input_ids) -> None:
        """Assert kept + removed = input ids with no overlap or repeats."""
        seen = [e.id for e in self.entries]
        if len(set(seen)) != len(seen):
            raise InternalError("manifest lists a document more than once")
        if set(seen) != set(input_ids):
            raise InternalError("manifest does not partition the input ids")

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.entries:
                fh.write(e.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "CorpusManifest":
        entries = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise FormatError(f"{path}: line {lineno}: {exc}") from exc
                entries.append(
                    ManifestEntry(rec["id"], rec["action"], rec.get("reason"), rec.get("score"))
                )
        return cls(entries)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """Digest record for one pipeline run; deterministic fields only."""

    config_hash: str
    seed: int
    tool_version: str
    inputs: dict[str, str] = field(default_factory=dict)
    stages: list[dict] = field(default_factory=list)

    def add_stage(self, name: str, outputs: dict[str, str]) -> None:
        self.stages.append({"name": name, "outputs": dict(sorted(outputs.items()))})

    def to_json(self) -> str:
        return json.dumps(
            {
                "config_hash": self.config_hash,
                "seed": self.seed,
                "tool_version": self.tool_version,
                "inputs": dict(sorted(self.inputs.items())),
                "stages": self.stages,
            },
            ensure_ascii=False,
            sort_keys=True,
            indent=2,
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        rec = json.loads(Path(path).read_text(encoding="utf-8"))
        m = cls(rec["config_hash"], rec["seed"], rec["tool_version"], rec["inputs"])
        m.stages = rec["stages"]
        return m
