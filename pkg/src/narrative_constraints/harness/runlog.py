"""Run records and the append-only JSON-lines run log."""
from __future__ import annotations

import json
import os
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from ..conditions import DEFAULT_DECODING, Persona, TaskCondition

SCHEMA_VERSION = 1


class RunLogError(RuntimeError):
    pass


class DuplicateRunError(RunLogError):
    pass


@dataclass(frozen=True)
class RunConfig:
    model: str
    persona: Persona
    condition: TaskCondition
    replication_index: int
    seed: int
    decoding: dict = field(default_factory=lambda: dict(DEFAULT_DECODING))
    experiment_id: str = "experiment"
    stage: int = 1

    def __post_init__(self):
        if self.replication_index < 0:
            raise ValueError("replication_index must be >= 0")

    @property
    def cell(self) -> tuple[str, str, str]:
        return (self.model, self.persona.name, self.condition.code)

    @property
    def run_id(self) -> str:
        return f"{self.experiment_id}/{self.model}/{self.persona.name}/{self.condition.code}/{self.replication_index:04d}"

    def to_dict(self) -> dict:
        return {
            "experiment_id": self.experiment_id,
            "model": self.model,
            "persona": self.persona.name,
            "condition": self.condition.code,
            "replication_index": self.replication_index,
            "stage": self.stage,
            "seed": self.seed,
            "decoding": dict(self.decoding),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls(
            model=d["model"], persona=Persona.of(d["persona"]), condition=TaskCondition.of(d["condition"]),
            replication_index=int(d["replication_index"]), seed=int(d["seed"]),
            decoding=dict(d.get("decoding", {})), experiment_id=d.get("experiment_id", "experiment"),
            stage=int(d.get("stage", 1)),
        )


@dataclass
class RunRecord:
    run_id: str
    config: RunConfig
    permutation: list[str]
    raw_response: str
    selections: list[str]
    reasons: dict[str, str]
    compatibility: str | None
    timestamps: dict[str, float]
    validation: dict
    provider_meta: dict = field(default_factory=dict)
    prompt_digest: str = ""
    schema_version: int = SCHEMA_VERSION

    @property
    def valid(self) -> bool:
        return self.validation.get("status") == "valid"

    @property
    def model(self) -> str:
        return self.config.model

    @property
    def persona(self) -> str:
        return self.config.persona.name

    @property
    def condition(self) -> str:
        return self.config.condition.code

    @property
    def budget(self) -> int:
        return len(self.selections)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["config"] = self.config.to_dict()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        version = d.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise RunLogError(f"run record schema version {version} is not supported (expected {SCHEMA_VERSION})")
        d = dict(d)
        d["config"] = RunConfig.from_dict(d["config"])
        return cls(**d)

    def without_timestamps(self) -> dict:
        d = self.to_dict()
        d.pop("timestamps")
        d.get("provider_meta", {}).pop("latency_s", None)
        return d


class RunLog:
    """Append-only newline-delimited log of :class:`RunRecord`.

    Appends are serialized by a lock and written as one ``write`` of a full
    line followed by ``fsync``; a torn final line left by a crash is skipped
    on read and reported in ``torn_lines``.
    """

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._ids: set[str] | None = None
        self.torn_lines: list[int] = []

    def _scan(self) -> Iterator[tuple[int, dict]]:
        if not self.path.exists():
            return
        self.torn_lines = []
        with open(self.path, "rb") as fh:
            for n, raw in enumerate(fh, start=1):
                if not raw.strip():
                    continue
                try:
                    if not raw.endswith(b"\n"):
                        raise ValueError("unterminated record")
                    yield n, json.loads(raw.decode("utf-8"))
                except ValueError:
                    self.torn_lines.append(n)

    @property
    def ids(self) -> set[str]:
        if self._ids is None:
            self._ids = {d["run_id"] for _, d in self._scan()}
        return self._ids

    def __contains__(self, run_id: str) -> bool:
        return run_id in self.ids

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self) -> Iterator[RunRecord]:
        for _, d in self._scan():
            yield RunRecord.from_dict(d)

    def records(self, valid_only: bool = False) -> list[RunRecord]:
        recs = [r for r in self if r.valid or not valid_only]
        return sorted(recs, key=lambda r: r.run_id)

    def append(self, record: RunRecord) -> None:
        line = (record.to_json() + "\n").encode("utf-8")
        with self._lock:
            if record.run_id in self.ids:
                raise DuplicateRunError(f"run_id {record.run_id} already in {self.path}")
            self.path.parent.mkdir(parents=True, exist_ok=True)
            try:
                fd = os.open(self.path, os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)
                try:
                    if os.fstat(fd).st_size and not self._ends_with_newline():
                        # Fence off a torn tail so the new record starts on its own line.
                        os.write(fd, b"\n")
                    os.write(fd, line)
                    os.fsync(fd)
                finally:
                    os.close(fd)
            except OSError as exc:
                raise RunLogError(f"could not append to {self.path}: {exc}") from exc
            self.ids.add(record.run_id)

    def _ends_with_newline(self) -> bool:
        with open(self.path, "rb") as fh:
            fh.seek(-1, os.SEEK_END)
            return fh.read(1) == b"\n"

    def extend(self, records: Iterable[RunRecord]) -> None:
        for r in records:
            self.append(r)


def append_run_record(record: RunRecord, log: RunLog) -> None:
    log.append(record)
