"""Declarative experiment manifests and their execution.

A manifest is a YAML (or JSON) mapping. Every key and its default is listed
in :data:`DEFAULTS`; nothing else is read.
"""
from __future__ import annotations

import copy
import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import yaml

from .conditions import DEFAULT_DECODING, Persona, TaskCondition, parse_condition, parse_persona
from .harness.providers import LIVE_PROVIDERS, CassetteProvider
from .harness.runlog import RunConfig, RunLog
from .harness.runner import ProviderFailure, derive_seed, execute_run
from .library import ConstraintPool, load_library
from .synthetic import PreferenceProfile, SyntheticProvider, calibrate_profile, profile_from_rates

log = logging.getLogger(__name__)

MANIFEST_SCHEMA_VERSION = 1

DEFAULTS = {
    "schema_version": MANIFEST_SCHEMA_VERSION,
    "experiment_id": "experiment",
    "seed": 0,
    "parallelism": 1,
    "library": None,
    "models": [],
    "providers": {},
    "personas": ["Basic", "Quality", "Creativity"],
    "decoding": dict(DEFAULT_DECODING),
    "design": {
        "stage1": {"replications": 30, "conditions": ["1-1", "1-2", "2-1", "2-2", "3"]},
        "stage2": {"replications": 160, "conditions": ["2-2"]},
    },
    "fuzzy_matching": False,
    "output": {"dir": "out", "run_log": "runs.jsonl", "report_dir": "report"},
    "analyses": {
        "elements": {"enabled": True, "corr": "exchangeable", "offset": "logK", "q": 0.05, "delta_floor": 10.0},
        "categories": {"enabled": True, "corr": "exchangeable", "offset": "logK", "q": 0.05, "delta_floor": 10.0},
        "conditions": {"enabled": True, "weighting": ["ols", "wls_K"]},
        "axes": {"enabled": True, "B": 2000, "q": 0.10, "fallback_p": 0.05, "top_k": 10, "baseline": "pool"},
        "network": {"enabled": True, "top_k": 100, "n_perm": 2000, "divergence_top": 3},
        "reasoning": {"enabled": True, "embedder": "hashing", "dim": 256, "cache_dir": None, "top_k": 10,
                      "threshold": 3.0, "min_support": 5},
    },
}


class ManifestError(ValueError):
    pass


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k not in base:
            raise ManifestError(f"unknown manifest key {path + k!r}")
        if k == "design" and not path and isinstance(v, dict):
            # a given design replaces the default one; stages it leaves out are not run
            unknown = set(v) - set(base[k])
            if unknown:
                raise ManifestError(f"unknown design stage {sorted(unknown)[0]!r}")
            out[k] = {st: _merge(base[k][st], spec or {}, f"design.{st}.") for st, spec in v.items()}
        elif isinstance(base[k], dict) and isinstance(v, dict) and k not in ("providers", "decoding"):
            out[k] = _merge(base[k], v, f"{path}{k}.")
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class PlannedRun:
    config: RunConfig
    provider: str


@dataclass
class Manifest:
    data: dict
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def load(cls, path: str | Path) -> "Manifest":
        path = Path(path)
        raw = yaml.safe_load(path.read_text("utf-8")) or {}
        return cls.from_dict(raw, path.parent)

    @classmethod
    def from_dict(cls, raw: dict, base_dir: str | Path | None = None) -> "Manifest":
        if not isinstance(raw, dict):
            raise ManifestError("manifest must be a mapping")
        version = raw.get("schema_version", MANIFEST_SCHEMA_VERSION)
        if version != MANIFEST_SCHEMA_VERSION:
            raise ManifestError(f"manifest schema version {version} is not supported "
                                f"(expected {MANIFEST_SCHEMA_VERSION})")
        m = cls(_merge(DEFAULTS, raw), Path(base_dir) if base_dir else Path.cwd())
        m.validate()
        return m

    def __getitem__(self, key):
        return self.data[key]

    @property
    def experiment_id(self) -> str:
        return self.data["experiment_id"]

    def validate(self) -> None:
        d = self.data
        if not d["models"]:
            raise ManifestError("manifest lists no models")
        names = [m["name"] for m in d["models"]]
        if len(set(names)) != len(names):
            raise ManifestError("model names must be unique")
        for m in d["models"]:
            prov = m.get("provider")
            if prov not in d["providers"]:
                raise ManifestError(f"model {m['name']!r} references unconfigured provider {prov!r}")
        for name, cfg in d["providers"].items():
            kind = cfg.get("kind")
            if kind != "synthetic" and kind not in LIVE_PROVIDERS and kind != "cassette":
                raise ManifestError(f"provider {name!r} has unknown kind {kind!r}")
        for p in d["personas"]:
            parse_persona(p)
        for stage, spec in d["design"].items():
            if stage not in ("stage1", "stage2"):
                raise ManifestError(f"unknown design stage {stage!r}")
            if spec["replications"] < 0:
                raise ManifestError(f"{stage} replications must be >= 0")
            for c in spec["conditions"]:
                parse_condition(c)
        if int(d["parallelism"]) < 1:
            raise ManifestError("parallelism must be >= 1")

    def resolve(self, p: str | None) -> Path | None:
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def out_dir(self) -> Path:
        return self.resolve(self.data["output"]["dir"])

    @property
    def run_log_path(self) -> Path:
        return self.out_dir / self.data["output"]["run_log"]

    @property
    def report_dir(self) -> Path:
        return self.out_dir / self.data["output"]["report_dir"]

    def pool(self) -> ConstraintPool:
        lib = self.resolve(self.data["library"])
        return load_library(str(lib)) if lib else load_library()

    def planned_runs(self) -> list[PlannedRun]:
        """All (model, persona, condition, replication) runs, stage 2 indices following stage 1."""
        d = self.data
        s1, s2 = d["design"].get("stage1"), d["design"].get("stage2")
        plan = []
        for m in d["models"]:
            for p in d["personas"]:
                persona = Persona.of(p)
                offsets = {}
                for stage_no, spec in ((1, s1), (2, s2)):
                    if not spec:
                        continue
                    for c in spec["conditions"]:
                        cond = TaskCondition.of(c)
                        start = offsets.get(cond.code, 0)
                        for r in range(start, start + spec["replications"]):
                            seed = derive_seed(d["seed"], d["experiment_id"], m["name"], persona.name, cond.code, r)
                            cfg = RunConfig(m["name"], persona, cond, r, seed, dict(d["decoding"]),
                                            d["experiment_id"], stage_no)
                            plan.append(PlannedRun(cfg, m["provider"]))
                        offsets[cond.code] = start + spec["replications"]
        return plan

    def build_providers(self, pool: ConstraintPool, synthetic_only: bool = False) -> dict:
        out = {}
        for name, cfg in self.data["providers"].items():
            kind = cfg["kind"]
            if kind == "synthetic" or synthetic_only:
                out[name] = build_synthetic_provider(cfg if kind == "synthetic" else {}, pool)
                continue
            opts = {k: v for k, v in cfg.items() if k in ("base_url", "api_key_env", "timeout", "max_tokens")}
            inner = LIVE_PROVIDERS[kind](**opts) if kind in LIVE_PROVIDERS else None
            cassette = cfg.get("cassette")
            if kind == "cassette" or cassette:
                cassette = cassette or {}
                out[name] = CassetteProvider(self.resolve(cassette.get("dir", "cassettes")), inner,
                                             cassette.get("mode", "replay" if inner is None else "auto"))
            else:
                out[name] = inner
        return out


def build_profile(spec: dict, pool: ConstraintPool) -> PreferenceProfile:
    if "weights" in spec:
        prof = PreferenceProfile(dict(spec["weights"]), spec.get("description", "explicit weights"))
    else:
        cat = {}
        for key, v in (spec.get("category_rr") or {}).items():
            cat[tuple(key.split("/", 1)) if "/" in key else key] = v
        prof = profile_from_rates(spec.get("element_rr", {}), cat, spec.get("baseline", "Event"), pool)
    prof.free_k_mean = float(spec.get("free_k_mean", prof.free_k_mean))
    prof.reason_phrases = tuple(spec.get("reason_phrases", ()))
    if spec.get("calibrate", False):
        prof = calibrate_profile(prof, pool.ids, int(spec.get("calibrate_k", 20)))
    return prof


def build_synthetic_provider(cfg: dict, pool: ConstraintPool) -> SyntheticProvider:
    profiles = {}
    default = None
    for key, spec in (cfg.get("profiles") or {}).items():
        prof = build_profile(spec, pool)
        if key == "default":
            default = prof
        elif "/" in key:
            profiles[tuple(key.split("/", 1))] = prof
        else:
            profiles[key] = prof
    if default is None and not profiles:
        default = profile_from_rates({}, pool=pool)
    return SyntheticProvider(profiles, pool, default)


@dataclass
class ExecutionSummary:
    planned: int
    skipped: int
    executed: int
    failures: list[tuple[str, str]]
    invalid: int

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {"planned": self.planned, "skipped": self.skipped, "executed": self.executed,
                "failed": len(self.failures), "invalid": self.invalid,
                "failures": [{"run_id": r, "error": e} for r, e in self.failures]}


def execute_manifest(manifest: Manifest, resume: bool = False, parallelism: int | None = None,
                     providers: dict | None = None, run_log: RunLog | None = None, limit: int | None = None,
                     synthetic_only: bool = False, progress: Callable[[int, int], None] | None = None,
                     sleep: Callable[[float], None] | None = None) -> tuple[RunLog, ExecutionSummary]:
    """Run every outstanding planned run and append it to the run log.

    Without ``resume`` an existing log that already holds planned run ids is
    an error. ``limit`` caps how many runs are executed in this call.
    """
    pool = manifest.pool()
    providers = providers or manifest.build_providers(pool, synthetic_only=synthetic_only)
    run_log = run_log or RunLog(manifest.run_log_path)
    plan = manifest.planned_runs()
    done = run_log.ids
    already = [p for p in plan if p.config.run_id in done]
    if already and not resume:
        raise ManifestError(f"{len(already)} planned runs are already in {run_log.path}; pass resume to continue")
    todo = [p for p in plan if p.config.run_id not in done]
    if limit is not None:
        todo = todo[:limit]
    workers = int(parallelism or manifest["parallelism"])
    failures: list[tuple[str, str]] = []
    invalid = 0
    count = 0
    lock = threading.Lock()
    kwargs = {"fuzzy": bool(manifest["fuzzy_matching"])}
    if sleep is not None:
        kwargs["sleep"] = sleep

    def one(p: PlannedRun):
        return execute_run(p.config, pool, providers[p.provider], **kwargs)

    def finish(p: PlannedRun, fut_result=None, exc=None):
        nonlocal invalid, count
        with lock:
            count += 1
            if exc is not None:
                failures.append((p.config.run_id, str(exc)))
                log.error("run %s failed: %s", p.config.run_id, exc)
            else:
                run_log.append(fut_result)
                invalid += not fut_result.valid
            if progress:
                progress(count, len(todo))

    if workers == 1:
        for p in todo:
            try:
                finish(p, one(p))
            except ProviderFailure as exc:
                finish(p, exc=exc)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool_ex:
            futures = {pool_ex.submit(one, p): p for p in todo}
            for fut in as_completed(futures):
                p = futures[fut]
                try:
                    finish(p, fut.result())
                except ProviderFailure as exc:
                    finish(p, exc=exc)
    summary = ExecutionSummary(len(plan), len(already), len(todo) - len(failures), failures, invalid)
    return run_log, summary


DESK_MANIFEST = {
    "experiment_id": "desk",
    "seed": 20240601,
    "models": [{"name": "synth-a", "provider": "synthetic"}, {"name": "synth-b", "provider": "synthetic"}],
    "providers": {
        "synthetic": {
            "kind": "synthetic",
            "profiles": {
                "synth-a": {"element_rr": {"Style": 1.67, "Character": 1.10, "Setting": 1.05}, "calibrate": True},
                "synth-b": {"element_rr": {"Style": 1.30, "Character": 1.20, "Setting": 0.90}, "calibrate": True},
            },
        }
    },
    "design": {
        "stage1": {"replications": 3, "conditions": ["1-1", "1-2", "2-1", "2-2", "3"]},
        "stage2": {"replications": 8, "conditions": ["2-2"]},
    },
    "analyses": {"axes": {"B": 200}, "network": {"top_k": 50, "n_perm": 200}},
}


def dump_manifest(manifest: Manifest) -> str:
    return yaml.safe_dump(json.loads(json.dumps(manifest.data)), sort_keys=True)
