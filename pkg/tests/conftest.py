import numpy as np
import pytest

from narrative_constraints.conditions import Persona, TaskCondition
from narrative_constraints.harness.runlog import RunConfig, RunRecord
from narrative_constraints.library import load_library


@pytest.fixture(scope="session")
def pool():
    return load_library()


def make_record(selections, model="m", persona="Basic", condition="2-2", rep=0, permutation=None,
                reasons=None, status="valid", pool=None, experiment="t"):
    cfg = RunConfig(model, Persona.of(persona), TaskCondition.of(condition), rep, rep, experiment_id=experiment)
    perm = permutation if permutation is not None else (pool.ids if pool is not None else [])
    return RunRecord(
        run_id=cfg.run_id, config=cfg, permutation=list(perm), raw_response="", selections=list(selections),
        reasons=reasons or {c: f"reason for {c}" for c in selections}, compatibility="ok",
        timestamps={"request": 0.0, "response": 0.0}, validation={"status": status, "violations": []},
    )


@pytest.fixture
def record_factory(pool):
    def factory(selections, **kw):
        kw.setdefault("pool", pool)
        return make_record(selections, **kw)
    return factory


def random_runs(pool, n_runs, k=20, seed=0, model="m", persona="Basic", weights=None):
    rng = np.random.default_rng(seed)
    ids = np.array(pool.ids)
    p = None if weights is None else np.asarray(weights) / np.sum(weights)
    out = []
    for r in range(n_runs):
        sel = rng.choice(ids, size=k, replace=False, p=p)
        out.append(make_record(sel.tolist(), model=model, persona=persona, rep=r, pool=pool))
    return out


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    """The built-in 138-run desk manifest executed once with synthetic providers."""
    from narrative_constraints.manifest import DESK_MANIFEST, Manifest, execute_manifest

    out = tmp_path_factory.mktemp("desk")
    m = Manifest.from_dict(DESK_MANIFEST)
    m.data["output"]["dir"] = str(out)
    run_log, summary = execute_manifest(m, parallelism=4, synthetic_only=True)
    return m, run_log, summary


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    def check(name: str, ok: bool, detail: str = ""):
        ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        assert ok, f"{name}: {detail}"
    return check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
