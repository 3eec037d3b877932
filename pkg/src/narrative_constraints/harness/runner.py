"""Single-run execution: permute, prompt, call, parse, validate."""
from __future__ import annotations

import hashlib
import logging
import time
from typing import Callable

import numpy as np

from ..library import CandidateList, ConstraintPool, subset_for_condition
from .parsing import TextResolver, parse_response, validate_selection
from .prompts import assemble_prompt
from .providers import ModelProvider, ProviderError, ProviderRequest
from .runlog import RunConfig, RunRecord

log = logging.getLogger(__name__)

MAX_RETRIES = 3
BACKOFF_BASE = 1.0


class ProviderFailure(RuntimeError):
    """The provider kept failing after the retry budget was spent."""


def derive_seed(*parts) -> int:
    """64-bit seed from an arbitrary tuple of labels (stable across processes)."""
    digest = hashlib.sha256("\x1f".join(map(str, parts)).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def permute_pool(candidates: CandidateList, seed: int) -> CandidateList:
    if len(candidates) == 0:
        raise ValueError("cannot permute an empty candidate list")
    order = np.random.default_rng(seed).permutation(len(candidates))
    return candidates.reordered(order)


def presentation_lists(config: RunConfig, pool: ConstraintPool) -> list[CandidateList]:
    lists = subset_for_condition(pool, config.condition)
    return [permute_pool(cl, derive_seed(config.seed, "permutation", i)) for i, cl in enumerate(lists)]


def _call_with_retries(provider: ModelProvider, request: ProviderRequest, max_retries: int, backoff: float,
                       sleep: Callable[[float], None]):
    attempt = 0
    while True:
        try:
            return provider.complete(request), attempt
        except ProviderError as exc:
            if not exc.retryable or attempt >= max_retries:
                raise ProviderFailure(f"{getattr(provider, 'name', 'provider')} failed after "
                                      f"{attempt + 1} attempt(s): {exc}") from exc
            delay = backoff * (2 ** attempt)
            log.warning("provider error (%s); retry %d/%d in %.1fs", exc, attempt + 1, max_retries, delay)
            sleep(delay)
            attempt += 1


def execute_run(config: RunConfig, pool: ConstraintPool, provider: ModelProvider, *, fuzzy: bool = False,
                max_retries: int = MAX_RETRIES, backoff: float = BACKOFF_BASE,
                sleep: Callable[[float], None] = time.sleep, resolver: TextResolver | None = None) -> RunRecord:
    """Execute one isolated run and return its record.

    Provider errors are retried with exponential backoff; a response that
    fails to parse is kept as data with ``validation.status = "parse_error"``.
    """
    lists = presentation_lists(config, pool)
    bundle = assemble_prompt(config, lists, pool_size=len(pool))
    request = ProviderRequest(
        model=config.model, system_text=bundle.system_text, user_text=bundle.user_text,
        decoding=dict(config.decoding), seed=derive_seed(config.seed, "provider"),
        condition=config.condition, candidates=lists,
    )
    t_request = time.time()
    response, retries = _call_with_retries(provider, request, max_retries, backoff, sleep)
    t_response = max(time.time(), t_request)

    parsed = parse_response(response.text, config.condition, pool, fuzzy=fuzzy, resolver=resolver)
    if parsed.ok:
        validation = validate_selection(parsed.selections, config.condition, pool).to_dict()
    else:
        validation = {"status": "parse_error", "violations": list(parsed.errors)}
    meta = dict(response.meta)
    if retries:
        meta["retries"] = retries
    if parsed.fuzzy_matches:
        meta["fuzzy_matches"] = [list(m) for m in parsed.fuzzy_matches]
    return RunRecord(
        run_id=config.run_id,
        config=config,
        permutation=[cid for cl in lists for cid in cl.ids],
        raw_response=response.text,
        selections=parsed.selections,
        reasons=parsed.reasons,
        compatibility=parsed.compatibility,
        timestamps={"request": t_request, "response": t_response},
        validation=validation,
        provider_meta=meta,
        prompt_digest=bundle.digest(config.model, dict(config.decoding)),
    )
