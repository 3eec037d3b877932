from .parsing import ParseResult, TextResolver, ValidationResult, normalize_text, parse_response, validate_selection
from .prompts import PromptBundle, PromptError, assemble_prompt
from .providers import (AnthropicProvider, CassetteMiss, CassetteProvider, GeminiProvider, ModelProvider,
                        OpenAIChatProvider, ProviderError, ProviderRequest, ProviderResponse)
from .runlog import DuplicateRunError, RunConfig, RunLog, RunLogError, RunRecord, append_run_record
from .runner import ProviderFailure, derive_seed, execute_run, permute_pool, presentation_lists
