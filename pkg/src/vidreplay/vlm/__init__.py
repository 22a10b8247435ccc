from .backends import HttpChatBackend, ScriptedVlmBackend, ScriptRule
from .client import (
    MAX_OUTPUT_TOKENS,
    PHASES,
    PhaseStats,
    PriceTable,
    RetryPolicy,
    UsageRecord,
    UsageReport,
    VlmBackend,
    VlmClient,
    VlmRequest,
    VlmResponse,
    account,
    as_client,
    build_action_prompt,
    build_compare_prompt,
    build_roi_prompt,
    format_report,
    invoke,
    parse_response,
    prompt_template,
)

__all__ = [
    "HttpChatBackend",
    "MAX_OUTPUT_TOKENS",
    "PHASES",
    "PhaseStats",
    "PriceTable",
    "RetryPolicy",
    "ScriptRule",
    "ScriptedVlmBackend",
    "UsageRecord",
    "UsageReport",
    "VlmBackend",
    "VlmClient",
    "VlmRequest",
    "VlmResponse",
    "account",
    "as_client",
    "build_action_prompt",
    "build_compare_prompt",
    "build_roi_prompt",
    "format_report",
    "invoke",
    "parse_response",
    "prompt_template",
]
