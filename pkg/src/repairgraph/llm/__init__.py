from .extract import EmptyCode, MalformedJson, NoJsonFound, extract_code, extract_json
from .gateway import (
    AuthMissing,
    BackendConfig,
    BackendUnavailable,
    Cassette,
    ChatMessage,
    CompletionRequest,
    GatewayError,
    LLMGateway,
    MockMiss,
    MockPlaybook,
    cassette_key,
)
from .templates import TEMPLATE_NAMES, UnboundPlaceholder, UnknownTemplate, render_template

__all__ = [
    "AuthMissing",
    "BackendConfig",
    "BackendUnavailable",
    "Cassette",
    "ChatMessage",
    "CompletionRequest",
    "EmptyCode",
    "GatewayError",
    "LLMGateway",
    "MalformedJson",
    "MockMiss",
    "MockPlaybook",
    "NoJsonFound",
    "TEMPLATE_NAMES",
    "UnboundPlaceholder",
    "UnknownTemplate",
    "cassette_key",
    "extract_code",
    "extract_json",
    "render_template",
]
