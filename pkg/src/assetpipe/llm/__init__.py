from .gateway import (
    Gateway,
    HttpProvider,
    LLMError,
    LLMProviderError,
    LLMRequest,
    LLMResponse,
    LLMTimeoutError,
    StubProvider,
    StubRule,
    TransientLLMError,
    UnscriptedPromptError,
    fallback_embeddings,
    prompt_key,
)
from .prompts import (
    CHAINED_TECHNIQUES,
    EXTRACTION_TEMPLATES,
    ONE_SHOT_EXEMPLAR_RESPONSE,
    TEMPLATES,
    MissingBindingError,
    PromptTemplate,
    UnknownTemplateError,
    get_template,
    render_prompt,
)

__all__ = [
    "CHAINED_TECHNIQUES", "EXTRACTION_TEMPLATES", "ONE_SHOT_EXEMPLAR_RESPONSE", "TEMPLATES",
    "Gateway", "HttpProvider", "LLMError", "LLMProviderError", "LLMRequest", "LLMResponse",
    "LLMTimeoutError", "MissingBindingError", "PromptTemplate", "StubProvider", "StubRule",
    "TransientLLMError", "UnknownTemplateError", "UnscriptedPromptError",
    "fallback_embeddings", "get_template", "prompt_key", "render_prompt",
]
