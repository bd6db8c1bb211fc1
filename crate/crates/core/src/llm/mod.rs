//! LLM extraction backend: prompt construction, completion transport
//! (live wire client and deterministic replay), and response parsing.

pub mod client;
pub mod parse;
pub mod prompt;
pub mod replay;

pub use client::{
    ChatMessage, CompletionRequest, LiveClient, LlmBackend, LlmError, LlmResponse,
    ResponseBackend, RetryPolicy, API_KEY_ENV, BASE_URL_ENV, DEFAULT_MAX_TOKENS, DEFAULT_MODEL,
    DEFAULT_TEMPERATURE,
};
pub use parse::{
    detect_no_answer, extraneous_text, overweight_asserted, parse_response, validate_observation,
    ValidationMode,
};
pub use prompt::{
    build_prompt, PromptError, PromptTemplate, BASELINE_VARIANT, NARRATIVE_PLACEHOLDER,
    PLUS_EXCLUSIONS_VARIANT,
};
pub use replay::{write_fixtures, FixtureEntry, ReplayError, ReplayStore};
