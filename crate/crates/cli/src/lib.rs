//! Command-line pipeline around `dkg-core`: the chat-completions client, the
//! run/score stages, result tables and the participant study service.

pub mod llm_client;
pub mod pipeline;
pub mod report;
pub mod study;
