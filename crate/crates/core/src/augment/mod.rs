//! Caption augmentation by LLM rephrasing with a similarity gate.

mod client;
mod corpus;
mod gate;
mod prompt;
mod scorer;

pub use client::{parse_candidates, LlmClient, LlmRequest, TransportClient};
pub use corpus::{
    augment_corpus, augmented_id, journal_path_for, read_journal, AugmentOptions, AugmentOutcome, JournalEntry,
};
pub use gate::{select_rephrase, GateDecision, DEFAULT_THRESHOLD};
pub use prompt::{build_prompt, PLACEHOLDER, PROMPT_TEMPLATE};
pub use scorer::{ExactMatchScorer, SimilarityScorer, TokenF1Scorer, TransportSimilarity};
