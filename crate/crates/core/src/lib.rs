//! Template-constrained decoding for recurring text-to-SQL queries.
//!
//! The pipeline: [`lexer`] turns labeled SQLs into parameterized templates;
//! [`nlq`] masks literal mentions in the paired questions; [`matcher`]
//! indexes the masked questions and decides whether a new question fits a
//! stored template; [`grammar`] compiles templates into steppable byte-level
//! recognizers with per-state token masks; [`decoder`] generates SQL from a
//! pluggable language model under those masks, either over the whole guide
//! or with the two-phase partitioned strategy that only samples literal
//! slots; [`lm`] provides deterministic model implementations for testing
//! and benchmarking; [`workload`] measures template reuse in query logs.

pub mod decoder;
pub mod grammar;
pub mod lexer;
pub mod lm;
pub mod matcher;
pub mod nlq;
pub mod workload;

pub use decoder::{
    gcd_generate, literal_regex, partitioned_generate, partitioned_generate_with_width,
    ContextMode, DecodeError, DecodeReport, DecodeState, LanguageModel, PartitionedTemplate,
    Sampling,
};
pub use grammar::{Guide, GuideError, GuideKind, GuideSpec, GuideState, TokenMask};
pub use lexer::{
    detokenize, extract_literals, fill, perturb, templatize, tokenize, tokenize_bytes, LexError,
    Literal, LiteralKind, PerturbStyle, Span, SqlTemplate, SqlToken, TokenKind,
};
pub use lm::{build_vocab, NgramLm, ScriptedLm, TokenId, Vocabulary};
pub use matcher::{
    baseline_match, build_index, calibrate_threshold, select_template, Aggregation, Calibration,
    Embedder, HashEmbedder, IndexEntry, MatchDecision, MatchMethod, MatcherError, NliLabel,
    NliScorer, OverlapNli, TemplateIndex,
};
pub use nlq::{fuzzy_find, indel_similarity, mask_nlq, MaskedNlq};
pub use workload::{analyze, generate_synthetic, WorkloadError, WorkloadStats};
