//! Grammar-constrained generation.
//!
//! `gcd_generate` is the whole-guide loop: at each step the next-token
//! distribution is masked by the guide's allowed set, one token is sampled,
//! and the guide state advances, so every successful output is accepted by
//! the guide. `compile_partition` + `partitioned_generate` implement the
//! two-phase strategy: a one-time offline run produces an LM-aligned token
//! sequence that is split around the literal slots; online, static runs are
//! absorbed into the decode state as prefill and only the slots (plus one
//! boundary token of left and right context) are sampled. Forward calls —
//! sequential `next_dist` invocations — are the hardware-independent
//! latency proxy.

use std::fmt;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grammar::{
    self, compile_slot, Guide, GuideError, GuideSpec, MaskCache, TokenMask, NUM_PATTERN,
    STR_PATTERN, STR_STRICT_PATTERN,
};
use crate::lexer::{self, LexError, LiteralKind, Span, SqlTemplate, TokenKind};
use crate::lm::{TokenId, Vocabulary};

/// Exact slot patterns used by the online phase.
pub fn literal_regex(kind: LiteralKind, strict: bool) -> &'static str {
    match (kind, strict) {
        (LiteralKind::Num, _) => NUM_PATTERN,
        (LiteralKind::Str, false) => STR_PATTERN,
        (LiteralKind::Str, true) => STR_STRICT_PATTERN,
    }
}

/// Reusable decode context: the token ids already absorbed. Extending a
/// state with tokens and then querying is equivalent to querying with the
/// full context — the handle is an optimization, never a semantic input.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DecodeState {
    ids: Vec<TokenId>,
}

impl DecodeState {
    pub fn new() -> Self {
        DecodeState { ids: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn extended(&self, new_tokens: &[TokenId]) -> Self {
        let mut ids = Vec::with_capacity(self.ids.len() + new_tokens.len());
        ids.extend_from_slice(&self.ids);
        ids.extend_from_slice(new_tokens);
        DecodeState { ids }
    }
}

/// Abstract next-token-distribution provider. Implementations must be
/// deterministic given (state, new_tokens) and safe to share across threads;
/// a single decode session is strictly sequential.
pub trait LanguageModel: Send + Sync {
    fn vocab(&self) -> &Vocabulary;
    /// Stable identifier binding compiled partitions to this model.
    fn identifier(&self) -> &str;
    /// Distribution over the vocabulary after absorbing `new_tokens` on top
    /// of `state`, plus the extended state.
    fn next_dist(&self, state: &DecodeState, new_tokens: &[TokenId]) -> (Vec<f64>, DecodeState);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// Argmax of the masked distribution. Ties prefer EOS when allowed,
    /// then the lowest token id.
    Greedy,
    /// Sample from the renormalized masked distribution.
    Seeded(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextMode {
    /// Bare literal regex per slot; boundary tokens stay in the static runs.
    None,
    /// One boundary token from each side moves into the slot guide.
    LeftRight,
}

#[derive(Debug, Clone)]
pub struct DecodeReport {
    pub output_text: String,
    pub output_ids: Vec<TokenId>,
    /// Sequential next_dist invocations; absorbing static tokens counts as
    /// prefill inside the call that needs the following distribution.
    pub forward_calls: u64,
    /// Vocabulary entries masked out, summed over sampling steps.
    pub masked_token_totals: u64,
    pub wall_time: Duration,
}

#[derive(Debug)]
pub enum DecodeError {
    /// Mask empty: the guide and vocabulary cannot express any continuation.
    NoViableToken { step: usize },
    /// Accepting state never reached within the budget.
    MaxLenExceeded { max_len: usize },
    /// A slot's byte span cannot be isolated in the offline alignment.
    SlotAlignment(String),
    /// Partition compiled against a different model.
    LmMismatch { expected: String, found: String },
    Guide(GuideError),
    Lex(LexError),
    Format(String),
}

impl fmt::Display for DecodeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecodeError::NoViableToken { step } => write!(f, "no viable token at step {step}"),
            DecodeError::MaxLenExceeded { max_len } => {
                write!(f, "no accepting state within {max_len} tokens")
            }
            DecodeError::SlotAlignment(msg) => write!(f, "slot alignment failed: {msg}"),
            DecodeError::LmMismatch { expected, found } => {
                write!(f, "partition was compiled for {expected}, got {found}")
            }
            DecodeError::Guide(e) => write!(f, "guide error: {e}"),
            DecodeError::Lex(e) => write!(f, "lex error: {e}"),
            DecodeError::Format(msg) => write!(f, "format error: {msg}"),
        }
    }
}

impl std::error::Error for DecodeError {}

impl From<GuideError> for DecodeError {
    fn from(e: GuideError) -> Self {
        DecodeError::Guide(e)
    }
}

impl From<LexError> for DecodeError {
    fn from(e: LexError) -> Self {
        DecodeError::Lex(e)
    }
}

/// Prompt layout shared by offline compilation and the CLI.
pub fn compose_prompt(schema: &str, question: &str) -> String {
    let mut s = String::new();
    if !schema.is_empty() {
        s.push_str(schema);
        s.push('\n');
    }
    if !question.is_empty() {
        s.push_str("-- ");
        s.push_str(question);
        s.push('\n');
    }
    s
}

enum Sampler {
    Greedy,
    Seeded(Box<ChaCha8Rng>),
}

impl Sampler {
    fn new(sampling: Sampling) -> Self {
        match sampling {
            Sampling::Greedy => Sampler::Greedy,
            Sampling::Seeded(seed) => Sampler::Seeded(Box::new(ChaCha8Rng::seed_from_u64(seed))),
        }
    }

    /// Pick a token from the masked distribution. Greedy resolves
    /// probability ties toward EOS when allowed, then toward the token whose
    /// advance minimizes the guide's remaining distance to acceptance (then
    /// lowest id). The distance rule makes every tied step strict progress,
    /// so uniform-fallback models terminate instead of looping on repeatable
    /// regions like whitespace runs or digit tails.
    fn pick(
        &mut self,
        dist: &[f64],
        mask: &TokenMask,
        guide: &Guide,
        gstate: grammar::GuideState,
        vocab: &Vocabulary,
        step: usize,
    ) -> Result<TokenId, DecodeError> {
        if mask.is_empty() {
            return Err(DecodeError::NoViableToken { step });
        }
        let eos = vocab.eos();
        match self {
            Sampler::Greedy => {
                let mut best_p = f64::NEG_INFINITY;
                for id in mask.iter_ids() {
                    if dist[id as usize] > best_p {
                        best_p = dist[id as usize];
                    }
                }
                if mask.contains(eos) && dist[eos as usize] == best_p {
                    return Ok(eos);
                }
                let mut best: Option<(u32, TokenId)> = None;
                for id in mask.iter_ids() {
                    if id == eos || dist[id as usize] != best_p {
                        continue;
                    }
                    let next = guide
                        .advance(gstate, vocab.token_bytes(id))
                        .expect("allowed token must advance");
                    let d = guide.distance_to_accept(next);
                    if best.is_none_or(|(bd, bid)| (d, id) < (bd, bid)) {
                        best = Some((d, id));
                    }
                }
                Ok(best.expect("mask is nonempty").1)
            }
            Sampler::Seeded(rng) => {
                let total: f64 = mask.iter_ids().map(|id| dist[id as usize]).sum();
                if total <= 0.0 {
                    return Err(DecodeError::NoViableToken { step });
                }
                let mut u = rng.gen_range(0.0..1.0) * total;
                let mut last = None;
                for id in mask.iter_ids() {
                    u -= dist[id as usize];
                    last = Some(id);
                    if u <= 0.0 {
                        return Ok(id);
                    }
                }
                Ok(last.expect("mask is nonempty"))
            }
        }
    }
}

/// Whole-guide constrained generation: sample from p(y) ∘ m each step until
/// EOS at an accepting state or `max_len`.
#[allow(clippy::explicit_counter_loop)] // forward_calls counts next_dist queries, not steps
pub fn gcd_generate(
    lm: &dyn LanguageModel,
    guide: &Guide,
    prompt: &str,
    max_len: usize,
    sampling: Sampling,
) -> Result<DecodeReport, DecodeError> {
    let t0 = Instant::now();
    let vocab = lm.vocab();
    let mut sampler = Sampler::new(sampling);
    let mut cache = MaskCache::new();

    let mut state = DecodeState::new();
    let mut pending: Vec<TokenId> = vocab.encode(prompt);
    let mut gstate = guide.start();
    let mut output_ids: Vec<TokenId> = Vec::new();
    let mut forward_calls = 0u64;
    let mut masked_total = 0u64;

    for step in 0..max_len {
        let (dist, next_state) = lm.next_dist(&state, &pending);
        state = next_state;
        pending.clear();
        forward_calls += 1;

        let mask = cache.get_or_compute(guide, gstate, vocab);
        masked_total += (vocab.len() - mask.count()) as u64;
        let token = sampler.pick(&dist, mask, guide, gstate, vocab, step)?;
        if token == vocab.eos() {
            return Ok(DecodeReport {
                output_text: vocab.decode(&output_ids),
                output_ids,
                forward_calls,
                masked_token_totals: masked_total,
                wall_time: t0.elapsed(),
            });
        }
        gstate = guide
            .advance(gstate, vocab.token_bytes(token))
            .expect("allowed token must advance");
        output_ids.push(token);
        pending.push(token);
    }
    Err(DecodeError::MaxLenExceeded { max_len })
}

/// LM-aligned token-id segments split around literal slots — the offline
/// product of the two-phase scheme. Interleaving the decoded static runs
/// with any rule-conforming fills (gap bytes included, see `fill_static`)
/// stays inside the template's flexible-guide language.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionedTemplate {
    pub version: u32,
    pub lm_id: String,
    pub template_id: String,
    pub slot_kinds: Vec<LiteralKind>,
    /// n+1 static runs of tokens that lie entirely inside segments.
    pub segments: Vec<Vec<TokenId>>,
    /// Per slot: segment bytes consumed by a token straddling the slot's
    /// left/right boundary in the offline alignment. Empty when boundaries
    /// fell on token edges.
    pub left_gaps: Vec<String>,
    pub right_gaps: Vec<String>,
    pub num_rule: String,
    pub str_rule: String,
    /// Literal texts of the offline run, kept for round-trip checks.
    pub compiled_literals: Vec<String>,
}

impl PartitionedTemplate {
    /// Interleave decoded static runs with the given literal texts (gap
    /// bytes included), reproducing the offline output for the offline
    /// literals.
    pub fn fill_static(&self, vocab: &Vocabulary, fills: &[String]) -> String {
        let mut out = String::new();
        for (i, seg) in self.segments.iter().enumerate() {
            out.push_str(&vocab.decode(seg));
            if i < fills.len() {
                out.push_str(&self.left_gaps[i]);
                out.push_str(&fills[i]);
                out.push_str(&self.right_gaps[i]);
            }
        }
        out
    }

    /// Total static tokens across runs.
    pub fn static_tokens(&self) -> usize {
        self.segments.iter().map(|s| s.len()).sum()
    }

    pub fn save(&self, path: &Path) -> Result<(), DecodeError> {
        let json =
            serde_json::to_string_pretty(self).map_err(|e| DecodeError::Format(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| DecodeError::Format(e.to_string()))
    }

    /// Load and refuse a partition compiled for a different model.
    pub fn load(path: &Path, lm: &dyn LanguageModel) -> Result<Self, DecodeError> {
        let data =
            std::fs::read_to_string(path).map_err(|e| DecodeError::Format(e.to_string()))?;
        let part: PartitionedTemplate =
            serde_json::from_str(&data).map_err(|e| DecodeError::Format(e.to_string()))?;
        if part.lm_id != lm.identifier() {
            return Err(DecodeError::LmMismatch {
                expected: part.lm_id,
                found: lm.identifier().to_string(),
            });
        }
        Ok(part)
    }
}

pub const DEFAULT_MAX_LEN: usize = 512;

/// Offline phase of the two-phase scheme: run whole-guide GCD once, then
/// split the aligned token list around the literal slots. Tokens overlapping
/// a slot are discarded to the slot side; segment bytes they consumed are
/// kept as gap context so the online phase can regenerate them.
pub fn compile_partition(
    lm: &dyn LanguageModel,
    template: &SqlTemplate,
    guide: &Guide,
    schema_prompt: &str,
    sample_query: &str,
) -> Result<PartitionedTemplate, DecodeError> {
    let spec = GuideSpec::flexible();
    compile_partition_with(lm, template, guide, schema_prompt, sample_query, &spec)
}

pub fn compile_partition_with(
    lm: &dyn LanguageModel,
    template: &SqlTemplate,
    guide: &Guide,
    schema_prompt: &str,
    sample_query: &str,
    spec: &GuideSpec,
) -> Result<PartitionedTemplate, DecodeError> {
    let vocab = lm.vocab();
    let prompt = compose_prompt(schema_prompt, sample_query);
    let report = gcd_generate(lm, guide, &prompt, DEFAULT_MAX_LEN, Sampling::Greedy)?;
    let text = &report.output_text;
    let ids = &report.output_ids;

    // Literal spans in the aligned output.
    let toks = lexer::tokenize(text)?;
    let mut slot_spans: Vec<Span> = Vec::new();
    let mut slot_kinds: Vec<LiteralKind> = Vec::new();
    let mut literal_texts: Vec<String> = Vec::new();
    for t in &toks {
        let kind = match t.kind {
            TokenKind::StringLiteral => LiteralKind::Str,
            TokenKind::NumberLiteral => LiteralKind::Num,
            _ => continue,
        };
        slot_spans.push(t.span);
        slot_kinds.push(kind);
        literal_texts.push(t.text.clone());
    }
    if slot_kinds != template.slots {
        return Err(DecodeError::SlotAlignment(format!(
            "aligned output has slots {:?}, template has {:?}",
            slot_kinds, template.slots
        )));
    }
    let n_slots = slot_spans.len();

    // Byte extent of each output token.
    let mut offsets = Vec::with_capacity(ids.len() + 1);
    let mut pos = 0usize;
    offsets.push(0);
    for &id in ids {
        pos += vocab.token_bytes(id).len();
        offsets.push(pos);
    }

    let mut segments: Vec<Vec<TokenId>> = vec![Vec::new(); n_slots + 1];
    let mut left_edge: Vec<usize> = slot_spans.iter().map(|s| s.start).collect();
    let mut right_edge: Vec<usize> = slot_spans.iter().map(|s| s.end).collect();
    for (i, &id) in ids.iter().enumerate() {
        let (ts, te) = (offsets[i], offsets[i + 1]);
        let overlapping: Vec<usize> = (0..n_slots)
            .filter(|&j| ts < slot_spans[j].end && slot_spans[j].start < te)
            .collect();
        match overlapping.len() {
            0 => {
                // Pure segment token: segment index = slots entirely before it.
                let seg = slot_spans.iter().take_while(|s| s.end <= ts).count();
                segments[seg].push(id);
            }
            1 => {
                let j = overlapping[0];
                left_edge[j] = left_edge[j].min(ts);
                right_edge[j] = right_edge[j].max(te);
            }
            _ => {
                return Err(DecodeError::SlotAlignment(format!(
                    "token {id} spans multiple literal slots"
                )))
            }
        }
    }
    let left_gaps: Vec<String> =
        (0..n_slots).map(|j| text[left_edge[j]..slot_spans[j].start].to_string()).collect();
    let right_gaps: Vec<String> =
        (0..n_slots).map(|j| text[slot_spans[j].end..right_edge[j]].to_string()).collect();

    let part = PartitionedTemplate {
        version: 1,
        lm_id: lm.identifier().to_string(),
        template_id: template.template_id.clone(),
        slot_kinds,
        segments,
        left_gaps,
        right_gaps,
        num_rule: spec.num_rule.clone(),
        str_rule: spec.str_rule.clone(),
        compiled_literals: literal_texts,
    };

    // Reconstruction invariant: static runs + gap bytes around any
    // rule-conforming fills must stay in the guide's language. Checked with
    // the offline literals and a minimal synthetic fill per slot kind.
    let mut checks: Vec<Vec<String>> = vec![part.compiled_literals.clone()];
    checks.push(
        part.slot_kinds
            .iter()
            .map(|k| match k {
                LiteralKind::Num => "0".to_string(),
                LiteralKind::Str => "''".to_string(),
            })
            .collect(),
    );
    for fills in checks {
        let joined = part.fill_static(vocab, &fills);
        if !guide.accepts(&joined) {
            return Err(DecodeError::SlotAlignment(format!(
                "interleaving static runs with fills {fills:?} leaves the guide language: \
                 {joined:?}"
            )));
        }
    }

    Ok(part)
}

/// Online phase: absorb static runs as prefill, constrained-generate each
/// slot under prev-token + gap bytes + regex + gap bytes + next-token
/// (LeftRight) or the bare regex (None), then append the final run without
/// querying the model. None drops boundary context entirely, so tokenizer
/// straddling can make it diverge or fail — that is the naive-partitioning
/// failure mode; LeftRight is the production configuration.
pub fn partitioned_generate(
    lm: &dyn LanguageModel,
    part: &PartitionedTemplate,
    prompt: &str,
    context_mode: ContextMode,
    sampling: Sampling,
) -> Result<DecodeReport, DecodeError> {
    partitioned_generate_with_width(lm, part, prompt, context_mode, sampling, 1)
}

/// `partitioned_generate` with an experimental boundary width: `width`
/// tokens move from each adjacent static run into the slot guide. Width 1
/// is the canonical configuration.
pub fn partitioned_generate_with_width(
    lm: &dyn LanguageModel,
    part: &PartitionedTemplate,
    prompt: &str,
    context_mode: ContextMode,
    sampling: Sampling,
    width: usize,
) -> Result<DecodeReport, DecodeError> {
    assert!(width >= 1, "boundary width must be at least 1");
    let t0 = Instant::now();
    let vocab = lm.vocab();
    if part.lm_id != lm.identifier() {
        return Err(DecodeError::LmMismatch {
            expected: part.lm_id.clone(),
            found: lm.identifier().to_string(),
        });
    }
    let spec = GuideSpec {
        kind: grammar::GuideKind::Slot,
        num_rule: part.num_rule.clone(),
        str_rule: part.str_rule.clone(),
    };
    let mut sampler = Sampler::new(sampling);

    let mut segs: Vec<Vec<TokenId>> = part.segments.clone();
    let n_slots = part.slot_kinds.len();
    let mut state = DecodeState::new();
    let mut pending: Vec<TokenId> = vocab.encode(prompt);
    let mut output_ids: Vec<TokenId> = Vec::new();
    let mut forward_calls = 0u64;
    let mut masked_total = 0u64;
    let mut step = 0usize;

    for i in 0..n_slots {
        let (prev_toks, next_toks) = match context_mode {
            ContextMode::LeftRight => {
                let take_next = width.min(segs[i + 1].len());
                let next_toks: Vec<TokenId> = segs[i + 1].drain(..take_next).collect();
                let keep = segs[i].len().saturating_sub(width);
                let prev_toks: Vec<TokenId> = segs[i].split_off(keep);
                (prev_toks, next_toks)
            }
            ContextMode::None => (Vec::new(), Vec::new()),
        };

        for &id in &segs[i] {
            pending.push(id);
            output_ids.push(id);
        }

        let mut prefix: Vec<u8> = Vec::new();
        let mut suffix: Vec<u8> = Vec::new();
        if let ContextMode::LeftRight = context_mode {
            for &p in &prev_toks {
                prefix.extend_from_slice(vocab.token_bytes(p));
            }
            prefix.extend_from_slice(part.left_gaps[i].as_bytes());
            suffix.extend_from_slice(part.right_gaps[i].as_bytes());
            for &nxt in &next_toks {
                suffix.extend_from_slice(vocab.token_bytes(nxt));
            }
        }
        let slot_guide = compile_slot(&prefix, part.slot_kinds[i], &suffix, &spec)?;
        let mut cache = MaskCache::new();
        let mut gstate = slot_guide.start();
        let mut produced = 0usize;
        loop {
            if slot_guide.is_accepting(gstate) && !slot_guide.can_extend(gstate) {
                break;
            }
            if produced >= DEFAULT_MAX_LEN {
                return Err(DecodeError::MaxLenExceeded { max_len: DEFAULT_MAX_LEN });
            }
            let (dist, next_state) = lm.next_dist(&state, &pending);
            state = next_state;
            pending.clear();
            forward_calls += 1;

            let mask = cache.get_or_compute(&slot_guide, gstate, vocab);
            masked_total += (vocab.len() - mask.count()) as u64;
            let token = sampler.pick(&dist, mask, &slot_guide, gstate, vocab, step)?;
            step += 1;
            if token == vocab.eos() {
                break;
            }
            gstate = slot_guide
                .advance(gstate, vocab.token_bytes(token))
                .expect("allowed token must advance");
            output_ids.push(token);
            pending.push(token);
            produced += 1;
        }
    }

    for &id in &segs[n_slots] {
        output_ids.push(id);
    }

    Ok(DecodeReport {
        output_text: vocab.decode(&output_ids),
        output_ids,
        forward_calls,
        masked_token_totals: masked_total,
        wall_time: t0.elapsed(),
    })
}

/// Run full GCD and partitioned decoding over the same inputs; used by the
/// bench command and the efficiency checks.
pub fn compare_modes(
    lm: &dyn LanguageModel,
    guide: &Guide,
    part: &PartitionedTemplate,
    prompt: &str,
) -> Result<(DecodeReport, DecodeReport), DecodeError> {
    let full = gcd_generate(lm, guide, prompt, DEFAULT_MAX_LEN, Sampling::Greedy)?;
    let partitioned =
        partitioned_generate(lm, part, prompt, ContextMode::LeftRight, Sampling::Greedy)?;
    Ok((full, partitioned))
}
