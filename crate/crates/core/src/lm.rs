//! Deterministic language models and the vocabulary they share.
//!
//! The vocabulary is byte-level: ids 0..=255 are the raw bytes, 256 is the
//! end-of-sequence marker (mapping to no bytes), and higher ids are BPE-style
//! greedy pair merges trained on a corpus. Every text therefore tokenizes,
//! and multi-byte tokens like " FROM" or "1;" exist once enough merges are
//! trained, which is what makes partition-boundary straddling reachable.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoder::{DecodeState, LanguageModel};

pub type TokenId = u32;

const BYTE_TOKENS: usize = 256;

#[derive(Debug, Clone, Default)]
pub struct TrieNode {
    /// Sorted by byte.
    pub children: Vec<(u8, u32)>,
    /// Token ids whose byte string ends at this node.
    pub tokens: Vec<TokenId>,
}

/// Static byte trie over all token strings; masking walks this against the
/// guide automaton so per-step cost scales with live trie nodes, not with
/// vocabulary size per byte.
#[derive(Debug, Clone, Default)]
pub struct ByteTrie {
    nodes: Vec<TrieNode>,
}

impl ByteTrie {
    pub fn new() -> Self {
        ByteTrie { nodes: vec![TrieNode::default()] }
    }

    pub fn insert(&mut self, bytes: &[u8], id: TokenId) {
        let mut node = 0u32;
        for &b in bytes {
            node = match self.nodes[node as usize].children.binary_search_by_key(&b, |c| c.0) {
                Ok(i) => self.nodes[node as usize].children[i].1,
                Err(i) => {
                    let next = self.nodes.len() as u32;
                    self.nodes.push(TrieNode::default());
                    self.nodes[node as usize].children.insert(i, (b, next));
                    next
                }
            };
        }
        self.nodes[node as usize].tokens.push(id);
    }

    pub fn node(&self, idx: u32) -> &TrieNode {
        &self.nodes[idx as usize]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() <= 1
    }

    /// Longest token that is a prefix of `bytes`; ties on byte string are
    /// resolved to the smallest id.
    pub fn longest_prefix(&self, bytes: &[u8]) -> Option<(TokenId, usize)> {
        let mut node = 0u32;
        let mut best: Option<(TokenId, usize)> = None;
        for (i, &b) in bytes.iter().enumerate() {
            match self.nodes[node as usize].children.binary_search_by_key(&b, |c| c.0) {
                Ok(ci) => node = self.nodes[node as usize].children[ci].1,
                Err(_) => break,
            }
            if let Some(&id) = self.nodes[node as usize].tokens.iter().min() {
                best = Some((id, i + 1));
            }
        }
        best
    }
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<Vec<u8>>,
    eos: TokenId,
    merges: Vec<(TokenId, TokenId)>,
    merge_map: HashMap<(TokenId, TokenId), TokenId>,
    trie: ByteTrie,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LmError {
    TargetNotTokenizable { position: usize },
    Format(String),
}

impl fmt::Display for LmError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LmError::TargetNotTokenizable { position } => {
                write!(f, "target has no vocabulary token at byte {position}")
            }
            LmError::Format(msg) => write!(f, "vocabulary format error: {msg}"),
        }
    }
}

impl std::error::Error for LmError {}

impl Vocabulary {
    fn from_parts(tokens: Vec<Vec<u8>>, eos: TokenId, merges: Vec<(TokenId, TokenId)>) -> Self {
        let mut trie = ByteTrie::new();
        for (id, bytes) in tokens.iter().enumerate() {
            if !bytes.is_empty() {
                trie.insert(bytes, id as TokenId);
            }
        }
        let merge_map = merges
            .iter()
            .enumerate()
            .map(|(rank, &pair)| (pair, (BYTE_TOKENS + 1 + rank) as TokenId))
            .collect();
        Vocabulary { tokens, eos, merges, merge_map, trie }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn token_bytes(&self, id: TokenId) -> &[u8] {
        &self.tokens[id as usize]
    }

    pub fn trie(&self) -> &ByteTrie {
        &self.trie
    }

    /// Stable fingerprint of the token table, used in LM identifiers.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for t in &self.tokens {
            for &b in t {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
            h ^= 0xff;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }

    /// BPE encode: byte ids, then merges applied lowest-rank-first.
    /// Requires the standard layout (ids 0..=255 are the raw bytes), which
    /// `build_vocab` always produces; loaded tables without byte coverage
    /// support masking and scripted preferences but not encoding.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut ids: Vec<TokenId> = text.bytes().map(|b| b as TokenId).collect();
        loop {
            let mut best: Option<TokenId> = None;
            for w in ids.windows(2) {
                if let Some(&m) = self.merge_map.get(&(w[0], w[1])) {
                    if best.is_none_or(|b| m < b) {
                        best = Some(m);
                    }
                }
            }
            let Some(merged) = best else { break };
            let (l, r) = self.merges[(merged as usize) - BYTE_TOKENS - 1];
            let mut out = Vec::with_capacity(ids.len());
            let mut i = 0;
            while i < ids.len() {
                if i + 1 < ids.len() && ids[i] == l && ids[i + 1] == r {
                    out.push(merged);
                    i += 2;
                } else {
                    out.push(ids[i]);
                    i += 1;
                }
            }
            ids = out;
        }
        ids
    }

    pub fn decode_bytes(&self, ids: &[TokenId]) -> Vec<u8> {
        let mut out = Vec::new();
        for &id in ids {
            out.extend_from_slice(&self.tokens[id as usize]);
        }
        out
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        String::from_utf8_lossy(&self.decode_bytes(ids)).into_owned()
    }

    pub fn save(&self, path: &Path) -> Result<(), LmError> {
        let file = VocabFile {
            version: 1,
            eos: self.eos,
            tokens: self.tokens.iter().map(|t| TokenEntry::from_bytes(t)).collect(),
            merges: self.merges.clone(),
        };
        let json = serde_json::to_string_pretty(&file).map_err(|e| LmError::Format(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| LmError::Format(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, LmError> {
        let data = std::fs::read_to_string(path).map_err(|e| LmError::Format(e.to_string()))?;
        let file: VocabFile =
            serde_json::from_str(&data).map_err(|e| LmError::Format(e.to_string()))?;
        if file.version != 1 {
            return Err(LmError::Format(format!("unsupported version {}", file.version)));
        }
        let tokens: Vec<Vec<u8>> =
            file.tokens.iter().map(TokenEntry::to_bytes).collect::<Result<_, _>>()?;
        if file.eos as usize >= tokens.len() || !tokens[file.eos as usize].is_empty() {
            return Err(LmError::Format("eos id must map to an empty token".into()));
        }
        if tokens.iter().enumerate().any(|(id, t)| id != file.eos as usize && t.is_empty()) {
            return Err(LmError::Format("only the eos token may be empty".into()));
        }
        Ok(Vocabulary::from_parts(tokens, file.eos, file.merges))
    }
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    version: u32,
    eos: TokenId,
    tokens: Vec<TokenEntry>,
    merges: Vec<(TokenId, TokenId)>,
}

/// Printable tokens serialize as plain text, anything else as base64.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TokenEntry {
    Text { text: String },
    B64 { b64: String },
}

impl TokenEntry {
    fn from_bytes(bytes: &[u8]) -> Self {
        match std::str::from_utf8(bytes) {
            Ok(s) if s.chars().all(|c| c.is_ascii_graphic() || c == ' ') => {
                TokenEntry::Text { text: s.to_string() }
            }
            _ => {
                use base64::Engine as _;
                TokenEntry::B64 { b64: base64::engine::general_purpose::STANDARD.encode(bytes) }
            }
        }
    }

    fn to_bytes(&self) -> Result<Vec<u8>, LmError> {
        match self {
            TokenEntry::Text { text } => Ok(text.as_bytes().to_vec()),
            TokenEntry::B64 { b64 } => {
                use base64::Engine as _;
                base64::engine::general_purpose::STANDARD
                    .decode(b64)
                    .map_err(|e| LmError::Format(e.to_string()))
            }
        }
    }
}

/// Byte-level base vocabulary plus up to `merges` greedy pair merges.
/// Merging stops early once no adjacent pair occurs at least twice.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], merges: usize) -> Vocabulary {
    let mut tokens: Vec<Vec<u8>> = (0u16..256).map(|b| vec![b as u8]).collect();
    tokens.push(Vec::new()); // EOS
    let eos = BYTE_TOKENS as TokenId;

    let mut seqs: Vec<Vec<TokenId>> = corpus
        .iter()
        .map(|line| line.as_ref().bytes().map(|b| b as TokenId).collect())
        .collect();
    let mut merge_list: Vec<(TokenId, TokenId)> = Vec::new();

    for _ in 0..merges {
        let mut pair_counts: HashMap<(TokenId, TokenId), usize> = HashMap::new();
        for seq in &seqs {
            for w in seq.windows(2) {
                *pair_counts.entry((w[0], w[1])).or_insert(0) += 1;
            }
        }
        let best = pair_counts
            .iter()
            .filter(|&(_, &c)| c >= 2)
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)));
        let Some((&(l, r), _)) = best else { break };

        let new_id = tokens.len() as TokenId;
        let mut bytes = tokens[l as usize].clone();
        bytes.extend_from_slice(&tokens[r as usize]);
        tokens.push(bytes);
        merge_list.push((l, r));

        for seq in &mut seqs {
            let mut out = Vec::with_capacity(seq.len());
            let mut i = 0;
            while i < seq.len() {
                if i + 1 < seq.len() && seq[i] == l && seq[i + 1] == r {
                    out.push(new_id);
                    i += 2;
                } else {
                    out.push(seq[i]);
                    i += 1;
                }
            }
            *seq = out;
        }
    }

    Vocabulary::from_parts(tokens, eos, merge_list)
}

/// KMP prefix function of `pattern`.
fn prefix_function(pattern: &[u8]) -> Vec<usize> {
    let mut pi = vec![0usize; pattern.len()];
    for i in 1..pattern.len() {
        let mut k = pi[i - 1];
        while k > 0 && pattern[i] != pattern[k] {
            k = pi[k - 1];
        }
        if pattern[i] == pattern[k] {
            k += 1;
        }
        pi[i] = k;
    }
    pi
}

/// Length of the longest suffix of `text` that is a prefix of `pattern`.
fn suffix_prefix_len(pattern: &[u8], pi: &[usize], text: &[u8]) -> usize {
    if pattern.is_empty() {
        return 0;
    }
    let mut q = 0usize;
    for &b in text {
        while q > 0 && (q == pattern.len() || pattern[q] != b) {
            q = pi[q - 1];
        }
        if pattern[q] == b {
            q += 1;
        }
    }
    q
}

/// Deterministic model that walks a target text: 0.9 probability mass on
/// the next target token (longest vocabulary token matching the target at
/// the current position), 0.1 spread uniformly over the whole vocabulary.
/// Off-script contexts fall back to the uniform spread alone.
pub struct ScriptedLm {
    vocab: Vocabulary,
    target: Vec<u8>,
    prefix_fn: Vec<usize>,
    /// Per target byte position: the preferred next token.
    preferred: Vec<TokenId>,
    identifier: String,
}

pub fn scripted(vocab: Vocabulary, target: &str) -> Result<ScriptedLm, LmError> {
    let bytes = target.as_bytes().to_vec();
    let mut preferred = Vec::with_capacity(bytes.len());
    for p in 0..bytes.len() {
        match vocab.trie().longest_prefix(&bytes[p..]) {
            Some((id, _)) => preferred.push(id),
            None => return Err(LmError::TargetNotTokenizable { position: p }),
        }
    }
    // The identifier binds compiled partitions to the tokenization, not to
    // the target: scripted models over one vocabulary are one family whose
    // target stands in for query-conditioned behavior.
    let identifier = format!("scripted-{:016x}", vocab.fingerprint());
    let prefix_fn = prefix_function(&bytes);
    Ok(ScriptedLm { vocab, target: bytes, prefix_fn, preferred, identifier })
}

impl ScriptedLm {
    pub fn target(&self) -> &[u8] {
        &self.target
    }
}

impl fmt::Debug for ScriptedLm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScriptedLm")
            .field("identifier", &self.identifier)
            .field("target_len", &self.target.len())
            .finish()
    }
}

impl LanguageModel for ScriptedLm {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn identifier(&self) -> &str {
        &self.identifier
    }

    fn next_dist(&self, state: &DecodeState, new_tokens: &[TokenId]) -> (Vec<f64>, DecodeState) {
        let next = state.extended(new_tokens);
        let ctx = self.vocab.decode_bytes(next.ids());
        let pos = suffix_prefix_len(&self.target, &self.prefix_fn, &ctx);
        let v = self.vocab.len();
        let mut dist = vec![0.1 / v as f64; v];
        let preferred =
            if pos == self.target.len() { self.vocab.eos() } else { self.preferred[pos] };
        dist[preferred as usize] += 0.9;
        (dist, next)
    }
}

/// Order-`n` model with add-one smoothing, trained on a corpus. Each line is
/// padded with EOS on both sides so empty-prompt decoding conditions on
/// line-start statistics.
pub struct NgramLm {
    vocab: Vocabulary,
    n: usize,
    counts: HashMap<Vec<TokenId>, HashMap<TokenId, u32>>,
    totals: HashMap<Vec<TokenId>, u32>,
    identifier: String,
}

pub fn ngram<S: AsRef<str>>(vocab: Vocabulary, corpus: &[S], n: usize) -> NgramLm {
    assert!(n >= 1, "ngram order must be at least 1");
    let mut counts: HashMap<Vec<TokenId>, HashMap<TokenId, u32>> = HashMap::new();
    let mut totals: HashMap<Vec<TokenId>, u32> = HashMap::new();
    let mut corpus_hash: u64 = 0xcbf29ce484222325;
    for line in corpus {
        corpus_hash ^= crate::lexer::fnv1a64(line.as_ref().as_bytes());
        corpus_hash = corpus_hash.wrapping_mul(0x100000001b3);
        let mut ids = vec![vocab.eos(); n.saturating_sub(1)];
        ids.extend(vocab.encode(line.as_ref()));
        ids.push(vocab.eos());
        for i in 0..ids.len().saturating_sub(n - 1) {
            let ctx = ids[i..i + n - 1].to_vec();
            let nxt = ids[i + n - 1];
            *counts.entry(ctx.clone()).or_default().entry(nxt).or_insert(0) += 1;
            *totals.entry(ctx).or_insert(0) += 1;
        }
    }
    let identifier = format!("ngram{}-{:016x}-{:016x}", n, corpus_hash, vocab.fingerprint());
    NgramLm { vocab, n, counts, totals, identifier }
}

impl fmt::Debug for NgramLm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NgramLm")
            .field("identifier", &self.identifier)
            .field("n", &self.n)
            .field("contexts", &self.counts.len())
            .finish()
    }
}

impl NgramLm {
    /// Smoothed conditional probability, exposed for count-oracle tests.
    pub fn prob(&self, context: &[TokenId], next: TokenId) -> f64 {
        let v = self.vocab.len() as f64;
        let mut ctx = vec![self.vocab.eos(); (self.n - 1).saturating_sub(context.len())];
        let start = context.len().saturating_sub(self.n - 1);
        ctx.extend_from_slice(&context[start..]);
        let count = self
            .counts
            .get(&ctx)
            .and_then(|m| m.get(&next))
            .copied()
            .unwrap_or(0) as f64;
        let total = self.totals.get(&ctx).copied().unwrap_or(0) as f64;
        (count + 1.0) / (total + v)
    }
}

impl LanguageModel for NgramLm {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn identifier(&self) -> &str {
        &self.identifier
    }

    fn next_dist(&self, state: &DecodeState, new_tokens: &[TokenId]) -> (Vec<f64>, DecodeState) {
        let next = state.extended(new_tokens);
        let dist: Vec<f64> =
            (0..self.vocab.len() as TokenId).map(|t| self.prob(next.ids(), t)).collect();
        (dist, next)
    }
}
