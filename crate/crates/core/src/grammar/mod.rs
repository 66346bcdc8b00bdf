//! Template guides: compiled recognizers consulted at every decode step.
//!
//! A guide is a byte-level DFA over a template's language. The fixed form
//! accepts exactly the source surface (slots aside); the flexible form admits
//! the keyword-case and whitespace variants LLMs actually emit. Guides are
//! immutable after compilation and shareable across threads; stepping returns
//! a new state value.

mod dfa;
mod pattern;

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

pub use dfa::Region;
pub use pattern::{Ast, ByteSet, PatternError};

use crate::lexer::{tokenize, LiteralKind, SqlTemplate, SqlToken, TokenKind};
use crate::lm::{TokenId, Vocabulary};
use dfa::{determinize, Dfa, Nfa, DEAD};

/// Algorithm patterns for literal slots. The number rule has no exponent
/// part and no leading zeros; the string rule treats '' as an escaped quote.
pub const NUM_PATTERN: &str = "-?([0-9]|[1-9][0-9]+)(\\.[0-9]+)?";
pub const STR_PATTERN: &str = "'([^']|'')*'";
/// Alternate string rule without the '' escape; stops at the first quote.
pub const STR_STRICT_PATTERN: &str = "'[^']*'";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GuideKind {
    Fixed,
    Flexible,
    /// Literal-slot guide built by the partitioned decoder.
    Slot,
}

/// Compilation recipe: guide kind plus the character-level rule for each
/// slot kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GuideSpec {
    pub kind: GuideKind,
    pub num_rule: String,
    pub str_rule: String,
}

impl GuideSpec {
    pub fn fixed() -> Self {
        GuideSpec { kind: GuideKind::Fixed, num_rule: NUM_PATTERN.into(), str_rule: STR_PATTERN.into() }
    }

    pub fn flexible() -> Self {
        GuideSpec {
            kind: GuideKind::Flexible,
            num_rule: NUM_PATTERN.into(),
            str_rule: STR_PATTERN.into(),
        }
    }

    /// Swap the string rule for the strict no-escape variant.
    pub fn with_strict_strings(mut self) -> Self {
        self.str_rule = STR_STRICT_PATTERN.into();
        self
    }

    pub fn rule_for(&self, kind: LiteralKind) -> &str {
        match kind {
            LiteralKind::Num => &self.num_rule,
            LiteralKind::Str => &self.str_rule,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GuideError {
    EmptyTemplate,
    BadPattern { pattern: String, reason: String },
    BadTemplate(String),
    DeadState { offset: usize },
    Format(String),
}

impl fmt::Display for GuideError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GuideError::EmptyTemplate => write!(f, "template has no content to compile"),
            GuideError::BadPattern { pattern, reason } => {
                write!(f, "bad literal rule {pattern:?}: {reason}")
            }
            GuideError::BadTemplate(msg) => write!(f, "template does not tokenize: {msg}"),
            GuideError::DeadState { offset } => {
                write!(f, "input leaves the automaton at byte {offset}")
            }
            GuideError::Format(msg) => write!(f, "guide file format error: {msg}"),
        }
    }
}

impl std::error::Error for GuideError {}

/// Opaque automaton state handle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GuideState(u32);

impl GuideState {
    pub fn raw(&self) -> u32 {
        self.0
    }
}

/// Per-state set of vocabulary tokens that keep the automaton live, plus
/// EOS whenever the state is accepting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenMask {
    bits: Vec<u64>,
    len: usize,
}

impl TokenMask {
    pub fn new(len: usize) -> Self {
        TokenMask { bits: vec![0; len.div_ceil(64)], len }
    }

    pub fn set(&mut self, id: TokenId) {
        self.bits[(id / 64) as usize] |= 1u64 << (id % 64);
    }

    pub fn contains(&self, id: TokenId) -> bool {
        (id as usize) < self.len && self.bits[(id / 64) as usize] & (1u64 << (id % 64)) != 0
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&w| w == 0)
    }

    pub fn iter_ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        (0..self.len as TokenId).filter(move |&id| self.contains(id))
    }
}

pub struct Guide {
    kind: GuideKind,
    dfa: Dfa,
}

impl fmt::Debug for Guide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Guide")
            .field("kind", &self.kind)
            .field("states", &self.dfa.num_states())
            .field("classes", &self.dfa.num_classes)
            .finish()
    }
}

impl Guide {
    pub fn kind(&self) -> GuideKind {
        self.kind
    }

    pub fn start(&self) -> GuideState {
        GuideState(self.dfa.start)
    }

    pub fn num_states(&self) -> usize {
        self.dfa.num_states()
    }

    pub fn is_accepting(&self, state: GuideState) -> bool {
        self.dfa.accepting[state.0 as usize]
    }

    /// Whether any byte leads out of this state (live extension exists).
    pub fn can_extend(&self, state: GuideState) -> bool {
        self.dfa.row(state.0).iter().any(|&t| t != DEAD)
    }

    /// Minimum bytes from `state` to an accepting state (0 when accepting).
    pub fn distance_to_accept(&self, state: GuideState) -> u32 {
        self.dfa.distances[state.0 as usize]
    }

    pub fn region(&self, state: GuideState) -> Region {
        self.dfa.regions[state.0 as usize]
    }

    /// Consume `bytes` from `state`; every kept automaton state can still
    /// reach acceptance, so staying live is exactly "still viable".
    pub fn advance(&self, state: GuideState, bytes: &[u8]) -> Result<GuideState, GuideError> {
        let mut s = state.0;
        for (i, &b) in bytes.iter().enumerate() {
            s = self.dfa.step(s, b);
            if s == DEAD {
                return Err(GuideError::DeadState { offset: i });
            }
        }
        Ok(GuideState(s))
    }

    pub fn accepts(&self, text: &str) -> bool {
        match self.advance(self.start(), text.as_bytes()) {
            Ok(s) => self.is_accepting(s),
            Err(_) => false,
        }
    }

    /// Walk the vocabulary trie against the automaton: a token is allowed
    /// iff all of its bytes stay within live states. EOS is allowed iff the
    /// state is accepting.
    pub fn allowed_tokens(&self, state: GuideState, vocab: &Vocabulary) -> TokenMask {
        let mut mask = TokenMask::new(vocab.len());
        let trie = vocab.trie();
        let mut stack: Vec<(u32, u32)> = vec![(0, state.0)];
        while let Some((node_idx, dstate)) = stack.pop() {
            let node = trie.node(node_idx);
            for &id in &node.tokens {
                mask.set(id);
            }
            for &(byte, child) in &node.children {
                let next = self.dfa.step(dstate, byte);
                if next != DEAD {
                    stack.push((child, next));
                }
            }
        }
        if self.is_accepting(state) {
            mask.set(vocab.eos());
        }
        mask
    }

    pub fn save_to<W: Write>(&self, w: &mut W) -> Result<(), GuideError> {
        let io = |e: std::io::Error| GuideError::Format(e.to_string());
        w.write_all(b"TCDG").map_err(io)?;
        w.write_all(&1u16.to_le_bytes()).map_err(io)?;
        let kind = match self.kind {
            GuideKind::Fixed => 0u8,
            GuideKind::Flexible => 1,
            GuideKind::Slot => 2,
        };
        w.write_all(&[kind]).map_err(io)?;
        w.write_all(&self.dfa.num_classes.to_le_bytes()).map_err(io)?;
        for b in 0..256 {
            w.write_all(&self.dfa.byte_class[b].to_le_bytes()).map_err(io)?;
        }
        w.write_all(&self.dfa.start.to_le_bytes()).map_err(io)?;
        let n = self.dfa.num_states() as u32;
        w.write_all(&n.to_le_bytes()).map_err(io)?;
        let mut acc_bits = vec![0u8; (n as usize).div_ceil(8)];
        for (i, &a) in self.dfa.accepting.iter().enumerate() {
            if a {
                acc_bits[i / 8] |= 1 << (i % 8);
            }
        }
        w.write_all(&acc_bits).map_err(io)?;
        for r in &self.dfa.regions {
            let (tag, idx) = match r {
                Region::Segment(i) => (0u8, *i),
                Region::Slot(i) => (1, *i),
                Region::Mixed => (2, 0),
            };
            w.write_all(&[tag]).map_err(io)?;
            w.write_all(&idx.to_le_bytes()).map_err(io)?;
        }
        for &t in &self.dfa.table {
            w.write_all(&t.to_le_bytes()).map_err(io)?;
        }
        Ok(())
    }

    pub fn load_from<R: Read>(r: &mut R) -> Result<Guide, GuideError> {
        let io = |e: std::io::Error| GuideError::Format(e.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != b"TCDG" {
            return Err(GuideError::Format("bad magic".into()));
        }
        let mut u16buf = [0u8; 2];
        r.read_exact(&mut u16buf).map_err(io)?;
        let version = u16::from_le_bytes(u16buf);
        if version != 1 {
            return Err(GuideError::Format(format!("unsupported version {version}")));
        }
        let mut byte = [0u8; 1];
        r.read_exact(&mut byte).map_err(io)?;
        let kind = match byte[0] {
            0 => GuideKind::Fixed,
            1 => GuideKind::Flexible,
            2 => GuideKind::Slot,
            other => return Err(GuideError::Format(format!("bad kind {other}"))),
        };
        r.read_exact(&mut u16buf).map_err(io)?;
        let num_classes = u16::from_le_bytes(u16buf);
        if num_classes == 0 {
            return Err(GuideError::Format("zero classes".into()));
        }
        let mut byte_class = Box::new([0u16; 256]);
        for b in 0..256 {
            r.read_exact(&mut u16buf).map_err(io)?;
            let c = u16::from_le_bytes(u16buf);
            if c >= num_classes {
                return Err(GuideError::Format("byte class out of range".into()));
            }
            byte_class[b] = c;
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf).map_err(io)?;
        let start = u32::from_le_bytes(u32buf);
        r.read_exact(&mut u32buf).map_err(io)?;
        let n = u32::from_le_bytes(u32buf);
        if start >= n {
            return Err(GuideError::Format("start state out of range".into()));
        }
        let mut acc_bits = vec![0u8; (n as usize).div_ceil(8)];
        r.read_exact(&mut acc_bits).map_err(io)?;
        let accepting: Vec<bool> =
            (0..n as usize).map(|i| acc_bits[i / 8] & (1 << (i % 8)) != 0).collect();
        let mut regions = Vec::with_capacity(n as usize);
        for _ in 0..n {
            r.read_exact(&mut byte).map_err(io)?;
            let tag = byte[0];
            r.read_exact(&mut u16buf).map_err(io)?;
            let idx = u16::from_le_bytes(u16buf);
            regions.push(match tag {
                0 => Region::Segment(idx),
                1 => Region::Slot(idx),
                2 => Region::Mixed,
                other => return Err(GuideError::Format(format!("bad region tag {other}"))),
            });
        }
        let mut table = vec![0u32; n as usize * num_classes as usize];
        for t in table.iter_mut() {
            r.read_exact(&mut u32buf).map_err(io)?;
            let v = u32::from_le_bytes(u32buf);
            if v != DEAD && v >= n {
                return Err(GuideError::Format("transition out of range".into()));
            }
            *t = v;
        }
        // Distances are derived, not stored.
        let distances = dfa::accept_distances(&table, &accepting, num_classes);
        if distances[start as usize] == u32::MAX {
            return Err(GuideError::Format("start state cannot reach acceptance".into()));
        }
        Ok(Guide {
            kind,
            dfa: Dfa { byte_class, num_classes, start, table, accepting, regions, distances },
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), GuideError> {
        let mut buf = Vec::new();
        self.save_to(&mut buf)?;
        std::fs::write(path, buf).map_err(|e| GuideError::Format(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Guide, GuideError> {
        let data = std::fs::read(path).map_err(|e| GuideError::Format(e.to_string()))?;
        Guide::load_from(&mut data.as_slice())
    }
}

fn rule_ast(kind: LiteralKind, spec: &GuideSpec) -> Result<Ast, GuideError> {
    pattern::parse(spec.rule_for(kind)).map_err(|e| GuideError::BadPattern {
        pattern: e.pattern,
        reason: e.reason,
    })
}

fn check_nonempty(template: &SqlTemplate) -> Result<(), GuideError> {
    if template.slots.is_empty() && template.segments.concat().trim().is_empty() {
        return Err(GuideError::EmptyTemplate);
    }
    Ok(())
}

/// Guide accepting exactly the source surface with each slot replaced by
/// its literal rule; static text must match byte-for-byte.
pub fn compile_fixed(template: &SqlTemplate, spec: &GuideSpec) -> Result<Guide, GuideError> {
    check_nonempty(template)?;
    let mut pieces: Vec<(Ast, Region)> = Vec::new();
    for (i, seg) in template.segments.iter().enumerate() {
        if !seg.is_empty() {
            pieces.push((Ast::literal(seg), Region::Segment(i as u16)));
        }
        if i < template.slots.len() {
            pieces.push((rule_ast(template.slots[i], spec)?, Region::Slot(i as u16)));
        }
    }
    let dfa = determinize(&Nfa::concat_pieces(&pieces)).ok_or(GuideError::EmptyTemplate)?;
    Ok(Guide { kind: GuideKind::Fixed, dfa })
}

fn ws_class() -> ByteSet {
    let mut ws = ByteSet::empty();
    for b in *b" \t\n\r" {
        ws.insert(b);
    }
    ws
}

fn ws_plus() -> Ast {
    Ast::Plus(Box::new(Ast::Class(ws_class())))
}

fn keyword_alternatives(word: &str) -> Ast {
    let lower = word.to_lowercase();
    let upper = word.to_uppercase();
    let mut title = String::new();
    for (i, c) in lower.chars().enumerate() {
        if i == 0 {
            title.extend(c.to_uppercase());
        } else {
            title.push(c);
        }
    }
    let mut forms = vec![lower, upper, title];
    forms.dedup();
    if forms.len() == 1 {
        Ast::literal(&forms[0])
    } else {
        Ast::Alt(forms.iter().map(|f| Ast::literal(f)).collect())
    }
}

fn flexible_token_ast(token: &SqlToken) -> Ast {
    match token.kind {
        TokenKind::Keyword => keyword_alternatives(&token.text),
        TokenKind::Whitespace => ws_plus(),
        _ => Ast::literal(&token.text),
    }
}

/// Guide accepting every variant where keywords appear in lower/UPPER/Title
/// case, inter-token whitespace is any nonempty [ \t\n\r] mix, leading
/// whitespace and a trailing ';' are optional, and identifiers, operators,
/// punctuation, and quoted identifiers stay byte-exact.
pub fn compile_flexible(template: &SqlTemplate, spec: &GuideSpec) -> Result<Guide, GuideError> {
    check_nonempty(template)?;
    let last = template.segments.len() - 1;
    let mut pieces: Vec<(Ast, Region)> = Vec::new();
    pieces.push((Ast::Opt(Box::new(ws_plus())), Region::Segment(0)));
    for (i, seg) in template.segments.iter().enumerate() {
        let mut toks = tokenize(seg).map_err(|e| GuideError::BadTemplate(e.to_string()))?;
        if i == 0 {
            while toks.first().is_some_and(|t| t.kind == TokenKind::Whitespace) {
                toks.remove(0);
            }
        }
        if i == last {
            while toks.last().is_some_and(|t| t.kind == TokenKind::Whitespace) {
                toks.pop();
            }
            if toks.last().is_some_and(|t| t.text == ";") {
                toks.pop();
                while toks.last().is_some_and(|t| t.kind == TokenKind::Whitespace) {
                    toks.pop();
                }
            }
        }
        for t in &toks {
            pieces.push((flexible_token_ast(t), Region::Segment(i as u16)));
        }
        if i < template.slots.len() {
            pieces.push((rule_ast(template.slots[i], spec)?, Region::Slot(i as u16)));
        }
    }
    // Optional tail: whitespace, ';', more whitespace — all optional.
    let tail = Ast::Concat(vec![
        Ast::Opt(Box::new(ws_plus())),
        Ast::Opt(Box::new(Ast::Concat(vec![Ast::Bytes(vec![b';']), Ast::Opt(Box::new(ws_plus()))]))),
    ]);
    pieces.push((tail, Region::Segment(last as u16)));
    let dfa = determinize(&Nfa::concat_pieces(&pieces)).ok_or(GuideError::EmptyTemplate)?;
    Ok(Guide { kind: GuideKind::Flexible, dfa })
}

/// Slot guide for partitioned decoding: fixed prefix bytes, the literal
/// rule, fixed suffix bytes. Accepting means the whole sandwich is consumed.
pub fn compile_slot(
    prefix: &[u8],
    kind: LiteralKind,
    suffix: &[u8],
    spec: &GuideSpec,
) -> Result<Guide, GuideError> {
    let mut pieces: Vec<(Ast, Region)> = Vec::new();
    if !prefix.is_empty() {
        pieces.push((Ast::Bytes(prefix.to_vec()), Region::Segment(0)));
    }
    pieces.push((rule_ast(kind, spec)?, Region::Slot(0)));
    if !suffix.is_empty() {
        pieces.push((Ast::Bytes(suffix.to_vec()), Region::Segment(1)));
    }
    let dfa = determinize(&Nfa::concat_pieces(&pieces)).ok_or(GuideError::EmptyTemplate)?;
    Ok(Guide { kind: GuideKind::Slot, dfa })
}

/// Brute-force mask oracle: try every vocabulary token by direct advance.
/// Test-facing counterpart of `allowed_tokens`.
pub fn brute_force_mask(guide: &Guide, state: GuideState, vocab: &Vocabulary) -> TokenMask {
    let mut mask = TokenMask::new(vocab.len());
    for id in 0..vocab.len() as TokenId {
        if id == vocab.eos() {
            if guide.is_accepting(state) {
                mask.set(id);
            }
            continue;
        }
        let bytes = vocab.token_bytes(id);
        if bytes.is_empty() {
            continue;
        }
        if guide.advance(state, bytes).is_ok() {
            mask.set(id);
        }
    }
    mask
}

/// Shared per-session cache: masks keyed by raw state id.
#[derive(Default)]
pub struct MaskCache {
    map: HashMap<u32, TokenMask>,
}

impl MaskCache {
    pub fn new() -> Self {
        MaskCache { map: HashMap::new() }
    }

    pub fn get_or_compute(&mut self, guide: &Guide, state: GuideState, vocab: &Vocabulary) -> &TokenMask {
        self.map.entry(state.raw()).or_insert_with(|| guide.allowed_tokens(state, vocab))
    }
}
