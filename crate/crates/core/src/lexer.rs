//! SQL tokenizer, literal extraction, and templatization.
//!
//! The lexer targets a SQLite-flavored lexical grammar (single-quote strings
//! with `''` escapes, backtick and double-quote identifiers) since that is
//! the dialect of the workloads this library is built for. Tokenization is
//! lossless: concatenating token texts in order reproduces the input
//! byte-for-byte, which is what makes `fill(templatize(s)) == s` hold.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Reserved words, uppercase. Function names (AVG, STRFTIME, ...) are listed
/// too: they participate in keyword-case alternation in flexible guides.
pub const KEYWORDS: &[&str] = &[
    "SELECT", "FROM", "WHERE", "GROUP", "BY", "HAVING", "ORDER", "LIMIT", "OFFSET", "DISTINCT",
    "ALL", "AS", "ON", "USING", "JOIN", "INNER", "LEFT", "RIGHT", "FULL", "OUTER", "CROSS",
    "NATURAL", "AND", "OR", "NOT", "IN", "IS", "NULL", "BETWEEN", "LIKE", "GLOB", "EXISTS",
    "CASE", "WHEN", "THEN", "ELSE", "END", "CAST", "UNION", "INTERSECT", "EXCEPT", "ASC", "DESC",
    "WITH", "RECURSIVE", "INSERT", "INTO", "VALUES", "UPDATE", "SET", "DELETE", "CREATE", "TABLE",
    "VIEW", "INDEX", "DROP", "COLLATE", "AVG", "COUNT", "SUM", "MIN", "MAX", "TOTAL", "ABS",
    "ROUND", "LENGTH", "UPPER", "LOWER", "SUBSTR", "INSTR", "REPLACE", "TRIM", "STRFTIME", "DATE",
    "TIME", "DATETIME", "JULIANDAY", "COALESCE", "IFNULL", "REAL", "INTEGER", "TEXT",
];

/// Function-style keywords: no space before a following `(` when rendering
/// the normalized template form.
const FUNC_KEYWORDS: &[&str] = &[
    "AVG", "COUNT", "SUM", "MIN", "MAX", "TOTAL", "ABS", "ROUND", "LENGTH", "UPPER", "LOWER",
    "SUBSTR", "INSTR", "REPLACE", "TRIM", "STRFTIME", "DATE", "TIME", "DATETIME", "JULIANDAY",
    "COALESCE", "IFNULL", "CAST",
];

pub fn is_keyword(word: &str) -> bool {
    KEYWORDS.iter().any(|k| k.eq_ignore_ascii_case(word))
}

fn is_func_keyword(word: &str) -> bool {
    FUNC_KEYWORDS.iter().any(|k| k.eq_ignore_ascii_case(word))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenKind {
    Keyword,
    Identifier,
    QuotedIdentifier,
    StringLiteral,
    NumberLiteral,
    Operator,
    Punctuation,
    Whitespace,
}

/// Byte offsets `[start, end)` into the source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SqlToken {
    pub kind: TokenKind,
    pub text: String,
    pub span: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LiteralKind {
    Str,
    Num,
}

impl LiteralKind {
    pub fn placeholder(&self) -> &'static str {
        match self {
            LiteralKind::Str => "[string]",
            LiteralKind::Num => "[number]",
        }
    }
}

impl fmt::Display for LiteralKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LiteralKind::Str => write!(f, "str"),
            LiteralKind::Num => write!(f, "num"),
        }
    }
}

/// A literal occurrence in source order. `text` is the exact source form:
/// string literals keep their surrounding single quotes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Literal {
    pub kind: LiteralKind,
    pub text: String,
    pub slot_index: usize,
}

impl Literal {
    /// Literal value for prose matching: strips the surrounding quotes and
    /// undoes the `''` escape for strings; numbers pass through.
    pub fn unquoted(&self) -> String {
        match self.kind {
            LiteralKind::Num => self.text.clone(),
            LiteralKind::Str => {
                let inner = &self.text[1..self.text.len() - 1];
                inner.replace("''", "'")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LexError {
    /// Unterminated quoted construct (string literal or quoted identifier).
    UnterminatedString { offset: usize },
    InvalidNumber { offset: usize, text: String },
    NonUtf8Input,
}

impl fmt::Display for LexError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LexError::UnterminatedString { offset } => {
                write!(f, "unterminated quoted literal starting at byte {offset}")
            }
            LexError::InvalidNumber { offset, text } => {
                write!(f, "invalid number {text:?} at byte {offset}")
            }
            LexError::NonUtf8Input => write!(f, "input is not valid UTF-8"),
        }
    }
}

impl std::error::Error for LexError {}

/// Tokenize raw bytes, checking UTF-8 first.
pub fn tokenize_bytes(sql: &[u8]) -> Result<Vec<SqlToken>, LexError> {
    let text = std::str::from_utf8(sql).map_err(|_| LexError::NonUtf8Input)?;
    tokenize(text)
}

/// Lossless tokenization per the SQLite-flavored rules.
pub fn tokenize(sql: &str) -> Result<Vec<SqlToken>, LexError> {
    let bytes = sql.as_bytes();
    let mut tokens: Vec<SqlToken> = Vec::new();
    let mut i = 0;

    let push = |tokens: &mut Vec<SqlToken>, kind: TokenKind, start: usize, end: usize| {
        tokens.push(SqlToken {
            kind,
            text: sql[start..end].to_string(),
            span: Span::new(start, end),
        });
    };

    while i < bytes.len() {
        let b = bytes[i];
        let start = i;
        match b {
            b' ' | b'\t' | b'\n' | b'\r' => {
                while i < bytes.len() && matches!(bytes[i], b' ' | b'\t' | b'\n' | b'\r') {
                    i += 1;
                }
                push(&mut tokens, TokenKind::Whitespace, start, i);
            }
            b'\'' => {
                i = scan_quoted(bytes, i, b'\'')?;
                push(&mut tokens, TokenKind::StringLiteral, start, i);
            }
            b'`' => {
                i = scan_quoted(bytes, i, b'`')?;
                push(&mut tokens, TokenKind::QuotedIdentifier, start, i);
            }
            b'"' => {
                i = scan_quoted(bytes, i, b'"')?;
                push(&mut tokens, TokenKind::QuotedIdentifier, start, i);
            }
            b'0'..=b'9' => {
                i = scan_number(bytes, i)?;
                push(&mut tokens, TokenKind::NumberLiteral, start, i);
            }
            b'-' if i + 1 < bytes.len()
                && bytes[i + 1].is_ascii_digit()
                && minus_binds_to_number(&tokens) =>
            {
                i = scan_number(bytes, i + 1)?;
                push(&mut tokens, TokenKind::NumberLiteral, start, i);
            }
            b'(' | b')' | b',' | b';' | b'.' => {
                i += 1;
                push(&mut tokens, TokenKind::Punctuation, start, i);
            }
            b'<' | b'>' | b'!' | b'=' | b'|' => {
                i += 1;
                if i < bytes.len() {
                    let two = &bytes[start..i + 1];
                    if matches!(two, b"<=" | b">=" | b"<>" | b"!=" | b"==" | b"||" | b"<<" | b">>")
                    {
                        i += 1;
                    }
                }
                push(&mut tokens, TokenKind::Operator, start, i);
            }
            b'+' | b'-' | b'*' | b'/' | b'%' | b'&' | b'~' => {
                i += 1;
                push(&mut tokens, TokenKind::Operator, start, i);
            }
            _ if is_word_start(b) => {
                while i < bytes.len() && is_word_continue(bytes[i]) {
                    i += 1;
                }
                let word = &sql[start..i];
                // A word right after '.' is a column name even if it collides
                // with a keyword (e.g. T3.date).
                let after_dot = tokens
                    .iter()
                    .rev()
                    .find(|t| t.kind != TokenKind::Whitespace)
                    .map(|t| t.text == ".")
                    .unwrap_or(false);
                let kind = if !after_dot && is_keyword(word) {
                    TokenKind::Keyword
                } else {
                    TokenKind::Identifier
                };
                push(&mut tokens, kind, start, i);
            }
            _ => {
                // Unknown single byte (e.g. '?', ':'): keep as punctuation to
                // stay lossless.
                i += 1;
                while !sql.is_char_boundary(i) {
                    i += 1;
                }
                push(&mut tokens, TokenKind::Punctuation, start, i);
            }
        }
    }
    Ok(tokens)
}

fn is_word_start(b: u8) -> bool {
    b.is_ascii_alphabetic() || b == b'_' || b >= 0x80
}

fn is_word_continue(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b == b'$' || b >= 0x80
}

/// A leading '-' folds into the number only when what precedes is an
/// operator, '(' or ',' or a keyword (or nothing): "a - 1" keeps the
/// operator, "= -1" folds.
fn minus_binds_to_number(tokens: &[SqlToken]) -> bool {
    match tokens.iter().rev().find(|t| t.kind != TokenKind::Whitespace) {
        None => true,
        Some(t) => match t.kind {
            TokenKind::Operator | TokenKind::Keyword => true,
            TokenKind::Punctuation => t.text == "(" || t.text == ",",
            _ => false,
        },
    }
}

fn scan_quoted(bytes: &[u8], start: usize, quote: u8) -> Result<usize, LexError> {
    let mut i = start + 1;
    while i < bytes.len() {
        if bytes[i] == quote {
            if i + 1 < bytes.len() && bytes[i + 1] == quote {
                i += 2; // doubled quote escape
            } else {
                return Ok(i + 1);
            }
        } else {
            i += 1;
        }
    }
    Err(LexError::UnterminatedString { offset: start })
}

fn scan_number(bytes: &[u8], start: usize) -> Result<usize, LexError> {
    let mut i = start;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    if i < bytes.len() && bytes[i] == b'.' && i + 1 < bytes.len() && bytes[i + 1].is_ascii_digit() {
        i += 1;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
    }
    // "1.2.3" is malformed rather than a number followed by ".3".
    if i < bytes.len() && bytes[i] == b'.' && i + 1 < bytes.len() && bytes[i + 1].is_ascii_digit() {
        let mut j = i + 1;
        while j < bytes.len() && (bytes[j].is_ascii_digit() || bytes[j] == b'.') {
            j += 1;
        }
        return Err(LexError::InvalidNumber {
            offset: start,
            text: String::from_utf8_lossy(&bytes[start..j]).into_owned(),
        });
    }
    Ok(i)
}

/// Reassemble the exact source from a token stream.
pub fn detokenize(tokens: &[SqlToken]) -> String {
    tokens.iter().map(|t| t.text.as_str()).collect()
}

/// String/number literals in source order, with slot indices 0..n-1.
/// Quoted identifiers are never extracted.
pub fn extract_literals(tokens: &[SqlToken]) -> Vec<Literal> {
    tokens
        .iter()
        .filter_map(|t| match t.kind {
            TokenKind::StringLiteral => Some((LiteralKind::Str, t.text.clone())),
            TokenKind::NumberLiteral => Some((LiteralKind::Num, t.text.clone())),
            _ => None,
        })
        .enumerate()
        .map(|(slot_index, (kind, text))| Literal { kind, text, slot_index })
        .collect()
}

/// A parameterized SQL: static text segments interleaved with typed literal
/// slots. `segments.len() == slots.len() + 1` always; interleaving segments
/// with the original literal texts reproduces `source_sql` byte-for-byte.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SqlTemplate {
    pub template_id: String,
    pub segments: Vec<String>,
    pub slots: Vec<LiteralKind>,
    pub source_sql: String,
}

impl SqlTemplate {
    /// Canonical display/grouping form: keywords and bare identifiers
    /// lowercased, literals as placeholders, single canonical spacing
    /// (tight dots, call-style parens, operator spaces). Formatting
    /// variants of the same parametric query share this key.
    pub fn normalized_key(&self) -> String {
        // Tokenizing each segment is safe: literals are whole tokens, so
        // segment boundaries never split a token.
        let mut rendered: Vec<(TokenKind, String)> = Vec::new();
        for (idx, seg) in self.segments.iter().enumerate() {
            let toks = tokenize(seg).expect("template segments re-tokenize");
            for t in toks {
                match t.kind {
                    TokenKind::Whitespace => {}
                    TokenKind::Keyword | TokenKind::Identifier => {
                        rendered.push((t.kind, t.text.to_lowercase()));
                    }
                    _ => rendered.push((t.kind, t.text.clone())),
                }
            }
            if idx < self.slots.len() {
                // Placeholders render like identifiers for spacing purposes.
                rendered.push((
                    TokenKind::Identifier,
                    self.slots[idx].placeholder().to_string(),
                ));
            }
        }

        let mut out = String::new();
        for i in 0..rendered.len() {
            if i > 0 && needs_space(&rendered[i - 1], &rendered[i]) {
                out.push(' ');
            }
            out.push_str(&rendered[i].1);
        }
        out
    }
}

fn needs_space(prev: &(TokenKind, String), next: &(TokenKind, String)) -> bool {
    let (pk, pt) = (&prev.0, prev.1.as_str());
    let (nk, nt) = (&next.0, next.1.as_str());
    if pt == "." || nt == "." {
        return false;
    }
    if pt == "(" {
        return false;
    }
    if matches!(nt, ")" | "," | ";") {
        return false;
    }
    if nt == "(" {
        // Call style after identifiers and function keywords: sum(x),
        // strftime(...); clause keywords keep the space: WHERE (a = 1).
        let callable = matches!(pk, TokenKind::Identifier | TokenKind::QuotedIdentifier)
            || (*pk == TokenKind::Keyword && is_func_keyword(pt));
        return !callable;
    }
    let _ = nk;
    true
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FillError {
    ArityMismatch { expected: usize, got: usize },
    KindMismatch { slot: usize, expected: LiteralKind, got: LiteralKind },
}

impl fmt::Display for FillError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FillError::ArityMismatch { expected, got } => {
                write!(f, "template has {expected} slots, got {got} literals")
            }
            FillError::KindMismatch { slot, expected, got } => {
                write!(f, "slot {slot} expects {expected}, got {got}")
            }
        }
    }
}

impl std::error::Error for FillError {}

/// Convert an SQL into its parameterized template plus extracted literals.
pub fn templatize(sql: &str) -> Result<(SqlTemplate, Vec<Literal>), LexError> {
    let tokens = tokenize(sql)?;
    let literals = extract_literals(&tokens);
    let mut segments = Vec::with_capacity(literals.len() + 1);
    let mut slots = Vec::with_capacity(literals.len());
    let mut current = String::new();
    for t in &tokens {
        match t.kind {
            TokenKind::StringLiteral => {
                segments.push(std::mem::take(&mut current));
                slots.push(LiteralKind::Str);
            }
            TokenKind::NumberLiteral => {
                segments.push(std::mem::take(&mut current));
                slots.push(LiteralKind::Num);
            }
            _ => current.push_str(&t.text),
        }
    }
    segments.push(current);

    let mut template = SqlTemplate {
        template_id: String::new(),
        segments,
        slots,
        source_sql: sql.to_string(),
    };
    template.template_id = format!("t{:016x}", fnv1a64(template.normalized_key().as_bytes()));
    Ok((template, literals))
}

/// Interleave segments and literal texts; inverse of `templatize`.
pub fn fill(template: &SqlTemplate, literals: &[Literal]) -> Result<String, FillError> {
    if literals.len() != template.slots.len() {
        return Err(FillError::ArityMismatch {
            expected: template.slots.len(),
            got: literals.len(),
        });
    }
    let mut out = String::new();
    for (i, seg) in template.segments.iter().enumerate() {
        out.push_str(seg);
        if i < literals.len() {
            if literals[i].kind != template.slots[i] {
                return Err(FillError::KindMismatch {
                    slot: i,
                    expected: template.slots[i],
                    got: literals[i].kind,
                });
            }
            out.push_str(&literals[i].text);
        }
    }
    Ok(out)
}

/// FNV-1a, used for stable template ids and feature hashing.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbStyle {
    /// Lowercase keyword tokens only; literals and identifiers untouched.
    SmallCaseKeywords,
    /// Newline + indent before each major clause keyword.
    PrettyFormat,
    /// Replace each single inter-token space with a run of min..=max spaces.
    RandomSpaces { min: usize, max: usize, seed: u64 },
}

const MAJOR_CLAUSES: &[&str] = &[
    "SELECT", "FROM", "WHERE", "GROUP", "ORDER", "LIMIT", "HAVING", "UNION", "INTERSECT", "EXCEPT",
];

/// Apply a formatting perturbation. Only token case (keywords) or
/// whitespace runs change; the literal multiset is preserved.
pub fn perturb(sql: &str, style: PerturbStyle) -> Result<String, LexError> {
    use rand::Rng;
    use rand::SeedableRng;

    let tokens = tokenize(sql)?;
    match style {
        PerturbStyle::SmallCaseKeywords => Ok(tokens
            .iter()
            .map(|t| {
                if t.kind == TokenKind::Keyword {
                    t.text.to_lowercase()
                } else {
                    t.text.clone()
                }
            })
            .collect()),
        PerturbStyle::PrettyFormat => {
            let mut out = String::new();
            for (i, t) in tokens.iter().enumerate() {
                let next_is_clause = tokens.get(i + 1).is_some_and(|n| {
                    n.kind == TokenKind::Keyword
                        && MAJOR_CLAUSES.iter().any(|c| n.text.eq_ignore_ascii_case(c))
                });
                if t.kind == TokenKind::Whitespace && next_is_clause {
                    out.push_str("\n    ");
                } else {
                    out.push_str(&t.text);
                }
            }
            Ok(out)
        }
        PerturbStyle::RandomSpaces { min, max, seed } => {
            assert!(min <= max && min >= 1, "RandomSpaces requires 1 <= min <= max");
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut out = String::new();
            for t in &tokens {
                if t.kind == TokenKind::Whitespace && t.text == " " {
                    let n = rng.gen_range(min..=max);
                    for _ in 0..n {
                        out.push(' ');
                    }
                } else {
                    out.push_str(&t.text);
                }
            }
            Ok(out)
        }
    }
}
