//! Minimal byte-level regex syntax for literal slot rules.
//!
//! Supports exactly what the slot patterns need: literal runs, escapes,
//! `[...]` classes (negation, ranges), grouping, alternation, and the
//! `*`/`+`/`?` postfix operators. Patterns match whole byte strings.

/// Set of bytes, 256-bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ByteSet(pub [u64; 4]);

impl ByteSet {
    pub fn empty() -> Self {
        ByteSet([0; 4])
    }

    pub fn full() -> Self {
        ByteSet([u64::MAX; 4])
    }

    pub fn single(b: u8) -> Self {
        let mut s = Self::empty();
        s.insert(b);
        s
    }

    pub fn insert(&mut self, b: u8) {
        self.0[(b >> 6) as usize] |= 1u64 << (b & 63);
    }

    pub fn contains(&self, b: u8) -> bool {
        self.0[(b >> 6) as usize] & (1u64 << (b & 63)) != 0
    }

    pub fn negate(&self) -> Self {
        ByteSet([!self.0[0], !self.0[1], !self.0[2], !self.0[3]])
    }

    pub fn intersect(&self, other: &Self) -> Self {
        ByteSet([
            self.0[0] & other.0[0],
            self.0[1] & other.0[1],
            self.0[2] & other.0[2],
            self.0[3] & other.0[3],
        ])
    }

    pub fn subtract(&self, other: &Self) -> Self {
        self.intersect(&other.negate())
    }

    pub fn is_empty(&self) -> bool {
        self.0 == [0; 4]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Ast {
    Epsilon,
    Bytes(Vec<u8>),
    Class(ByteSet),
    Concat(Vec<Ast>),
    Alt(Vec<Ast>),
    Star(Box<Ast>),
    Plus(Box<Ast>),
    Opt(Box<Ast>),
}

impl Ast {
    pub fn literal(text: &str) -> Ast {
        Ast::Bytes(text.as_bytes().to_vec())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternError {
    pub pattern: String,
    pub reason: String,
}

impl std::fmt::Display for PatternError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "bad pattern {:?}: {}", self.pattern, self.reason)
    }
}

impl std::error::Error for PatternError {}

/// Parse a pattern string into an AST.
pub fn parse(pattern: &str) -> Result<Ast, PatternError> {
    let mut p = Parser { bytes: pattern.as_bytes(), pos: 0, pattern };
    let ast = p.alternation()?;
    if p.pos != p.bytes.len() {
        return Err(p.err("trailing input"));
    }
    Ok(ast)
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    pattern: &'a str,
}

impl<'a> Parser<'a> {
    fn err(&self, reason: &str) -> PatternError {
        PatternError {
            pattern: self.pattern.to_string(),
            reason: format!("{reason} at byte {}", self.pos),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn alternation(&mut self) -> Result<Ast, PatternError> {
        let mut arms = vec![self.concat()?];
        while self.peek() == Some(b'|') {
            self.pos += 1;
            arms.push(self.concat()?);
        }
        Ok(if arms.len() == 1 { arms.pop().unwrap() } else { Ast::Alt(arms) })
    }

    fn concat(&mut self) -> Result<Ast, PatternError> {
        let mut items = Vec::new();
        while let Some(b) = self.peek() {
            if b == b'|' || b == b')' {
                break;
            }
            items.push(self.postfix()?);
        }
        Ok(match items.len() {
            0 => Ast::Epsilon,
            1 => items.pop().unwrap(),
            _ => Ast::Concat(items),
        })
    }

    fn postfix(&mut self) -> Result<Ast, PatternError> {
        let mut node = self.atom()?;
        while let Some(b) = self.peek() {
            node = match b {
                b'*' => Ast::Star(Box::new(node)),
                b'+' => Ast::Plus(Box::new(node)),
                b'?' => Ast::Opt(Box::new(node)),
                _ => break,
            };
            self.pos += 1;
        }
        Ok(node)
    }

    fn atom(&mut self) -> Result<Ast, PatternError> {
        match self.peek() {
            None => Err(self.err("unexpected end")),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.alternation()?;
                if self.peek() != Some(b')') {
                    return Err(self.err("missing ')'"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(b'[') => {
                self.pos += 1;
                self.class()
            }
            Some(b'.') => {
                self.pos += 1;
                Ok(Ast::Class(ByteSet::full()))
            }
            Some(b'\\') => {
                self.pos += 1;
                let b = self.peek().ok_or_else(|| self.err("dangling escape"))?;
                self.pos += 1;
                Ok(Ast::Bytes(vec![unescape(b)]))
            }
            Some(b'*' | b'+' | b'?' | b']') => Err(self.err("misplaced operator")),
            Some(b) => {
                self.pos += 1;
                Ok(Ast::Bytes(vec![b]))
            }
        }
    }

    fn class(&mut self) -> Result<Ast, PatternError> {
        let negated = self.peek() == Some(b'^');
        if negated {
            self.pos += 1;
        }
        let mut set = ByteSet::empty();
        loop {
            let b = match self.peek() {
                None => return Err(self.err("unterminated class")),
                Some(b']') => {
                    self.pos += 1;
                    break;
                }
                Some(b'\\') => {
                    self.pos += 1;
                    let e = self.peek().ok_or_else(|| self.err("dangling escape"))?;
                    self.pos += 1;
                    unescape(e)
                }
                Some(b) => {
                    self.pos += 1;
                    b
                }
            };
            if self.peek() == Some(b'-') && self.bytes.get(self.pos + 1) != Some(&b']') {
                self.pos += 1;
                let hi = match self.peek() {
                    None => return Err(self.err("unterminated range")),
                    Some(b'\\') => {
                        self.pos += 1;
                        let e = self.peek().ok_or_else(|| self.err("dangling escape"))?;
                        self.pos += 1;
                        unescape(e)
                    }
                    Some(h) => {
                        self.pos += 1;
                        h
                    }
                };
                if hi < b {
                    return Err(self.err("reversed range"));
                }
                for x in b..=hi {
                    set.insert(x);
                }
            } else {
                set.insert(b);
            }
        }
        if set.is_empty() && !negated {
            return Err(self.err("empty class"));
        }
        Ok(Ast::Class(if negated { set.negate() } else { set }))
    }
}

fn unescape(b: u8) -> u8 {
    match b {
        b'n' => b'\n',
        b't' => b'\t',
        b'r' => b'\r',
        b'0' => 0,
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_number_rule() {
        let ast = parse("-?([0-9]|[1-9][0-9]+)(\\.[0-9]+)?").unwrap();
        match ast {
            Ast::Concat(items) => assert_eq!(items.len(), 3),
            other => panic!("unexpected shape: {other:?}"),
        }
    }

    #[test]
    fn parses_string_rule() {
        parse("'([^']|'')*'").unwrap();
        parse("'[^']*'").unwrap();
    }

    #[test]
    fn class_negation_and_ranges() {
        let ast = parse("[^'a-c]").unwrap();
        let Ast::Class(set) = ast else { panic!() };
        assert!(!set.contains(b'\''));
        assert!(!set.contains(b'b'));
        assert!(set.contains(b'z'));
        assert!(set.contains(0));
    }

    #[test]
    fn rejects_malformed() {
        assert!(parse("(a").is_err());
        assert!(parse("[a").is_err());
        assert!(parse("*a").is_err());
        assert!(parse("a)").is_err());
        assert!(parse("[z-a]").is_err());
    }
}
