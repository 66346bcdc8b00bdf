//! Masking literal mentions inside natural-language questions.
//!
//! Literals are matched longest-first: case-insensitive exact matches at
//! word boundaries, then a fuzzy sliding window scored by normalized indel
//! similarity. Literals with no plausible mention stay unmatched — prose
//! does not always spell out every literal (format strings like '%Y' never
//! appear in the question).

use serde::{Deserialize, Serialize};

use crate::lexer::{Literal, LiteralKind, Span};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedNlq {
    /// Question with each masked mention replaced by "[string]"/"[number]".
    pub text: String,
    /// Non-overlapping, sorted spans into the *source* text.
    pub mask_spans: Vec<(Span, LiteralKind)>,
    /// Template this annotation belongs to, once known.
    pub origin: Option<String>,
    /// Slot indices of literals with no mention found.
    pub unmatched: Vec<usize>,
    /// The original question, so spans stay meaningful.
    pub source: String,
}

impl MaskedNlq {
    pub fn identity(nlq: &str) -> Self {
        MaskedNlq {
            text: nlq.to_string(),
            mask_spans: Vec::new(),
            origin: None,
            unmatched: Vec::new(),
            source: nlq.to_string(),
        }
    }

    /// Restore the original substrings; inverse of masking.
    pub fn unmask(&self) -> String {
        let mut out = String::new();
        let mut pos = 0;
        for (span, _) in &self.mask_spans {
            out.push_str(&self.source[pos..span.start]);
            out.push_str(&self.source[span.start..span.end]);
            pos = span.end;
        }
        out.push_str(&self.source[pos..]);
        out
    }
}

/// Normalized indel similarity: 1 − indel_distance/(|a|+|b|), computed over
/// characters. Equals 2·LCS/(|a|+|b|); 1.0 iff the strings are identical.
pub fn indel_similarity(a: &str, b: &str) -> f64 {
    let ac: Vec<char> = a.chars().collect();
    let bc: Vec<char> = b.chars().collect();
    if ac.is_empty() && bc.is_empty() {
        return 1.0;
    }
    if ac.is_empty() || bc.is_empty() {
        return 0.0;
    }
    let mut prev = vec![0u32; bc.len() + 1];
    let mut cur = vec![0u32; bc.len() + 1];
    for i in 1..=ac.len() {
        for j in 1..=bc.len() {
            cur[j] = if ac[i - 1] == bc[j - 1] {
                prev[j - 1] + 1
            } else {
                prev[j].max(cur[j - 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let lcs = prev[bc.len()] as f64;
    2.0 * lcs / (ac.len() + bc.len()) as f64
}

/// Maximal alphanumeric runs with byte spans.
fn words(text: &str) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            if start.is_none() {
                start = Some(i);
            }
        } else if let Some(s) = start.take() {
            spans.push(Span::new(s, i));
        }
    }
    if let Some(s) = start {
        spans.push(Span::new(s, text.len()));
    }
    spans
}

/// Best fuzzy window for `needle` in `haystack`: word-boundary-aligned
/// substrings within ±30% of the needle's length, scored case-insensitively;
/// ties go to the leftmost window. None when below `threshold`.
pub fn fuzzy_find(haystack: &str, needle: &str, threshold: f64) -> Option<(Span, f64)> {
    fuzzy_find_excluding(haystack, needle, threshold, &[])
}

fn fuzzy_find_excluding(
    haystack: &str,
    needle: &str,
    threshold: f64,
    consumed: &[Span],
) -> Option<(Span, f64)> {
    if needle.is_empty() {
        return None;
    }
    let needle_lower = needle.to_lowercase();
    let n_chars = needle_lower.chars().count();
    let min_len = ((n_chars as f64) * 0.7).ceil() as usize;
    let max_len = ((n_chars as f64) * 1.3).floor() as usize;
    let word_spans = words(haystack);
    let mut best: Option<(Span, f64)> = None;
    for (wi, ws) in word_spans.iter().enumerate() {
        for we in word_spans.iter().skip(wi) {
            let span = Span::new(ws.start, we.end);
            let window = &haystack[span.start..span.end];
            let len = window.chars().count();
            if len > max_len {
                break;
            }
            if len < min_len {
                continue;
            }
            if consumed.iter().any(|c| c.overlaps(&span)) {
                continue;
            }
            let score = indel_similarity(&window.to_lowercase(), &needle_lower);
            if score >= threshold && best.is_none_or(|(_, b)| score > b) {
                best = Some((span, score));
            }
        }
    }
    best
}

/// Per-char lowercase that keeps byte offsets stable (chars whose lowercase
/// form changes UTF-8 length are left as-is).
fn lower_preserving(text: &str) -> String {
    text.chars()
        .map(|c| {
            let mut l = c.to_lowercase();
            let first = l.next().unwrap_or(c);
            if l.next().is_none() && first.len_utf8() == c.len_utf8() {
                first
            } else {
                c
            }
        })
        .collect()
}

/// First case-insensitive exact occurrence of `needle` at word boundaries,
/// skipping consumed spans.
fn exact_find(haystack_lower: &str, haystack: &str, needle: &str, consumed: &[Span]) -> Option<Span> {
    let needle_lower = lower_preserving(needle);
    if needle_lower.is_empty() {
        return None;
    }
    let mut from = 0;
    while from < haystack_lower.len() {
        let Some(rel) = haystack_lower[from..].find(&needle_lower) else { break };
        let start = from + rel;
        let end = start + needle_lower.len();
        let span = Span::new(start, end);
        let boundary_ok = {
            let before = haystack[..start].chars().next_back();
            let after = haystack[end..].chars().next();
            let edge_alnum = |c: Option<char>| c.is_some_and(|c| c.is_alphanumeric());
            let starts_alnum = haystack[start..end].chars().next().is_some_and(|c| c.is_alphanumeric());
            let ends_alnum = haystack[start..end].chars().next_back().is_some_and(|c| c.is_alphanumeric());
            !(starts_alnum && edge_alnum(before)) && !(ends_alnum && edge_alnum(after))
        };
        if boundary_ok && !consumed.iter().any(|c| c.overlaps(&span)) {
            return Some(span);
        }
        from = start + haystack_lower[start..].chars().next().map_or(1, |c| c.len_utf8());
    }
    None
}

/// "1998" → "1,998" for prose-formatted integers.
fn comma_grouped(num: &str) -> Option<String> {
    if num.len() <= 3 || !num.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let mut out = String::new();
    let lead = num.len() % 3;
    if lead > 0 {
        out.push_str(&num[..lead]);
    }
    for (i, chunk) in num.as_bytes()[lead..].chunks(3).enumerate() {
        if i > 0 || lead > 0 {
            out.push(',');
        }
        out.push_str(std::str::from_utf8(chunk).unwrap());
    }
    Some(out)
}

/// Mask literal mentions, longest first: exact match, then fuzzy window at
/// `fuzzy_threshold`. Each literal masks at most one mention; duplicates in
/// the literal list mask successive mentions. Unmatched literals are
/// recorded, never fatal.
pub fn mask_nlq(nlq: &str, literals: &[Literal], fuzzy_threshold: f64) -> MaskedNlq {
    if literals.is_empty() {
        return MaskedNlq::identity(nlq);
    }
    let haystack_lower = lower_preserving(nlq);
    // Longest first so "1998-12" wins over "1998"; stable on slot index.
    let mut order: Vec<usize> = (0..literals.len()).collect();
    order.sort_by(|&a, &b| {
        let la = literals[a].unquoted().chars().count();
        let lb = literals[b].unquoted().chars().count();
        lb.cmp(&la).then(a.cmp(&b))
    });

    let mut consumed: Vec<Span> = Vec::new();
    let mut found: Vec<(Span, LiteralKind)> = Vec::new();
    let mut unmatched: Vec<usize> = Vec::new();
    for &idx in &order {
        let lit = &literals[idx];
        let value = lit.unquoted();
        let mut candidates = vec![value.clone()];
        if lit.kind == LiteralKind::Num {
            if let Some(grouped) = comma_grouped(&value) {
                candidates.push(grouped);
            }
        }
        let mut span = None;
        for cand in &candidates {
            if let Some(s) = exact_find(&haystack_lower, nlq, cand, &consumed) {
                span = Some(s);
                break;
            }
        }
        if span.is_none() {
            span = fuzzy_find_excluding(nlq, &value, fuzzy_threshold, &consumed).map(|(s, _)| s);
        }
        match span {
            Some(s) => {
                consumed.push(s);
                found.push((s, lit.kind));
            }
            None => unmatched.push(idx),
        }
    }
    found.sort_by_key(|(s, _)| s.start);
    unmatched.sort_unstable();

    let mut text = String::new();
    let mut pos = 0;
    for (span, kind) in &found {
        text.push_str(&nlq[pos..span.start]);
        text.push_str(kind.placeholder());
        pos = span.end;
    }
    text.push_str(&nlq[pos..]);

    MaskedNlq { text, mask_spans: found, origin: None, unmatched, source: nlq.to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lit(kind: LiteralKind, text: &str, slot: usize) -> Literal {
        Literal { kind, text: text.into(), slot_index: slot }
    }

    #[test]
    fn paper_client_example() {
        let nlq = "How much, in total, did client number 617 pay for all of the transactions in 1998?";
        let literals = vec![
            lit(LiteralKind::Str, "'%Y'", 0),
            lit(LiteralKind::Str, "'1998'", 1),
            lit(LiteralKind::Num, "617", 2),
        ];
        let masked = mask_nlq(nlq, &literals, 0.8);
        assert_eq!(
            masked.text,
            "How much, in total, did client number [number] pay for all of the transactions in [string]?"
        );
        assert_eq!(masked.unmatched, vec![0], "'%Y' has no prose mention");
        assert_eq!(masked.unmask(), nlq);
    }

    #[test]
    fn paper_kam_example() {
        let nlq = "Who among KAM's customers consumed the most? How much did it consume?";
        let masked = mask_nlq(nlq, &[lit(LiteralKind::Str, "'KAM'", 0)], 0.8);
        assert!(masked.text.starts_with("Who among [string]'s customers"), "{}", masked.text);
    }

    #[test]
    fn empty_literals_is_identity() {
        let nlq = "What is the total count?";
        let masked = mask_nlq(nlq, &[], 0.8);
        assert_eq!(masked.text, nlq);
        assert!(masked.mask_spans.is_empty());
    }

    #[test]
    fn fuzzy_window_matches_hyphen_variant() {
        let (span, score) = fuzzy_find("Eric Djemba Djemba scored twice", "Eric Djemba-Djemba", 0.8)
            .expect("fuzzy match");
        assert_eq!(span, Span::new(0, 18));
        assert!(score >= 0.9, "score {score}");
    }

    #[test]
    fn fuzzy_exact_substring_scores_one() {
        let (_, score) = fuzzy_find("the blue house", "blue", 0.8).unwrap();
        assert!((score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fuzzy_below_threshold_is_none() {
        assert!(fuzzy_find("blue", "crimson", 0.8).is_none());
    }

    #[test]
    fn fuzzy_ties_go_leftmost() {
        // "abx" and "aby" score identically against "abc".
        let (span, score) = fuzzy_find("abx aby", "abc", 0.6).unwrap();
        assert_eq!(&"abx aby"[span.start..span.end], "abx");
        assert!((score - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn indel_similarity_oracle_values() {
        // indel("kitten","sitting"): LCS = 4 ("ittn"), sim = 8/13.
        assert!((indel_similarity("kitten", "sitting") - 8.0 / 13.0).abs() < 1e-12);
        assert_eq!(indel_similarity("abc", "abc"), 1.0);
        assert_eq!(indel_similarity("abc", "xyz"), 0.0);
    }

    #[test]
    fn comma_grouping_matches_prose_numbers() {
        let nlq = "Which orders exceeded 1,998 units in volume?";
        let masked = mask_nlq(nlq, &[lit(LiteralKind::Num, "1998", 0)], 0.8);
        assert_eq!(masked.text, "Which orders exceeded [number] units in volume?");
    }

    #[test]
    fn longest_first_prevents_dangling_fragments() {
        let nlq = "between 1998-12 and 1998 totals";
        let literals = vec![
            lit(LiteralKind::Str, "'1998'", 0),
            lit(LiteralKind::Str, "'1998-12'", 1),
        ];
        let masked = mask_nlq(nlq, &literals, 0.8);
        assert_eq!(masked.text, "between [string] and [string] totals");
    }

    #[test]
    fn duplicate_literals_mask_successive_mentions() {
        let nlq = "compare 42 against 42 again";
        let literals = vec![lit(LiteralKind::Num, "42", 0), lit(LiteralKind::Num, "42", 1)];
        let masked = mask_nlq(nlq, &literals, 0.8);
        assert_eq!(masked.text, "compare [number] against [number] again");
    }

    #[test]
    fn word_boundaries_protect_containing_tokens() {
        let nlq = "client 6170 paid in 1998";
        let masked = mask_nlq(nlq, &[lit(LiteralKind::Num, "617", 0)], 0.95);
        // "617" must not split "6170".
        assert!(!masked.text.contains("[number]0"), "{}", masked.text);
    }

    #[test]
    fn masking_is_idempotent() {
        let nlq = "client number 617 paid 'ACME' in 1998";
        let literals = vec![
            lit(LiteralKind::Num, "617", 0),
            lit(LiteralKind::Str, "'ACME'", 1),
            lit(LiteralKind::Str, "'1998'", 2),
        ];
        let once = mask_nlq(nlq, &literals, 0.8);
        let twice = mask_nlq(&once.text, &literals, 0.8);
        assert_eq!(once.text, twice.text);
    }

    #[test]
    fn placeholders_only_at_mask_spans() {
        let nlq = "how many users joined in 2020?";
        let masked = mask_nlq(nlq, &[lit(LiteralKind::Num, "2020", 0)], 0.8);
        let occurrences = masked.text.matches("[number]").count() + masked.text.matches("[string]").count();
        assert_eq!(occurrences, masked.mask_spans.len());
    }

    #[test]
    fn spans_sorted_and_disjoint() {
        let nlq = "totals for 'north' region above 100 since 2019";
        let literals = vec![
            lit(LiteralKind::Str, "'north'", 0),
            lit(LiteralKind::Num, "100", 1),
            lit(LiteralKind::Num, "2019", 2),
        ];
        let masked = mask_nlq(nlq, &literals, 0.8);
        for pair in masked.mask_spans.windows(2) {
            assert!(pair[0].0.end <= pair[1].0.start);
        }
        assert_eq!(masked.unmask(), nlq);
    }
}
