//! Template selection: embedding index, NLI-validated search, and the
//! cosine-threshold baseline with its calibration.
//!
//! Selection runs in two stages: a top-k cosine prefilter picks the single
//! best template, then an NLI scorer labels (question, annotation) pairs for
//! every top-k entry of that template and the labels are aggregated by
//! majority vote (or mean entailment score). A wrongly selected template
//! guarantees a wrong SQL downstream, so ties resolve toward rejection.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::lexer::fnv1a64;
use crate::nlq::MaskedNlq;

/// Deterministic text-to-vector map; same text must give the same vector.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f32>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NliLabel {
    Entailment,
    Neutral,
    Contradiction,
}

/// Labels a (premise, hypothesis) pair with a probability. Implementations
/// must be deterministic per input pair.
pub trait NliScorer: Send + Sync {
    fn score(&self, premise: &str, hypothesis: &str) -> (NliLabel, f64);
}

/// Hashed character n-gram TF-IDF embedder. Grams of length 3..=5 over the
/// lowercased text are hashed into `dim` signed buckets; weights are
/// (1 + ln tf) · idf, then L2-normalized. Without a fitted IDF every gram
/// weighs 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HashEmbedder {
    pub dim: usize,
    pub idf: Option<Vec<f32>>,
}

impl HashEmbedder {
    pub const DEFAULT_DIM: usize = 1024;

    pub fn new(dim: usize) -> Self {
        HashEmbedder { dim, idf: None }
    }

    /// Fit bucket-level IDF over a corpus: idf = ln((1+N)/(1+df)) + 1.
    pub fn fitted<S: AsRef<str>>(dim: usize, corpus: &[S]) -> Self {
        let mut df = vec![0u32; dim];
        for doc in corpus {
            let mut seen = vec![false; dim];
            for_each_gram(doc.as_ref(), |h| {
                let b = (h % dim as u64) as usize;
                if !seen[b] {
                    seen[b] = true;
                    df[b] += 1;
                }
            });
        }
        let n = corpus.len() as f32;
        let idf =
            df.iter().map(|&d| ((1.0 + n) / (1.0 + d as f32)).ln() + 1.0).collect::<Vec<f32>>();
        HashEmbedder { dim, idf: Some(idf) }
    }
}

fn for_each_gram(text: &str, mut f: impl FnMut(u64)) {
    let chars: Vec<char> = text.to_lowercase().chars().collect();
    for n in 3..=5usize {
        if chars.len() < n {
            continue;
        }
        for w in chars.windows(n) {
            let gram: String = w.iter().collect();
            f(fnv1a64(gram.as_bytes()));
        }
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Vec<f32> {
        // Ordered accumulation: float addition order must not depend on
        // hash-map iteration, or identical texts could embed differently.
        let mut tf: std::collections::BTreeMap<u64, f32> = std::collections::BTreeMap::new();
        for_each_gram(text, |h| *tf.entry(h).or_insert(0.0) += 1.0);
        let mut v = vec![0.0f32; self.dim];
        for (h, count) in tf {
            let b = (h % self.dim as u64) as usize;
            let sign = if h & (1 << 63) != 0 { -1.0 } else { 1.0 };
            let idf = self.idf.as_ref().map_or(1.0, |idf| idf[b]);
            v[b] += sign * (1.0 + count.ln()) * idf;
        }
        normalize(&mut v);
        v
    }
}

fn normalize(v: &mut [f32]) {
    let norm = v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x = (*x as f64 / norm) as f32;
        }
    }
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum::<f64>() as f32
}

/// Word-overlap NLI: placeholders are stripped, words are lowercased
/// alphanumeric runs, and the Dice overlap 2|A∩B|/(|A|+|B|) is the score.
/// Entailment iff score ≥ 0.6, Contradiction iff ≤ 0.2, else Neutral.
#[derive(Debug, Clone)]
pub struct OverlapNli {
    pub entail_min: f64,
    pub contra_max: f64,
}

impl Default for OverlapNli {
    fn default() -> Self {
        OverlapNli { entail_min: 0.6, contra_max: 0.2 }
    }
}

fn content_words(text: &str) -> Vec<String> {
    let stripped = text.replace("[string]", " ").replace("[number]", " ");
    let mut words = Vec::new();
    let mut cur = String::new();
    for c in stripped.chars() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            words.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    words
}

impl NliScorer for OverlapNli {
    fn score(&self, premise: &str, hypothesis: &str) -> (NliLabel, f64) {
        let mut a = content_words(premise);
        let mut b = content_words(hypothesis);
        if a.is_empty() && b.is_empty() {
            return (NliLabel::Entailment, 1.0);
        }
        a.sort_unstable();
        b.sort_unstable();
        let (mut i, mut j, mut inter) = (0usize, 0usize, 0usize);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Equal => {
                    inter += 1;
                    i += 1;
                    j += 1;
                }
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
            }
        }
        let score = 2.0 * inter as f64 / (a.len() + b.len()) as f64;
        let label = if score >= self.entail_min {
            NliLabel::Entailment
        } else if score <= self.contra_max {
            NliLabel::Contradiction
        } else {
            NliLabel::Neutral
        };
        (label, score)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexEntry {
    pub masked: MaskedNlq,
    pub embedding: Vec<f32>,
    pub template_id: String,
}

/// Masked-question index over a template pool, with exact top-k cosine
/// search. Immutable after build; shareable across threads.
pub struct TemplateIndex {
    entries: Vec<IndexEntry>,
    embedder: Arc<dyn Embedder>,
    dim: usize,
}

impl fmt::Debug for TemplateIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TemplateIndex")
            .field("entries", &self.entries.len())
            .field("dim", &self.dim)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MatcherError {
    EmptyAnnotationSet,
    EmptyIndex,
    DegenerateLabels,
    DimensionMismatch { expected: usize, got: usize },
    Persist(String),
}

impl fmt::Display for MatcherError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatcherError::EmptyAnnotationSet => write!(f, "no annotations to index"),
            MatcherError::EmptyIndex => write!(f, "index is empty"),
            MatcherError::DegenerateLabels => {
                write!(f, "calibration needs at least one positive and one negative")
            }
            MatcherError::DimensionMismatch { expected, got } => {
                write!(f, "embedding dimension {got} does not match index {expected}")
            }
            MatcherError::Persist(msg) => write!(f, "index persistence: {msg}"),
        }
    }
}

impl std::error::Error for MatcherError {}

/// Embed and unit-normalize every annotation.
pub fn build_index(
    annotations: Vec<(MaskedNlq, String)>,
    embedder: Arc<dyn Embedder>,
) -> Result<TemplateIndex, MatcherError> {
    if annotations.is_empty() {
        return Err(MatcherError::EmptyAnnotationSet);
    }
    let dim = embedder.dim();
    let entries = annotations
        .into_iter()
        .map(|(mut masked, template_id)| {
            if masked.origin.is_none() {
                masked.origin = Some(template_id.clone());
            }
            let mut embedding = embedder.embed(&masked.text);
            normalize(&mut embedding);
            IndexEntry { masked, embedding, template_id }
        })
        .collect();
    Ok(TemplateIndex { entries, embedder, dim })
}

impl TemplateIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    pub fn distinct_templates(&self) -> usize {
        let mut ids: Vec<&str> = self.entries.iter().map(|e| e.template_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    /// Exact top-k by cosine, descending; ties break on entry order.
    pub fn search(&self, query: &str, k: usize) -> Vec<(usize, f32)> {
        let mut q = self.embedder.embed(query);
        normalize(&mut q);
        let mut scored: Vec<(usize, f32)> =
            self.entries.iter().enumerate().map(|(i, e)| (i, dot(&q, &e.embedding))).collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        scored.truncate(k);
        scored
    }

    /// Write entries.jsonl + embeddings.bin into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), MatcherError> {
        let persist = |e: std::io::Error| MatcherError::Persist(e.to_string());
        std::fs::create_dir_all(dir).map_err(persist)?;
        let mut jsonl = Vec::new();
        for e in &self.entries {
            #[derive(Serialize)]
            struct Row<'a> {
                template_id: &'a str,
                masked: &'a MaskedNlq,
            }
            let line = serde_json::to_string(&Row { template_id: &e.template_id, masked: &e.masked })
                .map_err(|e| MatcherError::Persist(e.to_string()))?;
            jsonl.extend_from_slice(line.as_bytes());
            jsonl.push(b'\n');
        }
        std::fs::write(dir.join("entries.jsonl"), jsonl).map_err(persist)?;

        let mut bin = Vec::new();
        bin.write_all(b"TCDE").map_err(persist)?;
        bin.write_all(&(self.entries.len() as u32).to_le_bytes()).map_err(persist)?;
        bin.write_all(&(self.dim as u32).to_le_bytes()).map_err(persist)?;
        for e in &self.entries {
            for &x in &e.embedding {
                bin.write_all(&x.to_le_bytes()).map_err(persist)?;
            }
        }
        std::fs::write(dir.join("embeddings.bin"), bin).map_err(persist)?;
        Ok(())
    }

    /// Load a saved index; the embedder must match the one used at build
    /// time (the CLI persists its configuration alongside).
    pub fn load(dir: &Path, embedder: Arc<dyn Embedder>) -> Result<TemplateIndex, MatcherError> {
        let persist = |e: std::io::Error| MatcherError::Persist(e.to_string());
        let jsonl = std::fs::read_to_string(dir.join("entries.jsonl")).map_err(persist)?;
        #[derive(Deserialize)]
        struct Row {
            template_id: String,
            masked: MaskedNlq,
        }
        let rows: Vec<Row> = jsonl
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()
            .map_err(|e| MatcherError::Persist(e.to_string()))?;

        let bin = std::fs::read(dir.join("embeddings.bin")).map_err(persist)?;
        if bin.len() < 12 || &bin[..4] != b"TCDE" {
            return Err(MatcherError::Persist("bad embeddings.bin header".into()));
        }
        let count = u32::from_le_bytes(bin[4..8].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(bin[8..12].try_into().unwrap()) as usize;
        if count != rows.len() {
            return Err(MatcherError::Persist("entry/embedding count mismatch".into()));
        }
        if dim != embedder.dim() {
            return Err(MatcherError::DimensionMismatch { expected: dim, got: embedder.dim() });
        }
        if bin.len() != 12 + count * dim * 4 {
            return Err(MatcherError::Persist("embeddings.bin size mismatch".into()));
        }
        let mut entries = Vec::with_capacity(count);
        for (i, row) in rows.into_iter().enumerate() {
            let base = 12 + i * dim * 4;
            let embedding: Vec<f32> = (0..dim)
                .map(|j| {
                    let o = base + j * 4;
                    f32::from_le_bytes(bin[o..o + 4].try_into().unwrap())
                })
                .collect();
            entries.push(IndexEntry { masked: row.masked, embedding, template_id: row.template_id });
        }
        Ok(TemplateIndex { entries, embedder, dim })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    MajorityVote,
    MeanScore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMethod {
    MajorityVote,
    MeanScore,
    CosineThreshold,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchDecision {
    pub matched: bool,
    pub template_id: Option<String>,
    pub votes: Vec<(NliLabel, f64)>,
    pub method: MatchMethod,
}

/// Top-k cosine prefilter, NLI over the best template's annotations, then
/// majority vote (matched iff the majority label is Entailment) or mean
/// entailment score (> 0.5). Vote ties resolve by the higher mean
/// probability among the tied labels, then to Not-matched.
pub fn select_template(
    q: &str,
    index: &TemplateIndex,
    k: usize,
    scorer: &dyn NliScorer,
    agg: Aggregation,
) -> Result<MatchDecision, MatcherError> {
    if index.is_empty() {
        return Err(MatcherError::EmptyIndex);
    }
    let k = k.max(1);
    let top_k = index.search(q, k);
    let t_id = index.entries[top_k[0].0].template_id.clone();

    let votes: Vec<(NliLabel, f64)> = top_k
        .iter()
        .filter(|(i, _)| index.entries[*i].template_id == t_id)
        .map(|(i, _)| scorer.score(q, &index.entries[*i].masked.text))
        .collect();

    let matched = match agg {
        Aggregation::MajorityVote => majority_is_entailment(&votes),
        Aggregation::MeanScore => {
            let mean: f64 = votes
                .iter()
                .map(|(l, p)| if *l == NliLabel::Entailment { *p } else { 0.0 })
                .sum::<f64>()
                / votes.len() as f64;
            mean > 0.5
        }
    };

    Ok(MatchDecision {
        matched,
        template_id: Some(t_id),
        votes,
        method: match agg {
            Aggregation::MajorityVote => MatchMethod::MajorityVote,
            Aggregation::MeanScore => MatchMethod::MeanScore,
        },
    })
}

fn majority_is_entailment(votes: &[(NliLabel, f64)]) -> bool {
    let labels = [NliLabel::Entailment, NliLabel::Neutral, NliLabel::Contradiction];
    let counts: Vec<usize> =
        labels.iter().map(|l| votes.iter().filter(|(v, _)| v == l).count()).collect();
    let max = *counts.iter().max().unwrap_or(&0);
    if max == 0 {
        return false;
    }
    let tied: Vec<NliLabel> = labels
        .iter()
        .zip(&counts)
        .filter(|(_, &c)| c == max)
        .map(|(l, _)| *l)
        .collect();
    if tied.len() == 1 {
        return tied[0] == NliLabel::Entailment;
    }
    // Tie: higher mean probability among tied labels; still tied → reject.
    let mean_of = |label: NliLabel| {
        let probs: Vec<f64> =
            votes.iter().filter(|(l, _)| *l == label).map(|(_, p)| *p).collect();
        probs.iter().sum::<f64>() / probs.len() as f64
    };
    let best = tied
        .iter()
        .map(|&l| (l, mean_of(l)))
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .unwrap();
    let top_count = tied.iter().filter(|&&l| (mean_of(l) - best.1).abs() < 1e-12).count();
    if top_count > 1 {
        return false;
    }
    best.0 == NliLabel::Entailment
}

/// Cosine-threshold baseline: matched iff the best cosine ≥ eta.
pub fn baseline_match(
    q: &str,
    index: &TemplateIndex,
    eta: f64,
) -> Result<MatchDecision, MatcherError> {
    if index.is_empty() {
        return Err(MatcherError::EmptyIndex);
    }
    let top = index.search(q, 1);
    let (best_idx, best_cos) = top[0];
    Ok(MatchDecision {
        matched: best_cos as f64 >= eta,
        template_id: Some(index.entries[best_idx].template_id.clone()),
        votes: Vec::new(),
        method: MatchMethod::CosineThreshold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub eta: f64,
    /// Best TPR − FPR (Youden's J) over the candidate thresholds.
    pub j: f64,
    /// True when no threshold separates the labels (best J ≤ 0).
    pub degenerate: bool,
}

/// Pick the threshold maximizing TPR − FPR over candidate thresholds: 0, 1,
/// and midpoints between consecutive distinct similarities. Ties take the
/// smallest threshold. Match rule: similarity ≥ eta.
pub fn calibrate_threshold(labeled: &[(f64, bool)]) -> Result<Calibration, MatcherError> {
    let positives = labeled.iter().filter(|(_, m)| *m).count();
    let negatives = labeled.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MatcherError::DegenerateLabels);
    }
    let mut sims: Vec<f64> = labeled.iter().map(|(s, _)| *s).collect();
    sims.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sims.dedup();
    let mut candidates = vec![0.0, 1.0];
    for w in sims.windows(2) {
        candidates.push((w[0] + w[1]) / 2.0);
    }
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut best = Calibration { eta: 0.0, j: f64::NEG_INFINITY, degenerate: false };
    for &eta in &candidates {
        let tp = labeled.iter().filter(|(s, m)| *m && *s >= eta).count() as f64;
        let fp = labeled.iter().filter(|(s, m)| !*m && *s >= eta).count() as f64;
        let j = tp / positives as f64 - fp / negatives as f64;
        if j > best.j {
            best = Calibration { eta, j, degenerate: false };
        }
    }
    best.degenerate = best.j <= 0.0;
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn annotation(text: &str, template: &str) -> (MaskedNlq, String) {
        let mut m = MaskedNlq::identity(text);
        m.origin = Some(template.to_string());
        (m, template.to_string())
    }

    fn toy_index() -> TemplateIndex {
        let annotations = vec![
            annotation("total paid by client number [number] in [string]", "A"),
            annotation("how much did client [number] pay during [string]", "A"),
            annotation("which customer of [string] consumed the most", "B"),
            annotation("top consumer among [string] customers", "B"),
            annotation("count schools in [string] with free meals over [number]", "C"),
        ];
        let texts: Vec<String> = annotations.iter().map(|(m, _)| m.text.clone()).collect();
        let embedder = Arc::new(HashEmbedder::fitted(256, &texts));
        build_index(annotations, embedder).unwrap()
    }

    #[test]
    fn build_counts_and_unit_norm() {
        let index = toy_index();
        assert_eq!(index.len(), 5);
        assert_eq!(index.distinct_templates(), 3);
        for e in index.entries() {
            let norm: f64 = e.embedding.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6, "norm {norm}");
        }
    }

    #[test]
    fn embedding_is_bitwise_deterministic() {
        let embedder = HashEmbedder::fitted(256, &["some corpus line", "another line"]);
        let text = "collisions exercise the accumulation order in every bucket";
        assert_eq!(embedder.embed(text), embedder.embed(text));
    }

    #[test]
    fn duplicate_annotations_are_distinct_entries() {
        let annotations = vec![annotation("same text", "A"), annotation("same text", "A")];
        let embedder = Arc::new(HashEmbedder::new(128));
        let index = build_index(annotations, embedder).unwrap();
        assert_eq!(index.len(), 2);
    }

    #[test]
    fn empty_annotations_rejected() {
        let embedder: Arc<dyn Embedder> = Arc::new(HashEmbedder::new(64));
        assert_eq!(
            build_index(Vec::new(), embedder).unwrap_err(),
            MatcherError::EmptyAnnotationSet
        );
    }

    #[test]
    fn exact_text_searches_at_cosine_one() {
        let index = toy_index();
        let q = "which customer of [string] consumed the most";
        let top = index.search(q, 1);
        assert_eq!(index.entries()[top[0].0].masked.text, q);
        assert!((top[0].1 - 1.0).abs() < 1e-6);
    }

    /// Scripted scorer: entail iff texts are equal once placeholders are
    /// wildcarded out.
    struct EqualityNli;

    impl NliScorer for EqualityNli {
        fn score(&self, premise: &str, hypothesis: &str) -> (NliLabel, f64) {
            if premise == hypothesis {
                (NliLabel::Entailment, 1.0)
            } else {
                (NliLabel::Neutral, 0.4)
            }
        }
    }

    #[test]
    fn select_picks_argmax_cosine_template() {
        let index = toy_index();
        let q = "top consumer among [string] customers";
        let decision = select_template(q, &index, 5, &EqualityNli, Aggregation::MajorityVote).unwrap();
        // Brute-force argmax over all entries must land on template B.
        let all = index.search(q, index.len());
        assert_eq!(index.entries()[all[0].0].template_id, "B");
        assert_eq!(decision.template_id.as_deref(), Some("B"));
        assert!(decision.matched);
    }

    struct SequenceNli(std::sync::Mutex<Vec<(NliLabel, f64)>>);

    impl SequenceNli {
        fn new(mut votes: Vec<(NliLabel, f64)>) -> Self {
            votes.reverse();
            SequenceNli(std::sync::Mutex::new(votes))
        }
    }

    impl NliScorer for SequenceNli {
        fn score(&self, _p: &str, _h: &str) -> (NliLabel, f64) {
            self.0.lock().unwrap().pop().expect("enough scripted votes")
        }
    }

    fn decide(votes: Vec<(NliLabel, f64)>, agg: Aggregation) -> bool {
        // Three same-template annotations; pad the scripted votes to the
        // number that will be requested.
        let annotations: Vec<(MaskedNlq, String)> = (0..votes.len())
            .map(|i| annotation(&format!("question variant {i}"), "T"))
            .collect();
        let embedder = Arc::new(HashEmbedder::new(128));
        let index = build_index(annotations, embedder).unwrap();
        let scorer = SequenceNli::new(votes.clone());
        select_template("question variant 0", &index, votes.len(), &scorer, agg)
            .unwrap()
            .matched
    }

    #[test]
    fn majority_vote_cases() {
        use NliLabel::*;
        // E,E,N → matched.
        assert!(decide(vec![(Entailment, 0.9), (Entailment, 0.8), (Neutral, 0.9)], Aggregation::MajorityVote));
        // N,C,E with N strongest on the 3-way tie → not matched.
        assert!(!decide(vec![(Neutral, 0.9), (Contradiction, 0.8), (Entailment, 0.7)], Aggregation::MajorityVote));
        // Single entailment vote is a one-vote majority.
        assert!(decide(vec![(Entailment, 0.7)], Aggregation::MajorityVote));
        assert!(!decide(vec![(Neutral, 0.7)], Aggregation::MajorityVote));
        // Tie E/N, mean prob equal → conservative reject.
        assert!(!decide(vec![(Entailment, 0.9), (Neutral, 0.9)], Aggregation::MajorityVote));
        // Tie E/N, E stronger → matched.
        assert!(decide(vec![(Entailment, 0.95), (Neutral, 0.5)], Aggregation::MajorityVote));
    }

    #[test]
    fn mean_score_cases() {
        use NliLabel::*;
        assert!(decide(vec![(Entailment, 0.9), (Entailment, 0.8), (Contradiction, 0.1)], Aggregation::MeanScore));
        assert!(!decide(vec![(Entailment, 0.9), (Neutral, 0.9), (Neutral, 0.9)], Aggregation::MeanScore));
        // Divergence from majority: tie resolved to E by probability, but the
        // mean entailment mass is exactly 0.5, not above it.
        assert!(decide(vec![(Entailment, 1.0), (Neutral, 0.9)], Aggregation::MajorityVote));
        assert!(!decide(vec![(Entailment, 1.0), (Neutral, 0.9)], Aggregation::MeanScore));
    }

    #[test]
    fn contradiction_everywhere_rejects() {
        struct AlwaysContra;
        impl NliScorer for AlwaysContra {
            fn score(&self, _: &str, _: &str) -> (NliLabel, f64) {
                (NliLabel::Contradiction, 0.99)
            }
        }
        let index = toy_index();
        for agg in [Aggregation::MajorityVote, Aggregation::MeanScore] {
            let d = select_template("anything at all", &index, 5, &AlwaysContra, agg).unwrap();
            assert!(!d.matched);
        }
    }

    #[test]
    fn unanimous_labels_agree_across_aggregations() {
        let index = toy_index();
        let scorer = OverlapNli::default();
        for q in [
            "total paid by client number [number] in [string]",
            "entirely unrelated words about weather patterns",
        ] {
            let a = select_template(q, &index, 5, &scorer, Aggregation::MajorityVote).unwrap();
            let b = select_template(q, &index, 5, &scorer, Aggregation::MeanScore).unwrap();
            let labels: Vec<NliLabel> = a.votes.iter().map(|(l, _)| *l).collect();
            let unanimous = labels.windows(2).all(|w| w[0] == w[1]);
            if unanimous {
                assert_eq!(a.matched, b.matched, "q = {q}");
            }
        }
    }

    #[test]
    fn baseline_threshold_behavior() {
        let index = toy_index();
        let q = "count schools in [string] with free meals over [number]";
        assert!(baseline_match(q, &index, 0.99).unwrap().matched);
        assert!(!baseline_match("zzzz qqqq xyxy", &index, 0.5).unwrap().matched);
        assert!(baseline_match("zzzz qqqq xyxy", &index, 0.0).unwrap().matched);
    }

    #[test]
    fn calibration_midpoint_and_ties() {
        let labeled = vec![(0.9, true), (0.8, true), (0.3, false), (0.2, false)];
        let cal = calibrate_threshold(&labeled).unwrap();
        assert!((cal.eta - 0.55).abs() < 1e-12, "eta {}", cal.eta);
        assert!((cal.j - 1.0).abs() < 1e-12);
        assert!(!cal.degenerate);
    }

    #[test]
    fn calibration_degenerate_cases() {
        let equal = vec![(0.5, true), (0.5, false)];
        let cal = calibrate_threshold(&equal).unwrap();
        assert_eq!(cal.eta, 0.0);
        assert!(cal.degenerate);

        let inverted = vec![(0.2, true), (0.3, true), (0.8, false), (0.9, false)];
        let cal = calibrate_threshold(&inverted).unwrap();
        assert_eq!(cal.eta, 0.0);
        assert!((cal.j - 0.0).abs() < 1e-12);
        assert!(cal.degenerate);

        assert_eq!(
            calibrate_threshold(&[(0.5, true)]).unwrap_err(),
            MatcherError::DegenerateLabels
        );
    }

    #[test]
    fn index_persistence_round_trip() {
        let index = toy_index();
        let dir = tempfile::tempdir().unwrap();
        index.save(dir.path()).unwrap();
        let loaded = TemplateIndex::load(dir.path(), index.embedder().clone()).unwrap();
        assert_eq!(loaded.len(), index.len());
        let q = "top consumer among [string] customers";
        assert_eq!(index.search(q, 3), loaded.search(q, 3));
    }
}
