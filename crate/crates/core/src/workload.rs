//! Template-reuse analysis over ordered query workloads, plus a synthetic
//! workload generator with a prescribed template-size distribution.
//!
//! Queries group by parametric template: the normalized key ignores keyword
//! case and whitespace but distinguishes literal kinds. A template's size is
//! the number of queries in its group; the histogram maps size → fraction of
//! all queries in groups of that size. If queries arrive sequentially, every
//! query except the first of its group would find a match, so the sequential
//! match rate is 1 − templates/queries.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::lexer::{templatize, LexError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadStats {
    /// template size → fraction of total queries in templates of that size.
    pub histogram: BTreeMap<usize, f64>,
    pub sequential_match_rate: f64,
    pub n_queries: usize,
    pub n_templates: usize,
}

impl WorkloadStats {
    /// Two-column CSV (size, fraction) for plotting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("size,fraction\n");
        for (size, fraction) in &self.histogram {
            out.push_str(&format!("{size},{fraction}\n"));
        }
        out
    }
}

#[derive(Debug)]
pub enum WorkloadError {
    Lex { index: usize, source: LexError },
    InfeasibleDistribution(String),
    EmptyInput,
}

impl fmt::Display for WorkloadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WorkloadError::Lex { index, source } => write!(f, "query {index}: {source}"),
            WorkloadError::InfeasibleDistribution(msg) => {
                write!(f, "infeasible distribution: {msg}")
            }
            WorkloadError::EmptyInput => write!(f, "no queries"),
        }
    }
}

impl std::error::Error for WorkloadError {}

/// Group an ordered workload by parametric template and report the size
/// distribution and sequential match rate.
pub fn analyze<S: AsRef<str>>(sqls: &[S]) -> Result<WorkloadStats, WorkloadError> {
    if sqls.is_empty() {
        return Err(WorkloadError::EmptyInput);
    }
    let mut groups: HashMap<String, usize> = HashMap::new();
    for (index, sql) in sqls.iter().enumerate() {
        let (template, _) = templatize(sql.as_ref())
            .map_err(|source| WorkloadError::Lex { index, source })?;
        *groups.entry(template.normalized_key()).or_insert(0) += 1;
    }
    let n_queries = sqls.len();
    let n_templates = groups.len();
    // Count templates per size in integers, divide once: the fractions must
    // not depend on hash-map iteration order.
    let mut templates_of_size: BTreeMap<usize, usize> = BTreeMap::new();
    for &size in groups.values() {
        *templates_of_size.entry(size).or_insert(0) += 1;
    }
    let histogram: BTreeMap<usize, f64> = templates_of_size
        .into_iter()
        .map(|(size, count)| (size, (size * count) as f64 / n_queries as f64))
        .collect();
    Ok(WorkloadStats {
        histogram,
        sequential_match_rate: 1.0 - n_templates as f64 / n_queries as f64,
        n_queries,
        n_templates,
    })
}

const STRING_POOL: &[&str] = &[
    "north", "south", "east", "west", "gold", "silver", "retail", "wholesale", "active",
    "closed", "pending", "prime", "basic", "KAM", "enterprise",
];

/// One parametric family per template ordinal; identifiers carry the
/// ordinal so distinct templates never collide under normalization.
fn family_sql(ordinal: usize, rng: &mut ChaCha8Rng) -> String {
    let num = rng.gen_range(0..100_000);
    let word = STRING_POOL[rng.gen_range(0..STRING_POOL.len())];
    let limit = rng.gen_range(1..50);
    match ordinal % 4 {
        0 => format!("SELECT col_a FROM tab_{ordinal} WHERE flag = {num}"),
        1 => format!(
            "SELECT name, val FROM tab_{ordinal} WHERE cat = '{word}' ORDER BY val DESC LIMIT {limit}"
        ),
        2 => format!("SELECT COUNT(*) FROM tab_{ordinal} WHERE a > {num} AND b = '{word}'"),
        _ => format!("SELECT AVG(x) FROM tab_{ordinal} GROUP BY g HAVING COUNT(*) > {limit}"),
    }
}

/// Emit `n` SQLs whose template-size distribution matches `dist`; literal
/// values are randomized per query and the order is shuffled by `seed`.
/// Per-size query counts round to whole templates; any residual is absorbed
/// by size-1 templates.
pub fn generate_synthetic(
    dist: &BTreeMap<usize, f64>,
    n: usize,
    seed: u64,
) -> Result<Vec<String>, WorkloadError> {
    if n == 0 {
        return Err(WorkloadError::EmptyInput);
    }
    let total: f64 = dist.values().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(WorkloadError::InfeasibleDistribution(format!(
            "fractions sum to {total}, expected 1"
        )));
    }
    if dist.keys().any(|&s| s == 0) {
        return Err(WorkloadError::InfeasibleDistribution("template size 0".into()));
    }

    let mut templates_per_size: BTreeMap<usize, usize> = BTreeMap::new();
    let mut allocated = 0usize;
    for (&size, &fraction) in dist {
        let count = ((fraction * n as f64) / size as f64).round() as usize;
        templates_per_size.insert(size, count);
        allocated += count * size;
    }
    // Absorb rounding residue with size-1 templates.
    if allocated != n {
        let diff = n as i64 - allocated as i64;
        let ones = templates_per_size.entry(1).or_insert(0);
        let adjusted = *ones as i64 + diff;
        if adjusted < 0 || (!dist.contains_key(&1) && diff != 0) {
            return Err(WorkloadError::InfeasibleDistribution(format!(
                "cannot realize counts at n={n} (residual {diff})"
            )));
        }
        *ones = adjusted as usize;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sqls: Vec<String> = Vec::with_capacity(n);
    let mut ordinal = 0usize;
    for (&size, &count) in &templates_per_size {
        for _ in 0..count {
            for _ in 0..size {
                sqls.push(family_sql(ordinal, &mut rng));
            }
            ordinal += 1;
        }
    }
    sqls.shuffle(&mut rng);
    Ok(sqls)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_enumerated_grouping() {
        let sqls = vec![
            "SELECT a FROM t WHERE x=1".to_string(),
            "select a from t where x=2".to_string(),
            "SELECT b FROM t".to_string(),
        ];
        let stats = analyze(&sqls).unwrap();
        assert_eq!(stats.n_templates, 2);
        assert_eq!(stats.n_queries, 3);
        assert!((stats.histogram[&2] - 2.0 / 3.0).abs() < 1e-12);
        assert!((stats.histogram[&1] - 1.0 / 3.0).abs() < 1e-12);
        assert!((stats.sequential_match_rate - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn all_distinct_workload() {
        let sqls: Vec<String> =
            (0..10).map(|i| format!("SELECT c{i} FROM t{i}")).collect();
        let stats = analyze(&sqls).unwrap();
        assert_eq!(stats.histogram.len(), 1);
        assert!((stats.histogram[&1] - 1.0).abs() < 1e-12);
        assert_eq!(stats.sequential_match_rate, 0.0);
    }

    #[test]
    fn histogram_fractions_sum_to_one() {
        let dist = BTreeMap::from([(1, 0.5), (2, 0.3), (4, 0.2)]);
        let sqls = generate_synthetic(&dist, 200, 3).unwrap();
        let stats = analyze(&sqls).unwrap();
        let sum: f64 = stats.histogram.values().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn match_rate_is_order_invariant() {
        let dist = BTreeMap::from([(1, 0.4), (3, 0.6)]);
        let sqls = generate_synthetic(&dist, 100, 11).unwrap();
        let mut reversed = sqls.clone();
        reversed.reverse();
        let a = analyze(&sqls).unwrap();
        let b = analyze(&reversed).unwrap();
        assert_eq!(a.sequential_match_rate, b.sequential_match_rate);
        assert_eq!(a.histogram, b.histogram);
    }

    #[test]
    fn pure_size_distributions() {
        let ones = generate_synthetic(&BTreeMap::from([(1, 1.0)]), 10, 5).unwrap();
        let stats = analyze(&ones).unwrap();
        assert_eq!(stats.n_templates, 10);
        assert_eq!(stats.sequential_match_rate, 0.0);

        let twos = generate_synthetic(&BTreeMap::from([(2, 1.0)]), 10, 5).unwrap();
        let stats = analyze(&twos).unwrap();
        assert_eq!(stats.n_templates, 5);
        assert!((stats.histogram[&2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lex_errors_carry_the_offending_index() {
        let sqls =
            vec!["SELECT a FROM t".to_string(), "SELECT 'broken FROM t".to_string()];
        match analyze(&sqls) {
            Err(WorkloadError::Lex { index: 1, .. }) => {}
            other => panic!("expected lex error at index 1, got {other:?}"),
        }
    }

    #[test]
    fn infeasible_distributions_error() {
        assert!(matches!(
            generate_synthetic(&BTreeMap::from([(2, 0.5)]), 10, 0),
            Err(WorkloadError::InfeasibleDistribution(_))
        ));
        // No size-1 mass to absorb the residue of 11 into templates of 2.
        assert!(matches!(
            generate_synthetic(&BTreeMap::from([(2, 1.0)]), 11, 0),
            Err(WorkloadError::InfeasibleDistribution(_))
        ));
    }

    #[test]
    fn round_trip_recovers_distribution() {
        let mut dist = BTreeMap::from([(1, 0.30), (2, 0.22)]);
        for size in 3..=10 {
            dist.insert(size, 0.06);
        }
        let sqls = generate_synthetic(&dist, 10_000, 42).unwrap();
        assert_eq!(sqls.len(), 10_000);
        let stats = analyze(&sqls).unwrap();
        for (&size, &expected) in &dist {
            let got = stats.histogram.get(&size).copied().unwrap_or(0.0);
            assert!((got - expected).abs() <= 0.01, "size {size}: {got} vs {expected}");
        }
        assert!(stats.sequential_match_rate > 0.5, "rate {}", stats.sequential_match_rate);
    }

    #[test]
    fn csv_emission() {
        let stats = analyze(&["SELECT a FROM t".to_string(), "SELECT a FROM t".to_string()])
            .unwrap();
        let csv = stats.to_csv();
        assert!(csv.starts_with("size,fraction\n"));
        assert!(csv.contains("2,1\n"), "{csv}");
    }
}
