//! Benchmark fixtures: a small deterministic workload shared by the
//! criterion targets.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tecod_core::templatize;
use tecod_core::SqlTemplate;

pub const JOIN_SQL: &str = "SELECT SUM(T3.amount) FROM client AS T1 INNER JOIN disp AS T4 ON T1.client_id = T4.client_id INNER JOIN account AS T2 ON T4.account_id = T2.account_id INNER JOIN trans AS T3 ON T2.account_id = T3.account_id WHERE STRFTIME('%Y', T3.date)= '1998' AND T1.client_id = 617";

/// Deterministic mix of analytics-style SQLs for vocabulary training and
/// decode targets.
pub fn sample_sqls(count: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tables = ["orders", "clients", "schools", "loans"];
    let cols = ["amount", "name", "year", "price"];
    (0..count)
        .map(|i| {
            let t = tables[rng.gen_range(0..tables.len())];
            let c = cols[rng.gen_range(0..cols.len())];
            let c2 = cols[rng.gen_range(0..cols.len())];
            match i % 3 {
                0 => format!(
                    "SELECT {c}, {c2} FROM {t} WHERE {c} > {} ORDER BY {c2} DESC",
                    rng.gen_range(0..5000)
                ),
                1 => format!(
                    "SELECT COUNT(*) FROM {t} WHERE {c} = '{}' AND {c2} > {}",
                    ["north", "south", "east"][rng.gen_range(0..3)],
                    rng.gen_range(0..500)
                ),
                _ => format!(
                    "SELECT SUM(T1.{c}) FROM {t} AS T1 GROUP BY T1.{c2} HAVING COUNT(*) > {}",
                    rng.gen_range(1..40)
                ),
            }
        })
        .collect()
}

pub fn join_template() -> SqlTemplate {
    templatize(JOIN_SQL).expect("fixture tokenizes").0
}
