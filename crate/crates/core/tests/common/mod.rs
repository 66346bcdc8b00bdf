//! Shared corpus machinery for integration and acceptance tests: a seeded
//! SQL generator covering the dialect's surface, hand-written templates
//! (including the worked examples), and the language models the decoder
//! criteria run against.
#![allow(dead_code)] // each test binary uses a different subset

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tecod_core::templatize;
use tecod_core::SqlTemplate;

pub const CLIENT_SQL: &str = "SELECT SUM(T3.amount) FROM client AS T1 INNER JOIN disp AS T4 ON T1.client_id = T4.client_id INNER JOIN account AS T2 ON T4.account_id = T2.account_id INNER JOIN trans AS T3 ON T2.account_id = T3.account_id WHERE STRFTIME('%Y', T3.date)= '1998' AND T1.client_id = 617";
pub const KAM_SQL: &str = "SELECT T2.CustomerID, SUM(T2.Consumption) FROM customers AS T1 INNER JOIN yearmonth AS T2 ON T1.CustomerID = T2.CustomerID WHERE T1.Segment='KAM' GROUP BY T2.CustomerID ORDER BY SUM(T2.Consumption) DESC LIMIT 1";

/// Hand-written coverage: worked examples, quoted identifiers with inner
/// digits and parens, escaped quotes, offset limits, subqueries, trailing
/// semicolons (the straddle-prone shape).
pub fn hand_written_sqls() -> Vec<String> {
    vec![
        CLIENT_SQL.to_string(),
        KAM_SQL.to_string(),
        "SELECT COUNT(CDSCode) FROM frpm WHERE `County Name` = 'Contra Costa' AND `Free Meal Count (K-12)` > 420 AND `FRPM Count (K-12)` < 610".to_string(),
        "SELECT SUM(T2.home_team_goal) FROM Player AS T1 INNER JOIN match AS T2 ON T1.player_api_id = T2.away_player_9 WHERE T1.player_name = 'Eric Djemba-Djemba'".to_string(),
        "SELECT CAST(`Free Meal Count (K-12)` AS REAL) / `Enrollment (K-12)` FROM frpm ORDER BY `Enrollment (K-12)` DESC LIMIT 9, 2".to_string(),
        "SELECT song_name FROM singer WHERE age > (SELECT AVG(age) FROM singer)".to_string(),
        "SELECT * FROM Office WHERE Name = 'HQ' Limit 5;".to_string(),
        "SELECT name FROM sets WHERE code IN (SELECT setCode FROM set_translations WHERE translation = 'Huitieme edition')".to_string(),
        "SELECT Phone, Ext, School FROM schools WHERE Zip = '95203-3704'".to_string(),
        "SELECT DISTINCT T.molecule_id FROM bond AS T WHERE T.bond_type = '=' ORDER BY T.molecule_id LIMIT 5".to_string(),
        "SELECT a FROM big LIMIT 1;".to_string(),
        "SELECT title FROM books WHERE author = 'O''Brien' AND year > 1990".to_string(),
        "SELECT COUNT(*) FROM orders".to_string(),
        "UPDATE accounts SET balance = -12.5 WHERE id = 7".to_string(),
    ]
}

const TABLES: &[&str] = &["orders", "clients", "frpm", "schools", "singer", "trans", "loans", "cards"];
const COLUMNS: &[&str] = &["amount", "name", "city", "year", "status", "price", "age", "total"];
const QUOTED_COLS: &[&str] = &["`Free Meal Count (K-12)`", "`County Name`", "`Enrollment (K-12)`", "\"Academic Year\""];
const STR_VALUES: &[&str] = &["north", "Alameda", "O''Brien", "%Y", "a b c", "KAM", "95203-3704", "Active", ""];
const AGGS: &[&str] = &["SUM", "AVG", "MIN", "MAX", "COUNT"];

fn num_literal(rng: &mut ChaCha8Rng) -> String {
    let base = rng.gen_range(0..10_000);
    let negative = rng.gen_bool(0.15);
    let decimal = rng.gen_bool(0.3);
    let mut s = String::new();
    if negative {
        s.push('-');
    }
    s.push_str(&base.to_string());
    if decimal {
        s.push('.');
        s.push_str(&rng.gen_range(0..100).to_string());
    }
    s
}

fn str_literal(rng: &mut ChaCha8Rng) -> String {
    format!("'{}'", STR_VALUES[rng.gen_range(0..STR_VALUES.len())])
}

fn condition(rng: &mut ChaCha8Rng) -> String {
    let col = COLUMNS[rng.gen_range(0..COLUMNS.len())];
    match rng.gen_range(0..4) {
        0 => format!("{col} = {}", str_literal(rng)),
        1 => format!("{col} > {}", num_literal(rng)),
        2 => format!("{col} = {}", num_literal(rng)),
        _ => format!("{col} LIKE {}", str_literal(rng)),
    }
}

/// One random dialect-conforming SQL, shaped like recurring analytics
/// queries: long static bodies around a few literal slots. Keywords stay
/// uppercase so the three-case flexible rule covers the source form.
pub fn random_sql(rng: &mut ChaCha8Rng) -> String {
    let t = TABLES[rng.gen_range(0..TABLES.len())];
    let t2 = TABLES[rng.gen_range(0..TABLES.len())];
    let col = COLUMNS[rng.gen_range(0..COLUMNS.len())];
    let col2 = COLUMNS[rng.gen_range(0..COLUMNS.len())];
    let col3 = COLUMNS[rng.gen_range(0..COLUMNS.len())];
    let agg = AGGS[rng.gen_range(0..AGGS.len())];
    match rng.gen_range(0..8) {
        0 => format!("SELECT {col}, {col2}, {col3} FROM {t} ORDER BY {col} ASC"),
        1 => format!(
            "SELECT T1.{col}, T1.{col2}, T1.{col3} FROM {t} AS T1 WHERE T1.{} ORDER BY T1.{col} DESC",
            condition(rng)
        ),
        2 => format!(
            "SELECT COUNT(*) FROM {t} AS T1 INNER JOIN {t2} AS T2 ON T1.id = T2.id WHERE T1.{}",
            condition(rng)
        ),
        3 => format!(
            "SELECT {agg}(T1.{col}) FROM {t} AS T1 GROUP BY T1.{col2} HAVING COUNT(T1.{col3}) > {} ORDER BY {agg}(T1.{col}) DESC",
            num_literal(rng)
        ),
        4 => format!(
            "SELECT T1.{col}, T2.{col2} FROM {t} AS T1 INNER JOIN {t2} AS T2 ON T1.id = T2.id INNER JOIN cards AS T3 ON T2.ref = T3.ref WHERE T2.{} AND T3.{}",
            condition(rng),
            condition(rng)
        ),
        5 => format!(
            "SELECT {col} FROM {t} WHERE {col2} IS NOT NULL ORDER BY {col3} DESC LIMIT {}",
            rng.gen_range(1..100)
        ),
        6 => format!(
            "SELECT DISTINCT {col} FROM {t} ORDER BY {col2} DESC LIMIT {}, {}",
            rng.gen_range(1..50),
            rng.gen_range(1..10)
        ),
        _ => {
            let q = QUOTED_COLS[rng.gen_range(0..QUOTED_COLS.len())];
            format!(
                "SELECT {q} FROM {t} WHERE {q} > {} AND {col} IS NOT NULL ORDER BY {q} DESC",
                num_literal(rng)
            )
        }
    }
}

pub fn generated_sqls(count: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_sql(&mut rng)).collect()
}

pub struct Corpus {
    /// Deduplicated parametric templates.
    pub templates: Vec<SqlTemplate>,
    /// All source SQLs (hand-written + generated), the LM training corpus.
    pub sqls: Vec<String>,
}

/// Hand-written templates plus templates extracted from generated sample
/// SQLs; deduplicated by parametric identity.
pub fn build_corpus(generated: usize, seed: u64) -> Corpus {
    let mut sqls = hand_written_sqls();
    sqls.extend(generated_sqls(generated, seed));
    let mut templates: Vec<SqlTemplate> = Vec::new();
    let mut seen: Vec<String> = Vec::new();
    for sql in &sqls {
        let (template, _) = templatize(sql).expect("corpus SQL tokenizes");
        if !seen.contains(&template.template_id) {
            seen.push(template.template_id.clone());
            templates.push(template);
        }
    }
    Corpus { templates, sqls }
}
