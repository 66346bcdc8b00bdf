//! End-to-end runs of the `tecod` binary over a temporary store.

use std::path::Path;
use std::process::{Command, Output};

fn tecod(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tecod"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

const CLIENT_SQL: &str = "SELECT SUM(T3.amount) FROM client AS T1 INNER JOIN disp AS T4 ON T1.client_id = T4.client_id INNER JOIN account AS T2 ON T4.account_id = T2.account_id INNER JOIN trans AS T3 ON T2.account_id = T3.account_id WHERE STRFTIME('%Y', T3.date)= '1998' AND T1.client_id = 617";

fn write_pairs(dir: &Path) {
    let records = [
        serde_json::json!({
            "nlq": "How much, in total, did client number 617 pay for all of the transactions in 1998?",
            "sql": CLIENT_SQL,
            "db_id": "financial",
            "annotations": ["What was the total amount paid by client number 617 for all transactions in 1998?"],
        }),
        serde_json::json!({
            "nlq": "How much did client number 42 pay for transactions in 2020?",
            "sql": CLIENT_SQL.replace("617", "42").replace("'1998'", "'2020'"),
            "db_id": "financial",
        }),
        serde_json::json!({
            "nlq": "List the five most expensive products",
            "sql": "SELECT name FROM products ORDER BY price DESC LIMIT 5",
            "db_id": "shop",
        }),
        serde_json::json!({
            "nlq": "bad sql here",
            "sql": "SELECT * FROM t WHERE x = 'unterminated",
            "db_id": "shop",
        }),
    ];
    let body: String =
        records.iter().map(|r| format!("{r}\n")).collect();
    std::fs::write(dir.join("pairs.jsonl"), body).unwrap();
}

#[test]
fn extract_match_decode_bench_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_pairs(dir);

    // Extract: 4 pairs, one skipped (unterminated string), 2 shared forms.
    let out = tecod(&["extract", "--pairs", "pairs.jsonl", "--store", "store"], dir);
    let stderr = String::from_utf8_lossy(&out.stderr).to_string();
    let summary = stdout_json(&out);
    assert_eq!(summary["pairs_in"], 4);
    assert_eq!(summary["skipped"], 1);
    assert_eq!(summary["templates_out"], 2);
    assert_eq!(summary["annotations_indexed"], 4);
    assert!(stderr.contains("line 4"), "skip warning names the line: {stderr}");
    assert!(dir.join("store/templates.jsonl").exists());
    assert!(dir.join("store/index/embeddings.bin").exists());

    // Guide files exist for every stored template.
    let templates = std::fs::read_to_string(dir.join("store/templates.jsonl")).unwrap();
    let mut client_template_id = String::new();
    for line in templates.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let id = v["template"]["template_id"].as_str().unwrap();
        assert!(dir.join(format!("store/guides/{id}.tcdg")).exists());
        if v["template"]["source_sql"].as_str().unwrap() == CLIENT_SQL {
            client_template_id = id.to_string();
        }
    }
    assert!(!client_template_id.is_empty());

    // Match an in-family phrasing (k=1 keeps the vote on the best entry).
    let out = tecod(
        &[
            "match",
            "--store",
            "store",
            "--nlq",
            "What was the total amount paid by client number 9 for all transactions in 2021?",
            "--k",
            "1",
        ],
        dir,
    );
    let decision = stdout_json(&out);
    assert_eq!(decision["matched"], true);
    assert_eq!(decision["template_id"].as_str().unwrap(), client_template_id);

    // Baseline mode with eta 0 always matches.
    let out = tecod(
        &["match", "--store", "store", "--nlq", "anything", "--baseline", "0.0"],
        dir,
    );
    assert_eq!(stdout_json(&out)["matched"], true);

    // Decode with a scripted model: both modes reproduce the target.
    // Moderate merges: this store is tiny and the '%Y' literal recurs
    // verbatim, so aggressive merging would fuse tokens across two slots
    // and partition compilation would (correctly) refuse.
    let gold = CLIENT_SQL.replace("617", "9").replace("'1998'", "'2021'");
    std::fs::write(dir.join("target.txt"), &gold).unwrap();
    let mut calls = Vec::new();
    for mode in ["full", "partitioned"] {
        let out = tecod(
            &[
                "decode", "--store", "store", "--nlq", "total for client 9 in 2021?",
                "--template", &client_template_id, "--lm", "scripted:target.txt", "--mode", mode,
                "--merges", "80",
            ],
            dir,
        );
        let report = stdout_json(&out);
        assert_eq!(report["sql"].as_str().unwrap(), gold, "mode {mode}");
        calls.push(report["forward_calls"].as_u64().unwrap());
    }
    assert!(calls[1] < calls[0], "partitioned must use fewer calls: {calls:?}");
    // Partition file was cached.
    let partitions: Vec<_> = std::fs::read_dir(dir.join("store/partitions"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert!(!partitions.is_empty());

    // Bench across the store: static text dominates, ratio below 0.5.
    let out = tecod(
        &["bench", "--store", "store", "--lm", "scripted:target.txt", "--merges", "80"],
        dir,
    );
    let bench = stdout_json(&out);
    assert_eq!(bench["failures"], 0);
    let ratio = bench["ratio"].as_f64().unwrap();
    assert!(ratio < 0.5, "ratio {ratio}");
}

#[test]
fn analyze_and_perturb() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("sqls.txt"),
        "SELECT a FROM t WHERE x=1\nselect a from t where x=2\nSELECT b FROM t\n",
    )
    .unwrap();
    let out = tecod(&["analyze", "--sqls", "sqls.txt"], dir);
    let stats = stdout_json(&out);
    assert_eq!(stats["n_templates"], 2);
    assert_eq!(stats["n_queries"], 3);

    let out = tecod(&["analyze", "--sqls", "sqls.txt", "--emit", "csv"], dir);
    assert!(out.status.success());
    let csv = String::from_utf8_lossy(&out.stdout);
    assert!(csv.starts_with("size,fraction\n"), "{csv}");

    let out = tecod(
        &[
            "perturb", "--sql", "SELECT X FROM t WHERE y='A'", "--style", "small-case",
        ],
        dir,
    );
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim_end(), "select X from t where y='A'");

    let out = tecod(
        &[
            "perturb", "--sql", "a = 1", "--style", "random-spaces", "--min", "2", "--max", "3",
            "--seed", "7",
        ],
        dir,
    );
    assert!(out.status.success());
    let spaced = String::from_utf8_lossy(&out.stdout);
    assert!(spaced.contains("a  ") || spaced.contains("a   "), "{spaced}");
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    // Usage error: unknown flag.
    let out = tecod(&["analyze", "--nonsense"], dir);
    assert_eq!(out.status.code(), Some(1));

    // Data error: missing file.
    let out = tecod(&["analyze", "--sqls", "missing.txt"], dir);
    assert_eq!(out.status.code(), Some(2));

    // Data error: store with no usable records.
    std::fs::write(dir.join("bad.jsonl"), "{\"nlq\": \"q\", \"sql\": \"SELECT 'oops\"}\n").unwrap();
    let out = tecod(&["extract", "--pairs", "bad.jsonl", "--store", "store2"], dir);
    assert_eq!(out.status.code(), Some(2));

    // Help exits zero.
    let out = tecod(&["--help"], dir);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn decode_failure_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    // A store whose only template needs a string, decoded with a
    // vocabulary that cannot express one: impossible, exit 3.
    let rec = serde_json::json!({
        "nlq": "who is north?",
        "sql": "SELECT a FROM t WHERE x = 'north'",
        "db_id": "d",
    });
    std::fs::write(dir.join("pairs.jsonl"), format!("{rec}\n")).unwrap();
    let out = tecod(&["extract", "--pairs", "pairs.jsonl", "--store", "store"], dir);
    assert!(out.status.success());
    let templates = std::fs::read_to_string(dir.join("store/templates.jsonl")).unwrap();
    let v: serde_json::Value = serde_json::from_str(templates.lines().next().unwrap()).unwrap();
    let id = v["template"]["template_id"].as_str().unwrap().to_string();

    // Unknown template id is a data error (2), not a decode failure.
    std::fs::write(dir.join("t.txt"), "SELECT a FROM t WHERE x = 'north'").unwrap();
    let out = tecod(
        &[
            "decode", "--store", "store", "--nlq", "q", "--template", "missing",
            "--lm", "scripted:t.txt",
        ],
        dir,
    );
    assert_eq!(out.status.code(), Some(2));

    // A max-len squeeze forces a decode failure (3) in full mode. Byte-level
    // vocabulary so no merged token can cover the query in two steps.
    let out = tecod(
        &[
            "decode", "--store", "store", "--nlq", "q", "--template", &id,
            "--lm", "scripted:t.txt", "--mode", "full", "--max-len", "2", "--merges", "0",
        ],
        dir,
    );
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}
