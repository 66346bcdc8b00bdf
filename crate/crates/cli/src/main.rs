//! `tecod` — template extraction, matching, constrained decoding, and
//! workload analysis from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 decode failure.

mod store;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use store::{PairRecord, Store, StoredTemplate};
use tecod_core::decoder::{self, compose_prompt, ContextMode, DecodeReport, Sampling};
use tecod_core::grammar::{compile_flexible, GuideSpec};
use tecod_core::lm::{self, Vocabulary};
use tecod_core::matcher::{self, Aggregation, HashEmbedder, OverlapNli};
use tecod_core::nlq::mask_nlq;
use tecod_core::workload;
use tecod_core::{templatize, LanguageModel, PartitionedTemplate, PerturbStyle};

const DATA_ERROR: i32 = 2;
const DECODE_ERROR: i32 = 3;

#[derive(Parser)]
#[command(name = "tecod", version, about = "Template-constrained decoding for recurring text-to-SQL")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Templatize labeled pairs, mask questions, compile guides, build the index.
    Extract {
        /// JSONL file of {nlq, sql, db_id, annotations?} records.
        #[arg(long)]
        pairs: PathBuf,
        /// Store directory to create/overwrite.
        #[arg(long)]
        store: PathBuf,
        /// Embedding dimension for the annotation index.
        #[arg(long, default_value_t = HashEmbedder::DEFAULT_DIM)]
        dim: usize,
    },
    /// Decide whether a question matches a stored template.
    Match {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        nlq: String,
        /// Top-k prefilter size.
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, value_enum, default_value_t = AggArg::Majority)]
        agg: AggArg,
        /// Use the cosine-threshold baseline at this eta instead of NLI voting.
        #[arg(long)]
        baseline: Option<f64>,
        /// Mask literals in the query before matching (requires --sql-hint,
        /// the SQL whose literals to mask).
        #[arg(long)]
        mask_first: bool,
        #[arg(long)]
        sql_hint: Option<String>,
    },
    /// Generate SQL for a question constrained by a stored template.
    Decode {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        nlq: String,
        /// Template id from the store.
        #[arg(long)]
        template: String,
        /// Model spec: scripted:target.txt or ngram:corpus.txt.
        #[arg(long)]
        lm: String,
        #[arg(long, value_enum, default_value_t = ModeArg::Partitioned)]
        mode: ModeArg,
        #[arg(long, value_enum, default_value_t = ContextArg::Leftright)]
        context: ContextArg,
        /// Sample with this seed instead of greedy decoding.
        #[arg(long)]
        seed: Option<u64>,
        /// File with schema text to prepend to the prompt.
        #[arg(long)]
        schema: Option<PathBuf>,
        #[command(flatten)]
        lm_opts: LmOpts,
        #[arg(long, default_value_t = 512)]
        max_len: usize,
    },
    /// Template-reuse statistics over a file of SQLs (one per line).
    Analyze {
        #[arg(long)]
        sqls: PathBuf,
        #[arg(long, value_enum, default_value_t = EmitArg::Json)]
        emit: EmitArg,
    },
    /// Apply a formatting perturbation to an SQL.
    Perturb {
        #[arg(long)]
        sql: String,
        #[arg(long, value_enum)]
        style: StyleArg,
        /// Minimum run for random-spaces.
        #[arg(long, default_value_t = 2)]
        min: usize,
        /// Maximum run for random-spaces.
        #[arg(long, default_value_t = 5)]
        max: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run decode modes over every stored template and report forward calls.
    Bench {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        lm: String,
        /// Comma-separated subset of full,partitioned.
        #[arg(long, default_value = "full,partitioned")]
        modes: String,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[command(flatten)]
        lm_opts: LmOpts,
    },
}

#[derive(Args)]
struct LmOpts {
    /// BPE merges when building the vocabulary.
    #[arg(long, default_value_t = 200)]
    merges: usize,
    /// Order for ngram models.
    #[arg(long, default_value_t = 3)]
    ngram_order: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggArg {
    Majority,
    Mean,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Full,
    Partitioned,
}

#[derive(Clone, Copy, ValueEnum)]
enum ContextArg {
    None,
    Leftright,
}

#[derive(Clone, Copy, ValueEnum)]
enum EmitArg {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum StyleArg {
    SmallCase,
    Pretty,
    RandomSpaces,
}

struct AppError {
    code: i32,
    err: anyhow::Error,
}

fn data_err(err: anyhow::Error) -> AppError {
    AppError { code: DATA_ERROR, err }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(app) = run(cli) {
        eprintln!("error: {:#}", app.err);
        std::process::exit(app.code);
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.cmd {
        Cmd::Extract { pairs, store, dim } => cmd_extract(&pairs, &store, dim).map_err(data_err),
        Cmd::Match { store, nlq, k, agg, baseline, mask_first, sql_hint } => {
            cmd_match(&store, &nlq, k, agg, baseline, mask_first, sql_hint.as_deref())
                .map_err(data_err)
        }
        Cmd::Decode { store, nlq, template, lm, mode, context, seed, schema, lm_opts, max_len } => {
            cmd_decode(
                &store, &nlq, &template, &lm, mode, context, seed, schema.as_deref(), &lm_opts,
                max_len,
            )
        }
        Cmd::Analyze { sqls, emit } => cmd_analyze(&sqls, emit).map_err(data_err),
        Cmd::Perturb { sql, style, min, max, seed } => {
            cmd_perturb(&sql, style, min, max, seed).map_err(data_err)
        }
        Cmd::Bench { store, lm, modes, schema, lm_opts } => {
            cmd_bench(&store, &lm, &modes, schema.as_deref(), &lm_opts)
        }
    }
}

fn cmd_extract(pairs_path: &Path, store_path: &Path, dim: usize) -> Result<()> {
    let data = std::fs::read_to_string(pairs_path)
        .with_context(|| format!("reading {}", pairs_path.display()))?;
    let store = Store::new(store_path);
    store.create_dirs()?;

    let mut templates: Vec<StoredTemplate> = Vec::new();
    let mut order: Vec<String> = Vec::new();
    let mut annotations: Vec<(tecod_core::MaskedNlq, String)> = Vec::new();
    let mut pairs_in = 0usize;
    let mut skipped = 0usize;

    for (lineno, line) in data.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        pairs_in += 1;
        let record: PairRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("warning: line {}: bad record: {e}", lineno + 1);
                skipped += 1;
                continue;
            }
        };
        let (template, literals) = match templatize(&record.sql) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("warning: line {}: {e}", lineno + 1);
                skipped += 1;
                continue;
            }
        };
        let id = template.template_id.clone();
        if !order.contains(&id) {
            order.push(id.clone());
            templates.push(StoredTemplate {
                template: template.clone(),
                sample_nlq: record.nlq.clone(),
                db_id: record.db_id.clone(),
                n_pairs: 0,
            });
        }
        let stored = templates.iter_mut().find(|t| t.template.template_id == id).unwrap();
        stored.n_pairs += 1;

        for text in std::iter::once(&record.nlq).chain(record.annotations.iter()) {
            let mut masked = mask_nlq(text, &literals, 0.8);
            masked.origin = Some(id.clone());
            annotations.push((masked, id.clone()));
        }
    }

    if pairs_in == 0 || skipped == pairs_in {
        bail!("no usable records in {}", pairs_path.display());
    }

    for stored in &templates {
        let guide = compile_flexible(&stored.template, &GuideSpec::flexible())
            .map_err(|e| anyhow!("compiling guide for {}: {e}", stored.template.template_id))?;
        guide
            .save(&store.guide_path(&stored.template.template_id))
            .map_err(|e| anyhow!("saving guide: {e}"))?;
    }
    store.write_templates(&templates)?;

    let texts: Vec<String> = annotations.iter().map(|(m, _)| m.text.clone()).collect();
    let embedder = HashEmbedder::fitted(dim, &texts);
    store.save_embedder(&embedder)?;
    let index = matcher::build_index(annotations, Arc::new(embedder))
        .map_err(|e| anyhow!("building index: {e}"))?;
    index.save(&store.index_dir()).map_err(|e| anyhow!("saving index: {e}"))?;

    println!(
        "{}",
        serde_json::json!({
            "pairs_in": pairs_in,
            "skipped": skipped,
            "templates_out": templates.len(),
            "annotations_indexed": index.len(),
        })
    );
    Ok(())
}

fn cmd_match(
    store_path: &Path,
    nlq: &str,
    k: usize,
    agg: AggArg,
    baseline: Option<f64>,
    mask_first: bool,
    sql_hint: Option<&str>,
) -> Result<()> {
    let store = Store::new(store_path);
    let index = store.load_index()?;
    let query = if mask_first {
        let sql = sql_hint.ok_or_else(|| anyhow!("--mask-first requires --sql-hint"))?;
        let (_, literals) = templatize(sql)?;
        mask_nlq(nlq, &literals, 0.8).text
    } else {
        nlq.to_string()
    };
    let decision = match baseline {
        Some(eta) => matcher::baseline_match(&query, &index, eta),
        None => {
            let agg = match agg {
                AggArg::Majority => Aggregation::MajorityVote,
                AggArg::Mean => Aggregation::MeanScore,
            };
            matcher::select_template(&query, &index, k, &OverlapNli::default(), agg)
        }
    }
    .map_err(|e| anyhow!("{e}"))?;
    println!("{}", serde_json::to_string_pretty(&decision)?);
    Ok(())
}

enum LmChoice {
    Scripted(lm::ScriptedLm),
    Ngram(lm::NgramLm),
}

impl LmChoice {
    fn as_dyn(&self) -> &dyn LanguageModel {
        match self {
            LmChoice::Scripted(m) => m,
            LmChoice::Ngram(m) => m,
        }
    }
}

/// Build the vocabulary from the store's SQLs plus the model file, then the
/// model itself. Deterministic for fixed inputs and flags.
fn build_lm(store: &Store, spec: &str, opts: &LmOpts) -> Result<LmChoice> {
    let (kind, path) = spec
        .split_once(':')
        .ok_or_else(|| anyhow!("--lm must be scripted:FILE or ngram:FILE, got {spec:?}"))?;
    let content = std::fs::read_to_string(path)
        .with_context(|| format!("reading model file {path}"))?;
    let mut corpus: Vec<String> =
        store.load_templates()?.iter().map(|t| t.template.source_sql.clone()).collect();
    corpus.extend(content.lines().map(|l| l.to_string()));
    // Duplicate lines would double pair counts and cascade merges into
    // whole-query tokens on small stores.
    let mut seen = std::collections::HashSet::new();
    corpus.retain(|l| seen.insert(l.clone()));
    let vocab: Vocabulary = lm::build_vocab(&corpus, opts.merges);
    match kind {
        "scripted" => {
            let target = content.trim_end_matches(['\n', '\r']);
            Ok(LmChoice::Scripted(lm::scripted(vocab, target).map_err(|e| anyhow!("{e}"))?))
        }
        "ngram" => {
            let lines: Vec<String> = content.lines().map(|l| l.to_string()).collect();
            Ok(LmChoice::Ngram(lm::ngram(vocab, &lines, opts.ngram_order)))
        }
        other => bail!("unknown model kind {other:?}"),
    }
}

/// Load the cached partition for (template, lm) or compile and cache it.
fn load_or_compile_partition(
    store: &Store,
    stored: &StoredTemplate,
    lm: &dyn LanguageModel,
    schema: &str,
) -> Result<PartitionedTemplate, decoder::DecodeError> {
    let path = store.partition_path(&stored.template.template_id, lm.identifier());
    if path.exists() {
        return PartitionedTemplate::load(&path, lm);
    }
    let guide = store
        .load_guide(&stored.template.template_id)
        .map_err(|e| decoder::DecodeError::Format(e.to_string()))?;
    let part = decoder::compile_partition(lm, &stored.template, &guide, schema, &stored.sample_nlq)?;
    part.save(&path)?;
    Ok(part)
}

fn report_json(report: &DecodeReport, mode: &str) -> serde_json::Value {
    serde_json::json!({
        "sql": report.output_text,
        "mode": mode,
        "output_ids": report.output_ids,
        "forward_calls": report.forward_calls,
        "masked_token_totals": report.masked_token_totals,
        "wall_time_ms": report.wall_time.as_secs_f64() * 1e3,
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_decode(
    store_path: &Path,
    nlq: &str,
    template_id: &str,
    lm_spec: &str,
    mode: ModeArg,
    context: ContextArg,
    seed: Option<u64>,
    schema: Option<&Path>,
    lm_opts: &LmOpts,
    max_len: usize,
) -> Result<(), AppError> {
    let store = Store::new(store_path);
    let stored = store.load_template(template_id).map_err(data_err)?;
    let lm = build_lm(&store, lm_spec, lm_opts).map_err(data_err)?;
    let schema_text = match schema {
        Some(p) => std::fs::read_to_string(p)
            .with_context(|| format!("reading {}", p.display()))
            .map_err(data_err)?,
        None => String::new(),
    };
    let sampling = match seed {
        Some(s) => Sampling::Seeded(s),
        None => Sampling::Greedy,
    };
    let prompt = compose_prompt(&schema_text, nlq);

    let result = match mode {
        ModeArg::Full => {
            let guide = store.load_guide(template_id).map_err(data_err)?;
            decoder::gcd_generate(lm.as_dyn(), &guide, &prompt, max_len, sampling)
        }
        ModeArg::Partitioned => {
            let part = load_or_compile_partition(&store, &stored, lm.as_dyn(), &schema_text)
                .map_err(|e| AppError { code: DECODE_ERROR, err: anyhow!("{e}") })?;
            let context = match context {
                ContextArg::None => ContextMode::None,
                ContextArg::Leftright => ContextMode::LeftRight,
            };
            decoder::partitioned_generate(lm.as_dyn(), &part, &prompt, context, sampling)
        }
    };
    match result {
        Ok(report) => {
            let mode_name = match mode {
                ModeArg::Full => "full",
                ModeArg::Partitioned => "partitioned",
            };
            println!("{}", serde_json::to_string_pretty(&report_json(&report, mode_name))?);
            Ok(())
        }
        Err(e) => Err(AppError { code: DECODE_ERROR, err: anyhow!("{e}") }),
    }
}

impl From<serde_json::Error> for AppError {
    fn from(e: serde_json::Error) -> Self {
        data_err(e.into())
    }
}

fn cmd_analyze(sqls_path: &Path, emit: EmitArg) -> Result<()> {
    let data = std::fs::read_to_string(sqls_path)
        .with_context(|| format!("reading {}", sqls_path.display()))?;
    let sqls: Vec<String> =
        data.lines().filter(|l| !l.trim().is_empty()).map(|l| l.to_string()).collect();
    let stats = workload::analyze(&sqls).map_err(|e| anyhow!("{e}"))?;
    match emit {
        EmitArg::Json => println!("{}", serde_json::to_string_pretty(&stats)?),
        EmitArg::Csv => print!("{}", stats.to_csv()),
    }
    Ok(())
}

fn cmd_perturb(sql: &str, style: StyleArg, min: usize, max: usize, seed: u64) -> Result<()> {
    if matches!(style, StyleArg::RandomSpaces) && (min < 1 || min > max) {
        bail!("random-spaces requires 1 <= min <= max");
    }
    let style = match style {
        StyleArg::SmallCase => PerturbStyle::SmallCaseKeywords,
        StyleArg::Pretty => PerturbStyle::PrettyFormat,
        StyleArg::RandomSpaces => PerturbStyle::RandomSpaces { min, max, seed },
    };
    let out = tecod_core::perturb(sql, style)?;
    println!("{out}");
    Ok(())
}

fn cmd_bench(
    store_path: &Path,
    lm_spec: &str,
    modes: &str,
    schema: Option<&Path>,
    lm_opts: &LmOpts,
) -> Result<(), AppError> {
    let store = Store::new(store_path);
    let templates = store.load_templates().map_err(data_err)?;
    let lm = build_lm(&store, lm_spec, lm_opts).map_err(data_err)?;
    let schema_text = match schema {
        Some(p) => std::fs::read_to_string(p)
            .with_context(|| format!("reading {}", p.display()))
            .map_err(data_err)?,
        None => String::new(),
    };
    let run_full = modes.split(',').any(|m| m.trim() == "full");
    let run_part = modes.split(',').any(|m| m.trim() == "partitioned");
    if !run_full && !run_part {
        return Err(data_err(anyhow!("--modes must name full and/or partitioned")));
    }

    let mut full_calls = 0u64;
    let mut part_calls = 0u64;
    let mut static_tokens = 0usize;
    let mut total_tokens = 0usize;
    let mut per_template = Vec::new();
    let mut failures = 0usize;

    for stored in &templates {
        let id = &stored.template.template_id;
        let prompt = compose_prompt(&schema_text, &stored.sample_nlq);
        let guide = match store.load_guide(id) {
            Ok(g) => g,
            Err(e) => {
                eprintln!("warning: {id}: {e}");
                failures += 1;
                continue;
            }
        };
        let part = match load_or_compile_partition(&store, stored, lm.as_dyn(), &schema_text) {
            Ok(p) => p,
            Err(e) => {
                eprintln!("warning: {id}: partition: {e}");
                failures += 1;
                continue;
            }
        };
        let mut row = serde_json::json!({ "template_id": id });
        let mut full_ok = None;
        if run_full {
            match decoder::gcd_generate(lm.as_dyn(), &guide, &prompt, 512, Sampling::Greedy) {
                Ok(r) => {
                    full_calls += r.forward_calls;
                    row["full_forward_calls"] = r.forward_calls.into();
                    full_ok = Some(r);
                }
                Err(e) => {
                    eprintln!("warning: {id}: full decode: {e}");
                    failures += 1;
                    continue;
                }
            }
        }
        if run_part {
            match decoder::partitioned_generate(
                lm.as_dyn(),
                &part,
                &prompt,
                ContextMode::LeftRight,
                Sampling::Greedy,
            ) {
                Ok(r) => {
                    part_calls += r.forward_calls;
                    row["partitioned_forward_calls"] = r.forward_calls.into();
                    if let Some(full) = &full_ok {
                        row["outputs_match"] = (full.output_text == r.output_text).into();
                    }
                    static_tokens += part.static_tokens();
                    total_tokens += r.output_ids.len();
                }
                Err(e) => {
                    eprintln!("warning: {id}: partitioned decode: {e}");
                    failures += 1;
                    continue;
                }
            }
        }
        per_template.push(row);
    }

    let mut summary = serde_json::json!({
        "templates": templates.len(),
        "failures": failures,
        "per_template": per_template,
    });
    if run_full {
        summary["full_forward_calls"] = full_calls.into();
    }
    if run_part {
        summary["partitioned_forward_calls"] = part_calls.into();
        if total_tokens > 0 {
            summary["static_token_fraction"] =
                (static_tokens as f64 / total_tokens as f64).into();
        }
    }
    if run_full && run_part && full_calls > 0 {
        summary["ratio"] = (part_calls as f64 / full_calls as f64).into();
    }
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}
