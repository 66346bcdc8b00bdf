//! On-disk template store.
//!
//! Layout under the store root:
//!   templates.jsonl           one StoredTemplate per line
//!   guides/<id>.tcdg          flexible guide per template
//!   partitions/<id>.<lm>.json partitioned templates, one per LM
//!   index/entries.jsonl       masked annotations
//!   index/embeddings.bin      embedding matrix
//!   index/embedder.json       embedder configuration (dim + idf)

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use tecod_core::matcher::{HashEmbedder, TemplateIndex};
use tecod_core::{Guide, SqlTemplate};

/// One record per pairs.jsonl line: a labeled question/SQL pair with
/// optional pre-generated paraphrases of the question.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairRecord {
    pub nlq: String,
    pub sql: String,
    #[serde(default)]
    pub db_id: String,
    #[serde(default)]
    pub annotations: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoredTemplate {
    pub template: SqlTemplate,
    /// Question of the first pair that produced this template; reused as
    /// the sample query for offline partition compilation.
    pub sample_nlq: String,
    pub db_id: String,
    pub n_pairs: usize,
}

pub struct Store {
    pub root: PathBuf,
}

impl Store {
    pub fn new(root: &Path) -> Self {
        Store { root: root.to_path_buf() }
    }

    pub fn templates_path(&self) -> PathBuf {
        self.root.join("templates.jsonl")
    }

    pub fn guide_path(&self, template_id: &str) -> PathBuf {
        self.root.join("guides").join(format!("{template_id}.tcdg"))
    }

    pub fn partition_path(&self, template_id: &str, lm_id: &str) -> PathBuf {
        self.root.join("partitions").join(format!("{template_id}.{lm_id}.json"))
    }

    pub fn index_dir(&self) -> PathBuf {
        self.root.join("index")
    }

    pub fn embedder_path(&self) -> PathBuf {
        self.index_dir().join("embedder.json")
    }

    pub fn create_dirs(&self) -> Result<()> {
        std::fs::create_dir_all(self.root.join("guides"))?;
        std::fs::create_dir_all(self.root.join("partitions"))?;
        std::fs::create_dir_all(self.index_dir())?;
        Ok(())
    }

    pub fn write_templates(&self, templates: &[StoredTemplate]) -> Result<()> {
        let mut out = String::new();
        for t in templates {
            out.push_str(&serde_json::to_string(t)?);
            out.push('\n');
        }
        std::fs::write(self.templates_path(), out)?;
        Ok(())
    }

    pub fn load_templates(&self) -> Result<Vec<StoredTemplate>> {
        let path = self.templates_path();
        let data = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))?;
        data.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).context("parsing templates.jsonl"))
            .collect()
    }

    pub fn load_template(&self, template_id: &str) -> Result<StoredTemplate> {
        self.load_templates()?
            .into_iter()
            .find(|t| t.template.template_id == template_id)
            .with_context(|| format!("template {template_id} not in store"))
    }

    pub fn load_guide(&self, template_id: &str) -> Result<Guide> {
        let path = self.guide_path(template_id);
        Guide::load(&path).map_err(|e| anyhow::anyhow!("loading {}: {e}", path.display()))
    }

    pub fn save_embedder(&self, embedder: &HashEmbedder) -> Result<()> {
        std::fs::write(self.embedder_path(), serde_json::to_string(embedder)?)?;
        Ok(())
    }

    pub fn load_embedder(&self) -> Result<HashEmbedder> {
        let data = std::fs::read_to_string(self.embedder_path()).context("reading embedder.json")?;
        Ok(serde_json::from_str(&data)?)
    }

    pub fn load_index(&self) -> Result<TemplateIndex> {
        let embedder = Arc::new(self.load_embedder()?);
        TemplateIndex::load(&self.index_dir(), embedder)
            .map_err(|e| anyhow::anyhow!("loading index: {e}"))
    }
}
