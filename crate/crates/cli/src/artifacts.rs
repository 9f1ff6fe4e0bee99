//! On-disk artifacts: the results table (CSV + JSON), adversarial-batch
//! containers, per-image logs, and activation dumps. Every writer goes
//! through [`write_atomic`] so interrupted runs never leave half files.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use svdatk_core::attack::AdversarialBatch;
use svdatk_core::cka::ActivationSet;
use svdatk_core::container::{self, Container, Entry};
use svdatk_core::tensor::Tensor;

use crate::{io_at, CliError};

/// Exact header of every results CSV the harness emits.
pub const RESULTS_HEADER: &str = "source,target,attack,svd,k,beta,layer,success_rate,n,seed";

// ── Results table ───────────────────────────────────────────────────────

/// One evaluation outcome. `k`, `beta`, and `layer` are present only for
/// rows whose batch was crafted with the spectral hook; clean-image rows
/// and unhooked attacks leave them empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsRow {
    pub source: String,
    pub target: String,
    pub attack: String,
    pub svd: bool,
    pub k: Option<usize>,
    pub beta: Option<f64>,
    pub layer: Option<String>,
    pub success_rate: f64,
    pub n: usize,
    pub seed: u64,
}

pub fn write_results_csv(path: &Path, rows: &[ResultsRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        // serde-driven headers only appear with at least one record, so
        // write them by hand for empty tables.
        w.write_record(RESULTS_HEADER.split(','))?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Csv(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultsRow>, CliError> {
    let bytes = std::fs::read(path).map_err(io_at(path))?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

/// JSON mirror of the CSV table; white-box rows are flagged explicitly.
#[derive(Debug, Serialize)]
struct JsonRow<'a> {
    #[serde(flatten)]
    row: &'a ResultsRow,
    white_box: bool,
}

pub fn write_results_json(path: &Path, rows: &[ResultsRow]) -> Result<(), CliError> {
    let wrapped: Vec<JsonRow> = rows
        .iter()
        .map(|row| JsonRow { row, white_box: row.source == row.target })
        .collect();
    let mut bytes = serde_json::to_vec_pretty(&wrapped)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

// ── Adversarial batch files ─────────────────────────────────────────────

/// Everything the harness knows about a crafted batch besides the pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchInfo {
    pub source: String,
    /// Attack label, e.g. `mi-fgsm` or `mi-fgsm-di-ti`.
    pub attack: String,
    pub svd: bool,
    pub k: Option<usize>,
    pub beta: Option<f64>,
    pub layer: Option<String>,
    pub epsilon: f64,
    pub steps: usize,
    pub alpha: f64,
    pub mu: f64,
    pub seed: u64,
}

impl BatchInfo {
    /// Fills a results row for this batch evaluated on `target`.
    pub fn row(&self, target: &str, success_rate: f64, n: usize) -> ResultsRow {
        ResultsRow {
            source: self.source.clone(),
            target: target.to_string(),
            attack: self.attack.clone(),
            svd: self.svd,
            k: self.k,
            beta: self.beta,
            layer: self.layer.clone(),
            success_rate,
            n,
            seed: self.seed,
        }
    }
}

/// A batch container on disk: clean pixels, adversarial pixels, labels,
/// per-image distances and source-model predictions, plus [`BatchInfo`].
#[derive(Debug, Clone)]
pub struct BatchFile {
    pub info: BatchInfo,
    pub batch: AdversarialBatch<f32>,
    pub sample_ids: Vec<u32>,
    pub pred_before: Vec<usize>,
    pub pred_after: Vec<usize>,
}

pub fn save_batch(path: &Path, bf: &BatchFile) -> Result<(), CliError> {
    let b = &bf.batch;
    let shape = b.clean.shape().to_vec();
    let n = shape[0];
    let mut pairs = vec![
        ("kind".to_string(), "adv_batch".to_string()),
        ("source".to_string(), bf.info.source.clone()),
        ("attack".to_string(), bf.info.attack.clone()),
        ("svd".to_string(), bf.info.svd.to_string()),
        ("epsilon".to_string(), bf.info.epsilon.to_string()),
        ("steps".to_string(), bf.info.steps.to_string()),
        ("alpha".to_string(), bf.info.alpha.to_string()),
        ("mu".to_string(), bf.info.mu.to_string()),
        ("seed".to_string(), bf.info.seed.to_string()),
        ("n".to_string(), n.to_string()),
    ];
    if let Some(k) = bf.info.k {
        pairs.push(("k".to_string(), k.to_string()));
    }
    if let Some(beta) = bf.info.beta {
        pairs.push(("beta".to_string(), beta.to_string()));
    }
    if let Some(layer) = &bf.info.layer {
        pairs.push(("layer".to_string(), layer.clone()));
    }

    let clean_u8: Vec<u8> = b.clean.data().iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect();
    let mut clean = Entry::bytes("clean", clean_u8);
    clean.dims = shape.iter().map(|&d| d as u32).collect();

    let mut c = Container::new();
    c.push(Entry::bytes("meta", container::meta_to_bytes(&pairs)));
    c.push(clean);
    c.push(Entry::f32("adv", &shape, b.adv.data().to_vec()));
    c.push(Entry::u32s("labels", b.labels.iter().map(|&l| l as u32).collect()));
    c.push(Entry::f32("linf", &[n], b.linf.clone()));
    c.push(Entry::u32s("failed", b.failed.iter().map(|&i| i as u32).collect()));
    c.push(Entry::u32s("sample_ids", bf.sample_ids.clone()));
    c.push(Entry::u32s("pred_before", bf.pred_before.iter().map(|&p| p as u32).collect()));
    c.push(Entry::u32s("pred_after", bf.pred_after.iter().map(|&p| p as u32).collect()));
    c.save(path)?;
    Ok(())
}

pub fn load_batch(path: &Path) -> Result<BatchFile, CliError> {
    let c = Container::load(path)?;
    let pairs = container::meta_from_bytes(c.require_bytes("meta")?)?;
    let get = |key: &str| -> Result<&str, CliError> {
        container::meta_get(&pairs, key)
            .ok_or_else(|| CliError::Invalid(format!("{}: missing meta key `{key}`", path.display())))
    };
    let kind = get("kind")?;
    if kind != "adv_batch" {
        return Err(CliError::Invalid(format!(
            "{}: expected an adversarial batch, found kind `{kind}`",
            path.display()
        )));
    }
    let parse_f64 = |key: &str| -> Result<f64, CliError> {
        get(key)?.parse().map_err(|_| {
            CliError::Invalid(format!("{}: meta key `{key}` is not a number", path.display()))
        })
    };
    let info = BatchInfo {
        source: get("source")?.to_string(),
        attack: get("attack")?.to_string(),
        svd: get("svd")? == "true",
        k: match container::meta_get(&pairs, "k") {
            Some(v) => Some(v.parse().map_err(|_| {
                CliError::Invalid(format!("{}: meta key `k` is not an integer", path.display()))
            })?),
            None => None,
        },
        beta: match container::meta_get(&pairs, "beta") {
            Some(v) => Some(v.parse().map_err(|_| {
                CliError::Invalid(format!("{}: meta key `beta` is not a number", path.display()))
            })?),
            None => None,
        },
        layer: container::meta_get(&pairs, "layer").map(|s| s.to_string()),
        epsilon: parse_f64("epsilon")?,
        steps: parse_f64("steps")? as usize,
        alpha: parse_f64("alpha")?,
        mu: parse_f64("mu")?,
        seed: get("seed")?
            .parse()
            .map_err(|_| CliError::Invalid(format!("{}: bad seed", path.display())))?,
    };

    let clean_entry = c.require("clean")?;
    let dims: Vec<usize> = clean_entry.dims.iter().map(|&d| d as usize).collect();
    let clean_bytes = c.require_bytes("clean")?;
    let clean = Tensor::new(dims.clone(), clean_bytes.iter().map(|&b| b as f32).collect())?;
    let (adv_dims, adv_data) = c.require_f32("adv")?;
    let adv_dims: Vec<usize> = adv_dims.iter().map(|&d| d as usize).collect();
    let adv = Tensor::new(adv_dims, adv_data.to_vec())?;
    let labels: Vec<usize> = c.require_u32("labels")?.iter().map(|&l| l as usize).collect();
    let (_, linf) = c.require_f32("linf")?;
    let failed: Vec<usize> = c.require_u32("failed")?.iter().map(|&i| i as usize).collect();
    let sample_ids = c.require_u32("sample_ids")?.to_vec();
    let pred_before: Vec<usize> = c.require_u32("pred_before")?.iter().map(|&p| p as usize).collect();
    let pred_after: Vec<usize> = c.require_u32("pred_after")?.iter().map(|&p| p as usize).collect();

    let batch = AdversarialBatch {
        clean,
        adv,
        labels,
        linf: linf.to_vec(),
        failed,
        source_model: info.source.clone(),
    };
    Ok(BatchFile { info, batch, sample_ids, pred_before, pred_after })
}

// ── Per-image logs ──────────────────────────────────────────────────────

/// Attack log: `#`-prefixed header echoing the effective parameters, then
/// one CSV row per image.
pub fn write_attack_log(path: &Path, bf: &BatchFile) -> Result<(), CliError> {
    let mut s = String::new();
    for (key, value) in attack_log_header(&bf.info) {
        let _ = writeln!(s, "# {key} = {value}");
    }
    s.push_str("index,label,linf,pred_before,pred_after\n");
    for i in 0..bf.batch.labels.len() {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            i, bf.batch.labels[i], bf.batch.linf[i], bf.pred_before[i], bf.pred_after[i]
        );
    }
    write_atomic(path, s.as_bytes())
}

/// The `key = value` pairs echoed at the top of an attack log.
pub fn attack_log_header(info: &BatchInfo) -> Vec<(String, String)> {
    let mut pairs = vec![
        ("attack".to_string(), info.attack.clone()),
        ("source".to_string(), info.source.clone()),
        ("epsilon".to_string(), info.epsilon.to_string()),
        ("steps".to_string(), info.steps.to_string()),
        ("alpha".to_string(), info.alpha.to_string()),
        ("mu".to_string(), info.mu.to_string()),
        ("svd".to_string(), info.svd.to_string()),
        ("seed".to_string(), info.seed.to_string()),
    ];
    if let Some(k) = info.k {
        pairs.push(("k".to_string(), k.to_string()));
    }
    if let Some(beta) = info.beta {
        pairs.push(("beta".to_string(), beta.to_string()));
    }
    if let Some(layer) = &info.layer {
        pairs.push(("layer".to_string(), layer.clone()));
    }
    pairs
}

/// Evaluation log: one row per image with the target's prediction.
pub fn write_eval_log(
    path: &Path,
    batch_name: &str,
    target: &str,
    labels: &[usize],
    preds: &[usize],
) -> Result<(), CliError> {
    let mut s = String::new();
    let _ = writeln!(s, "# batch = {batch_name}");
    let _ = writeln!(s, "# target = {target}");
    s.push_str("index,label,pred,success\n");
    for i in 0..labels.len() {
        let hit = u8::from(preds[i] != labels[i]);
        let _ = writeln!(s, "{},{},{},{}", i, labels[i], preds[i], hit);
    }
    write_atomic(path, s.as_bytes())
}

/// Reads back a per-image log (either kind): header pairs plus data rows.
pub fn read_log(path: &Path) -> Result<(Vec<(String, String)>, Vec<Vec<String>>), CliError> {
    let text = std::fs::read_to_string(path).map_err(io_at(path))?;
    let mut pairs = Vec::new();
    let mut rows = Vec::new();
    let mut saw_header = false;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once('=') {
                pairs.push((k.trim().to_string(), v.trim().to_string()));
            }
            continue;
        }
        if !saw_header {
            saw_header = true; // column names
            continue;
        }
        rows.push(line.split(',').map(|s| s.to_string()).collect());
    }
    Ok((pairs, rows))
}

// ── Activation dumps ────────────────────────────────────────────────────

/// Writes an activation matrix in the checkpoint container format: an
/// `n x d` f32 entry plus the sample-id table.
pub fn save_activations(path: &Path, set: &ActivationSet) -> Result<(), CliError> {
    let pairs = vec![
        ("kind".to_string(), "activations".to_string()),
        ("model".to_string(), set.model_id.clone()),
        ("layer".to_string(), set.layer.clone()),
        ("n".to_string(), set.n.to_string()),
        ("d".to_string(), set.d.to_string()),
    ];
    let mut c = Container::new();
    c.push(Entry::bytes("meta", container::meta_to_bytes(&pairs)));
    let matrix: Vec<f32> = set.matrix.iter().map(|&v| v as f32).collect();
    c.push(Entry::f32("matrix", &[set.n, set.d], matrix));
    c.push(Entry::u32s("sample_ids", set.sample_ids.clone()));
    c.save(path)?;
    Ok(())
}

// ── Atomic writes ───────────────────────────────────────────────────────

/// Writes to a temp sibling, then renames over the destination.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = container::tmp_sibling(path);
    std::fs::write(&tmp, bytes).map_err(io_at(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_at(path))?;
    Ok(())
}

// ── Tests ───────────────────────────────────────────────────────────────
