//! `eval`: runs every adversarial batch against every target model and
//! emits the transfer matrix as CSV + JSON plus per-image logs. Clean
//! images are scored too (once per source/size), so each target's base
//! error sits next to the attack rows.

use std::collections::BTreeSet;
use std::path::PathBuf;

use svdatk_core::models::{ArchId, LayerGraph};

use crate::artifacts::{
    load_batch, write_eval_log, write_results_csv, write_results_json, BatchFile, ResultsRow,
};
use crate::commands::{attacks_dir, ensure_dir, load_model, out_dir, parse_arch};
use crate::config::RunConfig;
use crate::CliError;

/// Success = the target's argmax differs from the ground-truth label.
pub fn per_image_success(
    target: &LayerGraph<f32>,
    images: &svdatk_core::tensor::Tensor<f32>,
    labels: &[usize],
) -> Result<(Vec<usize>, Vec<bool>), CliError> {
    let preds = target.predict(images)?;
    let success = preds.iter().zip(labels).map(|(p, l)| p != l).collect();
    Ok((preds, success))
}

pub fn rate(success: &[bool]) -> f64 {
    success.iter().filter(|&&s| s).count() as f64 / success.len() as f64
}

/// Batch files to evaluate: explicit list, or every container under
/// `out/attacks` in sorted order.
fn batch_paths(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let listed = cfg.list("batches");
    if !listed.is_empty() {
        return Ok(listed.into_iter().map(PathBuf::from).collect());
    }
    let dir = attacks_dir(cfg);
    if !dir.exists() {
        return Err(CliError::Invalid(format!(
            "{}: no batches found; run `svdatk attack` first or pass `batches = ...`",
            dir.display()
        )));
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(crate::io_at(&dir))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "svda"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Invalid(format!(
            "{}: no .svda batches; run `svdatk attack` first",
            dir.display()
        )));
    }
    Ok(paths)
}

pub fn run(cfg: &RunConfig) -> Result<Vec<ResultsRow>, CliError> {
    let target_names = cfg.list("targets");
    if target_names.is_empty() {
        return Err(CliError::Invalid("eval needs at least one target".into()));
    }
    let mut targets: Vec<(ArchId, LayerGraph<f32>)> = Vec::new();
    for name in &target_names {
        let arch = parse_arch(name)?;
        targets.push((arch, load_model(cfg, arch)?.0));
    }

    let eval_dir = out_dir(cfg).join("eval");
    ensure_dir(&eval_dir)?;
    let include_clean = cfg.bool("include_clean")?;
    let mut rows: Vec<ResultsRow> = Vec::new();
    let mut clean_done: BTreeSet<(String, String, usize)> = BTreeSet::new();

    for path in batch_paths(cfg)? {
        let bf: BatchFile = load_batch(&path)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("batch").to_string();
        let n = bf.batch.labels.len();
        for (arch, model) in &targets {
            let target = arch.to_string();
            if include_clean && clean_done.insert((bf.info.source.clone(), target.clone(), n)) {
                let (_, success) = per_image_success(model, &bf.batch.clean, &bf.batch.labels)?;
                let mut row = bf.info.row(&target, rate(&success), n);
                row.attack = "clean".to_string();
                row.svd = false;
                row.k = None;
                row.beta = None;
                row.layer = None;
                rows.push(row);
            }
            let (preds, success) = per_image_success(model, &bf.batch.adv, &bf.batch.labels)?;
            write_eval_log(
                &eval_dir.join(format!("{stem}__{target}.log.csv")),
                &stem,
                &target,
                &bf.batch.labels,
                &preds,
            )?;
            rows.push(bf.info.row(&target, rate(&success), n));
        }
    }

    write_results_csv(&eval_dir.join("results.csv"), &rows)?;
    write_results_json(&eval_dir.join("results.json"), &rows)?;
    print_table(&rows);
    println!("eval: results -> {}", eval_dir.join("results.csv").display());
    Ok(rows)
}

/// Plain-text matrix; white-box cells (source == target) are starred.
pub fn print_table(rows: &[ResultsRow]) {
    println!(
        "{:<10} {:<10} {:<22} {:<5} {:>4} {:>6} {:<8} {:>12} {:>6}",
        "source", "target", "attack", "svd", "k", "beta", "layer", "success_rate", "n"
    );
    for r in rows {
        let mark = if r.source == r.target && r.attack != "clean" { "*" } else { " " };
        println!(
            "{:<10} {:<10} {:<22} {:<5} {:>4} {:>6} {:<8} {:>11.4}{} {:>6}",
            r.source,
            r.target,
            r.attack,
            r.svd,
            r.k.map_or("-".into(), |k| k.to_string()),
            r.beta.map_or("-".into(), |b| format!("{b}")),
            r.layer.as_deref().unwrap_or("-"),
            r.success_rate,
            mark,
            r.n
        );
    }
}
