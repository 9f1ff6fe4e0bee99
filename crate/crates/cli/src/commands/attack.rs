//! `attack`: crafts one adversarial batch on the configured source model
//! over the head of the eval split, then writes the batch container and a
//! per-image log whose header echoes every effective parameter.

use std::path::PathBuf;

use svdatk_core::attack::{run_attack, AttackConfig};
use svdatk_core::models::LayerGraph;
use svdatk_core::tensor::Tensor;

use crate::artifacts::{attack_log_header, save_batch, write_attack_log, BatchFile, BatchInfo};
use crate::commands::{
    attack_config_from, attack_label, attacks_dir, ensure_dir, hook_spec, load_model, load_split,
    parse_arch, resolve_hook,
};
use crate::config::RunConfig;
use crate::CliError;

/// Runs the full attack pipeline on `(images, labels)` and bundles the
/// result with source-model predictions. `acfg.svd` must already be
/// resolved.
pub fn craft(
    model: &LayerGraph<f32>,
    source: &str,
    images: &Tensor<f32>,
    labels: &[usize],
    acfg: &AttackConfig,
) -> Result<BatchFile, CliError> {
    let batch = run_attack(model, images, labels, acfg)?;
    let pred_before = model.predict(&batch.clean)?;
    let pred_after = model.predict(&batch.adv)?;
    let hook = acfg.svd.as_ref();
    let info = BatchInfo {
        source: source.to_string(),
        attack: attack_label(acfg),
        svd: hook.is_some(),
        k: hook.map(|h| h.k),
        beta: hook.map(|h| h.beta),
        layer: hook.map(|h| h.layer.clone()),
        epsilon: acfg.epsilon,
        steps: acfg.steps,
        alpha: acfg.alpha_value(),
        mu: acfg.momentum,
        seed: acfg.seed,
    };
    let n = labels.len();
    Ok(BatchFile {
        info,
        batch,
        sample_ids: (0..n as u32).collect(),
        pred_before,
        pred_after,
    })
}

/// File stem for a batch: `<source>_<attack>_<svd|plain>`.
pub fn batch_stem(info: &BatchInfo) -> String {
    format!("{}_{}_{}", info.source, info.attack, if info.svd { "svd" } else { "plain" })
}

/// Takes the first `n` eval images as the attack pool.
pub fn attack_pool(cfg: &RunConfig, n: usize) -> Result<(Tensor<f32>, Vec<usize>), CliError> {
    let eval_set = load_split(cfg, "eval")?;
    if n == 0 || n > eval_set.n {
        return Err(CliError::Invalid(format!(
            "attack needs 1..={} images from the eval split, got {n}",
            eval_set.n
        )));
    }
    let (x, y) = eval_set.slice(0, n).to_batch::<f32>();
    Ok((x, y))
}

pub fn run(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let arch = parse_arch(cfg.str("source"))?;
    let (model, meta) = load_model(cfg, arch)?;
    let mut acfg = attack_config_from(cfg)?;
    if let Some(spec) = hook_spec(cfg)? {
        acfg.svd = Some(resolve_hook(&model, &spec)?);
    }
    acfg.validate()?;
    let (images, labels) = attack_pool(cfg, cfg.usize("attack_n")?)?;
    let bf = craft(&model, &arch.to_string(), &images, &labels, &acfg)?;

    let dir = attacks_dir(cfg);
    ensure_dir(&dir)?;
    let stem = batch_stem(&bf.info);
    let batch_path = dir.join(format!("{stem}.svda"));
    let log_path = dir.join(format!("{stem}.log.csv"));
    save_batch(&batch_path, &bf)?;
    write_attack_log(&log_path, &bf)?;

    for (key, value) in attack_log_header(&bf.info) {
        println!("attack: {key} = {value}");
    }
    let n = bf.batch.labels.len();
    let hits = bf
        .pred_after
        .iter()
        .zip(&bf.batch.labels)
        .filter(|(p, l)| p != l)
        .count();
    println!(
        "attack: source {} (test_acc {:.4}) white-box success {}/{} max_linf {:.3} failed {}",
        arch,
        meta.test_acc,
        hits,
        n,
        bf.batch.max_linf(),
        bf.batch.failed.len()
    );
    println!("attack: batch -> {}", batch_path.display());
    println!("attack: log   -> {}", log_path.display());
    Ok(batch_path)
}
