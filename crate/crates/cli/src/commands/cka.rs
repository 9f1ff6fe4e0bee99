//! `cka`: representation-similarity reports. The layerwise report tracks
//! how far adversarial activations drift from clean ones across the
//! source model's depth; the cross-model report compares source and
//! target activations of the same inputs at the pooled feature and the
//! logits, for clean images and both batch variants.

use std::fmt::Write as _;
use std::path::PathBuf;

use svdatk_core::cka::{cka_crossmodel, cka_layerwise, collect_activations, CkaReport};
use svdatk_core::models::{ArchId, LayerGraph};
use svdatk_core::tensor::Tensor;

use crate::artifacts::{load_batch, save_activations, write_atomic, BatchFile};
use crate::commands::{attacks_dir, ensure_dir, load_model, out_dir, parse_arch};
use crate::config::RunConfig;
use crate::CliError;

/// Layers of the cross-model comparison: the pooled feature and the logits.
pub const CROSS_LAYERS: [&str; 2] = ["pool", "fc"];

/// Resolves a batch path: explicit config value, or the attack command's
/// default location for the current config.
fn batch_path(cfg: &RunConfig, key: &str, svd: bool) -> Result<PathBuf, CliError> {
    let explicit = cfg.str(key);
    if !explicit.is_empty() {
        return Ok(PathBuf::from(explicit));
    }
    let acfg = crate::commands::attack_config_from(cfg)?;
    let label = crate::commands::attack_label(&acfg);
    let stem = format!("{}_{}_{}", cfg.str("source"), label, if svd { "svd" } else { "plain" });
    Ok(attacks_dir(cfg).join(format!("{stem}.svda")))
}

fn load_batch_checked(path: &PathBuf, want_svd: bool) -> Result<BatchFile, CliError> {
    if !path.exists() {
        let flag = if want_svd { "true" } else { "false" };
        return Err(CliError::Invalid(format!(
            "{}: no such batch; run `svdatk attack` with `svd = {flag}` first, or point \
             `batch_{}` at a file",
            path.display(),
            if want_svd { "svd" } else { "plain" }
        )));
    }
    let bf = load_batch(path)?;
    if bf.info.svd != want_svd {
        return Err(CliError::Invalid(format!(
            "{}: expected a batch with svd = {want_svd}, found svd = {}",
            path.display(),
            bf.info.svd
        )));
    }
    Ok(bf)
}

fn report_csv(header: &str, rows: impl Iterator<Item = String>) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for row in rows {
        s.push_str(&row);
        s.push('\n');
    }
    s
}

pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    let source_arch = parse_arch(cfg.str("source"))?;
    let (source_model, _) = load_model(cfg, source_arch)?;
    let source = source_arch.to_string();

    let svd_batch = load_batch_checked(&batch_path(cfg, "batch_svd", true)?, true)?;
    let plain_batch = load_batch_checked(&batch_path(cfg, "batch_plain", false)?, false)?;
    if svd_batch.sample_ids != plain_batch.sample_ids
        || svd_batch.batch.clean.data() != plain_batch.batch.clean.data()
    {
        return Err(CliError::Invalid(
            "the two batches cover different images; craft both over the same pool".into(),
        ));
    }
    let clean = &svd_batch.batch.clean;
    let variants: [(&str, &Tensor<f32>); 3] = [
        ("clean", clean),
        ("adv_no_svd", &plain_batch.batch.adv),
        ("adv_svd", &svd_batch.batch.adv),
    ];

    let dir = out_dir(cfg).join("cka");
    ensure_dir(&dir)?;

    // Layerwise drift on the source model.
    let layer_names = cfg.list("cka_layers");
    let layers: Vec<&str> = layer_names.iter().map(|s| s.as_str()).collect();
    let mut layerwise = CkaReport::default();
    for (variant, adv) in &variants {
        let mut rep = cka_layerwise(&source_model, clean, adv, &layers, variant)?;
        layerwise.rows.append(&mut rep.rows);
    }
    let layerwise_path = dir.join(format!("layerwise_{source}.csv"));
    write_atomic(
        &layerwise_path,
        report_csv(
            "layer,variant,value",
            layerwise.rows.iter().map(|r| format!("{},{},{}", r.subject, r.variant, r.value)),
        )
        .as_bytes(),
    )?;

    // Cross-model similarity at pool/fc for every target.
    let mut cross_csv_rows: Vec<String> = Vec::new();
    let mut target_models: Vec<(ArchId, LayerGraph<f32>)> = Vec::new();
    for name in cfg.list("targets") {
        let arch = parse_arch(&name)?;
        let (model, _) = load_model(cfg, arch)?;
        let rep = cka_crossmodel(&source_model, &model, &variants, &CROSS_LAYERS)?;
        for r in &rep.rows {
            cross_csv_rows.push(format!("{arch},{},{},{}", r.subject, r.variant, r.value));
        }
        target_models.push((arch, model));
    }
    let cross_path = dir.join(format!("crossmodel_{source}.csv"));
    write_atomic(
        &cross_path,
        report_csv("target,layer,variant,value", cross_csv_rows.into_iter()).as_bytes(),
    )?;

    // Activation dumps in the checkpoint container format.
    if cfg.bool("dump_activations")? {
        let mut models: Vec<(String, &LayerGraph<f32>)> = vec![(source.clone(), &source_model)];
        for (arch, model) in &target_models {
            let name = arch.to_string();
            if !models.iter().any(|(n, _)| *n == name) {
                models.push((name, model));
            }
        }
        for (name, model) in &models {
            for layer in CROSS_LAYERS {
                for (variant, tensor) in &variants {
                    let mut set =
                        collect_activations(*model, tensor, layer, Some(&svd_batch.sample_ids))?;
                    set.model_id = name.clone();
                    save_activations(
                        &dir.join(format!("act_{name}_{layer}_{variant}.svda")),
                        &set,
                    )?;
                }
            }
        }
    }

    let mut summary = String::new();
    let _ = writeln!(summary, "cka: layerwise (clean vs variant) on {source}");
    for r in &layerwise.rows {
        let _ = writeln!(summary, "cka:   {:<8} {:<11} {:.4}", r.subject, r.variant, r.value);
    }
    print!("{summary}");
    println!("cka: layerwise  -> {}", layerwise_path.display());
    println!("cka: crossmodel -> {}", cross_path.display());
    Ok(())
}
