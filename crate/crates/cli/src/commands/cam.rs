//! `cam`: grayscale saliency maps. Each image's feature at the hook layer
//! is projected onto its leading singular direction, min-max normalized,
//! upsampled to input resolution, and written as a binary PGM — one file
//! per (image, clean/adv).

use svdatk_core::models::slice_batch;
use svdatk_core::spectral::eigencam_map;

use crate::artifacts::load_batch;
use crate::commands::{attacks_dir, ensure_dir, load_model, out_dir, parse_arch};
use crate::config::RunConfig;
use crate::plot::{save_pgm, to_gray, upsample_nearest};
use crate::CliError;

pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    let arch = parse_arch(cfg.str("source"))?;
    let (model, _) = load_model(cfg, arch)?;
    let layer = cfg.str("layer");
    let feature_shape = model.layer_shape(layer)?.to_vec();
    if feature_shape.len() != 3 {
        return Err(CliError::Invalid(format!(
            "layer `{layer}` has shape {feature_shape:?}; saliency needs a C x H x W feature"
        )));
    }
    let (c, fh, fw) = (feature_shape[0], feature_shape[1], feature_shape[2]);

    let batch_path = {
        let explicit = cfg.str("batch_svd");
        if explicit.is_empty() {
            let acfg = crate::commands::attack_config_from(cfg)?;
            let label = crate::commands::attack_label(&acfg);
            let tag = if cfg.bool("svd")? { "svd" } else { "plain" };
            attacks_dir(cfg).join(format!("{arch}_{label}_{tag}.svda"))
        } else {
            std::path::PathBuf::from(explicit)
        }
    };
    if !batch_path.exists() {
        return Err(CliError::Invalid(format!(
            "{}: no such batch; run `svdatk attack` first or set `batch_svd`",
            batch_path.display()
        )));
    }
    let bf = load_batch(&batch_path)?;
    let shape = bf.batch.clean.shape().to_vec();
    let (h, w) = (shape[2], shape[3]);
    let count = cfg.usize("cam_images")?.min(shape[0]);
    if count == 0 {
        return Err(CliError::Invalid("cam_images must be positive".into()));
    }

    let dir = out_dir(cfg).join("cam");
    ensure_dir(&dir)?;
    let mut mean_diff = 0.0f64;
    for i in 0..count {
        let mut maps: Vec<Vec<u8>> = Vec::with_capacity(2);
        for (tag, tensor) in [("clean", &bf.batch.clean), ("adv", &bf.batch.adv)] {
            let one = slice_batch(tensor, i, i + 1);
            let feature = model.activation(&one, layer)?;
            let map = eigencam_map(feature.data(), c, fh, fw)?;
            let gray = upsample_nearest(&to_gray(&map), fw, fh, w, h);
            save_pgm(&dir.join(format!("{arch}_{i:03}_{tag}.pgm")), w, h, &gray)?;
            maps.push(gray);
        }
        let diff: f64 = maps[0]
            .iter()
            .zip(&maps[1])
            .map(|(&a, &b)| (f64::from(a) - f64::from(b)).abs())
            .sum::<f64>()
            / (w * h) as f64;
        mean_diff += diff / count as f64;
    }
    println!(
        "cam: {count} image(s) from {} at {layer} -> {} (mean |clean - adv| = {mean_diff:.2})",
        batch_path.display(),
        dir.display()
    );
    Ok(())
}
