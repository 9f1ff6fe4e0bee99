//! Subcommand implementations plus the plumbing they share: workspace
//! paths, checkpoint/dataset loading, and attack-config assembly.

pub mod attack;
pub mod cam;
pub mod cka;
pub mod eval;
pub mod gen_data;
pub mod sweep;
pub mod train;

use std::path::{Path, PathBuf};

use svdatk_core::attack::{AttackConfig, GradMode, Method, SvdHook, Transform};
use svdatk_core::data::Dataset;
use svdatk_core::models::{ArchId, CheckpointMeta, LayerGraph, load_checkpoint};

use crate::config::RunConfig;
use crate::CliError;

// ── Workspace layout ────────────────────────────────────────────────────

pub fn out_dir(cfg: &RunConfig) -> PathBuf {
    PathBuf::from(cfg.str("out"))
}

pub fn models_dir(cfg: &RunConfig) -> PathBuf {
    out_dir(cfg).join("models")
}

pub fn attacks_dir(cfg: &RunConfig) -> PathBuf {
    out_dir(cfg).join("attacks")
}

pub fn checkpoint_path(cfg: &RunConfig, arch: ArchId) -> PathBuf {
    models_dir(cfg).join(format!("{arch}.svda"))
}

pub fn split_paths(cfg: &RunConfig, split: &str) -> (PathBuf, PathBuf) {
    let dir = PathBuf::from(cfg.str("data_dir"));
    (dir.join(format!("{split}.svdd")), dir.join(format!("{split}.svdl")))
}

pub fn load_split(cfg: &RunConfig, split: &str) -> Result<Dataset, CliError> {
    let (images, labels) = split_paths(cfg, split);
    if !images.exists() {
        return Err(CliError::Invalid(format!(
            "{}: no such dataset file; run `svdatk gen-data` first",
            images.display()
        )));
    }
    Ok(Dataset::load(&images, &labels)?)
}

pub fn parse_arch(name: &str) -> Result<ArchId, CliError> {
    name.parse::<ArchId>().map_err(CliError::Model)
}

pub fn load_model(cfg: &RunConfig, arch: ArchId) -> Result<(LayerGraph<f32>, CheckpointMeta), CliError> {
    let path = checkpoint_path(cfg, arch);
    if !path.exists() {
        return Err(CliError::Invalid(format!(
            "{}: no such checkpoint; run `svdatk train` first",
            path.display()
        )));
    }
    Ok(load_checkpoint(&path)?)
}

/// Per-model weight/shuffle seed, derived from the master seed so sibling
/// architectures never share an init stream.
pub fn model_seed(master: u64, arch: ArchId) -> u64 {
    let idx = ArchId::ALL.iter().position(|a| *a == arch).unwrap_or(0) as u64;
    master.wrapping_add(101 * (idx + 1))
}

pub fn ensure_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(crate::io_at(path))
}

// ── Attack-config assembly ──────────────────────────────────────────────

/// Hook request before the rank token is resolved against a model.
#[derive(Debug, Clone)]
pub struct HookSpec {
    pub layer: String,
    pub k_token: String,
    pub beta: f64,
    pub grad_mode: GradMode,
    pub gap_eps: f64,
}

pub fn hook_spec(cfg: &RunConfig) -> Result<Option<HookSpec>, CliError> {
    if !cfg.bool("svd")? {
        return Ok(None);
    }
    Ok(Some(HookSpec {
        layer: cfg.str("layer").to_string(),
        k_token: cfg.str("k").to_string(),
        beta: cfg.f64("beta")?,
        grad_mode: cfg
            .str("grad_mode")
            .parse::<GradMode>()
            .map_err(CliError::Attack)?,
        gap_eps: cfg.f64("gap_eps")?,
    }))
}

/// Resolves `full` (or a number) against the hook layer's feature shape.
pub fn resolve_k(model: &LayerGraph<f32>, layer: &str, token: &str) -> Result<usize, CliError> {
    let shape = model.layer_shape(layer)?.to_vec();
    if shape.len() != 3 {
        return Err(CliError::Invalid(format!(
            "layer `{layer}` has shape {shape:?}; the spectral hook needs a C x H x W feature"
        )));
    }
    let m = shape[0].min(shape[1] * shape[2]);
    if token == "full" {
        return Ok(m);
    }
    let k: usize = token.parse().map_err(|_| {
        CliError::Invalid(format!("k must be a positive integer or `full`, got `{token}`"))
    })?;
    if k == 0 {
        return Err(CliError::Invalid("k must be at least 1".into()));
    }
    Ok(k)
}

pub fn resolve_hook(model: &LayerGraph<f32>, spec: &HookSpec) -> Result<SvdHook, CliError> {
    Ok(SvdHook {
        layer: spec.layer.clone(),
        k: resolve_k(model, &spec.layer, &spec.k_token)?,
        beta: spec.beta,
        grad_mode: spec.grad_mode,
        gap_eps: spec.gap_eps,
    })
}

/// Builds the transform list from config keys; token order in the config
/// does not matter, the attack composes them in its fixed order.
pub fn transforms_from(cfg: &RunConfig) -> Result<Vec<Transform>, CliError> {
    let mut out = Vec::new();
    for token in cfg.list("transforms") {
        let t = match token.as_str() {
            "di" => Transform::Di { p: cfg.f64("di_p")? },
            "ti" => Transform::Ti { kernel: cfg.usize("ti_kernel")? },
            "si" => Transform::Si { copies: cfg.usize("si_copies")? },
            "vt" => Transform::Vt {
                spread: cfg.f64("vt_spread")?,
                samples: cfg.usize("vt_samples")?,
            },
            other => {
                return Err(CliError::Invalid(format!(
                    "unknown transform `{other}` (expected di, ti, si, vt)"
                )))
            }
        };
        out.push(t);
    }
    Ok(out)
}

/// Attack config from the run config, without the hook (resolved later
/// against the source model).
pub fn attack_config_from(cfg: &RunConfig) -> Result<AttackConfig, CliError> {
    let method = cfg.str("method").parse::<Method>().map_err(CliError::Attack)?;
    let acfg = AttackConfig {
        method,
        epsilon: cfg.f64("epsilon")?,
        steps: cfg.usize("steps")?,
        alpha: cfg.opt_f64("alpha")?,
        momentum: cfg.f64("mu")?,
        transforms: transforms_from(cfg)?,
        svd: None,
        seed: cfg.u64("seed")?,
    };
    Ok(acfg)
}

/// Human/file label for an attack: the method plus its transforms in the
/// composition's canonical order.
pub fn attack_label(acfg: &AttackConfig) -> String {
    let mut label = acfg.method.as_str().to_string();
    for (tag, present) in [
        ("si", acfg.transforms.iter().any(|t| matches!(t, Transform::Si { .. }))),
        ("di", acfg.transforms.iter().any(|t| matches!(t, Transform::Di { .. }))),
        ("ti", acfg.transforms.iter().any(|t| matches!(t, Transform::Ti { .. }))),
        ("vt", acfg.transforms.iter().any(|t| matches!(t, Transform::Vt { .. }))),
    ] {
        if present {
            label.push('-');
            label.push_str(tag);
        }
    }
    label
}

// ── Tests ───────────────────────────────────────────────────────────────
