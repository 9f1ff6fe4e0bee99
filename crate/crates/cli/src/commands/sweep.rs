//! `sweep`: re-crafts the configured attack across a grid on one axis
//! (fusion weight, kept rank, or hook layer), evaluates every point on
//! every target, and emits the table plus a rendered line plot. A no-hook
//! baseline is always included for reference.

use std::fmt;

use svdatk_core::attack::AttackConfig;
use svdatk_core::models::{ArchId, LayerGraph};

use crate::artifacts::{save_batch, write_attack_log, write_results_csv, ResultsRow};
use crate::commands::attack::{attack_pool, craft};
use crate::commands::eval::{per_image_success, rate};
use crate::commands::{
    attack_config_from, ensure_dir, hook_spec, load_model, out_dir, parse_arch, resolve_hook,
};
use crate::config::RunConfig;
use crate::plot::{render_line_plot, Series, PALETTE};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Beta,
    Topk,
    Layer,
}

impl Axis {
    pub fn as_str(&self) -> &'static str {
        match self {
            Axis::Beta => "beta",
            Axis::Topk => "topk",
            Axis::Layer => "layer",
        }
    }

    fn grid_key(&self) -> &'static str {
        match self {
            Axis::Beta => "beta_grid",
            Axis::Topk => "topk_grid",
            Axis::Layer => "layer_grid",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Applies one grid token to the hook, validating it against the model.
fn hooked_config(
    base: &AttackConfig,
    model: &LayerGraph<f32>,
    spec: &crate::commands::HookSpec,
    axis: Axis,
    token: &str,
) -> Result<AttackConfig, CliError> {
    let mut spec = spec.clone();
    match axis {
        Axis::Beta => {
            let beta: f64 = token.parse().map_err(|_| {
                CliError::Invalid(format!("beta grid value `{token}` is not a number"))
            })?;
            spec.beta = beta;
        }
        Axis::Topk => spec.k_token = token.to_string(),
        Axis::Layer => spec.layer = token.to_string(),
    }
    let mut acfg = base.clone();
    acfg.svd = Some(resolve_hook(model, &spec)?);
    acfg.validate()?;
    Ok(acfg)
}

pub fn run(cfg: &RunConfig, axis: Axis) -> Result<Vec<ResultsRow>, CliError> {
    let source_arch = parse_arch(cfg.str("source"))?;
    let (model, _) = load_model(cfg, source_arch)?;
    let source = source_arch.to_string();

    let target_names = cfg.list("targets");
    let mut targets: Vec<(ArchId, LayerGraph<f32>)> = Vec::new();
    for name in &target_names {
        let arch = parse_arch(name)?;
        targets.push((arch, load_model(cfg, arch)?.0));
    }
    if targets.is_empty() {
        return Err(CliError::Invalid("sweep needs at least one target".into()));
    }

    let grid = cfg.list(axis.grid_key());
    if grid.is_empty() {
        return Err(CliError::Invalid(format!("{} is empty", axis.grid_key())));
    }
    // Validate the whole grid up front so a bad tail value cannot waste a run.
    let spec = hook_spec(cfg)?.ok_or_else(|| {
        CliError::Invalid("sweep varies the spectral hook; set `svd = true`".into())
    })?;
    let base = attack_config_from(cfg)?;
    for token in &grid {
        hooked_config(&base, &model, &spec, axis, token)?;
    }

    let (images, labels) = attack_pool(cfg, cfg.usize("sweep_n")?)?;
    let dir = out_dir(cfg).join("sweep");
    ensure_dir(&dir)?;

    let mut rows: Vec<ResultsRow> = Vec::new();
    // No-hook baseline.
    let mut baseline_cfg = base.clone();
    baseline_cfg.svd = None;
    baseline_cfg.validate()?;
    let baseline = craft(&model, &source, &images, &labels, &baseline_cfg)?;
    let stem = format!("{source}_{}_baseline", baseline.info.attack);
    save_batch(&dir.join(format!("{stem}.svda")), &baseline)?;
    write_attack_log(&dir.join(format!("{stem}.log.csv")), &baseline)?;
    let mut baseline_rates = Vec::new();
    for (arch, target) in &targets {
        let (_, success) = per_image_success(target, &baseline.batch.adv, &baseline.batch.labels)?;
        let r = rate(&success);
        baseline_rates.push(r);
        rows.push(baseline.info.row(&arch.to_string(), r, labels.len()));
    }

    // Grid points.
    let mut series: Vec<Series> = targets
        .iter()
        .enumerate()
        .map(|(i, (arch, _))| Series {
            label: arch.to_string(),
            color: PALETTE[i % PALETTE.len()],
            values: Vec::new(),
            dashed: false,
        })
        .collect();
    for token in &grid {
        let acfg = hooked_config(&base, &model, &spec, axis, token)?;
        let bf = craft(&model, &source, &images, &labels, &acfg)?;
        let stem = format!("{source}_{}_{}_{token}", bf.info.attack, axis);
        save_batch(&dir.join(format!("{stem}.svda")), &bf)?;
        write_attack_log(&dir.join(format!("{stem}.log.csv")), &bf)?;
        for (i, (arch, target)) in targets.iter().enumerate() {
            let (_, success) = per_image_success(target, &bf.batch.adv, &bf.batch.labels)?;
            let r = rate(&success);
            series[i].values.push(r);
            rows.push(bf.info.row(&arch.to_string(), r, labels.len()));
        }
    }

    // Dashed flat lines mark each target's no-hook baseline.
    let mut all_series = series;
    for (i, (arch, _)) in targets.iter().enumerate() {
        all_series.push(Series {
            label: format!("{arch} baseline"),
            color: PALETTE[i % PALETTE.len()],
            values: vec![baseline_rates[i]; grid.len()],
            dashed: true,
        });
    }

    let csv_path = dir.join(format!("{axis}.csv"));
    write_results_csv(&csv_path, &rows)?;
    let plot_path = dir.join(format!("{axis}.ppm"));
    render_line_plot(&plot_path, &grid, &all_series)?;

    println!("sweep: axis {axis} over {:?} with source {source}", grid);
    for (i, s) in all_series.iter().enumerate() {
        println!("sweep: series {} = {}", i + 1, s.label);
    }
    crate::commands::eval::print_table(&rows);
    println!("sweep: table -> {}", csv_path.display());
    println!("sweep: plot  -> {}", plot_path.display());
    Ok(rows)
}

// ── Tests ───────────────────────────────────────────────────────────────
