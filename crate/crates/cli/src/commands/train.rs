//! `train`: fits every requested architecture on the train split, reports
//! test accuracy, and writes one checkpoint per model plus a metrics CSV
//! covering all of them.

use std::fmt::Write as _;

use svdatk_core::data::NUM_CLASSES;
use svdatk_core::models::{save_checkpoint, train, CheckpointMeta, LayerGraph, TrainConfig};

use crate::artifacts::write_atomic;
use crate::commands::{checkpoint_path, ensure_dir, load_split, model_seed, models_dir, parse_arch};
use crate::config::RunConfig;
use crate::CliError;

pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    let train_set = load_split(cfg, "train")?;
    let test_set = load_split(cfg, "test")?;
    let (tx, ty) = train_set.to_batch::<f32>();
    let (vx, vy) = test_set.to_batch::<f32>();
    ensure_dir(&models_dir(cfg))?;

    let master = cfg.u64("seed")?;
    let mut metrics_csv = String::from("model,epoch,train_acc,train_loss,test_acc\n");
    for name in cfg.list("models") {
        let arch = parse_arch(&name)?;
        let seed = model_seed(master, arch);
        let tc = TrainConfig {
            epochs: cfg.usize("epochs")?,
            lr: cfg.f64("lr")?,
            lr_decay: cfg.f64("lr_decay")?,
            batch_size: cfg.usize("batch_size")?,
            momentum: cfg.f64("sgd_momentum")?,
            seed,
        };
        let mut model = LayerGraph::<f32>::build(arch, NUM_CLASSES, seed);
        let m = train(&mut model, &tx, &ty, Some((&vx, &vy)), &tc)?;
        for e in 0..m.train_acc.len() {
            let _ = writeln!(
                metrics_csv,
                "{arch},{},{},{},{}",
                e + 1,
                m.train_acc[e],
                m.train_loss[e],
                m.test_acc.get(e).copied().unwrap_or(f64::NAN)
            );
        }
        let meta = CheckpointMeta {
            arch,
            num_classes: NUM_CLASSES,
            seed,
            epochs: tc.epochs,
            train_acc: m.final_train_acc(),
            test_acc: m.final_test_acc(),
        };
        let path = checkpoint_path(cfg, arch);
        save_checkpoint(&model, &meta, &path)?;
        println!(
            "train: {arch} train_acc {:.4} test_acc {:.4} -> {}",
            m.final_train_acc(),
            m.final_test_acc(),
            path.display()
        );
    }
    let metrics_path = models_dir(cfg).join("metrics.csv");
    write_atomic(&metrics_path, metrics_csv.as_bytes())?;
    println!("train: metrics -> {}", metrics_path.display());
    Ok(())
}
