//! Calibration probe for the dataset generator: trains architectures on
//! the generated corpus and reports clean accuracy, white-box success, and
//! transfer rates, so generator hardness can be tuned against the targets
//! (clean accuracy >= 0.90, eps=16 white-box success >= 0.90).
//!
//! Run with `cargo run --release -p svdatk-core --example calibrate`
//! (add `--quick` for a two-model, short-training pass).

use svdatk_core::attack::{run_attack, success_rate, AttackConfig, SvdHook};
use svdatk_core::data::generate_range;
use svdatk_core::models::{slice_batch, train, ArchId, LayerGraph, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let quick = args.iter().any(|a| a == "--quick");
    let train_n = if quick { 600 } else { 1200 };
    let epochs = if quick { 6 } else { TrainConfig::default().epochs };
    let only: Option<ArchId> = args
        .iter()
        .position(|a| a == "--arch")
        .and_then(|i| args.get(i + 1))
        .map(|s| s.parse::<ArchId>().expect("unknown arch"));
    let default_archs: &[ArchId] =
        if quick { &[ArchId::ConvnetA, ArchId::ConvnetB] } else { &ArchId::ALL };
    let archs: Vec<ArchId> = match only {
        Some(a) => vec![a],
        None => default_archs.to_vec(),
    };

    let (tx, ty) = generate_range(0, 0, train_n).to_batch::<f32>();
    let (vx, vy) = generate_range(0, 1200, 300).to_batch::<f32>();
    let (ex, ey) = generate_range(0, 1500, 500).to_batch::<f32>();

    let mut models = Vec::new();
    for &arch in &archs {
        let idx = ArchId::ALL.iter().position(|a| *a == arch).unwrap();
        let seed = 101 * (idx as u64 + 1);
        let mut m = LayerGraph::<f32>::build(arch, 10, seed);
        let cfg = TrainConfig { epochs, seed, ..TrainConfig::default() };
        let t0 = std::time::Instant::now();
        let metrics = train(&mut m, &tx, &ty, Some((&vx, &vy)), &cfg).unwrap();
        println!(
            "{}: train acc {:.3}, test acc {:.3}, eval acc {:.3} in {:.0?}",
            arch.as_str(),
            metrics.final_train_acc(),
            metrics.final_test_acc(),
            m.accuracy(&ex, &ey).unwrap(),
            t0.elapsed()
        );
        models.push((arch, m));
    }

    let n = 100usize;
    let x = slice_batch(&ex, 0, n);
    let y = &ey[..n];
    for (arch, m) in &models {
        for (label, svd) in [("plain ", None), ("hooked", Some(SvdHook::default()))] {
            let cfg = AttackConfig { svd, ..AttackConfig::default() };
            let t0 = std::time::Instant::now();
            let batch = run_attack(m, &x, y, &cfg).unwrap();
            let wb = success_rate(m, &batch).unwrap();
            print!("{} {label}: white-box {wb:.2}", arch.as_str());
            for (ta, tm) in &models {
                if ta != arch {
                    let preds = tm.predict(&batch.adv).unwrap();
                    let r = preds.iter().zip(y).filter(|(p, l)| p != l).count() as f64
                        / n as f64;
                    print!("  ->{} {r:.2}", ta.as_str());
                }
            }
            println!("  ({:.0?})", t0.elapsed());
        }
    }
}
