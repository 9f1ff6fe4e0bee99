use svdatk_core::data;
use svdatk_core::models::{train, ArchId, LayerGraph, TrainConfig};

// Slow; run explicitly with --ignored to inspect learning curves.
#[test]
#[ignore]
fn training_curves_all_architectures() {
    let n_train = 1200;
    let n_test = 300;
    let train_set = data::generate_range(42, 0, n_train);
    let test_set = data::generate_range(42, n_train, n_test);
    let (tx, ty) = train_set.to_batch::<f32>();
    let (vx, vy) = test_set.to_batch::<f32>();
    for arch in [ArchId::ConvnetA, ArchId::ConvnetB, ArchId::ConvnetC] {
        let t0 = std::time::Instant::now();
        let mut m = LayerGraph::<f32>::build(arch, 10, 1);
        let cfg = TrainConfig::default();
        let metrics = train(&mut m, &tx, &ty, Some((&vx, &vy)), &cfg).unwrap();
        println!(
            "{arch}: {:.1}s  train_acc {:?}  test_acc {:?}  loss {:?}",
            t0.elapsed().as_secs_f64(),
            metrics.train_acc.iter().map(|a| (a * 100.0).round()).collect::<Vec<_>>(),
            metrics.test_acc.iter().map(|a| (a * 100.0).round()).collect::<Vec<_>>(),
            metrics.train_loss.iter().map(|l| (l * 100.0).round() / 100.0).collect::<Vec<_>>(),
        );
    }
}
