//! `gen-data`: writes the three synthetic-shapes splits. The splits are
//! disjoint windows of one virtual image sequence keyed by the master
//! seed, so regenerating any split is reproducible in isolation.

use svdatk_core::data::{self, NUM_CLASSES};

use crate::commands::{ensure_dir, split_paths};
use crate::config::RunConfig;
use crate::CliError;

pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    let seed = cfg.u64("seed")?;
    let train_n = cfg.usize("train_n")?;
    let test_n = cfg.usize("test_n")?;
    let eval_n = cfg.usize("eval_n")?;
    for (split, n) in [("train", train_n), ("test", test_n), ("eval", eval_n)] {
        if n == 0 {
            return Err(CliError::Invalid(format!("{split}_n must be positive")));
        }
    }

    let dir = std::path::PathBuf::from(cfg.str("data_dir"));
    ensure_dir(&dir)?;
    let mut start = 0usize;
    for (split, n) in [("train", train_n), ("test", test_n), ("eval", eval_n)] {
        let set = data::generate_range(seed, start, n);
        let (images, labels) = split_paths(cfg, split);
        set.save(&images, &labels)?;
        let mut histogram = [0usize; NUM_CLASSES];
        for i in 0..set.n {
            histogram[set.label(i)] += 1;
        }
        println!(
            "gen-data: {split} x{n} -> {} (classes {histogram:?})",
            images.display()
        );
        start += n;
    }
    Ok(())
}
