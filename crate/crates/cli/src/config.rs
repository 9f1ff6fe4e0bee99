//! Flat `key = value` run configuration.
//!
//! Every knob the harness understands is listed in [`KEYS`] with its
//! default and a one-line description; unknown keys are rejected so typos
//! fail loudly instead of silently running defaults. Files may contain
//! blank lines and `#` comments (full-line or trailing). Command-line
//! values override file values.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::{io_at, CliError};

/// `(key, default, description)` for every recognized config key.
pub const KEYS: &[(&str, &str, &str)] = &[
    // Paths and global knobs.
    ("data_dir", "data", "directory holding the generated dataset splits"),
    ("out", "out", "output directory for all artifacts"),
    ("seed", "0", "master seed; data, weights, and attacks derive from it"),
    ("threads", "0", "worker threads (0 = library default)"),
    // gen-data.
    ("train_n", "1200", "training images written by gen-data"),
    ("test_n", "300", "held-out test images written by gen-data"),
    ("eval_n", "500", "attack-pool images written by gen-data"),
    // train.
    ("models", "convnet_a,convnet_b,convnet_c", "architectures to train / evaluate"),
    ("epochs", "16", "training epochs"),
    ("lr", "0.02", "initial learning rate"),
    ("lr_decay", "0.85", "multiplicative learning-rate decay per epoch"),
    ("batch_size", "32", "SGD minibatch size"),
    ("sgd_momentum", "0.9", "SGD momentum"),
    // attack.
    ("source", "convnet_a", "architecture adversarial examples are crafted on"),
    ("attack_n", "500", "number of images attacked (head of the eval split)"),
    ("method", "mi-fgsm", "attack family: i-fgsm | mi-fgsm | ni-fgsm"),
    ("epsilon", "16", "L-inf budget in pixel units"),
    ("steps", "10", "attack iterations"),
    ("alpha", "", "step size; empty = epsilon / steps"),
    ("mu", "1", "momentum decay for mi-fgsm / ni-fgsm"),
    ("transforms", "", "comma list out of di,ti,si,vt (empty = none)"),
    ("di_p", "0.5", "probability of the diversity resize-pad per step"),
    ("ti_kernel", "7", "odd length of the translation-smoothing kernel"),
    ("si_copies", "5", "number of dyadic scale copies"),
    ("vt_spread", "1.5", "variance-tuning neighborhood half-width, in units of epsilon"),
    ("vt_samples", "20", "variance-tuning samples per step"),
    ("svd", "true", "splice the rank-k feature branch into the forward pass"),
    ("layer", "block3", "feature layer the spectral hook attaches to"),
    ("k", "1", "rank kept by the truncation; `full` = min(C, H*W)"),
    ("beta", "0.5", "blend weight of the raw-feature logits (1-beta on the truncated branch)"),
    ("grad_mode", "full", "truncation gradient: full | detached"),
    ("gap_eps", "1e-6", "spectral-gap clamp inside the truncation adjoint"),
    // eval.
    ("targets", "convnet_a,convnet_b,convnet_c", "victim models for eval / sweep"),
    ("batches", "", "adversarial batch files for eval; empty = out/attacks/*.svda"),
    ("include_clean", "true", "also report each target's error on the clean images"),
    // sweep.
    ("beta_grid", "0,0.25,0.5,0.75,1", "grid for `sweep --axis beta`"),
    ("topk_grid", "1,2,4,8,full", "grid for `sweep --axis topk`"),
    ("layer_grid", "block1,block2,block3,block4", "grid for `sweep --axis layer`"),
    ("sweep_n", "100", "images attacked per sweep grid point"),
    // cka.
    ("cka_layers", "block1,block2,block3,block4,pool,fc", "layers in the layerwise report"),
    ("batch_svd", "", "hooked batch for cka/cam; empty = the attack command's default path"),
    ("batch_plain", "", "unhooked batch for cka; empty = the attack command's default path"),
    ("dump_activations", "true", "write activation matrices next to the cka reports"),
    // cam.
    ("cam_images", "8", "images rendered by cam"),
];

// ── RunConfig ───────────────────────────────────────────────────────────

/// Parsed configuration: defaults, overlaid by a file, overlaid by CLI
/// values, in that order.
#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let values = KEYS.iter().map(|(k, d, _)| (k.to_string(), d.to_string())).collect();
        RunConfig { values }
    }
}

impl RunConfig {
    /// Overlays `key = value` lines from a file onto the current values.
    pub fn load_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path).map_err(io_at(path))?;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let stripped = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let stripped = stripped.trim();
            if stripped.is_empty() {
                continue;
            }
            let Some((key, value)) = stripped.split_once('=') else {
                return Err(CliError::Config {
                    line,
                    message: format!("expected `key = value`, got `{}`", raw.trim()),
                });
            };
            self.set(key.trim(), value.trim()).map_err(|e| CliError::Config {
                line,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// Sets one value; the key must be in [`KEYS`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        if !KEYS.iter().any(|(k, _, _)| *k == key) {
            return Err(CliError::Invalid(format!(
                "unknown config key `{key}` (see the key table in the README)"
            )));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Parses a CLI `KEY=VALUE` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), CliError> {
        let Some((key, value)) = pair.split_once('=') else {
            return Err(CliError::Invalid(format!("--set expects KEY=VALUE, got `{pair}`")));
        };
        self.set(key.trim(), value.trim())
    }

    pub fn str(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("config key `{key}` is not in the key table"))
    }

    pub fn u64(&self, key: &str) -> Result<u64, CliError> {
        self.str(key).parse().map_err(|_| self.bad(key, "unsigned integer"))
    }

    pub fn usize(&self, key: &str) -> Result<usize, CliError> {
        self.str(key).parse().map_err(|_| self.bad(key, "unsigned integer"))
    }

    pub fn f64(&self, key: &str) -> Result<f64, CliError> {
        self.str(key).parse().map_err(|_| self.bad(key, "number"))
    }

    pub fn bool(&self, key: &str) -> Result<bool, CliError> {
        match self.str(key) {
            "true" | "1" => Ok(true),
            "false" | "0" => Ok(false),
            _ => Err(self.bad(key, "boolean (true/false)")),
        }
    }

    /// Empty string means "not set".
    pub fn opt_f64(&self, key: &str) -> Result<Option<f64>, CliError> {
        let v = self.str(key);
        if v.is_empty() {
            return Ok(None);
        }
        v.parse().map(Some).map_err(|_| self.bad(key, "number"))
    }

    /// Comma-separated list; empty string parses to an empty list.
    pub fn list(&self, key: &str) -> Vec<String> {
        self.str(key)
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect()
    }

    fn bad(&self, key: &str, want: &'static str) -> CliError {
        CliError::BadValue {
            key: key.to_string(),
            value: self.str(key).to_string(),
            want,
        }
    }

    /// Renders the full key table (key, current value, description) —
    /// handy for logs and for generating the README section.
    pub fn document(&self) -> String {
        let mut s = String::new();
        for (key, default, doc) in KEYS {
            let _ = writeln!(s, "{key} = {default}  # {doc}");
        }
        s
    }
}

// ── Tests ───────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn defaults_cover_every_key() {
        let cfg = RunConfig::default();
        for (key, default, _) in KEYS {
            assert_eq!(cfg.str(key), *default);
        }
        assert_eq!(cfg.f64("epsilon").unwrap(), 16.0);
        assert_eq!(cfg.usize("steps").unwrap(), 10);
        assert_eq!(cfg.f64("beta").unwrap(), 0.5);
        assert_eq!(cfg.usize("k").ok(), Some(1));
        assert_eq!(cfg.opt_f64("alpha").unwrap(), None);
    }

    #[test]
    fn file_overrides_defaults_and_tolerates_comments() {
        let f = write_tmp("# a comment\n\nepsilon = 8\nmethod = ni-fgsm # trailing\n");
        let mut cfg = RunConfig::default();
        cfg.load_file(f.path()).unwrap();
        assert_eq!(cfg.f64("epsilon").unwrap(), 8.0);
        assert_eq!(cfg.str("method"), "ni-fgsm");
        assert_eq!(cfg.usize("steps").unwrap(), 10, "untouched keys keep defaults");
    }

    #[test]
    fn unknown_keys_are_rejected_with_the_line_number() {
        let f = write_tmp("epsilon = 8\nepsilonn = 9\n");
        let mut cfg = RunConfig::default();
        let err = cfg.load_file(f.path()).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(err.contains("epsilonn"), "{err}");
    }

    #[test]
    fn malformed_lines_are_rejected() {
        let f = write_tmp("just words\n");
        let mut cfg = RunConfig::default();
        let err = cfg.load_file(f.path()).unwrap_err().to_string();
        assert!(err.contains("key = value"), "{err}");
    }

    #[test]
    fn set_pair_parses_and_validates() {
        let mut cfg = RunConfig::default();
        cfg.set_pair("beta=0.75").unwrap();
        assert_eq!(cfg.f64("beta").unwrap(), 0.75);
        assert!(cfg.set_pair("nope=1").is_err());
        assert!(cfg.set_pair("beta").is_err());
    }

    #[test]
    fn typed_getters_name_the_offending_key() {
        let mut cfg = RunConfig::default();
        cfg.set("steps", "ten").unwrap();
        let err = cfg.u64("steps").unwrap_err().to_string();
        assert!(err.contains("steps") && err.contains("ten"), "{err}");
        cfg.set("svd", "maybe").unwrap();
        assert!(cfg.bool("svd").is_err());
    }

    #[test]
    fn lists_split_on_commas() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.list("transforms"), Vec::<String>::new());
        cfg.set("transforms", "di, ti").unwrap();
        assert_eq!(cfg.list("transforms"), vec!["di", "ti"]);
        assert_eq!(cfg.list("models").len(), 3);
    }
}
