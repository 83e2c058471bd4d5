//! `--config` file for `lppl fit`.
//!
//! TOML with these keys, all optional; command-line flags take precedence:
//!
//! ```toml
//! weights = ["uniform", "quad:1000"]   # one fit per scheme
//! triples = ["718,916,988,peak"]       # manual seeds, disables detection
//! auto_triples = 8
//! extremum_window = 10
//!
//! [lm]
//! mu_init = 1e-3
//! mu_bar = 1e-3
//! mu_bar_cap = 1e6
//! max_iterations = 2000
//! max_restarts = 60
//! gtol = 1e-12
//! xtol = 1e-12
//! ftol = 1e-15
//!
//! [interleave]
//! enabled = true
//! initial_l = 5
//! adaptive = true
//! clock = "work"    # or "wall"
//!
//! [thresholds]
//! m_hi = 0.95
//! omega_lo = 1.5
//! min_reduction = 0.10
//! ```

use std::path::Path;

use anyhow::Context;
use lppl_core::driver::Thresholds;
use lppl_core::{InterleaveConfig, LmConfig};
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub weights: Vec<String>,
    pub triples: Vec<String>,
    pub auto_triples: Option<usize>,
    pub extremum_window: Option<usize>,
    pub lm: LmConfig,
    pub interleave: InterleaveConfig,
    pub thresholds: Thresholds,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_keys_parse() {
        let text = r#"
            weights = ["uniform", "quad:1000"]
            triples = ["718,916,988,peak"]
            auto_triples = 4
            extremum_window = 12
            [lm]
            max_iterations = 500
            [interleave]
            enabled = false
            clock = "wall"
            [thresholds]
            m_hi = 0.9
        "#;
        let cfg: FileConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.weights.len(), 2);
        assert_eq!(cfg.auto_triples, Some(4));
        assert_eq!(cfg.lm.max_iterations, 500);
        assert_eq!(cfg.lm.mu_bar_cap, LmConfig::default().mu_bar_cap);
        assert!(!cfg.interleave.enabled);
        assert_eq!(cfg.thresholds.m_hi, 0.9);
        assert_eq!(cfg.thresholds.omega_lo, 1.5);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<FileConfig>("wieghts = []").is_err());
    }
}
