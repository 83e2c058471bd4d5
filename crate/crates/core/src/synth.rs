//! Synthetic traces `ln p(i) = f(i) + sigma B(i)` with `B` a standard
//! Brownian motion sampled at unit steps.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{LpplError, Result};
use crate::model::{lppl_curve, LpplParams, PriceSeries, MIN_GAP};

/// Generator recorded in trace metadata.
pub const RNG_ALGORITHM: &str = "ChaCha8Rng (rand_chacha 0.9), StandardNormal (rand_distr 0.5 ziggurat)";

/// Traces per preset in [`standard_suite`].
pub const SUITE_TRACES_PER_PRESET: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Base,
    Oscillatory,
    Exponential,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Base, Preset::Oscillatory, Preset::Exponential];

    pub fn params(&self) -> LpplParams {
        match self {
            Preset::Base => LpplParams::new(5.0, 0.02, 1100.0, 0.68, 0.05, 9.0, 0.0),
            Preset::Oscillatory => LpplParams::new(5.0, 0.02, 1100.0, 0.68, 0.2, 9.0, 0.0),
            Preset::Exponential => LpplParams::new(5.0, 0.005, 1100.0, 1.0, 0.0, 1.0, 0.0),
        }
    }

    pub fn sigma(&self) -> f64 {
        match self {
            Preset::Base => 0.005,
            Preset::Oscillatory => 0.02,
            Preset::Exponential => 0.05,
        }
    }

    pub fn spec(&self, seed: u64) -> SynthSpec {
        SynthSpec {
            params: self.params(),
            sigma: self.sigma(),
            n: 1000,
            seed,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Base => "base",
            Preset::Oscillatory => "oscillatory",
            Preset::Exponential => "exponential",
        })
    }
}

impl FromStr for Preset {
    type Err = LpplError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Preset::Base),
            "oscillatory" => Ok(Preset::Oscillatory),
            "exponential" => Ok(Preset::Exponential),
            _ => Err(LpplError::InvalidParams(format!("unknown preset {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub params: LpplParams,
    pub sigma: f64,
    pub n: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(LpplError::InvalidParams(format!(
                "sigma = {} must be >= 0",
                self.sigma
            )));
        }
        if self.n < PriceSeries::MIN_SUPPORT {
            return Err(LpplError::InvalidParams(format!(
                "n = {} is below the minimum series length {}",
                self.n,
                PriceSeries::MIN_SUPPORT
            )));
        }
        let gap = self.params.tc - self.n as f64;
        if !(gap >= MIN_GAP) {
            return Err(LpplError::Domain { index: self.n, gap });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTrace {
    pub spec: SynthSpec,
    pub rng: String,
    /// Preset the spec came from, if any.
    pub preset: Option<Preset>,
    #[serde(skip)]
    pub log_prices: Vec<f64>,
}

impl SynthTrace {
    pub fn series(&self) -> Result<PriceSeries> {
        PriceSeries::unweighted(self.log_prices.clone())
    }

    /// Writes `index,log_price,price` rows to `path` and the spec to the
    /// sidecar path returned by [`sidecar_path`].
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::from("index,log_price,price\n");
        for (i, y) in self.log_prices.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", i + 1, y, y.exp()));
        }
        fs::File::create(path)?.write_all(out.as_bytes())?;
        let meta = serde_json::to_string_pretty(self)
            .map_err(|e| LpplError::Io(format!("serialize trace metadata: {e}")))?;
        fs::write(sidecar_path(path), meta + "\n")?;
        Ok(())
    }
}

/// `trace.csv` -> `trace.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Standard Brownian path `B(1..=n)` with `B(0) = 0` and N(0, 1) increments.
pub fn brownian_path(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut level = 0.0;
    (0..n)
        .map(|_| {
            let step: f64 = rng.sample(StandardNormal);
            level += step;
            level
        })
        .collect()
}

pub fn generate_trace(spec: &SynthSpec) -> Result<SynthTrace> {
    spec.validate()?;
    let mut log_prices = lppl_curve(&spec.params, spec.n)?;
    if spec.sigma > 0.0 {
        for (y, b) in log_prices.iter_mut().zip(brownian_path(spec.n, spec.seed)) {
            *y += spec.sigma * b;
        }
    }
    Ok(SynthTrace {
        spec: *spec,
        rng: RNG_ALGORITHM.to_string(),
        preset: None,
        log_prices,
    })
}

pub fn generate_preset(preset: Preset, seed: u64) -> Result<SynthTrace> {
    let mut trace = generate_trace(&preset.spec(seed))?;
    trace.preset = Some(preset);
    Ok(trace)
}

/// Sub-seeds for [`standard_suite`], drawn from a generator seeded with
/// `master_seed`.
pub fn suite_seeds(master_seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    (0..Preset::ALL.len() * SUITE_TRACES_PER_PRESET)
        .map(|_| rng.random())
        .collect()
}

/// Five traces for each of base, oscillatory and exponential, in that order.
pub fn standard_suite(master_seed: u64) -> Vec<SynthTrace> {
    let seeds = suite_seeds(master_seed);
    Preset::ALL
        .iter()
        .flat_map(|p| std::iter::repeat_n(*p, SUITE_TRACES_PER_PRESET))
        .zip(seeds)
        .map(|(preset, seed)| generate_preset(preset, seed).expect("presets are valid"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_values() {
        let osc = Preset::Oscillatory.spec(0);
        assert_eq!(osc.params.c, 0.2);
        assert_eq!(osc.sigma, 0.02);
        assert_eq!(osc.params.omega, 9.0);
        let exp = Preset::Exponential.spec(0);
        assert_eq!((exp.params.m, exp.params.c, exp.params.omega, exp.params.b), (1.0, 0.0, 1.0, 0.005));
        assert_eq!(exp.sigma, 0.05);
    }

    #[test]
    fn zero_sigma_is_the_curve() {
        let spec = SynthSpec { sigma: 0.0, ..Preset::Base.spec(3) };
        let t = generate_trace(&spec).unwrap();
        assert_eq!(t.log_prices, lppl_curve(&spec.params, 1000).unwrap());
    }

    #[test]
    fn noise_enters_linearly() {
        let s = 0.01;
        let one = generate_trace(&SynthSpec { sigma: s, ..Preset::Base.spec(11) }).unwrap();
        let two = generate_trace(&SynthSpec { sigma: 2.0 * s, ..Preset::Base.spec(11) }).unwrap();
        let b = brownian_path(1000, 11);
        for ((x2, x1), bi) in two.log_prices.iter().zip(&one.log_prices).zip(&b) {
            assert!((x2 - x1 - s * bi).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_invalid_specs() {
        let mut spec = Preset::Base.spec(0);
        spec.n = 1100;
        assert!(generate_trace(&spec).is_err());
        spec.n = 100;
        spec.sigma = -1.0;
        assert!(generate_trace(&spec).is_err());
    }

    #[test]
    fn suite_is_deterministic() {
        let a = standard_suite(42);
        let b = standard_suite(42);
        assert_eq!(a.len(), 15);
        assert_eq!(a, b);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.log_prices, y.log_prices);
        }
        assert_eq!(a[0].preset, Some(Preset::Base));
        assert_eq!(a[5].preset, Some(Preset::Oscillatory));
        assert_eq!(a[14].preset, Some(Preset::Exponential));
        assert_ne!(a[0].log_prices, a[1].log_prices);
    }
}
