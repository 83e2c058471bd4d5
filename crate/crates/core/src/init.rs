//! Starting points for the multi-start fit.
//!
//! Two kinds of seed are produced:
//!
//! * the exponential pre-fit, a weighted linear regression of `ln p(i)` on `i`
//!   read as the LPPL with `m = 1, C = 0`. It stands for the no-bubble
//!   hypothesis and is always part of the seed set;
//! * a seed per triple `i < j < k` of consecutive price peaks (or troughs).
//!   Consecutive extrema are one oscillation apart, which gives
//!   `rho = (j - i) / (k - j)`, `omega = 2 pi / ln rho` and
//!   `T = (rho k - j) / (rho - 1)`. The phase puts a peak at angle `pi` and a
//!   trough at angle `0` (mod `2 pi`) at index `k`, assuming `C >= 0`.
//!
//! On noisy data adjacent detected extrema are often noise, so automatic
//! seeding ([`screened_seeds`]) widens the pool to non-adjacent triples over
//! several window widths, on both `ln p` and its detrended version, and keeps
//! the triples whose geometry best explains the data once `(A, B, C)` are
//! solved for.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{LpplError, Result};
use crate::model::{LpplParams, PriceSeries, MIN_GAP};

/// `B` used when the regression slope is not positive.
pub const EXP_B_FLOOR: f64 = 1e-8;

/// Default half-width of the extremum detection window.
pub const DEFAULT_EXTREMUM_WINDOW: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtremumKind {
    Peak,
    Trough,
}

impl fmt::Display for ExtremumKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExtremumKind::Peak => "peak",
            ExtremumKind::Trough => "trough",
        })
    }
}

/// Three extrema of the same kind, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub kind: ExtremumKind,
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.i, self.j, self.k, self.kind)
    }
}

impl FromStr for Triple {
    type Err = LpplError;

    /// `i,j,k[,peak|trough]`; the kind defaults to peak.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || LpplError::InvalidParams(format!("cannot parse triple {s:?}"));
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if !(3..=4).contains(&parts.len()) {
            return Err(bad());
        }
        let idx = |t: &str| t.parse::<usize>().map_err(|_| bad());
        let kind = match parts.get(3) {
            None | Some(&"peak") => ExtremumKind::Peak,
            Some(&"trough") => ExtremumKind::Trough,
            Some(_) => return Err(bad()),
        };
        Ok(Triple {
            i: idx(parts[0])?,
            j: idx(parts[1])?,
            k: idx(parts[2])?,
            kind,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "seed", rename_all = "lowercase")]
pub enum Provenance {
    Exponential,
    Triple(Triple),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Exponential => f.write_str("exponential"),
            Provenance::Triple(t) => write!(f, "triple({t})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitSeed {
    pub params: LpplParams,
    pub provenance: Provenance,
}

/// Weighted regression `ln p(i) = intercept + slope * i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentialFit {
    pub intercept: f64,
    pub slope: f64,
    /// Weighted sum of squared regression residuals.
    pub error: f64,
    pub average_error: f64,
}

impl ExponentialFit {
    /// `(A, B)` of `A - B (T - i)` for a given `T`. A non-positive slope is
    /// replaced by `EXP_B_FLOOR`, with `A` re-centred on the data.
    pub fn lppl_coefficients(&self, series: &PriceSeries, tc: f64) -> (f64, f64) {
        if self.slope > 0.0 {
            (self.intercept + self.slope * tc, self.slope)
        } else {
            let b = EXP_B_FLOOR;
            let (mut sw, mut sy) = (0.0, 0.0);
            for (idx, (y, w)) in series.log_prices().iter().zip(series.weights()).enumerate() {
                sw += w;
                sy += w * (y + b * (tc - (idx + 1) as f64));
            }
            (sy / sw, b)
        }
    }
}

/// Weighted least-squares line through `(i, ln p(i))`.
pub fn exponential_regression(series: &PriceSeries) -> Result<ExponentialFit> {
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for (idx, (y, w)) in series.log_prices().iter().zip(series.weights()).enumerate() {
        let x = (idx + 1) as f64;
        sw += w;
        sx += w * x;
        sy += w * y;
    }
    let (xm, ym) = (sx / sw, sy / sw);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (idx, (y, w)) in series.log_prices().iter().zip(series.weights()).enumerate() {
        let dx = (idx + 1) as f64 - xm;
        sxx += w * dx * dx;
        sxy += w * dx * (y - ym);
    }
    if !(sxx > 0.0) {
        return Err(LpplError::DegenerateRegression(
            "fewer than two distinct weighted indices".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let error: f64 = series
        .log_prices()
        .iter()
        .zip(series.weights())
        .enumerate()
        .map(|(idx, (y, w))| {
            let r = y - intercept - slope * (idx + 1) as f64;
            w * r * r
        })
        .sum();
    Ok(ExponentialFit {
        intercept,
        slope,
        error,
        average_error: error / series.degrees_of_freedom() as f64,
    })
}

/// Critical time of the pure exponential seed: `n + n / 10`.
pub fn default_exponential_tc(n: usize) -> f64 {
    n as f64 + n as f64 / 10.0
}

/// Exponential seed (`m = 1`, `C = 0`) at critical time `tc`, or at
/// [`default_exponential_tc`] when `tc` is `None`.
pub fn exponential_prefit(series: &PriceSeries, tc: Option<f64>) -> Result<(InitSeed, ExponentialFit)> {
    let fit = exponential_regression(series)?;
    let tc = tc.unwrap_or_else(|| default_exponential_tc(series.len()));
    let (a, b) = fit.lppl_coefficients(series, tc);
    let seed = InitSeed {
        params: LpplParams::new(a, b, tc, 1.0, 0.0, 1.0, 0.0),
        provenance: Provenance::Exponential,
    };
    Ok((seed, fit))
}

/// `rho`, `omega`, `T` and `phi` implied by a triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripleGeometry {
    pub rho: f64,
    pub omega: f64,
    pub tc: f64,
    pub phi: f64,
}

pub fn triple_geometry(triple: &Triple) -> Result<TripleGeometry> {
    let Triple { i, j, k, kind } = *triple;
    let reject = |reason: &str| LpplError::InvalidTriple {
        i,
        j,
        k,
        reason: reason.into(),
    };
    if i < 1 {
        return Err(reject("indices are 1-based"));
    }
    if !(i < j && j < k) {
        return Err(reject("need i < j < k"));
    }
    if j - i <= k - j {
        return Err(reject("need j - i > k - j so that rho > 1"));
    }
    let rho = (j - i) as f64 / (k - j) as f64;
    let omega = 2.0 * PI / rho.ln();
    let tc = (rho * k as f64 - j as f64) / (rho - 1.0);
    let angle = omega * (tc - k as f64).ln();
    let phi = match kind {
        ExtremumKind::Peak => PI - angle,
        ExtremumKind::Trough => -angle,
    };
    Ok(TripleGeometry { rho, omega, tc, phi })
}

/// Seed from a triple: geometry for `(T, omega, phi)`, exponential pre-fit at
/// that `T` for `(A, B)`, `m = 1`, `C = 0`.
pub fn triple_to_seed(triple: &Triple, series: &PriceSeries) -> Result<InitSeed> {
    let n = series.len();
    if triple.k > n {
        return Err(LpplError::InvalidTriple {
            i: triple.i,
            j: triple.j,
            k: triple.k,
            reason: format!("k exceeds series length {n}"),
        });
    }
    let geo = triple_geometry(triple)?;
    if !(geo.tc - n as f64 >= MIN_GAP) {
        return Err(LpplError::InvalidTriple {
            i: triple.i,
            j: triple.j,
            k: triple.k,
            reason: format!("critical time {:.3} is not beyond the series end {n}", geo.tc),
        });
    }
    let fit = exponential_regression(series)?;
    let (a, b) = fit.lppl_coefficients(series, geo.tc);
    Ok(InitSeed {
        params: LpplParams::new(a, b, geo.tc, 1.0, 0.0, geo.omega, geo.phi),
        provenance: Provenance::Triple(*triple),
    })
}

/// 1-based indices of strict local extrema of `values` within `window`
/// positions on either side. End points never qualify.
pub fn local_extrema(values: &[f64], window: usize, kind: ExtremumKind) -> Vec<usize> {
    let n = values.len();
    let window = window.max(1);
    let mut out = Vec::new();
    for c in 1..n.saturating_sub(1) {
        let lo = c.saturating_sub(window);
        let hi = (c + window).min(n - 1);
        let v = values[c];
        let dominates = (lo..=hi).filter(|&q| q != c).all(|q| match kind {
            ExtremumKind::Peak => v > values[q],
            ExtremumKind::Trough => v < values[q],
        });
        if dominates {
            out.push(c + 1);
        }
    }
    out
}

/// Consecutive same-kind extremum triples with `rho > 1`, most recent first.
pub fn propose_triples(series: &PriceSeries, window: usize) -> Vec<Triple> {
    let mut triples = Vec::new();
    for kind in [ExtremumKind::Peak, ExtremumKind::Trough] {
        let ext = local_extrema(series.log_prices(), window, kind);
        for w in ext.windows(3) {
            let (i, j, k) = (w[0], w[1], w[2]);
            if j - i > k - j {
                triples.push(Triple { i, j, k, kind });
            }
        }
    }
    triples.sort_by(|a, b| b.k.cmp(&a.k).then(b.j.cmp(&a.j)).then(a.kind.cmp(&b.kind)));
    triples
}

/// Extrema kept per (series, window, kind) in [`candidate_triples`]; the most
/// recent ones are kept.
pub const MAX_SCREEN_EXTREMA: usize = 40;
/// Window multiples scanned by [`candidate_triples`].
pub const SCREEN_WINDOW_FACTORS: [usize; 3] = [1, 2, 4];
/// Seeds with `omega` outside this range are not screened.
pub const SCREEN_OMEGA_RANGE: (f64, f64) = (2.0, 25.0);
/// Seeds with `T` beyond `n` times this are not screened.
pub const SCREEN_MAX_TC_RATIO: f64 = 1.5;

/// `ln p(i)` minus its exponential regression line.
pub fn detrended(series: &PriceSeries) -> Result<Vec<f64>> {
    let fit = exponential_regression(series)?;
    Ok(series
        .log_prices()
        .iter()
        .enumerate()
        .map(|(idx, y)| y - fit.intercept - fit.slope * (idx + 1) as f64)
        .collect())
}

/// Same-kind extremum triples with `rho > 1` from `ln p` and its detrended
/// version at several window widths. Unlike [`propose_triples`] the three
/// extrema need not be adjacent, so noise extrema between two true peaks do
/// not hide the pair. Most recent first, without duplicates.
pub fn candidate_triples(series: &PriceSeries, window: usize) -> Result<Vec<Triple>> {
    let flat = detrended(series)?;
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for factor in SCREEN_WINDOW_FACTORS {
        for values in [series.log_prices(), &flat[..]] {
            for kind in [ExtremumKind::Peak, ExtremumKind::Trough] {
                let ext = local_extrema(values, window.max(1) * factor, kind);
                let ext = &ext[ext.len().saturating_sub(MAX_SCREEN_EXTREMA)..];
                for (a, &i) in ext.iter().enumerate() {
                    for (b, &j) in ext.iter().enumerate().skip(a + 1) {
                        for &k in &ext[b + 1..] {
                            let t = Triple { i, j, k, kind };
                            if j - i > k - j && seen.insert(t) {
                                out.push(t);
                            }
                        }
                    }
                }
            }
        }
    }
    out.sort_by(|a, b| b.k.cmp(&a.k).then(b.j.cmp(&a.j)).then(b.i.cmp(&a.i)).then(a.kind.cmp(&b.kind)));
    Ok(out)
}

/// Up to `max` triple seeds ranked by the error of the linear sub-problem at
/// the seed's `(T, m, omega, phi)`, best first. Ties keep recency order.
pub fn screened_seeds(series: &PriceSeries, window: usize, max: usize) -> Result<Vec<InitSeed>> {
    let n = series.len() as f64;
    let (lo, hi) = SCREEN_OMEGA_RANGE;
    let mut scored: Vec<(f64, InitSeed)> = candidate_triples(series, window)?
        .iter()
        .filter_map(|t| triple_to_seed(t, series).ok())
        .filter(|s| (lo..=hi).contains(&s.params.omega) && s.params.tc <= SCREEN_MAX_TC_RATIO * n)
        .filter_map(|s| {
            crate::linear::solve_linear_subsystem(series, &s.params)
                .ok()
                .map(|r| (r.error, s))
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(scored.into_iter().take(max).map(|(_, s)| s).collect())
}

impl PartialOrd for ExtremumKind {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ExtremumKind {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (*self as u8).cmp(&(*other as u8))
    }
}
