//! Adaptive choice of the LM iteration bound `L` between linear solves.
//!
//! LM run time is modelled as `t = T1 * l + T0`. The marginal LM rate is the
//! error reduction of the latest invocation divided by `T1 * l`, i.e. with the
//! fixed start-up cost `T0` removed. The linear rate is reduction over time of
//! the latest linear solve. Start-up doubles `L` while LM is at least as
//! productive; the regime phase then moves `L` by one toward the better rate.

use serde::{Deserialize, Serialize};

/// Relative band within which the two rates count as equal. Ties favour LM.
pub const TIE_BAND: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Startup,
    Regime,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmSample {
    pub iterations: usize,
    pub time: f64,
    pub reduction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSample {
    pub time: f64,
    pub reduction: f64,
}

/// `(T0, T1)` from two invocations; `None` when their iteration counts match.
pub fn run_time_model(a: &LmSample, b: &LmSample) -> Option<(f64, f64)> {
    if a.iterations == b.iterations {
        return None;
    }
    let t1 = (a.time - b.time) / (a.iterations as f64 - b.iterations as f64);
    let t0 = a.time - t1 * a.iterations as f64;
    Some((t0, t1))
}

fn rate(reduction: f64, time: f64) -> f64 {
    if time > 0.0 {
        reduction / time
    } else if reduction > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterleaveState {
    l: usize,
    max_l: usize,
    phase: Phase,
    /// Last two LM samples with distinct iteration counts, oldest first.
    model_samples: Vec<LmSample>,
    last_lm: Option<LmSample>,
    last_linear: Option<LinearSample>,
    t0: f64,
    t1: Option<f64>,
}

impl InterleaveState {
    pub fn new(initial_l: usize, max_l: usize) -> Self {
        Self {
            l: initial_l.max(1),
            max_l: max_l.max(1),
            phase: Phase::Startup,
            model_samples: Vec::with_capacity(2),
            last_lm: None,
            last_linear: None,
            t0: 0.0,
            t1: None,
        }
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Current `(T0, T1)`, if any LM invocation with at least one iteration
    /// has been recorded.
    pub fn model(&self) -> Option<(f64, f64)> {
        self.t1.map(|t1| (self.t0, t1))
    }

    pub fn record_lm(&mut self, sample: LmSample) {
        self.last_lm = Some(sample);
        if sample.iterations == 0 {
            return;
        }
        match self.model_samples.last() {
            Some(prev) if prev.iterations == sample.iterations => {
                let k = self.model_samples.len() - 1;
                self.model_samples[k] = sample;
            }
            _ => {
                self.model_samples.push(sample);
                if self.model_samples.len() > 2 {
                    self.model_samples.remove(0);
                }
            }
        }
        if let [a, b] = self.model_samples[..] {
            if let Some((t0, t1)) = run_time_model(&a, &b) {
                if t1 >= 0.0 {
                    self.t0 = t0;
                    self.t1 = Some(t1);
                }
            }
        }
        if self.t1.is_none() {
            self.t0 = 0.0;
            self.t1 = Some(sample.time / sample.iterations as f64);
        }
    }

    pub fn record_linear(&mut self, sample: LinearSample) {
        self.last_linear = Some(sample);
    }

    /// Error reduction per unit of LM iteration time.
    pub fn lm_marginal_rate(&self) -> Option<f64> {
        let s = self.last_lm?;
        if s.iterations == 0 {
            return Some(0.0);
        }
        let t1 = self.t1?;
        Some(rate(s.reduction, t1 * s.iterations as f64))
    }

    pub fn linear_rate(&self) -> Option<f64> {
        self.last_linear.map(|s| rate(s.reduction, s.time))
    }

    /// Applies one start-up or regime step and returns the new `L`.
    pub fn update_l(&mut self) -> usize {
        let (Some(lm), Some(lin)) = (self.lm_marginal_rate(), self.linear_rate()) else {
            return self.l;
        };
        match self.phase {
            Phase::Startup => {
                if lm >= lin {
                    self.l = (self.l * 2).min(self.max_l);
                } else {
                    self.phase = Phase::Regime;
                }
            }
            Phase::Regime => {
                let tie = (lm - lin).abs() <= TIE_BAND * lm.max(lin) || lm == lin;
                if tie || lm > lin {
                    self.l = (self.l + 1).min(self.max_l);
                } else {
                    self.l = self.l.saturating_sub(1).max(1);
                }
            }
        }
        self.l
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_model() {
        let a = LmSample {
            iterations: 4,
            time: 10.0,
            reduction: 0.0,
        };
        let b = LmSample {
            iterations: 8,
            time: 18.0,
            reduction: 0.0,
        };
        assert_eq!(run_time_model(&a, &b), Some((2.0, 2.0)));
        assert_eq!(run_time_model(&a, &a), None);
    }

    #[test]
    fn equal_iteration_counts_keep_previous_model() {
        let mut s = InterleaveState::new(4, 1000);
        s.record_lm(LmSample { iterations: 4, time: 10.0, reduction: 1.0 });
        s.record_lm(LmSample { iterations: 8, time: 18.0, reduction: 1.0 });
        assert_eq!(s.model(), Some((2.0, 2.0)));
        s.record_lm(LmSample { iterations: 8, time: 18.0, reduction: 1.0 });
        assert_eq!(s.model(), Some((2.0, 2.0)));
    }

    #[test]
    fn no_linear_gain_never_shrinks_l() {
        let mut s = InterleaveState::new(3, 10_000);
        let mut last = s.l();
        for k in 0..20 {
            let l = s.l();
            s.record_lm(LmSample {
                iterations: l,
                time: 1.0 + l as f64,
                reduction: 1.0 / (k + 1) as f64,
            });
            s.record_linear(LinearSample { time: 0.5, reduction: 0.0 });
            let next = s.update_l();
            assert!(next >= last);
            last = next;
        }
    }

    #[test]
    fn equal_rates_increment() {
        let mut s = InterleaveState::new(5, 100);
        s.phase = Phase::Regime;
        s.record_lm(LmSample { iterations: 5, time: 5.0, reduction: 5.0 });
        s.record_linear(LinearSample { time: 2.0, reduction: 2.0 * 1.005 });
        assert_eq!(s.update_l(), 6);
        s.record_linear(LinearSample { time: 2.0, reduction: 2.0 * 1.5 });
        s.record_lm(LmSample { iterations: 6, time: 6.0, reduction: 6.0 });
        assert_eq!(s.update_l(), 5);
    }

    #[test]
    fn l_never_below_one() {
        let mut s = InterleaveState::new(1, 100);
        s.phase = Phase::Regime;
        s.record_lm(LmSample { iterations: 1, time: 1.0, reduction: 0.0 });
        s.record_linear(LinearSample { time: 1.0, reduction: 1.0 });
        assert_eq!(s.update_l(), 1);
    }
}
