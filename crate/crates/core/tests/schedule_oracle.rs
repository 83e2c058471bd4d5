//! Scripted run of the adaptive `L` scheduler against a hand-derived
//! sequence.
//!
//! Script: an LM invocation of `l` iterations takes `2 l + 3` time units and
//! reduces the error by `10 sqrt(l)`; every linear solve reduces it by 1 in 1
//! time unit. After the first two invocations the fitted model is
//! `T1 = 2, T0 = 3`, so the marginal LM rate is `10 sqrt(l) / (2 l)`
//! `= 5 / sqrt(l)`, against a linear rate of 1.
//!
//! Start-up from `L = 1`: the first sample gives `T1 = 5` and rate 2, then the
//! rates at 2, 4, 8, 16 are 3.54, 2.5, 1.77, 1.25, all >= 1, so `L` doubles to
//! 32. At 32 the rate is 0.88 and the regime phase begins with `L` unchanged.
//! In the regime `L` drops by one while `5 / sqrt(l) < 0.99`, i.e. down to 25.
//! At 25 the rates are equal, a tie, so `L` rises to 26, where
//! `5 / sqrt(26) = 0.981` is outside the 1% band and `L` falls back to 25.

use lppl_core::linear::schedule::{InterleaveState, LinearSample, LmSample, Phase};

fn script(l: usize) -> LmSample {
    LmSample {
        iterations: l,
        time: 2.0 * l as f64 + 3.0,
        reduction: 10.0 * (l as f64).sqrt(),
    }
}

#[test]
fn scripted_sequence() {
    let mut state = InterleaveState::new(1, 1000);
    let mut seen = vec![state.l()];
    let mut phases = vec![];
    for _ in 0..18 {
        state.record_lm(script(state.l()));
        state.record_linear(LinearSample { time: 1.0, reduction: 1.0 });
        seen.push(state.update_l());
        phases.push(state.phase());
    }
    let expected = [1, 2, 4, 8, 16, 32, 32, 31, 30, 29, 28, 27, 26, 25, 26, 25, 26, 25, 26];
    assert_eq!(seen, expected);
    assert_eq!(phases[4], Phase::Startup);
    assert_eq!(phases[5], Phase::Regime);
    assert_eq!(state.model(), Some((3.0, 2.0)));
}

#[test]
fn cap_bounds_startup_doubling() {
    let mut state = InterleaveState::new(1, 6);
    for _ in 0..6 {
        state.record_lm(script(state.l()));
        state.record_linear(LinearSample { time: 1.0, reduction: 0.0 });
        state.update_l();
    }
    assert_eq!(state.l(), 6);
}
