//! Bisection on the trapped/transmitted classifier: an independent
//! reference for the collocation estimate of the critical velocity.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpc::PdeModel;
use crate::solver::{check_clearance, classify_field, Outcome};

/// Extra distance the free soliton must cover beyond the window before classification.
pub const CLEARANCE_MARGIN: f64 = 5.0;
/// Retries with a longer final time after an inconclusive classification.
pub const MAX_RETRIES: usize = 3;
/// Final-time growth factor per retry.
pub const RETRY_EXTENSION: f64 = 1.5;

pub trait Classifier: Sync {
    fn classify(&self, velocity: f64) -> Result<Outcome>;
}

/// Runs the PDE and classifies the final state with a fixed window.
/// Inconclusive runs are repeated with `t_final` extended by
/// [`RETRY_EXTENSION`], at most [`MAX_RETRIES`] times.
#[derive(Debug)]
pub struct PdeClassifier {
    pub model: PdeModel,
    pub window: f64,
    /// Enforce the clearance rule `V t_final > |x0| + window + margin`.
    pub check_clearance: bool,
    retries: AtomicUsize,
}

impl PdeClassifier {
    pub fn new(model: PdeModel, window: f64) -> Self {
        Self {
            model,
            window,
            check_clearance: true,
            retries: AtomicUsize::new(0),
        }
    }

    pub fn retries(&self) -> usize {
        self.retries.load(Ordering::Relaxed)
    }
}

impl Classifier for PdeClassifier {
    fn classify(&self, velocity: f64) -> Result<Outcome> {
        use crate::gpc::FieldModel;
        let mut model = self.model.clone();
        if self.check_clearance {
            check_clearance(
                &model.soliton.with_velocity(velocity),
                model.solver.t_final,
                self.window,
                CLEARANCE_MARGIN,
            )?;
        }
        let mut attempt = 0;
        loop {
            let field = model.final_field(velocity)?;
            match classify_field(&field, self.window) {
                Err(Error::Inconclusive { fraction }) if attempt < MAX_RETRIES => {
                    attempt += 1;
                    self.retries.fetch_add(1, Ordering::Relaxed);
                    let dt = model.solver.dt;
                    model.solver.t_final = (model.solver.t_final * RETRY_EXTENSION / dt).ceil() * dt;
                    log::info!(
                        "V = {velocity}: inconclusive (fraction {fraction:.3}); retrying to t = {}",
                        model.solver.t_final
                    );
                }
                other => return other,
            }
        }
    }
}

/// Indicator classifier: trapped iff `V < threshold`.
#[derive(Debug, Clone, Copy)]
pub struct ThresholdClassifier {
    pub threshold: f64,
}

impl Classifier for ThresholdClassifier {
    fn classify(&self, velocity: f64) -> Result<Outcome> {
        Ok(if velocity < self.threshold {
            Outcome::Trapped
        } else {
            Outcome::Transmitted
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BisectionResult {
    pub epsilon: f64,
    pub brackets: Vec<(f64, f64)>,
    pub v_c: f64,
    pub solver_calls: usize,
    pub calls: Vec<(f64, Outcome)>,
}

fn check_monotone(calls: &[(f64, Outcome)]) -> Result<()> {
    let max_trapped = calls
        .iter()
        .filter(|c| c.1 == Outcome::Trapped)
        .map(|c| c.0)
        .fold(f64::NEG_INFINITY, f64::max);
    let min_transmitted = calls
        .iter()
        .filter(|c| c.1 == Outcome::Transmitted)
        .map(|c| c.0)
        .fold(f64::INFINITY, f64::min);
    if max_trapped >= min_transmitted {
        return Err(Error::NonMonotone(format!(
            "trapped at V = {max_trapped} but transmitted at V = {min_transmitted}"
        )));
    }
    Ok(())
}

/// Bisects `[v_lo, v_hi]` until the bracket is narrower than `tol`; the
/// estimate is the final midpoint.
pub fn bisect_critical(
    classifier: &dyn Classifier,
    epsilon: f64,
    v_lo: f64,
    v_hi: f64,
    tol: f64,
) -> Result<BisectionResult> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    if !(v_lo < v_hi) {
        return Err(Error::BracketInvalid(format!("empty bracket [{v_lo}, {v_hi}]")));
    }
    let mut calls = Vec::new();
    let lo_outcome = classifier.classify(v_lo)?;
    calls.push((v_lo, lo_outcome));
    let hi_outcome = classifier.classify(v_hi)?;
    calls.push((v_hi, hi_outcome));
    if lo_outcome != Outcome::Trapped || hi_outcome != Outcome::Transmitted {
        return Err(Error::BracketInvalid(format!(
            "V = {v_lo} is {lo_outcome:?} and V = {v_hi} is {hi_outcome:?}; need trapped below, transmitted above"
        )));
    }
    let (mut lo, mut hi) = (v_lo, v_hi);
    let mut brackets = vec![(lo, hi)];
    while hi - lo >= tol {
        let mid = 0.5 * (lo + hi);
        let outcome = classifier.classify(mid)?;
        calls.push((mid, outcome));
        match outcome {
            Outcome::Trapped => lo = mid,
            Outcome::Transmitted => hi = mid,
        }
        brackets.push((lo, hi));
    }
    check_monotone(&calls)?;
    Ok(BisectionResult {
        epsilon,
        brackets,
        v_c: 0.5 * (lo + hi),
        solver_calls: calls.len(),
        calls,
    })
}

/// Expected call count `ceil(log2(width / tol)) + 2`.
pub fn expected_calls(width: f64, tol: f64) -> usize {
    (width / tol).log2().ceil().max(0.0) as usize + 2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BracketScan {
    pub samples: Vec<(f64, Option<Outcome>)>,
    pub bracket: Option<(f64, f64)>,
}

/// Classifies each velocity in increasing order and returns the first
/// adjacent trapped/transmitted pair. Inconclusive samples are recorded as
/// `None` and never form a bracket end.
pub fn scan_for_bracket(classifier: &dyn Classifier, velocities: &[f64]) -> Result<BracketScan> {
    let mut samples = Vec::with_capacity(velocities.len());
    for &v in velocities {
        match classifier.classify(v) {
            Ok(o) => samples.push((v, Some(o))),
            Err(Error::Inconclusive { .. }) => samples.push((v, None)),
            Err(e) => return Err(e),
        }
    }
    let bracket = samples.windows(2).find_map(|w| match (w[0].1, w[1].1) {
        (Some(Outcome::Trapped), Some(Outcome::Transmitted)) => Some((w[0].0, w[1].0)),
        _ => None,
    });
    Ok(BracketScan { samples, bracket })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn surrogate_threshold() {
        let c = ThresholdClassifier { threshold: 0.1 };
        let r = bisect_critical(&c, 0.0, 0.05, 0.15, 1e-6).unwrap();
        assert_abs_diff_eq!(r.v_c, 0.1, epsilon = 1e-6);
        assert!(r.solver_calls - 2 <= 20);
        assert_eq!(r.solver_calls, expected_calls(0.1, 1e-6));
        for w in r.brackets.windows(2) {
            assert_abs_diff_eq!(w[1].1 - w[1].0, 0.5 * (w[0].1 - w[0].0), epsilon = 1e-15);
        }
        for &(v, o) in &r.calls {
            assert_eq!(o == Outcome::Trapped, v < 0.1);
        }
    }

    #[test]
    fn nothing_traps() {
        let c = ThresholdClassifier { threshold: 0.0 };
        assert!(matches!(
            bisect_critical(&c, 0.0, 0.01, 0.5, 1e-3),
            Err(Error::BracketInvalid(_))
        ));
    }

    #[test]
    fn bad_arguments() {
        let c = ThresholdClassifier { threshold: 0.1 };
        assert!(bisect_critical(&c, 0.0, 0.2, 0.1, 1e-3).is_err());
        assert!(bisect_critical(&c, 0.0, 0.05, 0.15, 0.0).is_err());
    }

    #[test]
    fn scan_finds_first_crossing() {
        let c = ThresholdClassifier { threshold: 0.33 };
        let vs: Vec<f64> = (1..=10).map(|k| 0.1 * k as f64).collect();
        let s = scan_for_bracket(&c, &vs).unwrap();
        assert_eq!(s.bracket, Some((vs[2], vs[3])));
        let none = scan_for_bracket(&ThresholdClassifier { threshold: 5.0 }, &vs).unwrap();
        assert_eq!(none.bracket, None);
    }

    #[test]
    fn monotone_check() {
        let good = [(0.1, Outcome::Trapped), (0.2, Outcome::Transmitted)];
        assert!(check_monotone(&good).is_ok());
        let bad = [(0.3, Outcome::Trapped), (0.2, Outcome::Transmitted)];
        assert!(matches!(check_monotone(&bad), Err(Error::NonMonotone(_))));
    }
}
