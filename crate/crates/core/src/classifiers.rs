//! Decision rules over per-transmitter probabilities: closed-set argmax and
//! open-set accept/reject against a threshold `tau`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierMode {
    Closed,
    /// One-versus-all heads with outlier rejection.
    Open,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Verdict {
    Accept(usize),
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub verdict: Verdict,
    pub max_prob: f64,
    pub threshold_used: f64,
}

/// Index of the largest probability; ties go to the lowest index.
pub fn predict_closed(p: &[f64]) -> Result<usize> {
    if p.is_empty() {
        return Err(Error::InvalidArgument("empty probability vector".into()));
    }
    let mut best = 0;
    for (i, v) in p.iter().enumerate().skip(1) {
        if *v > p[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Rejects when the largest probability is strictly below `tau`.
pub fn predict_open(p: &[f64], tau: f64) -> Result<Decision> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!("threshold {tau} outside [0, 1]")));
    }
    let best = predict_closed(p)?;
    let max_prob = p[best];
    let verdict = if max_prob < tau { Verdict::Reject } else { Verdict::Accept(best) };
    Ok(Decision { verdict, max_prob, threshold_used: tau })
}

/// Largest `tau` whose rejection rate on `known_max_probs` stays at or
/// below `target_false_alarm`.
pub fn calibrate_threshold(known_max_probs: &[f64], target_false_alarm: f64) -> Result<f64> {
    if known_max_probs.is_empty() {
        return Err(Error::InvalidArgument("no scores to calibrate on".into()));
    }
    if !(target_false_alarm > 0.0 && target_false_alarm <= 1.0) {
        return Err(Error::InvalidArgument(format!("target false alarm {target_false_alarm} outside (0, 1]")));
    }
    let mut s: Vec<f64> = known_max_probs.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    // With tau = s[k], exactly the values below s[k] are rejected.
    let allowed = (target_false_alarm * n as f64 + 1e-9).floor() as usize;
    if allowed >= n {
        return Ok(1.0);
    }
    Ok(s[allowed])
}

/// Fraction of `max_probs` rejected at `tau`.
pub fn rejection_rate(max_probs: &[f64], tau: f64) -> f64 {
    if max_probs.is_empty() {
        return 0.0;
    }
    max_probs.iter().filter(|p| **p < tau).count() as f64 / max_probs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn closed_examples() {
        assert_eq!(predict_closed(&[0.1, 0.7, 0.2]).unwrap(), 1);
        assert_eq!(predict_closed(&[0.5, 0.5]).unwrap(), 0);
        assert!(predict_closed(&[]).is_err());
    }

    #[test]
    fn open_examples() {
        let d = predict_open(&[0.4, 0.35, 0.25], 0.5).unwrap();
        assert_eq!(d.verdict, Verdict::Reject);
        assert_eq!(d.max_prob, 0.4);
        let d = predict_open(&[0.5, 0.3, 0.2], 0.5).unwrap();
        assert_eq!(d.verdict, Verdict::Accept(0));
        assert_eq!(predict_open(&[0.0, 0.0], 0.0).unwrap().verdict, Verdict::Accept(0));
        assert!(predict_open(&[0.5], 1.5).is_err());
    }

    #[test]
    fn calibration_limits() {
        assert_eq!(calibrate_threshold(&[0.2, 0.9, 0.6], 1.0).unwrap(), 1.0);
        assert!(calibrate_threshold(&[], 0.1).is_err());
        let scores: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let tau = calibrate_threshold(&scores, 0.15).unwrap();
        assert_eq!(rejection_rate(&scores, tau), 0.15);
    }

    #[test]
    fn calibrated_rate_holds_on_fresh_data() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen::<f64>().powf(0.3)).collect() };
        let held = draw(2000);
        let fresh = draw(2000);
        let tau = calibrate_threshold(&held, 0.15).unwrap();
        assert!((rejection_rate(&fresh, tau) - 0.15).abs() <= 0.03);
    }

    proptest! {
        #[test]
        fn argmax_survives_increasing_transforms(p in prop::collection::vec(0.0f64..1.0, 1..12)) {
            let t: Vec<f64> = p.iter().map(|v| (3.0 * v).exp() + v.powi(3)).collect();
            prop_assert_eq!(predict_closed(&p).unwrap(), predict_closed(&t).unwrap());
        }

        #[test]
        fn closed_is_permutation_equivariant(p in prop::collection::vec(0.0f64..1.0, 2..10), rot in 0usize..10) {
            let n = p.len();
            let r = rot % n;
            let permuted: Vec<f64> = (0..n).map(|i| p[(i + r) % n]).collect();
            let a = predict_closed(&p).unwrap();
            let b = predict_closed(&permuted).unwrap();
            // Equal maxima may resolve to a different original index after rotation.
            prop_assert_eq!(permuted[b], p[a]);
        }

        #[test]
        fn larger_tau_rejects_superset(p in prop::collection::vec(0.0f64..1.0, 1..8), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            let a = predict_open(&p, lo).unwrap();
            let b = predict_open(&p, hi).unwrap();
            if a.verdict == Verdict::Reject {
                prop_assert_eq!(b.verdict, Verdict::Reject);
            }
            prop_assert_eq!(a.max_prob, p.iter().cloned().fold(f64::MIN, f64::max));
        }

        #[test]
        fn rejection_rate_monotone_and_calibration_bounded(
            s in prop::collection::vec(0.0f64..1.0, 1..200), target in 0.01f64..0.99,
        ) {
            let tau = calibrate_threshold(&s, target).unwrap();
            prop_assert!(rejection_rate(&s, tau) <= target + 1e-12);
            prop_assert!(rejection_rate(&s, tau) <= rejection_rate(&s, (tau + 0.01).min(1.0)));
        }
    }
}
