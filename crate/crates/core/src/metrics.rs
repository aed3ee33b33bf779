//! Classification and localization metrics, and the paired t-test.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn from_predictions(predicted: &[bool], actual: &[bool]) -> Self {
        let mut c = Self::default();
        for (&p, &a) in predicted.iter().zip(actual) {
            c.record(p, a);
        }
        c
    }

    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn merge(&self, other: &Self) -> Self {
        Self {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            tn: self.tn + other.tn,
            fn_: self.fn_ + other.fn_,
        }
    }

    pub fn f1(&self) -> f64 {
        let pr = precision_recall(self);
        f1_score(pr.precision, pr.recall)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    /// Set when either ratio had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

pub fn precision_recall(counts: &ConfusionCounts) -> PrecisionRecall {
    let ratio = |num: u64, den: u64| {
        if den == 0 {
            None
        } else {
            Some(num as f64 / den as f64)
        }
    };
    let p = ratio(counts.tp, counts.tp + counts.fp);
    let r = ratio(counts.tp, counts.tp + counts.fn_);
    PrecisionRecall {
        precision: p.unwrap_or(0.0),
        recall: r.unwrap_or(0.0),
        degenerate: p.is_none() || r.is_none(),
    }
}

/// Harmonic mean of precision and recall, in percent.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    let s = precision + recall;
    if s <= 0.0 {
        0.0
    } else {
        200.0 * (precision * recall) / s
    }
}

/// `|pred ∩ gt| / |pred ∪ gt|`, with two empty sets scoring 1.
pub fn temporal_iou(pred: &BTreeSet<usize>, gt: &BTreeSet<usize>) -> f64 {
    let union = pred.union(gt).count();
    if union == 0 {
        return 1.0;
    }
    pred.intersection(gt).count() as f64 / union as f64
}

/// Expected IoU between `gt` (|gt| = `g` frames of `t`) and a uniformly random
/// `k`-subset of the `t` frames. The intersection size is hypergeometric.
pub fn expected_random_iou(t: usize, k: usize, g: usize) -> f64 {
    assert!(k <= t && g <= t, "subset sizes exceed clip length");
    if k == 0 && g == 0 {
        return 1.0;
    }
    let ln_choose = |n: usize, r: usize| ln_gamma(n as f64 + 1.0) - ln_gamma(r as f64 + 1.0) - ln_gamma((n - r) as f64 + 1.0);
    let total = ln_choose(t, k);
    let lo = (k + g).saturating_sub(t);
    let hi = k.min(g);
    (lo..=hi)
        .map(|x| {
            let p = (ln_choose(g, x) + ln_choose(t - g, k - x) - total).exp();
            p * x as f64 / (k + g - x) as f64
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTestResult {
    pub t_statistic: f64,
    pub degrees_of_freedom: u64,
    pub p_value_two_sided: f64,
    pub mean_difference: f64,
}

/// Paired Student t-test on `xs - ys`.
pub fn paired_t_test(xs: &[f64], ys: &[f64]) -> Result<PairedTestResult> {
    if xs.len() != ys.len() {
        return Err(Error::domain(format!(
            "paired samples differ in length ({} vs {})",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len();
    if n < 2 {
        return Err(Error::domain("paired t-test needs at least 2 pairs"));
    }
    let d: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    // Differences that agree to rounding count as constant.
    let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    if var.sqrt() <= 1e-12 * scale {
        return Err(Error::Degenerate("paired differences have zero variance".into()));
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    let df = (n - 1) as u64;
    Ok(PairedTestResult {
        t_statistic: t,
        degrees_of_freedom: df,
        p_value_two_sided: student_t_two_sided_p(t, df as f64),
        mean_difference: mean,
    })
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    regularized_incomplete_beta(x, df / 2.0, 0.5).clamp(0.0, 1.0)
}

/// ln Γ(x) for x > 0, Lanczos approximation (g = 7, 9 terms).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized incomplete beta `I_x(a, b)` via the Lentz continued fraction.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if !(0.0..=1.0).contains(&x) || a <= 0.0 || b <= 0.0 {
        return f64::NAN;
    }
    if x == 0.0 || x == 1.0 {
        return x;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    // The fraction converges fastest below the mean of the distribution.
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_fraction(x, a, b) / a
    } else {
        1.0 - ln_front.exp() * beta_fraction(1.0 - x, b, a) / b
    }
}

fn beta_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let mut c = 1.0;
    let mut d = 1.0 - (a + b) * x / (a + 1.0);
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=500 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let num = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
        d = 1.0 + num * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + num / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let num = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
        d = 1.0 + num * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + num / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn set(v: &[usize]) -> BTreeSet<usize> {
        v.iter().copied().collect()
    }

    #[test]
    fn precision_recall_examples() {
        let pr = precision_recall(&ConfusionCounts {
            tp: 10,
            fp: 0,
            tn: 0,
            fn_: 0,
        });
        assert_eq!((pr.precision, pr.recall, pr.degenerate), (1.0, 1.0, false));

        let pr = precision_recall(&ConfusionCounts {
            tp: 0,
            fp: 5,
            tn: 0,
            fn_: 5,
        });
        assert_eq!((pr.precision, pr.recall), (0.0, 0.0));

        let pr = precision_recall(&ConfusionCounts {
            tp: 8,
            fp: 2,
            tn: 0,
            fn_: 4,
        });
        assert_abs_diff_eq!(pr.precision, 0.8);
        assert_abs_diff_eq!(pr.recall, 0.6667, epsilon = 1e-4);

        let pr = precision_recall(&ConfusionCounts::default());
        assert!(pr.degenerate);
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1_score(0.5, 0.5), 50.0);
        assert_eq!(f1_score(1.0, 0.0), 0.0);
        assert_eq!(f1_score(0.0, 0.0), 0.0);
        assert_abs_diff_eq!(f1_score(0.8, 0.9), 84.71, epsilon = 0.01);
    }

    #[test]
    fn iou_examples() {
        assert_eq!(temporal_iou(&set(&[1, 2]), &set(&[1, 2])), 1.0);
        assert_eq!(temporal_iou(&set(&[1]), &set(&[2])), 0.0);
        assert_eq!(temporal_iou(&set(&[]), &set(&[])), 1.0);
        assert_eq!(temporal_iou(&set(&[]), &set(&[3])), 0.0);
        assert_abs_diff_eq!(temporal_iou(&set(&[1, 2, 3, 4]), &set(&[3, 4, 5, 6])), 1.0 / 3.0);
    }

    #[test]
    fn t_test_closed_form() {
        let r = paired_t_test(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(r.t_statistic, 3.4641, epsilon = 1e-4);
        assert_eq!(r.degrees_of_freedom, 2);
        assert_abs_diff_eq!(r.mean_difference, 2.0);
        // df = 2 has p = 1 - |t| / sqrt(t^2 + 2)
        let t = r.t_statistic;
        assert_abs_diff_eq!(r.p_value_two_sided, 1.0 - t / (t * t + 2.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn t_test_errors() {
        assert!(matches!(paired_t_test(&[1.0], &[0.0]), Err(Error::Domain(_))));
        assert!(matches!(paired_t_test(&[1.0, 2.0], &[0.0]), Err(Error::Domain(_))));
        assert!(matches!(
            paired_t_test(&[2.0, 3.0, 4.0], &[1.0, 2.0, 3.0]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn cauchy_closed_form() {
        // df = 1: two-sided p = 1 - 2 atan(|t|) / pi
        for t in [0.1, 0.5, 1.0, 3.0, 12.0] {
            let expected = 1.0 - 2.0 * f64::atan(t) / std::f64::consts::PI;
            assert_abs_diff_eq!(student_t_two_sided_p(t, 1.0), expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn ln_gamma_integers() {
        let mut fact = 1.0f64;
        for n in 1..20 {
            assert_abs_diff_eq!(ln_gamma(n as f64), fact.ln(), epsilon = 1e-10);
            fact *= n as f64;
        }
        assert_abs_diff_eq!(ln_gamma(0.5), std::f64::consts::PI.sqrt().ln(), epsilon = 1e-12);
    }

    #[test]
    fn random_iou_by_enumeration() {
        // all 4-subsets of 8 frames against gt {0, 1, 2}
        let gt = set(&[0, 1, 2]);
        let mut sum = 0.0;
        let mut count = 0;
        for m in 0u32..256 {
            if m.count_ones() == 4 {
                let s: BTreeSet<usize> = (0..8).filter(|i| m & (1 << i) != 0).collect();
                sum += temporal_iou(&s, &gt);
                count += 1;
            }
        }
        assert_abs_diff_eq!(expected_random_iou(8, 4, 3), sum / count as f64, epsilon = 1e-12);
        assert_eq!(expected_random_iou(8, 0, 3), 0.0);
        assert_abs_diff_eq!(expected_random_iou(8, 8, 3), 3.0 / 8.0, epsilon = 1e-12);
    }
}
