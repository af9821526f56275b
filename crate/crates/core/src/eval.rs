//! Binary classification metrics and the paired-test comparison protocol.

use serde::{Deserialize, Serialize};

use crate::error::{PgadError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub fold: usize,
    pub mcc: f64,
    pub auc: f64,
    pub sen: f64,
    pub spe: f64,
}

pub const METRIC_NAMES: [&str; 4] = ["mcc", "auc", "sen", "spe"];

impl MetricsRecord {
    pub fn get(&self, metric: &str) -> Option<f64> {
        match metric {
            "mcc" => Some(self.mcc),
            "auc" => Some(self.auc),
            "sen" => Some(self.sen),
            "spe" => Some(self.spe),
            _ => None,
        }
    }
}

fn check_binary(labels: &[usize]) -> Result<()> {
    match labels.iter().find(|&&l| l > 1) {
        Some(&label) => Err(PgadError::Label { label, num_classes: 2 }),
        None => Ok(()),
    }
}

/// Counts with class 1 as positive.
pub fn confusion(labels: &[usize], predictions: &[usize]) -> Result<Confusion> {
    if labels.len() != predictions.len() {
        return Err(PgadError::shape("confusion predictions", labels.len(), predictions.len()));
    }
    check_binary(labels)?;
    check_binary(predictions)?;
    let mut c = Confusion {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for (&l, &p) in labels.iter().zip(predictions) {
        match (l, p) {
            (1, 1) => c.tp += 1,
            (0, 1) => c.fp += 1,
            (0, 0) => c.tn += 1,
            _ => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Matthews correlation; 0 when any marginal is empty.
pub fn mcc(c: &Confusion) -> f64 {
    let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if denom == 0.0 {
        return 0.0;
    }
    ((tp * tn - fp * fn_) / denom.sqrt()).clamp(-1.0, 1.0)
}

pub fn sen_spe(c: &Confusion) -> Result<(f64, f64)> {
    if c.tp + c.fn_ == 0 {
        return Err(PgadError::UndefinedMetric("sensitivity with no positives".into()));
    }
    if c.tn + c.fp == 0 {
        return Err(PgadError::UndefinedMetric("specificity with no negatives".into()));
    }
    Ok((
        c.tp as f64 / (c.tp + c.fn_) as f64,
        c.tn as f64 / (c.tn + c.fp) as f64,
    ))
}

/// Rank-based AUC with midranks for ties (half credit).
pub fn auc(labels: &[usize], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(PgadError::shape("auc scores", labels.len(), scores.len()));
    }
    check_binary(labels)?;
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(PgadError::NumericHealth {
            term: format!("auc score {bad}"),
            step: None,
        });
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(PgadError::UndefinedMetric("auc needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks are 1-based; the tie group i..=j shares the average rank.
        let mid = (i + j) as f64 / 2.0 + 1.0;
        pos_rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let (np, nn) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// All four metrics, thresholding the positive-class score at 0.5
/// (a score of exactly 0.5 counts as negative).
pub fn binary_metrics(fold: usize, labels: &[usize], scores: &[f64]) -> Result<MetricsRecord> {
    let preds: Vec<usize> = scores.iter().map(|&s| usize::from(s > 0.5)).collect();
    let c = confusion(labels, &preds)?;
    let (sen, spe) = sen_spe(&c)?;
    Ok(MetricsRecord {
        fold,
        mcc: mcc(&c),
        auc: auc(labels, scores)?,
        sen,
        spe,
    })
}

pub fn bonferroni(alpha: f64, m: usize) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(PgadError::Range {
            name: "alpha".into(),
            value: alpha,
            range: "(0, 1)".into(),
        });
    }
    if m == 0 {
        return Err(PgadError::config("m", "must be >= 1"));
    }
    Ok(alpha / m as f64)
}

/// Lanczos approximation (g = 7, 9 terms).
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
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=500 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// CDF of Student's t with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let tail = 0.5 * regularized_incomplete_beta(df / (df + t * t), df / 2.0, 0.5);
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTest {
    pub t: f64,
    /// Two-sided p-value.
    pub p: f64,
    /// Differences have zero variance but nonzero mean: `t` is infinite and
    /// `p` is reported as 0.
    pub perfect_separation: bool,
}

/// Two-sided paired t-test on `a[i] - b[i]` with `k - 1` degrees of freedom.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(PgadError::shape("paired t-test", a.len(), b.len()));
    }
    let k = a.len();
    if k < 2 {
        return Err(PgadError::config("k", "paired t-test needs at least 2 pairs"));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(PgadError::NumericHealth {
            term: "t-test input".into(),
            step: None,
        });
    }
    let n = k as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    // Relative test so float noise in identical-looking differences counts as
    // zero variance.
    let scale = diffs.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    if var.sqrt() <= 1e-12 * scale.max(f64::MIN_POSITIVE) || var == 0.0 {
        if mean == 0.0 || scale == 0.0 {
            return Ok(TTest {
                t: 0.0,
                p: 1.0,
                perfect_separation: false,
            });
        }
        return Ok(TTest {
            t: mean.signum() * f64::INFINITY,
            p: 0.0,
            perfect_separation: true,
        });
    }
    let t = mean / (var.sqrt() / n.sqrt());
    let p = (2.0 * student_t_cdf(-t.abs(), n - 1.0)).clamp(0.0, 1.0);
    Ok(TTest {
        t,
        p,
        perfect_separation: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonResult {
    pub method_a: String,
    pub method_b: String,
    pub metric: String,
    pub t_statistic: f64,
    pub p_value: f64,
    pub perfect_separation: bool,
    pub significant: bool,
    pub alpha_corrected: f64,
}

impl ComparisonResult {
    pub fn new(method_a: &str, method_b: &str, metric: &str, test: TTest, alpha_corrected: f64) -> Self {
        ComparisonResult {
            method_a: method_a.into(),
            method_b: method_b.into(),
            metric: metric.into(),
            t_statistic: test.t,
            p_value: test.p,
            perfect_separation: test.perfect_separation,
            significant: test.p < alpha_corrected,
            alpha_corrected,
        }
    }
}
