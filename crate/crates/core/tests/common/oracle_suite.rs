//! Fuzzed comparisons of prototypes, metrics and the paired t-test against
//! the brute-force oracles in the parent module. Each check returns the worst
//! absolute deviation (count mismatches for integer quantities).

use pgad::eval::{auc, binary_metrics, confusion, mcc, paired_ttest, sen_spe, student_t_cdf};
use pgad::prototypes::compute_batch_prototypes;
use pgad::rng::{rng_from_seed, Rng};
use rand::Rng as _;

use super::{auc_pairwise, mcc_pearson, t4_cdf_closed_form, ttest_statrs, T4_TABLE};

pub const FUZZ_INSTANCES: u64 = 1000;

/// Labels with both classes present.
fn labels(rng: &mut Rng, n: usize) -> Vec<usize> {
    let mut l: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
    l[0] = 0;
    l[1] = 1;
    l
}

/// Scores in [0, 1]; every other instance is quantised to force ties.
fn scores(rng: &mut Rng, n: usize, tied: bool) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let s: f64 = rng.random();
            if tied {
                (s * 10.0).round() / 10.0
            } else {
                s
            }
        })
        .collect()
}

/// Worst deviation of per-class means, plus the number of count or
/// staleness mismatches.
pub fn prototype_means(instances: u64) -> (f64, usize) {
    let mut worst = 0.0f64;
    let mut mismatches = 0;
    for i in 0..instances {
        let mut rng = rng_from_seed(0x9e37 + i);
        let c = rng.random_range(1..=5);
        let dim = rng.random_range(1..=8);
        let n = rng.random_range(1..=40);
        let feats: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect())
            .collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let set = compute_batch_prototypes(&feats, &labels, c).unwrap();
        for class in 0..c {
            let members: Vec<&Vec<f64>> = feats.iter().zip(&labels).filter(|(_, &l)| l == class).map(|(f, _)| f).collect();
            let p = set.get(class).unwrap();
            if p.count != members.len() || p.stale != members.is_empty() {
                mismatches += 1;
            }
            if members.is_empty() {
                continue;
            }
            for k in 0..dim {
                let mean = members.iter().map(|f| f[k]).sum::<f64>() / members.len() as f64;
                worst = worst.max((p.centroid[k] - mean).abs());
            }
        }
    }
    (worst, mismatches)
}

/// Worst deviation of MCC, AUC, SEN and SPE from their oracles, plus the
/// number of confusion-count mismatches.
pub fn classification_metrics(instances: u64) -> ([f64; 4], usize) {
    let mut worst = [0.0f64; 4];
    let mut mismatches = 0;
    for i in 0..instances {
        let mut rng = rng_from_seed(0x51ed + i);
        let n = rng.random_range(2..=60);
        let y = labels(&mut rng, n);
        let s = scores(&mut rng, n, i % 2 == 0);
        let preds: Vec<usize> = s.iter().map(|&v| usize::from(v > 0.5)).collect();

        let count = |l: usize, p: usize| y.iter().zip(&preds).filter(|(&a, &b)| a == l && b == p).count() as u64;
        let (tp, fp, tn, fn_) = (count(1, 1), count(0, 1), count(0, 0), count(1, 0));
        let c = confusion(&y, &preds).unwrap();
        if (c.tp, c.fp, c.tn, c.fn_) != (tp, fp, tn, fn_) {
            mismatches += 1;
        }
        let m = binary_metrics(0, &y, &s).unwrap();
        let sen = tp as f64 / (tp + fn_) as f64;
        let spe = tn as f64 / (tn + fp) as f64;
        worst[0] = worst[0].max((m.mcc - mcc_pearson(&y, &preds)).abs());
        worst[0] = worst[0].max((mcc(&c) - m.mcc).abs());
        worst[1] = worst[1].max((m.auc - auc_pairwise(&y, &s)).abs());
        worst[1] = worst[1].max((auc(&y, &s).unwrap() - m.auc).abs());
        let (s2, p2) = sen_spe(&c).unwrap();
        worst[2] = worst[2].max((m.sen - sen).abs()).max((s2 - sen).abs());
        worst[3] = worst[3].max((m.spe - spe).abs()).max((p2 - spe).abs());
    }
    (worst, mismatches)
}

/// Worst deviation of `t` (relative) and `p` (absolute) from `statrs`.
pub fn ttest(instances: u64) -> (f64, f64) {
    let (mut wt, mut wp) = (0.0f64, 0.0f64);
    for i in 0..instances {
        let mut rng = rng_from_seed(0x7777 + i);
        let k = rng.random_range(2..=12);
        let shift = rng.random_range(-0.5..0.5);
        let a: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = a.iter().map(|x| x + shift + rng.random_range(-0.3..0.3)).collect();
        let ours = paired_ttest(&a, &b).unwrap();
        let (t, p) = ttest_statrs(&a, &b);
        wt = wt.max((ours.t - t).abs() / t.abs().max(1.0));
        wp = wp.max((ours.p - p).abs());
    }
    (wt, wp)
}

/// Worst deviation of the t CDF at df = 4 from the published quantiles and
/// from the closed form on a grid.
pub fn t_cdf_df4() -> (f64, f64) {
    let table = T4_TABLE
        .iter()
        .map(|&(q, t)| (student_t_cdf(t, 4.0) - q).abs())
        .fold(0.0, f64::max);
    let grid = (-400..=400)
        .map(|i| {
            let t = i as f64 * 0.05;
            (student_t_cdf(t, 4.0) - t4_cdf_closed_form(t)).abs()
        })
        .fold(0.0, f64::max);
    (table, grid)
}
