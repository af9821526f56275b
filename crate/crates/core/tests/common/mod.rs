//! Helpers shared by the integration tests: finite differences, brute-force
//! oracles, a plain CE + KD reference trainer and the synthetic ablation
//! scenario.
#![allow(dead_code)]

pub mod grad_suite;
pub mod oracle_suite;

use std::collections::HashMap;

use pgad::ams::{natural_batches, PoolEntry};
use pgad::losses::LossReport;
use pgad::nets::{ParamVector, StudentNet, StudentUpstream, TeacherNet, TeacherUpstream};
use pgad::rng::derive_seed_indexed;
use pgad::synthdata::Sample;
use pgad::trainer::{TrainConfig, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so components that are zero up
/// to rounding are judged absolutely. Central differences at step 1e-5 of an
/// objective near 1..10 carry about 1e-10 of rounding noise, so the floor
/// keeps that noise below 1e-4 relative.
pub const REL_FLOOR: f64 = 1e-5;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Max relative error between `analytic` and central differences of `f`
/// around `x`.
pub fn fd_check(x: &[f64], analytic: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + FD_STEP;
        let up = f(&probe);
        probe[i] = x[i] - FD_STEP;
        let down = f(&probe);
        probe[i] = x[i];
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

// ---- brute-force oracles -------------------------------------------------

/// AUC by counting every positive/negative pair.
pub fn auc_pairwise(labels: &[usize], scores: &[f64]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li == 1 && lj == 0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// MCC as the Pearson correlation of the two 0/1 vectors (0 when either is
/// constant).
pub fn mcc_pearson(labels: &[usize], preds: &[usize]) -> f64 {
    let n = labels.len() as f64;
    let x: Vec<f64> = labels.iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = preds.iter().map(|&v| v as f64).collect();
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Two-sided paired t-test through `statrs`.
pub fn ttest_statrs(a: &[f64], b: &[f64]) -> (f64, f64) {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let sd = (d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    let t = mean / (sd / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).unwrap();
    (t, 2.0 * dist.cdf(-t.abs()))
}

/// Closed-form Student t CDF for 4 degrees of freedom:
/// `1/2 + 1/2 sin(th) (1 + cos^2(th) / 2)` with `th = atan(t / 2)`.
pub fn t4_cdf_closed_form(t: f64) -> f64 {
    let th = (t / 2.0).atan();
    0.5 + 0.5 * th.sin() * (1.0 + 0.5 * th.cos().powi(2))
}

/// Upper quantiles of t with 4 degrees of freedom, `(p, t_p)`.
pub const T4_TABLE: [(f64, f64); 7] = [
    (0.90, 1.533_206_274),
    (0.95, 2.131_846_786),
    (0.975, 2.776_445_105),
    (0.99, 3.746_947_388),
    (0.995, 4.604_094_871),
    (0.999, 7.173_182_220),
    (0.9995, 8.610_301_581),
];

// ---- plain CE + KD reference trainer ------------------------------------

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

/// Mean CE value and per-row `d/dlogits`.
fn ce(logits: &[Vec<f64>], labels: &[usize]) -> (f64, Vec<Vec<f64>>) {
    let n = logits.len() as f64;
    let mut v = 0.0;
    let mut g = Vec::new();
    for (z, &y) in logits.iter().zip(labels) {
        let lp = log_softmax(z);
        v -= lp[y];
        g.push(
            lp.iter()
                .enumerate()
                .map(|(k, l)| (l.exp() - if k == y { 1.0 } else { 0.0 }) / n)
                .collect(),
        );
    }
    (v / n, g)
}

/// `T^2 mean KL(p_t || p_s)` and its student-logit gradient.
fn kd(student: &[Vec<f64>], teacher: &[Vec<f64>], t: f64) -> (f64, Vec<Vec<f64>>) {
    let n = student.len() as f64;
    let mut v = 0.0;
    let mut g = Vec::new();
    for (zs, zt) in student.iter().zip(teacher) {
        let ls = log_softmax(&zs.iter().map(|x| x / t).collect::<Vec<_>>());
        let lt = log_softmax(&zt.iter().map(|x| x / t).collect::<Vec<_>>());
        v += lt.iter().zip(&ls).map(|(a, b)| a.exp() * (a - b)).sum::<f64>();
        g.push(ls.iter().zip(&lt).map(|(s, q)| t * (s.exp() - q.exp()) / n).collect());
    }
    (t * t * v / n, g)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, p: &mut [f64], g: &[f64], lr: f64, wd: f64) {
        self.t += 1;
        for i in 0..p.len() {
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g[i];
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let mh = self.m[i] / (1.0 - ADAM_BETA1.powi(self.t));
            let vh = self.v[i] / (1.0 - ADAM_BETA2.powi(self.t));
            p[i] -= lr * mh / (vh.sqrt() + ADAM_EPS) + lr * wd * p[i];
        }
    }
}

/// Distillation without prototypes, pseudo-pairs or the contrastive term:
/// teacher CE on genuine pairs, student CE on every sample, KD on genuine
/// pairs. Mirrors the trainer's batching, schedule and clipping contract.
pub fn reference_ce_kd(
    mut teacher: TeacherNet,
    mut student: StudentNet,
    train: &[Sample],
    cfg: &TrainConfig,
    steps: usize,
) -> Vec<LossReport> {
    let by_id: HashMap<usize, &Sample> = train.iter().map(|s| (s.id, s)).collect();
    let paired: Vec<PoolEntry> = train.iter().filter(|s| s.paired()).map(|s| (s.id, s.label)).collect();
    let unpaired: Vec<PoolEntry> = train.iter().filter(|s| !s.paired()).map(|s| (s.id, s.label)).collect();
    let per_epoch = train.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * per_epoch;
    let h = teacher.arch().feature_dim();
    let mut adam_t = Adam::new(teacher.params().len());
    let mut adam_s = Adam::new(student.params().len());
    let w = cfg.loss_weights;
    let mut out = Vec::new();
    let mut step = 0;
    'epochs: for epoch in 0..cfg.epochs {
        let plans = natural_batches(
            &paired,
            &unpaired,
            cfg.batch_size,
            derive_seed_indexed(cfg.seed, "epoch", epoch as u64),
        )
        .unwrap();
        for plan in plans {
            if step == steps {
                break 'epochs;
            }
            let lr = cfg.learning_rate
                * 0.5
                * (1.0 + (std::f64::consts::PI * step as f64 / total_steps as f64).cos());
            let genuine: Vec<&Sample> = plan.genuine.iter().map(|id| by_id[id]).collect();
            let others: Vec<&Sample> = plan.unpaired_student_only.iter().map(|id| by_id[id]).collect();
            let t_pass: Vec<_> = genuine
                .iter()
                .map(|s| teacher.forward(&s.feat_a, s.feat_b.as_ref().unwrap()).unwrap())
                .collect();
            let all: Vec<&Sample> = genuine.iter().chain(&others).copied().collect();
            let s_pass: Vec<_> = all.iter().map(|s| student.forward(&s.feat_a).unwrap()).collect();
            let t_logits: Vec<Vec<f64>> = t_pass.iter().map(|p| p.logits.clone()).collect();
            let s_logits: Vec<Vec<f64>> = s_pass.iter().map(|p| p.logits.clone()).collect();
            let g_labels: Vec<usize> = genuine.iter().map(|s| s.label).collect();
            let all_labels: Vec<usize> = all.iter().map(|s| s.label).collect();

            let (l_tea, g_tea) = if genuine.is_empty() { (0.0, vec![]) } else { ce(&t_logits, &g_labels) };
            let (l_stu, g_stu) = ce(&s_logits, &all_labels);
            let (l_kl, g_kl) = if genuine.is_empty() {
                (0.0, vec![])
            } else {
                kd(&s_logits[..genuine.len()], &t_logits, cfg.kd_temperature)
            };
            out.push(LossReport {
                l_tea,
                l_stu,
                l_kl,
                l_pair: 0.0,
                l_proto: 0.0,
                total: w.tea * l_tea + w.stu * l_stu + w.kl * l_kl,
            });

            let mut gt = ParamVector::zeros(teacher.params().len());
            for (pass, g) in t_pass.iter().zip(&g_tea) {
                let up = TeacherUpstream {
                    h_a: vec![0.0; h],
                    h_b: vec![0.0; h],
                    fused: vec![],
                    logits: g.iter().map(|v| w.tea * v).collect(),
                };
                teacher.backward(pass, &up, &mut gt).unwrap();
            }
            let mut gs = ParamVector::zeros(student.params().len());
            for (k, pass) in s_pass.iter().enumerate() {
                let mut logits: Vec<f64> = g_stu[k].iter().map(|v| w.stu * v).collect();
                if k < g_kl.len() {
                    logits.iter_mut().zip(&g_kl[k]).for_each(|(a, b)| *a += w.kl * b);
                }
                let up = StudentUpstream {
                    feat: vec![0.0; h],
                    logits,
                };
                student.backward(pass, &up, &mut gs).unwrap();
            }
            let norm = (gt.squared_norm() + gs.squared_norm()).sqrt();
            if norm > cfg.grad_clip {
                gt.scale(cfg.grad_clip / norm);
                gs.scale(cfg.grad_clip / norm);
            }
            adam_t.step(teacher.params_mut().as_mut_slice(), gt.as_slice(), lr, cfg.weight_decay);
            adam_s.step(student.params_mut().as_mut_slice(), gs.as_slice(), lr, cfg.weight_decay);
            step += 1;
        }
    }
    out
}

// ---- synthetic ablation scenario ----------------------------------------

pub mod scenario {
    use pgad::ams::AmsMode;
    use pgad::harness::{ArmConfig, ScenarioConfig};
    use pgad::synthdata::DatasetConfig;
    use pgad::trainer::{PrototypeStrategy, TrainConfig};

    pub const BASELINE: &str = "baseline";
    pub const PCM: &str = "pcm";
    pub const FULL: &str = "pcm_ams";
    pub const NO_PROTO: &str = "no_proto";
    pub const ALL_PROTO: &str = "all_proto";
    pub const FIXED: &str = "fixed_ratio";

    /// Two classes, 200 per class, 16 + 16 dims; separation 2.5 puts the
    /// no-PET baseline near MCC 0.74. Training uses the default config
    /// (lr 1e-4, cosine, 100 epochs, batch 32, weight decay 5e-5).
    pub fn dataset() -> DatasetConfig {
        DatasetConfig {
            num_classes: 2,
            samples_per_class: 200,
            dim_a: 16,
            dim_b: 16,
            class_separation: 2.5,
            noise_scale: 1.0,
            missing_rate: 0.0,
            seed: 0,
        }
    }

    pub fn arm(name: &str) -> ArmConfig {
        match name {
            BASELINE => ArmConfig::new(name, false, AmsMode::None, PrototypeStrategy::None),
            PCM => ArmConfig::new(name, true, AmsMode::None, PrototypeStrategy::Paired),
            FULL => ArmConfig::new(name, true, AmsMode::Dynamic, PrototypeStrategy::Paired),
            NO_PROTO => ArmConfig::new(name, false, AmsMode::Dynamic, PrototypeStrategy::None),
            ALL_PROTO => ArmConfig::new(name, true, AmsMode::Dynamic, PrototypeStrategy::All),
            FIXED => ArmConfig::new(name, true, AmsMode::Fixed, PrototypeStrategy::Paired),
            other => panic!("unknown arm {other}"),
        }
    }

    pub fn config(seed: u64, arms: &[&str], rates: &[f64], out: std::path::PathBuf) -> ScenarioConfig {
        ScenarioConfig {
            dataset: dataset(),
            train: TrainConfig::default(),
            missing_rates: rates.to_vec(),
            arms: arms.iter().map(|a| arm(a)).collect(),
            k_folds: 5,
            output_dir: out,
            seed,
            baseline_arm: None,
            alpha: 0.05,
            export_prototypes: false,
        }
    }
}
