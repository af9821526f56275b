//! Joint teacher/student training.
//!
//! One step, in order:
//!
//! 1. teacher forward on genuine pairs and pseudo-pairs, student forward on
//!    every modality-A sample in the batch;
//! 2. prototype refresh from this batch's genuine-pair fused features;
//! 3. the five losses, routed as
//!    - `L_tea`: teacher logits of genuine and pseudo pairs,
//!    - `L_pair`: genuine rows against every modality-B candidate column,
//!    - `L_stu`: student logits of all batch samples,
//!    - `L_kl`: student vs teacher logits of genuine pairs only,
//!    - `L_proto`: student features of unpaired samples only;
//! 4. global-norm clipping, then one Adam update of teacher, student and
//!    `theta`.
//!
//! With AMS active the teacher term is the relaxed mix
//! `r * CE(genuine) + (1 - r) * CE(pseudo)`, which is what gives `theta` its
//! gradient.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ams::{
    build_batch, natural_batches, sampling_ratio, theta_gradient, AmsMode, AmsState, BatchPlan, PoolEntry,
};
use crate::error::{PgadError, Result};
use crate::losses::{
    ce_loss, kd_loss, pair_loss, proto_loss, similarity_with_grad, softmax, total_loss, Assignment, LossReport,
    LossTerms, LossWeights,
};
use crate::nets::{
    check_compatible, NetConfig, ParamVector, StudentNet, StudentUpstream, TeacherNet, TeacherPass, TeacherUpstream,
};
use crate::prototypes::{compute_batch_prototypes, update_running_prototypes, PrototypeSet};
use crate::rng::{derive_seed, derive_seed_indexed};
use crate::synthdata::Sample;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    /// `lr0 * 0.5 * (1 + cos(pi * step / total))`.
    #[default]
    Cosine,
    Constant,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrototypeStrategy {
    /// No prototypes (PCM off).
    None,
    /// Recomputed once per epoch from every paired training sample.
    All,
    /// Recomputed every step from the batch's genuine pairs, with a momentum
    /// running set filling in classes the batch lacks.
    #[default]
    Paired,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Teacher and student updated together every step.
    #[default]
    Joint,
    /// First half of the epochs trains only the teacher; the second half
    /// freezes it and trains only the student.
    TwoStage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub lr_schedule: LrSchedule,
    pub kd_temperature: f64,
    pub sim_temperature: f64,
    pub loss_weights: LossWeights,
    pub ams_mode: AmsMode,
    pub fixed_ratio: f64,
    pub pcm_enabled: bool,
    pub prototype_strategy: PrototypeStrategy,
    pub proto_momentum: f64,
    pub proto_assignment: Assignment,
    /// Pseudo-pair recipients also receive the prototype loss.
    pub pcm_on_pseudo_recipients: bool,
    pub grad_clip: f64,
    pub schedule: Schedule,
    pub net: NetConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-4,
            weight_decay: 5e-5,
            lr_schedule: LrSchedule::Cosine,
            kd_temperature: 2.0,
            sim_temperature: 0.1,
            loss_weights: LossWeights::default(),
            ams_mode: AmsMode::Dynamic,
            fixed_ratio: 0.5,
            pcm_enabled: true,
            prototype_strategy: PrototypeStrategy::Paired,
            proto_momentum: 0.9,
            proto_assignment: Assignment::Nearest,
            pcm_on_pseudo_recipients: true,
            grad_clip: 5.0,
            schedule: Schedule::Joint,
            net: NetConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(PgadError::config(field, "must be finite and > 0"))
            }
        };
        if self.epochs < 1 {
            return Err(PgadError::config("epochs", "must be >= 1"));
        }
        if self.batch_size < 2 {
            return Err(PgadError::config("batch_size", "must be >= 2"));
        }
        positive("learning_rate", self.learning_rate)?;
        positive("kd_temperature", self.kd_temperature)?;
        positive("sim_temperature", self.sim_temperature)?;
        positive("grad_clip", self.grad_clip)?;
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(PgadError::config("weight_decay", "must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.fixed_ratio) {
            return Err(PgadError::config("fixed_ratio", "must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.proto_momentum) {
            return Err(PgadError::config("proto_momentum", "must lie in [0, 1)"));
        }
        if self.pcm_enabled && self.prototype_strategy == PrototypeStrategy::None {
            return Err(PgadError::config(
                "prototype_strategy",
                "`none` requires pcm_enabled = false",
            ));
        }
        if self.net.hidden == 0 || self.net.feature_dim == 0 {
            return Err(PgadError::config("net", "widths must be >= 1"));
        }
        self.loss_weights.validate()
    }
}

/// Cosine annealing from `lr0` at step 0 to 0 at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64) -> Result<f64> {
    if total_steps == 0 || step > total_steps {
        return Err(PgadError::Range {
            name: "cosine step".into(),
            value: step as f64,
            range: format!("[0, {total_steps}] with total > 0"),
        });
    }
    let progress = step as f64 / total_steps as f64;
    Ok(lr0 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// Adam with decoupled weight decay:
/// `p <- p - lr * (m_hat / (sqrt(v_hat) + eps)) - lr * wd * p`.
pub fn adam_update(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64, weight_decay: f64) -> Result<()> {
    if grads.len() != params.len() {
        return Err(PgadError::shape("adam gradient", params.len(), grads.len()));
    }
    if state.m.len() != params.len() {
        return Err(PgadError::shape("adam state", params.len(), state.m.len()));
    }
    state.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS) + lr * weight_decay * *p;
    }
    Ok(())
}

/// Rescales all gradients together so their joint L2 norm is at most
/// `max_norm`; returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [&mut ParamVector], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.squared_norm()).sum::<f64>().sqrt();
    if norm > max_norm {
        let factor = max_norm / norm;
        grads.iter_mut().for_each(|g| g.scale(factor));
    }
    norm
}

/// Id-to-sample lookup over a training set.
#[derive(Debug, Clone)]
pub struct SampleIndex<'a> {
    by_id: HashMap<usize, &'a Sample>,
}

impl<'a> SampleIndex<'a> {
    pub fn new(samples: &'a [Sample]) -> Self {
        SampleIndex {
            by_id: samples.iter().map(|s| (s.id, s)).collect(),
        }
    }

    pub fn get(&self, id: usize) -> Result<&'a Sample> {
        self.by_id
            .get(&id)
            .copied()
            .ok_or_else(|| PgadError::Protocol(format!("batch references unknown sample {id}")))
    }

    fn modality_b(&self, id: usize) -> Result<&'a [f64]> {
        self.get(id)?
            .feat_b
            .as_deref()
            .ok_or_else(|| PgadError::Protocol(format!("sample {id} is routed as paired but has no modality B")))
    }
}

/// Loss report and raw (unclipped) gradients of one batch objective.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub report: LossReport,
    pub teacher_grad: ParamVector,
    pub student_grad: ParamVector,
    pub theta_grad: f64,
    /// Teacher CE on genuine pairs and on pseudo-pairs (`None` when a subset
    /// is empty).
    pub ce_genuine: Option<f64>,
    pub ce_pseudo: Option<f64>,
    /// Classes without a live prototype for this step's prototype loss.
    pub stale_classes: usize,
    /// Whether the prototype loss contributed (PCM on, live prototypes,
    /// unpaired samples present).
    pub pcm_applied: bool,
}

/// Batch objective with externally supplied (constant) prototypes.
#[allow(clippy::too_many_arguments)]
pub fn step_objective(
    teacher: &TeacherNet,
    student: &StudentNet,
    plan: &BatchPlan,
    index: &SampleIndex<'_>,
    protos: Option<&PrototypeSet>,
    ams: &AmsState,
    cfg: &TrainConfig,
) -> Result<StepOutcome> {
    objective_with(teacher, student, plan, index, ams, cfg, |_, _| Ok(protos.cloned()))
}

fn add_scaled(acc: &mut [f64], v: &[f64], scale: f64) {
    acc.iter_mut().zip(v).for_each(|(a, b)| *a += scale * b);
}

#[allow(clippy::too_many_arguments)]
fn objective_with<F>(
    teacher: &TeacherNet,
    student: &StudentNet,
    plan: &BatchPlan,
    index: &SampleIndex<'_>,
    ams: &AmsState,
    cfg: &TrainConfig,
    refresh: F,
) -> Result<StepOutcome>
where
    F: FnOnce(&[Vec<f64>], &[usize]) -> Result<Option<PrototypeSet>>,
{
    let w = cfg.loss_weights;
    let h = teacher.arch().feature_dim();
    let c = teacher.arch().num_classes();
    if plan.is_empty() && plan.pseudo.is_empty() {
        return Err(PgadError::EmptyBatch("train_step"));
    }

    // Teacher forward passes.
    let genuine: Vec<&Sample> = plan.genuine.iter().map(|&id| index.get(id)).collect::<Result<_>>()?;
    let g_labels: Vec<usize> = genuine.iter().map(|s| s.label).collect();
    let g_pass: Vec<TeacherPass> = genuine
        .iter()
        .map(|s| teacher.forward(&s.feat_a, index.modality_b(s.id)?))
        .collect::<Result<_>>()?;
    let mut p_labels = Vec::with_capacity(plan.pseudo.len());
    let mut p_pass = Vec::with_capacity(plan.pseudo.len());
    for pp in &plan.pseudo {
        let recipient = index.get(pp.recipient)?;
        let donor = index.get(pp.donor)?;
        if recipient.label != pp.class || donor.label != pp.class {
            return Err(PgadError::Protocol(format!(
                "pseudo-pair ({}, {}) is not class-pure",
                pp.recipient, pp.donor
            )));
        }
        p_pass.push(teacher.forward(&recipient.feat_a, index.modality_b(pp.donor)?)?);
        p_labels.push(pp.class);
    }

    let fused: Vec<Vec<f64>> = g_pass.iter().map(|p| p.fused.clone()).collect();
    let protos = refresh(&fused, &g_labels)?;

    let zero_up = || TeacherUpstream {
        h_a: vec![0.0; h],
        h_b: vec![0.0; h],
        fused: Vec::new(),
        logits: vec![0.0; c],
    };
    let mut g_up: Vec<TeacherUpstream> = (0..g_pass.len()).map(|_| zero_up()).collect();
    let mut p_up: Vec<TeacherUpstream> = (0..p_pass.len()).map(|_| zero_up()).collect();

    // L_tea.
    let r = sampling_ratio(ams);
    let g_logits: Vec<Vec<f64>> = g_pass.iter().map(|p| p.logits.clone()).collect();
    let ce_g = if g_pass.is_empty() { None } else { Some(ce_loss(&g_logits, &g_labels)?) };
    let ce_p = if p_pass.is_empty() {
        None
    } else {
        let logits: Vec<Vec<f64>> = p_pass.iter().map(|p| p.logits.clone()).collect();
        Some(ce_loss(&logits, &p_labels)?)
    };
    let (wg, wp) = match (&ce_g, &ce_p) {
        (Some(_), Some(_)) if ams.mode != AmsMode::None => (r, 1.0 - r),
        _ => (1.0, 1.0),
    };
    let mut l_tea = 0.0;
    if let Some(ce) = &ce_g {
        l_tea += wg * ce.value;
        for (up, g) in g_up.iter_mut().zip(&ce.grad) {
            add_scaled(&mut up.logits, g, w.tea * wg);
        }
    }
    if let Some(ce) = &ce_p {
        l_tea += wp * ce.value;
        for (up, g) in p_up.iter_mut().zip(&ce.grad) {
            add_scaled(&mut up.logits, g, w.tea * wp);
        }
    }
    let theta_grad = match (&ce_g, &ce_p) {
        (Some(g), Some(p)) if ams.mode == AmsMode::Dynamic => w.tea * theta_gradient(ams, g.value, p.value)?,
        _ => 0.0,
    };

    // L_pair: rows are genuine modality-A encodings, columns every distinct
    // modality-B sample in the batch (genuine first, then extra donors).
    let mut l_pair = 0.0;
    if w.pair > 0.0 && !g_pass.is_empty() {
        enum Column {
            Genuine(usize),
            Donor(usize),
        }
        let mut column_of: HashMap<usize, usize> = HashMap::new();
        let mut columns = Vec::new();
        for (i, s) in genuine.iter().enumerate() {
            column_of.insert(s.id, columns.len());
            columns.push(Column::Genuine(i));
        }
        for (j, pp) in plan.pseudo.iter().enumerate() {
            column_of.entry(pp.donor).or_insert_with(|| {
                columns.push(Column::Donor(j));
                columns.len() - 1
            });
        }
        let column_hb = |col: &Column| match *col {
            Column::Genuine(i) => &g_pass[i].h_b,
            Column::Donor(j) => &p_pass[j].h_b,
        };
        let mut sims = Vec::with_capacity(g_pass.len());
        let mut d_ha = Vec::with_capacity(g_pass.len());
        let mut d_hb = Vec::with_capacity(g_pass.len());
        for pass in &g_pass {
            let mut row = Vec::with_capacity(columns.len());
            let mut ga_row = Vec::with_capacity(columns.len());
            let mut gb_row = Vec::with_capacity(columns.len());
            for col in &columns {
                let (s, ga, gb) = similarity_with_grad(&pass.h_a, column_hb(col), cfg.sim_temperature)?;
                row.push(s);
                ga_row.push(ga);
                gb_row.push(gb);
            }
            sims.push(row);
            d_ha.push(ga_row);
            d_hb.push(gb_row);
        }
        let positives: Vec<(usize, usize)> = genuine.iter().enumerate().map(|(i, s)| (i, column_of[&s.id])).collect();
        let pl = pair_loss(&sims, &positives)?;
        l_pair = pl.value;
        for (i, d_row) in pl.grad.iter().enumerate() {
            for (k, &d) in d_row.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                add_scaled(&mut g_up[i].h_a, &d_ha[i][k], w.pair * d);
                let target = match columns[k] {
                    Column::Genuine(gi) => &mut g_up[gi].h_b,
                    Column::Donor(pj) => &mut p_up[pj].h_b,
                };
                add_scaled(target, &d_hb[i][k], w.pair * d);
            }
        }
    }

    // Student side: genuine samples first, then the unpaired ones.
    let unpaired: Vec<&Sample> = plan
        .unpaired_student_only
        .iter()
        .map(|&id| index.get(id))
        .collect::<Result<_>>()?;
    let s_samples: Vec<&Sample> = genuine.iter().chain(&unpaired).copied().collect();
    let s_pass = s_samples
        .iter()
        .map(|s| student.forward(&s.feat_a))
        .collect::<Result<Vec<_>>>()?;
    let mut s_up: Vec<StudentUpstream> = (0..s_pass.len())
        .map(|_| StudentUpstream {
            feat: vec![0.0; h],
            logits: vec![0.0; c],
        })
        .collect();
    let n_g = genuine.len();

    let s_logits: Vec<Vec<f64>> = s_pass.iter().map(|p| p.logits.clone()).collect();
    let s_labels: Vec<usize> = s_samples.iter().map(|s| s.label).collect();
    let stu = ce_loss(&s_logits, &s_labels)?;
    for (up, g) in s_up.iter_mut().zip(&stu.grad) {
        add_scaled(&mut up.logits, g, w.stu);
    }

    let mut l_kl = 0.0;
    if n_g > 0 {
        let kd = kd_loss(&s_logits[..n_g], &g_logits, cfg.kd_temperature)?;
        l_kl = kd.value;
        for (up, g) in s_up[..n_g].iter_mut().zip(&kd.grad) {
            add_scaled(&mut up.logits, g, w.kl);
        }
    }

    let mut l_proto = 0.0;
    let mut pcm_applied = false;
    let mut stale_classes = c;
    if let Some(set) = protos.as_ref() {
        stale_classes = set.stale_count();
    }
    if cfg.pcm_enabled {
        if let Some(set) = protos.as_ref().filter(|p| p.has_live()) {
            let recipients: std::collections::HashSet<usize> = plan.pseudo.iter().map(|p| p.recipient).collect();
            let routed: Vec<usize> = (n_g..s_samples.len())
                .filter(|&k| cfg.pcm_on_pseudo_recipients || !recipients.contains(&s_samples[k].id))
                .collect();
            let feats: Vec<Vec<f64>> = routed.iter().map(|&k| s_pass[k].feat.clone()).collect();
            let labels: Vec<usize> = routed.iter().map(|&k| s_samples[k].label).collect();
            let pl = proto_loss(&feats, set, cfg.proto_assignment, Some(&labels))?;
            if !pl.empty {
                l_proto = pl.value;
                pcm_applied = true;
                for (&k, g) in routed.iter().zip(&pl.grad) {
                    add_scaled(&mut s_up[k].feat, g, w.proto);
                }
            }
        }
    }

    let report = total_loss(
        &LossTerms {
            tea: l_tea,
            stu: stu.value,
            kl: l_kl,
            pair: l_pair,
            proto: l_proto,
        },
        &w,
    )?;

    let mut teacher_grad = teacher.zero_grad();
    for (pass, up) in g_pass.iter().zip(&g_up).chain(p_pass.iter().zip(&p_up)) {
        teacher.backward(pass, up, &mut teacher_grad)?;
    }
    let mut student_grad = student.zero_grad();
    for (pass, up) in s_pass.iter().zip(&s_up) {
        student.backward(pass, up, &mut student_grad)?;
    }

    Ok(StepOutcome {
        report,
        teacher_grad,
        student_grad,
        theta_grad,
        ce_genuine: ce_g.map(|l| l.value),
        ce_pseudo: ce_p.map(|l| l.value),
        stale_classes,
        pcm_applied,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepTrace {
    pub step: usize,
    pub report: LossReport,
    pub ratio: f64,
    pub theta: f64,
    pub lr: f64,
    pub stale_classes: usize,
    pub shortfall: usize,
    pub pcm_applied: bool,
    /// Teacher CE on the genuine and pseudo subsets (the two halves of the
    /// relaxed AMS objective).
    pub ce_genuine: Option<f64>,
    pub ce_pseudo: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochTrace {
    pub epoch: usize,
    /// Mean of the epoch's step reports.
    pub report: LossReport,
    pub theta: f64,
    pub ratio: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
}

/// Mutable training state for one teacher/student pair on one training set.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    teacher: TeacherNet,
    student: StudentNet,
    ams: AmsState,
    adam_teacher: AdamState,
    adam_student: AdamState,
    adam_theta: AdamState,
    running: PrototypeSet,
    epoch_prototypes: Option<PrototypeSet>,
    index: SampleIndex<'a>,
    samples: &'a [Sample],
    paired_pool: Vec<PoolEntry>,
    unpaired_pool: Vec<PoolEntry>,
    step: usize,
    total_steps: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(teacher: TeacherNet, student: StudentNet, train: &'a [Sample], cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        check_compatible(&teacher, &student)?;
        if train.is_empty() {
            return Err(PgadError::EmptyBatch("fit"));
        }
        let paired_pool: Vec<PoolEntry> = train.iter().filter(|s| s.paired()).map(|s| (s.id, s.label)).collect();
        let unpaired_pool: Vec<PoolEntry> = train.iter().filter(|s| !s.paired()).map(|s| (s.id, s.label)).collect();
        if paired_pool.is_empty() {
            return Err(PgadError::Protocol("training set has no genuine pair".into()));
        }
        let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
        let c = teacher.arch().num_classes();
        let h = teacher.arch().feature_dim();
        Ok(Trainer {
            adam_teacher: AdamState::new(teacher.params().len()),
            adam_student: AdamState::new(student.params().len()),
            adam_theta: AdamState::new(1),
            ams: AmsState::new(cfg.ams_mode, cfg.fixed_ratio),
            running: PrototypeSet::empty(c, h),
            epoch_prototypes: None,
            index: SampleIndex::new(train),
            samples: train,
            paired_pool,
            unpaired_pool,
            step: 0,
            total_steps: cfg.epochs * steps_per_epoch,
            cfg: cfg.clone(),
            teacher,
            student,
        })
    }

    pub fn teacher(&self) -> &TeacherNet {
        &self.teacher
    }

    pub fn student(&self) -> &StudentNet {
        &self.student
    }

    pub fn ams(&self) -> &AmsState {
        &self.ams
    }

    pub fn running_prototypes(&self) -> &PrototypeSet {
        &self.running
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.samples.len().div_ceil(self.cfg.batch_size)
    }

    pub fn into_nets(self) -> (TeacherNet, StudentNet) {
        (self.teacher, self.student)
    }

    fn current_lr(&self) -> Result<f64> {
        match self.cfg.lr_schedule {
            LrSchedule::Cosine => cosine_lr(self.step.min(self.total_steps), self.total_steps, self.cfg.learning_rate),
            LrSchedule::Constant => Ok(self.cfg.learning_rate),
        }
    }

    /// Prototypes for the "all" strategy: one mean per class over every
    /// paired training sample under the current teacher.
    pub fn refresh_epoch_prototypes(&mut self) -> Result<()> {
        let mut fused = Vec::with_capacity(self.paired_pool.len());
        let mut labels = Vec::with_capacity(self.paired_pool.len());
        for &(id, label) in &self.paired_pool {
            let s = self.index.get(id)?;
            fused.push(self.teacher.forward(&s.feat_a, self.index.modality_b(id)?)?.fused);
            labels.push(label);
        }
        self.epoch_prototypes = Some(compute_batch_prototypes(&fused, &labels, self.teacher.arch().num_classes())?);
        Ok(())
    }

    /// Current prototype snapshot (running set, or the epoch set for "all").
    pub fn prototype_snapshot(&self) -> PrototypeSet {
        match self.cfg.prototype_strategy {
            PrototypeStrategy::All => self.epoch_prototypes.clone().unwrap_or_else(|| self.running.clone()),
            _ => self.running.clone(),
        }
    }

    fn stage(&self) -> (bool, bool) {
        match self.cfg.schedule {
            Schedule::Joint => (true, true),
            Schedule::TwoStage => {
                let teacher_steps = self.cfg.epochs.div_ceil(2) * self.steps_per_epoch();
                if self.step < teacher_steps {
                    (true, false)
                } else {
                    (false, true)
                }
            }
        }
    }

    /// One optimisation step on `plan`.
    pub fn train_step(&mut self, plan: &BatchPlan) -> Result<StepTrace> {
        let lr = self.current_lr()?;
        let ratio = sampling_ratio(&self.ams);
        let strategy = if self.cfg.pcm_enabled {
            self.cfg.prototype_strategy
        } else {
            PrototypeStrategy::None
        };
        let momentum = self.cfg.proto_momentum;
        let num_classes = self.teacher.arch().num_classes();
        let running = &mut self.running;
        let epoch_set = &self.epoch_prototypes;
        let step = self.step;
        let outcome = objective_with(
            &self.teacher,
            &self.student,
            plan,
            &self.index,
            &self.ams,
            &self.cfg,
            |fused, labels| match strategy {
                PrototypeStrategy::None => Ok(None),
                PrototypeStrategy::All => Ok(epoch_set.clone()),
                PrototypeStrategy::Paired => {
                    if fused.is_empty() {
                        return Ok(Some(running.clone()));
                    }
                    let batch = compute_batch_prototypes(fused, labels, num_classes)?;
                    *running = update_running_prototypes(running, &batch, momentum)?;
                    Ok(Some(batch.with_fallback(running)?))
                }
            },
        )
        .map_err(|e| match e {
            PgadError::NumericHealth { term, .. } => PgadError::NumericHealth { term, step: Some(step) },
            other => other,
        })?;

        let StepOutcome {
            report,
            mut teacher_grad,
            mut student_grad,
            theta_grad,
            stale_classes,
            pcm_applied,
            ce_genuine,
            ce_pseudo,
        } = outcome;
        if !teacher_grad.is_finite() || !student_grad.is_finite() || !theta_grad.is_finite() {
            return Err(PgadError::NumericHealth {
                term: "gradient".into(),
                step: Some(step),
            });
        }
        let (train_teacher, train_student) = self.stage();
        if !train_teacher {
            teacher_grad.scale(0.0);
        }
        if !train_student {
            student_grad.scale(0.0);
        }
        clip_global_norm(&mut [&mut teacher_grad, &mut student_grad], self.cfg.grad_clip);
        if train_teacher {
            adam_update(
                self.teacher.params_mut().as_mut_slice(),
                teacher_grad.as_slice(),
                &mut self.adam_teacher,
                lr,
                self.cfg.weight_decay,
            )?;
        }
        if train_student {
            adam_update(
                self.student.params_mut().as_mut_slice(),
                student_grad.as_slice(),
                &mut self.adam_student,
                lr,
                self.cfg.weight_decay,
            )?;
        }
        if self.ams.mode == AmsMode::Dynamic && train_teacher {
            let mut theta = [self.ams.theta];
            adam_update(&mut theta, &[theta_grad], &mut self.adam_theta, lr, 0.0)?;
            self.ams.theta = theta[0];
        }
        self.step += 1;
        Ok(StepTrace {
            step,
            report,
            ratio,
            theta: self.ams.theta,
            lr,
            stale_classes,
            shortfall: plan.shortfall,
            pcm_applied,
            ce_genuine,
            ce_pseudo,
        })
    }

    /// Batch plans for `epoch` when AMS is off; AMS modes build each batch
    /// right before its step so it sees the current ratio.
    fn plan_for_step(&self, epoch_plans: &Option<Vec<BatchPlan>>, k: usize) -> Result<BatchPlan> {
        match epoch_plans {
            Some(plans) => Ok(plans[k].clone()),
            None => build_batch(
                &self.paired_pool,
                &self.unpaired_pool,
                self.cfg.batch_size,
                sampling_ratio(&self.ams),
                derive_seed_indexed(self.cfg.seed, "batch", self.step as u64),
            ),
        }
    }

    /// Runs one epoch of `ceil(N / B)` steps.
    pub fn run_epoch(&mut self, epoch: usize) -> Result<(EpochTrace, Vec<StepTrace>)> {
        if self.cfg.pcm_enabled && self.cfg.prototype_strategy == PrototypeStrategy::All {
            self.refresh_epoch_prototypes()?;
        }
        let epoch_plans = if self.cfg.ams_mode == AmsMode::None {
            Some(natural_batches(
                &self.paired_pool,
                &self.unpaired_pool,
                self.cfg.batch_size,
                derive_seed_indexed(self.cfg.seed, "epoch", epoch as u64),
            )?)
        } else {
            None
        };
        let steps = self.steps_per_epoch();
        let mut traces = Vec::with_capacity(steps);
        for k in 0..steps {
            let plan = self.plan_for_step(&epoch_plans, k)?;
            traces.push(self.train_step(&plan)?);
        }
        let n = traces.len() as f64;
        let mean = |f: fn(&LossReport) -> f64| traces.iter().map(|t| f(&t.report)).sum::<f64>() / n;
        let report = LossReport {
            l_tea: mean(|r| r.l_tea),
            l_stu: mean(|r| r.l_stu),
            l_kl: mean(|r| r.l_kl),
            l_pair: mean(|r| r.l_pair),
            l_proto: mean(|r| r.l_proto),
            total: mean(|r| r.total),
        };
        let trace = EpochTrace {
            epoch,
            report,
            theta: self.ams.theta,
            ratio: sampling_ratio(&self.ams),
            lr: traces.last().map_or(0.0, |t| t.lr),
        };
        Ok((trace, traces))
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub teacher: TeacherNet,
    pub student: StudentNet,
    pub epochs: Vec<EpochTrace>,
    /// Prototype set at the end of every epoch.
    pub prototype_snapshots: Vec<PrototypeSet>,
}

/// Trains for `cfg.epochs` epochs of `ceil(N / B)` steps each.
pub fn fit(teacher: TeacherNet, student: StudentNet, train: &[Sample], cfg: &TrainConfig) -> Result<FitResult> {
    let mut trainer = Trainer::new(teacher, student, train, cfg)?;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut prototype_snapshots = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (trace, _) = trainer.run_epoch(epoch)?;
        epochs.push(trace);
        prototype_snapshots.push(trainer.prototype_snapshot());
    }
    let (teacher, student) = trainer.into_nets();
    Ok(FitResult {
        teacher,
        student,
        epochs,
        prototype_snapshots,
    })
}

/// Builds nets from `cfg.net` and `cfg.seed` and trains them.
pub fn fit_from_scratch(train: &[Sample], num_classes: usize, cfg: &TrainConfig) -> Result<FitResult> {
    let first = train.first().ok_or(PgadError::EmptyBatch("fit"))?;
    let dim_b = train
        .iter()
        .find_map(|s| s.feat_b.as_ref().map(Vec::len))
        .ok_or_else(|| PgadError::Protocol("training set has no genuine pair".into()))?;
    let (teacher, student) = crate::nets::build_pair(
        first.feat_a.len(),
        dim_b,
        num_classes,
        &cfg.net,
        derive_seed(cfg.seed, "nets"),
    )?;
    fit(teacher, student, train, cfg)
}

/// Student class probabilities from modality A alone.
pub fn predict_proba(student: &StudentNet, samples: &[Sample]) -> Result<Vec<Vec<f64>>> {
    samples
        .iter()
        .map(|s| student.forward(&s.feat_a).map(|p| softmax(&p.logits)))
        .collect()
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

pub fn accuracy(student: &StudentNet, samples: &[Sample]) -> Result<f64> {
    let probs = predict_proba(student, samples)?;
    let hits = probs
        .iter()
        .zip(samples)
        .filter(|(p, s)| argmax(p) == s.label)
        .count();
    Ok(hits as f64 / samples.len().max(1) as f64)
}

/// Columns `epoch,l_tea,l_stu,l_kl,l_pair,l_proto,total,theta,ratio,lr`.
pub fn write_epoch_traces_csv(path: &Path, traces: &[EpochTrace]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "epoch", "l_tea", "l_stu", "l_kl", "l_pair", "l_proto", "total", "theta", "ratio", "lr",
    ])?;
    for t in traces {
        let r = &t.report;
        w.write_record([
            t.epoch.to_string(),
            r.l_tea.to_string(),
            r.l_stu.to_string(),
            r.l_kl.to_string(),
            r.l_pair.to_string(),
            r.l_proto.to_string(),
            r.total.to_string(),
            t.theta.to_string(),
            t.ratio.to_string(),
            t.lr.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_lr(0, 100, 0.1).unwrap(), 0.1);
        assert!(cosine_lr(100, 100, 0.1).unwrap().abs() < 1e-18);
        assert!((cosine_lr(50, 100, 0.1).unwrap() - 0.05).abs() < 1e-15);
        assert!(cosine_lr(101, 100, 0.1).is_err());
        let lrs: Vec<f64> = (0..=37).map(|s| cosine_lr(s, 37, 1.0).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut p = vec![1.0, -2.0];
        let mut st = AdamState::new(2);
        adam_update(&mut p, &[0.0, 0.0], &mut st, 0.1, 0.0).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_is_sign_like() {
        // Step 1: m_hat = g, v_hat = g^2, update = -lr g / (|g| + eps).
        let g = [0.3, -4.0, 1e-3];
        let mut p = vec![0.0; 3];
        let mut st = AdamState::new(3);
        adam_update(&mut p, &g, &mut st, 0.01, 0.0).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            let expected = -0.01 * gi / (gi.abs() + ADAM_EPS);
            assert!((pi - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn decoupled_decay_shrinks_params() {
        let mut p = vec![2.0, -0.5];
        let mut st = AdamState::new(2);
        adam_update(&mut p, &[0.0, 0.0], &mut st, 0.1, 0.01).unwrap();
        assert!((p[0] - (2.0 - 0.1 * 0.01 * 2.0)).abs() < 1e-15);
        assert!((p[1] - (-0.5 + 0.1 * 0.01 * 0.5)).abs() < 1e-15);
        assert!(adam_update(&mut p, &[0.0], &mut st, 0.1, 0.0).is_err());
    }

    #[test]
    fn clipping_caps_joint_norm() {
        let mut a = ParamVector(vec![3.0, 0.0]);
        let mut b = ParamVector(vec![0.0, 4.0]);
        let norm = clip_global_norm(&mut [&mut a, &mut b], 1.0);
        assert_eq!(norm, 5.0);
        assert!((a.squared_norm() + b.squared_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(PgadError::Config { field, .. }) if field == "epochs"));
        let bad = TrainConfig {
            prototype_strategy: PrototypeStrategy::None,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            proto_momentum: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
