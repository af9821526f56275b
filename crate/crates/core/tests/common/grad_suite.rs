//! Random gradient-check instances for each loss composed with the networks.
//! Every function returns the worst relative error over all parameters.

use pgad::ams::{AmsMode, AmsState, BatchPlan, PseudoPair};
use pgad::losses::{ce_loss, kd_loss, pair_loss, proto_loss, similarity_with_grad, Assignment};
use pgad::nets::{
    Activation, NetConfig, ParamVector, StudentArch, StudentNet, StudentUpstream, TeacherArch, TeacherNet,
    TeacherUpstream,
};
use pgad::prototypes::PrototypeSet;
use pgad::rng::{rng_from_seed, Rng};
use pgad::synthdata::Sample;
use pgad::trainer::{step_objective, PrototypeStrategy, SampleIndex, TrainConfig};
use rand::Rng as _;

use super::fd_check;

pub const LOSSES: [&str; 5] = ["ce", "kd", "pair", "proto", "total"];
pub const MAX_DIM: usize = 8;

struct Dims {
    da: usize,
    db: usize,
    hidden: usize,
    h: usize,
    c: usize,
    n: usize,
}

fn dims(rng: &mut Rng) -> Dims {
    Dims {
        da: rng.random_range(1..=MAX_DIM),
        db: rng.random_range(1..=MAX_DIM),
        hidden: rng.random_range(1..=MAX_DIM),
        h: rng.random_range(2..=MAX_DIM),
        c: rng.random_range(2..=4),
        n: rng.random_range(2..=5),
    }
}

fn net_cfg(d: &Dims) -> NetConfig {
    NetConfig {
        hidden: d.hidden,
        feature_dim: d.h,
        activation: Activation::Tanh,
    }
}

fn vector(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()
}

fn nets(rng: &mut Rng, d: &Dims) -> (TeacherNet, StudentNet) {
    let cfg = net_cfg(d);
    let ta = TeacherArch::from_config(d.da, d.db, d.c, &cfg).unwrap();
    let sa = StudentArch::from_config(d.da, d.c, &cfg).unwrap();
    let tp = vector(rng, ta.param_count());
    let sp = vector(rng, sa.param_count());
    (
        TeacherNet::from_params(ta, ParamVector(tp)).unwrap(),
        StudentNet::from_params(sa, ParamVector(sp)).unwrap(),
    )
}

fn with_student(s: &StudentNet, p: &[f64]) -> StudentNet {
    StudentNet::from_params(s.arch().clone(), ParamVector(p.to_vec())).unwrap()
}

fn with_teacher(t: &TeacherNet, p: &[f64]) -> TeacherNet {
    TeacherNet::from_params(t.arch().clone(), ParamVector(p.to_vec())).unwrap()
}

fn student_logits(s: &StudentNet, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    xs.iter().map(|x| s.forward(x).unwrap().logits).collect()
}

/// Backpropagates per-row logit and feature gradients through the student.
fn student_grad(s: &StudentNet, xs: &[Vec<f64>], d_logits: Option<&[Vec<f64>]>, d_feat: Option<&[Vec<f64>]>) -> ParamVector {
    let mut g = s.zero_grad();
    for (i, x) in xs.iter().enumerate() {
        let pass = s.forward(x).unwrap();
        let up = StudentUpstream {
            feat: d_feat.map_or_else(Vec::new, |d| d[i].clone()),
            logits: d_logits.map_or_else(Vec::new, |d| d[i].clone()),
        };
        s.backward(&pass, &up, &mut g).unwrap();
    }
    g
}

pub fn ce_instance(seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let d = dims(&mut rng);
    let (_, s) = nets(&mut rng, &d);
    let xs: Vec<Vec<f64>> = (0..d.n).map(|_| vector(&mut rng, d.da)).collect();
    let labels: Vec<usize> = (0..d.n).map(|_| rng.random_range(0..d.c)).collect();
    let loss = ce_loss(&student_logits(&s, &xs), &labels).unwrap();
    let g = student_grad(&s, &xs, Some(&loss.grad), None);
    fd_check(s.params().as_slice(), g.as_slice(), |p| {
        ce_loss(&student_logits(&with_student(&s, p), &xs), &labels).unwrap().value
    })
}

pub fn kd_instance(seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let d = dims(&mut rng);
    let (t, s) = nets(&mut rng, &d);
    let xs: Vec<Vec<f64>> = (0..d.n).map(|_| vector(&mut rng, d.da)).collect();
    let bs: Vec<Vec<f64>> = (0..d.n).map(|_| vector(&mut rng, d.db)).collect();
    let temperature = rng.random_range(0.5..4.0);
    let teacher: Vec<Vec<f64>> = xs.iter().zip(&bs).map(|(a, b)| t.forward(a, b).unwrap().logits).collect();
    let loss = kd_loss(&student_logits(&s, &xs), &teacher, temperature).unwrap();
    let g = student_grad(&s, &xs, Some(&loss.grad), None);
    fd_check(s.params().as_slice(), g.as_slice(), |p| {
        kd_loss(&student_logits(&with_student(&s, p), &xs), &teacher, temperature)
            .unwrap()
            .value
    })
}

/// Contrastive loss over every A row against every B column of the batch,
/// positives on the diagonal; gradient with respect to teacher parameters.
pub fn pair_instance(seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let d = dims(&mut rng);
    let (t, _) = nets(&mut rng, &d);
    let xs: Vec<Vec<f64>> = (0..d.n).map(|_| vector(&mut rng, d.da)).collect();
    let bs: Vec<Vec<f64>> = (0..d.n).map(|_| vector(&mut rng, d.db)).collect();
    let tau = rng.random_range(0.05..1.0);
    let positives: Vec<(usize, usize)> = (0..d.n).map(|i| (i, i)).collect();
    let value = |net: &TeacherNet| {
        let passes: Vec<_> = xs.iter().zip(&bs).map(|(a, b)| net.forward(a, b).unwrap()).collect();
        let sims: Vec<Vec<f64>> = passes
            .iter()
            .map(|pi| {
                passes
                    .iter()
                    .map(|pk| similarity_with_grad(&pi.h_a, &pk.h_b, tau).unwrap().0)
                    .collect()
            })
            .collect();
        pair_loss(&sims, &positives).unwrap().value
    };

    let passes: Vec<_> = xs.iter().zip(&bs).map(|(a, b)| t.forward(a, b).unwrap()).collect();
    let mut sims = vec![vec![0.0; d.n]; d.n];
    let mut grads = vec![vec![(Vec::new(), Vec::new()); d.n]; d.n];
    for i in 0..d.n {
        for k in 0..d.n {
            let (s, ga, gb) = similarity_with_grad(&passes[i].h_a, &passes[k].h_b, tau).unwrap();
            sims[i][k] = s;
            grads[i][k] = (ga, gb);
        }
    }
    let loss = pair_loss(&sims, &positives).unwrap();
    let mut ups: Vec<TeacherUpstream> = (0..d.n)
        .map(|_| TeacherUpstream {
            h_a: vec![0.0; d.h],
            h_b: vec![0.0; d.h],
            fused: Vec::new(),
            logits: Vec::new(),
        })
        .collect();
    for i in 0..d.n {
        for k in 0..d.n {
            let w = loss.grad[i][k];
            let (ga, gb) = &grads[i][k];
            ups[i].h_a.iter_mut().zip(ga).for_each(|(u, g)| *u += w * g);
            ups[k].h_b.iter_mut().zip(gb).for_each(|(u, g)| *u += w * g);
        }
    }
    let mut g = t.zero_grad();
    for (pass, up) in passes.iter().zip(&ups) {
        t.backward(pass, up, &mut g).unwrap();
    }
    fd_check(t.params().as_slice(), g.as_slice(), |p| value(&with_teacher(&t, p)))
}

/// Nearest-prototype pull on student features with fixed prototypes.
pub fn proto_instance(seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let d = dims(&mut rng);
    let (_, s) = nets(&mut rng, &d);
    let xs: Vec<Vec<f64>> = (0..d.n).map(|_| vector(&mut rng, d.da)).collect();
    let protos = PrototypeSet::from_centroids((0..d.c).map(|_| vector(&mut rng, d.h)).collect()).unwrap();
    let feats = |net: &StudentNet| -> Vec<Vec<f64>> { xs.iter().map(|x| net.forward(x).unwrap().feat).collect() };
    let loss = proto_loss(&feats(&s), &protos, Assignment::Nearest, None).unwrap();
    let g = student_grad(&s, &xs, None, Some(&loss.grad));
    fd_check(s.params().as_slice(), g.as_slice(), |p| {
        let net = with_student(&s, p);
        let l = proto_loss(&feats(&net), &protos, Assignment::Nearest, None).unwrap();
        // The assignment is piecewise constant; a flip inside the stencil
        // would make the difference meaningless.
        assert_eq!(l.assigned, loss.assigned, "assignment flipped inside the stencil");
        l.value
    })
}

/// Full weighted objective on a batch with genuine pairs, pseudo-pairs and
/// unpaired samples, dynamic AMS and fixed prototypes. Checks teacher,
/// student and theta gradients together.
pub fn total_instance(seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let d = dims(&mut rng);
    let (t, s) = nets(&mut rng, &d);
    let n_genuine = d.n.max(2);
    let n_unpaired = rng.random_range(1..=3);
    let mut samples = Vec::new();
    for id in 0..n_genuine {
        samples.push(Sample {
            id,
            label: id % 2,
            feat_a: vector(&mut rng, d.da),
            feat_b: Some(vector(&mut rng, d.db)),
        });
    }
    let mut pseudo = Vec::new();
    for k in 0..n_unpaired {
        let id = n_genuine + k;
        let label = rng.random_range(0..2);
        samples.push(Sample {
            id,
            label,
            feat_a: vector(&mut rng, d.da),
            feat_b: None,
        });
        // Donors of the same class: genuine ids with matching parity.
        let donors: Vec<usize> = (label..n_genuine).step_by(2).collect();
        let donor = donors[rng.random_range(0..donors.len())];
        pseudo.push(PseudoPair {
            recipient: id,
            donor,
            class: label,
        });
    }
    let plan = BatchPlan {
        genuine: (0..n_genuine).collect(),
        unpaired_student_only: pseudo.iter().map(|p| p.recipient).collect(),
        pseudo,
        shortfall: 0,
    };
    let index = SampleIndex::new(&samples);
    let protos = PrototypeSet::from_centroids((0..d.c).map(|_| vector(&mut rng, d.h)).collect()).unwrap();
    let cfg = TrainConfig {
        ams_mode: AmsMode::Dynamic,
        prototype_strategy: PrototypeStrategy::Paired,
        kd_temperature: rng.random_range(0.5..4.0),
        sim_temperature: rng.random_range(0.05..1.0),
        net: net_cfg(&d),
        ..TrainConfig::default()
    };
    let mut ams = AmsState::new(AmsMode::Dynamic, 0.5);
    ams.theta = rng.random_range(-2.0..2.0);

    let out = step_objective(&t, &s, &plan, &index, Some(&protos), &ams, &cfg).unwrap();
    assert!(out.pcm_applied && out.report.l_pair > 0.0);
    let (nt, ns) = (t.params().len(), s.params().len());
    let mut x: Vec<f64> = t.params().as_slice().to_vec();
    x.extend_from_slice(s.params().as_slice());
    x.push(ams.theta);
    let mut analytic: Vec<f64> = out.teacher_grad.as_slice().to_vec();
    analytic.extend_from_slice(out.student_grad.as_slice());
    analytic.push(out.theta_grad);
    // KD treats the teacher logits as constants, so its term is evaluated
    // with the unperturbed teacher.
    let kl = cfg.loss_weights.kl;
    fd_check(&x, &analytic, |p| {
        let tn = with_teacher(&t, &p[..nt]);
        let sn = with_student(&s, &p[nt..nt + ns]);
        let mut a = ams;
        a.theta = p[nt + ns];
        let moved = step_objective(&tn, &sn, &plan, &index, Some(&protos), &a, &cfg).unwrap().report;
        let held = step_objective(&t, &sn, &plan, &index, Some(&protos), &a, &cfg).unwrap().report;
        moved.total - kl * moved.l_kl + kl * held.l_kl
    })
}

pub fn instance(loss: &str, seed: u64) -> f64 {
    match loss {
        "ce" => ce_instance(seed),
        "kd" => kd_instance(seed),
        "pair" => pair_instance(seed),
        "proto" => proto_instance(seed),
        "total" => total_instance(seed),
        other => panic!("unknown loss {other}"),
    }
}

/// Worst relative error of `loss` over `count` seeded instances.
pub fn worst(loss: &str, count: u64) -> f64 {
    (0..count).map(|i| instance(loss, 0x6a0d + i)).fold(0.0, f64::max)
}
