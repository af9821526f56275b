//! The five training objectives and their gradients.
//!
//! All functions return the loss value together with the gradient with
//! respect to their direct inputs (logits, similarities, features); the
//! trainer chains those through the networks.

use serde::{Deserialize, Serialize};

use crate::error::{PgadError, Result};
use crate::prototypes::{nearest_prototype, PrototypeSet};

/// Weights of the five terms in
/// `L = tea*L_tea + stu*L_stu + kl*L_kl + pair*L_pair + proto*L_proto`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub tea: f64,
    pub stu: f64,
    pub kl: f64,
    pub pair: f64,
    pub proto: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            tea: 1.0,
            stu: 1.0,
            kl: 0.5,
            pair: 0.5,
            proto: 0.5,
        }
    }
}

impl LossWeights {
    pub fn uniform(w: f64) -> Self {
        LossWeights {
            tea: w,
            stu: w,
            kl: w,
            pair: w,
            proto: w,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("tea", self.tea),
            ("stu", self.stu),
            ("kl", self.kl),
            ("pair", self.pair),
            ("proto", self.proto),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(PgadError::config(
                    format!("loss_weights.{name}"),
                    "must be finite and >= 0",
                ));
            }
        }
        Ok(())
    }
}

/// Unweighted loss terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub tea: f64,
    pub stu: f64,
    pub kl: f64,
    pub pair: f64,
    pub proto: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_tea: f64,
    pub l_stu: f64,
    pub l_kl: f64,
    pub l_pair: f64,
    pub l_proto: f64,
    pub total: f64,
}

impl LossReport {
    pub fn terms(&self) -> LossTerms {
        LossTerms {
            tea: self.l_tea,
            stu: self.l_stu,
            kl: self.l_kl,
            pair: self.l_pair,
            proto: self.l_proto,
        }
    }

    /// Recomputes the weighted total from the stored terms.
    pub fn recombine(&self, w: &LossWeights) -> f64 {
        w.tea * self.l_tea + w.stu * self.l_stu + w.kl * self.l_kl + w.pair * self.l_pair + w.proto * self.l_proto
    }
}

/// Weighted sum of the five terms. Any non-finite term is rejected by name.
pub fn total_loss(terms: &LossTerms, weights: &LossWeights) -> Result<LossReport> {
    for (name, v) in [
        ("l_tea", terms.tea),
        ("l_stu", terms.stu),
        ("l_kl", terms.kl),
        ("l_pair", terms.pair),
        ("l_proto", terms.proto),
    ] {
        if !v.is_finite() {
            return Err(PgadError::NumericHealth {
                term: name.into(),
                step: None,
            });
        }
    }
    weights.validate()?;
    let mut report = LossReport {
        l_tea: terms.tea,
        l_stu: terms.stu,
        l_kl: terms.kl,
        l_pair: terms.pair,
        l_proto: terms.proto,
        total: 0.0,
    };
    report.total = report.recombine(weights);
    Ok(report)
}

/// Loss value and gradient with respect to a row-major input matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<Vec<f64>>,
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(row);
    row.iter().map(|x| x - lse).collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    log_softmax(row).into_iter().map(f64::exp).collect()
}

fn check_rows(name: &'static str, m: &[Vec<f64>]) -> Result<usize> {
    let Some(first) = m.first() else {
        return Err(PgadError::EmptyBatch(name));
    };
    let cols = first.len();
    for row in m {
        if row.len() != cols {
            return Err(PgadError::shape(format!("{name} row width"), cols, row.len()));
        }
    }
    Ok(cols)
}

/// Mean softmax cross-entropy; gradient `(softmax - onehot) / N`.
pub fn ce_loss(logits: &[Vec<f64>], labels: &[usize]) -> Result<LossGrad> {
    let classes = check_rows("ce_loss", logits)?;
    if labels.len() != logits.len() {
        return Err(PgadError::shape("ce_loss labels", logits.len(), labels.len()));
    }
    let n = logits.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &label) in logits.iter().zip(labels) {
        if label >= classes {
            return Err(PgadError::Label {
                label,
                num_classes: classes,
            });
        }
        let logp = log_softmax(row);
        value -= logp[label];
        grad.push(
            logp.iter()
                .enumerate()
                .map(|(c, lp)| (lp.exp() - f64::from(u8::from(c == label))) / n)
                .collect(),
        );
    }
    Ok(LossGrad {
        value: value / n,
        grad,
    })
}

/// `T^2 * mean_i KL(softmax(t_i / T) || softmax(s_i / T))`; the teacher side
/// is a constant, so only the student-logit gradient is returned.
pub fn kd_loss(student_logits: &[Vec<f64>], teacher_logits: &[Vec<f64>], temperature: f64) -> Result<LossGrad> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(PgadError::Range {
            name: "kd temperature".into(),
            value: temperature,
            range: "(0, inf)".into(),
        });
    }
    let classes = check_rows("kd_loss", student_logits)?;
    if teacher_logits.len() != student_logits.len() {
        return Err(PgadError::shape("kd_loss teacher rows", student_logits.len(), teacher_logits.len()));
    }
    let n = student_logits.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(student_logits.len());
    for (s, t) in student_logits.iter().zip(teacher_logits) {
        if t.len() != classes {
            return Err(PgadError::shape("kd_loss teacher width", classes, t.len()));
        }
        let ls: Vec<f64> = log_softmax(&s.iter().map(|x| x / temperature).collect::<Vec<_>>());
        let lt: Vec<f64> = log_softmax(&t.iter().map(|x| x / temperature).collect::<Vec<_>>());
        let kl: f64 = lt.iter().zip(&ls).map(|(a, b)| a.exp() * (a - b)).sum();
        value += kl.max(0.0);
        grad.push(
            ls.iter()
                .zip(&lt)
                .map(|(a, b)| temperature * (a.exp() - b.exp()) / n)
                .collect(),
        );
    }
    Ok(LossGrad {
        value: temperature * temperature * value / n,
        grad,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Temperature-scaled cosine similarity `cos(a, b) / tau`.
pub fn similarity(h_a: &[f64], h_b: &[f64], tau: f64) -> Result<f64> {
    similarity_with_grad(h_a, h_b, tau).map(|(s, _, _)| s)
}

/// `cos(a, b) / tau` together with its gradients with respect to `a` and `b`.
pub fn similarity_with_grad(h_a: &[f64], h_b: &[f64], tau: f64) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if h_a.len() != h_b.len() {
        return Err(PgadError::shape("similarity operands", h_a.len(), h_b.len()));
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(PgadError::Range {
            name: "similarity temperature".into(),
            value: tau,
            range: "(0, inf)".into(),
        });
    }
    let (na, nb) = (norm(h_a), norm(h_b));
    if na == 0.0 || nb == 0.0 {
        return Err(PgadError::Degenerate("cosine similarity of a zero vector".into()));
    }
    let dot: f64 = h_a.iter().zip(h_b).map(|(x, y)| x * y).sum();
    let cos = dot / (na * nb);
    let ga = h_a
        .iter()
        .zip(h_b)
        .map(|(a, b)| (b / (na * nb) - cos * a / (na * na)) / tau)
        .collect();
    let gb = h_a
        .iter()
        .zip(h_b)
        .map(|(a, b)| (a / (na * nb) - cos * b / (nb * nb)) / tau)
        .collect();
    Ok((cos / tau, ga, gb))
}

/// Contrastive pair loss over a similarity matrix (rows: modality-A
/// features, columns: every modality-B candidate in the batch):
/// `mean_(i,j) [ -sim(i,j) + log sum_k exp(sim(i,k)) ]`.
///
/// Every row must carry exactly one positive.
pub fn pair_loss(sim: &[Vec<f64>], positives: &[(usize, usize)]) -> Result<LossGrad> {
    let cols = check_rows("pair_loss", sim)?;
    if cols == 0 {
        return Err(PgadError::Protocol("pair_loss needs at least one candidate column".into()));
    }
    let mut positive_of = vec![None; sim.len()];
    for &(i, j) in positives {
        if i >= sim.len() || j >= cols {
            return Err(PgadError::Protocol(format!(
                "positive ({i}, {j}) outside a {}x{cols} similarity matrix",
                sim.len()
            )));
        }
        if positive_of[i].replace(j).is_some() {
            return Err(PgadError::Protocol(format!("row {i} has more than one positive")));
        }
    }
    if let Some(i) = positive_of.iter().position(Option::is_none) {
        return Err(PgadError::Protocol(format!("row {i} has no positive")));
    }
    let n = positives.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(sim.len());
    for (row, j) in sim.iter().zip(positive_of) {
        let j = j.unwrap();
        let logp = log_softmax(row);
        value -= logp[j];
        grad.push(
            logp.iter()
                .enumerate()
                .map(|(k, lp)| (lp.exp() - f64::from(u8::from(k == j))) / n)
                .collect(),
        );
    }
    Ok(LossGrad {
        value: value / n,
        grad,
    })
}

/// Which prototype an unpaired feature is pulled toward.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assignment {
    /// The nearest live prototype.
    #[default]
    Nearest,
    /// The sample's own class prototype, falling back to the nearest one
    /// when that class is stale.
    TrueClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtoLoss {
    pub value: f64,
    pub grad: Vec<Vec<f64>>,
    /// Set when the unpaired set was empty (value 0, nothing to pull).
    pub empty: bool,
    pub assigned: Vec<usize>,
}

/// `(1/|U|) sum_i ||h_i - z*_i||^2` with the assignment held fixed, so the
/// gradient is `2 (h_i - z*_i) / |U|`. Prototypes are constants.
pub fn proto_loss(
    unpaired_feats: &[Vec<f64>],
    prototypes: &PrototypeSet,
    assignment: Assignment,
    labels: Option<&[usize]>,
) -> Result<ProtoLoss> {
    if !prototypes.has_live() {
        return Err(PgadError::Protocol("proto_loss needs at least one live prototype".into()));
    }
    if unpaired_feats.is_empty() {
        return Ok(ProtoLoss {
            value: 0.0,
            grad: Vec::new(),
            empty: true,
            assigned: Vec::new(),
        });
    }
    if assignment == Assignment::TrueClass {
        match labels {
            Some(l) if l.len() == unpaired_feats.len() => {}
            Some(l) => return Err(PgadError::shape("proto_loss labels", unpaired_feats.len(), l.len())),
            None => return Err(PgadError::Usage("true-class assignment needs labels".into())),
        }
    }
    let n = unpaired_feats.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(unpaired_feats.len());
    let mut assigned = Vec::with_capacity(unpaired_feats.len());
    for (i, h) in unpaired_feats.iter().enumerate() {
        let (class, _) = nearest_prototype(h, prototypes)?;
        let class = match (assignment, labels) {
            (Assignment::TrueClass, Some(l)) => match prototypes.get(l[i]) {
                Some(p) if !p.stale => l[i],
                _ => class,
            },
            _ => class,
        };
        let z = &prototypes.get(class).unwrap().centroid;
        let diff: Vec<f64> = h.iter().zip(z).map(|(a, b)| a - b).collect();
        value += diff.iter().map(|d| d * d).sum::<f64>();
        grad.push(diff.iter().map(|d| 2.0 * d / n).collect());
        assigned.push(class);
    }
    Ok(ProtoLoss {
        value: value / n,
        grad,
        empty: false,
        assigned,
    })
}
