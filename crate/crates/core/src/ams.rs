//! Adaptive multi-modal sampling.
//!
//! Teacher-side batches mix genuine pairs with pseudo-pairs (an unpaired
//! modality-A sample matched with a modality-B donor of the same class). The
//! genuine fraction is `r = sigmoid(theta)` with `theta` trained through the
//! relaxed objective `r * loss_genuine + (1 - r) * loss_pseudo`, whose
//! `theta`-derivative is exact even though the realised batch composition
//! rounds `r * B` up to an integer.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{PgadError, Result};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AmsMode {
    /// No pseudo-pairs: batches are drawn from the data as it comes; the
    /// teacher only sees genuine pairs.
    None,
    /// Constant genuine fraction.
    Fixed,
    /// Genuine fraction `sigmoid(theta)` with learnable `theta`.
    #[default]
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmsState {
    pub theta: f64,
    pub mode: AmsMode,
    pub fixed_ratio: f64,
}

impl AmsState {
    /// `theta` starts at 0, i.e. `r = 0.5`.
    pub fn new(mode: AmsMode, fixed_ratio: f64) -> Self {
        AmsState {
            theta: 0.0,
            mode,
            fixed_ratio,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Genuine-pair fraction: `sigmoid(theta)` (dynamic), `fixed_ratio` (fixed)
/// or 1 (none).
pub fn sampling_ratio(state: &AmsState) -> f64 {
    match state.mode {
        AmsMode::Dynamic => sigmoid(state.theta),
        AmsMode::Fixed => state.fixed_ratio,
        AmsMode::None => 1.0,
    }
}

/// `d/dtheta [ r loss_paired + (1 - r) loss_pseudo ]` with `r = sigmoid(theta)`.
pub fn theta_gradient(state: &AmsState, loss_paired: f64, loss_pseudo: f64) -> Result<f64> {
    if state.mode != AmsMode::Dynamic {
        return Err(PgadError::Usage("theta only has a gradient in dynamic mode".into()));
    }
    for (name, v) in [("loss_paired", loss_paired), ("loss_pseudo", loss_pseudo)] {
        if !v.is_finite() {
            return Err(PgadError::NumericHealth {
                term: name.into(),
                step: None,
            });
        }
    }
    let r = sigmoid(state.theta);
    Ok((loss_paired - loss_pseudo) * r * (1.0 - r))
}

/// A pool entry: `(sample id, class label)`.
pub type PoolEntry = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PseudoPair {
    pub recipient: usize,
    pub donor: usize,
    pub class: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BatchPlan {
    /// Ids of samples that carry their own modality B.
    pub genuine: Vec<usize>,
    pub pseudo: Vec<PseudoPair>,
    /// Unpaired ids in the batch; the student sees them, PCM applies.
    pub unpaired_student_only: Vec<usize>,
    /// Requested slots the pools could not fill.
    pub shortfall: usize,
}

impl BatchPlan {
    pub fn len(&self) -> usize {
        self.genuine.len() + self.pseudo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.genuine.is_empty() && self.unpaired_student_only.is_empty()
    }
}

/// Number of genuine slots for a batch of `batch_size` at ratio `r`:
/// `ceil(r * B)`, ignoring floating-point dust above an integer.
pub fn genuine_slots(r: f64, batch_size: usize) -> usize {
    ((r * batch_size as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Samples `ceil(r * B)` genuine pairs (without replacement, capped at the
/// pool size) and fills the remainder with pseudo-pairs built from unpaired
/// samples and same-class donors drawn from the paired pool.
pub fn build_batch(
    paired_pool: &[PoolEntry],
    unpaired_pool: &[PoolEntry],
    batch_size: usize,
    r: f64,
    seed: u64,
) -> Result<BatchPlan> {
    if batch_size < 2 {
        return Err(PgadError::config("batch_size", "must be >= 2"));
    }
    if !(0.0..=1.0).contains(&r) {
        return Err(PgadError::Range {
            name: "sampling ratio".into(),
            value: r,
            range: "[0, 1]".into(),
        });
    }
    if paired_pool.is_empty() {
        return Err(PgadError::Protocol("paired pool is empty; at least one genuine pair is required".into()));
    }
    let paired_ids: HashSet<usize> = paired_pool.iter().map(|e| e.0).collect();
    if let Some(e) = unpaired_pool.iter().find(|e| paired_ids.contains(&e.0)) {
        return Err(PgadError::Protocol(format!("sample {} is in both pools", e.0)));
    }

    let mut rng = rng_from_seed(seed);
    let n_genuine = genuine_slots(r, batch_size).min(paired_pool.len());
    let n_pseudo = (batch_size - genuine_slots(r, batch_size).min(batch_size)).min(unpaired_pool.len());

    let mut donors_by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(id, class) in paired_pool {
        donors_by_class.entry(class).or_default().push(id);
    }
    if n_pseudo > 0 {
        if let Some(&(_, class)) = unpaired_pool.iter().find(|e| !donors_by_class.contains_key(&e.1)) {
            return Err(PgadError::DonorExhaustion { class });
        }
    }

    let genuine: Vec<usize> = paired_pool
        .choose_multiple(&mut rng, n_genuine)
        .map(|e| e.0)
        .collect();
    let recipients: Vec<PoolEntry> = unpaired_pool
        .choose_multiple(&mut rng, n_pseudo)
        .copied()
        .collect();

    // Donors are drawn without replacement inside the batch; a class that
    // runs out is reshuffled and reused.
    let mut queues: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut pseudo = Vec::with_capacity(recipients.len());
    for &(recipient, class) in &recipients {
        let queue = queues.entry(class).or_default();
        if queue.is_empty() {
            let mut fresh = donors_by_class[&class].clone();
            fresh.shuffle(&mut rng);
            *queue = fresh;
        }
        let donor = queue.pop().unwrap();
        pseudo.push(PseudoPair {
            recipient,
            donor,
            class,
        });
    }
    let unpaired_student_only = recipients.iter().map(|e| e.0).collect();
    let shortfall = batch_size - genuine.len() - pseudo.len();
    Ok(BatchPlan {
        genuine,
        pseudo,
        unpaired_student_only,
        shortfall,
    })
}

/// One epoch of plain mini-batches over every sample, used when AMS is off:
/// each batch routes its paired samples to `genuine` and its unpaired ones to
/// `unpaired_student_only`, with no pseudo-pairs.
pub fn natural_batches(
    paired_pool: &[PoolEntry],
    unpaired_pool: &[PoolEntry],
    batch_size: usize,
    seed: u64,
) -> Result<Vec<BatchPlan>> {
    if batch_size < 2 {
        return Err(PgadError::config("batch_size", "must be >= 2"));
    }
    let paired: HashSet<usize> = paired_pool.iter().map(|e| e.0).collect();
    let mut all: Vec<usize> = paired_pool.iter().chain(unpaired_pool).map(|e| e.0).collect();
    all.shuffle(&mut rng_from_seed(seed));
    Ok(all
        .chunks(batch_size)
        .map(|chunk| {
            let (genuine, unpaired): (Vec<usize>, Vec<usize>) =
                chunk.iter().partition(|id| paired.contains(id));
            BatchPlan {
                genuine,
                pseudo: Vec::new(),
                unpaired_student_only: unpaired,
                shortfall: 0,
            }
        })
        .collect())
}

/// Per-epoch AMS trace, columns `epoch,theta,ratio`.
pub fn write_ams_trace(path: &Path, rows: &[(usize, f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "theta", "ratio"])?;
    for (epoch, theta, ratio) in rows {
        w.write_record([epoch.to_string(), theta.to_string(), ratio.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pools(n_paired: usize, n_unpaired: usize) -> (Vec<PoolEntry>, Vec<PoolEntry>) {
        let paired = (0..n_paired).map(|i| (i, i % 2)).collect();
        let unpaired = (0..n_unpaired).map(|i| (1000 + i, i % 2)).collect();
        (paired, unpaired)
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(sampling_ratio(&AmsState::new(AmsMode::Dynamic, 0.0)), 0.5);
        let saturated = AmsState {
            theta: 20.0,
            ..AmsState::new(AmsMode::Dynamic, 0.0)
        };
        assert!((sampling_ratio(&saturated) - 1.0).abs() < 1e-8);
        assert_eq!(sampling_ratio(&AmsState::new(AmsMode::Fixed, 0.5)), 0.5);
        assert_eq!(sampling_ratio(&AmsState::new(AmsMode::None, 0.5)), 1.0);
    }

    #[test]
    fn theta_gradient_examples() {
        let s = AmsState::new(AmsMode::Dynamic, 0.0);
        assert_eq!(theta_gradient(&s, 0.7, 0.7).unwrap(), 0.0);
        assert_eq!(theta_gradient(&s, 1.0, 0.0).unwrap(), 0.25);
        let sat = AmsState { theta: 20.0, ..s };
        assert!(theta_gradient(&sat, 5.0, -5.0).unwrap().abs() < 1e-7);
        assert!(matches!(
            theta_gradient(&AmsState::new(AmsMode::Fixed, 0.5), 1.0, 0.0),
            Err(PgadError::Usage(_))
        ));
    }

    #[test]
    fn all_genuine_at_r_one() {
        let (p, u) = pools(40, 40);
        let plan = build_batch(&p, &u, 32, 1.0, 1).unwrap();
        assert_eq!(plan.genuine.len(), 32);
        assert!(plan.pseudo.is_empty());
        assert_eq!(plan.shortfall, 0);
    }

    #[test]
    fn half_and_half() {
        let (p, u) = pools(40, 40);
        let plan = build_batch(&p, &u, 32, 0.5, 1).unwrap();
        assert_eq!(plan.genuine.len(), 16);
        assert_eq!(plan.pseudo.len(), 16);
        assert_eq!(plan.unpaired_student_only.len(), 16);
        for pp in &plan.pseudo {
            assert_eq!(pp.class, (pp.recipient - 1000) % 2);
            assert_eq!(pp.class, pp.donor % 2);
        }
        let genuine: HashSet<_> = plan.genuine.iter().collect();
        assert!(plan.pseudo.iter().all(|pp| !genuine.contains(&pp.recipient)));
    }

    #[test]
    fn shortfall_is_reported() {
        let (p, u) = pools(10, 3);
        let plan = build_batch(&p, &u, 32, 0.5, 4).unwrap();
        assert_eq!(plan.genuine.len(), 10);
        assert_eq!(plan.pseudo.len(), 3);
        assert_eq!(plan.shortfall, 19);
    }

    #[test]
    fn donor_exhaustion() {
        let paired = vec![(0, 0), (1, 0)];
        let unpaired = vec![(5, 1)];
        assert!(matches!(
            build_batch(&paired, &unpaired, 4, 0.5, 0),
            Err(PgadError::DonorExhaustion { class: 1 })
        ));
    }

    #[test]
    fn protocol_errors() {
        assert!(matches!(build_batch(&[], &[(1, 0)], 4, 0.5, 0), Err(PgadError::Protocol(_))));
        assert!(matches!(
            build_batch(&[(1, 0)], &[(1, 0)], 4, 0.5, 0),
            Err(PgadError::Protocol(_))
        ));
        assert!(build_batch(&[(1, 0)], &[], 1, 0.5, 0).is_err());
    }

    #[test]
    fn donors_reused_only_when_exhausted() {
        let paired = vec![(0, 0), (1, 0)];
        let unpaired: Vec<PoolEntry> = (10..16).map(|i| (i, 0)).collect();
        let plan = build_batch(&paired, &unpaired, 8, 0.25, 3).unwrap();
        assert_eq!(plan.pseudo.len(), 6);
        for pair in plan.pseudo.chunks(2) {
            assert_ne!(pair[0].donor, pair[1].donor);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let (p, u) = pools(50, 50);
        assert_eq!(build_batch(&p, &u, 16, 0.3, 9).unwrap(), build_batch(&p, &u, 16, 0.3, 9).unwrap());
    }

    #[test]
    fn natural_batches_cover_everything_once() {
        let (p, u) = pools(7, 6);
        let plans = natural_batches(&p, &u, 4, 2).unwrap();
        assert_eq!(plans.len(), 4);
        let mut seen: Vec<usize> = plans
            .iter()
            .flat_map(|b| b.genuine.iter().chain(&b.unpaired_student_only).copied())
            .collect();
        seen.sort_unstable();
        let mut all: Vec<usize> = p.iter().chain(&u).map(|e| e.0).collect();
        all.sort_unstable();
        assert_eq!(seen, all);
        assert!(plans.iter().all(|b| b.pseudo.is_empty()));
    }
}
