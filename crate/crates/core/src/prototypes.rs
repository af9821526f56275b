//! Class prototypes built from teacher fused features of paired samples.

use std::path::Path;

use crate::error::{PgadError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    pub centroid: Vec<f64>,
    /// Number of samples behind the centroid (0 when stale).
    pub count: usize,
    /// True when no sample of this class contributed.
    pub stale: bool,
}

/// Immutable per-class prototype table; updates return new sets.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    dim: usize,
    classes: Vec<Prototype>,
}

impl PrototypeSet {
    /// A set where every class is stale.
    pub fn empty(num_classes: usize, dim: usize) -> Self {
        PrototypeSet {
            dim,
            classes: (0..num_classes)
                .map(|_| Prototype {
                    centroid: vec![0.0; dim],
                    count: 0,
                    stale: true,
                })
                .collect(),
        }
    }

    /// Builds a set from explicit centroids; every listed class is live.
    pub fn from_centroids(centroids: Vec<Vec<f64>>) -> Result<Self> {
        let dim = centroids.first().map_or(0, Vec::len);
        let mut classes = Vec::with_capacity(centroids.len());
        for c in centroids {
            if c.len() != dim {
                return Err(PgadError::shape("prototype centroid", dim, c.len()));
            }
            classes.push(Prototype {
                centroid: c,
                count: 1,
                stale: false,
            });
        }
        Ok(PrototypeSet { dim, classes })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn get(&self, class: usize) -> Option<&Prototype> {
        self.classes.get(class)
    }

    pub fn classes(&self) -> &[Prototype] {
        &self.classes
    }

    pub fn stale_count(&self) -> usize {
        self.classes.iter().filter(|p| p.stale).count()
    }

    pub fn has_live(&self) -> bool {
        self.classes.iter().any(|p| !p.stale)
    }

    /// Marks `class` stale, e.g. for ablations that drop a class.
    pub fn with_stale(mut self, class: usize) -> Self {
        if let Some(p) = self.classes.get_mut(class) {
            p.stale = true;
            p.count = 0;
        }
        self
    }

    /// Live classes of `self`, with stale ones filled from `fallback` when it
    /// has them.
    pub fn with_fallback(&self, fallback: &PrototypeSet) -> Result<PrototypeSet> {
        if fallback.dim != self.dim || fallback.classes.len() != self.classes.len() {
            return Err(PgadError::shape("fallback prototype dim", self.dim, fallback.dim));
        }
        let classes = self
            .classes
            .iter()
            .zip(&fallback.classes)
            .map(|(own, fb)| if own.stale { fb.clone() } else { own.clone() })
            .collect();
        Ok(PrototypeSet {
            dim: self.dim,
            classes,
        })
    }
}

/// Per-class arithmetic mean of the given features. Classes with no sample
/// are flagged stale with count 0.
pub fn compute_batch_prototypes(
    fused_feats: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
) -> Result<PrototypeSet> {
    if fused_feats.len() != labels.len() {
        return Err(PgadError::shape("prototype labels", fused_feats.len(), labels.len()));
    }
    let Some(first) = fused_feats.first() else {
        return Err(PgadError::EmptyBatch("compute_batch_prototypes"));
    };
    let dim = first.len();
    let mut sums = vec![vec![0.0; dim]; num_classes];
    let mut counts = vec![0usize; num_classes];
    for (f, &label) in fused_feats.iter().zip(labels) {
        if label >= num_classes {
            return Err(PgadError::Label { label, num_classes });
        }
        if f.len() != dim {
            return Err(PgadError::shape("prototype feature", dim, f.len()));
        }
        sums[label].iter_mut().zip(f).for_each(|(s, x)| *s += x);
        counts[label] += 1;
    }
    let classes = sums
        .into_iter()
        .zip(counts)
        .map(|(sum, count)| {
            if count == 0 {
                Prototype {
                    centroid: vec![0.0; dim],
                    count: 0,
                    stale: true,
                }
            } else {
                Prototype {
                    centroid: sum.into_iter().map(|s| s / count as f64).collect(),
                    count,
                    stale: false,
                }
            }
        })
        .collect();
    Ok(PrototypeSet { dim, classes })
}

/// Momentum update `z <- m z_running + (1 - m) z_batch` for classes present
/// in `batch`. A running class that was never initialised takes the batch
/// value; classes absent from the batch keep their running value.
pub fn update_running_prototypes(
    running: &PrototypeSet,
    batch: &PrototypeSet,
    momentum: f64,
) -> Result<PrototypeSet> {
    if !(0.0..1.0).contains(&momentum) {
        return Err(PgadError::Range {
            name: "prototype momentum".into(),
            value: momentum,
            range: "[0, 1)".into(),
        });
    }
    if running.dim != batch.dim {
        return Err(PgadError::shape("running prototype dim", running.dim, batch.dim));
    }
    if running.classes.len() != batch.classes.len() {
        return Err(PgadError::shape(
            "running prototype classes",
            running.classes.len(),
            batch.classes.len(),
        ));
    }
    let classes = running
        .classes
        .iter()
        .zip(&batch.classes)
        .map(|(run, new)| {
            if new.stale {
                run.clone()
            } else if run.stale {
                new.clone()
            } else {
                Prototype {
                    centroid: run
                        .centroid
                        .iter()
                        .zip(&new.centroid)
                        .map(|(r, b)| momentum * r + (1.0 - momentum) * b)
                        .collect(),
                    count: run.count + new.count,
                    stale: false,
                }
            }
        })
        .collect();
    Ok(PrototypeSet {
        dim: running.dim,
        classes,
    })
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest live prototype by squared Euclidean distance; ties go to the
/// lowest class index.
pub fn nearest_prototype(feat: &[f64], protos: &PrototypeSet) -> Result<(usize, f64)> {
    if feat.len() != protos.dim {
        return Err(PgadError::shape("feature vs prototype dim", protos.dim, feat.len()));
    }
    let mut best: Option<(usize, f64)> = None;
    for (c, p) in protos.classes.iter().enumerate() {
        if p.stale {
            continue;
        }
        let d = squared_distance(feat, &p.centroid);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((c, d));
        }
    }
    best.ok_or_else(|| PgadError::Protocol("every prototype is stale".into()))
}

/// CSV columns: `class,count,stale,z_0..z_{H-1}`.
pub fn write_prototypes_csv(path: &Path, protos: &PrototypeSet) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["class".to_string(), "count".into(), "stale".into()];
    header.extend((0..protos.dim).map(|i| format!("z_{i}")));
    w.write_record(&header)?;
    for (c, p) in protos.classes.iter().enumerate() {
        let mut row = vec![c.to_string(), p.count.to_string(), p.stale.to_string()];
        row.extend(p.centroid.iter().map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
