//! Synthetic two-modality datasets.
//!
//! Each modality sees its own latent vector around the sample's class mean,
//! `u_m = mu_c + sqrt(rho) s + sqrt(1 - rho) e_m`, with `s` shared by both
//! modalities and `e_m` private. The features are noisy random linear views
//! `M_m u_m + noise`. The private parts make modality B informative beyond
//! modality A, so a fused teacher can know more than an A-only student.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{PgadError, Result};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: usize,
    pub label: usize,
    pub feat_a: Vec<f64>,
    /// Modality B; `None` when the sample is unpaired.
    pub feat_b: Option<Vec<f64>>,
}

impl Sample {
    pub fn paired(&self) -> bool {
        self.feat_b.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub dim_a: usize,
    pub dim_b: usize,
    /// Euclidean distance between any two latent class means.
    pub class_separation: f64,
    pub noise_scale: f64,
    pub missing_rate: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            num_classes: 2,
            samples_per_class: 200,
            dim_a: 16,
            dim_b: 16,
            class_separation: 2.0,
            noise_scale: 1.0,
            missing_rate: 0.0,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(PgadError::config("num_classes", "must be >= 2"));
        }
        if self.samples_per_class < 2 {
            return Err(PgadError::config("samples_per_class", "must be >= 2"));
        }
        if self.dim_a < 1 {
            return Err(PgadError::config("dim_a", "must be >= 1"));
        }
        if self.dim_b < 1 {
            return Err(PgadError::config("dim_b", "must be >= 1"));
        }
        if !(self.class_separation.is_finite() && self.class_separation >= 0.0) {
            return Err(PgadError::config(
                "class_separation",
                "must be finite and >= 0",
            ));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale > 0.0) {
            return Err(PgadError::config("noise_scale", "must be finite and > 0"));
        }
        if !(0.0..=1.0).contains(&self.missing_rate) {
            return Err(PgadError::config("missing_rate", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
}

/// Share of each modality's latent noise that is common to both modalities.
/// The rest is private, so modality B carries class information that
/// modality A lacks.
pub const SHARED_LATENT_FRACTION: f64 = 0.5;

/// Half-up rounding of `rate * n`, the count convention used for missingness.
pub fn missing_count(rate: f64, n: usize) -> usize {
    (rate * n as f64 + 0.5).floor() as usize
}

fn gaussian_matrix(rows: usize, cols: usize, scale: f64, rng: &mut crate::rng::Rng) -> Vec<f64> {
    (0..rows * cols)
        .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng))
        .collect::<Vec<f64>>()
}

fn project(matrix: &[f64], rows: usize, v: &[f64]) -> Vec<f64> {
    let cols = v.len();
    (0..rows)
        .map(|r| {
            matrix[r * cols..(r + 1) * cols]
                .iter()
                .zip(v)
                .map(|(m, x)| m * x)
                .sum()
        })
        .collect()
}

/// Generates `num_classes * samples_per_class` samples, ids `0..N` in
/// class-major order, then removes modality B from exactly
/// `missing_count(missing_rate, samples_per_class)` samples of every class.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let latent_dim = cfg.num_classes;
    let mut mix_rng = rng_from_seed(derive_seed(cfg.seed, "mixing"));
    let col_scale = 1.0 / (latent_dim as f64).sqrt();
    let mix_a = gaussian_matrix(cfg.dim_a, latent_dim, col_scale, &mut mix_rng);
    let mix_b = gaussian_matrix(cfg.dim_b, latent_dim, col_scale, &mut mix_rng);

    // mu_c = (s / sqrt 2) e_c, so every pair of class means is s apart.
    let mean_scale = cfg.class_separation / std::f64::consts::SQRT_2;

    let mut rng = rng_from_seed(derive_seed(cfg.seed, "samples"));
    let gauss = |rng: &mut crate::rng::Rng| -> Vec<f64> {
        (0..latent_dim).map(|_| Distribution::<f64>::sample(&StandardNormal, rng)).collect()
    };
    let (w_shared, w_own) = (SHARED_LATENT_FRACTION.sqrt(), (1.0 - SHARED_LATENT_FRACTION).sqrt());
    let mut samples = Vec::with_capacity(cfg.num_classes * cfg.samples_per_class);
    for label in 0..cfg.num_classes {
        for _ in 0..cfg.samples_per_class {
            let shared = gauss(&mut rng);
            let own_a = gauss(&mut rng);
            let own_b = gauss(&mut rng);
            let latent_of = |own: &[f64]| -> Vec<f64> {
                (0..latent_dim)
                    .map(|d| {
                        let mean = if d == label { mean_scale } else { 0.0 };
                        mean + w_shared * shared[d] + w_own * own[d]
                    })
                    .collect()
            };
            let (latent_a, latent_b) = (latent_of(&own_a), latent_of(&own_b));
            let mut feat_a = project(&mix_a, cfg.dim_a, &latent_a);
            for x in feat_a.iter_mut() {
                let e: f64 = StandardNormal.sample(&mut rng);
                *x += cfg.noise_scale * e;
            }
            let mut feat_b = project(&mix_b, cfg.dim_b, &latent_b);
            for x in feat_b.iter_mut() {
                let e: f64 = StandardNormal.sample(&mut rng);
                *x += cfg.noise_scale * e;
            }
            samples.push(Sample {
                id: samples.len(),
                label,
                feat_a,
                feat_b: Some(feat_b),
            });
        }
    }
    apply_missingness(&samples, cfg.missing_rate, derive_seed(cfg.seed, "missingness"))
}

fn ids_by_class(samples: &[Sample]) -> BTreeMap<usize, Vec<usize>> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for s in samples {
        by_class.entry(s.label).or_default().push(s.id);
    }
    for ids in by_class.values_mut() {
        ids.sort_unstable();
    }
    by_class
}

/// Returns a copy of `samples` in which, per class, `missing_count(rate, n_c)`
/// randomly chosen samples lose modality B.
pub fn apply_missingness(samples: &[Sample], rate: f64, seed: u64) -> Result<Vec<Sample>> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(PgadError::Range {
            name: "missing rate".into(),
            value: rate,
            range: "[0, 1]".into(),
        });
    }
    if let Some(s) = samples.iter().find(|s| !s.paired()) {
        return Err(PgadError::Protocol(format!(
            "apply_missingness expects fully paired input; sample {} is unpaired",
            s.id
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut drop = std::collections::HashSet::new();
    for (_, mut ids) in ids_by_class(samples) {
        let n_missing = missing_count(rate, ids.len());
        ids.shuffle(&mut rng);
        drop.extend(ids.into_iter().take(n_missing));
    }
    Ok(samples
        .iter()
        .map(|s| {
            let mut out = s.clone();
            if drop.contains(&s.id) {
                out.feat_b = None;
            }
            out
        })
        .collect())
}

/// Stratified k-fold split. Within each class the shuffled ids are dealt
/// round-robin over the folds, starting where the previous class stopped so
/// that fold sizes also stay balanced overall.
pub fn stratified_kfold(samples: &[Sample], k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(PgadError::config("k", "must be >= 2"));
    }
    let by_class = ids_by_class(samples);
    for (&class, ids) in &by_class {
        if ids.len() < k {
            return Err(PgadError::InfeasibleSplit {
                class,
                count: ids.len(),
                k,
            });
        }
    }
    let mut rng = rng_from_seed(seed);
    let mut test: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut offset = 0;
    for (_, mut ids) in by_class {
        ids.shuffle(&mut rng);
        for (j, id) in ids.iter().enumerate() {
            test[(offset + j) % k].push(*id);
        }
        offset = (offset + ids.len()) % k;
    }
    let mut all: Vec<usize> = samples.iter().map(|s| s.id).collect();
    all.sort_unstable();
    Ok(test
        .into_iter()
        .enumerate()
        .map(|(fold_index, mut test_ids)| {
            test_ids.sort_unstable();
            let train_ids = all
                .iter()
                .copied()
                .filter(|id| test_ids.binary_search(id).is_err())
                .collect();
            FoldSplit {
                fold_index,
                train_ids,
                test_ids,
            }
        })
        .collect())
}

/// Looks samples up by id, preserving the order of `ids`.
pub fn select<'a>(samples: &'a [Sample], ids: &[usize]) -> Result<Vec<&'a Sample>> {
    let index: std::collections::HashMap<usize, &Sample> =
        samples.iter().map(|s| (s.id, s)).collect();
    ids.iter()
        .map(|id| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| PgadError::Protocol(format!("unknown sample id {id}")))
        })
        .collect()
}

pub fn write_dataset_csv(path: &Path, samples: &[Sample], dim_a: usize, dim_b: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string(), "label".into(), "paired".into()];
    header.extend((0..dim_a).map(|i| format!("a_{i}")));
    header.extend((0..dim_b).map(|i| format!("b_{i}")));
    w.write_record(&header)?;
    for s in samples {
        if s.feat_a.len() != dim_a {
            return Err(PgadError::shape("dataset export (modality A)", dim_a, s.feat_a.len()));
        }
        let mut row = vec![s.id.to_string(), s.label.to_string(), s.paired().to_string()];
        row.extend(s.feat_a.iter().map(|x| x.to_string()));
        match &s.feat_b {
            Some(b) => {
                if b.len() != dim_b {
                    return Err(PgadError::shape("dataset export (modality B)", dim_b, b.len()));
                }
                row.extend(b.iter().map(|x| x.to_string()));
            }
            None => row.extend(std::iter::repeat_n(String::new(), dim_b)),
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn format_err(path: &Path, message: impl Into<String>) -> PgadError {
    PgadError::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Reads a dataset written by [`write_dataset_csv`]; returns the samples and
/// `(dim_a, dim_b)` as recorded in the header.
pub fn read_dataset_csv(path: &Path) -> Result<(Vec<Sample>, usize, usize)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.len() < 3 || &header[0] != "id" || &header[1] != "label" || &header[2] != "paired" {
        return Err(format_err(path, "header must start with id,label,paired"));
    }
    let dim_a = header.iter().filter(|h| h.starts_with("a_")).count();
    let dim_b = header.iter().filter(|h| h.starts_with("b_")).count();
    if 3 + dim_a + dim_b != header.len() {
        return Err(format_err(path, "unexpected columns in header"));
    }
    let parse = |field: &str, what: &str| -> Result<f64> {
        field
            .parse::<f64>()
            .map_err(|_| format_err(path, format!("cannot parse {what} `{field}`")))
    };
    let mut samples = Vec::new();
    for record in r.records() {
        let record = record?;
        let id = record[0]
            .parse()
            .map_err(|_| format_err(path, format!("bad id `{}`", &record[0])))?;
        let label = record[1]
            .parse()
            .map_err(|_| format_err(path, format!("bad label `{}`", &record[1])))?;
        let paired = match &record[2] {
            "true" => true,
            "false" => false,
            other => return Err(format_err(path, format!("bad paired flag `{other}`"))),
        };
        let feat_a = (0..dim_a)
            .map(|i| parse(&record[3 + i], "feature"))
            .collect::<Result<Vec<_>>>()?;
        let feat_b = if paired {
            Some(
                (0..dim_b)
                    .map(|i| parse(&record[3 + dim_a + i], "feature"))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        samples.push(Sample {
            id,
            label,
            feat_a,
            feat_b,
        });
    }
    Ok((samples, dim_a, dim_b))
}

pub fn write_folds_csv(path: &Path, folds: &[FoldSplit]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["fold", "id", "split"])?;
    for f in folds {
        let mut rows: Vec<(usize, &str)> = f
            .train_ids
            .iter()
            .map(|&id| (id, "train"))
            .chain(f.test_ids.iter().map(|&id| (id, "test")))
            .collect();
        rows.sort_unstable();
        for (id, split) in rows {
            w.write_record([f.fold_index.to_string(), id.to_string(), split.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
