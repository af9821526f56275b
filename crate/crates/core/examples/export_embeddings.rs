//! Train a student briefly, save its checkpoint and export its features for
//! an external projection such as t-SNE.

use std::path::PathBuf;

use pgad::harness::{export_embeddings, load_student_checkpoint};
use pgad::synthdata::{generate_dataset, DatasetConfig};
use pgad::trainer::{fit_from_scratch, TrainConfig};

fn main() -> pgad::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "pgad-embeddings".into()));
    std::fs::create_dir_all(&out)?;
    let data = generate_dataset(&DatasetConfig {
        samples_per_class: 80,
        missing_rate: 0.5,
        ..DatasetConfig::default()
    })?;
    let cfg = TrainConfig {
        epochs: 10,
        learning_rate: 1e-3,
        ..TrainConfig::default()
    };
    let fitted = fit_from_scratch(&data, 2, &cfg)?;
    let ckpt = out.join("student.ckpt");
    fitted.student.save(&ckpt)?;

    let student = load_student_checkpoint(&ckpt)?;
    let csv = out.join("embeddings.csv");
    export_embeddings(&student, &data, &csv)?;
    println!("{} rows of {}-dim features in {}", data.len(), student.arch().feature_dim(), csv.display());
    Ok(())
}
