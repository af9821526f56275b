//! Generate a synthetic two-modality dataset, drop modality B from half of
//! each class and split it into stratified folds.
//!
//! cargo run --example generate_dataset -- /tmp/pgad-data

use std::path::PathBuf;

use pgad::synthdata::{generate_dataset, stratified_kfold, write_dataset_csv, write_folds_csv, DatasetConfig};

fn main() -> pgad::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "pgad-data".into()));
    std::fs::create_dir_all(&out)?;
    let cfg = DatasetConfig {
        num_classes: 2,
        samples_per_class: 100,
        dim_a: 8,
        dim_b: 8,
        class_separation: 2.5,
        noise_scale: 1.0,
        missing_rate: 0.5,
        seed: 7,
    };
    let data = generate_dataset(&cfg)?;
    let unpaired = data.iter().filter(|s| !s.paired()).count();
    println!("{} samples, {unpaired} without modality B", data.len());

    let folds = stratified_kfold(&data, 5, 1)?;
    for f in &folds {
        println!("fold {}: {} train / {} test", f.fold_index, f.train_ids.len(), f.test_ids.len());
    }
    write_dataset_csv(&out.join("dataset.csv"), &data, cfg.dim_a, cfg.dim_b)?;
    write_folds_csv(&out.join("folds.csv"), &folds)?;
    println!("wrote {}", out.display());
    Ok(())
}
