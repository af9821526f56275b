//! Fold metrics, a paired t-test between two methods and the Bonferroni
//! corrected level.

use pgad::eval::{binary_metrics, bonferroni, paired_ttest};

fn main() -> pgad::Result<()> {
    let labels = [0, 0, 0, 1, 1, 1, 1, 0];
    let scores = [0.1, 0.4, 0.6, 0.8, 0.7, 0.3, 0.9, 0.2];
    let m = binary_metrics(0, &labels, &scores)?;
    println!("MCC {:.3}  AUC {:.3}  SEN {:.3}  SPE {:.3}", m.mcc, m.auc, m.sen, m.spe);

    let ours = [0.82, 0.79, 0.85, 0.80, 0.84];
    let baseline = [0.78, 0.77, 0.80, 0.79, 0.80];
    let t = paired_ttest(&ours, &baseline)?;
    let alpha = bonferroni(0.05, 24)?;
    println!(
        "t = {:.3}, p = {:.4}; significant at alpha' = {alpha:.5}: {}",
        t.t,
        t.p,
        t.p < alpha
    );
    Ok(())
}
