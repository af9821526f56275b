//! Batch prototypes, the momentum-smoothed running set and the
//! nearest-prototype loss.

use pgad::losses::{proto_loss, Assignment};
use pgad::prototypes::{compute_batch_prototypes, nearest_prototype, update_running_prototypes, PrototypeSet};

fn main() -> pgad::Result<()> {
    let fused = vec![vec![1.0, 0.0], vec![1.2, 0.2], vec![-1.0, 0.5]];
    let labels = [0, 0, 1];
    let batch = compute_batch_prototypes(&fused, &labels, 3)?;
    for (c, p) in batch.classes().iter().enumerate() {
        println!("class {c}: {:?} from {} samples{}", p.centroid, p.count, if p.stale { " (stale)" } else { "" });
    }

    let running = update_running_prototypes(&PrototypeSet::empty(3, 2), &batch, 0.9)?;
    let next = compute_batch_prototypes(&[vec![2.0, 0.0]], &[0], 3)?;
    let running = update_running_prototypes(&running, &next, 0.9)?;
    println!("running class 0 after a second batch: {:?}", running.get(0).unwrap().centroid);

    let unpaired = vec![vec![0.9, 0.1], vec![-0.8, 0.4]];
    let (class, dist) = nearest_prototype(&unpaired[0], &batch)?;
    println!("first unpaired feature is nearest to class {class} (squared distance {dist:.3})");
    let loss = proto_loss(&unpaired, &batch, Assignment::Nearest, None)?;
    println!("prototype loss {:.4}, assignments {:?}", loss.value, loss.assigned);
    Ok(())
}
