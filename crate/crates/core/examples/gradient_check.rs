//! Compare the student's analytic cross-entropy gradient with central
//! finite differences.

use pgad::losses::ce_loss;
use pgad::nets::{Activation, NetConfig, ParamVector, StudentArch, StudentNet, StudentUpstream};

fn loss(net: &StudentNet, xs: &[Vec<f64>], labels: &[usize]) -> f64 {
    let logits: Vec<Vec<f64>> = xs.iter().map(|x| net.forward(x).unwrap().logits).collect();
    ce_loss(&logits, labels).unwrap().value
}

fn main() -> pgad::Result<()> {
    let cfg = NetConfig {
        hidden: 6,
        feature_dim: 4,
        activation: Activation::Tanh,
    };
    let net = StudentNet::new(StudentArch::from_config(3, 2, &cfg)?, 11)?;
    let xs = vec![vec![0.5, -1.0, 0.2], vec![-0.3, 0.8, 1.1], vec![1.2, 0.1, -0.7]];
    let labels = [0, 1, 1];

    let mut grad = net.zero_grad();
    let logits: Vec<Vec<f64>> = xs.iter().map(|x| net.forward(x).unwrap().logits).collect();
    let ce = ce_loss(&logits, &labels)?;
    for (x, g) in xs.iter().zip(&ce.grad) {
        let pass = net.forward(x)?;
        let up = StudentUpstream {
            feat: Vec::new(),
            logits: g.clone(),
        };
        net.backward(&pass, &up, &mut grad)?;
    }

    let h = 1e-5;
    let base = net.params().as_slice().to_vec();
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] += h;
        let up = loss(&StudentNet::from_params(net.arch().clone(), ParamVector(p.clone()))?, &xs, &labels);
        p[i] -= 2.0 * h;
        let down = loss(&StudentNet::from_params(net.arch().clone(), ParamVector(p))?, &xs, &labels);
        let numeric = (up - down) / (2.0 * h);
        let a = grad.as_slice()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-5));
    }
    println!("{} parameters, worst relative error {worst:.2e}", base.len());
    Ok(())
}
