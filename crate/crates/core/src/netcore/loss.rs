//! Softmax cross entropy with log-sum-exp stabilization.

/// Softmax probabilities, computed in f64 internally.
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(f64::from(b)));
    let exps: Vec<f64> = logits.iter().map(|&l| (f64::from(l) - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| (e / z) as f32).collect()
}

/// Cross-entropy loss and its gradient `softmax - onehot`.
pub fn softmax_xent(logits: &[f32], label: usize) -> (f32, Vec<f32>) {
    debug_assert!(label < logits.len());
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(f64::from(b)));
    let exps: Vec<f64> = logits.iter().map(|&l| (f64::from(l) - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    let log_z = z.ln();
    let loss = -(f64::from(logits[label]) - m - log_z);
    let d: Vec<f32> = exps
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let p = e / z;
            (p - if i == label { 1.0 } else { 0.0 }) as f32
        })
        .collect();
    (loss as f32, d)
}
