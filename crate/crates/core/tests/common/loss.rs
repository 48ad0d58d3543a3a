//! Loss recomputed directly from logits, for finite differences.

/// `sum_t [-log softmax(z_t)[y_t] + (lambda_r w[a_t] + lambda_c [a_t in e]) * -log(max(1 - p_t[a_t], eps))]`
/// with the penalized word `a_t` held fixed.
#[allow(clippy::too_many_arguments)]
pub fn loss_from_logits(
    logits: &[Vec<f64>],
    target: &[usize],
    frozen: &[usize],
    weights: &[f64],
    hallucinated: &[usize],
    lambda_r: f64,
    lambda_c: f64,
    eps: f64,
) -> f64 {
    let mut total = 0.0;
    for (t, z) in logits.iter().enumerate() {
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_norm = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += log_norm - z[target[t]];
        let a = frozen[t];
        let p_a = (z[a] - log_norm).exp();
        let coef = lambda_r * weights[a] + if hallucinated.contains(&a) { lambda_c } else { 0.0 };
        total += coef * -(1.0 - p_a).max(eps).ln();
    }
    total
}

pub fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..z.len() {
        if z[i] > z[best] {
            best = i;
        }
    }
    best
}
