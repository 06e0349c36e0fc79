//! Central finite-difference gradient checking.
//!
//! Re-evaluates a scalar forward function under coordinate perturbations,
//! independently of the reverse-mode path it is used to verify.

/// Numeric gradient of `f` w.r.t. every coordinate of every input block.
pub fn central_diff<F>(mut f: F, inputs: &[Vec<f64>], h: f64) -> Vec<Vec<f64>>
where
    F: FnMut(&[Vec<f64>]) -> f64,
{
    let mut work: Vec<Vec<f64>> = inputs.to_vec();
    let mut grads = Vec::with_capacity(inputs.len());
    for bi in 0..inputs.len() {
        let mut g = vec![0.0; inputs[bi].len()];
        for i in 0..inputs[bi].len() {
            let orig = work[bi][i];
            work[bi][i] = orig + h;
            let fp = f(&work);
            work[bi][i] = orig - h;
            let fm = f(&work);
            work[bi][i] = orig;
            g[i] = (fp - fm) / (2.0 * h);
        }
        grads.push(g);
    }
    grads
}

/// Max over coordinates of |a - n| / max(|a|, |n|, 1).
pub fn max_rel_error(analytic: &[Vec<f64>], numeric: &[Vec<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for (ab, nb) in analytic.iter().zip(numeric) {
        for (a, n) in ab.iter().zip(nb) {
            let denom = a.abs().max(n.abs()).max(1.0);
            worst = worst.max((a - n).abs() / denom);
        }
    }
    worst
}
