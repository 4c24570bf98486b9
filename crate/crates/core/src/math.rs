//! Scalar helpers shared by the forward pass, the losses and the tape.

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before any log.
pub const PROB_EPS: f64 = 1e-7;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// `-[y ln p + (1-y) ln(1-p)]` with `p` clamped.
pub fn bce_term(p: f64, y: f64) -> f64 {
    let p = clamp_prob(p);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// d(bce_term)/dp; zero where the clamp is active.
pub fn bce_term_grad(p: f64, y: f64) -> f64 {
    if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
        return 0.0;
    }
    -y / p + (1.0 - y) / (1.0 - p)
}

pub fn nll_term(p: f64) -> f64 {
    -clamp_prob(p).ln()
}

pub fn nll_term_grad(p: f64) -> f64 {
    if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
        return 0.0;
    }
    -1.0 / p
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Coordinate-wise max of equally sized vectors, with the winning input per
/// coordinate (first on ties).
pub fn max_pool<'a, I>(vectors: I, dim: usize) -> (Vec<f64>, Vec<usize>)
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut out = vec![f64::NEG_INFINITY; dim];
    let mut arg = vec![0; dim];
    for (k, v) in vectors.into_iter().enumerate() {
        for i in 0..dim {
            if v[i] > out[i] {
                out[i] = v[i];
                arg[i] = k;
            }
        }
    }
    (out, arg)
}
