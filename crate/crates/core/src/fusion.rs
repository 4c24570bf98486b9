//! Gated fusion of several same-sized representations.
//!
//! Each candidate `E_o` gets a scalar score `v_o = <w, E_o> + b`; the gates
//! are `alpha = softmax(v)` and the output is `sum_o alpha_o E_o`. The same
//! `(w, b)` scores every candidate, so the output does not depend on the
//! order of the inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{dot, softmax};

/// Scoring vector and bias of one fusion site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatedFusionParams {
    pub score_vector: Vec<f64>,
    pub bias: f64,
    /// Number of inputs this site fuses.
    pub arity: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fused {
    pub output: Vec<f64>,
    pub gates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionGrads {
    pub inputs: Vec<Vec<f64>>,
    pub score_vector: Vec<f64>,
    pub bias: f64,
}

fn check_shapes(inputs: &[&[f64]], score_vector: &[f64], arity: Option<usize>) -> Result<()> {
    if let Some(arity) = arity {
        if inputs.len() != arity {
            return Err(Error::Shape(format!(
                "gated fusion expects {arity} inputs, got {}",
                inputs.len()
            )));
        }
    }
    if inputs.is_empty() {
        return Err(Error::Shape("gated fusion needs at least one input".into()));
    }
    let d = score_vector.len();
    for (o, x) in inputs.iter().enumerate() {
        if x.len() != d {
            return Err(Error::Shape(format!(
                "gated fusion input {o} has dimension {}, expected {d}",
                x.len()
            )));
        }
    }
    Ok(())
}

/// Softmax-normalized gate weights for `inputs`.
pub fn gate_weights(inputs: &[&[f64]], score_vector: &[f64], bias: f64) -> Vec<f64> {
    let scores: Vec<f64> = inputs.iter().map(|x| dot(score_vector, x) + bias).collect();
    softmax(&scores)
}

pub(crate) fn fuse_unchecked(inputs: &[&[f64]], score_vector: &[f64], bias: f64) -> Fused {
    let gates = gate_weights(inputs, score_vector, bias);
    let mut output = vec![0.0; score_vector.len()];
    for (alpha, x) in gates.iter().zip(inputs) {
        for (o, v) in output.iter_mut().zip(x.iter()) {
            *o += alpha * v;
        }
    }
    Fused { output, gates }
}

pub fn gated_fuse(inputs: &[&[f64]], params: &GatedFusionParams) -> Result<Fused> {
    check_shapes(inputs, &params.score_vector, Some(params.arity))?;
    Ok(fuse_unchecked(inputs, &params.score_vector, params.bias))
}

/// Backpropagates `grad_output` (dL/d output) through one fusion.
///
/// With `g` the upstream gradient and `s_o = <g, E_o>`:
/// `dL/dv_o = alpha_o (s_o - sum_m alpha_m s_m)`,
/// `dL/dE_o = alpha_o g + dL/dv_o w`, `dL/dw = sum_o dL/dv_o E_o` and
/// `dL/db = sum_o dL/dv_o`.
pub fn gated_fuse_backward(
    inputs: &[&[f64]],
    score_vector: &[f64],
    gates: &[f64],
    grad_output: &[f64],
) -> FusionGrads {
    let s: Vec<f64> = inputs.iter().map(|x| dot(grad_output, x)).collect();
    let mean: f64 = gates.iter().zip(&s).map(|(a, s)| a * s).sum();
    let dv: Vec<f64> = gates.iter().zip(&s).map(|(a, s)| a * (s - mean)).collect();
    let d = score_vector.len();
    let mut grad_w = vec![0.0; d];
    let mut grad_inputs = Vec::with_capacity(inputs.len());
    for (o, x) in inputs.iter().enumerate() {
        let mut gx = vec![0.0; d];
        for i in 0..d {
            gx[i] = gates[o] * grad_output[i] + dv[o] * score_vector[i];
            grad_w[i] += dv[o] * x[i];
        }
        grad_inputs.push(gx);
    }
    FusionGrads {
        inputs: grad_inputs,
        score_vector: grad_w,
        bias: dv.iter().sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(w: Vec<f64>, b: f64, arity: usize) -> GatedFusionParams {
        GatedFusionParams {
            score_vector: w,
            bias: b,
            arity,
        }
    }

    #[test]
    fn identical_inputs_pass_through() {
        let u = [0.3, -1.2, 4.0];
        let p = params(vec![0.7, 0.1, -0.4], 0.2, 3);
        let f = gated_fuse(&[&u, &u, &u], &p).unwrap();
        for (a, b) in f.output.iter().zip(&u) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_scores_give_mean() {
        // w = (1, 0): both inputs score 2.
        let a = [2.0, 1.0];
        let b = [2.0, -3.0];
        let p = params(vec![1.0, 0.0], 0.0, 2);
        let f = gated_fuse(&[&a, &b], &p).unwrap();
        assert_eq!(f.gates, vec![0.5, 0.5]);
        assert_eq!(f.output, vec![2.0, -1.0]);
    }

    #[test]
    fn hand_computed_gates() {
        // w = (1, 0) and first coordinates (ln1, ln2, ln1) -> gates (1/4, 1/2, 1/4).
        let a = [0.0, 4.0];
        let b = [2f64.ln(), 8.0];
        let c = [0.0, -4.0];
        let p = params(vec![1.0, 0.0], 0.0, 3);
        let f = gated_fuse(&[&a, &b, &c], &p).unwrap();
        let expected = [0.25, 0.5, 0.25];
        for (g, e) in f.gates.iter().zip(expected) {
            assert!((g - e).abs() < 1e-12);
        }
        let out0 = 0.5 * 2f64.ln();
        let out1 = 0.25 * 4.0 + 0.5 * 8.0 + 0.25 * -4.0;
        assert!((f.output[0] - out0).abs() < 1e-12);
        assert!((f.output[1] - out1).abs() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let a = [1.0, 2.0];
        let p = params(vec![1.0, 0.0], 0.0, 2);
        assert!(matches!(gated_fuse(&[&a], &p), Err(Error::Shape(_))));
        let short = [1.0];
        assert!(matches!(gated_fuse(&[&a, &short], &p), Err(Error::Shape(_))));
    }

    #[test]
    fn permutation_invariant_output() {
        let a = [0.1, 0.9, -0.3];
        let b = [1.5, -0.2, 0.0];
        let c = [-0.7, 0.4, 2.2];
        let p = params(vec![0.3, -0.5, 0.8], 0.1, 3);
        let f1 = gated_fuse(&[&a, &b, &c], &p).unwrap();
        let f2 = gated_fuse(&[&c, &a, &b], &p).unwrap();
        for (x, y) in f1.output.iter().zip(&f2.output) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((f1.gates[0] - f2.gates[1]).abs() < 1e-12);
    }
}
