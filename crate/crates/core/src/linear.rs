//! Linear classifiers: binary `f(x) = w'x + b` and multiclass `argmax_c w_c'x`.

use serde::{Deserialize, Serialize};

use crate::numerics::{dot, norm};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearModel {
    pub fn new(w: Vec<f64>, b: f64) -> Self {
        Self { w, b }
    }

    pub fn zeros(d: usize) -> Self {
        Self { w: vec![0.0; d], b: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.w, x) + self.b
    }

    pub fn w_norm(&self) -> f64 {
        norm(&self.w)
    }

    /// Predicted label in {+1, -1}; ties go to +1.
    pub fn predict(&self, x: &[f64]) -> i32 {
        if self.decision(x) >= 0.0 {
            1
        } else {
            -1
        }
    }
}

/// One weight vector per class, no intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiModel {
    pub w: Vec<Vec<f64>>,
}

impl MultiModel {
    pub fn zeros(classes: usize, d: usize) -> Self {
        Self { w: vec![vec![0.0; d]; classes] }
    }

    pub fn classes(&self) -> usize {
        self.w.len()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.w.iter().map(|wc| dot(wc, wc)).sum::<f64>().sqrt()
    }
}
