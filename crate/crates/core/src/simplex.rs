//! Angle-based simplex coding of treatments.

use nalgebra::DVector;
use crate::error::{Error, Result};

/// The `k` vertices of a regular simplex centred at the origin of
/// `R^{k-1}`. Vertex `j` (1-based) encodes treatment `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexCode {
    k: usize,
    vertices: Vec<DVector<f64>>,
}

/// Builds the simplex coding for `k` treatments.
///
/// `W_1 = (k-1)^{-1/2} 1` and, for `j >= 2`,
/// `W_j = -(1 + sqrt(k)) (k-1)^{-3/2} 1 + sqrt(k/(k-1)) e_{j-1}`.
pub fn make_simplex(k: usize) -> Result<SimplexCode> {
    if k < 2 {
        return Err(Error::invalid_argument(format!(
            "simplex coding needs k >= 2 treatments, got {k}"
        )));
    }
    let dim = k - 1;
    let km1 = dim as f64;
    let kf = k as f64;
    let mut vertices = Vec::with_capacity(k);
    vertices.push(DVector::from_element(dim, km1.powf(-0.5)));
    let shift = -(1.0 + kf.sqrt()) * km1.powf(-1.5);
    let spike = (kf / km1).sqrt();
    for j in 1..k {
        let mut v = DVector::from_element(dim, shift);
        v[j - 1] += spike;
        vertices.push(v);
    }
    Ok(SimplexCode { k, vertices })
}

impl SimplexCode {
    pub fn k(&self) -> usize {
        self.k
    }

    /// Dimension of the decision function, `k - 1`.
    pub fn dim(&self) -> usize {
        self.k - 1
    }

    /// Vertex for 0-based treatment index `j`.
    pub fn vertex(&self, j: usize) -> &DVector<f64> {
        &self.vertices[j]
    }

    pub fn vertices(&self) -> &[DVector<f64>] {
        &self.vertices
    }

    /// `<W_j, f>` for every treatment.
    pub fn margins(&self, f: &[f64]) -> Vec<f64> {
        debug_assert_eq!(f.len(), self.dim());
        self.vertices
            .iter()
            .map(|w| w.iter().zip(f).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `<W_j, f>` for a single 0-based treatment index.
    pub fn margin(&self, j: usize, f: &[f64]) -> f64 {
        self.vertices[j].iter().zip(f).map(|(a, b)| a * b).sum()
    }

    /// `<W_i, W_j>`: 1 on the diagonal, `-1/(k-1)` off it (up to rounding).
    pub fn inner(&self, i: usize, j: usize) -> f64 {
        self.vertices[i].dot(&self.vertices[j])
    }
}
