//! Shared emotion space: projectors, the alignment matrix `M = T Lᵀ / τ` and
//! the multi-label contrastive sigmoid loss.
//!
//! The loss averages `-log σ(M)` over positive pairs and `-log(1 - σ(M))` over
//! negative pairs separately, then adds the two means. A pair class that is
//! empty contributes zero.

mod projector;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use projector::{LabelProjector, QueryProjector, QueryProjectorCache};

#[derive(Debug, Error, PartialEq)]
pub enum AlignmentError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("row {row} has norm {norm}, expected unit norm")]
    NotUnitNorm { row: usize, norm: f64 },
    #[error("vector norm {0:e} below 1e-12; refusing to normalize")]
    DegenerateVector(f64),
    #[error("invalid value: {0}")]
    Value(String),
}

pub const MIN_NORM: f64 = 1e-12;
pub const UNIT_NORM_TOLERANCE: f64 = 1e-4;

pub fn default_tau() -> f64 {
    0.1
}
fn default_n_queries() -> usize {
    8
}
fn default_projector_heads() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectorConfig {
    /// Emotion-space dimension.
    pub d: usize,
    #[serde(default = "default_n_queries")]
    pub n_queries: usize,
    /// Heads of the query cross-attention.
    #[serde(default = "default_projector_heads")]
    pub n_heads: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    pub seed: u64,
}

impl ProjectorConfig {
    pub fn new(d: usize, seed: u64) -> Self {
        ProjectorConfig {
            d,
            n_queries: default_n_queries(),
            n_heads: default_projector_heads(),
            tau: default_tau(),
            seed,
        }
    }

    /// Full-size setting: d = 768, τ = 0.1.
    pub fn full_size(seed: u64) -> Self {
        Self::new(768, seed)
    }

    pub fn validate(&self) -> Result<(), AlignmentError> {
        if self.d == 0 || self.n_queries == 0 || self.n_heads == 0 {
            return Err(AlignmentError::Value("d, n_queries and n_heads must be positive".into()));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(AlignmentError::Value(format!("temperature {} must be positive", self.tau)));
        }
        Ok(())
    }
}

/// Returns the unit vector and the original norm.
pub fn l2_normalize(v: &ArrayView1<f64>) -> Result<(Array1<f64>, f64), AlignmentError> {
    let norm = v.dot(v).sqrt();
    if !(norm >= MIN_NORM) {
        return Err(AlignmentError::DegenerateVector(norm));
    }
    Ok((v / norm, norm))
}

/// Gradient through `u = z / |z|`: `dz = (du - u (u·du)) / |z|`.
pub fn l2_normalize_backward(unit: &ArrayView1<f64>, norm: f64, dunit: &ArrayView1<f64>) -> Array1<f64> {
    let proj = unit.dot(dunit);
    (dunit - &(unit * proj)) / norm
}

fn check_unit_rows(m: &ArrayView2<f64>) -> Result<(), AlignmentError> {
    for (row, r) in m.rows().into_iter().enumerate() {
        let norm = r.dot(&r).sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(AlignmentError::NotUnitNorm { row, norm });
        }
    }
    Ok(())
}

/// `M = T Lᵀ / τ` for unit-norm rows of `T` (`B×d`) and `L` (`N×d`).
pub fn alignment_matrix(t: &ArrayView2<f64>, l: &ArrayView2<f64>, tau: f64) -> Result<Array2<f64>, AlignmentError> {
    if !(tau > 0.0) {
        return Err(AlignmentError::Value(format!("temperature {tau} must be positive")));
    }
    if t.ncols() != l.ncols() {
        return Err(AlignmentError::Shape(format!(
            "text dim {} vs label dim {}",
            t.ncols(),
            l.ncols()
        )));
    }
    check_unit_rows(t)?;
    check_unit_rows(l)?;
    Ok(t.dot(&l.t()) / tau)
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_shapes(m: &ArrayView2<f64>, y: &ArrayView2<bool>) -> Result<(), AlignmentError> {
    if m.dim() != y.dim() {
        return Err(AlignmentError::Shape(format!("M is {:?} but Y is {:?}", m.dim(), y.dim())));
    }
    Ok(())
}

/// Contrastive sigmoid loss over an alignment matrix and its binary targets.
pub fn contrastive_sigmoid_loss(m: &ArrayView2<f64>, y: &ArrayView2<bool>) -> Result<f64, AlignmentError> {
    check_shapes(m, y)?;
    let (mut pos_sum, mut pos_n, mut neg_sum, mut neg_n) = (0.0, 0usize, 0.0, 0usize);
    Zip::from(m).and(y).for_each(|&x, &target| {
        if target {
            // -log σ(x) = softplus(-x)
            pos_sum += softplus(-x);
            pos_n += 1;
        } else {
            // -log(1 - σ(x)) = softplus(x)
            neg_sum += softplus(x);
            neg_n += 1;
        }
    });
    let pos = if pos_n > 0 { pos_sum / pos_n as f64 } else { 0.0 };
    let neg = if neg_n > 0 { neg_sum / neg_n as f64 } else { 0.0 };
    Ok(pos + neg)
}

/// Analytic `∂loss/∂M`.
pub fn loss_gradient(m: &ArrayView2<f64>, y: &ArrayView2<bool>) -> Result<Array2<f64>, AlignmentError> {
    check_shapes(m, y)?;
    let p = y.iter().filter(|&&b| b).count();
    let q = y.len() - p;
    let mut g = Array2::zeros(m.raw_dim());
    Zip::from(&mut g).and(m).and(y).for_each(|g, &x, &target| {
        *g = if target {
            -(1.0 - sigmoid(x)) / p as f64
        } else {
            sigmoid(x) / q as f64
        };
    });
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn alignment_matrix_examples() {
        let t = array![[1.0, 0.0]];
        let l = array![[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(alignment_matrix(&t.view(), &l.view(), 0.1).unwrap(), array![[10.0, 0.0]]);
        let anti = array![[-1.0, 0.0]];
        assert_eq!(alignment_matrix(&t.view(), &anti.view(), 0.1).unwrap(), array![[-10.0]]);
        let u = array![[0.6, 0.8]];
        let m = alignment_matrix(&u.view(), &u.view(), 0.5).unwrap();
        assert!((m[[0, 0]] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn alignment_matrix_rejects_non_unit_rows() {
        let t = array![[1.0, 0.001]];
        let l = array![[1.0, 0.0]];
        assert!(alignment_matrix(&t.view(), &l.view(), 0.1).is_ok());
        let bad = array![[1.1, 0.0]];
        assert!(matches!(
            alignment_matrix(&bad.view(), &l.view(), 0.1),
            Err(AlignmentError::NotUnitNorm { row: 0, .. })
        ));
    }

    #[test]
    fn loss_examples() {
        let l = contrastive_sigmoid_loss(&array![[10.0]].view(), &array![[true]].view()).unwrap();
        assert!((l - (1.0 + (-10f64).exp()).ln()).abs() < 1e-15);
        assert!((l - 4.53989e-5).abs() < 1e-10);

        let l = contrastive_sigmoid_loss(
            &array![[0.0, 0.0], [0.0, 0.0]].view(),
            &array![[true, false], [false, true]].view(),
        )
        .unwrap();
        assert!((l - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);

        // independent elementwise BCE: -ln σ(2) - ln(1 - σ(-2))
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let expected = -sig(2.0).ln() - (1.0 - sig(-2.0)).ln();
        let l = contrastive_sigmoid_loss(&array![[2.0, -2.0]].view(), &array![[true, false]].view()).unwrap();
        assert!((l - expected).abs() < 1e-12);
        assert!((l - 0.2539).abs() < 1e-4);
    }

    #[test]
    fn loss_is_finite_at_extremes() {
        let m = array![[1000.0, -1000.0]];
        let y = array![[false, true]];
        let l = contrastive_sigmoid_loss(&m.view(), &y.view()).unwrap();
        assert!((l - 2000.0).abs() < 1e-9);
    }

    #[test]
    fn gradient_examples() {
        assert_eq!(loss_gradient(&array![[0.0]].view(), &array![[true]].view()).unwrap(), array![[-0.5]]);
        assert_eq!(loss_gradient(&array![[0.0]].view(), &array![[false]].view()).unwrap(), array![[0.5]]);
        assert!(matches!(
            loss_gradient(&array![[0.0, 1.0]].view(), &array![[true]].view()),
            Err(AlignmentError::Shape(_))
        ));
    }

    #[test]
    fn normalize_rejects_zero() {
        assert!(matches!(
            l2_normalize(&array![0.0, 0.0].view()),
            Err(AlignmentError::DegenerateVector(_))
        ));
        let (u, n) = l2_normalize(&array![3.0, 4.0].view()).unwrap();
        assert_eq!(n, 5.0);
        assert!((u[0] - 0.6).abs() < 1e-15);
    }

    fn matrices() -> impl Strategy<Value = (Array2<f64>, Array2<bool>)> {
        (1usize..6, 1usize..6).prop_flat_map(|(b, n)| {
            (
                prop::collection::vec(-10.0f64..10.0, b * n),
                prop::collection::vec(any::<bool>(), b * n),
            )
                .prop_map(move |(m, y)| {
                    (
                        Array2::from_shape_vec((b, n), m).unwrap(),
                        Array2::from_shape_vec((b, n), y).unwrap(),
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn loss_is_non_negative((m, y) in matrices()) {
            prop_assert!(contrastive_sigmoid_loss(&m.view(), &y.view()).unwrap() >= 0.0);
        }

        #[test]
        fn permutation_equivariance((m, y) in matrices(), shift in 0usize..5) {
            let base = contrastive_sigmoid_loss(&m.view(), &y.view()).unwrap();
            let (b, n) = m.dim();
            let rows: Vec<usize> = (0..b).map(|i| (i + shift) % b).collect();
            let cols: Vec<usize> = (0..n).map(|j| (j + shift) % n).collect();
            let pm = m.select(ndarray::Axis(0), &rows).select(ndarray::Axis(1), &cols);
            let py = y.select(ndarray::Axis(0), &rows).select(ndarray::Axis(1), &cols);
            let permuted = contrastive_sigmoid_loss(&pm.view(), &py.view()).unwrap();
            prop_assert!((base - permuted).abs() < 1e-12);
        }

        #[test]
        fn argmax_invariant_to_tau(cos in prop::collection::vec(-1.0f64..1.0, 1..10), tau1 in 0.001f64..2.0, tau2 in 0.001f64..2.0) {
            let argmax = |tau: f64| {
                let scaled: Vec<f64> = cos.iter().map(|c| c / tau).collect();
                let mut best = 0;
                for (i, v) in scaled.iter().enumerate() {
                    if *v > scaled[best] { best = i; }
                }
                best
            };
            prop_assert_eq!(argmax(tau1), argmax(tau2));
        }
    }
}
