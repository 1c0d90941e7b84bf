use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{l2_normalize, l2_normalize_backward, AlignmentError};
use crate::embedding::layers::{normal_matrix, slice2, slice2_mut, AttentionCache, Linear, MultiHeadAttention, Parameters};
use crate::embedding::TokenStates;

/// Text-side projector: learned query vectors cross-attend over the token
/// states (one attention block with a residual on the queries), the query
/// outputs are mean-pooled, mapped to `d` and L2-normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryProjector {
    pub queries: Array2<f64>,
    pub cross_attention: MultiHeadAttention,
    pub output: Linear,
}

pub struct QueryProjectorCache {
    attention: AttentionCache,
    pooled: Array2<f64>,
    pub unit: Array1<f64>,
    pub norm: f64,
}

impl QueryProjector {
    pub fn new<R: Rng>(rng: &mut R, hidden: usize, d: usize, n_queries: usize, n_heads: usize) -> Result<Self, AlignmentError> {
        if n_heads == 0 || hidden % n_heads != 0 {
            return Err(AlignmentError::Value(format!(
                "encoder width {hidden} not divisible by projector heads {n_heads}"
            )));
        }
        Ok(QueryProjector {
            queries: normal_matrix(rng, n_queries, hidden, 1.0),
            cross_attention: MultiHeadAttention::new(rng, hidden, n_heads),
            output: Linear::new(rng, hidden, d),
        })
    }

    pub fn output_dim(&self) -> usize {
        self.output.output_dim()
    }

    pub fn project(&self, states: &TokenStates) -> Result<Array1<f64>, AlignmentError> {
        Ok(self.forward(states)?.unit.clone())
    }

    pub fn forward(&self, states: &TokenStates) -> Result<QueryProjectorCache, AlignmentError> {
        if states.width() != self.queries.ncols() {
            return Err(AlignmentError::Shape(format!(
                "states width {} vs projector width {}",
                states.width(),
                self.queries.ncols()
            )));
        }
        let (attended, attention) =
            self.cross_attention
                .forward(&self.queries.view(), &states.states.view(), &states.mask);
        let query_out = &self.queries + &attended;
        let pooled = query_out
            .mean_axis(Axis(0))
            .expect("at least one query")
            .insert_axis(Axis(0));
        let z = self.output.forward(&pooled.view());
        let (unit, norm) = l2_normalize(&z.row(0))?;
        Ok(QueryProjectorCache {
            attention,
            pooled,
            unit,
            norm,
        })
    }

    /// Returns the gradient with respect to the token states.
    pub fn backward(
        &self,
        states: &TokenStates,
        cache: &QueryProjectorCache,
        dunit: &ArrayView1<f64>,
        grad: &mut QueryProjector,
    ) -> Array2<f64> {
        let dz = l2_normalize_backward(&cache.unit.view(), cache.norm, dunit).insert_axis(Axis(0));
        let dpooled = self.output.backward(&cache.pooled.view(), &dz.view(), &mut grad.output);
        let n_q = self.queries.nrows() as f64;
        let dquery_out = Array2::from_shape_fn(self.queries.raw_dim(), |(_, j)| dpooled[[0, j]] / n_q);
        let (dq, dkv) = self.cross_attention.backward(
            &self.queries.view(),
            &states.states.view(),
            &cache.attention,
            &dquery_out.view(),
            &mut grad.cross_attention,
        );
        grad.queries += &dquery_out;
        grad.queries += &dq;
        dkv
    }
}

impl Parameters for QueryProjector {
    fn params(&self) -> Vec<&[f64]> {
        let mut v = vec![slice2(&self.queries)];
        v.extend(self.cross_attention.params());
        v.extend(self.output.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = vec![slice2_mut(&mut self.queries)];
        v.extend(self.cross_attention.params_mut());
        v.extend(self.output.params_mut());
        v
    }
}

/// Label-side projector: a single linear map followed by L2 normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelProjector {
    pub linear: Linear,
}

impl LabelProjector {
    pub fn new<R: Rng>(rng: &mut R, hidden: usize, d: usize) -> Self {
        LabelProjector {
            linear: Linear::new(rng, hidden, d),
        }
    }

    /// Returns the unit vector and the pre-normalization norm.
    pub fn forward(&self, label_vec: &ArrayView1<f64>) -> Result<(Array1<f64>, f64), AlignmentError> {
        if label_vec.len() != self.linear.input_dim() {
            return Err(AlignmentError::Shape(format!(
                "label vector length {} vs projector input {}",
                label_vec.len(),
                self.linear.input_dim()
            )));
        }
        let z = self.linear.forward(&label_vec.view().insert_axis(Axis(0)));
        l2_normalize(&z.row(0))
    }

    pub fn project(&self, label_vec: &ArrayView1<f64>) -> Result<Array1<f64>, AlignmentError> {
        Ok(self.forward(label_vec)?.0)
    }

    pub fn backward(
        &self,
        label_vec: &ArrayView1<f64>,
        unit: &ArrayView1<f64>,
        norm: f64,
        dunit: &ArrayView1<f64>,
        grad: &mut LabelProjector,
    ) {
        let dz = l2_normalize_backward(unit, norm, dunit).insert_axis(Axis(0));
        let x = label_vec.view().insert_axis(Axis(0));
        let _ = self.linear.backward(&x, &dz.view(), &mut grad.linear);
    }
}

impl Parameters for LabelProjector {
    fn params(&self) -> Vec<&[f64]> {
        self.linear.params()
    }
    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.linear.params_mut()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn states(n: usize, h: usize, seed: u64) -> TokenStates {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TokenStates {
            states: normal_matrix(&mut rng, n, h, 1.0),
            mask: vec![true; n],
        }
    }

    #[test]
    fn text_projection_is_unit_and_d_long() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = QueryProjector::new(&mut rng, 8, 4, 3, 2).unwrap();
        let u = p.project(&states(5, 8, 2)).unwrap();
        assert_eq!(u.len(), 4);
        assert!((u.dot(&u).sqrt() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn masked_padding_row_does_not_change_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = QueryProjector::new(&mut rng, 8, 4, 3, 2).unwrap();
        let s = states(5, 8, 2);
        let mut padded = s.clone();
        let pad_row = s.states.row(4).to_owned().insert_axis(Axis(0));
        padded.states = ndarray::concatenate![Axis(0), s.states, pad_row];
        padded.mask.push(false);
        let a = p.project(&s).unwrap();
        let b = p.project(&padded).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn label_projection_homogeneous_with_zero_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = LabelProjector::new(&mut rng, 8, 4);
        let v = Array1::from_iter((0..8).map(|i| i as f64 - 3.5));
        let a = p.project(&v.view()).unwrap();
        let b = p.project(&(&v * 2.0).view()).unwrap();
        assert_eq!(a.len(), 4);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(p.project(&v.view()).unwrap(), a);
    }

    #[test]
    fn label_projector_rejects_wrong_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = LabelProjector::new(&mut rng, 8, 4);
        assert!(p.project(&array![1.0, 2.0].view()).is_err());
    }

    #[test]
    fn heads_must_divide_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(QueryProjector::new(&mut rng, 6, 2, 1, 4).is_err());
    }
}
