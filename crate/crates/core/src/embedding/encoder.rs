use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layers::{
    normal_matrix, slice2, slice2_mut, AttentionCache, FeedForward, FeedForwardCache, LayerNorm, LayerNormCache,
    MultiHeadAttention, Parameters,
};
use super::{EmbeddingError, EncoderConfig, TokenStates};

const TOKEN_INIT_STD: f64 = 1.0;
const POSITION_INIT_STD: f64 = 0.1;

/// Pre-LayerNorm transformer block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub attn_norm: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ffn_norm: LayerNorm,
    pub ffn: FeedForward,
}

struct BlockCache {
    attn_norm: LayerNormCache,
    attn_in: Array2<f64>,
    attn: AttentionCache,
    ffn_norm: LayerNormCache,
    ffn_in: Array2<f64>,
    ffn: FeedForwardCache,
}

impl Block {
    fn forward(&self, x: Array2<f64>, mask: &[bool]) -> (Array2<f64>, BlockCache) {
        let (attn_in, attn_norm) = self.attn_norm.forward(&x.view());
        let (attn_out, attn) = self.attn.forward(&attn_in.view(), &attn_in.view(), mask);
        let mid = &x + &attn_out;
        let (ffn_in, ffn_norm) = self.ffn_norm.forward(&mid.view());
        let (ffn_out, ffn) = self.ffn.forward(&ffn_in.view());
        let out = &mid + &ffn_out;
        (
            out,
            BlockCache {
                attn_norm,
                attn_in,
                attn,
                ffn_norm,
                ffn_in,
                ffn,
            },
        )
    }

    fn backward(&self, cache: &BlockCache, dout: Array2<f64>, grad: &mut Block) -> Array2<f64> {
        let dffn_in = self
            .ffn
            .backward(&cache.ffn_in.view(), &cache.ffn, &dout.view(), &mut grad.ffn);
        let dmid = dout + self.ffn_norm.backward(&cache.ffn_norm, &dffn_in.view(), &mut grad.ffn_norm);
        let (dq, dkv) = self.attn.backward(
            &cache.attn_in.view(),
            &cache.attn_in.view(),
            &cache.attn,
            &dmid.view(),
            &mut grad.attn,
        );
        let dattn_in = dq + dkv;
        dmid + self.attn_norm.backward(&cache.attn_norm, &dattn_in.view(), &mut grad.attn_norm)
    }
}

impl Parameters for Block {
    fn params(&self) -> Vec<&[f64]> {
        let mut v = self.attn_norm.params();
        v.extend(self.attn.params());
        v.extend(self.ffn_norm.params());
        v.extend(self.ffn.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.attn_norm.params_mut();
        v.extend(self.attn.params_mut());
        v.extend(self.ffn_norm.params_mut());
        v.extend(self.ffn.params_mut());
        v
    }
}

/// Token + learned position embeddings, a stack of blocks and a final norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub token_embedding: Array2<f64>,
    pub position_embedding: Array2<f64>,
    pub blocks: Vec<Block>,
    pub final_norm: LayerNorm,
}

pub struct EncoderCache {
    ids: Vec<usize>,
    blocks: Vec<BlockCache>,
    final_norm: LayerNormCache,
}

impl Encoder {
    /// Seeded initialization; the same config always yields bit-identical
    /// weights.
    pub fn new(config: EncoderConfig) -> Result<Self, EmbeddingError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let h = config.hidden;
        let token_embedding = normal_matrix(&mut rng, config.vocab_size, h, TOKEN_INIT_STD);
        let position_embedding = normal_matrix(&mut rng, config.max_len, h, POSITION_INIT_STD);
        let blocks = (0..config.n_layers)
            .map(|_| Block {
                attn_norm: LayerNorm::new(h),
                attn: MultiHeadAttention::new(&mut rng, h, config.n_heads),
                ffn_norm: LayerNorm::new(h),
                ffn: FeedForward::new(&mut rng, h, config.ffn_width),
            })
            .collect();
        Ok(Encoder {
            config,
            token_embedding,
            position_embedding,
            blocks,
            final_norm: LayerNorm::new(h),
        })
    }

    fn check_ids(&self, ids: &[usize]) -> Result<(), EmbeddingError> {
        if ids.len() > self.config.max_len {
            return Err(EmbeddingError::Length {
                got: ids.len(),
                max: self.config.max_len,
            });
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(EmbeddingError::TokenId(bad));
        }
        Ok(())
    }

    pub fn encode_ids(&self, ids: &[usize]) -> Result<TokenStates, EmbeddingError> {
        let mask = vec![true; ids.len()];
        Ok(self.forward(ids, &mask)?.0)
    }

    /// Forward pass keeping activations for [`Encoder::backward`]. Positions
    /// with `mask == false` are never attended to.
    pub fn forward(&self, ids: &[usize], mask: &[bool]) -> Result<(TokenStates, EncoderCache), EmbeddingError> {
        self.check_ids(ids)?;
        assert_eq!(ids.len(), mask.len(), "mask length must match token count");
        let h = self.config.hidden;
        let mut x = Array2::zeros((ids.len(), h));
        for (pos, (mut row, &id)) in x.rows_mut().into_iter().zip(ids).enumerate() {
            row.assign(&(&self.token_embedding.row(id) + &self.position_embedding.row(pos)));
        }
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (out, cache) = block.forward(x, mask);
            caches.push(cache);
            x = out;
        }
        let (states, final_norm) = self.final_norm.forward(&x.view());
        Ok((
            TokenStates {
                states,
                mask: mask.to_vec(),
            },
            EncoderCache {
                ids: ids.to_vec(),
                blocks: caches,
                final_norm,
            },
        ))
    }

    /// Backpropagates `dstates` (same shape as the forward output) and
    /// accumulates into `grad`.
    pub fn backward(&self, cache: &EncoderCache, dstates: &ArrayView2<f64>, grad: &mut Encoder) {
        let mut dx = self.final_norm.backward(&cache.final_norm, dstates, &mut grad.final_norm);
        for ((block, bcache), bgrad) in self.blocks.iter().zip(&cache.blocks).zip(grad.blocks.iter_mut()).rev() {
            dx = block.backward(bcache, dx, bgrad);
        }
        for (pos, (drow, &id)) in dx.rows().into_iter().zip(&cache.ids).enumerate() {
            let mut t = grad.token_embedding.row_mut(id);
            t += &drow;
            let mut p = grad.position_embedding.row_mut(pos);
            p += &drow;
        }
    }

    /// SHA-256 over all parameter bytes, hex encoded.
    pub fn checksum(&self) -> String {
        parameter_checksum(self)
    }
}

impl Parameters for Encoder {
    fn params(&self) -> Vec<&[f64]> {
        let mut v = vec![slice2(&self.token_embedding), slice2(&self.position_embedding)];
        for b in &self.blocks {
            v.extend(b.params());
        }
        v.extend(self.final_norm.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = vec![
            slice2_mut(&mut self.token_embedding),
            slice2_mut(&mut self.position_embedding),
        ];
        for b in &mut self.blocks {
            v.extend(b.params_mut());
        }
        v.extend(self.final_norm.params_mut());
        v
    }
}

pub fn parameter_checksum<P: Parameters + ?Sized>(p: &P) -> String {
    let mut hasher = Sha256::new();
    for t in p.params() {
        for x in t {
            hasher.update(x.to_le_bytes());
        }
    }
    hex::encode(hasher.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{ReferenceEncoder, TextEncoder, Vocabulary};

    fn tiny(seed: u64) -> Encoder {
        Encoder::new(EncoderConfig {
            vocab_size: 12,
            hidden: 8,
            n_layers: 2,
            n_heads: 2,
            max_len: 6,
            ffn_width: 16,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn shape_and_determinism() {
        let enc = tiny(1);
        let s = enc.encode_ids(&[2, 3, 4, 5, 6]).unwrap();
        assert_eq!(s.states.dim(), (5, 8));
        assert_eq!(enc.encode_ids(&[2, 3, 4, 5, 6]).unwrap(), s);
        assert_eq!(tiny(1), enc);
        assert_ne!(tiny(2).checksum(), enc.checksum());
    }

    #[test]
    fn length_limit() {
        let enc = tiny(1);
        assert!(enc.encode_ids(&[2; 6]).is_ok());
        assert_eq!(
            enc.encode_ids(&[2; 7]).unwrap_err(),
            EmbeddingError::Length { got: 7, max: 6 }
        );
    }

    #[test]
    fn masked_padding_leaves_states_unchanged() {
        let enc = tiny(1);
        let base = enc.encode_ids(&[2, 5, 7]).unwrap();
        let (padded, _) = enc.forward(&[2, 5, 7, 0, 0], &[true, true, true, false, false]).unwrap();
        for i in 0..3 {
            for j in 0..8 {
                assert!((base.states[[i, j]] - padded.states[[i, j]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn label_encoding_is_normalized() {
        let vocab = Vocabulary::build(["joy fear"]);
        let mut cfg = EncoderConfig::new(vocab.len(), 3);
        cfg.hidden = 8;
        cfg.n_heads = 2;
        let enc = Encoder::new(cfg).unwrap();
        let r = ReferenceEncoder {
            vocab: &vocab,
            encoder: &enc,
        };
        let a = r.encode_label("joy").unwrap();
        assert_eq!(a.len(), 8);
        assert_eq!(a, r.encode_label("joy ").unwrap());
        assert_eq!(a, r.encode_label(" JOY").unwrap());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let enc = tiny(9);
        let ids = [2, 4, 7, 1];
        let mask = [true, true, true, false];
        let weights = normal_matrix(&mut ChaCha8Rng::seed_from_u64(11), 4, 8, 1.0);
        let f = |e: &Encoder| (&e.forward(&ids, &mask).unwrap().0.states * &weights).sum();
        let (_, cache) = enc.forward(&ids, &mask).unwrap();
        let mut grad = enc.zeros_like();
        enc.backward(&cache, &weights.view(), &mut grad);
        let analytic: Vec<f64> = grad.params().concat();
        let h = 1e-5;
        let n = analytic.len();
        // every 7th parameter keeps the test fast while touching all tensors
        for idx in (0..n).step_by(7) {
            let mut plus = enc.clone();
            let mut minus = enc.clone();
            set_flat(&mut plus, idx, h);
            set_flat(&mut minus, idx, -h);
            let num = (f(&plus) - f(&minus)) / (2.0 * h);
            let ana = analytic[idx];
            assert!(
                (num - ana).abs() <= 1e-5 * (1.0 + num.abs().max(ana.abs())),
                "param {idx}: numeric {num} vs analytic {ana}"
            );
        }
    }

    fn set_flat(e: &mut Encoder, mut idx: usize, delta: f64) {
        for t in e.params_mut() {
            if idx < t.len() {
                t[idx] += delta;
                return;
            }
            idx -= t.len();
        }
    }
}
