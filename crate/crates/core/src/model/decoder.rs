use ndarray::Array4;
use rand::Rng;

use super::config::ModelConfig;
use super::encoder::stage_blocks;
use super::seq::{Layer, SeqCache, Sequential};
use super::{FeaturePyramid, Origin};
use crate::nn::{join, LayerNorm2d, Module, Param, UpConv2x2};
use crate::{Result, Scalar};

/// Mirror of the encoder: each stage upsamples ×2 with a transposed 2×2
/// convolution and runs the same block mix as its encoder counterpart.
/// `stages[0]` produces the deepest level.
#[derive(Debug, Clone)]
pub struct Decoder<T> {
    pub stages: Vec<Sequential<T>>,
}

#[derive(Debug, Clone)]
pub struct DecoderCache<T> {
    stages: Vec<SeqCache<T>>,
}

impl<T: Scalar> Decoder<T> {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        let ch = &config.stage_channels;
        let mut stages = Vec::with_capacity(3);
        let mut cin = config.bottleneck_channels();
        for k in (0..3).rev() {
            let mut layers = vec![Layer::Up(UpConv2x2::new(cin, ch[k], rng)), Layer::Norm(LayerNorm2d::new(ch[k]))];
            layers.extend(stage_blocks(config.stage_depths[k], ch[k], config, rng)?);
            stages.push(Sequential::new(layers));
            cin = ch[k];
        }
        Ok(Self { stages })
    }

    pub fn forward(&self, embedding: &Array4<T>) -> (FeaturePyramid<T>, DecoderCache<T>) {
        let mut cur = embedding.clone();
        let mut deep_first = Vec::with_capacity(3);
        let mut caches = Vec::with_capacity(3);
        for stage in &self.stages {
            let (y, c) = stage.forward(&cur);
            caches.push(c);
            deep_first.push(y.clone());
            cur = y;
        }
        deep_first.reverse();
        (FeaturePyramid::from_vec(deep_first, Origin::Decoder), DecoderCache { stages: caches })
    }

    pub fn infer(&self, embedding: &Array4<T>) -> FeaturePyramid<T> {
        let mut cur = embedding.clone();
        let mut deep_first = Vec::with_capacity(3);
        for stage in &self.stages {
            cur = stage.infer(&cur);
            deep_first.push(cur.clone());
        }
        deep_first.reverse();
        FeaturePyramid::from_vec(deep_first, Origin::Decoder)
    }

    /// `grads[k]` is the gradient on decoder level `k` (shallow first).
    /// Returns the gradient w.r.t. the embedding.
    pub fn backward(&mut self, cache: &DecoderCache<T>, grads: &[Array4<T>; 3]) -> Array4<T> {
        let mut g = grads[0].clone();
        for (i, stage) in self.stages.iter_mut().enumerate().rev() {
            g = stage.backward(&cache.stages[i], &g);
            if i > 0 {
                // stage i's input is the output of stage i-1, i.e. level 3 - i
                g += &grads[3 - i];
            }
        }
        g
    }
}

impl<T: Scalar> Module<T> for Decoder<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        for (i, s) in self.stages.iter().enumerate() {
            s.visit_params(&join(prefix, &format!("stage{i}")), f);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.visit_params_mut(&join(prefix, &format!("stage{i}")), f);
        }
    }
}
