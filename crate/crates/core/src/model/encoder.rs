use ndarray::Array4;
use rand::Rng;

use super::block::Block;
use super::config::{BlockSpec, ModelConfig, StageDepth};
use super::seq::{Layer, SeqCache, Sequential};
use super::{FeaturePyramid, Origin};
use crate::nn::{join, Conv2d, LayerNorm2d, Module, Param};
use crate::{Error, Result, Scalar};

pub(crate) fn stage_blocks<T: Scalar, R: Rng + ?Sized>(
    depth: StageDepth,
    channels: usize,
    config: &ModelConfig,
    rng: &mut R,
) -> Result<Vec<Layer<T>>> {
    let mut layers = Vec::with_capacity(depth.total());
    for _ in 0..depth.lark {
        layers.push(Layer::Block(Block::new(BlockSpec::lark(channels, config.lark_kernel), config.expansion, rng)?));
    }
    for _ in 0..depth.smak {
        layers.push(Layer::Block(Block::new(BlockSpec::smak(channels), config.expansion, rng)?));
    }
    Ok(layers)
}

pub(crate) fn downsample<T: Scalar, R: Rng + ?Sized>(cin: usize, cout: usize, rng: &mut R) -> [Layer<T>; 2] {
    [Layer::Conv(Conv2d::new(cin, cout, 3, 2, 1, rng)), Layer::Norm(LayerNorm2d::new(cout))]
}

/// Stride-4 stem followed by three stages at strides 4, 8 and 16.
#[derive(Debug, Clone)]
pub struct Encoder<T> {
    pub stem: Sequential<T>,
    pub stages: Vec<Sequential<T>>,
}

#[derive(Debug, Clone)]
pub struct EncoderCache<T> {
    stem: SeqCache<T>,
    stages: Vec<SeqCache<T>>,
}

impl<T: Scalar> Encoder<T> {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        let ch = &config.stage_channels;
        let half = ch[0] / 2;
        let stem = Sequential::new(vec![
            Layer::Conv(Conv2d::new(3, half, 3, 2, 1, rng)),
            Layer::Norm(LayerNorm2d::new(half)),
            Layer::Gelu,
            Layer::Conv(Conv2d::new(half, ch[0], 3, 2, 1, rng)),
            Layer::Norm(LayerNorm2d::new(ch[0])),
        ]);
        let mut stages = Vec::with_capacity(3);
        for k in 0..3 {
            let mut layers = Vec::new();
            if k > 0 {
                layers.extend(downsample(ch[k - 1], ch[k], rng));
            }
            layers.extend(stage_blocks(config.stage_depths[k], ch[k], config, rng)?);
            stages.push(Sequential::new(layers));
        }
        Ok(Self { stem, stages })
    }

    fn check_input(&self, x: &Array4<T>) -> Result<()> {
        let (b, c, h, w) = x.dim();
        if b == 0 {
            return Err(Error::Input("empty batch".into()));
        }
        if c != 3 {
            return Err(Error::Input(format!("expected 3 input channels, got {c}")));
        }
        ModelConfig::check_resolution(h, w)
    }

    pub fn forward(&self, x: &Array4<T>) -> Result<(FeaturePyramid<T>, EncoderCache<T>)> {
        self.check_input(x)?;
        let (mut cur, stem) = self.stem.forward(x);
        let mut levels = Vec::with_capacity(3);
        let mut stages = Vec::with_capacity(3);
        for stage in &self.stages {
            let (y, c) = stage.forward(&cur);
            stages.push(c);
            levels.push(y.clone());
            cur = y;
        }
        Ok((FeaturePyramid::from_vec(levels, Origin::Encoder), EncoderCache { stem, stages }))
    }

    pub fn infer(&self, x: &Array4<T>) -> Result<FeaturePyramid<T>> {
        self.check_input(x)?;
        let mut cur = self.stem.infer(x);
        let mut levels = Vec::with_capacity(3);
        for stage in &self.stages {
            cur = stage.infer(&cur);
            levels.push(cur.clone());
        }
        Ok(FeaturePyramid::from_vec(levels, Origin::Encoder))
    }

    /// Gradient w.r.t. the input image given gradients on any pyramid level.
    pub fn backward(&mut self, cache: &EncoderCache<T>, level_grads: [Option<&Array4<T>>; 3]) -> Array4<T> {
        let mut g: Option<Array4<T>> = None;
        for k in (0..3).rev() {
            let total = match (g.take(), level_grads[k]) {
                (Some(mut a), Some(b)) => {
                    a += b;
                    a
                }
                (Some(a), None) => a,
                (None, Some(b)) => b.clone(),
                (None, None) => continue,
            };
            g = Some(self.stages[k].backward(&cache.stages[k], &total));
        }
        let g = g.expect("at least one level gradient");
        self.stem.backward(&cache.stem, &g)
    }
}

impl<T: Scalar> Module<T> for Encoder<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.stem.visit_params(&join(prefix, "stem"), f);
        for (i, s) in self.stages.iter().enumerate() {
            s.visit_params(&join(prefix, &format!("stage{i}")), f);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.stem.visit_params_mut(&join(prefix, "stem"), f);
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.visit_params_mut(&join(prefix, &format!("stage{i}")), f);
        }
    }
}
