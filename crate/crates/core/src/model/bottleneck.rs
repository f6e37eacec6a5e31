use ndarray::{concatenate, s, Array4, Axis};
use rand::Rng;

use super::block::Block;
use super::config::{BlockSpec, ModelConfig};
use super::encoder::downsample;
use super::seq::{Layer, SeqCache, Sequential};
use super::FeaturePyramid;
use crate::nn::{join, Conv2d, LayerNorm2d, Module, Param, Pointwise};
use crate::{Result, Scalar};

/// Multi-level fusion: levels 1 and 2 are strided down to the level-3 grid,
/// concatenated with level 3, compressed by a 1×1 conv, then passed through
/// SmaK blocks with one further stride-2 reduction.
#[derive(Debug, Clone)]
pub struct Bottleneck<T> {
    pub from_level1: Sequential<T>,
    pub from_level2: Sequential<T>,
    pub fuse: Sequential<T>,
    channels: [usize; 3],
}

#[derive(Debug, Clone)]
pub struct BottleneckCache<T> {
    l1: SeqCache<T>,
    l2: SeqCache<T>,
    fuse: SeqCache<T>,
}

impl<T: Scalar> Bottleneck<T> {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        let ch = &config.stage_channels;
        let out = config.bottleneck_channels();
        let from_level1 = Sequential::new(vec![
            Layer::Conv(Conv2d::new(ch[0], ch[1], 3, 2, 1, rng)),
            Layer::Norm(LayerNorm2d::new(ch[1])),
            Layer::Gelu,
            Layer::Conv(Conv2d::new(ch[1], ch[2], 3, 2, 1, rng)),
            Layer::Norm(LayerNorm2d::new(ch[2])),
        ]);
        let from_level2 = Sequential::new(downsample(ch[1], ch[2], rng).into());
        let mut fuse = vec![
            Layer::Pointwise(Pointwise::new(3 * ch[2], ch[2], rng)),
            Layer::Norm(LayerNorm2d::new(ch[2])),
            Layer::Block(Block::new(BlockSpec::smak(ch[2]), config.expansion, rng)?),
        ];
        fuse.extend(downsample(ch[2], out, rng));
        for _ in 1..config.bottleneck_depth {
            fuse.push(Layer::Block(Block::new(BlockSpec::smak(out), config.expansion, rng)?));
        }
        Ok(Self {
            from_level1,
            from_level2,
            fuse: Sequential::new(fuse),
            channels: [ch[2], ch[2], ch[2]],
        })
    }

    pub fn forward(&self, pyramid: &FeaturePyramid<T>) -> (Array4<T>, BottleneckCache<T>) {
        let (a, l1) = self.from_level1.forward(&pyramid.levels[0]);
        let (b, l2) = self.from_level2.forward(&pyramid.levels[1]);
        let cat = concatenate(Axis(1), &[a.view(), b.view(), pyramid.levels[2].view()]).expect("level grids align");
        let (y, fuse) = self.fuse.forward(&cat.as_standard_layout().to_owned());
        (y, BottleneckCache { l1, l2, fuse })
    }

    pub fn infer(&self, pyramid: &FeaturePyramid<T>) -> Array4<T> {
        let a = self.from_level1.infer(&pyramid.levels[0]);
        let b = self.from_level2.infer(&pyramid.levels[1]);
        let cat = concatenate(Axis(1), &[a.view(), b.view(), pyramid.levels[2].view()]).expect("level grids align");
        self.fuse.infer(&cat.as_standard_layout().to_owned())
    }

    /// Returns gradients w.r.t. the three input levels.
    pub fn backward(&mut self, cache: &BottleneckCache<T>, dy: &Array4<T>) -> [Array4<T>; 3] {
        let dcat = self.fuse.backward(&cache.fuse, dy);
        let [c1, c2, _] = self.channels;
        let da = dcat.slice(s![.., 0..c1, .., ..]).to_owned();
        let db = dcat.slice(s![.., c1..c1 + c2, .., ..]).to_owned();
        let dc = dcat.slice(s![.., c1 + c2.., .., ..]).to_owned();
        let d1 = self.from_level1.backward(&cache.l1, &da);
        let d2 = self.from_level2.backward(&cache.l2, &db);
        [d1, d2, dc]
    }
}

impl<T: Scalar> Module<T> for Bottleneck<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.from_level1.visit_params(&join(prefix, "from_level1"), f);
        self.from_level2.visit_params(&join(prefix, "from_level2"), f);
        self.fuse.visit_params(&join(prefix, "fuse"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.from_level1.visit_params_mut(&join(prefix, "from_level1"), f);
        self.from_level2.visit_params_mut(&join(prefix, "from_level2"), f);
        self.fuse.visit_params_mut(&join(prefix, "fuse"), f);
    }
}
