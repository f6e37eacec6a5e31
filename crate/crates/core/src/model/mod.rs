//! GRN-equipped large-kernel encoder, fusion bottleneck and mirrored decoder.

mod archive;
mod block;
mod bottleneck;
mod config;
mod decoder;
mod encoder;
mod seq;

pub use archive::{load_archive, save_archive, ArchiveEntry, MANIFEST_FILE, WEIGHTS_FILE};
pub use block::{merge_dilated_branches, Block, BlockCache};
pub use bottleneck::{Bottleneck, BottleneckCache};
pub use config::{BlockKind, BlockSpec, DilatedBranch, ModelConfig, StageDepth};
pub use decoder::{Decoder, DecoderCache};
pub use encoder::{Encoder, EncoderCache};
pub use seq::{Layer, SeqCache, Sequential};

use ndarray::Array4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::{join, Module, Param};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Encoder,
    Decoder,
}

/// Three feature maps, shallow (stride 4) to deep (stride 16).
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid<T> {
    pub levels: [Array4<T>; 3],
    pub origin: Origin,
}

impl<T: Scalar> FeaturePyramid<T> {
    pub fn new(levels: [Array4<T>; 3], origin: Origin) -> Self {
        Self { levels, origin }
    }

    pub(crate) fn from_vec(levels: Vec<Array4<T>>, origin: Origin) -> Self {
        let levels: [Array4<T>; 3] = levels.try_into().expect("exactly three levels");
        Self { levels, origin }
    }

    pub fn batch(&self) -> usize {
        self.levels[0].dim().0
    }

    /// Shape-compatibility check used by every pairwise consumer.
    pub fn check_pair(&self, other: &Self) -> Result<()> {
        for (k, (a, b)) in self.levels.iter().zip(&other.levels).enumerate() {
            if a.dim() != b.dim() {
                return Err(Error::Shape(format!("level {} shapes {:?} vs {:?}", k + 1, a.dim(), b.dim())));
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.levels.iter().all(|l| l.iter().all(|v| v.is_finite()))
    }

    /// Items `range` of every level.
    pub fn select(&self, items: std::ops::Range<usize>) -> Self {
        let levels = self.levels.clone().map(|l| l.slice(ndarray::s![items.clone(), .., .., ..]).to_owned());
        Self { levels, origin: self.origin }
    }

    /// Stack pyramids along the batch axis.
    pub fn stack(parts: &[&Self]) -> Self {
        let levels = std::array::from_fn(|k| {
            let views: Vec<_> = parts.iter().map(|p| p.levels[k].view()).collect();
            ndarray::concatenate(ndarray::Axis(0), &views).expect("matching level shapes")
        });
        Self {
            levels,
            origin: parts[0].origin,
        }
    }
}

/// The trainable half of the autoencoder: maps encoder features to a
/// reconstructed pyramid.
pub trait Reconstructor<T: Scalar>: Module<T> {
    type Cache;

    fn reconstruct(&self, encoded: &FeaturePyramid<T>) -> (FeaturePyramid<T>, Self::Cache);

    fn infer(&self, encoded: &FeaturePyramid<T>) -> FeaturePyramid<T> {
        self.reconstruct(encoded).0
    }

    /// Accumulate parameter gradients given gradients on the reconstructed
    /// levels.
    fn backward(&mut self, cache: &Self::Cache, grads: &[Array4<T>; 3]);
}

/// Bottleneck + decoder.
#[derive(Debug, Clone)]
pub struct Student<T> {
    pub bottleneck: Bottleneck<T>,
    pub decoder: Decoder<T>,
}

pub struct StudentCache<T> {
    bottleneck: BottleneckCache<T>,
    decoder: DecoderCache<T>,
}

impl<T: Scalar> Reconstructor<T> for Student<T> {
    type Cache = StudentCache<T>;

    fn reconstruct(&self, encoded: &FeaturePyramid<T>) -> (FeaturePyramid<T>, Self::Cache) {
        let (embedding, bottleneck) = self.bottleneck.forward(encoded);
        let (decoded, decoder) = self.decoder.forward(&embedding);
        (decoded, StudentCache { bottleneck, decoder })
    }

    fn infer(&self, encoded: &FeaturePyramid<T>) -> FeaturePyramid<T> {
        self.decoder.infer(&self.bottleneck.infer(encoded))
    }

    fn backward(&mut self, cache: &Self::Cache, grads: &[Array4<T>; 3]) {
        let d_embedding = self.decoder.backward(&cache.decoder, grads);
        self.bottleneck.backward(&cache.bottleneck, &d_embedding);
    }
}

impl<T: Scalar> Module<T> for Student<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.bottleneck.visit_params(&join(prefix, "bottleneck"), f);
        self.decoder.visit_params(&join(prefix, "decoder"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.bottleneck.visit_params_mut(&join(prefix, "bottleneck"), f);
        self.decoder.visit_params_mut(&join(prefix, "decoder"), f);
    }
}

/// Frozen encoder (teacher) plus trainable student.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub encoder: Encoder<T>,
    pub student: Student<T>,
}

impl<T: Scalar> Model<T> {
    /// Random initialization; encoder and student draw from independent
    /// streams of the same seed.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut enc_rng = ChaCha8Rng::seed_from_u64(seed);
        let mut student_rng = ChaCha8Rng::seed_from_u64(seed);
        student_rng.set_stream(1);
        let encoder = Encoder::new(&config, &mut enc_rng)?;
        let student = Student {
            bottleneck: Bottleneck::new(&config, &mut student_rng)?,
            decoder: Decoder::new(&config, &mut student_rng)?,
        };
        Ok(Self {
            config,
            encoder,
            student,
        })
    }

    pub fn encode(&self, images: &Array4<T>) -> Result<FeaturePyramid<T>> {
        let (_, _, h, w) = images.dim();
        if (h, w) != self.config.input_resolution {
            return Err(Error::Input(format!(
                "input {h}x{w} does not match configured {:?}",
                self.config.input_resolution
            )));
        }
        self.encoder.infer(images)
    }

    pub fn bottleneck(&self, pyramid: &FeaturePyramid<T>) -> Result<Array4<T>> {
        if pyramid.origin != Origin::Encoder {
            return Err(Error::Input("bottleneck expects an encoder pyramid".into()));
        }
        Ok(self.student.bottleneck.infer(pyramid))
    }

    pub fn decode(&self, embedding: &Array4<T>) -> FeaturePyramid<T> {
        self.student.decoder.infer(embedding)
    }

    /// Encoder and decoder pyramids for a batch.
    pub fn forward(&self, images: &Array4<T>) -> Result<(FeaturePyramid<T>, FeaturePyramid<T>)> {
        let enc = self.encode(images)?;
        let dec = self.student.infer(&enc);
        Ok((enc, dec))
    }
}

impl<T: Scalar> Module<T> for Model<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.encoder.visit_params(&join(prefix, "encoder"), f);
        self.student.visit_params(prefix, f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.encoder.visit_params_mut(&join(prefix, "encoder"), f);
        self.student.visit_params_mut(prefix, f);
    }
}
