use ndarray::Array4;

use super::block::{Block, BlockCache};
use crate::nn::{gelu, gelu_backward, join, Conv2d, LayerNorm2d, LayerNormCache, Module, Param, Pointwise, UpConv2x2};
use crate::Scalar;

#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    Pointwise(Pointwise<T>),
    Up(UpConv2x2<T>),
    Norm(LayerNorm2d<T>),
    Gelu,
    Block(Block<T>),
}

#[derive(Debug, Clone)]
enum LayerCache<T> {
    Input(Array4<T>),
    Norm(LayerNormCache<T>),
    Block(BlockCache<T>),
}

/// An ordered chain of layers.
#[derive(Debug, Clone, Default)]
pub struct Sequential<T> {
    pub layers: Vec<Layer<T>>,
}

#[derive(Debug, Clone)]
pub struct SeqCache<T> {
    caches: Vec<LayerCache<T>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Self { layers }
    }

    pub fn blocks(&self) -> impl Iterator<Item = &Block<T>> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Block(b) => Some(b),
            _ => None,
        })
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut Block<T>> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::Block(b) => Some(b),
            _ => None,
        })
    }

    pub fn forward(&self, x: &Array4<T>) -> (Array4<T>, SeqCache<T>) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let (next, cache) = match layer {
                Layer::Conv(c) => (c.forward(&cur), LayerCache::Input(cur)),
                Layer::Pointwise(p) => (p.forward(&cur), LayerCache::Input(cur)),
                Layer::Up(u) => (u.forward(&cur), LayerCache::Input(cur)),
                Layer::Gelu => (gelu(&cur), LayerCache::Input(cur)),
                Layer::Norm(n) => {
                    let (y, c) = n.forward(&cur);
                    (y, LayerCache::Norm(c))
                }
                Layer::Block(b) => {
                    let (y, c) = b.forward(&cur);
                    (y, LayerCache::Block(c))
                }
            };
            caches.push(cache);
            cur = next;
        }
        (cur, SeqCache { caches })
    }

    /// Forward pass without retaining intermediates.
    pub fn infer(&self, x: &Array4<T>) -> Array4<T> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = match layer {
                Layer::Conv(c) => c.forward(&cur),
                Layer::Pointwise(p) => p.forward(&cur),
                Layer::Up(u) => u.forward(&cur),
                Layer::Gelu => gelu(&cur),
                Layer::Norm(n) => n.forward(&cur).0,
                Layer::Block(b) => b.forward(&cur).0,
            };
        }
        cur
    }

    pub fn backward(&mut self, cache: &SeqCache<T>, dy: &Array4<T>) -> Array4<T> {
        let mut g = dy.clone();
        for (layer, c) in self.layers.iter_mut().zip(&cache.caches).rev() {
            g = match (layer, c) {
                (Layer::Conv(l), LayerCache::Input(x)) => l.backward(x, &g),
                (Layer::Pointwise(l), LayerCache::Input(x)) => l.backward(x, &g),
                (Layer::Up(l), LayerCache::Input(x)) => l.backward(x, &g),
                (Layer::Gelu, LayerCache::Input(x)) => gelu_backward(x, &g),
                (Layer::Norm(l), LayerCache::Norm(c)) => l.backward(c, &g),
                (Layer::Block(l), LayerCache::Block(c)) => l.backward(c, &g),
                _ => unreachable!("cache does not match layer"),
            };
        }
        g
    }
}

impl<T: Scalar> Module<T> for Sequential<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        for (i, layer) in self.layers.iter().enumerate() {
            let p = join(prefix, &i.to_string());
            match layer {
                Layer::Conv(l) => l.visit_params(&p, f),
                Layer::Pointwise(l) => l.visit_params(&p, f),
                Layer::Up(l) => l.visit_params(&p, f),
                Layer::Norm(l) => l.visit_params(&p, f),
                Layer::Block(l) => l.visit_params(&p, f),
                Layer::Gelu => {}
            }
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let p = join(prefix, &i.to_string());
            match layer {
                Layer::Conv(l) => l.visit_params_mut(&p, f),
                Layer::Pointwise(l) => l.visit_params_mut(&p, f),
                Layer::Up(l) => l.visit_params_mut(&p, f),
                Layer::Norm(l) => l.visit_params_mut(&p, f),
                Layer::Block(l) => l.visit_params_mut(&p, f),
                Layer::Gelu => {}
            }
        }
    }
}
