use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datasets::DatasetMeta;
use crate::error::{Error, Result};
use crate::numerics::{RngStream, Scalar, Tensor};

use super::{prefixed, prefixed_mut, Activation, BlockCache, BlockGrads, BnMode, ConvBlock, Dense, DenseGrads, StateDict};

/// The fixed set of supported networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "2x1000")]
    Mlp2x1000,
    #[serde(rename = "3x1000")]
    Mlp3x1000,
    #[serde(rename = "3x2000")]
    Mlp3x2000,
    #[serde(rename = "4x2000")]
    Mlp4x2000,
    /// Three Conv→ReLU→Pool→BN blocks with 32/128/512 channels.
    #[serde(rename = "cnn3", alias = "cnn-3block")]
    Cnn3Block,
}

pub const CNN_CHANNELS: [usize; 3] = [32, 128, 512];

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Mlp2x1000 => "2x1000",
            Architecture::Mlp3x1000 => "3x1000",
            Architecture::Mlp3x2000 => "3x2000",
            Architecture::Mlp4x2000 => "4x2000",
            Architecture::Cnn3Block => "cnn3",
        }
    }

    pub fn hidden(self) -> Option<Vec<usize>> {
        match self {
            Architecture::Mlp2x1000 => Some(vec![1000; 2]),
            Architecture::Mlp3x1000 => Some(vec![1000; 3]),
            Architecture::Mlp3x2000 => Some(vec![2000; 3]),
            Architecture::Mlp4x2000 => Some(vec![2000; 4]),
            Architecture::Cnn3Block => None,
        }
    }

    pub fn is_mlp(self) -> bool {
        self.hidden().is_some()
    }

    pub fn from_hidden(hidden: &[usize]) -> Option<Self> {
        [
            Architecture::Mlp2x1000,
            Architecture::Mlp3x1000,
            Architecture::Mlp3x2000,
            Architecture::Mlp4x2000,
        ]
        .into_iter()
        .find(|a| a.hidden().as_deref() == Some(hidden))
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('×', "x").as_str() {
            "2x1000" => Ok(Architecture::Mlp2x1000),
            "3x1000" => Ok(Architecture::Mlp3x1000),
            "3x2000" => Ok(Architecture::Mlp3x2000),
            "4x2000" => Ok(Architecture::Mlp4x2000),
            "cnn3" | "cnn-3block" => Ok(Architecture::Cnn3Block),
            other => Err(Error::UnknownArchitecture(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub num_classes: usize,
    pub final_head: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub block_channels: Vec<usize>,
    pub num_classes: usize,
    pub head: bool,
}

impl CnnSpec {
    /// `(C, H, W)` after each block.
    pub fn block_outputs(&self) -> Vec<(usize, usize, usize)> {
        let (mut h, mut w) = (self.height, self.width);
        self.block_channels
            .iter()
            .map(|&c| {
                h /= 2;
                w /= 2;
                (c, h, w)
            })
            .collect()
    }

    pub fn flat_dims(&self) -> Vec<usize> {
        self.block_outputs().iter().map(|(c, h, w)| c * h * w).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Mlp(MlpSpec),
    Cnn(CnnSpec),
}

impl ModelSpec {
    /// Catalog spec for `arch` on a dataset; `head` adds the classifier layer.
    pub fn for_arch(arch: Architecture, meta: &DatasetMeta, head: bool) -> Self {
        match arch.hidden() {
            Some(hidden) => ModelSpec::Mlp(MlpSpec {
                input_dim: meta.input_dim(),
                hidden,
                num_classes: meta.num_classes,
                final_head: head,
            }),
            None => ModelSpec::Cnn(CnnSpec {
                channels: meta.channels,
                height: meta.height,
                width: meta.width,
                block_channels: CNN_CHANNELS.to_vec(),
                num_classes: meta.num_classes,
                head,
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Mlp(m) => {
                if Architecture::from_hidden(&m.hidden).is_none() {
                    return Err(Error::UnknownArchitecture(format!("MLP {:?}", m.hidden)));
                }
            }
            ModelSpec::Cnn(c) => {
                if c.block_channels != CNN_CHANNELS {
                    return Err(Error::UnknownArchitecture(format!("CNN {:?}", c.block_channels)));
                }
                if c.height < 8 || c.width < 8 {
                    return Err(Error::UnknownArchitecture(format!("CNN input {}×{}", c.height, c.width)));
                }
            }
        }
        Ok(())
    }

    /// Parameter count from the layer sizes alone.
    pub fn closed_form_params(&self) -> usize {
        match self {
            ModelSpec::Mlp(m) => {
                let mut dims = vec![m.input_dim];
                dims.extend(&m.hidden);
                if m.final_head {
                    dims.push(m.num_classes);
                }
                dims.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
            }
            ModelSpec::Cnn(c) => {
                let mut cin = c.channels;
                let mut total = 0;
                for &o in &c.block_channels {
                    total += o * cin * 9 + o + 2 * o;
                    cin = o;
                }
                if c.head {
                    total += c.flat_dims().last().unwrap() * c.num_classes + c.num_classes;
                }
                total
            }
        }
    }

    pub fn descriptor(&self) -> String {
        serde_json::to_string(self).expect("spec serialises")
    }
}

/// Dense stack: ReLU hidden layers and an optional linear head.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<S> {
    pub spec: MlpSpec,
    pub layers: Vec<Dense<S>>,
}

#[derive(Clone, Debug)]
pub struct MlpCache<S> {
    pub inputs: Vec<Tensor<S>>,
    pub zs: Vec<Tensor<S>>,
}

impl<S: Scalar> Mlp<S> {
    pub fn new(spec: MlpSpec, rng: &mut RngStream) -> Result<Self> {
        ModelSpec::Mlp(spec.clone()).validate()?;
        Ok(Self::new_unchecked(spec, rng))
    }

    /// Builds any widths; used for toy networks in tests.
    pub fn new_unchecked(spec: MlpSpec, rng: &mut RngStream) -> Self {
        let mut layers = Vec::new();
        let mut prev = spec.input_dim;
        for &h in &spec.hidden {
            layers.push(Dense::kaiming(prev, h, Activation::Relu, rng));
            prev = h;
        }
        if spec.final_head {
            layers.push(Dense::kaiming(prev, spec.num_classes, Activation::None, rng));
        }
        Mlp { spec, layers }
    }

    pub fn infer(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut h = self.layers[0].infer(x)?;
        for l in &self.layers[1..] {
            h = l.infer(&h)?;
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: &Tensor<S>) -> Result<(Tensor<S>, MlpCache<S>)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut zs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for l in &self.layers {
            let (z, a) = l.forward(&h)?;
            inputs.push(h);
            zs.push(z);
            h = a;
        }
        Ok((h, MlpCache { inputs, zs }))
    }

    /// Chain rule through every layer, last to first.
    pub fn backward(&self, cache: &MlpCache<S>, grad_out: &Tensor<S>) -> Result<Vec<DenseGrads<S>>> {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.clone();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let dg = l.backward(&cache.inputs[i], &cache.zs[i], &g, i > 0)?;
            if let Some(gx) = &dg.x {
                g = gx.clone();
            }
            grads.push(dg);
        }
        grads.reverse();
        Ok(grads)
    }
}

impl<S: Scalar> StateDict<S> for Mlp<S> {
    fn named_state(&self) -> Vec<(String, &Tensor<S>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| prefixed(&format!("layer{i}"), l.named_state()))
            .collect()
    }

    fn named_state_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| prefixed_mut(&format!("layer{i}"), l.named_state_mut()))
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

/// Three conv blocks and an optional linear head on the flattened output.
#[derive(Clone, Debug, PartialEq)]
pub struct Cnn<S> {
    pub spec: CnnSpec,
    pub blocks: Vec<ConvBlock<S>>,
    pub head: Option<Dense<S>>,
}

#[derive(Clone, Debug)]
pub struct CnnCache<S> {
    pub blocks: Vec<BlockCache<S>>,
    pub flat: Tensor<S>,
    pub last_shape: Vec<usize>,
}

impl<S: Scalar> Cnn<S> {
    pub fn new(spec: CnnSpec, rng: &mut RngStream) -> Result<Self> {
        ModelSpec::Cnn(spec.clone()).validate()?;
        let mut blocks = Vec::new();
        let mut cin = spec.channels;
        for &o in &spec.block_channels {
            blocks.push(ConvBlock::kaiming(cin, o, rng));
            cin = o;
        }
        let head = spec
            .head
            .then(|| Dense::kaiming(*spec.flat_dims().last().unwrap(), spec.num_classes, Activation::None, rng));
        Ok(Cnn { spec, blocks, head })
    }

    /// Eval-mode output of block `k` (0-based), flattened to `B×flat`.
    pub fn features(&self, x: &Tensor<S>, k: usize) -> Result<Tensor<S>> {
        let mut h = self.blocks[0].infer(x)?;
        for b in &self.blocks[1..=k] {
            h = b.infer(&h)?;
        }
        Ok(h.flatten2())
    }

    pub fn infer(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let f = self.features(x, self.blocks.len() - 1)?;
        match &self.head {
            Some(h) => h.infer(&f),
            None => Ok(f),
        }
    }

    /// Forward through blocks (and the head, if any) keeping caches.
    pub fn forward(&mut self, x: &Tensor<S>, mode: BnMode) -> Result<(Tensor<S>, CnnCache<S>)> {
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut h = x.clone();
        for b in &mut self.blocks {
            let (y, c) = b.forward(&h, mode)?;
            caches.push(c);
            h = y;
        }
        let last_shape = h.shape().to_vec();
        let flat = h.flatten2();
        let out = match &self.head {
            Some(head) => head.infer(&flat)?,
            None => flat.clone(),
        };
        Ok((
            out,
            CnnCache {
                blocks: caches,
                flat,
                last_shape,
            },
        ))
    }

    /// Full backpropagation from head logits to every block.
    pub fn backward(&self, cache: &CnnCache<S>, grad_logits: &Tensor<S>) -> Result<(Vec<BlockGrads<S>>, Option<DenseGrads<S>>)> {
        let (mut g, head_grads) = match &self.head {
            Some(head) => {
                let hg = head.backward_from_gz(&cache.flat, grad_logits, true)?;
                (hg.x.clone().expect("input grad requested"), Some(hg))
            }
            None => (grad_logits.clone(), None),
        };
        g = g.reshape(&cache.last_shape)?;
        let mut out = Vec::with_capacity(self.blocks.len());
        for (i, b) in self.blocks.iter().enumerate().rev() {
            let bg = b.backward(&cache.blocks[i], &g, i > 0)?;
            if let Some(gx) = &bg.x {
                g = gx.clone();
            }
            out.push(bg);
        }
        out.reverse();
        Ok((out, head_grads))
    }
}

impl<S: Scalar> StateDict<S> for Cnn<S> {
    fn named_state(&self) -> Vec<(String, &Tensor<S>)> {
        let mut v: Vec<_> = self
            .blocks
            .iter()
            .enumerate()
            .flat_map(|(i, b)| prefixed(&format!("block{i}"), b.named_state()))
            .collect();
        if let Some(h) = &self.head {
            v.extend(prefixed("head", h.named_state()));
        }
        v
    }

    fn named_state_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut v: Vec<_> = self
            .blocks
            .iter_mut()
            .enumerate()
            .flat_map(|(i, b)| prefixed_mut(&format!("block{i}"), b.named_state_mut()))
            .collect();
        if let Some(h) = &mut self.head {
            v.extend(prefixed_mut("head", h.named_state_mut()));
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut v: Vec<_> = self.blocks.iter_mut().flat_map(|b| b.params_mut()).collect();
        if let Some(h) = &mut self.head {
            v.extend(h.params_mut());
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model<S> {
    Mlp(Mlp<S>),
    Cnn(Cnn<S>),
}

impl<S: Scalar> Model<S> {
    pub fn spec(&self) -> ModelSpec {
        match self {
            Model::Mlp(m) => ModelSpec::Mlp(m.spec.clone()),
            Model::Cnn(c) => ModelSpec::Cnn(c.spec.clone()),
        }
    }

    pub fn infer(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        match self {
            Model::Mlp(m) => m.infer(&x.clone().flatten2()),
            Model::Cnn(c) => c.infer(x),
        }
    }
}

impl<S: Scalar> StateDict<S> for Model<S> {
    fn named_state(&self) -> Vec<(String, &Tensor<S>)> {
        match self {
            Model::Mlp(m) => m.named_state(),
            Model::Cnn(c) => c.named_state(),
        }
    }

    fn named_state_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        match self {
            Model::Mlp(m) => m.named_state_mut(),
            Model::Cnn(c) => c.named_state_mut(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        match self {
            Model::Mlp(m) => m.params_mut(),
            Model::Cnn(c) => c.params_mut(),
        }
    }
}

/// Builds a catalog model with Kaiming-uniform weights drawn from `rng`.
pub fn build_model<S: Scalar>(spec: &ModelSpec, rng: &mut RngStream) -> Result<Model<S>> {
    match spec {
        ModelSpec::Mlp(m) => Ok(Model::Mlp(Mlp::new(m.clone(), rng)?)),
        ModelSpec::Cnn(c) => Ok(Model::Cnn(Cnn::new(c.clone(), rng)?)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::DatasetKind;
    use crate::numerics::StreamName;

    #[test]
    fn mlp_2x1000_param_count() {
        let spec = ModelSpec::for_arch(Architecture::Mlp2x1000, &DatasetKind::Mnist.meta(), true);
        let expected = 784 * 1000 + 1000 + 1000 * 1000 + 1000 + 1000 * 10 + 10;
        assert_eq!(expected, 1_796_010);
        assert_eq!(spec.closed_form_params(), expected);
        let mut m: Model<f32> = build_model(&spec, &mut RngStream::new(StreamName::WeightInit, 0)).unwrap();
        assert_eq!(m.param_count(), expected);
    }

    #[test]
    fn cnn_param_count_matches_closed_form() {
        for kind in DatasetKind::ALL {
            let spec = ModelSpec::for_arch(Architecture::Cnn3Block, &kind.meta(), true);
            let mut m: Model<f32> = build_model(&spec, &mut RngStream::new(StreamName::WeightInit, 0)).unwrap();
            assert_eq!(m.param_count(), spec.closed_form_params());
        }
    }

    #[test]
    fn first_block_kernels_for_mnist() {
        let spec = ModelSpec::for_arch(Architecture::Cnn3Block, &DatasetKind::Mnist.meta(), false);
        let Model::Cnn(c) = build_model::<f32>(&spec, &mut RngStream::new(StreamName::WeightInit, 0)).unwrap() else {
            panic!()
        };
        assert_eq!(c.blocks[0].kernels.shape(), &[32, 1, 3, 3]);
        assert_eq!(c.blocks.iter().map(|b| b.out_channels()).collect::<Vec<_>>(), CNN_CHANNELS);
    }

    #[test]
    fn same_seed_same_parameters() {
        let spec = ModelSpec::for_arch(Architecture::Mlp3x1000, &DatasetKind::Mnist.meta(), true);
        let a: Model<f32> = build_model(&spec, &mut RngStream::new(StreamName::WeightInit, 4)).unwrap();
        let b: Model<f32> = build_model(&spec, &mut RngStream::new(StreamName::WeightInit, 4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn off_catalog_specs_are_rejected() {
        let spec = ModelSpec::Mlp(MlpSpec {
            input_dim: 784,
            hidden: vec![500],
            num_classes: 10,
            final_head: true,
        });
        assert!(matches!(
            build_model::<f32>(&spec, &mut RngStream::new(StreamName::WeightInit, 0)),
            Err(Error::UnknownArchitecture(_))
        ));
        assert!("5x5".parse::<Architecture>().is_err());
    }
}
