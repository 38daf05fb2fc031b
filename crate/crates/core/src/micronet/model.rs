use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ops;
use super::tensor::{Real, Tensor4};
use crate::error::{Error, Result};

/// Architecture of the U-Net.
///
/// `depth` counts pooling steps: `depth` encoder blocks, a bottleneck block
/// and `depth` decoder blocks. Level `l` has `base_width * 2^l` channels.
/// A single output channel selects the sigmoid regression head; two or more
/// select the logit (segmentation) head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_width: usize,
    pub depth: usize,
    pub seed: u64,
}

impl UNetSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        base_width: usize,
        depth: usize,
        seed: u64,
    ) -> Self {
        Self {
            in_channels,
            out_channels,
            base_width,
            depth,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::InvalidSpec("depth must be >= 1".into()));
        }
        if self.depth > 8 {
            return Err(Error::InvalidSpec(format!(
                "depth {} is too large",
                self.depth
            )));
        }
        if self.base_width == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidSpec(
                "channel counts and base width must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn width(&self, level: usize) -> usize {
        self.base_width << level
    }

    pub fn head(&self) -> Head {
        if self.out_channels == 1 {
            Head::Regression
        } else {
            Head::Logits
        }
    }

    /// Spatial dims must be divisible by this.
    pub fn spatial_divisor(&self) -> usize {
        1 << self.depth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// Sigmoid output in `[0, 1]`.
    Regression,
    /// Raw logits, softmax lives in the loss.
    Logits,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerDef {
    pub name: String,
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
}

impl LayerDef {
    fn new(name: String, in_c: usize, out_c: usize, k: usize) -> Self {
        Self {
            name,
            in_c,
            out_c,
            k,
        }
    }

    pub fn weight_dims(&self) -> [usize; 4] {
        [self.out_c, self.in_c, self.k, self.k]
    }

    pub fn bias_dims(&self) -> [usize; 4] {
        [1, self.out_c, 1, 1]
    }
}

/// Conv layers in parameter order: encoder, bottleneck, decoder (deepest first), head.
pub fn layer_inventory(spec: &UNetSpec) -> Vec<LayerDef> {
    let mut layers = Vec::with_capacity(4 * spec.depth + 3);
    let mut prev = spec.in_channels;
    for l in 0..spec.depth {
        let w = spec.width(l);
        layers.push(LayerDef::new(format!("enc{l}.conv1"), prev, w, 3));
        layers.push(LayerDef::new(format!("enc{l}.conv2"), w, w, 3));
        prev = w;
    }
    let wm = spec.width(spec.depth);
    layers.push(LayerDef::new("mid.conv1".into(), prev, wm, 3));
    layers.push(LayerDef::new("mid.conv2".into(), wm, wm, 3));
    for l in (0..spec.depth).rev() {
        let w = spec.width(l);
        layers.push(LayerDef::new(
            format!("dec{l}.conv1"),
            spec.width(l + 1) + w,
            w,
            3,
        ));
        layers.push(LayerDef::new(format!("dec{l}.conv2"), w, w, 3));
    }
    layers.push(LayerDef::new(
        "head".into(),
        spec.base_width,
        spec.out_channels,
        1,
    ));
    layers
}

/// `(name, dims)` of every parameter tensor in storage order.
pub fn parameter_inventory(spec: &UNetSpec) -> Vec<(String, [usize; 4])> {
    layer_inventory(spec)
        .into_iter()
        .flat_map(|l| {
            [
                (format!("{}.weight", l.name), l.weight_dims()),
                (format!("{}.bias", l.name), l.bias_dims()),
            ]
        })
        .collect()
}

/// He-normal draws for a layer's weights, as `f32`.
pub(crate) fn he_weights(layer: &LayerDef, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let fan_in = (layer.in_c * layer.k * layer.k) as f64;
    let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
    (0..layer.weight_dims().iter().product::<usize>())
        .map(|_| normal.sample(rng) as f32)
        .collect()
}

#[derive(Debug, Clone)]
struct BlockCache<T: Real> {
    input: Tensor4<T>,
    mid: Tensor4<T>,
    out: Tensor4<T>,
}

#[derive(Debug, Clone)]
struct Cache<T: Real> {
    enc: Vec<(BlockCache<T>, Vec<u32>)>,
    mid: BlockCache<T>,
    /// Indexed by level.
    dec: Vec<BlockCache<T>>,
    output: Tensor4<T>,
}

/// U-Net with parameters and the activation cache of the last `forward`.
#[derive(Debug, Clone)]
pub struct Model<T: Real = f32> {
    spec: UNetSpec,
    layers: Vec<LayerDef>,
    /// Two tensors per layer: weight then bias.
    params: Vec<Tensor4<T>>,
    cache: Option<Cache<T>>,
}

pub fn build<T: Real>(spec: UNetSpec) -> Result<Model<T>> {
    Model::build(spec)
}

impl<T: Real> Model<T> {
    pub fn build(spec: UNetSpec) -> Result<Self> {
        spec.validate()?;
        let layers = layer_inventory(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut params = Vec::with_capacity(layers.len() * 2);
        for layer in &layers {
            let w = he_weights(layer, &mut rng);
            params.push(Tensor4::from_vec(
                layer.weight_dims(),
                w.into_iter().map(|v| T::lit(v as f64)).collect(),
            )?);
            params.push(Tensor4::zeros(layer.bias_dims()));
        }
        Ok(Self {
            spec,
            layers,
            params,
            cache: None,
        })
    }

    /// Builds a model around existing parameter tensors (storage order).
    pub fn from_parts(spec: UNetSpec, params: Vec<Tensor4<T>>) -> Result<Self> {
        spec.validate()?;
        let layers = layer_inventory(&spec);
        let inventory = parameter_inventory(&spec);
        if inventory.len() != params.len() {
            return Err(Error::IncompatibleCheckpoint(format!(
                "expected {} parameter tensors, got {}",
                inventory.len(),
                params.len()
            )));
        }
        for ((name, dims), p) in inventory.iter().zip(&params) {
            if *dims != p.dims() {
                return Err(Error::IncompatibleCheckpoint(format!(
                    "{name}: expected dims {dims:?}, got {:?}",
                    p.dims()
                )));
            }
        }
        Ok(Self {
            spec,
            layers,
            params,
            cache: None,
        })
    }

    pub fn spec(&self) -> &UNetSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[LayerDef] {
        &self.layers
    }

    pub fn params(&self) -> &[Tensor4<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor4<T>] {
        &mut self.params
    }

    pub fn param_names(&self) -> Vec<String> {
        parameter_inventory(&self.spec)
            .into_iter()
            .map(|(n, _)| n)
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.zero_grad());
    }

    /// Drops the cached activations of the last forward pass.
    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            spec: self.spec,
            layers: self.layers.clone(),
            params: self.params.iter().map(|p| p.cast()).collect(),
            cache: None,
        }
    }

    fn enc_idx(&self, l: usize) -> usize {
        2 * l
    }

    fn mid_idx(&self) -> usize {
        2 * self.spec.depth
    }

    fn dec_idx(&self, l: usize) -> usize {
        2 * self.spec.depth + 2 + 2 * (self.spec.depth - 1 - l)
    }

    fn head_idx(&self) -> usize {
        4 * self.spec.depth + 2
    }

    fn conv(&self, layer: usize, x: &Tensor4<T>) -> Tensor4<T> {
        let def = &self.layers[layer];
        ops::conv2d(
            x,
            self.params[2 * layer].values(),
            self.params[2 * layer + 1].values(),
            def.out_c,
            def.k,
        )
    }

    fn block(&self, first: usize, input: Tensor4<T>) -> BlockCache<T> {
        let mut mid = self.conv(first, &input);
        ops::relu_inplace(&mut mid);
        let mut out = self.conv(first + 1, &mid);
        ops::relu_inplace(&mut out);
        BlockCache { input, mid, out }
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        if x.c() != self.spec.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "model expects {} input channels, got {}",
                self.spec.in_channels,
                x.c()
            )));
        }
        let d = self.spec.spatial_divisor();
        if !x.h().is_multiple_of(d) || !x.w().is_multiple_of(d) || x.h() == 0 || x.w() == 0 {
            return Err(Error::IndivisibleSpatialDims {
                h: x.h(),
                w: x.w(),
                divisor: d,
            });
        }
        Ok(())
    }

    fn run(&self, x: &Tensor4<T>) -> Result<Cache<T>> {
        self.check_input(x)?;
        let mut enc = Vec::with_capacity(self.spec.depth);
        let mut cur = x.clone();
        for l in 0..self.spec.depth {
            let bc = self.block(self.enc_idx(l), cur);
            let (pooled, arg) = ops::maxpool2(&bc.out);
            enc.push((bc, arg));
            cur = pooled;
        }
        let mid = self.block(self.mid_idx(), cur);
        // Built deepest level first, then reversed to index by level.
        let mut dec: Vec<BlockCache<T>> = Vec::with_capacity(self.spec.depth);
        for l in (0..self.spec.depth).rev() {
            let up = ops::upsample2(dec.last().map_or(&mid.out, |b| &b.out));
            let cat = ops::concat_channels(&up, &enc[l].0.out);
            dec.push(self.block(self.dec_idx(l), cat));
        }
        dec.reverse();
        let mut output = self.conv(self.head_idx(), &dec[0].out);
        if self.spec.head() == Head::Regression {
            ops::sigmoid_inplace(&mut output);
        }
        Ok(Cache {
            enc,
            mid,
            dec,
            output,
        })
    }

    /// Forward pass that keeps activations for a subsequent [`Model::backward`].
    pub fn forward(&mut self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let cache = self.run(x)?;
        let out = cache.output.clone();
        self.cache = Some(cache);
        Ok(out)
    }

    /// Forward pass without touching the activation cache.
    pub fn infer(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        Ok(self.run(x)?.output)
    }

    /// Output of each encoder block (the skip features), shallowest first.
    pub fn encoder_features(&self, x: &Tensor4<T>) -> Result<Vec<Tensor4<T>>> {
        Ok(self.run(x)?.enc.into_iter().map(|(bc, _)| bc.out).collect())
    }

    /// Accumulates parameter gradients for the loss whose gradient with
    /// respect to the last forward output is `loss_grad`.
    pub fn backward(&mut self, loss_grad: &Tensor4<T>) -> Result<()> {
        let cache = self.cache.as_ref().ok_or(Error::NoForwardPass)?;
        if loss_grad.dims() != cache.output.dims() {
            return Err(Error::ShapeMismatch(format!(
                "loss grad {:?} vs output {:?}",
                loss_grad.dims(),
                cache.output.dims()
            )));
        }
        let depth = self.spec.depth;
        let idx = Indices {
            depth,
            enc: (0..depth).map(|l| self.enc_idx(l)).collect(),
            mid: self.mid_idx(),
            dec: (0..depth).map(|l| self.dec_idx(l)).collect(),
            head: self.head_idx(),
        };
        let widths: Vec<usize> = (0..=depth).map(|l| self.spec.width(l)).collect();
        let regression = self.spec.head() == Head::Regression;
        let layers = &self.layers;
        let params = &mut self.params;

        let mut g = loss_grad.clone();
        if regression {
            for (gv, &s) in g.values_mut().iter_mut().zip(cache.output.values()) {
                *gv = *gv * s * (T::one() - s);
            }
        }
        let mut g = conv_back(params, layers, idx.head, &cache.dec[0].out, &g, true).unwrap();

        let mut skip_grads = Vec::with_capacity(depth);
        for l in 0..depth {
            let gin = block_back(params, layers, idx.dec[l], &cache.dec[l], g, true).unwrap();
            let (gup, gskip) = ops::split_channels(&gin, widths[l + 1]);
            skip_grads.push(gskip);
            g = ops::upsample2_backward(&gup);
        }
        g = block_back(params, layers, idx.mid, &cache.mid, g, true).unwrap();
        for l in (0..idx.depth).rev() {
            let (bc, arg) = &cache.enc[l];
            let mut gp = ops::maxpool2_backward(&g, arg, bc.out.dims());
            for (a, &b) in gp.values_mut().iter_mut().zip(skip_grads[l].values()) {
                *a = *a + b;
            }
            match block_back(params, layers, idx.enc[l], bc, gp, l > 0) {
                Some(next) => g = next,
                None => break,
            }
        }
        Ok(())
    }
}

struct Indices {
    depth: usize,
    enc: Vec<usize>,
    mid: usize,
    dec: Vec<usize>,
    head: usize,
}

fn conv_back<T: Real>(
    params: &mut [Tensor4<T>],
    layers: &[LayerDef],
    layer: usize,
    x: &Tensor4<T>,
    dy: &Tensor4<T>,
    need_dx: bool,
) -> Option<Tensor4<T>> {
    let def = &layers[layer];
    let (wp, rest) = params[2 * layer..].split_at_mut(1);
    let (w, dw) = wp[0].split_mut();
    let (_, db) = rest[0].split_mut();
    ops::conv2d_backward(x, w, dy, def.out_c, def.k, dw, db, need_dx)
}

fn block_back<T: Real>(
    params: &mut [Tensor4<T>],
    layers: &[LayerDef],
    first: usize,
    bc: &BlockCache<T>,
    mut g: Tensor4<T>,
    need_dx: bool,
) -> Option<Tensor4<T>> {
    ops::relu_backward_inplace(&bc.out, &mut g);
    let mut g = conv_back(params, layers, first + 1, &bc.mid, &g, true).unwrap();
    ops::relu_backward_inplace(&bc.mid, &mut g);
    conv_back(params, layers, first, &bc.input, &g, need_dx)
}
