//! The bi-dense super-resolution network and its ablations.
//!
//! ```text
//! I_LR ─ extraction ─ L0 ─┬─ block 1 ─ H1 ─┬──────────┬─ … ─┐
//!                         │                └─ block 2 ─ H2 ─ …│
//!                         │          [H1 … H_B] ─ global compression ─ T
//!                         └──────────────────────────────── + ─ G ─ upsampler ─ reconstruction ─ I_SR
//! ```
//!
//! Block b ≥ 2 consumes the channel concatenation of every earlier block
//! output. Inside a block, a 1×1 input compression produces L_b⁰, each
//! dense layer consumes the concatenation of all earlier layer outputs, a
//! 1×1 output compression reduces everything back to `n_r` channels, and a
//! local skip adds L_b⁰.
//!
//! The wiring is written once against [`Executor`], so training (tape),
//! inference (eager tensors) and the symbolic shape check all run the
//! exact same graph.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{ConvParams, Element, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Transposed-convolution upsampling.
    Dbdn,
    /// Sub-pixel (conv + pixel shuffle) upsampling.
    DbdnPlus,
    /// Blocks chained in a line instead of densely connected.
    WoInter,
    /// One wide block with no intermediate compression layers.
    WoComp,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Dbdn, Variant::DbdnPlus, Variant::WoInter, Variant::WoComp];

    pub fn tag(self) -> u32 {
        match self {
            Variant::Dbdn => 0,
            Variant::DbdnPlus => 1,
            Variant::WoInter => 2,
            Variant::WoComp => 3,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        Variant::ALL.into_iter().find(|v| v.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Dbdn => "dbdn",
            Variant::DbdnPlus => "dbdn-plus",
            Variant::WoInter => "wo-inter",
            Variant::WoComp => "wo-comp",
        }
    }

    fn uses_subpixel(self) -> bool {
        self == Variant::DbdnPlus
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "dbdn" => Ok(Variant::Dbdn),
            "dbdn-plus" | "dbdn+" | "dbdnplus" => Ok(Variant::DbdnPlus),
            "wo-inter" | "dbdn-wo-inter" => Ok(Variant::WoInter),
            "wo-comp" | "dbdn-wo-comp" => Ok(Variant::WoComp),
            other => Err(Error::InvalidConfig(format!("unknown variant {other:?}"))),
        }
    }
}

/// Architecture hyperparameters; together with a seed they fully determine a
/// [`Network`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub variant: Variant,
    pub blocks: usize,
    pub layers: usize,
    pub n_r: usize,
    pub n_g: usize,
    pub scale: usize,
    /// Also feed the extraction features L0 into every block's concatenation.
    /// Off by default: block b ≥ 2 sees only [H1 … H_{b−1}].
    pub l0_in_every_block: bool,
}

impl ModelConfig {
    /// B = 16 blocks of L = 8 layers, n_r = n_g = 64.
    pub fn base(variant: Variant, scale: usize) -> Self {
        ModelConfig { variant, blocks: 16, layers: 8, n_r: 64, n_g: 64, scale, l0_in_every_block: false }
    }

    /// One block of 128 dense layers with growth 16.
    pub fn wo_comp(scale: usize) -> Self {
        ModelConfig { variant: Variant::WoComp, blocks: 1, layers: 128, n_r: 64, n_g: 16, scale, l0_in_every_block: false }
    }

    pub fn tiny(variant: Variant, blocks: usize, layers: usize, width: usize, scale: usize) -> Self {
        ModelConfig { variant, blocks, layers, n_r: width, n_g: width, scale, l0_in_every_block: false }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.scale) {
            return Err(Error::InvalidConfig(format!("scale must be 2, 3 or 4, got {}", self.scale)));
        }
        for (name, v) in [("blocks", self.blocks), ("layers", self.layers), ("n_r", self.n_r), ("n_g", self.n_g)] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if self.variant == Variant::WoComp && self.blocks != 1 {
            return Err(Error::InvalidConfig(format!("wo-comp uses a single block, got {}", self.blocks)));
        }
        Ok(())
    }

    /// Channels arriving at block `b` (0-based).
    pub fn block_input_channels(&self, b: usize) -> usize {
        match self.variant {
            Variant::WoInter | Variant::WoComp => self.n_r,
            Variant::Dbdn | Variant::DbdnPlus => {
                let earlier = b * self.n_r;
                match (b, self.l0_in_every_block) {
                    (0, _) => self.n_r,
                    (_, true) => self.n_r + earlier,
                    (_, false) => earlier,
                }
            }
        }
    }

    /// Channels arriving at dense layer `i` (0-based) of any block.
    pub fn dense_input_channels(&self, i: usize) -> usize {
        self.n_r + i * self.n_g
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntraDenseBlock<E = f32> {
    pub input_compression: ConvParams<E>,
    pub dense_layers: Vec<ConvParams<E>>,
    pub output_compression: ConvParams<E>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Upsampler<E = f32> {
    /// Chained transposed convolutions.
    Deconv(Vec<ConvParams<E>>),
    /// A convolution to `scale² · n_r` channels followed by a pixel shuffle.
    SubPixel { conv: ConvParams<E>, scale: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<E = f32> {
    config: ModelConfig,
    pub extraction: ConvParams<E>,
    pub blocks: Vec<IntraDenseBlock<E>>,
    pub global_compression: ConvParams<E>,
    pub upsampler: Upsampler<E>,
    pub reconstruction: ConvParams<E>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvKind {
    Forward,
    Transposed,
}

/// (kernel, stride, padding) of each transposed convolution for a scale.
fn deconv_stages(scale: usize) -> &'static [(usize, usize, usize)] {
    match scale {
        2 => &[(6, 2, 2)],
        3 => &[(9, 3, 3)],
        4 => &[(6, 2, 2), (6, 2, 2)],
        _ => &[],
    }
}

fn init_conv<E: Element>(p: &mut ConvParams<E>, kind: ConvKind, rng: &mut ChaCha8Rng) {
    let s = p.weight.shape();
    let fan_in = match kind {
        ConvKind::Forward => (s.c * s.h * s.w) as f64,
        // Each output pixel of a strided transposed conv sees about (k/stride)² taps per input channel.
        ConvKind::Transposed => (s.n * s.h * s.w) as f64 / (p.stride * p.stride) as f64,
    };
    let bound = (1.0 / fan_in).sqrt();
    for w in p.weight.data_mut() {
        *w = E::of_f64(rng.gen_range(-bound..bound));
    }
    p.bias.data_mut().fill(E::zero());
}

impl Network<f32> {
    /// Allocates and initialises every layer. Deterministic for a fixed seed.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let n_r = config.n_r;
        let conv = ConvParams::zeros;
        let blocks = (0..config.blocks)
            .map(|b| IntraDenseBlock {
                input_compression: conv(config.block_input_channels(b), n_r, 1, 1, 0),
                dense_layers: (0..config.layers)
                    .map(|i| conv(config.dense_input_channels(i), config.n_g, 3, 1, 1))
                    .collect(),
                output_compression: conv(config.dense_input_channels(config.layers), n_r, 1, 1, 0),
            })
            .collect();
        let upsampler = if config.variant.uses_subpixel() {
            Upsampler::SubPixel { conv: conv(n_r, config.scale * config.scale * n_r, 3, 1, 1), scale: config.scale }
        } else {
            Upsampler::Deconv(
                deconv_stages(config.scale)
                    .iter()
                    .map(|&(k, s, p)| ConvParams::zeros_transposed(n_r, n_r, k, s, p))
                    .collect(),
            )
        };
        let mut net = Network {
            config,
            extraction: conv(3, n_r, 3, 1, 1),
            blocks,
            global_compression: conv(config.blocks * n_r, n_r, 1, 1, 0),
            upsampler,
            reconstruction: conv(n_r, 3, 3, 1, 1),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, kind, p) in net.layers_mut() {
            init_conv(p, kind, &mut rng);
        }
        Ok(net)
    }

    /// Builds one of the two ablation variants.
    pub fn build_ablation(config: ModelConfig, seed: u64) -> Result<Self> {
        match config.variant {
            Variant::WoInter | Variant::WoComp => Network::build(config, seed),
            other => Err(Error::InvalidConfig(format!("{other} is not an ablation variant"))),
        }
    }
}

/// One convolution's canonical name and parameters.
pub type NamedLayer<'a, E> = (String, ConvKind, &'a ConvParams<E>);

impl<E: Element> Network<E> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// All convolutions in canonical build order.
    pub fn layers(&self) -> Vec<NamedLayer<'_, E>> {
        let mut out = vec![("extraction".to_string(), ConvKind::Forward, &self.extraction)];
        for (b, block) in self.blocks.iter().enumerate() {
            out.push((format!("blocks.{b}.input_compression"), ConvKind::Forward, &block.input_compression));
            for (i, layer) in block.dense_layers.iter().enumerate() {
                out.push((format!("blocks.{b}.dense.{i}"), ConvKind::Forward, layer));
            }
            out.push((format!("blocks.{b}.output_compression"), ConvKind::Forward, &block.output_compression));
        }
        out.push(("global_compression".to_string(), ConvKind::Forward, &self.global_compression));
        match &self.upsampler {
            Upsampler::Deconv(stages) => {
                for (i, p) in stages.iter().enumerate() {
                    out.push((format!("upsampler.{i}"), ConvKind::Transposed, p));
                }
            }
            Upsampler::SubPixel { conv, .. } => out.push(("upsampler.conv".to_string(), ConvKind::Forward, conv)),
        }
        out.push(("reconstruction".to_string(), ConvKind::Forward, &self.reconstruction));
        out
    }

    pub fn layers_mut(&mut self) -> Vec<(String, ConvKind, &mut ConvParams<E>)> {
        let mut out = vec![("extraction".to_string(), ConvKind::Forward, &mut self.extraction)];
        for (b, block) in self.blocks.iter_mut().enumerate() {
            out.push((format!("blocks.{b}.input_compression"), ConvKind::Forward, &mut block.input_compression));
            for (i, layer) in block.dense_layers.iter_mut().enumerate() {
                out.push((format!("blocks.{b}.dense.{i}"), ConvKind::Forward, layer));
            }
            out.push((format!("blocks.{b}.output_compression"), ConvKind::Forward, &mut block.output_compression));
        }
        out.push(("global_compression".to_string(), ConvKind::Forward, &mut self.global_compression));
        match &mut self.upsampler {
            Upsampler::Deconv(stages) => {
                for (i, p) in stages.iter_mut().enumerate() {
                    out.push((format!("upsampler.{i}"), ConvKind::Transposed, p));
                }
            }
            Upsampler::SubPixel { conv, .. } => out.push(("upsampler.conv".to_string(), ConvKind::Forward, conv)),
        }
        out.push(("reconstruction".to_string(), ConvKind::Forward, &mut self.reconstruction));
        out
    }

    /// Parameter tensors in canonical order, weight before bias.
    pub fn params(&self) -> Vec<(String, &Tensor<E>)> {
        self.layers()
            .into_iter()
            .flat_map(|(name, _, p)| [(format!("{name}.weight"), &p.weight), (format!("{name}.bias"), &p.bias)])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<E>)> {
        self.layers_mut()
            .into_iter()
            .flat_map(|(name, _, p)| {
                let ConvParams { weight, bias, .. } = p;
                [(format!("{name}.weight"), weight), (format!("{name}.bias"), bias)]
            })
            .collect()
    }

    pub fn count_params(&self) -> usize {
        self.layers().iter().map(|(_, _, p)| p.numel()).sum()
    }

    pub fn param_breakdown(&self) -> ParamBreakdown {
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                b.input_compression.numel()
                    + b.dense_layers.iter().map(ConvParams::numel).sum::<usize>()
                    + b.output_compression.numel()
            })
            .collect();
        let upsampler = match &self.upsampler {
            Upsampler::Deconv(stages) => stages.iter().map(ConvParams::numel).sum(),
            Upsampler::SubPixel { conv, .. } => conv.numel(),
        };
        ParamBreakdown {
            extraction: self.extraction.numel(),
            blocks,
            global_compression: self.global_compression.numel(),
            upsampler,
            reconstruction: self.reconstruction.numel(),
        }
    }

    pub fn cast<F: Element>(&self) -> Network<F> {
        Network {
            config: self.config,
            extraction: self.extraction.cast(),
            blocks: self
                .blocks
                .iter()
                .map(|b| IntraDenseBlock {
                    input_compression: b.input_compression.cast(),
                    dense_layers: b.dense_layers.iter().map(ConvParams::cast).collect(),
                    output_compression: b.output_compression.cast(),
                })
                .collect(),
            global_compression: self.global_compression.cast(),
            upsampler: match &self.upsampler {
                Upsampler::Deconv(stages) => Upsampler::Deconv(stages.iter().map(ConvParams::cast).collect()),
                Upsampler::SubPixel { conv, scale } => Upsampler::SubPixel { conv: conv.cast(), scale: *scale },
            },
            reconstruction: self.reconstruction.cast(),
        }
    }

    pub fn clear_grads(&mut self) {
        for (_, t) in self.params_mut() {
            t.clear_grad();
        }
    }

    /// Runs the full network on an eager executor (no tape).
    pub fn forward(&self, input: &Tensor<E>) -> Result<Tensor<E>> {
        run_network(self, &mut Eager, input.clone())
    }

    /// Symbolic pass: propagates shapes through every layer, checking that
    /// each convolution receives exactly the channels it was built for.
    pub fn shape_pass(&self, input: Shape) -> Result<Vec<LayerTrace>> {
        let mut exec = ShapeExec { trace: Vec::new() };
        run_network(self, &mut exec, input)?;
        let names: Vec<(usize, String)> = self
            .layers()
            .into_iter()
            .map(|(name, _, p)| (p as *const ConvParams<E> as usize, name))
            .collect();
        Ok(exec
            .trace
            .into_iter()
            .map(|(addr, input, output)| LayerTrace {
                name: names.iter().find(|(a, _)| *a == addr).map(|(_, n)| n.clone()).unwrap_or_default(),
                input,
                output,
            })
            .collect())
    }

    /// Registers every parameter on `tape` in canonical order.
    pub fn bind<'n>(&'n self, tape: &mut Tape<'n, E>) -> Binding {
        let mut vars = Vec::new();
        let mut index = HashMap::new();
        for (i, (_, _, p)) in self.layers().into_iter().enumerate() {
            vars.push((tape.param(&p.weight), tape.param(&p.bias)));
            index.insert(p as *const ConvParams<E> as usize, i);
        }
        Binding { vars, index }
    }

    /// Records the forward pass on `tape`; parameters must come from [`Self::bind`].
    pub fn forward_on_tape<'n>(&'n self, tape: &mut Tape<'n, E>, binding: &Binding, input: Var) -> Result<Var> {
        let mut exec = TapeExec { tape, binding };
        run_network(self, &mut exec, input)
    }

    /// Moves the gradients of every bound parameter into its grad buffer.
    pub fn store_gradients(&mut self, binding: &Binding, grads: &mut Gradients<E>) -> Result<()> {
        let vars = binding.vars.clone();
        for ((_, _, p), (wv, bv)) in self.layers_mut().into_iter().zip(vars) {
            for (t, v) in [(&mut p.weight, wv), (&mut p.bias, bv)] {
                match grads.take(v) {
                    Some(g) => t.set_grad(g)?,
                    None => t.clear_grad(),
                }
            }
        }
        Ok(())
    }
}

/// Parameter-tensor handles on a tape, in canonical layer order.
pub struct Binding {
    vars: Vec<(Var, Var)>,
    index: HashMap<usize, usize>,
}

impl Binding {
    pub fn vars(&self) -> &[(Var, Var)] {
        &self.vars
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamBreakdown {
    pub extraction: usize,
    pub blocks: Vec<usize>,
    pub global_compression: usize,
    pub upsampler: usize,
    pub reconstruction: usize,
}

impl ParamBreakdown {
    pub fn total(&self) -> usize {
        self.extraction + self.blocks.iter().sum::<usize>() + self.global_compression + self.upsampler + self.reconstruction
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerTrace {
    pub name: String,
    pub input: Shape,
    pub output: Shape,
}

/// Backend the network wiring runs on.
pub trait Executor<'n, E: Element> {
    type Value;

    fn conv(&mut self, x: &Self::Value, layer: &'n ConvParams<E>, kind: ConvKind) -> Result<Self::Value>;
    fn pixel_shuffle(&mut self, x: &Self::Value, scale: usize) -> Result<Self::Value>;
    fn concat(&mut self, parts: &[&Self::Value]) -> Result<Self::Value>;
    fn relu(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn channels(&self, x: &Self::Value) -> usize;
}

/// Plain tensors, nothing recorded.
pub struct Eager;

impl<'n, E: Element> Executor<'n, E> for Eager {
    type Value = Tensor<E>;

    fn conv(&mut self, x: &Tensor<E>, layer: &'n ConvParams<E>, kind: ConvKind) -> Result<Tensor<E>> {
        match kind {
            ConvKind::Forward => ops::conv2d(x, layer),
            ConvKind::Transposed => ops::conv2d_transpose(x, layer),
        }
    }

    fn pixel_shuffle(&mut self, x: &Tensor<E>, scale: usize) -> Result<Tensor<E>> {
        ops::pixel_shuffle(x, scale)
    }

    fn concat(&mut self, parts: &[&Tensor<E>]) -> Result<Tensor<E>> {
        ops::concat_channels(parts)
    }

    fn relu(&mut self, x: &Tensor<E>) -> Result<Tensor<E>> {
        Ok(ops::relu(x))
    }

    fn add(&mut self, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
        ops::add(a, b)
    }

    fn channels(&self, x: &Tensor<E>) -> usize {
        x.shape().c
    }
}

struct TapeExec<'t, 'n, 'b, E: Element> {
    tape: &'t mut Tape<'n, E>,
    binding: &'b Binding,
}

impl<'n, E: Element> Executor<'n, E> for TapeExec<'_, 'n, '_, E> {
    type Value = Var;

    fn conv(&mut self, x: &Var, layer: &'n ConvParams<E>, kind: ConvKind) -> Result<Var> {
        let i = *self
            .binding
            .index
            .get(&(layer as *const ConvParams<E> as usize))
            .ok_or_else(|| Error::shape("forward", "layer was not bound to this tape"))?;
        let (w, b) = self.binding.vars[i];
        match kind {
            ConvKind::Forward => self.tape.conv2d(*x, w, b, layer.stride, layer.padding),
            ConvKind::Transposed => self.tape.conv2d_transpose(*x, w, b, layer.stride, layer.padding),
        }
    }

    fn pixel_shuffle(&mut self, x: &Var, scale: usize) -> Result<Var> {
        self.tape.pixel_shuffle(*x, scale)
    }

    fn concat(&mut self, parts: &[&Var]) -> Result<Var> {
        let parts: Vec<Var> = parts.iter().map(|v| **v).collect();
        self.tape.concat(&parts)
    }

    fn relu(&mut self, x: &Var) -> Result<Var> {
        Ok(self.tape.relu(*x))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.tape.add(*a, *b)
    }

    fn channels(&self, x: &Var) -> usize {
        self.tape.value(*x).shape().c
    }
}

struct ShapeExec {
    trace: Vec<(usize, Shape, Shape)>,
}

impl<'n, E: Element> Executor<'n, E> for ShapeExec {
    type Value = Shape;

    fn conv(&mut self, x: &Shape, layer: &'n ConvParams<E>, kind: ConvKind) -> Result<Shape> {
        let out = match kind {
            ConvKind::Forward => ops::conv2d_shape(*x, layer)?,
            ConvKind::Transposed => ops::conv2d_transpose_shape(*x, layer)?,
        };
        self.trace.push((layer as *const ConvParams<E> as usize, *x, out));
        Ok(out)
    }

    fn pixel_shuffle(&mut self, x: &Shape, scale: usize) -> Result<Shape> {
        ops::pixel_shuffle_shape(*x, scale)
    }

    fn concat(&mut self, parts: &[&Shape]) -> Result<Shape> {
        let parts: Vec<Shape> = parts.iter().map(|s| **s).collect();
        ops::concat_shape(&parts)
    }

    fn relu(&mut self, x: &Shape) -> Result<Shape> {
        Ok(*x)
    }

    fn add(&mut self, a: &Shape, b: &Shape) -> Result<Shape> {
        if a != b {
            return Err(Error::shape("add", format!("{a} vs {b}")));
        }
        Ok(*a)
    }

    fn channels(&self, x: &Shape) -> usize {
        x.c
    }
}

/// H_b = C_b + L_b⁰ for one intra-dense block.
pub fn intra_block_forward<'n, E: Element, X: Executor<'n, E>>(
    exec: &mut X,
    block: &'n IntraDenseBlock<E>,
    input: &X::Value,
) -> Result<X::Value> {
    let l0 = exec.conv(input, &block.input_compression, ConvKind::Forward)?;
    let mut features = vec![l0];
    for layer in &block.dense_layers {
        let stacked = {
            let refs: Vec<&X::Value> = features.iter().collect();
            exec.concat(&refs)?
        };
        let y = exec.conv(&stacked, layer, ConvKind::Forward)?;
        features.push(exec.relu(&y)?);
    }
    let stacked = {
        let refs: Vec<&X::Value> = features.iter().collect();
        exec.concat(&refs)?
    };
    let compressed = exec.conv(&stacked, &block.output_compression, ConvKind::Forward)?;
    exec.add(&compressed, &features[0])
}

/// G = global_compression([H_1 … H_B]) + L0.
pub fn inter_forward<'n, E: Element, X: Executor<'n, E>>(
    exec: &mut X,
    net: &'n Network<E>,
    l0: &X::Value,
) -> Result<X::Value> {
    let cfg = net.config;
    let mut outputs: Vec<X::Value> = Vec::with_capacity(net.blocks.len());
    for (b, block) in net.blocks.iter().enumerate() {
        let h = if b == 0 {
            intra_block_forward(exec, block, l0)?
        } else {
            match cfg.variant {
                Variant::WoInter | Variant::WoComp => intra_block_forward(exec, block, &outputs[b - 1])?,
                Variant::Dbdn | Variant::DbdnPlus => {
                    let mut refs: Vec<&X::Value> = Vec::with_capacity(b + 1);
                    if cfg.l0_in_every_block {
                        refs.push(l0);
                    }
                    refs.extend(outputs.iter());
                    let input = exec.concat(&refs)?;
                    intra_block_forward(exec, block, &input)?
                }
            }
        };
        outputs.push(h);
    }
    let all = {
        let refs: Vec<&X::Value> = outputs.iter().collect();
        exec.concat(&refs)?
    };
    let t = exec.conv(&all, &net.global_compression, ConvKind::Forward)?;
    exec.add(&t, l0)
}

pub fn upsample<'n, E: Element, X: Executor<'n, E>>(
    exec: &mut X,
    upsampler: &'n Upsampler<E>,
    g: X::Value,
) -> Result<X::Value> {
    match upsampler {
        Upsampler::Deconv(stages) => {
            let mut x = g;
            for stage in stages {
                x = exec.conv(&x, stage, ConvKind::Transposed)?;
            }
            Ok(x)
        }
        Upsampler::SubPixel { conv, scale } => {
            let y = exec.conv(&g, conv, ConvKind::Forward)?;
            exec.pixel_shuffle(&y, *scale)
        }
    }
}

/// I_SR = reconstruction(upsample(inter(extraction(I_LR)))). The output is
/// not clamped.
pub fn run_network<'n, E: Element, X: Executor<'n, E>>(
    net: &'n Network<E>,
    exec: &mut X,
    input: X::Value,
) -> Result<X::Value> {
    let c = exec.channels(&input);
    if c != 3 {
        return Err(Error::shape("forward", format!("network input must have 3 channels, got {c}")));
    }
    let l0 = exec.conv(&input, &net.extraction, ConvKind::Forward)?;
    let g = inter_forward(exec, net, &l0)?;
    let up = upsample(exec, &net.upsampler, g)?;
    exec.conv(&up, &net.reconstruction, ConvKind::Forward)
}
