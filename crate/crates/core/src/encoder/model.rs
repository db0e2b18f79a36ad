//! Conformer audio encoder: convolutional subsampling, sinusoidal positions,
//! macaron conformer blocks, and a linear phoneme classifier with a blank class.

use ndarray::Array2;
use rand::Rng;

use super::config::EncoderConfig;
use crate::error::{CedError, Result};
use crate::nn::{ParamId, ParamStore, Tape, Var};
use crate::phonemes::NUM_CLASSES;

#[derive(Debug, Clone)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            w: store.glorot(format!("{name}.w"), fan_in, fan_out, rng),
            b: store.zeros(format!("{name}.b"), 1, fan_out),
        }
    }

    fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        let y = tape.matmul(x, w);
        tape.add_row(y, b)
    }
}

#[derive(Debug, Clone)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

impl Norm {
    fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gain: store.ones(format!("{name}.gain"), 1, dim),
            bias: store.zeros(format!("{name}.bias"), 1, dim),
        }
    }

    fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        tape.layer_norm(x, g, b)
    }
}

#[derive(Debug, Clone)]
struct FeedForward {
    norm: Norm,
    up: Linear,
    down: Linear,
}

impl FeedForward {
    fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            norm: Norm::new(store, &format!("{name}.norm"), dim),
            up: Linear::new(store, &format!("{name}.up"), dim, hidden, rng),
            down: Linear::new(store, &format!("{name}.down"), hidden, dim, rng),
        }
    }
}

#[derive(Debug, Clone)]
struct SelfAttention {
    norm: Norm,
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
}

#[derive(Debug, Clone)]
struct ConvModule {
    norm: Norm,
    pointwise_in: Linear,
    depthwise_w: ParamId,
    depthwise_b: ParamId,
    // LayerNorm stands in for batch norm: utterances are processed one at a time.
    mid_norm: Norm,
    pointwise_out: Linear,
}

#[derive(Debug, Clone)]
struct Block {
    ff1: FeedForward,
    attn: SelfAttention,
    conv: ConvModule,
    ff2: FeedForward,
    final_norm: Norm,
}

/// Randomness used by dropout during training; `None` means evaluation mode.
pub type DropoutRng<'a> = Option<&'a mut dyn rand::RngCore>;

/// Parameter layout and forward pass of the conformer.
#[derive(Debug, Clone)]
pub struct Conformer {
    config: EncoderConfig,
    subsample: Vec<Linear>,
    input_proj: Linear,
    blocks: Vec<Block>,
    classifier: Linear,
}

/// Outputs of one forward pass.
pub struct EncoderOutput {
    pub embedding: Var,
    pub logits: Var,
}

impl Conformer {
    /// Builds the layout and registers freshly initialized parameters.
    pub fn init(config: &EncoderConfig, rng: &mut impl Rng) -> Result<(Self, ParamStore)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let d = config.dim;
        let k = 3;
        let mut subsample = Vec::new();
        let mut channels = config.input_dim;
        for i in 0..config.subsampling_layers() {
            subsample.push(Linear::new(
                &mut store,
                &format!("subsample.{i}"),
                k * channels,
                d,
                rng,
            ));
            channels = d;
        }
        let input_proj = Linear::new(&mut store, "input_proj", channels, d, rng);
        let hidden = d * config.ffn_expansion;
        let mut blocks = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = format!("block.{l}");
            let ff1 = FeedForward::new(&mut store, &format!("{p}.ff1"), d, hidden, rng);
            let attn = SelfAttention {
                norm: Norm::new(&mut store, &format!("{p}.attn.norm"), d),
                q: Linear::new(&mut store, &format!("{p}.attn.q"), d, d, rng),
                k: Linear::new(&mut store, &format!("{p}.attn.k"), d, d, rng),
                v: Linear::new(&mut store, &format!("{p}.attn.v"), d, d, rng),
                out: Linear::new(&mut store, &format!("{p}.attn.out"), d, d, rng),
            };
            let conv = ConvModule {
                norm: Norm::new(&mut store, &format!("{p}.conv.norm"), d),
                pointwise_in: Linear::new(&mut store, &format!("{p}.conv.pw_in"), d, 2 * d, rng),
                depthwise_w: store.glorot(format!("{p}.conv.dw.w"), config.conv_kernel, d, rng),
                depthwise_b: store.zeros(format!("{p}.conv.dw.b"), 1, d),
                mid_norm: Norm::new(&mut store, &format!("{p}.conv.mid_norm"), d),
                pointwise_out: Linear::new(&mut store, &format!("{p}.conv.pw_out"), d, d, rng),
            };
            let ff2 = FeedForward::new(&mut store, &format!("{p}.ff2"), d, hidden, rng);
            let final_norm = Norm::new(&mut store, &format!("{p}.norm"), d);
            blocks.push(Block {
                ff1,
                attn,
                conv,
                ff2,
                final_norm,
            });
        }
        let classifier = Linear::new(&mut store, "classifier", d, NUM_CLASSES, rng);
        Ok((
            Self {
                config: config.clone(),
                subsample,
                input_proj,
                blocks,
                classifier,
            },
            store,
        ))
    }

    /// Rebuilds the layout for `config` and checks that `store` matches it.
    pub fn from_store(config: &EncoderConfig, store: &ParamStore) -> Result<Self> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let (model, reference) = Self::init(config, &mut rng)?;
        reference.check_layout(store)?;
        Ok(model)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        features: Array2<f64>,
        mut dropout: DropoutRng<'_>,
    ) -> Result<EncoderOutput> {
        if features.ncols() != self.config.input_dim {
            return Err(CedError::IncompatibleCheckpoint(format!(
                "encoder expects {} feature channels, got {}",
                self.config.input_dim,
                features.ncols()
            )));
        }
        if features.nrows() == 0 {
            return Err(CedError::InvalidInput("no feature frames".into()));
        }
        let p = self.config.dropout;
        let mut x = tape.input(features);
        for conv in &self.subsample {
            let u = tape.unfold(x, 3, 2, 1);
            let y = conv.forward(tape, u);
            x = tape.relu(y);
        }
        x = self.input_proj.forward(tape, x);
        let n = tape.value(x).nrows();
        let pe = tape.input(positional_encoding(n, self.config.dim));
        x = tape.add(x, pe);
        x = apply_dropout(tape, x, p, &mut dropout);

        for block in &self.blocks {
            let h = feed_forward(tape, &block.ff1, x, p, &mut dropout);
            let h = tape.scale(h, 0.5);
            x = tape.add(x, h);
            let h = self.attention(tape, &block.attn, x);
            let h = apply_dropout(tape, h, p, &mut dropout);
            x = tape.add(x, h);
            let h = conv_module(tape, &block.conv, x);
            let h = apply_dropout(tape, h, p, &mut dropout);
            x = tape.add(x, h);
            let h = feed_forward(tape, &block.ff2, x, p, &mut dropout);
            let h = tape.scale(h, 0.5);
            x = tape.add(x, h);
            x = block.final_norm.forward(tape, x);
        }
        let logits = self.classifier.forward(tape, x);
        Ok(EncoderOutput {
            embedding: x,
            logits,
        })
    }

    /// Applies only the final linear layer to precomputed embeddings.
    pub fn classify(&self, tape: &mut Tape, embedding: Var) -> Var {
        self.classifier.forward(tape, embedding)
    }

    fn attention(&self, tape: &mut Tape, attn: &SelfAttention, x: Var) -> Var {
        let heads = self.config.attention_heads;
        let dk = self.config.dim / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let h = attn.norm.forward(tape, x);
        let q = attn.q.forward(tape, h);
        let k = attn.k.forward(tape, h);
        let v = attn.v.forward(tape, h);
        let mut outs = Vec::with_capacity(heads);
        for i in 0..heads {
            let qh = tape.slice_cols(q, i * dk, dk);
            let kh = tape.slice_cols(k, i * dk, dk);
            let vh = tape.slice_cols(v, i * dk, dk);
            let kt = tape.transpose(kh);
            let scores = tape.matmul(qh, kt);
            let scores = tape.scale(scores, scale);
            let weights = tape.softmax_rows(scores);
            outs.push(tape.matmul(weights, vh));
        }
        let merged = if heads == 1 {
            outs[0]
        } else {
            tape.concat_cols(&outs)
        };
        attn.out.forward(tape, merged)
    }
}

fn feed_forward(
    tape: &mut Tape,
    ff: &FeedForward,
    x: Var,
    p: f64,
    dropout: &mut DropoutRng<'_>,
) -> Var {
    let h = ff.norm.forward(tape, x);
    let h = ff.up.forward(tape, h);
    let h = tape.swish(h);
    let h = apply_dropout(tape, h, p, dropout);
    let h = ff.down.forward(tape, h);
    apply_dropout(tape, h, p, dropout)
}

fn conv_module(tape: &mut Tape, conv: &ConvModule, x: Var) -> Var {
    let h = conv.norm.forward(tape, x);
    let h = conv.pointwise_in.forward(tape, h);
    let h = tape.glu(h);
    let w = tape.param(conv.depthwise_w);
    let b = tape.param(conv.depthwise_b);
    let h = tape.depthwise_conv(h, w);
    let h = tape.add_row(h, b);
    let h = conv.mid_norm.forward(tape, h);
    let h = tape.swish(h);
    conv.pointwise_out.forward(tape, h)
}

fn apply_dropout(tape: &mut Tape, x: Var, p: f64, rng: &mut DropoutRng<'_>) -> Var {
    let Some(rng) = rng.as_deref_mut() else {
        return x;
    };
    if p <= 0.0 {
        return x;
    }
    let keep = 1.0 - p;
    let dim = tape.value(x).dim();
    let mask = Array2::from_shape_fn(dim, |_| {
        if rng.random::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    });
    let m = tape.input(mask);
    tape.mul(x, m)
}

/// Standard sinusoidal position table, `n × dim`.
pub fn positional_encoding(n: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, dim), |(pos, i)| {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10_000f64.powf(2.0 * pair / dim as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}
