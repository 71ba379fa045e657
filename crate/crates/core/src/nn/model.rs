//! The region-guided attention network.
//!
//! ```text
//! x ─ enc1 ─ enc2 ─ enc3 ─ bottleneck
//!      │S1    │S2    │S3        │ b
//!      │      │      └──── dec1 ┘ ──────────────┐
//!      │      └─────────── dec2 ─┬─ partial dec  │
//!      └────────────────── dec3  │   dec_par ─ IAA1(dec1) ─ IAA2(dec2) ─ IAA3(dec3) ─ head ─ mask
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::nn::config::{ConvKind, ModelConfig};
use crate::param::{BnId, ParamId, ParamStore};
use crate::tensor::ops::{self, BatchStats};
use crate::tensor::{Scalar, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;
/// Weight of each auxiliary refinement loss under deep supervision.
pub const AUX_LOSS_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
struct ConvUnit {
    kind: ConvKind,
    depthwise: Option<ParamId>,
    weight: ParamId,
    gamma: ParamId,
    beta: ParamId,
    bn: BnId,
}

#[derive(Debug, Clone)]
struct ConvBlock {
    in_channels: usize,
    units: [ConvUnit; 2],
}

#[derive(Debug, Clone)]
struct Decoder {
    up_weight: ParamId,
    up_bias: ParamId,
    block: ConvBlock,
}

/// 1×1 convolution to a single channel, with bias.
#[derive(Debug, Clone, Copy)]
struct Head {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    HeNormal { fan_in: usize },
    Ones,
    Zeros,
}

/// Which conv block of the network to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    /// Encoder stage 1..=3.
    Encoder(usize),
    Bottleneck,
    /// Decoder stage 1..=3.
    Decoder(usize),
    PartialDecoder,
}

/// Handles of every intermediate map of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct StageVars {
    pub s: [Var; 3],
    pub p: [Var; 3],
    pub b: Var,
    pub dec: [Var; 3],
    pub dec_par: Option<Var>,
    pub pred1: Option<Var>,
    pub pred2: Option<Var>,
    pub pred_final: Var,
    pub mask: Var,
}

/// Values of every intermediate map of one forward pass.
#[derive(Debug, Clone)]
pub struct StageActivations<T: Scalar = f32> {
    pub s1: Tensor<T>,
    pub s2: Tensor<T>,
    pub s3: Tensor<T>,
    pub p1: Tensor<T>,
    pub p2: Tensor<T>,
    pub p3: Tensor<T>,
    pub b: Tensor<T>,
    pub dec1: Tensor<T>,
    pub dec2: Tensor<T>,
    pub dec3: Tensor<T>,
    pub dec_par: Option<Tensor<T>>,
    pub pred1: Option<Tensor<T>>,
    pub pred2: Option<Tensor<T>>,
    pub pred_final: Tensor<T>,
    pub mask: Tensor<T>,
}

impl<T: Scalar> StageActivations<T> {
    pub fn from_tape(tape: &Tape<T>, v: &StageVars) -> Self {
        let get = |var: Var| tape.value(var).clone();
        StageActivations {
            s1: get(v.s[0]),
            s2: get(v.s[1]),
            s3: get(v.s[2]),
            p1: get(v.p[0]),
            p2: get(v.p[1]),
            p3: get(v.p[2]),
            b: get(v.b),
            dec1: get(v.dec[0]),
            dec2: get(v.dec[1]),
            dec3: get(v.dec[2]),
            dec_par: v.dec_par.map(get),
            pred1: v.pred1.map(get),
            pred2: v.pred2.map(get),
            pred_final: get(v.pred_final),
            mask: get(v.mask),
        }
    }
}

/// Batch statistics gathered during a train-mode pass, not yet folded into
/// the running averages.
#[derive(Debug, Clone, Default)]
pub struct BnUpdates(Vec<(BnId, BatchStats)>);

impl BnUpdates {
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// The network: its configuration, parameter registry and layer wiring.
#[derive(Debug, Clone)]
pub struct RgaNet<T: Scalar = f32> {
    config: ModelConfig,
    store: ParamStore<T>,
    init: Vec<(ParamId, Init)>,
    encoders: [ConvBlock; 3],
    bottleneck: ConvBlock,
    decoders: [Decoder; 3],
    partial: Option<(ConvBlock, Head)>,
    coarse: Option<Head>,
    refine: Option<[Head; 3]>,
    plain_out: Option<Head>,
    head: Head,
}

struct Builder<T: Scalar> {
    store: ParamStore<T>,
    init: Vec<(ParamId, Init)>,
}

impl<T: Scalar> Builder<T> {
    fn param(&mut self, name: String, shape: &[usize], init: Init) -> Result<ParamId> {
        let id = self.store.register(name, Tensor::zeros(shape))?;
        self.init.push((id, init));
        Ok(id)
    }

    fn conv_unit(&mut self, prefix: &str, idx: usize, kind: ConvKind, cin: usize, cout: usize) -> Result<ConvUnit> {
        let (depthwise, weight) = match kind {
            ConvKind::Separable => {
                let dw = self.param(format!("{prefix}.dw{idx}.kernel"), &[cin, 1, 3, 3], Init::HeNormal { fan_in: 9 })?;
                let pw = self.param(format!("{prefix}.pw{idx}.weight"), &[cout, cin, 1, 1], Init::HeNormal { fan_in: cin })?;
                (Some(dw), pw)
            }
            ConvKind::Standard => {
                let w = self.param(
                    format!("{prefix}.conv{idx}.weight"),
                    &[cout, cin, 3, 3],
                    Init::HeNormal { fan_in: cin * 9 },
                )?;
                (None, w)
            }
        };
        let gamma = self.param(format!("{prefix}.bn{idx}.gamma"), &[cout], Init::Ones)?;
        let beta = self.param(format!("{prefix}.bn{idx}.beta"), &[cout], Init::Zeros)?;
        let bn = self.store.register_bn(format!("{prefix}.bn{idx}"), cout);
        Ok(ConvUnit {
            kind,
            depthwise,
            weight,
            gamma,
            beta,
            bn,
        })
    }

    fn conv_block(&mut self, prefix: &str, kind: ConvKind, cin: usize, cout: usize) -> Result<ConvBlock> {
        Ok(ConvBlock {
            in_channels: cin,
            units: [
                self.conv_unit(prefix, 1, kind, cin, cout)?,
                self.conv_unit(prefix, 2, kind, cout, cout)?,
            ],
        })
    }

    fn head(&mut self, prefix: &str, cin: usize) -> Result<Head> {
        Ok(Head {
            weight: self.param(format!("{prefix}.weight"), &[1, cin, 1, 1], Init::HeNormal { fan_in: cin })?,
            bias: self.param(format!("{prefix}.bias"), &[1], Init::Zeros)?,
        })
    }
}

impl<T: Scalar> RgaNet<T> {
    /// Builds the network and initializes it from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut net = Self::build(config)?;
        net.init_params(seed);
        Ok(net)
    }

    /// Builds the network with every parameter zero.
    pub fn build(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let [f1, f2, f3, f4] = config.filters;
        let mut b = Builder {
            store: ParamStore::new(),
            init: Vec::new(),
        };
        let enc_kind = config.encoder_conv;
        let dec_kind = config.decoder_conv;
        let encoders = [
            b.conv_block("enc1", enc_kind, config.in_channels, f1)?,
            b.conv_block("enc2", enc_kind, f1, f2)?,
            b.conv_block("enc3", enc_kind, f2, f3)?,
        ];
        let bottleneck = b.conv_block("bottleneck", enc_kind, f3, f4)?;
        let mut decoder = |name: &str, below: usize, skip: usize| -> Result<Decoder> {
            Ok(Decoder {
                up_weight: b.param(format!("{name}.up.weight"), &[below, skip, 2, 2], Init::HeNormal { fan_in: below })?,
                up_bias: b.param(format!("{name}.up.bias"), &[skip], Init::Zeros)?,
                block: b.conv_block(name, dec_kind, 2 * skip, skip)?,
            })
        };
        let decoders = [decoder("dec1", f4, f3)?, decoder("dec2", f3, f2)?, decoder("dec3", f2, f1)?];
        let partial = if config.partial_decoder {
            Some((b.conv_block("pd", dec_kind, f2, f2)?, b.head("pd.head", f2)?))
        } else {
            None
        };
        let coarse = if config.attention && !config.partial_decoder {
            Some(b.head("coarse", f3)?)
        } else {
            None
        };
        let refine = if config.attention {
            Some([b.head("iaa1.proj", f3)?, b.head("iaa2.proj", f2)?, b.head("iaa3.proj", f1)?])
        } else {
            None
        };
        let plain_out = if config.attention { None } else { Some(b.head("out", f1)?) };
        let head = b.head("head", 1)?;
        Ok(RgaNet {
            config,
            store: b.store,
            init: b.init,
            encoders,
            bottleneck,
            decoders,
            partial,
            coarse,
            refine,
            plain_out,
            head,
        })
    }

    /// He-normal (fan-in) kernels, unit BN scale, zero shifts and biases.
    /// Fully determined by `seed`.
    pub fn init_params(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for &(id, init) in &self.init {
            let p = self.store.get_mut(id);
            match init {
                Init::Ones => p.value.fill(T::one()),
                Init::Zeros => p.value.fill(T::zero()),
                Init::HeNormal { fan_in } => {
                    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
                    for v in p.value.data_mut() {
                        *v = T::of(normal.sample(&mut rng));
                    }
                }
            }
        }
        for s in self.store.bn_stats_mut() {
            s.running_mean.iter_mut().for_each(|v| *v = T::zero());
            s.running_var.iter_mut().for_each(|v| *v = T::one());
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.trainable_count()
    }

    /// Same network and weights in another precision.
    pub fn cast<U: Scalar>(&self) -> RgaNet<U> {
        RgaNet {
            config: self.config.clone(),
            store: self.store.cast(),
            init: self.init.clone(),
            encoders: self.encoders.clone(),
            bottleneck: self.bottleneck.clone(),
            decoders: self.decoders.clone(),
            partial: self.partial.clone(),
            coarse: self.coarse,
            refine: self.refine,
            plain_out: self.plain_out,
            head: self.head,
        }
    }

    pub fn session<'a>(&'a self, tape: &'a mut Tape<T>, mode: Mode) -> Session<'a, T> {
        Session {
            net: self,
            tape,
            mode,
            updates: BnUpdates::default(),
        }
    }

    /// Runs the full network on `x` and returns the stage handles plus the
    /// batch statistics to fold in with [`RgaNet::apply_bn_updates`].
    pub fn forward(&self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<(StageVars, BnUpdates)> {
        let mut s = self.session(tape, mode);
        let vars = s.forward(x)?;
        Ok((vars, s.finish()))
    }

    /// Train-mode forward that also updates batch-norm running statistics.
    pub fn forward_train(&mut self, tape: &mut Tape<T>, x: Var) -> Result<StageVars> {
        let (vars, updates) = self.forward(tape, x, Mode::Train)?;
        self.apply_bn_updates(updates);
        Ok(vars)
    }

    pub fn forward_eval(&self, tape: &mut Tape<T>, x: Var) -> Result<StageVars> {
        Ok(self.forward(tape, x, Mode::Eval)?.0)
    }

    /// `running = momentum * running + (1 - momentum) * batch`.
    pub fn apply_bn_updates(&mut self, updates: BnUpdates) {
        for (id, stats) in updates.0 {
            let s = self.store.bn_mut(id);
            for (r, m) in s.running_mean.iter_mut().zip(&stats.mean) {
                *r = T::of(BN_MOMENTUM * r.as_f64() + (1.0 - BN_MOMENTUM) * m);
            }
            for (r, v) in s.running_var.iter_mut().zip(&stats.var) {
                *r = T::of(BN_MOMENTUM * r.as_f64() + (1.0 - BN_MOMENTUM) * v);
            }
        }
    }

    /// Eval-mode probability mask for a batch of images.
    pub fn predict(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.input(images.clone());
        let vars = self.forward_eval(&mut tape, x)?;
        Ok(tape.value(vars.mask).clone())
    }

    pub fn activations(&self, images: &Tensor<T>, mode: Mode) -> Result<StageActivations<T>> {
        let mut tape = Tape::new();
        let x = tape.input(images.clone());
        let (vars, _) = self.forward(&mut tape, x, mode)?;
        Ok(StageActivations::from_tape(&tape, &vars))
    }

    /// Records the training objective: `kind` on the mask, plus auxiliary
    /// terms on the upsampled refinement maps when deep supervision is on.
    pub fn record_loss(&self, tape: &mut Tape<T>, vars: &StageVars, target: &Tensor<T>, kind: LossKind) -> Result<Var> {
        tape.set_scope("loss");
        let mut total = kind.record(tape, vars.mask, target)?;
        if self.config.deep_supervision {
            let [_, _, h, w] = target.dims4()?;
            for pred in [vars.pred1, vars.pred2].into_iter().flatten() {
                let up = tape.resize_bilinear(pred, h, w)?;
                let prob = tape.sigmoid(up);
                let aux = kind.record(tape, prob, target)?;
                let aux = tape.scale(aux, T::of(AUX_LOSS_WEIGHT));
                total = tape.add(total, aux)?;
            }
        }
        Ok(total)
    }

    /// The objective of [`RgaNet::record_loss`] evaluated in f64 from the
    /// recorded maps, free of the rounding of the tape's scalar nodes.
    pub fn loss_value(&self, tape: &Tape<T>, vars: &StageVars, target: &Tensor<T>, kind: LossKind) -> Result<f64> {
        let mut total = kind.evaluate(tape.value(vars.mask), target)?;
        if self.config.deep_supervision {
            let [_, _, h, w] = target.dims4()?;
            for pred in [vars.pred1, vars.pred2].into_iter().flatten() {
                let prob = ops::sigmoid(&ops::resize_bilinear(tape.value(pred), h, w)?);
                total += AUX_LOSS_WEIGHT * kind.evaluate(&prob, target)?;
            }
        }
        Ok(total)
    }

    /// Per-parameter name, shape and element count in registration order.
    pub fn param_table(&self) -> Vec<(String, Vec<usize>, usize)> {
        self.store
            .params()
            .iter()
            .map(|p| (p.name.clone(), p.value.shape().to_vec(), p.numel()))
            .collect()
    }
}

/// Trainable-parameter count of the architecture described by `config`.
pub fn param_count(config: &ModelConfig) -> Result<usize> {
    Ok(RgaNet::<f32>::build(config.clone())?.param_count())
}

/// Freshly initialized parameter registry for `config`.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ParamStore<f32>> {
    Ok(RgaNet::<f32>::new(config.clone(), seed)?.into_params())
}

/// One forward pass in progress: runs individual blocks on a tape.
pub struct Session<'a, T: Scalar> {
    net: &'a RgaNet<T>,
    tape: &'a mut Tape<T>,
    mode: Mode,
    updates: BnUpdates,
}

impl<'a, T: Scalar> Session<'a, T> {
    pub fn tape(&mut self) -> &mut Tape<T> {
        self.tape
    }

    pub fn finish(self) -> BnUpdates {
        self.updates
    }

    fn p(&mut self, id: ParamId) -> Var {
        self.tape.param(&self.net.store, id)
    }

    fn conv_unit(&mut self, unit: &ConvUnit, x: Var) -> Result<Var> {
        let y = match unit.kind {
            ConvKind::Separable => {
                let k = self.p(unit.depthwise.expect("separable unit has a depthwise kernel"));
                let d = self.tape.dwconv3x3(x, k)?;
                let w = self.p(unit.weight);
                self.tape.pwconv(d, w, None)?
            }
            ConvKind::Standard => {
                let w = self.p(unit.weight);
                self.tape.conv3x3(x, w)?
            }
        };
        let gamma = self.p(unit.gamma);
        let beta = self.p(unit.beta);
        let y = match self.mode {
            Mode::Train => {
                let (y, stats) = self.tape.batchnorm_train(y, gamma, beta, BN_EPS)?;
                self.updates.0.push((unit.bn, stats));
                y
            }
            Mode::Eval => {
                let s = self.net.store.bn(unit.bn);
                self.tape
                    .batchnorm_eval(y, gamma, beta, &s.running_mean, &s.running_var, BN_EPS)?
            }
        };
        Ok(self.tape.relu(y))
    }

    fn block(&self, which: Block) -> Result<&'a ConvBlock> {
        let net = self.net;
        let stage = |i: usize| {
            if (1..=3).contains(&i) {
                Ok(i - 1)
            } else {
                Err(Error::invalid(format!("stage index {i} out of range 1..=3")))
            }
        };
        Ok(match which {
            Block::Encoder(i) => &net.encoders[stage(i)?],
            Block::Bottleneck => &net.bottleneck,
            Block::Decoder(i) => &net.decoders[stage(i)?].block,
            Block::PartialDecoder => {
                &net.partial
                    .as_ref()
                    .ok_or_else(|| Error::invalid("partial decoder is disabled"))?
                    .0
            }
        })
    }

    /// Two rounds of [3×3 conv → batch norm → ReLU].
    pub fn conv_block(&mut self, which: Block, x: Var) -> Result<Var> {
        let block = self.block(which)?;
        let c = self.tape.value(x).dims4()?[1];
        if c != block.in_channels {
            return Err(Error::shape(format!(
                "{which:?} expects {} input channels, got {c}",
                block.in_channels
            )));
        }
        let y = self.conv_unit(&block.units[0], x)?;
        self.conv_unit(&block.units[1], y)
    }

    /// Returns the skip map `S` and its 2×2 max-pooled version `p`.
    pub fn encoder_block(&mut self, stage: usize, x: Var) -> Result<(Var, Var)> {
        self.tape.set_scope(format!("enc{stage}"));
        let s = self.conv_block(Block::Encoder(stage), x)?;
        let p = self.tape.maxpool2x2(s)?;
        Ok((s, p))
    }

    pub fn bottleneck(&mut self, p3: Var) -> Result<Var> {
        self.tape.set_scope("bottleneck");
        self.conv_block(Block::Bottleneck, p3)
    }

    /// Upsamples `below` by transposed convolution, concatenates after `skip`
    /// and runs the stage's conv block.
    pub fn decoder_block(&mut self, stage: usize, below: Var, skip: Var) -> Result<Var> {
        self.tape.set_scope(format!("dec{stage}"));
        let dec = self
            .net
            .decoders
            .get(stage.wrapping_sub(1))
            .ok_or_else(|| Error::invalid(format!("decoder stage {stage} out of range 1..=3")))?;
        let (w, b) = (self.p(dec.up_weight), self.p(dec.up_bias));
        let up = self.tape.conv_transpose2x2(below, w, Some(b))?;
        let (us, ss) = (self.tape.value(up).shape().to_vec(), self.tape.value(skip).shape().to_vec());
        if us[0] != ss[0] || us[2..] != ss[2..] {
            return Err(Error::shape(format!(
                "decoder {stage}: upsampled map {us:?} does not align with skip {ss:?}"
            )));
        }
        let cat = self.tape.concat_channels(skip, up)?;
        self.conv_block(Block::Decoder(stage), cat)
    }

    /// Coarse single-channel logit map from `dec2`.
    pub fn partial_decoder(&mut self, dec2: Var) -> Result<Var> {
        self.tape.set_scope("pd");
        let (_, head) = *self
            .net
            .partial
            .as_ref()
            .ok_or_else(|| Error::invalid("partial decoder is disabled"))?;
        let y = self.conv_block(Block::PartialDecoder, dec2)?;
        self.head_1x1(head, y)
    }

    fn head_1x1(&mut self, head: Head, x: Var) -> Result<Var> {
        let (w, b) = (self.p(head.weight), self.p(head.bias));
        self.tape.pwconv(x, w, Some(b))
    }

    /// Inverse-addition attention: gate `features` by `1 - sigmoid(P')`,
    /// project to one channel and add `P'`, where `P'` is `pred_in` resized
    /// to the feature resolution.
    pub fn iaa_block(&mut self, stage: usize, features: Var, pred_in: Var) -> Result<Var> {
        self.tape.set_scope(format!("iaa{stage}"));
        let heads = self
            .net
            .refine
            .ok_or_else(|| Error::invalid("attention stages are disabled"))?;
        let head = *heads
            .get(stage.wrapping_sub(1))
            .ok_or_else(|| Error::invalid(format!("attention stage {stage} out of range 1..=3")))?;
        let [_, pc, _, _] = self.tape.value(pred_in).dims4()?;
        if pc != 1 {
            return Err(Error::shape(format!(
                "attention input prediction must have 1 channel, got {pc}"
            )));
        }
        let [_, _, h, w] = self.tape.value(features).dims4()?;
        let resized = self.tape.resize_bilinear(pred_in, h, w)?;
        let prob = self.tape.sigmoid(resized);
        let gate = self.tape.one_minus(prob);
        let gated = self.tape.hadamard_broadcast(features, gate)?;
        let projected = self.head_1x1(head, gated)?;
        self.tape.add(projected, resized)
    }

    /// 1×1 convolution followed by sigmoid.
    pub fn seg_head(&mut self, pred_final: Var) -> Result<Var> {
        self.tape.set_scope("head");
        let c = self.tape.value(pred_final).dims4()?[1];
        if c != 1 {
            return Err(Error::shape(format!("segmentation head expects 1 channel, got {c}")));
        }
        let logits = self.head_1x1(self.net.head, pred_final)?;
        Ok(self.tape.sigmoid(logits))
    }

    pub fn forward(&mut self, x: Var) -> Result<StageVars> {
        let [_, c, h, w] = self.tape.value(x).dims4()?;
        if h % 8 != 0 || w % 8 != 0 {
            return Err(Error::shape(format!(
                "input is {h}x{w}; height and width must be divisible by 8 (three 2x2 poolings)"
            )));
        }
        if c != self.net.config.in_channels {
            return Err(Error::shape(format!(
                "input has {c} channels, model expects {}",
                self.net.config.in_channels
            )));
        }
        let (s1, p1) = self.encoder_block(1, x)?;
        let (s2, p2) = self.encoder_block(2, p1)?;
        let (s3, p3) = self.encoder_block(3, p2)?;
        let b = self.bottleneck(p3)?;
        let dec1 = self.decoder_block(1, b, s3)?;
        let dec2 = self.decoder_block(2, dec1, s2)?;
        let dec3 = self.decoder_block(3, dec2, s1)?;

        let (dec_par, pred1, pred2, pred_final) = if self.net.config.attention {
            let (dec_par, initial) = if self.net.partial.is_some() {
                let d = self.partial_decoder(dec2)?;
                (Some(d), d)
            } else {
                self.tape.set_scope("coarse");
                let coarse = self.net.coarse.expect("coarse head exists without partial decoder");
                (None, self.head_1x1(coarse, dec1)?)
            };
            let pred1 = self.iaa_block(1, dec1, initial)?;
            let pred2 = self.iaa_block(2, dec2, pred1)?;
            let pred_final = self.iaa_block(3, dec3, pred2)?;
            (dec_par, Some(pred1), Some(pred2), pred_final)
        } else {
            self.tape.set_scope("out");
            let out = self.net.plain_out.expect("plain output head exists without attention");
            (None, None, None, self.head_1x1(out, dec3)?)
        };
        let mask = self.seg_head(pred_final)?;
        self.tape.set_scope("");
        Ok(StageVars {
            s: [s1, s2, s3],
            p: [p1, p2, p3],
            b,
            dec: [dec1, dec2, dec3],
            dec_par,
            pred1,
            pred2,
            pred_final,
            mask,
        })
    }
}
