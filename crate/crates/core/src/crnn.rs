//! CRNN sound event detection models over the dynamic-convolution family.
//!
//! A model is a 7-layer (4-layer in the toy preset) conv stack — each layer a
//! set of static/dynamic branches concatenated along channels, then BN, ReLU,
//! non-overlapping pooling and dropout — followed by a bidirectional GRU and
//! two heads: a per-frame sigmoid (strong) and a class-wise softmax attention
//! over time that aggregates the strong probabilities into a clip-level
//! (weak) prediction.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynconv::{
    dfd_forward, freq_attention, AttnModule, AttnRecorder, BasisKernelSet,
    TapEnable, TapParams, TapPath, TimePooling,
};
use crate::error::{config_err, Error, Result};
use crate::ops::{
    batch_norm, bigru, concat_channels, conv2d, dropout, linear3d, pool2d, relu, sigmoid,
    softmax_axis, sum_time3, to_sequence, truncate_time, BiGruParams, BnMode, BnStats, Conv2dCfg,
    GruDirParams, Padding, PoolMode,
};
use crate::params::{ParamId, ParamStore};
use crate::rng::substream;
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchKind {
    Static,
    Dynamic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Avg,
    Tap,
}

fn default_k() -> usize {
    4
}

fn default_pooling() -> PoolKind {
    PoolKind::Avg
}

/// One branch of a conv layer. `out_fraction` is relative to the layer's
/// base channel count, e.g. (1, 8) of base 32 yields 4 output channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchCfg {
    pub kind: BranchKind,
    pub out_fraction: (usize, usize),
    #[serde(default = "default_k")]
    pub k: usize,
    /// (dT, dF) per basis kernel; empty means all (1, 1).
    #[serde(default)]
    pub dilations: Vec<(usize, usize)>,
    #[serde(default = "default_pooling")]
    pub pooling: PoolKind,
}

impl BranchCfg {
    pub fn stat(num: usize, den: usize) -> Self {
        BranchCfg {
            kind: BranchKind::Static,
            out_fraction: (num, den),
            k: 1,
            dilations: Vec::new(),
            pooling: PoolKind::Avg,
        }
    }

    pub fn dynamic(num: usize, den: usize, k: usize, dilations: Vec<(usize, usize)>, pooling: PoolKind) -> Self {
        let dilations = if dilations.is_empty() { vec![(1, 1); k] } else { dilations };
        BranchCfg { kind: BranchKind::Dynamic, out_fraction: (num, den), k, dilations, pooling }
    }

    fn out_channels(&self, base: usize) -> Result<usize> {
        let (num, den) = self.out_fraction;
        if den == 0 || num == 0 {
            return Err(config_err("branch fraction must have positive numerator and denominator"));
        }
        if base * num % den != 0 {
            return Err(config_err(format!(
                "branch fraction {}/{} of {} base channels is not an integer",
                num, den, base
            )));
        }
        Ok(base * num / den)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerCfg {
    pub branches: Vec<BranchCfg>,
    pub freq_pool: usize,
    pub time_pool: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_classes: usize,
    pub n_mels: usize,
    pub base_channels: Vec<usize>,
    pub layers: Vec<LayerCfg>,
    pub gru_hidden: usize,
    pub gru_layers: usize,
    pub dropout: f64,
    /// Attention squeeze width is max(C / squeeze_ratio, K).
    pub squeeze_ratio: usize,
    /// Hidden width of each temporal-attention-pooling path is C * this.
    pub tap_hidden_ratio: usize,
    pub temperature: f64,
    /// Plain 3×3 conv 1→16 + BN + ReLU ahead of layer 1; required when
    /// layer 1 itself is dynamic.
    pub pre_conv: bool,
}

pub const PRE_CONV_CHANNELS: usize = 16;

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() || self.layers.len() != self.base_channels.len() {
            return Err(config_err(format!(
                "{} layers vs {} base channel entries",
                self.layers.len(),
                self.base_channels.len()
            )));
        }
        if self.n_classes == 0 || self.gru_hidden == 0 || self.gru_layers == 0 {
            return Err(config_err("n_classes, gru_hidden and gru_layers must be positive"));
        }
        if self.squeeze_ratio == 0 || self.tap_hidden_ratio == 0 {
            return Err(config_err("squeeze_ratio and tap_hidden_ratio must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(config_err(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        let mut f = self.n_mels;
        for (li, layer) in self.layers.iter().enumerate() {
            if layer.branches.is_empty() {
                return Err(config_err(format!("layer {} has no branches", li + 1)));
            }
            if layer.freq_pool == 0 || layer.time_pool == 0 {
                return Err(config_err(format!("layer {} pooling extents must be >= 1", li + 1)));
            }
            if f % layer.freq_pool != 0 {
                return Err(config_err(format!(
                    "layer {}: frequency extent {} not divisible by pool {}",
                    li + 1,
                    f,
                    layer.freq_pool
                )));
            }
            f /= layer.freq_pool;
            for br in &layer.branches {
                br.out_channels(self.base_channels[li])?;
                if br.kind == BranchKind::Dynamic {
                    if li == 0 && !self.pre_conv {
                        return Err(config_err(
                            "rule violated: layer 1 must be a plain convolution unless the pre-convolution module is enabled",
                        ));
                    }
                    if br.k == 0 || br.dilations.len() != br.k {
                        return Err(config_err(format!(
                            "layer {}: dynamic branch needs K >= 1 dilation pairs, got {} for K={}",
                            li + 1,
                            br.dilations.len(),
                            br.k
                        )));
                    }
                    if br.dilations.iter().any(|&(dt, df)| dt == 0 || df == 0) {
                        return Err(config_err(format!("layer {}: dilations must be >= 1", li + 1)));
                    }
                    let last = li == self.layers.len() - 1;
                    if last && br.dilations.iter().any(|&d| d != (1, 1)) {
                        return Err(config_err(
                            "rule violated: dilated branches are disallowed at the final conv layer (its frequency extent is too small)",
                        ));
                    }
                } else if li == 0 && layer.branches.len() > 1 && !self.pre_conv {
                    return Err(config_err(
                        "rule violated: layer 1 must be a plain convolution unless the pre-convolution module is enabled",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Total output channels of a layer.
    pub fn layer_out_channels(&self, li: usize) -> Result<usize> {
        self.layers[li]
            .branches
            .iter()
            .map(|b| b.out_channels(self.base_channels[li]))
            .sum()
    }

    pub fn total_time_pool(&self) -> usize {
        self.layers.iter().map(|l| l.time_pool).product()
    }

    fn full_shell(n_classes: usize) -> ModelConfig {
        ModelConfig {
            n_classes,
            n_mels: 128,
            base_channels: vec![32, 64, 128, 256, 256, 256, 256],
            layers: Vec::new(),
            gru_hidden: 256,
            gru_layers: 2,
            dropout: 0.2,
            squeeze_ratio: 4,
            tap_hidden_ratio: 2,
            temperature: 1.0,
            pre_conv: false,
        }
    }

    fn toy_shell(n_classes: usize) -> ModelConfig {
        ModelConfig {
            n_classes,
            n_mels: 64,
            base_channels: vec![16, 32, 64, 64],
            layers: Vec::new(),
            gru_hidden: 64,
            gru_layers: 1,
            dropout: 0.2,
            squeeze_ratio: 4,
            tap_hidden_ratio: 2,
            temperature: 1.0,
            pre_conv: false,
        }
    }

    fn pool_schedule(n_layers: usize, li: usize) -> (usize, usize) {
        // frequency halved everywhere except the last layer; time halved in
        // the first two layers only
        let fp = if li + 1 < n_layers || n_layers <= 4 { 2 } else { 1 };
        let tp = if li < 2 { 2 } else { 1 };
        (fp, tp)
    }

    fn assemble(mut shell: ModelConfig, mk: impl Fn(usize, usize) -> Vec<BranchCfg>) -> ModelConfig {
        let n = shell.base_channels.len();
        shell.layers = (0..n)
            .map(|li| {
                let (freq_pool, time_pool) = Self::pool_schedule(n, li);
                LayerCfg { branches: mk(li, n), freq_pool, time_pool }
            })
            .collect();
        shell
    }

    pub fn baseline(n_classes: usize, toy: bool) -> ModelConfig {
        let shell = if toy { Self::toy_shell(n_classes) } else { Self::full_shell(n_classes) };
        Self::assemble(shell, |_, _| vec![BranchCfg::stat(1, 1)])
    }

    fn dynamic_from_second(shell: ModelConfig, pooling: PoolKind) -> ModelConfig {
        Self::assemble(shell, move |li, _| {
            if li == 0 {
                vec![BranchCfg::stat(1, 1)]
            } else {
                vec![BranchCfg::dynamic(1, 1, 4, Vec::new(), pooling)]
            }
        })
    }

    pub fn fdy(n_classes: usize, toy: bool) -> ModelConfig {
        let shell = if toy { Self::toy_shell(n_classes) } else { Self::full_shell(n_classes) };
        Self::dynamic_from_second(shell, PoolKind::Avg)
    }

    pub fn tfd(n_classes: usize, toy: bool) -> ModelConfig {
        let shell = if toy { Self::toy_shell(n_classes) } else { Self::full_shell(n_classes) };
        Self::dynamic_from_second(shell, PoolKind::Tap)
    }

    /// Dilated variant; the best-performing kernel dilation set.
    pub fn dfd(n_classes: usize, toy: bool) -> ModelConfig {
        let shell = if toy { Self::toy_shell(n_classes) } else { Self::full_shell(n_classes) };
        Self::assemble(shell, |li, n| {
            if li == 0 {
                vec![BranchCfg::stat(1, 1)]
            } else {
                let dil = if li == n - 1 {
                    vec![(1, 1); 4]
                } else {
                    vec![(1, 1), (1, 2), (1, 3), (1, 3)]
                };
                vec![BranchCfg::dynamic(1, 1, 4, dil, PoolKind::Avg)]
            }
        })
    }

    /// Partial variant: `num`/8 of each layer's channels dynamic.
    pub fn pfd(n_classes: usize, num: usize, toy: bool) -> Result<ModelConfig> {
        if num > 8 {
            return Err(config_err(format!("pfd fraction {}/8 exceeds 8/8", num)));
        }
        let shell = if toy { Self::toy_shell(n_classes) } else { Self::full_shell(n_classes) };
        Ok(Self::assemble(shell, move |li, _| {
            if li == 0 || num == 0 {
                vec![BranchCfg::stat(1, 1)]
            } else if num == 8 {
                vec![BranchCfg::dynamic(1, 1, 4, Vec::new(), PoolKind::Avg)]
            } else {
                vec![
                    BranchCfg::dynamic(num, 8, 4, Vec::new(), PoolKind::Avg),
                    BranchCfg::stat(8 - num, 8),
                ]
            }
        }))
    }

    /// Multi-branch variant: 8 dynamic 1/8 branches (five undilated plus the
    /// three dilation sets) and a 3/8 static branch, 11/8 channels in total,
    /// enabled at every layer behind the pre-convolution module.
    pub fn mdfd(n_classes: usize, toy: bool) -> ModelConfig {
        let mut shell = if toy { Self::toy_shell(n_classes) } else { Self::full_shell(n_classes) };
        shell.pre_conv = true;
        shell.squeeze_ratio = 2;
        let dil_sets: &[&[(usize, usize)]] = &[
            &[(1, 1), (1, 1), (1, 2), (1, 3)],
            &[(1, 1), (1, 2), (1, 2), (1, 3)],
            &[(1, 1), (1, 2), (1, 3), (1, 3)],
        ];
        if toy {
            return Self::assemble(shell, move |li, n| {
                let undil = vec![(1, 1); 4];
                let mut branches = vec![
                    BranchCfg::dynamic(1, 8, 4, undil.clone(), PoolKind::Avg),
                    BranchCfg::dynamic(
                        1,
                        8,
                        4,
                        if li == n - 1 { undil } else { dil_sets[0].to_vec() },
                        PoolKind::Avg,
                    ),
                ];
                branches.push(BranchCfg::stat(6, 8));
                branches
            });
        }
        Self::assemble(shell, move |li, n| {
            let last = li == n - 1;
            let undil = vec![(1, 1); 4];
            let mut branches: Vec<BranchCfg> = (0..5)
                .map(|_| BranchCfg::dynamic(1, 8, 4, undil.clone(), PoolKind::Avg))
                .collect();
            for set in dil_sets {
                let dil = if last { undil.clone() } else { set.to_vec() };
                branches.push(BranchCfg::dynamic(1, 8, 4, dil, PoolKind::Avg));
            }
            branches.push(BranchCfg::stat(3, 8));
            branches
        })
    }
}

#[derive(Clone, Copy, Debug)]
struct BnId(usize);

#[derive(Clone, Debug)]
struct AttnIds {
    w1: ParamId,
    b1: ParamId,
    gamma: ParamId,
    beta: ParamId,
    w2: ParamId,
    b2: ParamId,
    bn: BnId,
}

#[derive(Clone, Debug)]
struct TapPathIds {
    w1: ParamId,
    b1: ParamId,
    gamma: ParamId,
    beta: ParamId,
    w2: ParamId,
    b2: ParamId,
    bn: BnId,
}

#[derive(Clone, Debug)]
enum BranchP {
    Static {
        w: ParamId,
        b: ParamId,
    },
    Dynamic {
        weights: ParamId,
        biases: ParamId,
        dilations: Vec<(usize, usize)>,
        attn: AttnIds,
        tap: Option<(TapPathIds, TapPathIds)>,
    },
}

#[derive(Clone, Debug)]
struct LayerP {
    branches: Vec<BranchP>,
    gamma: ParamId,
    beta: ParamId,
    bn: BnId,
    freq_pool: usize,
    time_pool: usize,
}

#[derive(Clone, Debug)]
struct GruDirIds {
    w_x: ParamId,
    w_h: ParamId,
    b_x: ParamId,
    b_h: ParamId,
}

#[derive(Clone, Debug)]
struct GruLayerIds {
    fwd: GruDirIds,
    bwd: GruDirIds,
}

#[derive(Clone, Debug)]
struct PreConvP {
    w: ParamId,
    b: ParamId,
    gamma: ParamId,
    beta: ParamId,
    bn: BnId,
}

/// A built model: parameter store plus the layer wiring and BN state.
#[derive(Clone, Debug)]
pub struct Model<F: Scalar> {
    pub cfg: ModelConfig,
    pub params: ParamStore<F>,
    bn: Vec<BnStats<F>>,
    bn_names: Vec<String>,
    pre: Option<PreConvP>,
    layers: Vec<LayerP>,
    gru: Vec<GruLayerIds>,
    strong_w: ParamId,
    strong_b: ParamId,
    weak_w: ParamId,
    weak_b: ParamId,
}

/// Frame-level and clip-level outputs of a forward pass; both in [0, 1].
#[derive(Clone, Copy, Debug)]
pub struct Predictions {
    /// B×T'×n_classes
    pub strong: Var,
    /// B×n_classes
    pub weak: Var,
}

fn uniform<F: Scalar>(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor<F> {
    Tensor::rand_uniform(shape, -bound, bound, rng)
}

struct Builder<'r, F: Scalar> {
    params: ParamStore<F>,
    bn: Vec<BnStats<F>>,
    bn_names: Vec<String>,
    rng: &'r mut ChaCha8Rng,
}

impl<F: Scalar> Builder<'_, F> {
    fn add_bn(&mut self, name: String, channels: usize) -> BnId {
        self.bn.push(BnStats::new(channels));
        self.bn_names.push(name);
        BnId(self.bn.len() - 1)
    }

    fn conv(&mut self, name: &str, cout: usize, cin: usize, kf: usize, kt: usize) -> (ParamId, ParamId) {
        let bound = 1.0 / ((cin * kf * kt) as f64).sqrt();
        let w = self.params.add(format!("{name}.w"), uniform(&[cout, cin, kf, kt], bound, self.rng));
        let b = self.params.add(format!("{name}.b"), uniform(&[cout], bound, self.rng));
        (w, b)
    }

    fn bn_affine(&mut self, name: &str, channels: usize) -> (ParamId, ParamId, BnId) {
        let gamma = self.params.add(format!("{name}.gamma"), Tensor::full(&[channels], F::one()));
        let beta = self.params.add(format!("{name}.beta"), Tensor::zeros(&[channels]));
        let bn = self.add_bn(format!("{name}.stats"), channels);
        (gamma, beta, bn)
    }

    fn pointwise(&mut self, name: &str, cout: usize, cin: usize) -> (ParamId, ParamId) {
        let bound = 1.0 / (cin as f64).sqrt();
        let w = self.params.add(format!("{name}.w"), uniform(&[cout, cin], bound, self.rng));
        let b = self.params.add(format!("{name}.b"), uniform(&[cout], bound, self.rng));
        (w, b)
    }

    fn tap_path(&mut self, name: &str, c: usize, hidden: usize) -> TapPathIds {
        let (w1, b1) = self.pointwise(&format!("{name}.squeeze"), hidden, c);
        let (gamma, beta, bn) = self.bn_affine(&format!("{name}.bn"), hidden);
        let (w2, b2) = self.pointwise(&format!("{name}.excite"), c, hidden);
        TapPathIds { w1, b1, gamma, beta, w2, b2, bn }
    }
}

pub fn build_model<F: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<Model<F>> {
    cfg.validate()?;
    let mut rng = substream(seed, "model-init");
    let mut b = Builder {
        params: ParamStore::new(),
        bn: Vec::new(),
        bn_names: Vec::new(),
        rng: &mut rng,
    };

    let pre = if cfg.pre_conv {
        let (w, bia) = b.conv("pre", PRE_CONV_CHANNELS, 1, 3, 3);
        let (gamma, beta, bn) = b.bn_affine("pre.bn", PRE_CONV_CHANNELS);
        Some(PreConvP { w, b: bia, gamma, beta, bn })
    } else {
        None
    };

    let mut cin = if cfg.pre_conv { PRE_CONV_CHANNELS } else { 1 };
    let mut layers = Vec::with_capacity(cfg.layers.len());
    for (li, lc) in cfg.layers.iter().enumerate() {
        let base = cfg.base_channels[li];
        let lname = format!("conv{}", li + 1);
        let mut branches = Vec::with_capacity(lc.branches.len());
        for (bi, bc) in lc.branches.iter().enumerate() {
            let cout = bc.out_channels(base)?;
            let bname = format!("{lname}.branch{bi}");
            match bc.kind {
                BranchKind::Static => {
                    let (w, bia) = b.conv(&bname, cout, cin, 3, 3);
                    branches.push(BranchP::Static { w, b: bia });
                }
                BranchKind::Dynamic => {
                    let bound = 1.0 / ((cin * 9) as f64).sqrt();
                    let weights = b.params.add(
                        format!("{bname}.kernels"),
                        uniform(&[bc.k, cout, cin, 3, 3], bound, b.rng),
                    );
                    let biases = b
                        .params
                        .add(format!("{bname}.kernel_bias"), uniform(&[bc.k, cout], bound, b.rng));
                    let hidden = (cin / cfg.squeeze_ratio).max(bc.k);
                    let (w1, b1) = b.pointwise(&format!("{bname}.attn.squeeze"), hidden, cin);
                    let (gamma, beta, bn) = b.bn_affine(&format!("{bname}.attn.bn"), hidden);
                    let (w2, b2) = b.pointwise(&format!("{bname}.attn.excite"), bc.k, hidden);
                    let attn = AttnIds { w1, b1, gamma, beta, w2, b2, bn };
                    let tap = if bc.pooling == PoolKind::Tap {
                        let h = cin * cfg.tap_hidden_ratio;
                        let ta = b.tap_path(&format!("{bname}.tap.ta"), cin, h);
                        let va = b.tap_path(&format!("{bname}.tap.va"), cin, h);
                        Some((ta, va))
                    } else {
                        None
                    };
                    branches.push(BranchP::Dynamic {
                        weights,
                        biases,
                        dilations: bc.dilations.clone(),
                        attn,
                        tap,
                    });
                }
            }
        }
        let cout_total = cfg.layer_out_channels(li)?;
        let (gamma, beta, bn) = b.bn_affine(&format!("{lname}.bn"), cout_total);
        layers.push(LayerP {
            branches,
            gamma,
            beta,
            bn,
            freq_pool: lc.freq_pool,
            time_pool: lc.time_pool,
        });
        cin = cout_total;
    }

    let freq_left = cfg.layers.iter().fold(cfg.n_mels, |f, l| f / l.freq_pool);
    let mut d = cin * freq_left;
    let mut gru = Vec::with_capacity(cfg.gru_layers);
    let h = cfg.gru_hidden;
    for gi in 0..cfg.gru_layers {
        let dir = |b: &mut Builder<'_, F>, name: String| {
            let bound = 1.0 / (h as f64).sqrt();
            GruDirIds {
                w_x: b.params.add(format!("{name}.w_x"), uniform(&[d, 3 * h], bound, b.rng)),
                w_h: b.params.add(format!("{name}.w_h"), uniform(&[h, 3 * h], bound, b.rng)),
                b_x: b.params.add(format!("{name}.b_x"), uniform(&[3 * h], bound, b.rng)),
                b_h: b.params.add(format!("{name}.b_h"), uniform(&[3 * h], bound, b.rng)),
            }
        };
        let fwd = dir(&mut b, format!("gru{}.fwd", gi + 1));
        let bwd = dir(&mut b, format!("gru{}.bwd", gi + 1));
        gru.push(GruLayerIds { fwd, bwd });
        d = 2 * h;
    }

    let bound = 1.0 / (d as f64).sqrt();
    let strong_w = b.params.add("head.strong.w".to_string(), uniform(&[d, cfg.n_classes], bound, b.rng));
    let strong_b = b.params.add("head.strong.b".to_string(), uniform(&[cfg.n_classes], bound, b.rng));
    let weak_w = b.params.add("head.weak.w".to_string(), uniform(&[d, cfg.n_classes], bound, b.rng));
    let weak_b = b.params.add("head.weak.b".to_string(), uniform(&[cfg.n_classes], bound, b.rng));

    Ok(Model {
        cfg: cfg.clone(),
        params: b.params,
        bn: b.bn,
        bn_names: b.bn_names,
        pre,
        layers,
        gru,
        strong_w,
        strong_b,
        weak_w,
        weak_b,
    })
}

impl<F: Scalar> Model<F> {
    pub fn count_params(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn has_dynamic_layer(&self) -> bool {
        self.layers
            .iter()
            .any(|l| l.branches.iter().any(|b| matches!(b, BranchP::Dynamic { .. })))
    }

    /// BN running statistics in registration order, for checkpointing.
    pub fn bn_states(&self) -> impl Iterator<Item = (&str, &BnStats<F>)> {
        self.bn_names.iter().map(|n| n.as_str()).zip(self.bn.iter()).map(|(n, s)| (n, s))
    }

    pub fn set_bn_state(&mut self, idx: usize, stats: BnStats<F>) {
        self.bn[idx] = stats;
    }

    pub fn bn_len(&self) -> usize {
        self.bn.len()
    }

    pub fn bn_state(&self, idx: usize) -> &BnStats<F> {
        &self.bn[idx]
    }

    /// EMA fold-in of a student's parameters and BN statistics:
    /// self = alpha * self + (1 - alpha) * student.
    pub fn ema_from(&mut self, student: &Model<F>, alpha: f64) -> Result<()> {
        if self.params.len() != student.params.len() || self.bn.len() != student.bn.len() {
            return Err(Error::Config("ema: model structures differ".into()));
        }
        let a = F::from_f64(alpha);
        let one_m = F::one() - a;
        for i in 0..self.params.len() {
            let id = ParamId(i);
            let mixed = self
                .params
                .get(id)
                .zip(student.params.get(id), |t, s| a * t + one_m * s)?;
            self.params.set(id, mixed);
        }
        for i in 0..self.bn.len() {
            let mixed = BnStats {
                running_mean: self.bn[i]
                    .running_mean
                    .zip(&student.bn[i].running_mean, |t, s| a * t + one_m * s)?,
                running_var: self.bn[i]
                    .running_var
                    .zip(&student.bn[i].running_var, |t, s| a * t + one_m * s)?,
            };
            self.bn[i] = mixed;
        }
        Ok(())
    }

    /// Run the model. `vars` must come from `self.params.leaf_all(tape)`.
    /// Train mode updates BN running stats and applies dropout when a
    /// dropout RNG is supplied. Time frames beyond the largest multiple of
    /// the total time pooling are dropped.
    pub fn forward(
        &mut self,
        tape: &mut Tape<F>,
        vars: &[Var],
        mel: Var,
        mode: BnMode,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
        mut recorder: Option<&mut AttnRecorder<F>>,
    ) -> Result<Predictions> {
        if vars.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "forward: {} leaf vars for {} parameters",
                vars.len(),
                self.params.len()
            )));
        }
        let s = tape.value(mel).shape().to_vec();
        if s.len() != 4 || s[1] != 1 || s[2] != self.cfg.n_mels {
            return Err(Error::Shape(format!(
                "forward: expected B×1×{}×T input, got {:?}",
                self.cfg.n_mels, s
            )));
        }
        let tp_total = self.cfg.total_time_pool();
        let keep = (s[3] / tp_total) * tp_total;
        if keep == 0 {
            return Err(Error::Shape(format!(
                "forward: {} frames cannot cover total time pooling {}",
                s[3], tp_total
            )));
        }
        let mut x = truncate_time(tape, mel, keep)?;

        if let Some(pre) = self.pre.clone() {
            let y = conv2d(
                tape,
                x,
                vars[pre.w.0],
                Some(vars[pre.b.0]),
                &Conv2dCfg { dilation: (1, 1), padding: Padding::Same },
            )?;
            let n = batch_norm(
                tape,
                y,
                vars[pre.gamma.0],
                vars[pre.beta.0],
                &mut self.bn[pre.bn.0],
                mode,
            )?;
            x = relu(tape, n);
        }

        for li in 0..self.layers.len() {
            let layer = self.layers[li].clone();
            let mut parts = Vec::with_capacity(layer.branches.len());
            for (bi, branch) in layer.branches.iter().enumerate() {
                match branch {
                    BranchP::Static { w, b } => {
                        parts.push(conv2d(
                            tape,
                            x,
                            vars[w.0],
                            Some(vars[b.0]),
                            &Conv2dCfg::default(),
                        )?);
                    }
                    BranchP::Dynamic { weights, biases, dilations, attn, tap } => {
                        let module = AttnModule {
                            w1: vars[attn.w1.0],
                            b1: vars[attn.b1.0],
                            gamma: vars[attn.gamma.0],
                            beta: vars[attn.beta.0],
                            w2: vars[attn.w2.0],
                            b2: vars[attn.b2.0],
                            temperature: self.cfg.temperature,
                        };
                        let aw = match tap {
                            None => freq_attention(
                                tape,
                                x,
                                &module,
                                &mut self.bn[attn.bn.0],
                                TimePooling::Average,
                                mode,
                            )?,
                            Some((ta, va)) => {
                                let params = TapParams {
                                    ta: TapPath {
                                        w1: vars[ta.w1.0],
                                        b1: vars[ta.b1.0],
                                        gamma: vars[ta.gamma.0],
                                        beta: vars[ta.beta.0],
                                        w2: vars[ta.w2.0],
                                        b2: vars[ta.b2.0],
                                    },
                                    va: TapPath {
                                        w1: vars[va.w1.0],
                                        b1: vars[va.b1.0],
                                        gamma: vars[va.gamma.0],
                                        beta: vars[va.beta.0],
                                        w2: vars[va.w2.0],
                                        b2: vars[va.b2.0],
                                    },
                                };
                                // split borrows: the three BN slots are distinct
                                let (attn_i, ta_i, va_i) = (attn.bn.0, ta.bn.0, va.bn.0);
                                let mut bn_ta = self.bn[ta_i].clone();
                                let mut bn_va = self.bn[va_i].clone();
                                let aw = freq_attention(
                                    tape,
                                    x,
                                    &module,
                                    &mut self.bn[attn_i],
                                    TimePooling::Tap {
                                        params: &params,
                                        enable: TapEnable::ALL,
                                        bn_ta: &mut bn_ta,
                                        bn_va: &mut bn_va,
                                    },
                                    mode,
                                )?;
                                self.bn[ta_i] = bn_ta;
                                self.bn[va_i] = bn_va;
                                aw
                            }
                        };
                        if let Some(rec) = recorder.as_deref_mut() {
                            rec.push(li, bi, tape.value(aw.pi).clone());
                        }
                        let kernels = BasisKernelSet {
                            weights: vars[weights.0],
                            biases: vars[biases.0],
                            dilations: dilations.clone(),
                        };
                        parts.push(dfd_forward(tape, x, &kernels, &aw)?);
                    }
                }
            }
            let merged = if parts.len() == 1 {
                parts[0]
            } else {
                concat_channels(tape, &parts)?
            };
            let normed = batch_norm(
                tape,
                merged,
                vars[layer.gamma.0],
                vars[layer.beta.0],
                &mut self.bn[layer.bn.0],
                mode,
            )?;
            let act = relu(tape, normed);
            let pooled = if layer.freq_pool > 1 || layer.time_pool > 1 {
                pool2d(tape, act, layer.freq_pool, layer.time_pool, PoolMode::Avg)?
            } else {
                act
            };
            x = match dropout_rng.as_deref_mut() {
                Some(rng) if self.cfg.dropout > 0.0 => dropout(tape, pooled, self.cfg.dropout, rng),
                _ => pooled,
            };
        }

        let seq = to_sequence(tape, x)?;
        let gru_layers: Vec<BiGruParams> = self
            .gru
            .iter()
            .map(|g| BiGruParams {
                fwd: GruDirParams {
                    w_x: vars[g.fwd.w_x.0],
                    w_h: vars[g.fwd.w_h.0],
                    b_x: vars[g.fwd.b_x.0],
                    b_h: vars[g.fwd.b_h.0],
                },
                bwd: GruDirParams {
                    w_x: vars[g.bwd.w_x.0],
                    w_h: vars[g.bwd.w_h.0],
                    b_x: vars[g.bwd.b_x.0],
                    b_h: vars[g.bwd.b_h.0],
                },
            })
            .collect();
        let rnn = bigru(tape, seq, &gru_layers)?;

        let strong_logits = linear3d(tape, rnn, vars[self.strong_w.0], vars[self.strong_b.0])?;
        let strong = sigmoid(tape, strong_logits);
        let att_logits = linear3d(tape, rnn, vars[self.weak_w.0], vars[self.weak_b.0])?;
        let att = softmax_axis(tape, att_logits, 1)?;
        let weighted = crate::ops::mul(tape, att, strong)?;
        let weak = sum_time3(tape, weighted)?;
        Ok(Predictions { strong, weak })
    }
}

/// Run the model over a batch and capture every dynamic layer's attention.
pub fn collect_attention<F: Scalar>(
    model: &mut Model<F>,
    mel: &Tensor<F>,
) -> Result<AttnRecorder<F>> {
    if !model.has_dynamic_layer() {
        return Err(config_err("collect_attention: model has no dynamic conv layer"));
    }
    let mut tape = Tape::new();
    let vars = model.params.leaf_all(&mut tape);
    let x = tape.leaf(mel.clone());
    let mut rec = AttnRecorder::new();
    model.forward(&mut tape, &vars, x, BnMode::Eval, None, Some(&mut rec))?;
    Ok(rec)
}


#[cfg(test)]
mod param_count_tests {
    use super::*;

    fn count(cfg: &ModelConfig) -> usize {
        build_model::<f32>(cfg, 0).unwrap().count_params()
    }

    #[test]
    fn full_size_counts_hit_published_budgets() {
        let within = |got: usize, target_m: f64| {
            let rel = (got as f64 / 1e6 - target_m).abs() / target_m;
            assert!(rel < 0.05, "{} params vs target {}M ({:.1}% off)", got, target_m, rel * 100.0);
        };
        within(count(&ModelConfig::baseline(10, false)), 4.428);
        within(count(&ModelConfig::fdy(10, false)), 11.061);
        within(count(&ModelConfig::pfd(10, 1, false).unwrap()), 5.401);
        within(count(&ModelConfig::tfd(10, false)), 12.703);
        within(count(&ModelConfig::mdfd(10, false)), 18.157);
    }

    #[test]
    fn partial_variant_cuts_fdy_size_by_nearly_half() {
        let fdy = count(&ModelConfig::fdy(10, false)) as f64;
        let pfd = count(&ModelConfig::pfd(10, 1, false).unwrap()) as f64;
        assert!(pfd < fdy * 0.55, "pfd {} vs fdy {}", pfd, fdy);
    }
}
