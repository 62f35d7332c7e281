//! Synthetic soundscapes with exact strong labels, dataset splits, and the
//! training-time augmentations.
//!
//! Clips are 10 s of pink-noise background plus 1-4 foreground events drawn
//! from five parametric classes spanning the stationary / non-stationary /
//! transient taxonomy: steady tone, harmonic stack, chirp, noise burst, and
//! impulse train. Every event carries its exact interval, so the generator
//! doubles as ground truth for the evaluation pipeline.
//!
//! Augmentations keep the label-consistency rule: transforms that move or
//! remove feature content along time (time mask, frame shift) apply the same
//! transform to strong targets; purely spectral transforms (FilterAugment,
//! frequency mask, additive noise) never touch targets.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};

use crate::error::{config_err, shape_err, Result};
use crate::rng::substream_indexed;
use crate::tensor::{Scalar, Tensor};

pub const N_CLASSES: usize = 5;
pub const CLASS_NAMES: [&str; N_CLASSES] = [
    "steady_tone",
    "harmonic_stack",
    "chirp",
    "noise_burst",
    "impulse_train",
];

/// Look up a class id by its TSV label.
pub fn class_id(name: &str) -> Option<usize> {
    CLASS_NAMES.iter().position(|&n| n == name)
}

/// One labeled event occurrence, in seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct EventInterval {
    pub class_id: usize,
    pub onset: f64,
    pub offset: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Supervision {
    Strong,
    Weak,
    Unlabeled,
}

/// A generated clip. Weak supervision carries the class set only; unlabeled
/// carries nothing.
#[derive(Clone, Debug)]
pub struct ClipExample {
    pub wave: Vec<f32>,
    pub sample_rate: u32,
    pub supervision: Supervision,
    pub strong_labels: Vec<EventInterval>,
    /// Sorted, distinct class ids.
    pub weak_labels: Vec<usize>,
}

pub const CLIP_LEN_S: f64 = 10.0;

const MIN_EVENT_S: f64 = 0.25;
const MAX_EVENT_S: f64 = 2.0;
const SNR_DB: (f64, f64) = (6.0, 30.0);
const RAMP_S: f64 = 0.01;

/// Pink noise via the Kellet three-pole filter over white noise, unit-ish RMS.
fn pink_noise(n: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let (mut b0, mut b1, mut b2) = (0.0f64, 0.0, 0.0);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let w: f64 = rng.gen_range(-1.0..1.0);
        b0 = 0.99765 * b0 + w * 0.0990460;
        b1 = 0.96300 * b1 + w * 0.2965164;
        b2 = 0.57000 * b2 + w * 1.0526913;
        out.push((b0 + b1 + b2 + w * 0.1848) as f32);
    }
    let rms = (out.iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / n as f64).sqrt();
    let g = if rms > 0.0 { (0.1 / rms) as f32 } else { 1.0 };
    out.iter_mut().for_each(|v| *v *= g);
    out
}

/// Raised-cosine attack/release so events do not click.
fn envelope(i: usize, n: usize, ramp: usize) -> f64 {
    let r = ramp.min(n / 2).max(1);
    if i < r {
        0.5 - 0.5 * (std::f64::consts::PI * i as f64 / r as f64).cos()
    } else if i + r > n {
        0.5 - 0.5 * (std::f64::consts::PI * (n - i) as f64 / r as f64).cos()
    } else {
        1.0
    }
}

/// Synthesize one event of `class` at unit peak scale; callers rescale for SNR.
fn synth_event(class: usize, n: usize, sr: u32, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let dt = 1.0 / sr as f64;
    let ramp = (RAMP_S * sr as f64) as usize;
    let tau = std::f64::consts::TAU;
    let mut s = vec![0.0f64; n];
    match class {
        // steady tone: single sinusoid
        0 => {
            let f = rng.gen_range(200.0..4000.0);
            for (i, v) in s.iter_mut().enumerate() {
                *v = (tau * f * i as f64 * dt).sin();
            }
        }
        // harmonic stack: fundamental plus 1/h partials
        1 => {
            let f0 = rng.gen_range(100.0..800.0);
            let parts = rng.gen_range(4..=6);
            for (i, v) in s.iter_mut().enumerate() {
                let t = i as f64 * dt;
                for h in 1..=parts {
                    *v += (tau * f0 * h as f64 * t).sin() / h as f64;
                }
            }
        }
        // chirp: linear frequency sweep
        2 => {
            let f0 = rng.gen_range(200.0..3000.0);
            let f1 = rng.gen_range(f0 + 500.0..6000.0f64.max(f0 + 600.0));
            let dur = n as f64 * dt;
            for (i, v) in s.iter_mut().enumerate() {
                let t = i as f64 * dt;
                // phase = integral of instantaneous frequency
                *v = (tau * (f0 * t + (f1 - f0) * t * t / (2.0 * dur))).sin();
            }
        }
        // noise burst: white noise
        3 => {
            for v in s.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        // impulse train: periodic decaying-sine clicks
        4 => {
            let period = (rng.gen_range(0.03..0.08) * sr as f64) as usize;
            let f = rng.gen_range(1000.0..4000.0);
            let decay = 0.005 * sr as f64;
            let mut start = 0;
            while start < n {
                let span = period.min(n - start);
                for i in 0..span {
                    s[start + i] += (-(i as f64) / decay).exp() * (tau * f * i as f64 * dt).sin();
                }
                start += period;
            }
        }
        _ => unreachable!("class id out of palette"),
    }
    for (i, v) in s.iter_mut().enumerate() {
        *v *= envelope(i, n, ramp);
    }
    s.into_iter().map(|v| v as f32).collect()
}

fn rms(x: &[f32]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}

/// Generate one strongly-labeled clip. Deterministic in `seed`; the palette
/// restricts which classes may appear.
pub fn synth_clip(
    seed: u64,
    palette: &[usize],
    clip_len_s: f64,
    sample_rate: u32,
) -> Result<ClipExample> {
    if palette.is_empty() {
        return Err(config_err("synth_clip: class palette must be non-empty"));
    }
    if let Some(&bad) = palette.iter().find(|&&c| c >= N_CLASSES) {
        return Err(config_err(format!("synth_clip: unknown class id {bad}")));
    }
    let mut rng = substream_indexed(seed, "synth-clip", 0);
    let n = (clip_len_s * sample_rate as f64).round() as usize;
    let mut wave = pink_noise(n, &mut rng);
    let noise_rms = rms(&wave);

    let n_events = rng.gen_range(1..=4usize);
    let mut labels = Vec::with_capacity(n_events);
    for _ in 0..n_events {
        let class = palette[rng.gen_range(0..palette.len())];
        let dur = rng.gen_range(MIN_EVENT_S..MAX_EVENT_S).min(clip_len_s);
        // Same-class events must not overlap: the frame-level target is a
        // per-class union, so overlapping instances would be undecodable.
        let mut onset = rng.gen_range(0.0..(clip_len_s - dur).max(f64::EPSILON));
        let collides = |labels: &[EventInterval], onset: f64| {
            labels
                .iter()
                .any(|e| e.class_id == class && onset < e.offset && onset + dur > e.onset)
        };
        let mut placed = !collides(&labels, onset);
        for _ in 0..20 {
            if placed {
                break;
            }
            onset = rng.gen_range(0.0..(clip_len_s - dur).max(f64::EPSILON));
            placed = !collides(&labels, onset);
        }
        if !placed {
            continue;
        }
        let snr_db = rng.gen_range(SNR_DB.0..SNR_DB.1);
        let i0 = (onset * sample_rate as f64) as usize;
        let len = ((dur * sample_rate as f64) as usize).min(n - i0);
        let ev = synth_event(class, len, sample_rate, &mut rng);
        let ev_rms = rms(&ev);
        if ev_rms > 0.0 {
            let gain = (noise_rms * 10f64.powf(snr_db / 20.0) / ev_rms) as f32;
            for (i, v) in ev.iter().enumerate() {
                wave[i0 + i] += v * gain;
            }
        }
        labels.push(EventInterval {
            class_id: class,
            onset,
            offset: onset + len as f64 / sample_rate as f64,
        });
    }
    labels.sort_by(|a, b| a.onset.total_cmp(&b.onset));
    // Peak-normalize so the clip survives 16-bit PCM without clipping; a
    // global scale preserves every event's SNR.
    let peak = wave.iter().fold(0f32, |m, v| m.max(v.abs()));
    if peak > 0.95 {
        let g = 0.95 / peak;
        for v in &mut wave {
            *v *= g;
        }
    }
    let mut weak: Vec<usize> = labels.iter().map(|e| e.class_id).collect();
    weak.sort_unstable();
    weak.dedup();
    Ok(ClipExample {
        wave,
        sample_rate,
        supervision: Supervision::Strong,
        strong_labels: labels,
        weak_labels: weak,
    })
}

/// The three training splits.
#[derive(Clone, Debug)]
pub struct DatasetSplits {
    pub strong: Vec<ClipExample>,
    pub weak: Vec<ClipExample>,
    pub unlabeled: Vec<ClipExample>,
}

/// Per-clip seed for split `name`, exposed so tests can regenerate ground
/// truth for weak/unlabeled clips.
pub fn clip_seed(seed: u64, name: &str, index: u64) -> u64 {
    substream_indexed(seed, name, index).gen()
}

/// Generate the three splits from disjoint seed streams. Weak clips keep only
/// their class set; unlabeled clips keep nothing.
pub fn make_dataset(
    seed: u64,
    n_strong: usize,
    n_weak: usize,
    n_unlabeled: usize,
    palette: &[usize],
    clip_len_s: f64,
    sample_rate: u32,
) -> Result<DatasetSplits> {
    let gen_split = |name: &str, n: usize, sup: Supervision| -> Result<Vec<ClipExample>> {
        (0..n)
            .map(|i| {
                let mut c = synth_clip(clip_seed(seed, name, i as u64), palette, clip_len_s, sample_rate)?;
                c.supervision = sup;
                match sup {
                    Supervision::Strong => {}
                    Supervision::Weak => c.strong_labels.clear(),
                    Supervision::Unlabeled => {
                        c.strong_labels.clear();
                        c.weak_labels.clear();
                    }
                }
                Ok(c)
            })
            .collect()
    };
    Ok(DatasetSplits {
        strong: gen_split("split-strong", n_strong, Supervision::Strong)?,
        weak: gen_split("split-weak", n_weak, Supervision::Weak)?,
        unlabeled: gen_split("split-unlabeled", n_unlabeled, Supervision::Unlabeled)?,
    })
}

/// Rasterize intervals to a [n_frames, n_classes] frame-activity matrix.
/// Frame i covers [i·hop, (i+1)·hop); any overlap marks it active.
pub fn rasterize<F: Scalar>(
    labels: &[EventInterval],
    n_classes: usize,
    n_frames: usize,
    frame_hop: f64,
) -> Result<Tensor<F>> {
    let mut out = Tensor::zeros(&[n_frames, n_classes]);
    let d = out.data_mut();
    for ev in labels {
        if ev.class_id >= n_classes {
            return Err(shape_err(format!(
                "rasterize: class id {} out of range {n_classes}",
                ev.class_id
            )));
        }
        let first = (ev.onset / frame_hop).floor().max(0.0) as usize;
        // tolerance guards against spurious zero-length overlaps from float
        // grid arithmetic (e.g. 3 * 0.1 > 0.3)
        let eps = frame_hop * 1e-9;
        for t in first..n_frames {
            let (lo, hi) = (t as f64 * frame_hop, (t + 1) as f64 * frame_hop);
            if lo >= ev.offset - eps {
                break;
            }
            if hi > ev.onset + eps {
                d[t * n_classes + ev.class_id] = F::one();
            }
        }
    }
    Ok(out)
}

/// Clip-level presence vector from a class-id set.
pub fn weak_vector<F: Scalar>(classes: &[usize], n_classes: usize) -> Result<Tensor<F>> {
    let mut out = Tensor::zeros(&[n_classes]);
    for &c in classes {
        if c >= n_classes {
            return Err(shape_err(format!("weak_vector: class id {c} out of range {n_classes}")));
        }
        out.data_mut()[c] = F::one();
    }
    Ok(out)
}

/// A clip in feature space, ready for batching.
#[derive(Clone, Debug)]
pub struct FeatureClip<F: Scalar> {
    /// [n_mels, T] log-mel features.
    pub mel: Tensor<F>,
    pub supervision: Supervision,
    /// [T', n_classes] pooled-frame targets; all zeros unless strong.
    pub strong: Tensor<F>,
    /// [n_classes] presence targets; all zeros if unlabeled.
    pub weak: Tensor<F>,
}

/// Sample the mixup coefficient from Beta(0.2, 0.2).
pub fn sample_mixup_lambda(rng: &mut impl Rng) -> f64 {
    Beta::new(0.2, 0.2).expect("valid Beta parameters").sample(rng)
}

/// Convex blend of two examples; features and all targets interpolate with
/// the same coefficient. λ=1 returns `a` exactly.
pub fn mixup<F: Scalar>(a: &FeatureClip<F>, b: &FeatureClip<F>, lambda: f64) -> Result<FeatureClip<F>> {
    if a.supervision != b.supervision {
        return Err(config_err("mixup: supervision kinds must match"));
    }
    let l = F::from_f64(lambda);
    let blend = |x: &Tensor<F>, y: &Tensor<F>| x.zip(y, |xa, xb| l * xa + (F::one() - l) * xb);
    Ok(FeatureClip {
        mel: blend(&a.mel, &b.mel)?,
        supervision: a.supervision,
        strong: blend(&a.strong, &b.strong)?,
        weak: blend(&a.weak, &b.weak)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterKind {
    Step,
    Linear,
}

/// FilterAugment: random per-band gains on a log-domain mel spectrogram.
/// `Step` applies a constant gain per band; `Linear` interpolates gains across
/// band boundaries, so the applied profile is continuous piecewise-linear.
/// Gains are power-dB values applied additively to the natural-log features.
pub fn filter_augment<F: Scalar>(
    mel: &Tensor<F>,
    kind: FilterKind,
    n_bands: usize,
    db_range: f64,
    rng: &mut impl Rng,
) -> Result<Tensor<F>> {
    let s = mel.shape();
    if s.len() != 2 {
        return Err(shape_err(format!("filter_augment expects [n_mels, T], got {:?}", s)));
    }
    let n_mels = s[0];
    if n_bands < 1 {
        return Err(config_err("filter_augment: need at least one band"));
    }
    if n_bands > n_mels {
        return Err(config_err(format!(
            "filter_augment: {n_bands} bands exceed {n_mels} mel bins"
        )));
    }
    // Interior boundaries as distinct sorted bin indices.
    let mut bounds = vec![0usize, n_mels];
    while bounds.len() < n_bands + 1 {
        let b = rng.gen_range(1..n_mels);
        if !bounds.contains(&b) {
            bounds.push(b);
        }
    }
    bounds.sort_unstable();
    let sample_db = |rng: &mut dyn rand::RngCore| {
        if db_range == 0.0 {
            0.0
        } else {
            rand::Rng::gen_range(rng, -db_range..db_range)
        }
    };
    // dB → natural-log offset on ln-power features.
    let to_ln = std::f64::consts::LN_10 / 10.0;
    let mut gain_ln = vec![0.0f64; n_mels];
    match kind {
        FilterKind::Step => {
            for w in bounds.windows(2) {
                let g = sample_db(rng) * to_ln;
                gain_ln[w[0]..w[1]].fill(g);
            }
        }
        FilterKind::Linear => {
            let node: Vec<f64> = (0..bounds.len()).map(|_| sample_db(rng) * to_ln).collect();
            for w in 0..bounds.len() - 1 {
                let (lo, hi) = (bounds[w], bounds[w + 1]);
                for f in lo..hi {
                    let t = (f - lo) as f64 / (hi - lo) as f64;
                    gain_ln[f] = node[w] * (1.0 - t) + node[w + 1] * t;
                }
            }
        }
    }
    let t_len = s[1];
    let mut out = mel.clone();
    let d = out.data_mut();
    for (f, &g) in gain_ln.iter().enumerate() {
        let g = F::from_f64(g);
        for v in &mut d[f * t_len..(f + 1) * t_len] {
            *v = *v + g;
        }
    }
    Ok(out)
}

/// Zero a random contiguous span of up to `max_frames` mel frames, and the
/// pooled target frames that overlap it. `time_pool` is the mel-to-target
/// frame ratio. `max_frames = 0` is the identity.
pub fn mask_time<F: Scalar>(
    mel: &mut Tensor<F>,
    strong: Option<&mut Tensor<F>>,
    max_frames: usize,
    time_pool: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    let s = mel.shape().to_vec();
    if s.len() != 2 {
        return Err(shape_err(format!("mask_time expects [n_mels, T], got {:?}", s)));
    }
    let t_len = s[1];
    let width = rng.gen_range(0..=max_frames.min(t_len));
    if width == 0 {
        return Ok(());
    }
    let start = rng.gen_range(0..=t_len - width);
    {
        let d = mel.data_mut();
        for f in 0..s[0] {
            d[f * t_len + start..f * t_len + start + width].fill(F::zero());
        }
    }
    if let Some(strong) = strong {
        let ss = strong.shape().to_vec();
        let (tp, nc) = (ss[0], ss[1]);
        let d = strong.data_mut();
        for p in 0..tp {
            // pooled frame p covers mel frames [p·pool, (p+1)·pool)
            if p * time_pool < start + width && (p + 1) * time_pool > start {
                d[p * nc..(p + 1) * nc].fill(F::zero());
            }
        }
    }
    Ok(())
}

/// Zero a random contiguous span of up to `max_bins` mel bins. Targets are
/// untouched: frequency content moves no label mass in time.
pub fn mask_freq<F: Scalar>(mel: &mut Tensor<F>, max_bins: usize, rng: &mut impl Rng) -> Result<()> {
    let s = mel.shape().to_vec();
    if s.len() != 2 {
        return Err(shape_err(format!("mask_freq expects [n_mels, T], got {:?}", s)));
    }
    let width = rng.gen_range(0..=max_bins.min(s[0]));
    if width == 0 {
        return Ok(());
    }
    let start = rng.gen_range(0..=s[0] - width);
    let t_len = s[1];
    mel.data_mut()[start * t_len..(start + width) * t_len].fill(F::zero());
    Ok(())
}

/// Shift features by `shift` mel frames (positive = later), zero-filling the
/// vacated edge, and shift strong targets by the equivalent pooled frames.
pub fn apply_frame_shift<F: Scalar>(
    mel: &mut Tensor<F>,
    strong: Option<&mut Tensor<F>>,
    shift: i64,
    time_pool: usize,
) -> Result<()> {
    let s = mel.shape().to_vec();
    if s.len() != 2 {
        return Err(shape_err(format!("frame_shift expects [n_mels, T], got {:?}", s)));
    }
    shift_rows(mel.data_mut(), s[0], s[1], shift);
    if let Some(strong) = strong {
        let ss = strong.shape().to_vec();
        let pooled = (shift as f64 / time_pool as f64).round() as i64;
        // targets are [T', C]: shifting along time means shifting whole rows,
        // which is a column-major move; transpose via per-class pass
        shift_cols(strong.data_mut(), ss[0], ss[1], pooled);
    }
    Ok(())
}

/// Shift each of `rows` rows of length `len` by `k` positions, zero fill.
fn shift_rows<F: Scalar>(d: &mut [F], rows: usize, len: usize, k: i64) {
    if k == 0 {
        return;
    }
    for r in 0..rows {
        let row = &mut d[r * len..(r + 1) * len];
        if k > 0 {
            let k = (k as usize).min(len);
            row.copy_within(0..len - k, k);
            row[..k].fill(F::zero());
        } else {
            let k = ((-k) as usize).min(len);
            row.copy_within(k..len, 0);
            row[len - k..].fill(F::zero());
        }
    }
}

/// Shift a [rows, cols] matrix by `k` along the row axis, zero fill.
fn shift_cols<F: Scalar>(d: &mut [F], rows: usize, cols: usize, k: i64) {
    if k == 0 {
        return;
    }
    if k > 0 {
        let k = (k as usize).min(rows);
        d.copy_within(0..(rows - k) * cols, k * cols);
        d[..k * cols].fill(F::zero());
    } else {
        let k = ((-k) as usize).min(rows);
        d.copy_within(k * cols..rows * cols, 0);
        d[(rows - k) * cols..].fill(F::zero());
    }
}

/// Randomized frame shift in [-max_shift, max_shift].
pub fn frame_shift<F: Scalar>(
    mel: &mut Tensor<F>,
    strong: Option<&mut Tensor<F>>,
    max_shift: usize,
    time_pool: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    let k = rng.gen_range(-(max_shift as i64)..=max_shift as i64);
    apply_frame_shift(mel, strong, k, time_pool)
}

/// Additive Gaussian noise N(0, sigma²) on the features; targets untouched.
pub fn add_noise<F: Scalar>(mel: &mut Tensor<F>, sigma: f64, rng: &mut impl Rng) -> Result<()> {
    if sigma < 0.0 {
        return Err(config_err("add_noise: sigma must be >= 0"));
    }
    if sigma == 0.0 {
        return Ok(());
    }
    let dist = Normal::new(0.0, sigma).expect("finite sigma");
    for v in mel.data_mut() {
        *v = *v + F::from_f64(dist.sample(rng));
    }
    Ok(())
}
