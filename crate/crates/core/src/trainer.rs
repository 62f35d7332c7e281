//! Mean-teacher semi-supervised training.
//!
//! The student minimizes L = L_strong + w_W·L_weak + w_C(e)·L_cons where the
//! strong BCE covers strongly-labeled clips, the weak BCE covers strong+weak
//! clips (strong intervals collapsed to clip-level presence), and the
//! consistency MSE covers every clip against a stop-gradient teacher. The
//! teacher is an exponential moving average of the student:
//! θ_T ← α·θ_T + (1−α)·θ_S after every optimizer step.
//!
//! Everything is deterministic under the run seed: batch shuffles, dropout,
//! and augmentation each draw from named per-epoch substreams.

use rand::seq::SliceRandom;

use crate::crnn::Model;
use crate::datakit::{rasterize, weak_vector, ClipExample, FeatureClip, FilterKind};
use crate::error::{config_err, Error, Result};
use crate::features::{log_mel, normalize_unit, MelConfig};
use crate::ops::{add, bce_loss, mse_to_const, scale, slice_outer, BnMode};
use crate::rng::substream_indexed;
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub ema_alpha: f64,
    pub w_weak: f64,
    pub w_cons_max: f64,
    pub ramp_epochs: usize,
    pub batch_strong: usize,
    pub batch_weak: usize,
    pub batch_unlabeled: usize,
    pub grad_clip: f64,
    /// Apply FilterAugment to training batches.
    pub filter_augment: bool,
    pub filter_bands: usize,
    pub filter_db: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            ema_alpha: 0.99,
            w_weak: 0.5,
            w_cons_max: 2.0,
            ramp_epochs: 50,
            batch_strong: 12,
            batch_weak: 12,
            batch_unlabeled: 24,
            grad_clip: 5.0,
            filter_augment: true,
            filter_bands: 4,
            filter_db: 6.0,
        }
    }
}

impl TrainConfig {
    /// Desk-scale batch composition.
    pub fn toy() -> Self {
        TrainConfig {
            batch_strong: 4,
            batch_weak: 4,
            batch_unlabeled: 8,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ema_alpha > 0.0 && self.ema_alpha < 1.0) {
            return Err(config_err("train: ema_alpha must lie in (0, 1)"));
        }
        if self.ramp_epochs > self.epochs {
            return Err(config_err("train: ramp_epochs must not exceed epochs"));
        }
        if self.lr <= 0.0 || self.epochs == 0 {
            return Err(config_err("train: lr and epochs must be positive"));
        }
        if self.batch_strong + self.batch_weak + self.batch_unlabeled == 0 {
            return Err(config_err("train: batch composition is empty"));
        }
        Ok(())
    }
}

/// Cosine-annealed learning rate for epoch `e` of `epochs`.
pub fn cosine_lr(lr0: f64, epoch: usize, epochs: usize) -> f64 {
    lr0 * (1.0 + (std::f64::consts::PI * epoch as f64 / epochs as f64).cos()) / 2.0
}

/// Consistency ramp weight: linear from 0 to the maximum over `ramp_epochs`.
pub fn w_cons(cfg: &TrainConfig, epoch: usize) -> f64 {
    if cfg.ramp_epochs == 0 {
        return cfg.w_cons_max;
    }
    cfg.w_cons_max * (epoch as f64 / cfg.ramp_epochs as f64).min(1.0)
}

/// Teacher EMA step. `alpha = 1` leaves the teacher unchanged; `alpha = 0`
/// copies the student.
pub fn ema_update<F: Scalar>(teacher: &mut Model<F>, student: &Model<F>, alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(config_err("ema: alpha must lie in [0, 1]"));
    }
    teacher.ema_from(student, alpha)
}

/// MSE between student predictions and constant (stop-gradient) teacher
/// outputs: the strong and weak means are summed.
pub fn consistency_loss<F: Scalar>(
    tape: &mut Tape<F>,
    student_strong: Var,
    student_weak: Var,
    teacher_strong: &Tensor<F>,
    teacher_weak: &Tensor<F>,
) -> Result<Var> {
    let s = mse_to_const(tape, student_strong, teacher_strong)?;
    let w = mse_to_const(tape, student_weak, teacher_weak)?;
    add(tape, s, w)
}

/// Turn a generated clip into model-ready features and targets. `time_pool`
/// is the model's total time pooling; strong targets live on the pooled grid.
pub fn featurize<F: Scalar>(
    clip: &ClipExample,
    mel_cfg: &MelConfig,
    time_pool: usize,
    n_classes: usize,
) -> Result<FeatureClip<F>> {
    let mel32 = normalize_unit(&log_mel(&clip.wave, mel_cfg)?);
    let frames = mel32.shape()[1];
    let pooled = frames / time_pool;
    if pooled == 0 {
        return Err(Error::Shape(format!(
            "featurize: {frames} frames cannot cover time pooling {time_pool}"
        )));
    }
    let mel = Tensor::from_fn(mel32.shape(), |i| F::from_f64(mel32.data()[i] as f64));
    let pooled_hop = time_pool as f64 * mel_cfg.hop as f64 / mel_cfg.sample_rate as f64;
    let strong = rasterize(&clip.strong_labels, n_classes, pooled, pooled_hop)?;
    let weak = weak_vector(&clip.weak_labels, n_classes)?;
    Ok(FeatureClip { mel, supervision: clip.supervision, strong, weak })
}

/// Training inputs in feature space. `val` clips must be strongly labeled;
/// if empty, checkpoint selection falls back to the training loss.
#[derive(Clone, Debug)]
pub struct TrainData<F: Scalar> {
    pub strong: Vec<FeatureClip<F>>,
    pub weak: Vec<FeatureClip<F>>,
    pub unlabeled: Vec<FeatureClip<F>>,
    pub val: Vec<FeatureClip<F>>,
}

#[derive(Clone, Copy, Debug)]
pub struct EpochLog {
    pub epoch: usize,
    pub total: f64,
    pub strong: f64,
    pub weak: f64,
    pub cons: f64,
    pub lr: f64,
    pub w_cons: f64,
    pub val_bce: f64,
}

/// Render the per-epoch log as CSV.
pub fn metrics_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,total,strong,weak,cons,lr,w_cons,val_bce\n");
    for e in log {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            e.epoch, e.total, e.strong, e.weak, e.cons, e.lr, e.w_cons, e.val_bce
        ));
    }
    s
}

pub struct FitOutcome<F: Scalar> {
    pub student: Model<F>,
    pub teacher: Model<F>,
    pub best_student: Model<F>,
    pub best_teacher: Model<F>,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

/// Adam moment estimates; public so checkpoints can carry optimizer state.
#[derive(Clone, Debug)]
pub struct AdamState<F: Scalar> {
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
    pub t: u64,
}

const ADAM_EPS: f64 = 1e-8;

impl<F: Scalar> AdamState<F> {
    pub fn new(model: &Model<F>) -> Self {
        let zeros: Vec<Tensor<F>> = model.params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        AdamState { m: zeros.clone(), v: zeros, t: 0 }
    }

    fn step(&mut self, model: &mut Model<F>, grads: &[Tensor<F>], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let b1 = F::from_f64(cfg.beta1);
        let b2 = F::from_f64(cfg.beta2);
        let c1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let c2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (i, g) in grads.iter().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            *m = m.zip(g, |mv, gv| b1 * mv + (F::one() - b1) * gv).expect("adam shapes");
            *v = v.zip(g, |vv, gv| b2 * vv + (F::one() - b2) * gv * gv).expect("adam shapes");
            let id = crate::params::ParamId(i);
            let upd = model.params.get(id).clone();
            let md = m.data();
            let vd = v.data();
            let new = Tensor::from_fn(upd.shape(), |j| {
                let mh = md[j].to_f64s() / c1;
                let vh = vd[j].to_f64s() / c2;
                upd.data()[j] - F::from_f64(lr * mh / (vh.sqrt() + ADAM_EPS))
            });
            model.params.set(id, new);
        }
    }
}

/// Scale gradients so the global L2 norm does not exceed `clip`.
fn clip_global_norm<F: Scalar>(grads: &mut [Tensor<F>], clip: f64) -> f64 {
    let mut sq = 0.0;
    for g in grads.iter() {
        for &v in g.data() {
            let v = v.to_f64s();
            sq += v * v;
        }
    }
    let norm = sq.sqrt();
    if norm > clip && norm > 0.0 {
        let s = F::from_f64(clip / norm);
        for g in grads.iter_mut() {
            *g = g.scale(s);
        }
    }
    norm
}

/// Stack clip features into a B×1×n_mels×T batch plus target tensors.
fn stack_batch<F: Scalar>(clips: &[&FeatureClip<F>]) -> Result<(Tensor<F>, Tensor<F>, Tensor<F>)> {
    let s0 = clips[0].mel.shape().to_vec();
    let (nm, t) = (s0[0], s0[1]);
    let b = clips.len();
    let mut mel = Tensor::zeros(&[b, 1, nm, t]);
    let ss = clips[0].strong.shape().to_vec();
    let mut strong = Tensor::zeros(&[b, ss[0], ss[1]]);
    let mut weak = Tensor::zeros(&[b, ss[1]]);
    for (i, c) in clips.iter().enumerate() {
        if c.mel.shape() != s0.as_slice() || c.strong.shape() != ss.as_slice() {
            return Err(Error::Shape("batch: clips disagree on feature shape".into()));
        }
        mel.data_mut()[i * nm * t..(i + 1) * nm * t].copy_from_slice(c.mel.data());
        strong.data_mut()[i * ss[0] * ss[1]..(i + 1) * ss[0] * ss[1]].copy_from_slice(c.strong.data());
        weak.data_mut()[i * ss[1]..(i + 1) * ss[1]].copy_from_slice(c.weak.data());
    }
    Ok((mel, strong, weak))
}

fn shuffled(len: usize, seed: u64, name: &str, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut substream_indexed(seed, name, epoch as u64));
    idx
}

fn scalar_of<F: Scalar>(tape: &Tape<F>, v: Var) -> f64 {
    tape.value(v).data()[0].to_f64s()
}

/// Combined strong+weak BCE over a strongly-labeled clip set in eval mode.
fn eval_bce<F: Scalar>(model: &mut Model<F>, clips: &[FeatureClip<F>]) -> Result<f64> {
    let mut acc = 0.0;
    for chunk in clips.chunks(8) {
        let refs: Vec<&FeatureClip<F>> = chunk.iter().collect();
        let (mel, strong_t, weak_t) = stack_batch(&refs)?;
        let mut tape = Tape::new();
        let vars = model.params.leaf_all(&mut tape);
        let x = tape.leaf(mel);
        let preds = model.forward(&mut tape, &vars, x, BnMode::Eval, None, None)?;
        let bs = bce_loss(&mut tape, preds.strong, &strong_t)?;
        let bw = bce_loss(&mut tape, preds.weak, &weak_t)?;
        acc += (scalar_of(&tape, bs) + scalar_of(&tape, bw)) * chunk.len() as f64;
    }
    Ok(acc / clips.len() as f64)
}

/// Full training state; snapshot it to resume a run mid-way with bit-equal
/// subsequent epochs (all per-epoch randomness is keyed by epoch index).
#[derive(Clone, Debug)]
pub struct TrainState<F: Scalar> {
    pub student: Model<F>,
    pub teacher: Model<F>,
    pub adam: AdamState<F>,
    pub epochs_done: usize,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val: f64,
    pub best_student: Model<F>,
    pub best_teacher: Model<F>,
}

impl<F: Scalar> TrainState<F> {
    pub fn new(model: Model<F>) -> Self {
        let teacher = model.clone();
        let adam = AdamState::new(&model);
        TrainState {
            best_student: model.clone(),
            best_teacher: teacher.clone(),
            student: model,
            teacher,
            adam,
            epochs_done: 0,
            log: Vec::new(),
            best_epoch: 0,
            best_val: f64::INFINITY,
        }
    }
}

/// Run the mean-teacher loop. The returned outcome carries both the final
/// and best-validation snapshots of student and teacher.
pub fn fit<F: Scalar>(
    model: Model<F>,
    data: &TrainData<F>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<FitOutcome<F>> {
    let mut state = TrainState::new(model);
    train_epochs(&mut state, data, cfg, seed, cfg.epochs)?;
    Ok(FitOutcome {
        student: state.student,
        teacher: state.teacher,
        best_student: state.best_student,
        best_teacher: state.best_teacher,
        best_epoch: state.best_epoch,
        log: state.log,
    })
}

/// Advance training from `state.epochs_done` up to (not beyond) `upto`.
pub fn train_epochs<F: Scalar>(
    state: &mut TrainState<F>,
    data: &TrainData<F>,
    cfg: &TrainConfig,
    seed: u64,
    upto: usize,
) -> Result<()> {
    cfg.validate()?;
    if data.strong.is_empty() {
        return Err(config_err("fit: the strong split must be non-empty"));
    }
    if upto > cfg.epochs {
        return Err(config_err("train_epochs: upto exceeds configured epochs"));
    }

    let ns_b = cfg.batch_strong.min(data.strong.len());
    let nw_b = cfg.batch_weak.min(data.weak.len());
    let nu_b = cfg.batch_unlabeled.min(data.unlabeled.len());
    let steps = data.strong.len().div_ceil(ns_b.max(1)).max(1);

    for epoch in state.epochs_done..upto {
        let student = &mut state.student;
        let teacher = &mut state.teacher;
        let lr = cosine_lr(cfg.lr, epoch, cfg.epochs);
        let wc = w_cons(cfg, epoch);
        let perm_s = shuffled(data.strong.len(), seed, "shuffle-strong", epoch);
        let perm_w = shuffled(data.weak.len(), seed, "shuffle-weak", epoch);
        let perm_u = shuffled(data.unlabeled.len(), seed, "shuffle-unlabeled", epoch);
        let mut drop_rng = substream_indexed(seed, "dropout", epoch as u64);
        let mut aug_rng = substream_indexed(seed, "augment", epoch as u64);

        let (mut e_total, mut e_strong, mut e_weak, mut e_cons) = (0.0, 0.0, 0.0, 0.0);
        for step in 0..steps {
            let pick = |perm: &[usize], n: usize| -> Vec<usize> {
                (0..n).map(|i| perm[(step * n + i) % perm.len().max(1)]).collect()
            };
            let mut clips: Vec<FeatureClip<F>> = Vec::new();
            for &i in &pick(&perm_s, ns_b) {
                clips.push(data.strong[i].clone());
            }
            for &i in &pick(&perm_w, nw_b) {
                clips.push(data.weak[i].clone());
            }
            for &i in &pick(&perm_u, nu_b) {
                clips.push(data.unlabeled[i].clone());
            }
            if cfg.filter_augment {
                for c in clips.iter_mut() {
                    c.mel = crate::datakit::filter_augment(
                        &c.mel,
                        FilterKind::Linear,
                        cfg.filter_bands,
                        cfg.filter_db,
                        &mut aug_rng,
                    )?;
                }
            }
            let refs: Vec<&FeatureClip<F>> = clips.iter().collect();
            let (mel, strong_t, weak_t) = stack_batch(&refs)?;

            // teacher pass first: values only, outside the student's tape
            let teacher_out = if wc > 0.0 {
                let mut tt = Tape::new();
                let tvars = teacher.params.leaf_all(&mut tt);
                let tx = tt.leaf(mel.clone());
                let tp = teacher.forward(&mut tt, &tvars, tx, BnMode::Eval, None, None)?;
                Some((tt.value(tp.strong).clone(), tt.value(tp.weak).clone()))
            } else {
                None
            };

            let mut tape = Tape::new();
            let vars = student.params.leaf_all(&mut tape);
            let x = tape.leaf(mel);
            let preds =
                student.forward(&mut tape, &vars, x, BnMode::Train, Some(&mut drop_rng), None)?;

            // strong BCE on the strong subset
            let strong_rows = slice_outer(&mut tape, preds.strong, 0, ns_b)?;
            let strong_tgt = slice_rows(&strong_t, 0, ns_b);
            let l_strong = bce_loss(&mut tape, strong_rows, &strong_tgt)?;

            // weak BCE on strong + weak subsets
            let labeled = ns_b + nw_b;
            let weak_rows = slice_outer(&mut tape, preds.weak, 0, labeled)?;
            let weak_tgt = slice_rows(&weak_t, 0, labeled);
            let l_weak = bce_loss(&mut tape, weak_rows, &weak_tgt)?;

            let mut total = {
                let ww = scale(&mut tape, l_weak, cfg.w_weak);
                add(&mut tape, l_strong, ww)?
            };
            let mut cons_val = 0.0;
            if let Some((ts, tw)) = teacher_out {
                let l_cons = consistency_loss(&mut tape, preds.strong, preds.weak, &ts, &tw)?;
                cons_val = scalar_of(&tape, l_cons);
                let wcv = scale(&mut tape, l_cons, wc);
                total = add(&mut tape, total, wcv)?;
            }

            let total_v = scalar_of(&tape, total);
            if !total_v.is_finite() {
                return Err(Error::Numeric(format!(
                    "training diverged: non-finite loss at epoch {epoch}, step {step}"
                )));
            }
            let grads = tape.backward(total)?;
            let mut gvec: Vec<Tensor<F>> = vars
                .iter()
                .enumerate()
                .map(|(i, &v)| grads.get_or_zeros(v, student.params.get(crate::params::ParamId(i)).shape()))
                .collect();
            clip_global_norm(&mut gvec, cfg.grad_clip);
            state.adam.step(student, &gvec, lr, cfg);
            ema_update(teacher, student, cfg.ema_alpha)?;

            e_total += total_v;
            e_strong += scalar_of(&tape, l_strong);
            e_weak += scalar_of(&tape, l_weak);
            e_cons += cons_val;
        }

        let inv = 1.0 / steps as f64;
        let val_bce = if data.val.is_empty() {
            e_total * inv
        } else {
            eval_bce(student, &data.val)?
        };
        state.log.push(EpochLog {
            epoch,
            total: e_total * inv,
            strong: e_strong * inv,
            weak: e_weak * inv,
            cons: e_cons * inv,
            lr,
            w_cons: wc,
            val_bce,
        });
        if val_bce < state.best_val {
            state.best_val = val_bce;
            state.best_epoch = epoch;
            state.best_student = state.student.clone();
            state.best_teacher = state.teacher.clone();
        }
        state.epochs_done = epoch + 1;
    }
    Ok(())
}

/// First `n` rows of a [R, ...] tensor.
fn slice_rows<F: Scalar>(t: &Tensor<F>, start: usize, n: usize) -> Tensor<F> {
    let s = t.shape();
    let inner: usize = s[1..].iter().product();
    let mut shape = s.to_vec();
    shape[0] = n;
    Tensor::new(&shape, t.data()[start * inner..(start + n) * inner].to_vec()).expect("row slice")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crnn::{build_model, ModelConfig};
    use crate::datakit::{synth_clip, Supervision};

    #[test]
    fn cosine_schedule_endpoints() {
        assert!((cosine_lr(0.001, 0, 200) - 0.001).abs() < 1e-15);
        assert!(cosine_lr(0.001, 200, 200).abs() < 1e-15);
        assert!((cosine_lr(0.001, 100, 200) - 0.0005).abs() < 1e-15);
    }

    #[test]
    fn consistency_ramp_endpoints() {
        let cfg = TrainConfig { w_cons_max: 2.0, ramp_epochs: 50, ..TrainConfig::default() };
        assert_eq!(w_cons(&cfg, 0), 0.0);
        assert_eq!(w_cons(&cfg, 25), 1.0);
        assert_eq!(w_cons(&cfg, 50), 2.0);
        assert_eq!(w_cons(&cfg, 120), 2.0);
    }

    #[test]
    fn config_invariants_are_enforced() {
        let mut c = TrainConfig::default();
        c.ema_alpha = 1.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.ramp_epochs = c.epochs + 1;
        assert!(c.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn bce_of_uniform_half_is_ln2() {
        let mut tape = Tape::<f64>::new();
        let p = tape.leaf(Tensor::full(&[3, 4], 0.5));
        let t = Tensor::from_fn(&[3, 4], |i| (i % 2) as f64);
        let l = bce_loss(&mut tape, p, &t).unwrap();
        assert!((tape.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn ema_is_a_contraction_by_alpha() {
        // exact identity on the canonical scalar case: teacher 0, student 1
        let cfg = ModelConfig::baseline(3, true);
        let mut student = build_model::<f64>(&cfg, 1).unwrap();
        let mut teacher = student.clone();
        for i in 0..student.params.len() {
            let id = crate::params::ParamId(i);
            let shape = student.params.get(id).shape().to_vec();
            student.params.set(id, Tensor::full(&shape, 1.0));
            teacher.params.set(id, Tensor::zeros(&shape));
        }
        ema_update(&mut teacher, &student, 0.99).unwrap();
        let expect = 0.99 * 0.0 + (1.0 - 0.99) * 1.0;
        for (_, t) in teacher.params.iter() {
            for &v in t.data() {
                assert_eq!(v, expect, "EMA scalar identity must hold exactly");
            }
        }

        // general case: the teacher-student gap shrinks by alpha elementwise
        let student = build_model::<f64>(&cfg, 1).unwrap();
        let mut teacher = build_model::<f64>(&cfg, 2).unwrap();
        let before: Vec<f64> = teacher
            .params
            .iter()
            .zip(student.params.iter())
            .flat_map(|((_, t), (_, s))| t.data().iter().zip(s.data()).map(|(a, b)| a - b).collect::<Vec<_>>())
            .collect();
        ema_update(&mut teacher, &student, 0.99).unwrap();
        let after: Vec<f64> = teacher
            .params
            .iter()
            .zip(student.params.iter())
            .flat_map(|((_, t), (_, s))| t.data().iter().zip(s.data()).map(|(a, b)| a - b).collect::<Vec<_>>())
            .collect();
        for (a, b) in after.iter().zip(&before) {
            assert!((a - 0.99 * b).abs() <= 1e-15 * b.abs().max(1.0));
        }
    }

    #[test]
    fn ema_endpoints() {
        let cfg = ModelConfig::baseline(3, true);
        let student = build_model::<f64>(&cfg, 1).unwrap();
        let orig = build_model::<f64>(&cfg, 2).unwrap();
        let mut t1 = orig.clone();
        ema_update(&mut t1, &student, 1.0).unwrap();
        for ((_, a), (_, b)) in t1.params.iter().zip(orig.params.iter()) {
            assert_eq!(a.data(), b.data());
        }
        let mut t0 = orig.clone();
        ema_update(&mut t0, &student, 0.0).unwrap();
        for ((_, a), (_, b)) in t0.params.iter().zip(student.params.iter()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn consistency_matches_mse_arithmetic() {
        let mut tape = Tape::<f64>::new();
        let s = tape.leaf(Tensor::zeros(&[2, 3]));
        let w = tape.leaf(Tensor::zeros(&[2]));
        let ts = Tensor::full(&[2, 3], 1.0);
        let tw = Tensor::full(&[2], 1.0);
        let l = consistency_loss(&mut tape, s, w, &ts, &tw).unwrap();
        assert!((tape.value(l).data()[0] - 2.0).abs() < 1e-12);
        let same = consistency_loss(&mut tape, s, w, &Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2])).unwrap();
        assert_eq!(tape.value(same).data()[0], 0.0);
    }

    #[test]
    fn global_norm_clip_scales_to_the_bound() {
        let mut g = vec![Tensor::<f64>::full(&[4], 3.0), Tensor::full(&[9], 4.0)];
        // norm = sqrt(4*9 + 9*16) = sqrt(180)
        let norm = clip_global_norm(&mut g, 5.0);
        assert!((norm - 180f64.sqrt()).abs() < 1e-12);
        let mut sq = 0.0;
        for t in &g {
            sq += t.data().iter().map(|v| v * v).sum::<f64>();
        }
        assert!((sq.sqrt() - 5.0).abs() < 1e-9);
        // already inside the bound: untouched
        let mut small = vec![Tensor::<f64>::full(&[2], 0.1)];
        clip_global_norm(&mut small, 5.0);
        assert_eq!(small[0].data(), &[0.1, 0.1]);
    }

    fn tiny_data(n: usize, time_pool: usize) -> Vec<FeatureClip<f64>> {
        let mel_cfg = MelConfig { n_mels: 64, ..MelConfig::default() };
        (0..n)
            .map(|i| {
                let c = synth_clip(100 + i as u64, &[0, 1, 2], 1.0, 16000).unwrap();
                featurize(&c, &mel_cfg, time_pool, 3).unwrap()
            })
            .collect()
    }

    #[test]
    fn fit_runs_and_is_deterministic() {
        let cfg_m = ModelConfig::baseline(3, true);
        let tp = cfg_m.total_time_pool();
        let data = TrainData {
            strong: tiny_data(4, tp),
            weak: Vec::new(),
            unlabeled: Vec::new(),
            val: Vec::new(),
        };
        let cfg = TrainConfig {
            epochs: 2,
            batch_strong: 4,
            batch_weak: 0,
            batch_unlabeled: 0,
            w_cons_max: 1.0,
            ramp_epochs: 1,
            filter_augment: false,
            ..TrainConfig::default()
        };
        let run = |seed| {
            let m = build_model::<f64>(&cfg_m, 5).unwrap();
            fit(m, &data, &cfg, seed).unwrap()
        };
        let a = run(3);
        let b = run(3);
        assert_eq!(a.log.len(), 2);
        assert!((a.log[1].total - b.log[1].total).abs() < 1e-6);
        assert!(a.log.iter().all(|e| e.total.is_finite()));
        // consistency is active from epoch 1 under ramp_epochs = 1
        assert_eq!(a.log[0].w_cons, 0.0);
        assert_eq!(a.log[1].w_cons, 1.0);
        let c = run(4);
        assert_ne!(a.log[1].total, c.log[1].total);
    }

    #[test]
    fn resume_reproduces_the_uninterrupted_run() {
        let cfg_m = ModelConfig::baseline(3, true);
        let tp = cfg_m.total_time_pool();
        let data = TrainData {
            strong: tiny_data(4, tp),
            weak: Vec::new(),
            unlabeled: Vec::new(),
            val: Vec::new(),
        };
        let cfg = TrainConfig {
            epochs: 4,
            batch_strong: 4,
            batch_weak: 0,
            batch_unlabeled: 0,
            w_cons_max: 1.0,
            ramp_epochs: 2,
            filter_augment: true,
            ..TrainConfig::default()
        };
        let straight = fit(build_model::<f64>(&cfg_m, 5).unwrap(), &data, &cfg, 3).unwrap();
        let mut state = TrainState::new(build_model::<f64>(&cfg_m, 5).unwrap());
        train_epochs(&mut state, &data, &cfg, 3, 2).unwrap();
        // clone simulates a checkpoint restore
        let mut resumed = state.clone();
        train_epochs(&mut resumed, &data, &cfg, 3, 4).unwrap();
        assert_eq!(resumed.log.len(), straight.log.len());
        for (a, b) in resumed.log.iter().zip(&straight.log) {
            assert_eq!(a.total, b.total, "epoch {} diverged after resume", a.epoch);
        }
    }

    #[test]
    fn featurize_grids_align() {
        let mel_cfg = MelConfig { n_mels: 64, ..MelConfig::default() };
        let clip = synth_clip(9, &[0, 1], 2.0, 16000).unwrap();
        let f: FeatureClip<f64> = featurize(&clip, &mel_cfg, 4, 5).unwrap();
        assert_eq!(f.mel.shape()[0], 64);
        assert_eq!(f.strong.shape()[0], f.mel.shape()[1] / 4);
        assert_eq!(f.strong.shape()[1], 5);
        assert_eq!(f.supervision, Supervision::Strong);
        // every labeled class appears in both target resolutions
        for &c in &clip.weak_labels {
            assert_eq!(f.weak.data()[c], 1.0);
            let frames = f.strong.shape()[0];
            let any = (0..frames).any(|t| f.strong.data()[t * 5 + c] == 1.0);
            assert!(any, "class {c} lost in rasterization");
        }
    }

    #[test]
    fn adam_descends_a_quadratic() {
        // hand-rolled Adam recurrence on loss = x², expect movement toward 0
        let mut m = Tensor::<f64>::zeros(&[1]);
        let mut v = Tensor::<f64>::zeros(&[1]);
        let mut x = 1.0f64;
        for t in 1..=50 {
            let g = 2.0 * x;
            m.data_mut()[0] = 0.9 * m.data()[0] + 0.1 * g;
            v.data_mut()[0] = 0.999 * v.data()[0] + 0.001 * g * g;
            let mh = m.data()[0] / (1.0 - 0.9f64.powi(t));
            let vh = v.data()[0] / (1.0 - 0.999f64.powi(t));
            x -= 0.05 * mh / (vh.sqrt() + ADAM_EPS);
        }
        assert!(x.abs() < 1.0, "Adam failed to descend");
    }
}
