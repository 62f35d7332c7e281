//! Subcommand implementations. Each returns through the shared error type;
//! the binary maps error classes to exit codes.

use std::collections::BTreeMap;
use std::path::Path;

use freqdyn_core::crnn::{build_model, collect_attention, Model, ModelConfig};
use freqdyn_core::datakit::{ClipExample, EventInterval, CLASS_NAMES, N_CLASSES};
use freqdyn_core::error::{config_err, Error};
use freqdyn_core::evalkit::{
    attention_variance, collar_f1, decode_events, default_thresholds, macro_f1, median_filter,
    pca_project, threshold_sweep, weak_mask, MatchResult, ScoreMatrix, PROXY_PSDS_DISCLAIMER,
};
use freqdyn_core::features::{log_mel, normalize_unit, MelConfig};
use freqdyn_core::gradcheck::{model_suite, primitive_suite, variant_suite, SuiteEntry};
use freqdyn_core::io::{load_checkpoint, save_checkpoint, write_tensor};
use freqdyn_core::ops::BnMode;
use freqdyn_core::tape::Tape;
use freqdyn_core::tensor::Tensor;
use freqdyn_core::trainer::{featurize, train_epochs, TrainData, TrainState};
use freqdyn_core::Result;

use crate::config::{self, build_model_config, EvalSection, RunConfig};
use crate::data;
use crate::util::par_map;

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))
}

pub fn cmd_gen(cfg_path: &Path, out: &Path, seed: u64, threads: usize) -> Result<()> {
    let (cfg, raw) = config::load(cfg_path)?;
    let clips = data::generate(seed, &cfg.data, threads)?;
    ensure_dir(out)?;
    data::write(out, &clips)?;
    std::fs::write(out.join("config.toml"), raw)?;
    let d = &cfg.data;
    println!(
        "wrote {} clips to {} (strong {}, weak {}, unlabeled {}, val {})",
        clips.len(),
        out.display(),
        d.n_strong,
        d.n_weak,
        d.n_unlabeled,
        d.n_val
    );
    Ok(())
}

pub fn cmd_features(cfg_path: &Path, data_dir: &Path, out: &Path, threads: usize) -> Result<()> {
    let (cfg, _) = config::load(cfg_path)?;
    let loaded = data::load(data_dir, threads)?;
    ensure_dir(out)?;
    let mut all: Vec<&(String, ClipExample)> = Vec::new();
    for split in data::SPLITS {
        all.extend(loaded.split(split)?.iter());
    }
    let mels = par_map(&all, threads, |(_, clip)| {
        Ok(normalize_unit(&log_mel(&clip.wave, &cfg.features)?))
    })?;
    for ((name, _), mel) in all.iter().zip(&mels) {
        let stem = name.strip_suffix(".wav").unwrap_or(name);
        write_tensor(&out.join(format!("{stem}.fdyt")), mel)?;
    }
    println!("wrote {} feature tensors to {}", mels.len(), out.display());
    Ok(())
}

fn featurize_split(
    clips: &[(String, ClipExample)],
    mel_cfg: &MelConfig,
    time_pool: usize,
    threads: usize,
) -> Result<Vec<freqdyn_core::datakit::FeatureClip<f32>>> {
    par_map(clips, threads, |(_, clip)| featurize::<f32>(clip, mel_cfg, time_pool, N_CLASSES))
}

pub fn cmd_train(
    cfg_path: &Path,
    data_dir: &Path,
    out: &Path,
    seed: u64,
    threads: usize,
    resume: bool,
    variant: Option<&str>,
    stop_after: Option<usize>,
) -> Result<()> {
    let (mut cfg, raw) = config::load(cfg_path)?;
    if let Some(v) = variant {
        cfg.model.variant = v.to_string();
    }
    let mcfg = build_model_config(&cfg.model, cfg.n_classes())?;
    let tcfg = cfg.train.clone();
    tcfg.validate()?;

    let loaded = data::load(data_dir, threads)?;
    let tp = mcfg.total_time_pool();
    let td = TrainData {
        strong: featurize_split(&loaded.strong, &cfg.features, tp, threads)?,
        weak: featurize_split(&loaded.weak, &cfg.features, tp, threads)?,
        unlabeled: featurize_split(&loaded.unlabeled, &cfg.features, tp, threads)?,
        val: featurize_split(&loaded.val, &cfg.features, tp, threads)?,
    };

    ensure_dir(out)?;
    std::fs::write(out.join("config.toml"), &raw)?;
    let ckpt = out.join("checkpoint");

    let mut state = if resume && ckpt.join("manifest.toml").exists() {
        let (state, saved) = load_checkpoint::<f32>(&ckpt)?;
        if saved != mcfg {
            return Err(config_err("resume: checkpoint was trained with a different model config"));
        }
        println!("resuming from epoch {}", state.epochs_done);
        state
    } else {
        TrainState::new(build_model::<f32>(&mcfg, seed)?)
    };

    let upto = stop_after.unwrap_or(tcfg.epochs).min(tcfg.epochs);
    if state.epochs_done >= upto {
        println!("nothing to do: {} epochs already trained", state.epochs_done);
        return Ok(());
    }
    println!(
        "training {} ({} params) for {} epochs on {} strong / {} weak / {} unlabeled clips",
        cfg.model.variant,
        state.student.count_params(),
        tcfg.epochs,
        td.strong.len(),
        td.weak.len(),
        td.unlabeled.len()
    );
    for epoch in state.epochs_done..upto {
        train_epochs(&mut state, &td, &tcfg, seed, epoch + 1)?;
        save_checkpoint(&ckpt, &state, &mcfg)?;
        let l = state.log.last().expect("epoch logged");
        println!(
            "epoch {:>4}  total {:.4}  strong {:.4}  weak {:.4}  cons {:.4}  val {:.4}",
            l.epoch, l.total, l.strong, l.weak, l.cons, l.val_bce
        );
    }
    println!("best epoch {} (val {:.4}); checkpoint at {}", state.best_epoch, state.best_val, ckpt.display());
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum WhichModel {
    Student,
    Teacher,
    BestStudent,
    BestTeacher,
}

fn pick_model(state: TrainState<f32>, which: WhichModel) -> Model<f32> {
    match which {
        WhichModel::Student => state.student,
        WhichModel::Teacher => state.teacher,
        WhichModel::BestStudent => state.best_student,
        WhichModel::BestTeacher => state.best_teacher,
    }
}

fn load_run(run: &Path, which: WhichModel) -> Result<(RunConfig, ModelConfig, Model<f32>)> {
    let (cfg, _) = config::load(&run.join("config.toml"))?;
    let (state, mcfg) = load_checkpoint::<f32>(&run.join("checkpoint"))?;
    Ok((cfg, mcfg, pick_model(state, which)))
}

/// Run one clip through the model in eval mode and return frame scores plus
/// clip-level probabilities.
fn score_clip(
    model: &mut Model<f32>,
    mel: &Tensor<f32>,
    pooled_hop: f64,
) -> Result<(ScoreMatrix, Vec<f64>)> {
    let s = mel.shape();
    let batch = Tensor::from_fn(&[1, 1, s[0], s[1]], |i| mel.data()[i]);
    let mut tape = Tape::new();
    let vars = model.params.leaf_all(&mut tape);
    let x = tape.leaf(batch);
    let preds = model.forward(&mut tape, &vars, x, BnMode::Eval, None, None)?;
    let strong = tape.value(preds.strong);
    let sh = strong.shape().to_vec();
    let frames = Tensor::from_fn(&[sh[1], sh[2]], |i| strong.data()[i] as f64);
    let weak: Vec<f64> = tape.value(preds.weak).data().iter().map(|&v| v as f64).collect();
    Ok((ScoreMatrix::new(frames, pooled_hop)?, weak))
}

fn post_process(scores: &ScoreMatrix, weak: &[f64], ev: &EvalSection) -> Result<(ScoreMatrix, Vec<EventInterval>)> {
    let masked = weak_mask(scores, weak, ev.weak_threshold)?;
    let smoothed = median_filter(&masked, ev.median_window)?;
    let events = decode_events(&smoothed, ev.threshold)?;
    Ok((smoothed, events))
}

pub struct EvalReport {
    pub per_class: Vec<MatchResult>,
    pub macro_f1: f64,
    pub proxy_psds: f64,
}

/// Shared scoring path: weak mask, median filter, decode, collar F1, sweep.
pub fn evaluate_split(
    model: &mut Model<f32>,
    clips: &[(String, ClipExample)],
    mel_cfg: &MelConfig,
    time_pool: usize,
    ev: &EvalSection,
    threads: usize,
) -> Result<EvalReport> {
    if clips.is_empty() {
        return Err(config_err("eval: split is empty"));
    }
    let pooled_hop = time_pool as f64 * mel_cfg.hop as f64 / mel_cfg.sample_rate as f64;
    let mels = par_map(clips, threads, |(_, clip)| {
        Ok(normalize_unit(&log_mel(&clip.wave, mel_cfg)?))
    })?;
    let mut per_class = vec![MatchResult::default(); N_CLASSES];
    let mut sweep_input = Vec::with_capacity(clips.len());
    for ((_, clip), mel) in clips.iter().zip(&mels) {
        let (scores, weak) = score_clip(model, mel, pooled_hop)?;
        let (smoothed, events) = post_process(&scores, &weak, ev)?;
        let counts =
            collar_f1(&clip.strong_labels, &events, N_CLASSES, ev.onset_collar, ev.offset_ratio)?;
        for (agg, c) in per_class.iter_mut().zip(&counts) {
            agg.merge(c);
        }
        sweep_input.push((smoothed, clip.strong_labels.clone()));
    }
    let curve = threshold_sweep(&sweep_input, &default_thresholds())?;
    Ok(EvalReport { macro_f1: macro_f1(&per_class), per_class, proxy_psds: curve.proxy_psds })
}

pub fn render_report(report: &EvalReport) -> String {
    let mut s = String::new();
    s.push_str("class              tp    fp    fn     f1\n");
    for (ci, m) in report.per_class.iter().enumerate() {
        s.push_str(&format!(
            "{:<16} {:>4}  {:>4}  {:>4}  {:.4}\n",
            CLASS_NAMES[ci], m.tp, m.fp, m.fn_, m.f1()
        ));
    }
    s.push_str(&format!("macro collar F1  {:.4}\n", report.macro_f1));
    s.push_str(&format!("proxy-PSDS       {:.4}\n", report.proxy_psds));
    s.push_str(&format!("note: {PROXY_PSDS_DISCLAIMER}\n"));
    s
}

pub fn cmd_eval(
    run: &Path,
    data_dir: &Path,
    split: &str,
    which: WhichModel,
    out: Option<&Path>,
    threads: usize,
) -> Result<()> {
    let (cfg, mcfg, mut model) = load_run(run, which)?;
    if mcfg.n_classes != N_CLASSES {
        return Err(config_err(format!(
            "class-count mismatch: model has {} classes, references use {}",
            mcfg.n_classes, N_CLASSES
        )));
    }
    let loaded = data::load(data_dir, threads)?;
    let clips = loaded.split(split)?;
    if matches!(split, "weak" | "unlabeled") {
        return Err(config_err(format!("split {split:?} has no interval references to score against")));
    }
    let report = evaluate_split(
        &mut model,
        clips,
        &cfg.features,
        mcfg.total_time_pool(),
        &cfg.eval,
        threads,
    )?;
    let text = render_report(&report);
    print!("{text}");
    if let Some(path) = out {
        let mut csv = String::from("class,tp,fp,fn,f1\n");
        for (ci, m) in report.per_class.iter().enumerate() {
            csv.push_str(&format!("{},{},{},{},{:.6}\n", CLASS_NAMES[ci], m.tp, m.fp, m.fn_, m.f1()));
        }
        csv.push_str(&format!("macro,,,,{:.6}\n", report.macro_f1));
        csv.push_str(&format!("proxy_psds,,,,{:.6}\n", report.proxy_psds));
        std::fs::write(path, csv)?;
        println!("report written to {}", path.display());
    }
    Ok(())
}

pub fn cmd_diag(
    run: &Path,
    data_dir: &Path,
    split: &str,
    out: &Path,
    which: WhichModel,
    limit: usize,
    threads: usize,
) -> Result<()> {
    let (cfg, _mcfg, mut model) = load_run(run, which)?;
    if !model.has_dynamic_layer() {
        return Err(config_err("no dynamic layers: the model is built from plain convolutions"));
    }
    let loaded = data::load(data_dir, threads)?;
    let clips = loaded.split(split)?;
    if clips.is_empty() {
        return Err(config_err("diag: split is empty"));
    }
    let take = clips.len().min(limit.max(1));
    let mels = par_map(&clips[..take], threads, |(_, clip)| {
        Ok(normalize_unit(&log_mel(&clip.wave, &cfg.features)?))
    })?;

    // (layer, branch) -> per-frequency attention vectors pooled over clips.
    let mut groups: BTreeMap<(usize, usize), Vec<(usize, Vec<f64>)>> = BTreeMap::new();
    for mel in &mels {
        let s = mel.shape();
        let batch = Tensor::from_fn(&[1, 1, s[0], s[1]], |i| mel.data()[i]);
        let rec = collect_attention(&mut model, &batch)?;
        for record in &rec.records {
            let f = record.pi.shape()[2];
            let vectors = freqdyn_core::dynconv::AttnRecorder::vectors(record);
            let entry = groups.entry((record.layer, record.branch)).or_default();
            for (i, v) in vectors.into_iter().enumerate() {
                entry.push((i % f, v));
            }
        }
    }

    ensure_dir(out)?;
    let mut pca_csv = String::from("layer,branch,freq,pc1,pc2\n");
    let mut var_csv = String::from("layer,branch,count,variance,explained1,explained2\n");
    for ((layer, branch), entries) in &groups {
        let vectors: Vec<Vec<f64>> = entries.iter().map(|(_, v)| v.clone()).collect();
        let variance = attention_variance(&vectors)?;
        let (coords, explained) = pca_project(&vectors)?;
        for ((freq, _), c) in entries.iter().zip(&coords) {
            pca_csv.push_str(&format!("{layer},{branch},{freq},{:.6},{:.6}\n", c[0], c[1]));
        }
        var_csv.push_str(&format!(
            "{layer},{branch},{},{:.6e},{:.6},{:.6}\n",
            vectors.len(),
            variance,
            explained[0],
            explained[1]
        ));
    }
    std::fs::write(out.join("pca.csv"), pca_csv)?;
    std::fs::write(out.join("variance.csv"), var_csv)?;
    println!(
        "diagnostics for {} dynamic layer/branch groups over {} clips written to {}",
        groups.len(),
        take,
        out.display()
    );
    Ok(())
}

const GRADCHECK_TOL: f64 = 1e-4;

pub fn cmd_gradcheck(scope: &str, seed: u64) -> Result<()> {
    let suites: Vec<(&str, fn(u64) -> Result<Vec<SuiteEntry>>)> = match scope {
        "primitive" => vec![("primitive", primitive_suite)],
        "variant" => vec![("variant", variant_suite)],
        "model" => vec![("model", model_suite)],
        "all" => vec![
            ("primitive", primitive_suite),
            ("variant", variant_suite),
            ("model", model_suite),
        ],
        other => {
            return Err(config_err(format!(
                "unknown scope {other:?} (expected primitive|variant|model|all)"
            )))
        }
    };
    let mut failures = 0usize;
    for (name, suite) in suites {
        for (case, err) in suite(seed)? {
            let ok = err < GRADCHECK_TOL;
            if !ok {
                failures += 1;
            }
            println!(
                "{name:<10} {case:<24} {err:>12.3e}  {}",
                if ok { "pass" } else { "FAIL" }
            );
        }
    }
    if failures > 0 {
        return Err(Error::Numeric(format!(
            "{failures} gradient check(s) exceeded {GRADCHECK_TOL:e}"
        )));
    }
    Ok(())
}

pub fn cmd_params(toy: bool) -> Result<()> {
    // Published sizes are quoted for 10 output classes; keep that width so
    // the table is comparable.
    let n = 10;
    let rows: Vec<(String, ModelConfig)> = vec![
        ("baseline".into(), ModelConfig::baseline(n, toy)),
        ("fdy".into(), ModelConfig::fdy(n, toy)),
        ("dfd".into(), ModelConfig::dfd(n, toy)),
        ("pfd 1/8".into(), ModelConfig::pfd(n, 1, toy)?),
        ("tfd".into(), ModelConfig::tfd(n, toy)),
        ("mdfd".into(), ModelConfig::mdfd(n, toy)),
    ];
    println!("variant    params      (n_classes = {n}, {})", if toy { "toy" } else { "full" });
    for (name, cfg) in rows {
        let count = build_model::<f32>(&cfg, 0)?.count_params();
        println!("{name:<10} {count:>10}  ({:.3}M)", count as f64 / 1e6);
    }
    Ok(())
}
