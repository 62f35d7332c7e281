//! On-disk formats: FDYT tensor files, 16-bit PCM WAV, label TSVs, and
//! training checkpoints.
//!
//! FDYT layout: magic `FDYT`, one dtype byte (0 = f32, 1 = f64), one rank
//! byte, rank little-endian u64 dims, then the payload as consecutive
//! little-endian scalars. Files may hold several records back to back.
//!
//! A checkpoint directory holds `manifest.toml` (model configuration,
//! parameter names/shapes, counters), the four model snapshots (student,
//! teacher, and their best-validation copies) as FDYT record files with
//! matching batch-norm statistics, the Adam moments, and the metrics log.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::crnn::{build_model, Model, ModelConfig};
use crate::datakit::{class_id, EventInterval, CLASS_NAMES};
use crate::error::{config_err, Error, Result};
use crate::ops::BnStats;
use crate::params::ParamId;
use crate::tensor::{Scalar, Tensor};
use crate::trainer::{AdamState, EpochLog, TrainState};

const MAGIC: &[u8; 4] = b"FDYT";

/// Serialize one tensor record.
pub fn write_tensor_to<F: Scalar>(w: &mut impl Write, t: &Tensor<F>) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[F::DTYPE_CODE, t.rank() as u8])?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in t.data() {
        let v = v.to_f64s();
        match F::DTYPE_CODE {
            0 => w.write_all(&(v as f32).to_le_bytes())?,
            _ => w.write_all(&v.to_le_bytes())?,
        }
    }
    Ok(())
}

/// Read one tensor record; the stored dtype must match `F`.
pub fn read_tensor_from<F: Scalar>(r: &mut impl Read) -> Result<Tensor<F>> {
    let mut head = [0u8; 6];
    r.read_exact(&mut head)?;
    if &head[..4] != MAGIC {
        return Err(Error::Io("not an FDYT tensor record".into()));
    }
    if head[4] != F::DTYPE_CODE {
        return Err(Error::Io(format!(
            "dtype mismatch: file holds code {}, expected {}",
            head[4],
            F::DTYPE_CODE
        )));
    }
    let rank = head[5] as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        shape.push(u64::from_le_bytes(b) as usize);
    }
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let v = match F::DTYPE_CODE {
            0 => {
                let mut b = [0u8; 4];
                r.read_exact(&mut b)?;
                f32::from_le_bytes(b) as f64
            }
            _ => {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                f64::from_le_bytes(b)
            }
        };
        data.push(F::from_f64(v));
    }
    Tensor::new(&shape, data)
}

pub fn write_tensor<F: Scalar>(path: &Path, t: &Tensor<F>) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    write_tensor_to(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn read_tensor<F: Scalar>(path: &Path) -> Result<Tensor<F>> {
    let mut r = std::io::BufReader::new(fs::File::open(path)?);
    read_tensor_from(&mut r)
}

/// Write consecutive records into one file.
pub fn write_tensors<F: Scalar>(path: &Path, ts: &[&Tensor<F>]) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    for t in ts {
        write_tensor_to(&mut w, t)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tensors<F: Scalar>(path: &Path, n: usize) -> Result<Vec<Tensor<F>>> {
    let mut r = std::io::BufReader::new(fs::File::open(path)?);
    (0..n).map(|_| read_tensor_from(&mut r)).collect()
}

/// Write a mono 16-bit PCM WAV; samples are clamped to [-1, 1].
pub fn write_wav(path: &Path, wave: &[f32], sample_rate: u32) -> Result<()> {
    let data_len = (wave.len() * 2) as u32;
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    w.write_all(b"RIFF")?;
    w.write_all(&(36 + data_len).to_le_bytes())?;
    w.write_all(b"WAVE")?;
    w.write_all(b"fmt ")?;
    w.write_all(&16u32.to_le_bytes())?;
    w.write_all(&1u16.to_le_bytes())?; // PCM
    w.write_all(&1u16.to_le_bytes())?; // mono
    w.write_all(&sample_rate.to_le_bytes())?;
    w.write_all(&(sample_rate * 2).to_le_bytes())?; // byte rate
    w.write_all(&2u16.to_le_bytes())?; // block align
    w.write_all(&16u16.to_le_bytes())?; // bits per sample
    w.write_all(b"data")?;
    w.write_all(&data_len.to_le_bytes())?;
    for &s in wave {
        let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_all(&q.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Read a mono 16-bit PCM WAV back into [-1, 1] samples.
pub fn read_wav(path: &Path) -> Result<(Vec<f32>, u32)> {
    let bytes = fs::read(path)?;
    if bytes.len() < 44 || &bytes[..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Io(format!("{}: not a RIFF/WAVE file", path.display())));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body = &bytes[pos + 8..(pos + 8 + len).min(bytes.len())];
        match id {
            b"fmt " if body.len() >= 16 => {
                fmt = Some((
                    u16::from_le_bytes(body[0..2].try_into().unwrap()),
                    u16::from_le_bytes(body[2..4].try_into().unwrap()),
                    u32::from_le_bytes(body[4..8].try_into().unwrap()),
                    u16::from_le_bytes(body[14..16].try_into().unwrap()),
                ));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos += 8 + len + (len % 2);
    }
    let (codec, channels, rate, bits) =
        fmt.ok_or_else(|| Error::Io("wav: missing fmt chunk".into()))?;
    if codec != 1 || channels != 1 || bits != 16 {
        return Err(Error::Io(format!(
            "wav: want 16-bit PCM mono, got codec {codec}, {channels} ch, {bits} bits"
        )));
    }
    let body = data.ok_or_else(|| Error::Io("wav: missing data chunk".into()))?;
    let wave = body
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32767.0)
        .collect();
    Ok((wave, rate))
}

const STRONG_HEADER: &str = "filename\tonset\toffset\tevent_label";
const WEAK_HEADER: &str = "filename\tevent_labels";

/// Serialize strong labels, one row per event interval.
pub fn strong_tsv(entries: &[(String, Vec<EventInterval>)]) -> String {
    let mut s = String::from(STRONG_HEADER);
    s.push('\n');
    for (name, events) in entries {
        for e in events {
            s.push_str(&format!(
                "{name}\t{:.6}\t{:.6}\t{}\n",
                e.onset, e.offset, CLASS_NAMES[e.class_id]
            ));
        }
    }
    s
}

/// Parse strong labels grouped by filename, in first-seen order.
pub fn parse_strong_tsv(text: &str) -> Result<Vec<(String, Vec<EventInterval>)>> {
    let mut out: Vec<(String, Vec<EventInterval>)> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.is_empty() || line == STRONG_HEADER {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::Io(format!("tsv line {}: expected 4 columns", ln + 1)));
        }
        let onset: f64 = cols[1].parse().map_err(|_| Error::Io(format!("tsv line {}: bad onset", ln + 1)))?;
        let offset: f64 = cols[2].parse().map_err(|_| Error::Io(format!("tsv line {}: bad offset", ln + 1)))?;
        let class = class_id(cols[3])
            .ok_or_else(|| Error::Io(format!("tsv line {}: unknown class {}", ln + 1, cols[3])))?;
        let ev = EventInterval { class_id: class, onset, offset };
        match out.iter_mut().find(|(n, _)| n == cols[0]) {
            Some((_, v)) => v.push(ev),
            None => out.push((cols[0].to_string(), vec![ev])),
        }
    }
    Ok(out)
}

/// Serialize weak labels as comma-joined class names.
pub fn weak_tsv(entries: &[(String, Vec<usize>)]) -> String {
    let mut s = String::from(WEAK_HEADER);
    s.push('\n');
    for (name, classes) in entries {
        let joined: Vec<&str> = classes.iter().map(|&c| CLASS_NAMES[c]).collect();
        s.push_str(&format!("{name}\t{}\n", joined.join(",")));
    }
    s
}

pub fn parse_weak_tsv(text: &str) -> Result<Vec<(String, Vec<usize>)>> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.is_empty() || line == WEAK_HEADER {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 {
            return Err(Error::Io(format!("tsv line {}: expected 2 columns", ln + 1)));
        }
        let classes = cols[1]
            .split(',')
            .filter(|c| !c.is_empty())
            .map(|c| class_id(c).ok_or_else(|| Error::Io(format!("tsv line {}: unknown class {c}", ln + 1))))
            .collect::<Result<Vec<usize>>>()?;
        out.push((cols[0].to_string(), classes));
    }
    Ok(out)
}

/// Parse the trainer's metrics CSV back into epoch logs.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<EpochLog>> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if ln == 0 || line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 8 {
            return Err(Error::Io(format!("metrics line {}: expected 8 columns", ln + 1)));
        }
        let f = |i: usize| -> Result<f64> {
            cols[i].parse().map_err(|_| Error::Io(format!("metrics line {}: bad number", ln + 1)))
        };
        out.push(EpochLog {
            epoch: cols[0].parse().map_err(|_| Error::Io("bad epoch".into()))?,
            total: f(1)?,
            strong: f(2)?,
            weak: f(3)?,
            cons: f(4)?,
            lr: f(5)?,
            w_cons: f(6)?,
            val_bce: f(7)?,
        });
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: u32,
    dtype: String,
    epochs_done: usize,
    best_epoch: usize,
    best_val: f64,
    adam_t: u64,
    model: ModelConfig,
    params: Vec<ParamMeta>,
    bn_count: usize,
}

fn model_records<'a, F: Scalar>(m: &'a Model<F>) -> Vec<&'a Tensor<F>> {
    let mut ts: Vec<&Tensor<F>> = m.params.iter().map(|(_, t)| t).collect();
    for (_, bn) in m.bn_states() {
        ts.push(&bn.running_mean);
        ts.push(&bn.running_var);
    }
    ts
}

fn restore_model<F: Scalar>(cfg: &ModelConfig, path: &Path) -> Result<Model<F>> {
    let mut model = build_model::<F>(cfg, 0)?;
    let n = model.params.len() + 2 * model.bn_len();
    let ts = read_tensors::<F>(path, n)?;
    for (i, t) in ts[..model.params.len()].iter().enumerate() {
        if model.params.get(ParamId(i)).shape() != t.shape() {
            return Err(Error::Io(format!(
                "checkpoint: shape mismatch for parameter {}",
                model.params.name(ParamId(i))
            )));
        }
        model.params.set(ParamId(i), t.clone());
    }
    for i in 0..model.bn_len() {
        let base = model.params.len() + 2 * i;
        model.set_bn_state(
            i,
            BnStats { running_mean: ts[base].clone(), running_var: ts[base + 1].clone() },
        );
    }
    Ok(model)
}

/// Write a full training checkpoint into `dir` (created if missing).
pub fn save_checkpoint<F: Scalar>(dir: &Path, state: &TrainState<F>, cfg: &ModelConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        format: 1,
        dtype: if F::DTYPE_CODE == 0 { "f32".into() } else { "f64".into() },
        epochs_done: state.epochs_done,
        best_epoch: state.best_epoch,
        best_val: state.best_val,
        adam_t: state.adam.t,
        model: cfg.clone(),
        params: state
            .student
            .params
            .iter()
            .map(|(n, t)| ParamMeta { name: n.to_string(), shape: t.shape().to_vec() })
            .collect(),
        bn_count: state.student.bn_len(),
    };
    let text = toml::to_string_pretty(&manifest)
        .map_err(|e| Error::Io(format!("manifest serialization: {e}")))?;
    fs::write(dir.join("manifest.toml"), text)?;
    write_tensors(&dir.join("student.fdyt"), &model_records(&state.student))?;
    write_tensors(&dir.join("teacher.fdyt"), &model_records(&state.teacher))?;
    write_tensors(&dir.join("best_student.fdyt"), &model_records(&state.best_student))?;
    write_tensors(&dir.join("best_teacher.fdyt"), &model_records(&state.best_teacher))?;
    let m_refs: Vec<&Tensor<F>> = state.adam.m.iter().collect();
    let v_refs: Vec<&Tensor<F>> = state.adam.v.iter().collect();
    write_tensors(&dir.join("adam_m.fdyt"), &m_refs)?;
    write_tensors(&dir.join("adam_v.fdyt"), &v_refs)?;
    fs::write(dir.join("metrics.csv"), crate::trainer::metrics_csv(&state.log))?;
    Ok(())
}

/// Restore a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint<F: Scalar>(dir: &Path) -> Result<(TrainState<F>, ModelConfig)> {
    let text = fs::read_to_string(dir.join("manifest.toml"))?;
    let manifest: Manifest =
        toml::from_str(&text).map_err(|e| Error::Io(format!("manifest parse: {e}")))?;
    let want = if F::DTYPE_CODE == 0 { "f32" } else { "f64" };
    if manifest.dtype != want {
        return Err(config_err(format!(
            "checkpoint dtype {} does not match requested {want}",
            manifest.dtype
        )));
    }
    let cfg = manifest.model.clone();
    let student = restore_model::<F>(&cfg, &dir.join("student.fdyt"))?;
    let teacher = restore_model::<F>(&cfg, &dir.join("teacher.fdyt"))?;
    let best_student = restore_model::<F>(&cfg, &dir.join("best_student.fdyt"))?;
    let best_teacher = restore_model::<F>(&cfg, &dir.join("best_teacher.fdyt"))?;
    let n = student.params.len();
    let adam = AdamState {
        m: read_tensors::<F>(&dir.join("adam_m.fdyt"), n)?,
        v: read_tensors::<F>(&dir.join("adam_v.fdyt"), n)?,
        t: manifest.adam_t,
    };
    let log = parse_metrics_csv(&fs::read_to_string(dir.join("metrics.csv"))?)?;
    Ok((
        TrainState {
            student,
            teacher,
            best_student,
            best_teacher,
            adam,
            epochs_done: manifest.epochs_done,
            log,
            best_epoch: manifest.best_epoch,
            best_val: manifest.best_val,
        },
        cfg,
    ))
}
