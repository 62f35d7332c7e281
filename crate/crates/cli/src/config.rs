//! Run configuration: one TOML document with a section per pipeline stage.

use std::path::Path;

use freqdyn_core::crnn::ModelConfig;
use freqdyn_core::datakit::{class_id, CLASS_NAMES, CLIP_LEN_S, N_CLASSES};
use freqdyn_core::error::{config_err, Error};
use freqdyn_core::features::MelConfig;
use freqdyn_core::trainer::TrainConfig;
use freqdyn_core::Result;
use serde::Deserialize;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataCfg {
    pub n_strong: usize,
    pub n_weak: usize,
    pub n_unlabeled: usize,
    pub n_val: usize,
    pub sample_rate: u32,
    pub clip_len_s: f64,
    /// Event classes to draw from; labels always index the full class list.
    pub classes: Vec<String>,
}

impl Default for DataCfg {
    fn default() -> Self {
        DataCfg {
            n_strong: 64,
            n_weak: 64,
            n_unlabeled: 128,
            n_val: 64,
            sample_rate: 16_000,
            clip_len_s: CLIP_LEN_S,
            classes: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl DataCfg {
    pub fn palette(&self) -> Result<Vec<usize>> {
        if self.classes.is_empty() {
            return Err(config_err("[data] classes must not be empty"));
        }
        self.classes
            .iter()
            .map(|n| class_id(n).ok_or_else(|| config_err(format!("unknown class {n:?}"))))
            .collect()
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// baseline | fdy | dfd | pfd | mdfd | tfd
    pub variant: String,
    pub toy: bool,
    /// Dynamic-channel numerator out of 8, for the pfd variant only.
    pub pfd_num: usize,
    /// Override the preset's dropout probability.
    pub dropout: Option<f64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { variant: "fdy".into(), toy: true, pfd_num: 1, dropout: None }
    }
}

pub fn build_model_config(m: &ModelSection, n_classes: usize) -> Result<ModelConfig> {
    let mut cfg = match m.variant.as_str() {
        "baseline" => ModelConfig::baseline(n_classes, m.toy),
        "fdy" => ModelConfig::fdy(n_classes, m.toy),
        "dfd" => ModelConfig::dfd(n_classes, m.toy),
        "pfd" => ModelConfig::pfd(n_classes, m.pfd_num, m.toy)?,
        "mdfd" => ModelConfig::mdfd(n_classes, m.toy),
        "tfd" => ModelConfig::tfd(n_classes, m.toy),
        other => {
            return Err(config_err(format!(
                "unknown model variant {other:?} (expected baseline|fdy|dfd|pfd|mdfd|tfd)"
            )))
        }
    };
    if let Some(p) = m.dropout {
        cfg.dropout = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Clip-level mask threshold tau.
    pub weak_threshold: f64,
    /// Frame decode threshold.
    pub threshold: f64,
    pub median_window: usize,
    pub onset_collar: f64,
    pub offset_ratio: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            weak_threshold: 0.5,
            threshold: 0.5,
            median_window: 7,
            onset_collar: 0.2,
            offset_ratio: 0.2,
        }
    }
}

impl EvalSection {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("weak_threshold", self.weak_threshold),
            ("threshold", self.threshold),
        ] {
            if !(0.0 < v && v < 1.0) {
                return Err(config_err(format!("[eval] {name} {v} outside (0, 1)")));
            }
        }
        if self.median_window % 2 == 0 {
            return Err(config_err("[eval] median_window must be odd"));
        }
        if self.onset_collar <= 0.0 || self.offset_ratio < 0.0 {
            return Err(config_err("[eval] collar parameters must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataCfg,
    pub features: MelConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.features.validate()?;
        cfg.train.validate()?;
        cfg.eval.validate()?;
        cfg.data.palette()?;
        if cfg.data.sample_rate != cfg.features.sample_rate {
            return Err(config_err(format!(
                "[data] sample_rate {} != [features] sample_rate {}",
                cfg.data.sample_rate, cfg.features.sample_rate
            )));
        }
        Ok(cfg)
    }

    pub fn n_classes(&self) -> usize {
        N_CLASSES
    }
}

/// Read, validate, and return both the parsed config and the raw bytes so
/// run directories can carry a verbatim echo.
pub fn load(path: &Path) -> Result<(RunConfig, String)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let cfg = RunConfig::parse(&text)?;
    Ok((cfg, text))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_and_validate() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg.data.n_strong, 64);
        assert_eq!(cfg.model.variant, "fdy");
        assert_eq!(cfg.eval.median_window, 7);
        assert_eq!(cfg.data.palette().unwrap(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("[data]\nn_strnog = 3\n").is_err());
        assert!(RunConfig::parse("[bogus]\nx = 1\n").is_err());
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(RunConfig::parse("[eval]\nmedian_window = 6\n").is_err());
        assert!(RunConfig::parse("[data]\nclasses = [\"gong\"]\n").is_err());
        assert!(RunConfig::parse("[data]\nsample_rate = 8000\n").is_err());
    }

    #[test]
    fn variants_build() {
        for v in ["baseline", "fdy", "dfd", "pfd", "mdfd", "tfd"] {
            let m = ModelSection { variant: v.into(), toy: true, pfd_num: 1, dropout: None };
            build_model_config(&m, N_CLASSES).unwrap();
        }
        let bad = ModelSection { variant: "fancy".into(), toy: true, pfd_num: 1, dropout: None };
        assert!(build_model_config(&bad, N_CLASSES).is_err());
    }
}
