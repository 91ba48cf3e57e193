//! Training configuration: a flat `key = value` file covering every knob,
//! with unknown keys rejected and a canonical serialization whose SHA-256
//! digest identifies an experiment.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::loss::LossConfigName;
use crate::model::{GenSizes, SampleMode};
use crate::tensor::Real;

/// How `y` is drawn during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingKind {
    Greedy,
    Multinomial,
    Soft,
}

impl SamplingKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(SamplingKind::Greedy),
            "multinomial" => Ok(SamplingKind::Multinomial),
            "soft" => Ok(SamplingKind::Soft),
            other => Err(Error::Config(format!(
                "unknown sampling mode `{other}` (expected greedy, multinomial or soft)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SamplingKind::Greedy => "greedy",
            SamplingKind::Multinomial => "multinomial",
            SamplingKind::Soft => "soft",
        }
    }

    pub fn hard_mode(&self) -> Option<SampleMode> {
        match self {
            SamplingKind::Greedy => Some(SampleMode::Greedy),
            SamplingKind::Multinomial => Some(SampleMode::Multinomial),
            SamplingKind::Soft => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    // model sizes
    pub d_emb: usize,
    pub d_enc: usize,
    pub d_dec: usize,
    pub d_attr: usize,
    pub d_disc: usize,
    pub bidirectional_encoder: bool,
    pub condition_on_attributes: bool,
    // optimization
    pub lr: Real,
    pub batch_size: usize,
    pub max_steps: usize,
    pub valid_interval: usize,
    pub warmup_steps: usize,
    pub clip_norm: Real,
    // objective
    pub loss_config: LossConfigName,
    pub gamma: Real,
    pub lambda: Real,
    pub gamma_grid: Vec<Real>,
    pub lambda_grid: Vec<Real>,
    // sampling
    pub sampling: SamplingKind,
    pub temp_init: Real,
    pub temp_floor: Real,
    pub temp_decay: Real,
    // data
    pub max_len: usize,
    /// 0 means "derive from the data": 1.5x the longest training sentence.
    pub gen_max_len: usize,
    pub min_count: usize,
    pub max_vocab: usize,
    pub embedding_file: Option<String>,
    // evaluation models and validation fan-out
    pub cls_steps: usize,
    pub lm_steps: usize,
    pub valid_subset: usize,
    pub bleu_corpus_level: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 42,
            d_emb: 48,
            d_enc: 48,
            d_dec: 64,
            d_attr: 8,
            d_disc: 48,
            bidirectional_encoder: false,
            condition_on_attributes: true,
            lr: 1e-3,
            batch_size: 16,
            max_steps: 3000,
            valid_interval: 250,
            warmup_steps: 1000,
            clip_norm: 5.0,
            loss_config: LossConfigName::IntAdv,
            gamma: 0.5,
            lambda: 1.0,
            gamma_grid: (0..=10).map(|i| i as Real / 10.0).collect(),
            lambda_grid: vec![0.5, 1.0, 1.5],
            sampling: SamplingKind::Greedy,
            temp_init: 1.0,
            temp_floor: 0.01,
            temp_decay: 0.997,
            max_len: 24,
            gen_max_len: 0,
            min_count: 1,
            max_vocab: 20_000,
            embedding_file: None,
            cls_steps: 600,
            lm_steps: 1000,
            valid_subset: 128,
            bleu_corpus_level: false,
        }
    }
}

impl TrainConfig {
    /// Desk-scale defaults.
    pub fn desk() -> Self {
        Self::default()
    }

    /// Full-scale preset: encoder 500, decoder 700, attribute embedding 200,
    /// discriminator 500 per direction.
    pub fn paper_preset() -> Self {
        TrainConfig {
            d_emb: 300,
            d_enc: 500,
            d_dec: 700,
            d_attr: 200,
            d_disc: 500,
            ..Self::default()
        }
    }

    pub fn gen_sizes(&self) -> GenSizes {
        GenSizes { d_emb: self.d_emb, d_enc: self.d_enc, d_dec: self.d_dec, d_attr: self.d_attr }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0,1], got {}", self.gamma)));
        }
        if self.lambda <= 0.0 {
            return Err(Error::Config(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if self.gamma_grid.is_empty() || self.lambda_grid.is_empty() {
            return Err(Error::Config("gamma_grid and lambda_grid must be nonempty".into()));
        }
        if self.gamma_grid.iter().any(|g| !(0.0..=1.0).contains(g)) {
            return Err(Error::Config("gamma_grid values must lie in [0,1]".into()));
        }
        if self.lambda_grid.iter().any(|l| *l <= 0.0) {
            return Err(Error::Config("lambda_grid values must be > 0".into()));
        }
        if !(self.temp_decay > 0.0 && self.temp_decay < 1.0) {
            return Err(Error::Config(format!(
                "temp_decay must lie in (0,1), got {}",
                self.temp_decay
            )));
        }
        if self.temp_floor <= 0.0 || self.temp_init < self.temp_floor {
            return Err(Error::Config("temperature schedule needs init >= floor > 0".into()));
        }
        if self.batch_size == 0 || self.max_len == 0 || self.valid_interval == 0 {
            return Err(Error::Config(
                "batch_size, max_len and valid_interval must be positive".into(),
            ));
        }
        for (name, v) in [
            ("d_emb", self.d_emb),
            ("d_enc", self.d_enc),
            ("d_dec", self.d_dec),
            ("d_attr", self.d_attr),
            ("d_disc", self.d_disc),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Canonical serialization; also the format accepted by [`Self::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let grid = |g: &[Real]| g.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(",");
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "d_emb = {}", self.d_emb);
        let _ = writeln!(s, "d_enc = {}", self.d_enc);
        let _ = writeln!(s, "d_dec = {}", self.d_dec);
        let _ = writeln!(s, "d_attr = {}", self.d_attr);
        let _ = writeln!(s, "d_disc = {}", self.d_disc);
        let _ = writeln!(s, "bidirectional_encoder = {}", self.bidirectional_encoder);
        let _ = writeln!(s, "condition_on_attributes = {}", self.condition_on_attributes);
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "max_steps = {}", self.max_steps);
        let _ = writeln!(s, "valid_interval = {}", self.valid_interval);
        let _ = writeln!(s, "warmup_steps = {}", self.warmup_steps);
        let _ = writeln!(s, "clip_norm = {}", self.clip_norm);
        let _ = writeln!(s, "loss_config = {}", self.loss_config.as_str());
        let _ = writeln!(s, "gamma = {}", self.gamma);
        let _ = writeln!(s, "lambda = {}", self.lambda);
        let _ = writeln!(s, "gamma_grid = {}", grid(&self.gamma_grid));
        let _ = writeln!(s, "lambda_grid = {}", grid(&self.lambda_grid));
        let _ = writeln!(s, "sampling = {}", self.sampling.as_str());
        let _ = writeln!(s, "temp_init = {}", self.temp_init);
        let _ = writeln!(s, "temp_floor = {}", self.temp_floor);
        let _ = writeln!(s, "temp_decay = {}", self.temp_decay);
        let _ = writeln!(s, "max_len = {}", self.max_len);
        let _ = writeln!(s, "gen_max_len = {}", self.gen_max_len);
        let _ = writeln!(s, "min_count = {}", self.min_count);
        let _ = writeln!(s, "max_vocab = {}", self.max_vocab);
        let _ = writeln!(s, "embedding_file = {}", self.embedding_file.as_deref().unwrap_or(""));
        let _ = writeln!(s, "cls_steps = {}", self.cls_steps);
        let _ = writeln!(s, "lm_steps = {}", self.lm_steps);
        let _ = writeln!(s, "valid_subset = {}", self.valid_subset);
        let _ = writeln!(s, "bleu_corpus_level = {}", self.bleu_corpus_level);
        s
    }

    /// SHA-256 of the canonical serialization.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_text().as_bytes());
        hex(&hasher.finalize())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Parse `key = value` lines. `preset = desk|paper` (anywhere in the
    /// file) selects the baseline; every other key overrides one field.
    /// Unknown keys are rejected with their line number.
    pub fn parse(text: &str) -> Result<Self> {
        let mut base = TrainConfig::default();
        for line in text.lines() {
            if let Some((k, v)) = split_kv(line) {
                if k == "preset" {
                    base = match v {
                        "desk" => TrainConfig::desk(),
                        "paper" => TrainConfig::paper_preset(),
                        other => {
                            return Err(Error::Config(format!(
                                "unknown preset `{other}` (expected desk or paper)"
                            )))
                        }
                    };
                }
            }
        }
        let mut cfg = base;
        for (lineno, line) in text.lines().enumerate() {
            let Some((k, v)) = split_kv(line) else { continue };
            let err = |what: &str| {
                Error::Config(format!("line {}: bad value for {k}: {what}", lineno + 1))
            };
            match k {
                "preset" => {}
                "seed" => cfg.seed = v.parse().map_err(|_| err("expected integer"))?,
                "d_emb" => cfg.d_emb = v.parse().map_err(|_| err("expected integer"))?,
                "d_enc" => cfg.d_enc = v.parse().map_err(|_| err("expected integer"))?,
                "d_dec" => cfg.d_dec = v.parse().map_err(|_| err("expected integer"))?,
                "d_attr" => cfg.d_attr = v.parse().map_err(|_| err("expected integer"))?,
                "d_disc" => cfg.d_disc = v.parse().map_err(|_| err("expected integer"))?,
                "bidirectional_encoder" => {
                    cfg.bidirectional_encoder = v.parse().map_err(|_| err("expected bool"))?
                }
                "condition_on_attributes" => {
                    cfg.condition_on_attributes = v.parse().map_err(|_| err("expected bool"))?
                }
                "lr" => cfg.lr = v.parse().map_err(|_| err("expected float"))?,
                "batch_size" => cfg.batch_size = v.parse().map_err(|_| err("expected integer"))?,
                "max_steps" => cfg.max_steps = v.parse().map_err(|_| err("expected integer"))?,
                "valid_interval" => {
                    cfg.valid_interval = v.parse().map_err(|_| err("expected integer"))?
                }
                "warmup_steps" => {
                    cfg.warmup_steps = v.parse().map_err(|_| err("expected integer"))?
                }
                "clip_norm" => cfg.clip_norm = v.parse().map_err(|_| err("expected float"))?,
                "loss_config" => cfg.loss_config = LossConfigName::parse(v)?,
                "gamma" => cfg.gamma = v.parse().map_err(|_| err("expected float"))?,
                "lambda" => cfg.lambda = v.parse().map_err(|_| err("expected float"))?,
                "gamma_grid" => cfg.gamma_grid = parse_grid(v).map_err(|_| err("expected floats"))?,
                "lambda_grid" => {
                    cfg.lambda_grid = parse_grid(v).map_err(|_| err("expected floats"))?
                }
                "sampling" => cfg.sampling = SamplingKind::parse(v)?,
                "temp_init" => cfg.temp_init = v.parse().map_err(|_| err("expected float"))?,
                "temp_floor" => cfg.temp_floor = v.parse().map_err(|_| err("expected float"))?,
                "temp_decay" => cfg.temp_decay = v.parse().map_err(|_| err("expected float"))?,
                "max_len" => cfg.max_len = v.parse().map_err(|_| err("expected integer"))?,
                "gen_max_len" => {
                    cfg.gen_max_len = v.parse().map_err(|_| err("expected integer"))?
                }
                "min_count" => cfg.min_count = v.parse().map_err(|_| err("expected integer"))?,
                "max_vocab" => cfg.max_vocab = v.parse().map_err(|_| err("expected integer"))?,
                "embedding_file" => {
                    cfg.embedding_file = if v.is_empty() { None } else { Some(v.to_string()) }
                }
                "cls_steps" => cfg.cls_steps = v.parse().map_err(|_| err("expected integer"))?,
                "lm_steps" => cfg.lm_steps = v.parse().map_err(|_| err("expected integer"))?,
                "valid_subset" => {
                    cfg.valid_subset = v.parse().map_err(|_| err("expected integer"))?
                }
                "bleu_corpus_level" => {
                    cfg.bleu_corpus_level = v.parse().map_err(|_| err("expected bool"))?
                }
                unknown => {
                    return Err(Error::Config(format!(
                        "line {}: unknown config key `{unknown}`",
                        lineno + 1
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn split_kv(line: &str) -> Option<(&str, &str)> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('#') {
        return None;
    }
    let (k, v) = line.split_once('=')?;
    Some((k.trim(), v.trim()))
}

fn parse_grid(v: &str) -> std::result::Result<Vec<Real>, std::num::ParseFloatError> {
    v.split(',').map(|p| p.trim().parse::<Real>()).collect()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_text() {
        let cfg = TrainConfig { gamma: 0.3, lambda: 1.5, ..TrainConfig::default() };
        let text = cfg.to_text();
        let back = TrainConfig::parse(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.digest(), back.digest());
    }

    #[test]
    fn unknown_keys_are_rejected_with_line_numbers() {
        let err = TrainConfig::parse("seed = 1\nwat = 2\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(err.to_string().contains("wat"));
    }

    #[test]
    fn presets_and_overrides_compose() {
        let cfg = TrainConfig::parse("preset = paper\nbatch_size = 4\n").unwrap();
        assert_eq!(cfg.d_enc, 500);
        assert_eq!(cfg.d_dec, 700);
        assert_eq!(cfg.d_attr, 200);
        assert_eq!(cfg.batch_size, 4);
    }

    #[test]
    fn validation_catches_bad_ranges() {
        assert!(TrainConfig::parse("gamma = 1.5\n").is_err());
        assert!(TrainConfig::parse("temp_decay = 1.0\n").is_err());
        assert!(TrainConfig::parse("lambda = 0\n").is_err());
        assert!(TrainConfig::parse("gamma_grid = 0.5,2.0\n").is_err());
        assert!(TrainConfig::parse("loss_config = bogus\n").is_err());
    }

    #[test]
    fn digest_tracks_content() {
        let a = TrainConfig::default();
        let b = TrainConfig { seed: 43, ..TrainConfig::default() };
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }
}
