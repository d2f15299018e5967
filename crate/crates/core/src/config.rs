//! Flat `key = value` run configuration.
//!
//! Lines starting with `#` and blank lines are ignored. Keys not listed in
//! [`RunConfig`] are rejected. Lists are comma separated.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ccdc_tensor::AdamConfig;

use crate::data::{PairRecipe, SUPPORTED_SCALES, TOY_FRAMES};
use crate::encoders::{DEFAULT_LADDER, PYRAMID_LEVELS};
use crate::error::{Error, Result};
use crate::fusion_decoder::DecoderLayout;
use crate::losses::check_lambda;

pub const CACHE_DIR_ENV: &str = "CCDC_CACHE_DIR";
pub const DEFAULT_CACHE_DIR: &str = "ccdc-cache";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub ladder: Vec<usize>,
    pub flow_width: f64,
    pub lambda_warp: f64,
    pub use_visibility: bool,
    pub use_warping_loss: bool,
    pub feed_target_to_head: bool,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
    /// Manifest of an on-disk dataset; the toy generator is used when unset.
    pub manifest: Option<PathBuf>,
    /// Defaults to the manifest's directory.
    pub dataset_root: Option<PathBuf>,
    pub toy_pairs: usize,
    pub toy_size: usize,
    pub scale: usize,
    pub frame_gap: usize,
    /// Draw a new frame gap for every video sequence at each epoch.
    pub resample_frame_gap: bool,
    pub checkpoint_dir: Option<PathBuf>,
    /// 0 keeps only the final checkpoint.
    pub checkpoint_every: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        RunConfig {
            ladder: DEFAULT_LADDER.to_vec(),
            flow_width: 0.25,
            lambda_warp: 1.0,
            use_visibility: true,
            use_warping_loss: true,
            feed_target_to_head: true,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            batch_size: 4,
            steps: 1000,
            seed: 0,
            manifest: None,
            dataset_root: None,
            toy_pairs: 8,
            toy_size: 64,
            scale: 4,
            frame_gap: 2,
            resample_frame_gap: true,
            checkpoint_dir: None,
            checkpoint_every: 0,
        }
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Some(true),
        "false" | "0" | "no" | "off" => Some(false),
        _ => None,
    }
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {line:?}", i + 1)))?;
            cfg.set(key.trim(), value.trim()).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", i + 1)),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::Config(format!("bad value {value:?} for {key}"));
        let num = |v: &str| v.parse::<f64>().map_err(|_| bad());
        let int = |v: &str| v.parse::<u64>().map_err(|_| bad());
        let flag = |v: &str| parse_bool(v).ok_or_else(bad);
        match key {
            "ladder" => {
                self.ladder = value
                    .split(',')
                    .map(|p| p.trim().parse::<usize>().map_err(|_| bad()))
                    .collect::<Result<_>>()?
            }
            "flow_width" => self.flow_width = num(value)?,
            "lambda_warp" => self.lambda_warp = num(value)?,
            "use_visibility" => self.use_visibility = flag(value)?,
            "use_warping_loss" => self.use_warping_loss = flag(value)?,
            "feed_target_to_head" => self.feed_target_to_head = flag(value)?,
            "learning_rate" => self.learning_rate = num(value)?,
            "beta1" => self.beta1 = num(value)?,
            "beta2" => self.beta2 = num(value)?,
            "epsilon" => self.epsilon = num(value)?,
            "batch_size" => self.batch_size = int(value)? as usize,
            "steps" => self.steps = int(value)?,
            "seed" => self.seed = int(value)?,
            "manifest" => self.manifest = opt_path(value),
            "dataset_root" => self.dataset_root = opt_path(value),
            "toy_pairs" => self.toy_pairs = int(value)? as usize,
            "toy_size" => self.toy_size = int(value)? as usize,
            "scale" => self.scale = int(value)? as usize,
            "frame_gap" => self.frame_gap = int(value)? as usize,
            "resample_frame_gap" => self.resample_frame_gap = flag(value)?,
            "checkpoint_dir" => self.checkpoint_dir = opt_path(value),
            "checkpoint_every" => self.checkpoint_every = int(value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.ladder.len() != PYRAMID_LEVELS || self.ladder.contains(&0) {
            return Err(Error::Config(format!("ladder needs {PYRAMID_LEVELS} positive widths, got {:?}", self.ladder)));
        }
        if !(self.flow_width.is_finite() && self.flow_width > 0.0) {
            return Err(Error::Config(format!("flow_width must be positive, got {}", self.flow_width)));
        }
        check_lambda(self.lambda_warp).map_err(|e| Error::Config(e.to_string()))?;
        if !(self.learning_rate > 0.0 && self.epsilon > 0.0) {
            return Err(Error::Config("learning_rate and epsilon must be positive".into()));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::Config("beta1 and beta2 must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !SUPPORTED_SCALES.contains(&self.scale) {
            return Err(Error::Config(format!("scale must be one of {SUPPORTED_SCALES:?}, got {}", self.scale)));
        }
        if self.manifest.is_none() {
            if self.toy_pairs == 0 {
                return Err(Error::Config("toy_pairs must be at least 1".into()));
            }
            if self.frame_gap >= TOY_FRAMES {
                return Err(Error::Config(format!("frame_gap must be below {TOY_FRAMES} for toy data")));
            }
        }
        Ok(())
    }

    /// Checks that configured input paths exist.
    pub fn check_paths(&self) -> Result<()> {
        for path in self.manifest.iter().chain(self.dataset_root.iter()) {
            if !path.exists() {
                return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
            }
        }
        Ok(())
    }

    /// Canonical text; `parse(to_text())` reproduces the config exactly.
    pub fn to_text(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let ladder: Vec<String> = self.ladder.iter().map(|c| c.to_string()).collect();
        let mut s = String::new();
        let fields = [
            ("ladder", ladder.join(",")),
            ("flow_width", self.flow_width.to_string()),
            ("lambda_warp", self.lambda_warp.to_string()),
            ("use_visibility", self.use_visibility.to_string()),
            ("use_warping_loss", self.use_warping_loss.to_string()),
            ("feed_target_to_head", self.feed_target_to_head.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("steps", self.steps.to_string()),
            ("seed", self.seed.to_string()),
            ("manifest", path(&self.manifest)),
            ("dataset_root", path(&self.dataset_root)),
            ("toy_pairs", self.toy_pairs.to_string()),
            ("toy_size", self.toy_size.to_string()),
            ("scale", self.scale.to_string()),
            ("frame_gap", self.frame_gap.to_string()),
            ("resample_frame_gap", self.resample_frame_gap.to_string()),
            ("checkpoint_dir", path(&self.checkpoint_dir)),
            ("checkpoint_every", self.checkpoint_every.to_string()),
        ];
        for (k, v) in fields {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, beta1: self.beta1, beta2: self.beta2, epsilon: self.epsilon }
    }

    pub fn decoder_layout(&self) -> DecoderLayout {
        DecoderLayout {
            ladder: self.ladder.clone(),
            use_visibility: self.use_visibility,
            feed_target: self.feed_target_to_head,
        }
    }

    /// Weight actually applied to the warping loss.
    pub fn effective_lambda(&self) -> f64 {
        if self.use_warping_loss {
            self.lambda_warp
        } else {
            0.0
        }
    }

    pub fn recipe(&self) -> PairRecipe {
        PairRecipe { scale: self.scale, frame_gap: self.frame_gap, viewpoint: None, seed: self.seed }
    }

    /// Differences that make a checkpoint unusable under this config.
    pub fn architecture_mismatch(&self, other: &RunConfig) -> Option<String> {
        let mut diffs = Vec::new();
        if self.ladder != other.ladder {
            diffs.push(format!("ladder {:?} vs {:?}", self.ladder, other.ladder));
        }
        if self.flow_width != other.flow_width {
            diffs.push(format!("flow_width {} vs {}", self.flow_width, other.flow_width));
        }
        if self.use_visibility != other.use_visibility {
            diffs.push(format!("use_visibility {} vs {}", self.use_visibility, other.use_visibility));
        }
        if self.use_warping_loss != other.use_warping_loss {
            diffs.push(format!("use_warping_loss {} vs {}", self.use_warping_loss, other.use_warping_loss));
        }
        if self.feed_target_to_head != other.feed_target_to_head {
            diffs.push(format!("feed_target_to_head {} vs {}", self.feed_target_to_head, other.feed_target_to_head));
        }
        (!diffs.is_empty()).then(|| diffs.join(", "))
    }

    /// Where periodic checkpoints go: `$CCDC_CACHE_DIR`, then
    /// `checkpoint_dir`, then `./ccdc-cache`.
    pub fn cache_dir(&self) -> PathBuf {
        match std::env::var_os(CACHE_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.checkpoint_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_CACHE_DIR)),
        }
    }
}
