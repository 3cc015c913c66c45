//! Flat key=value configuration for the network and the training loop.

use std::fmt::Write as _;
use std::path::Path;

use crate::{ModelError, Result};

/// Encoder block flavor: `Modified` is ReLU then group norm, `Vanilla` is
/// per-channel instance statistics then ReLU (the ablation ordering).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockStyle {
    Modified,
    Vanilla,
}

/// Every tunable of the model and the optimizer in one place.
///
/// Values load from a flat `key=value` file, then environment variables
/// with the `SURFREG_` prefix, then explicit overrides, in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Scalar type for parameters and training: "f32" or "f64".
    pub dtype: String,
    /// Points fed to the encoder per scan.
    pub points: usize,
    /// Identity code dimension.
    pub d_id: usize,
    /// Expression code dimension.
    pub d_exp: usize,
    /// Output widths of the five encoder trunk blocks.
    pub trunk_widths: Vec<usize>,
    /// Group size of the trunk group norms.
    pub group_size: usize,
    /// Output widths of the two attention blocks.
    pub att_widths: Vec<usize>,
    /// Group size of the attention group norms.
    pub att_group_size: usize,
    /// Attention gating on the max pool; off means a plain max pool.
    pub attention: bool,
    /// Encoder block ordering.
    pub block_style: BlockStyle,
    /// Decoder feature width at the coarsest level.
    pub seed_width: usize,
    /// Output widths of the decoder blocks, coarsest first.
    pub block_widths: Vec<usize>,
    /// Squared-distance cutoff of the thresholded Chamfer loss.
    pub sigma: f64,
    pub lambda_norm: f64,
    pub lambda_edge: f64,
    pub lambda_att: f64,
    pub lambda_bnd: f64,
    /// Base Adam learning rate.
    pub lr: f64,
    /// Multiplier applied to the learning rate every `lr_decay_epochs`.
    pub lr_decay: f64,
    /// Global-epoch period of the learning-rate decay.
    pub lr_decay_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Batch size of the staged phases.
    pub batch_size: usize,
    /// Batch size of the final refinement phase.
    pub refine_batch_size: usize,
    /// Epochs of the six training stages.
    pub stage_epochs: Vec<usize>,
    /// Run seed: parameter init, sampling and shuffling all derive from it.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dtype: "f32".into(),
            points: 65536,
            d_id: 256,
            d_exp: 256,
            trunk_widths: vec![64, 64, 64, 128, 1024],
            group_size: 32,
            att_widths: vec![128, 32],
            att_group_size: 4,
            attention: true,
            block_style: BlockStyle::Modified,
            seed_width: 192,
            block_widths: vec![128, 64, 32, 32],
            sigma: 5e-4,
            lambda_norm: 1e-4,
            lambda_edge: 5e-5,
            lambda_att: 1e-4,
            lambda_bnd: 1e-3,
            lr: 1e-4,
            lr_decay: 0.5,
            lr_decay_epochs: 5,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 2,
            refine_batch_size: 1,
            stage_epochs: vec![5, 10, 5, 10, 10, 15],
            seed: 7,
        }
    }
}

fn bad(key: &str, msg: impl Into<String>) -> ModelError {
    ModelError::Config { key: key.into(), msg: msg.into() }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| bad(key, format!("cannot parse {value:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|part| parse_num(key, part))
        .collect::<Result<Vec<usize>>>()
        .and_then(|list| {
            if list.is_empty() {
                Err(bad(key, "empty list"))
            } else {
                Ok(list)
            }
        })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        other => Err(bad(key, format!("expected on|off, got {other:?}"))),
    }
}

impl ModelConfig {
    /// Applies one `key = value` override.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "dtype" => match v {
                "f32" | "f64" => self.dtype = v.into(),
                other => return Err(bad(key, format!("expected f32|f64, got {other:?}"))),
            },
            "points" => self.points = parse_num(key, v)?,
            "d_id" => self.d_id = parse_num(key, v)?,
            "d_exp" => self.d_exp = parse_num(key, v)?,
            "trunk_widths" => self.trunk_widths = parse_list(key, v)?,
            "group_size" => self.group_size = parse_num(key, v)?,
            "att_widths" => self.att_widths = parse_list(key, v)?,
            "att_group_size" => self.att_group_size = parse_num(key, v)?,
            "attention" => self.attention = parse_bool(key, v)?,
            "block_style" => match v {
                "modified" => self.block_style = BlockStyle::Modified,
                "vanilla" => self.block_style = BlockStyle::Vanilla,
                other => {
                    return Err(bad(key, format!("expected modified|vanilla, got {other:?}")))
                }
            },
            "seed_width" => self.seed_width = parse_num(key, v)?,
            "block_widths" => self.block_widths = parse_list(key, v)?,
            "sigma" => self.sigma = parse_num(key, v)?,
            "lambda_norm" => self.lambda_norm = parse_num(key, v)?,
            "lambda_edge" => self.lambda_edge = parse_num(key, v)?,
            "lambda_att" => self.lambda_att = parse_num(key, v)?,
            "lambda_bnd" => self.lambda_bnd = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "lr_decay" => self.lr_decay = parse_num(key, v)?,
            "lr_decay_epochs" => self.lr_decay_epochs = parse_num(key, v)?,
            "beta1" => self.beta1 = parse_num(key, v)?,
            "beta2" => self.beta2 = parse_num(key, v)?,
            "adam_eps" => self.adam_eps = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "refine_batch_size" => self.refine_batch_size = parse_num(key, v)?,
            "stage_epochs" => self.stage_epochs = parse_list(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            other => return Err(bad(other, "unknown key")),
        }
        Ok(())
    }

    /// Loads overrides from a `key = value` file; '#' starts a comment.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::io(path, e))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ModelError::Config {
                    key: format!("{}:{}", path.display(), lineno + 1),
                    msg: format!("expected key=value, got {line:?}"),
                });
            };
            self.apply(key.trim(), value)?;
        }
        Ok(())
    }

    /// Applies `SURFREG_<KEY>` environment overrides for every known key.
    pub fn apply_env(&mut self) -> Result<()> {
        for (key, _) in Self::default().entries() {
            let var = format!("SURFREG_{}", key.to_uppercase());
            if let Ok(value) = std::env::var(&var) {
                self.apply(&key, &value)?;
            }
        }
        Ok(())
    }

    /// Every key with its current value, in file syntax order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let list = |xs: &[usize]| {
            xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        };
        vec![
            ("dtype".into(), self.dtype.clone()),
            ("points".into(), self.points.to_string()),
            ("d_id".into(), self.d_id.to_string()),
            ("d_exp".into(), self.d_exp.to_string()),
            ("trunk_widths".into(), list(&self.trunk_widths)),
            ("group_size".into(), self.group_size.to_string()),
            ("att_widths".into(), list(&self.att_widths)),
            ("att_group_size".into(), self.att_group_size.to_string()),
            ("attention".into(), if self.attention { "on" } else { "off" }.into()),
            (
                "block_style".into(),
                match self.block_style {
                    BlockStyle::Modified => "modified".into(),
                    BlockStyle::Vanilla => "vanilla".into(),
                },
            ),
            ("seed_width".into(), self.seed_width.to_string()),
            ("block_widths".into(), list(&self.block_widths)),
            ("sigma".into(), format!("{}", self.sigma)),
            ("lambda_norm".into(), format!("{}", self.lambda_norm)),
            ("lambda_edge".into(), format!("{}", self.lambda_edge)),
            ("lambda_att".into(), format!("{}", self.lambda_att)),
            ("lambda_bnd".into(), format!("{}", self.lambda_bnd)),
            ("lr".into(), format!("{}", self.lr)),
            ("lr_decay".into(), format!("{}", self.lr_decay)),
            ("lr_decay_epochs".into(), self.lr_decay_epochs.to_string()),
            ("beta1".into(), format!("{}", self.beta1)),
            ("beta2".into(), format!("{}", self.beta2)),
            ("adam_eps".into(), format!("{}", self.adam_eps)),
            ("batch_size".into(), self.batch_size.to_string()),
            ("refine_batch_size".into(), self.refine_batch_size.to_string()),
            ("stage_epochs".into(), list(&self.stage_epochs)),
            ("seed".into(), self.seed.to_string()),
        ]
    }

    /// The effective configuration in file syntax, for provenance echoes.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (key, value) in self.entries() {
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    /// Cross-field checks that `apply` cannot do alone.
    pub fn validate(&self) -> Result<()> {
        let err = |key: &str, msg: String| Err(bad(key, msg));
        if self.points == 0 {
            return err("points", "must be positive".into());
        }
        if self.d_id == 0 || self.d_exp == 0 {
            return err("d_id", "code dimensions must be positive".into());
        }
        if self.trunk_widths.len() != 5 {
            return err("trunk_widths", format!("expected 5 blocks, got {}", self.trunk_widths.len()));
        }
        if self.att_widths.len() != 2 {
            return err("att_widths", format!("expected 2 blocks, got {}", self.att_widths.len()));
        }
        for (key, widths, group) in [
            ("trunk_widths", &self.trunk_widths, self.group_size),
            ("att_widths", &self.att_widths, self.att_group_size),
        ] {
            if group == 0 {
                return err(key, "group size must be positive".into());
            }
            for &w in widths {
                if w == 0 || w % group != 0 {
                    return err(key, format!("width {w} is not a positive multiple of group size {group}"));
                }
            }
        }
        if self.seed_width == 0 || self.block_widths.iter().any(|&w| w == 0) {
            return err("block_widths", "decoder widths must be positive".into());
        }
        for (key, x) in [
            ("sigma", self.sigma),
            ("lambda_norm", self.lambda_norm),
            ("lambda_edge", self.lambda_edge),
            ("lambda_att", self.lambda_att),
            ("lambda_bnd", self.lambda_bnd),
        ] {
            if !x.is_finite() || x < 0.0 {
                return err(key, format!("must be finite and non-negative, got {x}"));
            }
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return err("lr", format!("must be positive, got {}", self.lr));
        }
        if !(self.lr_decay.is_finite() && self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return err("lr_decay", format!("must be in (0, 1], got {}", self.lr_decay));
        }
        if self.lr_decay_epochs == 0 {
            return err("lr_decay_epochs", "must be positive".into());
        }
        if self.batch_size == 0 || self.refine_batch_size == 0 {
            return err("batch_size", "batch sizes must be positive".into());
        }
        if self.stage_epochs.len() != 6 {
            return err("stage_epochs", format!("expected 6 stages, got {}", self.stage_epochs.len()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_render_round_trips() {
        let config = ModelConfig::default();
        config.validate().unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, config.render()).unwrap();
        let mut loaded = ModelConfig::default();
        loaded.apply_file(&path).unwrap();
        assert_eq!(loaded, config);
    }

    #[test]
    fn overrides_change_single_fields() {
        let mut config = ModelConfig::default();
        config.apply("points", "4096").unwrap();
        config.apply("block_widths", "64,32,16,16").unwrap();
        config.apply("attention", "off").unwrap();
        config.apply("block_style", "vanilla").unwrap();
        assert_eq!(config.points, 4096);
        assert_eq!(config.block_widths, vec![64, 32, 16, 16]);
        assert!(!config.attention);
        assert_eq!(config.block_style, BlockStyle::Vanilla);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "# header\n\npoints = 128 # trailing\n").unwrap();
        let mut config = ModelConfig::default();
        config.apply_file(&path).unwrap();
        assert_eq!(config.points, 128);
    }

    #[test]
    fn bad_keys_and_values_are_rejected() {
        let mut config = ModelConfig::default();
        assert!(config.apply("no_such_key", "1").is_err());
        assert!(config.apply("points", "many").is_err());
        assert!(config.apply("dtype", "f16").is_err());
        assert!(config.apply("attention", "maybe").is_err());

        let mut bad_groups = ModelConfig::default();
        bad_groups.apply("trunk_widths", "64,64,64,100,1024").unwrap();
        assert!(bad_groups.validate().is_err());

        let mut bad_stages = ModelConfig::default();
        bad_stages.apply("stage_epochs", "1,2,3").unwrap();
        assert!(bad_stages.validate().is_err());
    }
}
