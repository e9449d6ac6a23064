//! Flat `key = value` run configuration with dotted section names:
//!
//! ```text
//! # comment
//! train.p_teacher = 0.5
//! flownet.levels = 3
//! synthetic.translation_range = 4, 12
//! ```

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::TrainingConfig;
use crate::data_io::SyntheticSpec;
use crate::error::{Error, Result};
use crate::flownet::FlowNetConfig;
use crate::segmenter::SegNetConfig;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub train: TrainingConfig,
    pub flownet: FlowNetConfig,
    pub segnet: SegNetConfig,
    pub synthetic: SyntheticSpec,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected a boolean, got {value:?}"
        ))),
    }
}

fn parse_pair(key: &str, value: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => Ok((parse(key, a)?, parse(key, b)?)),
        _ => Err(Error::Config(format!(
            "{key}: expected two comma-separated numbers, got {value:?}"
        ))),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Overlay assignments onto the current values.
    pub fn apply(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let (t, f, s, y) = (
            &mut self.train,
            &mut self.flownet,
            &mut self.segnet,
            &mut self.synthetic,
        );
        match key {
            "train.p_teacher" => t.p_teacher = parse(key, v)?,
            "train.e_s" => t.e_s = parse(key, v)?,
            "train.e_a" => t.e_a = parse(key, v)?,
            "train.epochs_total" => t.epochs_total = parse(key, v)?,
            "train.learning_rate" => t.learning_rate = parse(key, v)?,
            "train.w_mfl" => t.w_mfl = parse(key, v)?,
            "train.w_vfl" => t.w_vfl = parse(key, v)?,
            "train.w_seg" => t.w_seg = parse(key, v)?,
            "train.lambda_iou" => t.lambda_iou = parse(key, v)?,
            "train.seed" => t.seed = parse(key, v)?,
            "train.batch_size" => t.batch_size = parse(key, v)?,
            "train.steps_per_epoch" => t.steps_per_epoch = parse(key, v)?,
            "train.vfl_masked" => t.vfl_masked = parse_bool(key, v)?,
            "flownet.levels" => f.levels = parse(key, v)?,
            "flownet.base_channels" => f.base_channels = parse(key, v)?,
            "flownet.input_channels" => f.input_channels = parse(key, v)?,
            "segnet.levels" => s.levels = parse(key, v)?,
            "segnet.base_channels" => s.base_channels = parse(key, v)?,
            "segnet.input_channels" => s.input_channels = parse(key, v)?,
            "segnet.use_warped_mask" => s.use_warped_mask = parse_bool(key, v)?,
            "synthetic.height" => y.height = parse(key, v)?,
            "synthetic.width" => y.width = parse(key, v)?,
            "synthetic.num_sequences" => y.num_sequences = parse(key, v)?,
            "synthetic.first_index" => y.first_index = parse(key, v)?,
            "synthetic.frames_per_sequence" => y.frames_per_sequence = parse(key, v)?,
            "synthetic.min_objects" => y.min_objects = parse(key, v)?,
            "synthetic.max_objects" => y.max_objects = parse(key, v)?,
            "synthetic.size_range" => y.size_range = parse_pair(key, v)?,
            "synthetic.translation_range" => y.translation_range = parse_pair(key, v)?,
            "synthetic.rotation_deg" => y.rotation_deg = parse(key, v)?,
            "synthetic.scale_range" => y.scale_range = parse_pair(key, v)?,
            "synthetic.textured_background" => y.textured_background = parse_bool(key, v)?,
            "synthetic.pixel_noise" => y.pixel_noise = parse(key, v)?,
            "synthetic.seed" => y.seed = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.flownet.validate()?;
        self.segnet.validate()?;
        self.synthetic.validate()
    }

    /// Every key, in a form [`RunConfig::parse`] reads back exactly.
    pub fn to_text(&self) -> String {
        let (t, f, s, y) = (&self.train, &self.flownet, &self.segnet, &self.synthetic);
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("train.p_teacher", t.p_teacher.to_string());
        put("train.e_s", t.e_s.to_string());
        put("train.e_a", t.e_a.to_string());
        put("train.epochs_total", t.epochs_total.to_string());
        put("train.learning_rate", t.learning_rate.to_string());
        put("train.w_mfl", t.w_mfl.to_string());
        put("train.w_vfl", t.w_vfl.to_string());
        put("train.w_seg", t.w_seg.to_string());
        put("train.lambda_iou", t.lambda_iou.to_string());
        put("train.seed", t.seed.to_string());
        put("train.batch_size", t.batch_size.to_string());
        put("train.steps_per_epoch", t.steps_per_epoch.to_string());
        put("train.vfl_masked", t.vfl_masked.to_string());
        put("flownet.levels", f.levels.to_string());
        put("flownet.base_channels", f.base_channels.to_string());
        put("flownet.input_channels", f.input_channels.to_string());
        put("segnet.levels", s.levels.to_string());
        put("segnet.base_channels", s.base_channels.to_string());
        put("segnet.input_channels", s.input_channels.to_string());
        put("segnet.use_warped_mask", s.use_warped_mask.to_string());
        put("synthetic.height", y.height.to_string());
        put("synthetic.width", y.width.to_string());
        put("synthetic.num_sequences", y.num_sequences.to_string());
        put("synthetic.first_index", y.first_index.to_string());
        put(
            "synthetic.frames_per_sequence",
            y.frames_per_sequence.to_string(),
        );
        put("synthetic.min_objects", y.min_objects.to_string());
        put("synthetic.max_objects", y.max_objects.to_string());
        put(
            "synthetic.size_range",
            format!("{}, {}", y.size_range.0, y.size_range.1),
        );
        put(
            "synthetic.translation_range",
            format!("{}, {}", y.translation_range.0, y.translation_range.1),
        );
        put("synthetic.rotation_deg", y.rotation_deg.to_string());
        put(
            "synthetic.scale_range",
            format!("{}, {}", y.scale_range.0, y.scale_range.1),
        );
        put(
            "synthetic.textured_background",
            y.textured_background.to_string(),
        );
        put("synthetic.pixel_noise", y.pixel_noise.to_string());
        put("synthetic.seed", y.seed.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_dotted_keys() {
        let cfg = RunConfig::parse(
            "# run\ntrain.p_teacher=0.25\n\n  flownet.levels = 2 # inline\nsynthetic.translation_range = 1, 3\nsegnet.use_warped_mask=false\n",
        )
        .unwrap();
        assert_eq!(cfg.train.p_teacher, 0.25);
        assert_eq!(cfg.flownet.levels, 2);
        assert_eq!(cfg.synthetic.translation_range, (1.0, 3.0));
        assert!(!cfg.segnet.use_warped_mask);
        assert_eq!(cfg.train.e_s, TrainingConfig::default().e_s);
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.train.learning_rate = 3.3e-4;
        cfg.synthetic.size_range = (7.5, 10.25);
        cfg.synthetic.seed = 99;
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn bad_lines_are_reported() {
        assert!(RunConfig::parse("train.nope = 1").is_err());
        assert!(RunConfig::parse("train.e_s").is_err());
        assert!(RunConfig::parse("train.e_s = minus").is_err());
        assert!(RunConfig::parse("synthetic.size_range = 1").is_err());
    }
}
