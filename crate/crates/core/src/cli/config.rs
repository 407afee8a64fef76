//! `key = value` run configuration.
//!
//! One setting per line; `#` starts a comment. Every key has a default, so
//! an empty file is valid. Unknown keys and malformed values are errors.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::{DEFAULT_HI_DB, DEFAULT_LO_DB};
use crate::nn::AdamConfig;
use crate::qsim::{build_circuit, CircuitSpec, Template};
use crate::quanvolution::{Padding, QuanvConfig};
use crate::unet::{AttentionUNetConfig, TrainConfig, Upsample};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub circuit_template: Template,
    pub circuit_qubits: usize,
    pub circuit_layers: usize,
    pub circuit_seed: u64,
    pub quanv_kernel: usize,
    pub quanv_stride: usize,
    pub quanv_padding: Padding,
    pub quanv_rescale: bool,
    /// Append the raw band to the quanvolved channels.
    pub quanv_concat: bool,
    pub model_depth: Option<usize>,
    pub model_widths: Vec<usize>,
    /// `None` takes the channel count of the training patches.
    pub model_in_channels: Option<usize>,
    pub model_upsample: Upsample,
    pub train_lr: f64,
    pub train_epochs: usize,
    pub train_batch: usize,
    pub train_seed: u64,
    pub data_patch: usize,
    pub data_stride: usize,
    pub data_test_fraction: f64,
    pub norm_lo_db: f64,
    pub norm_hi_db: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            circuit_template: Template::StronglyEntangled,
            circuit_qubits: 9,
            circuit_layers: 2,
            circuit_seed: 0,
            quanv_kernel: 3,
            quanv_stride: 1,
            quanv_padding: Padding::SameReflect,
            quanv_rescale: true,
            quanv_concat: false,
            model_depth: None,
            model_widths: vec![8, 16, 32],
            model_in_channels: None,
            model_upsample: Upsample::Transposed,
            train_lr: AdamConfig::default().lr,
            train_epochs: 30,
            train_batch: 8,
            train_seed: 0,
            data_patch: 256,
            data_stride: 128,
            data_test_fraction: 0.2,
            norm_lo_db: DEFAULT_LO_DB,
            norm_hi_db: DEFAULT_HI_DB,
        }
    }
}

pub const KEYS: &[&str] = &[
    "circuit.template",
    "circuit.qubits",
    "circuit.layers",
    "circuit.seed",
    "quanv.kernel",
    "quanv.stride",
    "quanv.padding",
    "quanv.rescale",
    "quanv.concat",
    "model.depth",
    "model.widths",
    "model.in_channels",
    "model.upsample",
    "train.lr",
    "train.epochs",
    "train.batch",
    "train.seed",
    "data.patch",
    "data.stride",
    "data.test_fraction",
    "norm.lo_db",
    "norm.hi_db",
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse `{v}`")))
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got `{v}`"))),
    }
}

fn list(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse { line: i + 1, message: format!("expected key = value, got `{line}`") })?;
            cfg.set(key.trim(), value.trim()).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies one `key=value` override.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "circuit.template" => self.circuit_template = v.parse()?,
            "circuit.qubits" => self.circuit_qubits = num(key, v)?,
            "circuit.layers" => self.circuit_layers = num(key, v)?,
            "circuit.seed" => self.circuit_seed = num(key, v)?,
            "quanv.kernel" => self.quanv_kernel = num(key, v)?,
            "quanv.stride" => self.quanv_stride = num(key, v)?,
            "quanv.padding" => self.quanv_padding = v.parse()?,
            "quanv.rescale" => self.quanv_rescale = boolean(key, v)?,
            "quanv.concat" => self.quanv_concat = boolean(key, v)?,
            "model.depth" => self.model_depth = Some(num(key, v)?),
            "model.widths" => self.model_widths = v.split(',').map(|w| num(key, w.trim())).collect::<Result<_>>()?,
            "model.in_channels" => self.model_in_channels = Some(num(key, v)?),
            "model.upsample" => self.model_upsample = v.parse()?,
            "train.lr" => self.train_lr = num(key, v)?,
            "train.epochs" => self.train_epochs = num(key, v)?,
            "train.batch" => self.train_batch = num(key, v)?,
            "train.seed" => self.train_seed = num(key, v)?,
            "data.patch" => self.data_patch = num(key, v)?,
            "data.stride" => self.data_stride = num(key, v)?,
            "data.test_fraction" => self.data_test_fraction = num(key, v)?,
            "norm.lo_db" => self.norm_lo_db = num(key, v)?,
            "norm.hi_db" => self.norm_hi_db = num(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .as_ref()
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{}` is not key=value", o.as_ref())))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Every key with its current value, parseable by [`RunConfig::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        put("circuit.template", self.circuit_template.name().to_string());
        put("circuit.qubits", self.circuit_qubits.to_string());
        put("circuit.layers", self.circuit_layers.to_string());
        put("circuit.seed", self.circuit_seed.to_string());
        put("quanv.kernel", self.quanv_kernel.to_string());
        put("quanv.stride", self.quanv_stride.to_string());
        put(
            "quanv.padding",
            match self.quanv_padding {
                Padding::Valid => "valid",
                Padding::SameReflect => "same-reflect",
            }
            .to_string(),
        );
        put("quanv.rescale", self.quanv_rescale.to_string());
        put("quanv.concat", self.quanv_concat.to_string());
        if let Some(d) = self.model_depth {
            put("model.depth", d.to_string());
        }
        put("model.widths", list(&self.model_widths));
        if let Some(c) = self.model_in_channels {
            put("model.in_channels", c.to_string());
        }
        put("model.upsample", self.model_upsample.to_string());
        put("train.lr", format!("{:e}", self.train_lr));
        put("train.epochs", self.train_epochs.to_string());
        put("train.batch", self.train_batch.to_string());
        put("train.seed", self.train_seed.to_string());
        put("data.patch", self.data_patch.to_string());
        put("data.stride", self.data_stride.to_string());
        put("data.test_fraction", self.data_test_fraction.to_string());
        put("norm.lo_db", self.norm_lo_db.to_string());
        put("norm.hi_db", self.norm_hi_db.to_string());
        s
    }

    pub fn circuit(&self) -> Result<CircuitSpec> {
        build_circuit(self.circuit_template, self.circuit_qubits, self.circuit_layers, self.circuit_seed)
    }

    /// Quanvolution settings around an existing (possibly loaded) circuit.
    pub fn quanv_config(&self, circuit: CircuitSpec) -> Result<QuanvConfig> {
        let cfg = QuanvConfig {
            kernel_size: self.quanv_kernel,
            stride: self.quanv_stride,
            padding: self.quanv_padding,
            n_qubits: self.circuit_qubits,
            circuit,
            rescale: self.quanv_rescale,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model_config(&self, data_channels: Option<usize>) -> Result<AttentionUNetConfig> {
        let in_channels = self.model_in_channels.or(data_channels).unwrap_or(1);
        if let (Some(m), Some(d)) = (self.model_in_channels, data_channels) {
            if m != d {
                return Err(Error::Config(format!("model.in_channels = {m} but the patches have {d} channels")));
            }
        }
        if let Some(depth) = self.model_depth {
            if depth != self.model_widths.len() {
                return Err(Error::Config(format!(
                    "model.depth = {depth} but model.widths lists {} levels",
                    self.model_widths.len()
                )));
            }
        }
        let cfg = AttentionUNetConfig::new(in_channels, &self.model_widths).with_upsample(self.model_upsample);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        if !(self.train_lr >= 0.0 && self.train_lr.is_finite()) {
            return Err(Error::Config(format!("train.lr must be finite and >= 0, got {}", self.train_lr)));
        }
        if self.train_batch == 0 {
            return Err(Error::Config("train.batch must be >= 1".into()));
        }
        Ok(TrainConfig {
            epochs: self.train_epochs,
            batch: self.train_batch,
            seed: self.train_seed,
            adam: AdamConfig { lr: self.train_lr, ..Default::default() },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_table_settings() {
        let c = RunConfig::default();
        assert_eq!((c.circuit_qubits, c.circuit_layers, c.quanv_kernel), (9, 2, 3));
        assert_eq!(RunConfig::parse("").unwrap(), c);
    }

    #[test]
    fn parses_comments_and_values() {
        let c = RunConfig::parse(
            "# run\ncircuit.template = Random\nmodel.widths = 4, 8,16 # three levels\ntrain.lr=0.01\nquanv.padding = valid\n",
        )
        .unwrap();
        assert_eq!(c.circuit_template, Template::Random);
        assert_eq!(c.model_widths, vec![4, 8, 16]);
        assert_eq!(c.train_lr, 0.01);
        assert_eq!(c.quanv_padding, Padding::Valid);
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        assert!(matches!(RunConfig::parse("\n\nmodel.colour = red"), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(RunConfig::parse("train.epochs"), Err(Error::Parse { line: 1, .. })));
        assert!(RunConfig::parse("train.epochs = many").is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.apply_overrides(&["model.in_channels=9", "model.depth=3", "quanv.concat=true", "train.lr=3e-4"]).unwrap();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        for key in KEYS {
            assert!(c.to_text().contains(key) || *key == "model.depth" || *key == "model.in_channels");
        }
    }

    #[test]
    fn derived_configs() {
        let mut c = RunConfig::default();
        assert_eq!(c.model_config(Some(9)).unwrap().in_channels, 9);
        c.set("model.depth", "2").unwrap();
        assert!(matches!(c.model_config(None), Err(Error::Config(_))));
        c.set("quanv.kernel", "4").unwrap();
        assert!(c.quanv_config(c.circuit().unwrap()).is_err());
    }
}
