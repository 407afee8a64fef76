//! Model checkpoints: a directory holding `weights.qvt`, the concatenated
//! QVT1 records of every parameter and buffer (f64), and `manifest.txt`,
//! which records the architecture and where each named tensor starts.
//!
//! ```text
//! # quanvseg checkpoint
//! in_channels 1
//! widths 8,16,32
//! gate_widths 4,8
//! upsample transposed
//! param enc0.0.conv.weight 8,1,3,3 0
//! buffer enc0.0.bn.running_mean 8 1234
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{AttentionUNet, AttentionUNetConfig};
use crate::data::qvt::{decode_tensor, encode_tensor, Dtype};
use crate::nn::{Module, Tensor};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const WEIGHTS_FILE: &str = "weights.qvt";

fn join_dims(dims: &[usize]) -> String {
    dims.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn parse_list(line: usize, s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|v| v.trim().parse().map_err(|_| Error::Parse { line, message: format!("bad integer `{v}`") }))
        .collect()
}

pub fn save_checkpoint(model: &AttentionUNet, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cfg = model.config();
    let mut manifest = String::from("# quanvseg checkpoint\n");
    writeln!(manifest, "in_channels {}", cfg.in_channels).unwrap();
    writeln!(manifest, "widths {}", join_dims(&cfg.widths)).unwrap();
    if !cfg.gate_widths.is_empty() {
        writeln!(manifest, "gate_widths {}", join_dims(&cfg.gate_widths)).unwrap();
    }
    writeln!(manifest, "upsample {}", cfg.upsample).unwrap();

    let mut weights = Vec::new();
    let mut failure = None;
    let mut record = |kind: &str, name: &str, t: &Tensor| match encode_tensor(t, Dtype::F64) {
        Ok(bytes) => {
            writeln!(manifest, "{kind} {name} {} {}", join_dims(t.dims()), weights.len()).unwrap();
            weights.extend_from_slice(&bytes);
        }
        Err(e) => failure = Some(e),
    };
    model.visit_params("", &mut |name, p| record("param", name, &p.value));
    model.visit_buffers("", &mut |name, t| record("buffer", name, t));
    if let Some(e) = failure {
        return Err(e);
    }
    let wpath = dir.join(WEIGHTS_FILE);
    fs::write(&wpath, weights).map_err(|e| Error::io(&wpath, e))?;
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<AttentionUNet> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let wpath = dir.join(WEIGHTS_FILE);
    let weights = fs::read(&wpath).map_err(|e| Error::io(&wpath, e))?;

    let mut in_channels = None;
    let mut widths = None;
    let mut gate_widths = None;
    let mut upsample = None;
    let mut entries: HashMap<String, (Vec<usize>, usize, usize)> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim();
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = raw.split_whitespace().collect();
        let bad = |m: &str| Error::Parse { line, message: m.to_string() };
        match fields.as_slice() {
            ["in_channels", v] => in_channels = Some(v.parse().map_err(|_| bad("bad in_channels"))?),
            ["widths", v] => widths = Some(parse_list(line, v)?),
            ["gate_widths", v] => gate_widths = Some(parse_list(line, v)?),
            ["upsample", v] => upsample = Some(v.parse().map_err(|_| bad("bad upsample kind"))?),
            [kind @ ("param" | "buffer"), name, dims, offset] => {
                let offset = offset.parse().map_err(|_| bad("bad offset"))?;
                let prev = entries.insert(name.to_string(), (parse_list(line, dims)?, offset, line));
                if prev.is_some() {
                    return Err(bad(&format!("duplicate {kind} `{name}`")));
                }
            }
            _ => return Err(bad(&format!("unrecognized manifest line `{raw}`"))),
        }
    }
    let missing = |k: &str| Error::Parse { line: 0, message: format!("manifest lacks `{k}`") };
    let widths: Vec<usize> = widths.ok_or_else(|| missing("widths"))?;
    let mut config = AttentionUNetConfig::new(in_channels.ok_or_else(|| missing("in_channels"))?, &widths);
    if let Some(g) = gate_widths {
        config.gate_widths = g;
    }
    config.upsample = upsample.ok_or_else(|| missing("upsample"))?;
    let mut model = AttentionUNet::new(&config, 0)?;

    let mut result = Ok(());
    let mut used = 0usize;
    let mut fill = |name: &str, target: &mut Tensor| {
        if result.is_err() {
            return;
        }
        result = (|| {
            let (dims, offset, line) = entries
                .get(name)
                .ok_or_else(|| Error::Parse { line: 0, message: format!("manifest lacks tensor `{name}`") })?;
            if dims.as_slice() != target.dims() {
                return Err(Error::Parse {
                    line: *line,
                    message: format!("`{name}` has dims {dims:?}, model needs {:?}", target.dims()),
                });
            }
            let bytes = weights.get(*offset..).ok_or(Error::Length { expected: *offset, found: weights.len() })?;
            let (t, _, _) = decode_tensor(bytes).map_err(|e| match e {
                Error::Format { offset: o, message } => Error::Format { offset: o + offset, message },
                other => other,
            })?;
            if t.dims() != target.dims() {
                return Err(Error::Format { offset: *offset, message: format!("record for `{name}` has wrong dims") });
            }
            *target = t;
            used += 1;
            Ok(())
        })();
    };
    model.visit_params_mut("", &mut |name, p| fill(name, &mut p.value));
    model.visit_buffers_mut("", &mut |name, t| fill(name, t));
    result?;
    if used != entries.len() {
        return Err(Error::Parse {
            line: 0,
            message: format!("manifest lists {} tensors, model has {used}", entries.len()),
        });
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Mode, Tensor};
    use crate::unet::Upsample;

    #[test]
    fn round_trip_preserves_outputs() {
        let cfg = AttentionUNetConfig::new(2, &[3, 4, 5]).with_upsample(Upsample::NearestConv);
        let mut model = AttentionUNet::new(&cfg, 11).unwrap();
        model.visit_buffers_mut("", &mut |_, t| t.fill(0.75));
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&model, dir.path()).unwrap();
        let back = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back, model);
        let x = Tensor::filled(&[1, 2, 8, 8], 0.3);
        let (a, _) = model.forward(&x, Mode::Eval).unwrap();
        let (b, _) = back.forward(&x, Mode::Eval).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn corrupt_manifest_rejected() {
        let model = AttentionUNet::new(&AttentionUNetConfig::new(1, &[2, 4]), 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&model, dir.path()).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, text.replace("widths 2,4", "widths 2,5")).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Parse { .. })));
        fs::write(&path, text.replace("upsample", "upsampel")).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Parse { .. })));
    }

    #[test]
    fn missing_directory_is_io_error() {
        assert!(matches!(load_checkpoint(Path::new("/nonexistent/ckpt")), Err(Error::Io { .. })));
    }
}
