use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{Command, ConfigArgs, Failure, RunConfig};
use crate::data::pgm::{read_pgm, write_pgm, Pgm};
use crate::data::{
    extract_patches, normalize_db, read_tensor, split, synth_scene, write_tensor, Dtype, Mask, PatchSet, RasterImage,
    Split,
};
use crate::nn::{count_trainable, Tensor};
use crate::qsim::{parse_circuit, serialize_circuit};
use crate::quanvolution::quanvolve;
use crate::unet::{
    count_params, evaluate, evaluate_predictions, gradient_suite, load_checkpoint, predict_split, save_checkpoint,
    train_with, AttentionUNet, AttentionUNetConfig, EvalReport,
};
use crate::Error;

type CmdResult = Result<(), Failure>;

/// Maps any write failure on the output stream to a runtime error.
fn emit(out: &mut (dyn Write + Send), text: std::fmt::Arguments<'_>) -> CmdResult {
    out.write_fmt(text)
        .and_then(|_| out.write_all(b"\n"))
        .map_err(|e| Failure::Runtime(Error::io(Path::new("<stdout>"), e)))
}

macro_rules! say {
    ($out:expr, $($arg:tt)*) => { emit($out, format_args!($($arg)*))? };
}

fn require(path: &Path) -> CmdResult {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("input not found: {}", path.display())))
    }
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &args.config {
        Some(p) => {
            require(p)?;
            RunConfig::load(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&args.overrides).map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn is_pgm(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

/// A PGM image, or a QVT1 tensor of any supported rank.
fn read_image_tensor(path: &Path) -> crate::Result<Tensor> {
    if is_pgm(path) {
        Ok(read_pgm(path)?.to_raster()?.to_tensor())
    } else {
        Ok(read_tensor(path)?.0)
    }
}

fn read_mask(path: &Path) -> crate::Result<Mask> {
    read_pgm(path)?.to_mask()
}

fn parse_split(s: &str) -> Result<Option<Split>, Failure> {
    match s {
        "all" => Ok(None),
        other => other.parse().map(Some).map_err(|e: Error| Failure::Usage(e.to_string())),
    }
}

fn prediction_file(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("patch_{index:05}.pgm"))
}

pub(super) fn dispatch(command: Command, out: &mut (dyn Write + Send)) -> CmdResult {
    match command {
        Command::Quanvolve { input, output, circuit, circuit_out, db, f64, cfg } => {
            quanvolve_cmd(&input, &output, circuit.as_deref(), circuit_out.as_deref(), db, f64, &cfg, out)
        }
        Command::SynthData { seed, height, width, buildings, looks, image, mask } => {
            let (img, m) = synth_scene(seed, height, width, buildings, looks)?;
            if is_pgm(&image) {
                write_pgm(&image, &Pgm::from_raster(&img, 65535)?)?;
            } else {
                write_tensor(&image, &Tensor::new(&[height, width], img.data().to_vec())?, Dtype::F64)?;
            }
            write_pgm(&mask, &Pgm::from_mask(&m, 255)?)?;
            say!(out, "scene {height}x{width}, {buildings} buildings, positive fraction {:.4}", m.positive_fraction());
            Ok(())
        }
        Command::MakePatches { images, masks, out: dir, split_seed, cfg } => {
            make_patches_cmd(&images, &masks, &dir, split_seed, &cfg, out)
        }
        Command::Train { patches, out: dir, log, cfg } => train_cmd(&patches, &dir, log.as_deref(), &cfg, out),
        Command::Eval { patches, model, predictions, split, table } => {
            eval_cmd(&patches, model.as_deref(), predictions.as_deref(), &split, table.as_deref(), out)
        }
        Command::Predict { patches, model, out: dir, split } => predict_cmd(&patches, &model, &dir, &split, out),
        Command::ParamCount { reference, cfg } => {
            let config = match reference.as_deref() {
                Some("baseline") => AttentionUNetConfig::reference_baseline(),
                Some(_) => AttentionUNetConfig::reference_quantum(),
                None => load_config(&cfg)?.model_config(None).map_err(|e| Failure::Usage(e.to_string()))?,
            };
            let n = count_params(&config)?;
            say!(out, "in_channels={} widths={:?} upsample={}", config.in_channels, config.widths, config.upsample);
            say!(out, "{n} trainable parameters ({:.1} million)", n as f64 / 1e6);
            Ok(())
        }
        Command::Gradcheck { seeds } => {
            if seeds == 0 {
                return Err(Failure::Usage("--seeds must be >= 1".into()));
            }
            let mut failed = 0;
            say!(out, "component\tmax_rel_error\ttolerance\tchecked\tskipped\tresult");
            for e in gradient_suite(seeds)? {
                say!(
                    out,
                    "{}\t{:.3e}\t{:.0e}\t{}\t{}\t{}",
                    e.name,
                    e.max_rel_error,
                    e.tolerance,
                    e.checked,
                    e.skipped,
                    if e.passed() { "pass" } else { "FAIL" }
                );
                if !e.passed() {
                    failed += 1;
                    say!(out, "  worst: {}", e.worst);
                }
            }
            if failed > 0 {
                return Err(Failure::Runtime(Error::Numeric(format!("{failed} components exceeded tolerance"))));
            }
            Ok(())
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn quanvolve_cmd(
    input: &Path,
    output: &Path,
    circuit_in: Option<&Path>,
    circuit_out: Option<&Path>,
    db: bool,
    wide: bool,
    args: &ConfigArgs,
    out: &mut (dyn Write + Send),
) -> CmdResult {
    require(input)?;
    let cfg = load_config(args)?;
    let circuit = match circuit_in {
        Some(p) => {
            require(p)?;
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            parse_circuit(&text)?
        }
        None => cfg.circuit().map_err(|e| Failure::Usage(e.to_string()))?,
    };
    let mut qcfg = cfg.quanv_config(circuit.clone()).map_err(|e| Failure::Usage(e.to_string()))?;
    qcfg.n_qubits = circuit.n_qubits();
    let raster = RasterImage::from_tensor(&read_image_tensor(input)?)?;
    let raster = if db { normalize_db(&raster, cfg.norm_lo_db, cfg.norm_hi_db)? } else { raster };
    let stack = quanvolve(&raster, &qcfg)?;
    let tensor = if cfg.quanv_concat { stack.concat_raw_band(&raster)? } else { stack.to_tensor() };
    write_tensor(output, &tensor, if wide { Dtype::F64 } else { Dtype::F32 })?;
    if let Some(p) = circuit_out {
        fs::write(p, serialize_circuit(&circuit)).map_err(|e| Error::io(p, e))?;
    }
    let d = tensor.dims();
    say!(
        out,
        "{} {} qubits x {} layers, kernel {}: {}x{} -> {}x{}x{} written to {}",
        circuit.template(),
        circuit.n_qubits(),
        circuit.n_layers(),
        qcfg.kernel_size,
        raster.height(),
        raster.width(),
        d[0],
        d[1],
        d[2],
        output.display()
    );
    Ok(())
}

fn make_patches_cmd(
    images: &[PathBuf],
    masks: &[PathBuf],
    dir: &Path,
    split_seed: u64,
    args: &ConfigArgs,
    out: &mut (dyn Write + Send),
) -> CmdResult {
    if images.len() != masks.len() {
        return Err(Failure::Usage(format!("{} --image but {} --mask", images.len(), masks.len())));
    }
    images.iter().chain(masks).try_for_each(|p| require(p))?;
    let cfg = load_config(args)?;
    let mut all: Option<PatchSet> = None;
    for (img, mask) in images.iter().zip(masks) {
        let set = extract_patches(&read_image_tensor(img)?, &read_mask(mask)?, cfg.data_patch, cfg.data_stride)?;
        say!(out, "{}: {} patches", img.display(), set.len());
        match &mut all {
            None => all = Some(set),
            Some(acc) => {
                if acc.channels != set.channels {
                    return Err(Failure::Runtime(Error::Shape(format!(
                        "{} has {} channels, earlier scenes have {}",
                        img.display(),
                        set.channels,
                        acc.channels
                    ))));
                }
                acc.items.extend(set.items);
            }
        }
    }
    let set = split(all.expect("at least one image"), cfg.data_test_fraction, split_seed)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    set.write_dir(dir)?;
    say!(
        out,
        "{} patches of {}x{}x{} ({} train, {} test) written to {}",
        set.len(),
        set.channels,
        set.patch_size,
        set.patch_size,
        set.count(Split::Train),
        set.count(Split::Test),
        dir.display()
    );
    Ok(())
}

fn train_cmd(
    patches: &Path,
    dir: &Path,
    log: Option<&Path>,
    args: &ConfigArgs,
    out: &mut (dyn Write + Send),
) -> CmdResult {
    require(patches)?;
    let cfg = load_config(args)?;
    let set = PatchSet::read_dir(patches)?;
    let model_cfg = cfg.model_config(Some(set.channels)).map_err(|e| Failure::Usage(e.to_string()))?;
    let train_cfg = cfg.train_config().map_err(|e| Failure::Usage(e.to_string()))?;
    let mut model = AttentionUNet::new(&model_cfg, cfg.train_seed)?;
    say!(out, "model: {} trainable parameters", count_trainable(&model));
    say!(out, "epoch\tloss\ttrain_oa");
    let mut write_failed = None;
    let log_entries = train_with(&mut model, &set, &train_cfg, &mut |e| {
        if let Err(f) = emit(out, format_args!("{}\t{:.6}\t{:.6}", e.epoch, e.loss, e.train_oa)) {
            write_failed.get_or_insert(f);
        }
    })?;
    if let Some(f) = write_failed {
        return Err(f);
    }
    save_checkpoint(&model, dir)?;
    let log_path = log.map(Path::to_path_buf).unwrap_or_else(|| dir.join("train_log.tsv"));
    fs::write(&log_path, log_entries.to_tsv()).map_err(|e| Error::io(&log_path, e))?;
    fs::write(dir.join("run.cfg"), cfg.to_text()).map_err(|e| Error::io(dir.join("run.cfg"), e))?;
    say!(out, "checkpoint written to {}", dir.display());
    Ok(())
}

fn eval_cmd(
    patches: &Path,
    model: Option<&Path>,
    predictions: Option<&Path>,
    split_name: &str,
    table: Option<&Path>,
    out: &mut (dyn Write + Send),
) -> CmdResult {
    require(patches)?;
    let which = parse_split(split_name)?;
    let set = PatchSet::read_dir(patches)?;
    let report: EvalReport = match (model, predictions) {
        (Some(m), _) => {
            require(m)?;
            let model = load_checkpoint(m)?;
            match which {
                Some(s) => evaluate(&model, &set, s)?,
                None => {
                    let mut preds = predict_split(&model, &set, Split::Train)?;
                    preds.extend(predict_split(&model, &set, Split::Test)?);
                    let items: Vec<_> =
                        set.of_split(Split::Train).into_iter().chain(set.of_split(Split::Test)).collect();
                    evaluate_predictions(&items, &preds)?
                }
            }
        }
        (None, Some(dir)) => {
            require(dir)?;
            let mut items = Vec::new();
            let mut preds = Vec::new();
            for (i, p) in set.items.iter().enumerate() {
                if which.is_none_or(|s| s == p.split) {
                    let file = prediction_file(dir, i);
                    require(&file)?;
                    preds.push(read_mask(&file)?);
                    items.push(p);
                }
            }
            evaluate_predictions(&items, &preds)?
        }
        (None, None) => return Err(Failure::Usage("either --model or --predictions is required".into())),
    };
    if let Some(t) = table {
        fs::write(t, report.table()).map_err(|e| Error::io(t, e))?;
    }
    let c = report.confusion;
    say!(
        out,
        "patches={} pixels={} tp={} fp={} tn={} fn={}",
        report.per_patch.len(),
        c.total(),
        c.tp,
        c.fp,
        c.tn,
        c.fn_
    );
    say!(out, "{}", report.summary_line());
    Ok(())
}

fn predict_cmd(patches: &Path, model: &Path, dir: &Path, split_name: &str, out: &mut (dyn Write + Send)) -> CmdResult {
    require(patches)?;
    require(model)?;
    let which = parse_split(split_name)?;
    let set = PatchSet::read_dir(patches)?;
    let model = load_checkpoint(model)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = 0;
    for s in [Split::Train, Split::Test] {
        if which.is_some_and(|w| w != s) {
            continue;
        }
        let masks = predict_split(&model, &set, s)?;
        let indices = set.items.iter().enumerate().filter(|(_, p)| p.split == s).map(|(i, _)| i);
        for (i, mask) in indices.zip(&masks) {
            write_pgm(&prediction_file(dir, i), &Pgm::from_mask(mask, 255)?)?;
            written += 1;
        }
    }
    say!(out, "{written} masks written to {}", dir.display());
    Ok(())
}
