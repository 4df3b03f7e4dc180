use std::fs;
use std::path::{Path, PathBuf};

use seget_core::data::{
    self, covering_origins, extract_patches, fuse_maps, normalize, parse_mrc, read_pgm, render_manifest,
    split_train_val, synthesize, write_fused_ppm, write_mask_pgm, MrcMode, MrcVolume, Patch, Stitcher, Structure,
    SynthConfig,
};
use seget_core::loss::{accumulate_confusion, binarize, miou, pixel_accuracy, ConfusionCounts};
use seget_core::model::{checkpoint, network_gradcheck, NetworkConfig, SegEtNetwork};
use seget_core::tensor::gradcheck::{operator_suite, GradReport, Mutation};
use seget_core::tensor::{sigmoid, BnMode, Shape, Tensor};
use seget_core::train::{fit, Sample};

use crate::config::RunConfig;
use crate::error::{checkpoint_error, CliError};

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(CliError::io(path))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(CliError::io(path))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))
}

pub fn load_mrc(path: &Path) -> Result<MrcVolume, CliError> {
    parse_mrc(&read(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn mask_file_name(s: Structure) -> String {
    format!("mask_{}.mrc", s.name())
}

pub struct SynthArgs {
    pub slices: usize,
    pub height: usize,
    pub width: usize,
    pub noise: f64,
    pub structures: Vec<Structure>,
}

pub fn synth(args: SynthArgs, seed: u64, out_dir: &Path) -> Result<(), CliError> {
    let cfg = SynthConfig {
        slices: args.slices,
        height: args.height,
        width: args.width,
        noise: args.noise,
        structures: args.structures,
    };
    let ds = synthesize(&cfg, seed)?;
    ensure_dir(out_dir)?;
    write(&out_dir.join("volume.mrc"), &ds.volume.to_bytes()?)?;
    for (s, m) in &ds.masks {
        write(&out_dir.join(mask_file_name(*s)), &m.to_bytes()?)?;
    }
    println!(
        "wrote {} slices of {}x{} and {} mask volumes to {}",
        cfg.slices,
        cfg.height,
        cfg.width,
        ds.masks.len(),
        out_dir.display()
    );
    Ok(())
}

fn check_same_geometry(a: &MrcVolume, b: &MrcVolume, what: &str) -> Result<(), CliError> {
    if (a.nx, a.ny, a.nz) != (b.nx, b.ny, b.nz) {
        return Err(CliError::Data(format!(
            "{what}: {}x{}x{} vs {}x{}x{}",
            a.nx, a.ny, a.nz, b.nx, b.ny, b.nz
        )));
    }
    Ok(())
}

fn patches_for(
    slices: &[usize],
    images: &[Vec<f64>],
    masks: &[Vec<f64>],
    h: usize,
    w: usize,
    cfg: &RunConfig,
) -> Result<Vec<Patch>, CliError> {
    let mut out = Vec::new();
    for &s in slices {
        out.extend(extract_patches(s, &images[s], &masks[s], h, w, cfg.data.window, cfg.data.stride)?);
    }
    Ok(out)
}

fn to_samples(patches: &[Patch]) -> Vec<Sample> {
    patches
        .iter()
        .map(|p| Sample {
            image: p.image.clone(),
            mask: p.mask.clone(),
        })
        .collect()
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let volume_path = cfg
        .data
        .volume
        .as_ref()
        .ok_or_else(|| CliError::Config("no training volume (data.volume or --volume)".into()))?;
    let mask_path = cfg
        .data
        .mask
        .as_ref()
        .ok_or_else(|| CliError::Config("no training mask (data.mask or --mask)".into()))?;
    let volume = load_mrc(volume_path)?;
    let mask = load_mrc(mask_path)?;
    check_same_geometry(&volume, &mask, "volume and mask differ")?;

    let images = normalize(&volume, cfg.scope());
    let masks: Vec<Vec<f64>> = (0..mask.nz)
        .map(|z| mask.slice(z).iter().map(|&v| (v > 0.0) as u8 as f64).collect())
        .collect();
    let split = split_train_val(volume.nz, cfg.data.val_period, cfg.data.val_phase)?;
    let (h, w) = (volume.ny, volume.nx);
    let mut train_patches = patches_for(&split.train, &images, &masks, h, w, cfg)?;
    let val_patches = patches_for(&split.val, &images, &masks, h, w, cfg)?;
    data::attach_weights(&mut train_patches, cfg.train.weighting.then_some(cfg.loss.weight_cap));
    log::info!(
        "{} training patches ({} positive), {} validation patches",
        train_patches.len(),
        train_patches.iter().filter(|p| p.is_positive()).count(),
        val_patches.len()
    );

    let out = &cfg.data.out_dir;
    ensure_dir(out)?;
    write(&out.join("manifest.txt"), render_manifest(&train_patches).as_bytes())?;
    write(&out.join("config.toml"), cfg.to_toml().as_bytes())?;

    let ckpt = out.join("best.ckpt");
    let mut net = SegEtNetwork::build(&cfg.network_config(), cfg.train.seed)?;
    let report = match fit(
        &mut net,
        &to_samples(&train_patches),
        &to_samples(&val_patches),
        &cfg.train_config(Some(ckpt.clone())),
    ) {
        Ok(r) => r,
        Err(seget_core::train::TrainError::Checkpoint { source, partial }) => {
            let _ = write(&out.join("train.log"), partial.render().as_bytes());
            return Err(checkpoint_error(&ckpt, source));
        }
        Err(e) => return Err(e.into()),
    };
    write(&out.join("train.log"), report.render().as_bytes())?;
    println!(
        "best epoch {} val_miou {:.6}; checkpoint {}",
        report.best_epoch,
        report.best_val_miou,
        ckpt.display()
    );
    Ok(())
}

/// Probability map of one slice, stitched from covering windows with mean
/// overlap.
pub fn predict_slice(
    net: &mut SegEtNetwork,
    image: &[f64],
    h: usize,
    w: usize,
    window: usize,
    stride: usize,
) -> Result<Vec<f64>, CliError> {
    let (wh, ww) = (window.min(h), window.min(w));
    net.check_input(Shape::new(1, net.config().input_channels, wh, ww))?;
    let mut st = Stitcher::new(h, w);
    for &y in &covering_origins(h, wh, stride) {
        for &x in &covering_origins(w, ww, stride) {
            let mut patch = Vec::with_capacity(wh * ww);
            for r in 0..wh {
                patch.extend_from_slice(&image[(y + r) * w + x..(y + r) * w + x + ww]);
            }
            let t = Tensor::from_vec(Shape::new(1, 1, wh, ww), patch).map_err(|e| CliError::Data(e.to_string()))?;
            let probs = sigmoid(&net.forward(&t)?);
            st.add(y, x, wh, ww, probs.data())?;
        }
    }
    Ok(st.finish()?)
}

pub fn predict(
    cfg: &RunConfig,
    checkpoint_path: &Path,
    volume_path: &Path,
    verify_network: bool,
) -> Result<(), CliError> {
    let (mut net, meta) = checkpoint::load(checkpoint_path).map_err(|e| checkpoint_error(checkpoint_path, e))?;
    if verify_network && net.config() != &cfg.network_config() {
        return Err(CliError::Config(format!(
            "checkpoint {} was trained with a different [network] section",
            checkpoint_path.display()
        )));
    }
    if net.config().input_channels != 1 {
        return Err(CliError::Data("prediction needs a single-channel network".into()));
    }
    net.set_mode(BnMode::Infer);
    log::info!("checkpoint epoch {} metric {:.6}", meta.epoch, meta.metric);

    let volume = load_mrc(volume_path)?;
    let images = normalize(&volume, cfg.scope());
    let (h, w) = (volume.ny, volume.nx);
    let out = &cfg.data.out_dir;
    ensure_dir(out)?;
    let mut all_probs = Vec::with_capacity(volume.data.len());
    let mut failures = Vec::new();
    for (z, image) in images.iter().enumerate() {
        match predict_slice(&mut net, image, h, w, cfg.data.window, cfg.data.stride) {
            Ok(probs) => {
                let mask = binarize(&probs, cfg.train.threshold);
                write(&out.join(format!("mask_{z:04}.pgm")), &write_mask_pgm(&mask, w, h)?)?;
                all_probs.extend(probs);
            }
            Err(e @ (CliError::Data(_) | CliError::Config(_))) => {
                log::error!("slice {z}: {e}");
                failures.push(z);
                all_probs.extend(std::iter::repeat_n(0.0, h * w));
            }
            Err(e) => return Err(e),
        }
    }
    if !failures.is_empty() {
        return Err(CliError::Data(format!(
            "{} of {} slices could not be predicted (first: slice {})",
            failures.len(),
            volume.nz,
            failures[0]
        )));
    }
    let probs = MrcVolume::new(w, h, volume.nz, MrcMode::Float32, all_probs)?;
    write(&out.join("probs.mrc"), &probs.to_bytes()?)?;
    println!("wrote {} masks and probs.mrc to {}", volume.nz, out.display());
    Ok(())
}

/// A binary mask stack: `(width, height, slices of 0/1)`.
pub struct MaskStack {
    pub w: usize,
    pub h: usize,
    pub slices: Vec<Vec<u8>>,
}

/// Reads an MRC volume, a PGM file, or a directory of PGM files (sorted by
/// name). Any nonzero sample is foreground.
pub fn load_mask_stack(path: &Path) -> Result<MaskStack, CliError> {
    let fg = |v: &[f64]| v.iter().map(|&x| (x > 0.0) as u8).collect::<Vec<u8>>();
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(CliError::io(path))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(CliError::Data(format!("{} holds no .pgm files", path.display())));
        }
        let mut stack: Option<MaskStack> = None;
        for f in &files {
            let img = read_pgm(&read(f)?).map_err(|e| CliError::Data(format!("{}: {e}", f.display())))?;
            let s = stack.get_or_insert(MaskStack {
                w: img.width,
                h: img.height,
                slices: Vec::new(),
            });
            if (img.width, img.height) != (s.w, s.h) {
                return Err(CliError::Data(format!("{} has a different size", f.display())));
            }
            s.slices.push(img.pixels.iter().map(|&p| (p > 0) as u8).collect());
        }
        return Ok(stack.expect("non-empty"));
    }
    if path.extension().is_some_and(|x| x == "pgm") {
        let img = read_pgm(&read(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        return Ok(MaskStack {
            w: img.width,
            h: img.height,
            slices: vec![img.pixels.iter().map(|&p| (p > 0) as u8).collect()],
        });
    }
    let v = load_mrc(path)?;
    Ok(MaskStack {
        w: v.nx,
        h: v.ny,
        slices: (0..v.nz).map(|z| fg(v.slice(z))).collect(),
    })
}

pub fn evaluate(pred: &Path, gt: &Path) -> Result<String, CliError> {
    let p = load_mask_stack(pred)?;
    let g = load_mask_stack(gt)?;
    if (p.w, p.h, p.slices.len()) != (g.w, g.h, g.slices.len()) {
        return Err(CliError::Data(format!(
            "stack shapes differ: prediction {}x{}x{}, ground truth {}x{}x{}",
            p.w,
            p.h,
            p.slices.len(),
            g.w,
            g.h,
            g.slices.len()
        )));
    }
    let mut counts = ConfusionCounts::new(2);
    for (a, b) in p.slices.iter().zip(&g.slices) {
        accumulate_confusion(a, b, &mut counts).map_err(|e| CliError::Data(e.to_string()))?;
    }
    let m = miou(&counts).map_err(|e| CliError::Data(e.to_string()))?;
    let acc = pixel_accuracy(&counts).map_err(|e| CliError::Data(e.to_string()))?;
    let mut out = format!("miou {m:.6}\npixel_accuracy {acc:.6}\n");
    for (i, name) in ["background", "foreground"].iter().enumerate() {
        let (inter, union) = counts.class_iou_terms(i);
        if union > 0 {
            out += &format!("iou_{name} {:.6}\n", inter as f64 / union as f64);
        } else {
            out += &format!("iou_{name} absent\n");
        }
    }
    out += &format!(
        "counts tn {} fp {} fn {} tp {}\n",
        counts.get(0, 0),
        counts.get(0, 1),
        counts.get(1, 0),
        counts.get(1, 1)
    );
    Ok(out)
}

/// Fuses five probability volumes given in the order Synapse, MTs,
/// Centriole, Granules, Golgi.
pub fn fuse(probs: &[PathBuf], threshold: f64, out_dir: &Path) -> Result<(), CliError> {
    if probs.len() != Structure::ALL.len() {
        return Err(CliError::Config(format!(
            "fuse needs {} probability volumes, got {}",
            Structure::ALL.len(),
            probs.len()
        )));
    }
    let vols: Vec<MrcVolume> = probs.iter().map(|p| load_mrc(p)).collect::<Result<_, _>>()?;
    for (v, p) in vols.iter().zip(probs).skip(1) {
        check_same_geometry(&vols[0], v, &format!("{} is misaligned with {}", p.display(), probs[0].display()))?;
    }
    let (w, h, nz) = (vols[0].nx, vols[0].ny, vols[0].nz);
    ensure_dir(out_dir)?;
    let mut classes = Vec::with_capacity(w * h * nz);
    for z in 0..nz {
        let maps: [&[f64]; 5] = std::array::from_fn(|i| vols[i].slice(z));
        let fused = fuse_maps(maps, threshold)?;
        write(&out_dir.join(format!("fused_{z:04}.ppm")), &write_fused_ppm(&fused, w, h)?)?;
        classes.extend(fused.iter().map(|&c| c as f64));
    }
    let labels = MrcVolume::new(w, h, nz, MrcMode::Int8, classes)?;
    write(&out_dir.join("fused.mrc"), &labels.to_bytes()?)?;
    println!("fused {nz} slices into {}", out_dir.display());
    Ok(())
}

pub fn parse_mutation(s: &str) -> Result<Mutation, CliError> {
    match s {
        "none" => Ok(Mutation::None),
        "conv-kernel" => Ok(Mutation::ScaleConvKernelGrad(1.01)),
        "bn-input" => Ok(Mutation::ScaleBatchNormInputGrad(1.01)),
        "leaky-relu" => Ok(Mutation::LeakyReluGrad),
        other => Err(CliError::Config(format!(
            "unknown mutation {other:?} (none, conv-kernel, bn-input, leaky-relu)"
        ))),
    }
}

fn report_line(r: &GradReport) -> String {
    format!(
        "{:<28} max_rel_error {:.3e} checked {:>6} tol {:.0e} {}",
        r.name,
        r.max_rel_error,
        r.checked,
        r.tolerance,
        if r.passed { "PASS" } else { "FAIL" }
    )
}

/// Operator suite followed by the tiny-network check; returns the report and
/// whether everything passed.
pub fn gradcheck(seeds: u64, tol: f64, mutation: Mutation) -> Result<(String, bool), CliError> {
    let mut reports = operator_suite(seeds, mutation, tol);
    let tiny = NetworkConfig::small(2, 1, vec![1, 2]);
    reports.push(network_gradcheck(&tiny, Shape::new(1, 1, 8, 8), 0, 1e-3)?);
    let mut out = String::new();
    for r in &reports {
        out += &report_line(r);
        out.push('\n');
    }
    let ok = reports.iter().all(|r| r.passed);
    out += if ok { "gradcheck PASS\n" } else { "gradcheck FAIL\n" };
    Ok((out, ok))
}
