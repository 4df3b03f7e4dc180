use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use seget_core::data::{parse_mrc, read_pgm, write_mask_pgm, MrcMode, MrcVolume, Structure};
use seget_core::model::{checkpoint, CheckpointMeta, NetworkConfig, SegEtNetwork};

fn seget(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seget"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &[&str] = &[
    "--set",
    "network.base_filters=2",
    "--set",
    "network.depth=2",
    "--set",
    "network.dilation_rates=[1,2]",
    "--set",
    "data.window=32",
    "--set",
    "data.stride=32",
    "--set",
    "train.epochs=2",
    "--set",
    "train.batch_size=4",
];

fn synth(dir: &Path, seed: &str) {
    let o = seget(&[
        "synth", "--out-dir", p(dir), "--seed", seed, "--slices", "5", "--height", "64", "--width", "64",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

fn train(data: &Path, out: &Path) -> Output {
    let mut args = vec!["train", "--preset", "granules", "--data-dir", p(data), "--out-dir", p(out)];
    args.extend_from_slice(TINY);
    seget(&args)
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&seget(&["--help"])), 0);
    assert_eq!(code(&seget(&["--version"])), 0);
    assert_eq!(code(&seget(&["train", "--bogus"])), 1);
    assert_eq!(code(&seget(&["--preset", "ribosome", "--dump-config"])), 1);
    assert_eq!(code(&seget(&[])), 1);
}

#[test]
fn dump_config_round_trips_presets() {
    let dir = tempfile::tempdir().unwrap();
    for s in Structure::ALL {
        let first = seget(&["--preset", s.name(), "--dump-config"]);
        assert_eq!(code(&first), 0);
        let path = dir.path().join(format!("{s}.toml"));
        fs::write(&path, &first.stdout).unwrap();
        let second = seget(&["--config", p(&path), "--dump-config"]);
        assert_eq!(first.stdout, second.stdout, "{s}");
    }
    let syn = stdout(&seget(&["--preset", "synapse", "--dump-config"]));
    for line in [
        "lr = 0.0001",
        "lr_decay = 0.000001",
        "batch_size = 12",
        "early_stop_patience = 8",
        "reduce_factor = 0.5",
        "reduce_patience = 3",
    ] {
        assert!(syn.lines().any(|l| l == line), "missing {line:?}");
    }
    let cen = stdout(&seget(&["--preset", "centriole", "--dump-config"]));
    assert!(cen.contains("oversample = 4") && cen.contains("weight_cap = 2000.0"));
    let gol = stdout(&seget(&["--preset", "golgi", "--dump-config"]));
    assert!(gol.contains("oversample = 2") && gol.contains("weight_cap = 1000.0"));
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[train]\nlearning_rate = 0.1\n").unwrap();
    assert_eq!(code(&seget(&["--config", p(&bad), "--dump-config"])), 1);
    assert_eq!(code(&seget(&["--set", "train.batch_size=0", "--dump-config"])), 1);
    let missing = dir.path().join("missing.toml");
    assert_eq!(code(&seget(&["--config", p(&missing), "--dump-config"])), 4);
}

#[test]
fn synth_is_deterministic_and_binary() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    synth(&a, "7");
    synth(&b, "7");
    synth(&c, "8");
    let files = ["volume.mrc", "mask_synapse.mrc", "mask_mts.mrc", "mask_golgi.mrc"];
    for f in files {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_ne!(fs::read(a.join("volume.mrc")).unwrap(), fs::read(c.join("volume.mrc")).unwrap());
    let vol = parse_mrc(&fs::read(a.join("volume.mrc")).unwrap()).unwrap();
    assert_eq!((vol.nx, vol.ny, vol.nz, vol.mode), (64, 64, 5, MrcMode::Int8));
    for s in Structure::ALL {
        let m = parse_mrc(&fs::read(a.join(format!("mask_{}.mrc", s.name()))).unwrap()).unwrap();
        assert!(m.data.iter().all(|&v| v == 0.0 || v == 1.0));
    }
    assert_eq!(code(&seget(&["synth", "--out-dir", p(&a), "--height", "40"])), 2);
}

#[test]
fn train_predict_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, "3");
    let (r1, r2) = (dir.path().join("r1"), dir.path().join("r2"));
    let o = train(&data, &r1);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(code(&train(&data, &r2)), 0);
    for f in ["train.log", "best.ckpt", "manifest.txt"] {
        assert_eq!(fs::read(r1.join(f)).unwrap(), fs::read(r2.join(f)).unwrap(), "{f}");
    }
    let log = fs::read_to_string(r1.join("train.log")).unwrap();
    assert!(log.starts_with("epoch 1 loss "));

    let pred = dir.path().join("pred");
    let vol = p(&data.join("volume.mrc")).to_string();
    let ck = p(&r1.join("best.ckpt")).to_string();
    let mut args = vec!["predict", "--checkpoint", &ck, "--volume", &vol, "--out-dir", p(&pred)];
    args.extend_from_slice(&["--set", "data.window=32", "--set", "data.stride=16"]);
    assert_eq!(code(&seget(&args)), 0);
    let mask = read_pgm(&fs::read(pred.join("mask_0004.pgm")).unwrap()).unwrap();
    assert_eq!((mask.width, mask.height), (64, 64));
    let probs = parse_mrc(&fs::read(pred.join("probs.mrc")).unwrap()).unwrap();
    assert_eq!((probs.nx, probs.ny, probs.nz, probs.mode), (64, 64, 5, MrcMode::Float32));
    assert!(probs.data.iter().all(|&v| (0.0..=1.0).contains(&v)));

    // a [network] override that disagrees with the checkpoint is refused
    let mut bad = args.clone();
    bad.extend_from_slice(&["--set", "network.base_filters=4"]);
    assert_eq!(code(&seget(&bad)), 1);

    let gt = p(&data.join("mask_granules.mrc")).to_string();
    let same = stdout(&seget(&["evaluate", "--pred", &gt, "--gt", &gt]));
    assert!(same.lines().any(|l| l == "miou 1.000000"), "{same}");
    let o = seget(&["evaluate", "--pred", p(&pred), "--gt", &gt]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("miou "));
}

#[test]
fn train_rejects_mismatched_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, "1");
    let other = dir.path().join("other");
    let o = seget(&[
        "synth", "--out-dir", p(&other), "--slices", "4", "--height", "64", "--width", "64",
    ]);
    assert_eq!(code(&o), 0);
    let vol = p(&data.join("volume.mrc")).to_string();
    let mask = p(&other.join("mask_granules.mrc")).to_string();
    let out = p(&dir.path().join("run")).to_string();
    let mut args = vec!["train", "--volume", &vol, "--mask", &mask, "--out-dir", &out];
    args.extend_from_slice(TINY);
    assert_eq!(code(&seget(&args)), 2);
    let garbage = dir.path().join("garbage.mrc");
    fs::write(&garbage, b"short").unwrap();
    let g = p(&garbage).to_string();
    let mut args = vec!["train", "--volume", &g, "--mask", &mask, "--out-dir", &out];
    args.extend_from_slice(TINY);
    assert_eq!(code(&seget(&args)), 2);
}

fn constant_checkpoint(path: &Path, logit: f64) {
    let mut net = SegEtNetwork::build(&NetworkConfig::small(2, 2, vec![1, 2]), 0).unwrap();
    net.head.kernel_mut().value.fill(0.0);
    net.head.bias_mut().unwrap().value.fill(logit);
    checkpoint::save(path, &net, CheckpointMeta { epoch: 1, metric: 0.0 }).unwrap();
}

#[test]
fn zero_logit_checkpoint_predicts_background() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, "2");
    let ck = dir.path().join("zero.ckpt");
    constant_checkpoint(&ck, 0.0);
    let out = dir.path().join("pred");
    let o = seget(&[
        "predict",
        "--checkpoint",
        p(&ck),
        "--volume",
        p(&data.join("volume.mrc")),
        "--out-dir",
        p(&out),
        "--set",
        "data.window=64",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for z in 0..5 {
        let m = read_pgm(&fs::read(out.join(format!("mask_{z:04}.pgm"))).unwrap()).unwrap();
        assert_eq!((m.width, m.height), (64, 64));
        assert!(m.pixels.iter().all(|&v| v == 0));
    }
    // 62x62 slices fit inside the window but are not divisible by 2^depth
    let odd = dir.path().join("odd.mrc");
    let v = MrcVolume::new(62, 62, 2, MrcMode::Int8, vec![0.0; 62 * 62 * 2]).unwrap();
    fs::write(&odd, v.to_bytes().unwrap()).unwrap();
    let o = seget(&["predict", "--checkpoint", p(&ck), "--volume", p(&odd), "--out-dir", p(&out)]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("slice 0") && err.contains("slice 1"), "{err}");
}

fn write_pgm(path: &Path, bits: &[u8]) {
    fs::write(path, write_mask_pgm(bits, bits.len(), 1).unwrap()).unwrap();
}

#[test]
fn evaluate_worked_cases() {
    let dir = tempfile::tempdir().unwrap();
    let (gt, pred, off) = (dir.path().join("gt.pgm"), dir.path().join("pred.pgm"), dir.path().join("off.pgm"));
    write_pgm(&gt, &[1, 1, 0, 0]);
    write_pgm(&pred, &[1, 0, 0, 0]);
    write_pgm(&off, &[0, 0, 1, 1]);
    let o = stdout(&seget(&["evaluate", "--pred", p(&pred), "--gt", p(&gt)]));
    let expect = format!("miou {:.6}", 7.0 / 12.0);
    assert!(o.lines().any(|l| l == expect), "{o}");
    assert!(o.lines().any(|l| l == "pixel_accuracy 0.750000"), "{o}");
    let o = stdout(&seget(&["evaluate", "--pred", p(&off), "--gt", p(&gt)]));
    assert!(o.lines().any(|l| l == "iou_foreground 0.000000"), "{o}");
    let o = stdout(&seget(&["evaluate", "--pred", p(&gt), "--gt", p(&gt)]));
    assert!(o.lines().any(|l| l == "miou 1.000000"), "{o}");
    let wide = dir.path().join("wide.pgm");
    write_pgm(&wide, &[1, 1, 0, 0, 0]);
    assert_eq!(code(&seget(&["evaluate", "--pred", p(&wide), "--gt", p(&gt)])), 2);
}

fn prob_volume(dir: &Path, name: &str, values: &[f64]) -> PathBuf {
    let path = dir.join(name);
    let v = MrcVolume::new(values.len(), 1, 1, MrcMode::Float32, values.to_vec()).unwrap();
    fs::write(&path, v.to_bytes().unwrap()).unwrap();
    path
}

#[test]
fn fuse_rule_and_unfusion() {
    let dir = tempfile::tempdir().unwrap();
    // pixels: argmax among candidates, nothing above threshold, MTs/Golgi tie
    let per_class = [
        [0.9, 0.5, 0.0],
        [0.2, 0.1, 0.8],
        [0.1, 0.3, 0.1],
        [0.6, 0.4, 0.2],
        [0.3, 0.5, 0.8],
    ];
    let paths: Vec<PathBuf> = Structure::ALL
        .iter()
        .zip(&per_class)
        .map(|(s, v)| prob_volume(dir.path(), &format!("{s}.mrc"), v))
        .collect();
    let out = dir.path().join("fused");
    let mut args = vec!["fuse", "--out-dir", p(&out), "--probs"];
    args.extend(paths.iter().map(|x| p(x)));
    let o = seget(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let labels = parse_mrc(&fs::read(out.join("fused.mrc")).unwrap()).unwrap();
    let synapse = Structure::Synapse.index() as f64 + 1.0;
    let mts = Structure::Mts.index() as f64 + 1.0;
    assert_eq!(labels.data, vec![synapse, 0.0, mts]);
    // wherever a class won, its own thresholded map is set
    for (px, &l) in labels.data.iter().enumerate() {
        if l > 0.0 {
            assert!(per_class[l as usize - 1][px] > 0.5);
        }
    }
    assert!(fs::read(out.join("fused_0000.ppm")).unwrap().starts_with(b"P6"));

    let short = prob_volume(dir.path(), "short.mrc", &[0.1, 0.2]);
    let mut args = vec!["fuse", "--out-dir", p(&out), "--probs"];
    args.extend(paths[..4].iter().map(|x| p(x)));
    args.push(p(&short));
    assert_eq!(code(&seget(&args)), 2);
}

#[test]
fn gradcheck_passes_and_catches_mutations() {
    let o = seget(&["gradcheck", "--seeds", "2"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.lines().any(|l| l.starts_with("conv2d s1 d1") && l.contains("max_rel_error")));
    assert!(text.ends_with("gradcheck PASS\n"));
    for m in ["conv-kernel", "bn-input", "leaky-relu"] {
        let o = seget(&["gradcheck", "--seeds", "2", "--mutate", m]);
        assert_eq!(code(&o), 3, "{m}");
        assert!(stdout(&o).ends_with("gradcheck FAIL\n"));
    }
}
