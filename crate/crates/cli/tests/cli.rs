use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ccdc_core::imageops::ColorImage;
use ccdc_core::io::write_color_png;

fn ccdc(args: &[&str], cache: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccdc"))
        .args(args)
        .env("CCDC_CACHE_DIR", cache)
        .output()
        .expect("binary runs")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn write_image(path: &Path, h: usize, w: usize) {
    let img = ColorImage::from_fn(h, w, |c, y, x| ((c * 31 + y * 7 + x * 3) % 17) as f32 / 16.0).unwrap();
    write_color_png(path, &img).unwrap();
}

fn tiny_checkpoint(dir: &Path) -> PathBuf {
    let ckpt = dir.join("tiny.ckpt");
    let o = ccdc(
        &[
            "train",
            "--set",
            "ladder=4,4,8,8",
            "--set",
            "flow_width=0.0625",
            "--set",
            "steps=2",
            "--set",
            "batch_size=2",
            "--set",
            "toy_pairs=2",
            "--out",
            ckpt.to_str().unwrap(),
        ],
        dir,
    );
    assert!(o.status.success(), "{}", text(&o));
    ckpt
}

#[test]
fn toy_dataset_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = ccdc(
            &["make-dataset", "--toy", "--seed", "7", "--n", "8", "--size", "64", "--out", out.to_str().unwrap()],
            tmp.path(),
        );
        assert!(o.status.success(), "{}", text(&o));
    }
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(ta.iter().any(|(p, _)| p == Path::new("manifest.txt")));
    assert_eq!(ta.len(), 1 + 8 * 7);
    assert_eq!(ta, tb);

    let o = ccdc(
        &["make-dataset", "--toy", "--seed", "8", "--n", "8", "--size", "64", "--out", b.to_str().unwrap()],
        tmp.path(),
    );
    assert!(o.status.success());
    assert_ne!(tree(&b), ta);
}

#[test]
fn gradcheck_warp_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ccdc(&["gradcheck", "--module", "warp"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert!(text(&o).contains("ok"));
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(ccdc(&["gradcheck", "--bogus"], tmp.path()).status.code(), Some(2));
    assert_eq!(ccdc(&["gradcheck", "--module", "flow"], tmp.path()).status.code(), Some(2));
    assert_eq!(ccdc(&["train", "--set", "no_such_key=1"], tmp.path()).status.code(), Some(2));
    assert_eq!(ccdc(&["make-dataset", "--out", "x"], tmp.path()).status.code(), Some(2));
    let help = ccdc(&["make-dataset", "--help"], tmp.path());
    assert_eq!(help.status.code(), Some(0));
    for flag in ["--toy", "--from-frames", "--seed", "--config", "--scale", "--frame-gap"] {
        assert!(text(&help).contains(flag), "{flag}");
    }
}

#[test]
fn colorize_vis_dump_and_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = tiny_checkpoint(tmp.path());
    let (target, reference, wrong) = (tmp.path().join("t.png"), tmp.path().join("r.png"), tmp.path().join("w.png"));
    write_image(&target, 64, 64);
    write_image(&reference, 16, 16);
    write_image(&wrong, 32, 32);
    let c = ckpt.to_str().unwrap();

    let bad = ccdc(
        &["colorize", "--checkpoint", c, "--target", target.to_str().unwrap(), "--reference", wrong.to_str().unwrap(), "--out", "x.png"],
        tmp.path(),
    );
    assert_eq!(bad.status.code(), Some(2), "{}", text(&bad));
    assert!(text(&bad).contains("32x32 × 4 = 128x128"), "{}", text(&bad));

    let out = tmp.path().join("out.png");
    let args = ["--checkpoint", c, "--target", target.to_str().unwrap(), "--reference", reference.to_str().unwrap()];
    let mut colorize = vec!["colorize"];
    colorize.extend(args);
    colorize.extend(["--out", out.to_str().unwrap()]);
    let o = ccdc(&colorize, tmp.path());
    assert!(o.status.success(), "{}", text(&o));
    let first = fs::read(&out).unwrap();
    assert!(ccdc(&colorize, tmp.path()).status.success());
    assert_eq!(fs::read(&out).unwrap(), first);

    let dump = tmp.path().join("dump");
    let mut vis = vec!["vis-dump"];
    vis.extend(args);
    vis.extend(["--out", dump.to_str().unwrap()]);
    let o = ccdc(&vis, tmp.path());
    assert!(o.status.success(), "{}", text(&o));
    for i in 0..5 {
        let bytes = fs::read(dump.join(format!("flow_{i}.ccfl"))).unwrap();
        assert_eq!(&bytes[..4], b"CCFL");
    }
    assert!(dump.join("visibility_v0.png").exists());

    let data = tmp.path().join("data");
    let o = ccdc(&["make-dataset", "--toy", "--n", "2", "--size", "64", "--out", data.to_str().unwrap()], tmp.path());
    assert!(o.status.success(), "{}", text(&o));
    let csv = tmp.path().join("eval.csv");
    let manifest = data.join("manifest.txt");
    let o = ccdc(
        &["eval", "--checkpoint", c, "--manifest", manifest.to_str().unwrap(), "--out", csv.to_str().unwrap()],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", text(&o));
    let table = fs::read_to_string(&csv).unwrap();
    assert!(table.starts_with("dataset,frame,view,scale,method,nrmse,psnr,ssim,lpips,runtime\n"));
    assert_eq!(table.lines().count(), 3);
}

#[test]
fn train_defaults_to_the_cache_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "ladder = 4, 4, 8, 8\nflow_width = 0.0625\nsteps = 1\nbatch_size = 1\ntoy_pairs = 1\n").unwrap();
    let cache = tmp.path().join("cache");
    let o = ccdc(&["train", "--config", cfg.to_str().unwrap(), "--seed", "3"], &cache);
    assert!(o.status.success(), "{}", text(&o));
    let ckpt = ccdc_core::checkpoint::Checkpoint::load(&cache.join("final.ckpt")).unwrap();
    assert_eq!(ckpt.config.seed, 3);
    assert_eq!(ckpt.step, 1);
}
