//! Acceptance criteria, run in order on one thread so that wall-clock limits
//! are measured without interference. Prints one PASS/FAIL line per
//! criterion and exits non-zero if any fails.

use std::fs;
use std::path::Path;
use std::time::Instant;

use ccdc_core::checkpoint::Checkpoint;
use ccdc_core::config::RunConfig;
use ccdc_core::data::{make_pair, toy_dataset, toy_sequences, write_toy_dataset, PairRecipe};
use ccdc_core::encoders::encode_luminance;
use ccdc_core::flow_estimator::FlowPyramid;
use ccdc_core::imageops::{luminance, ColorImage, GrayImage};
use ccdc_core::losses::{colorization_loss, warping_loss, warping_loss_var};
use ccdc_core::metrics::{nrmse, psnr, ssim};
use ccdc_core::trainer::{loss_csv, Batch, Model, Stage, Trainer};
use ccdc_core::visibility::{feature_visibility, image_visibility};
use ccdc_core::warp::{bilinear_warp, near_sample_kink, warp, warp_pyramid, FlowField};
use ccdc_tensor::gradcheck::{check_gradients, GradCheckReport};
use ccdc_tensor::{Binder, Graph, Tensor, TensorError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Architecture and optimizer used for the training criteria.
fn training_config() -> RunConfig {
    RunConfig {
        ladder: vec![16, 32, 64, 64],
        flow_width: 0.125,
        learning_rate: 1e-3,
        batch_size: 4,
        steps: 1000,
        seed: 0,
        toy_pairs: 8,
        toy_size: 64,
        scale: 4,
        frame_gap: 2,
        resample_frame_gap: false,
        ..RunConfig::default()
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

fn warp_kinks(flow: &Tensor<f64>, h: usize, w: usize) -> Vec<bool> {
    (0..2 * h * w)
        .map(|i| {
            let p = i % (h * w);
            let base = if i < h * w { (p % w) as f64 } else { (p / w) as f64 };
            near_sample_kink(flow.data()[i] + base, 1e-3)
        })
        .collect()
}

fn criterion_gradients() -> Outcome {
    let start = Instant::now();
    let (h, w) = (5, 5);
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut record = |r: GradCheckReport, what: &str| -> Result<(), String> {
        ensure(r.passes(1e-4), format!("{what}: {r:?}"))?;
        worst = worst.max(r.max_relative_error);
        checked += r.checked;
        Ok(())
    };
    for seed in 0..4 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = random_tensor(&mut rng, vec![1, 2, h, w], 0.0, 1.0);
        let flow = random_tensor(&mut rng, vec![1, 2, h, w], -2.0, 2.0);
        let weights = random_tensor(&mut rng, vec![1, 2, h, w], -1.0, 1.0);
        let kinks = warp_kinks(&flow, h, w);
        let report = check_gradients(
            &[input, flow.clone()],
            1e-5,
            |g: &Graph<f64>, v| {
                let out = warp(v[0], v[1]).map_err(|e| TensorError::argument("warp", e.to_string()))?;
                Ok(out.mul(g.constant(weights.clone()))?.sum())
            },
            |i, e| i == 1 && kinks[e],
        )
        .map_err(err)?;
        record(report, "bilinear warp")?;

        let reference = random_tensor(&mut rng, vec![1, 3, h, w], 0.0, 1.0);
        let truth = random_tensor(&mut rng, vec![1, 3, h, w], 0.0, 1.0);
        let report = check_gradients(
            &[flow],
            1e-5,
            |g: &Graph<f64>, v| {
                warping_loss_var(g.constant(reference.clone()), g.constant(truth.clone()), v[0])
                    .map_err(|e| TensorError::argument("warping loss", e.to_string()))
            },
            |_, e| kinks[e],
        )
        .map_err(err)?;
        record(report, "warping loss")?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 5.0, format!("took {secs:.2} s"))?;
    Ok(format!("{checked} elements, max relative error {worst:.2e}, {secs:.2} s"))
}

fn ssim_direct(a: &ColorImage, b: &ColorImage) -> f64 {
    let (h, w) = a.size();
    let lum = |img: &ColorImage, y: usize, x: usize| {
        let [r, g, bl] = img.pixel(y, x);
        0.299 * r as f64 + 0.587 * g as f64 + 0.114 * bl as f64
    };
    let mut weights = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in weights.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / 4.5).exp();
            total += *v;
        }
    }
    let (c1, c2) = (1e-4, 9e-4);
    let mut acc = 0.0;
    let mut count = 0.0;
    for y0 in 0..=h - 11 {
        for x0 in 0..=w - 11 {
            let mut m = [0.0f64; 2];
            for i in 0..11 {
                for j in 0..11 {
                    let wt = weights[i][j] / total;
                    m[0] += wt * lum(a, y0 + i, x0 + j);
                    m[1] += wt * lum(b, y0 + i, x0 + j);
                }
            }
            let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let wt = weights[i][j] / total;
                    let dx = lum(a, y0 + i, x0 + j) - m[0];
                    let dy = lum(b, y0 + i, x0 + j) - m[1];
                    vx += wt * dx * dx;
                    vy += wt * dy * dy;
                    cov += wt * dx * dy;
                }
            }
            acc += (2.0 * m[0] * m[1] + c1) * (2.0 * cov + c2) / ((m[0] * m[0] + m[1] * m[1] + c1) * (vx + vy + c2));
            count += 1.0;
        }
    }
    acc / count
}

fn random_color(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ColorImage {
    ColorImage::new(Tensor::from_fn(vec![3, h, w], |_| rng.gen_range(0.0..1.0))).unwrap()
}

fn criterion_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (h, w) = (12, 15);
    let img = random_color(&mut rng, h, w);

    let same = bilinear_warp(img.tensor(), FlowField::zeros(h, w).tensor()).map_err(err)?;
    ensure(&same == img.tensor(), "zero-flow warp is not exact")?;

    for (dx, dy) in [(1i64, 0i64), (-2, 1), (3, -3), (0, 5)] {
        let flow = FlowField::constant(h, w, dx as f32, dy as f32);
        let out = bilinear_warp(img.tensor(), flow.tensor()).map_err(err)?;
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let sy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                    let sx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                    let expect = img.tensor().data()[(c * h + sy) * w + sx];
                    ensure(out.data()[(c * h + y) * w + x] == expect, format!("shift ({dx},{dy}) differs at {c},{y},{x}"))?;
                }
            }
        }
    }

    let a = GrayImage::new(Tensor::from_fn(vec![1, h, w], |_| rng.gen_range(0.0..1.0))).unwrap();
    let b = GrayImage::new(Tensor::from_fn(vec![1, h, w], |_| rng.gen_range(0.0..1.0))).unwrap();
    let v = image_visibility(&a, &b).map_err(err)?;
    for y in 0..h {
        for x in 0..w {
            ensure(v.data()[y * w + x] == a.get(y, x) - b.get(y, x), "visibility differs from scalar subtraction")?;
        }
    }

    let reference = random_color(&mut rng, h, w);
    let truth = random_color(&mut rng, h, w);
    let flow = FlowField::new(Tensor::from_fn(vec![2, h, w], |_| rng.gen_range(-3.0..3.0))).unwrap();
    let warped = bilinear_warp(reference.tensor(), flow.tensor()).map_err(err)?;
    let (mut sq, mut charb) = (0.0f64, 0.0f64);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let i = (c * h + y) * w + x;
                let t = truth.tensor().data()[i] as f64;
                sq += (warped.data()[i] as f64 - t).powi(2);
                let d = reference.tensor().data()[i] as f64 - t;
                charb += (d * d + 1e-6).sqrt();
            }
        }
    }
    let n = (3 * h * w) as f64;
    let lw = warping_loss(&reference, &truth, &flow).map_err(err)?;
    ensure((lw - 0.5 * sq / n).abs() < 1e-7, format!("warping loss {lw} vs oracle {}", 0.5 * sq / n))?;
    let lc = colorization_loss(&reference, &truth).map_err(err)?;
    ensure((lc - charb / n).abs() < 1e-7, format!("colorization loss {lc} vs oracle {}", charb / n))?;

    let mut worst_ssim = 0.0f64;
    for _ in 0..3 {
        let (p, q) = (random_color(&mut rng, 20, 24), random_color(&mut rng, 20, 24));
        let d = (ssim(&p, &q).map_err(err)? - ssim_direct(&p, &q)).abs();
        worst_ssim = worst_ssim.max(d);
    }
    ensure(worst_ssim < 1e-6, format!("SSIM differs from direct formula by {worst_ssim:e}"))?;
    ensure(psnr(&img, &img).map_err(err)? == 99.0, "psnr(a,a) != 99")?;
    ensure(ssim(&img, &img).map_err(err)? == 1.0, "ssim(a,a) != 1")?;
    ensure(nrmse(&img, &img).map_err(err)? == 0.0, "nrmse(a,a) != 0")?;
    Ok(format!("warp, visibility, loss and metric oracles agree (SSIM gap {worst_ssim:.1e})"))
}

fn criterion_pipeline_shapes() -> Outcome {
    let start = Instant::now();
    let base = RunConfig::default();
    let model = Model::new(&base).map_err(err)?;
    let mut runs = 0;
    for size in [64, 128] {
        for scale in [1, 4, 8] {
            let pair = &toy_dataset(5, 1, size, PairRecipe::video(scale, 2)).map_err(err)?[0];
            let out = model.colorize_pair(pair).map_err(err)?;
            ensure(out.output.size() == (size, size), format!("output {:?} at {size}/{scale}", out.output.size()))?;
            ensure(out.flows.levels().len() == 5, "expected 5 flows")?;
            let vis = out.visibility.as_ref().ok_or("visibility missing")?;
            ensure(vis.all().count() == 5, "expected 5 visibility maps")?;
            ensure(out.output.tensor().data().iter().all(|v| (0.0..=1.0).contains(v)), "output outside [0,1]")?;
            runs += 1;
        }
    }
    let pair = &toy_dataset(6, 1, 64, PairRecipe::video(4, 1)).map_err(err)?[0];
    for use_visibility in [true, false] {
        for use_warping_loss in [true, false] {
            let cfg = RunConfig { use_visibility, use_warping_loss, ..base.clone() };
            let m = Model::new(&cfg).map_err(err)?;
            let out = m.colorize_pair(pair).map_err(err)?;
            ensure(out.visibility.is_some() == use_visibility, "visibility presence disagrees with the flag")?;
            ensure(out.trace.contains(&Stage::Visibility) == use_visibility, "visibility stage ran while disabled")?;
            m.pair_loss(pair).map_err(err)?;
            runs += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 30.0, format!("took {secs:.1} s"))?;
    Ok(format!("{runs} forward configurations, {secs:.1} s"))
}

struct TrainedVariant {
    psnr: f64,
    initial_loss: f64,
    final_loss: f64,
    secs: f64,
}

fn train_variant(config: &RunConfig) -> Result<TrainedVariant, String> {
    let start = Instant::now();
    let mut trainer = Trainer::new(config).map_err(err)?;
    let pairs = trainer.data().first_epoch(config.seed).map_err(err)?;
    let initial_loss = trainer.model().dataset_loss(&pairs).map_err(err)?.total;
    trainer.run(|_| {}).map_err(err)?;
    let final_loss = trainer.model().dataset_loss(&pairs).map_err(err)?.total;
    let psnr = trainer.model().dataset_psnr(&pairs).map_err(err)?;
    Ok(TrainedVariant { psnr, initial_loss, final_loss, secs: start.elapsed().as_secs_f64() })
}

fn criterion_overfit(full: &Result<TrainedVariant, String>) -> Outcome {
    let v = full.as_ref().map_err(Clone::clone)?;
    let cfg = training_config();
    ensure(cfg.steps <= 2000, "step budget exceeded")?;
    ensure(v.secs <= 600.0, format!("training took {:.0} s", v.secs))?;
    ensure(v.final_loss < v.initial_loss, format!("loss {} not below step-0 {}", v.final_loss, v.initial_loss))?;
    ensure(v.psnr >= 28.0, format!("mean PSNR {:.2} dB below 28", v.psnr))?;
    Ok(format!(
        "{} steps: PSNR {:.2} dB, loss {:.4} -> {:.4}, {:.0} s",
        cfg.steps, v.psnr, v.initial_loss, v.final_loss, v.secs
    ))
}

fn criterion_ablation(full: &Result<TrainedVariant, String>) -> Outcome {
    let full = full.as_ref().map_err(Clone::clone)?;
    let mut parts = vec![format!("full {:.2} dB", full.psnr)];
    let mut failures = Vec::new();
    for (name, cfg) in [
        ("no-visibility", RunConfig { use_visibility: false, ..training_config() }),
        ("no-warping-loss", RunConfig { use_warping_loss: false, ..training_config() }),
    ] {
        let v = train_variant(&cfg)?;
        parts.push(format!("{name} {:.2} dB", v.psnr));
        if full.psnr < v.psnr - 0.5 {
            failures.push(name);
        }
    }
    let summary = parts.join(", ");
    ensure(failures.is_empty(), format!("full model worse than {failures:?} by more than 0.5 dB: {summary}"))?;
    Ok(summary)
}

fn dir_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn criterion_determinism() -> Outcome {
    let cfg = RunConfig { steps: 12, ..training_config() };
    let run = || -> Result<String, String> {
        let mut t = Trainer::new(&cfg).map_err(err)?;
        t.run(|_| {}).map_err(err)?;
        Ok(loss_csv(t.rows()))
    };
    let (a, b) = (run()?, run()?);
    ensure(a == b, "loss CSVs differ between identical runs")?;

    let tmp = tempfile::tempdir().map_err(err)?;
    let (d1, d2) = (tmp.path().join("a"), tmp.path().join("b"));
    write_toy_dataset(&d1, 7, 8, 64, PairRecipe::video(4, 2)).map_err(err)?;
    write_toy_dataset(&d2, 7, 8, 64, PairRecipe::video(4, 2)).map_err(err)?;
    let (f1, f2) = (dir_bytes(&d1), dir_bytes(&d2));
    ensure(!f1.is_empty() && f1 == f2, "toy dataset directories differ")?;
    ensure(
        toy_dataset(7, 8, 64, PairRecipe::video(4, 2)).map_err(err)? == toy_dataset(7, 8, 64, PairRecipe::video(4, 2)).map_err(err)?,
        "in-memory toy datasets differ",
    )?;
    Ok(format!("{} identical CSV bytes, {} identical dataset files", a.len(), f1.len()))
}

fn criterion_weight_sharing() -> Outcome {
    let cfg = RunConfig { ladder: vec![8, 16, 16, 32], flow_width: 0.125, ..RunConfig::default() };
    let mut model = Model::new(&cfg).map_err(err)?;
    let frames = toy_sequences(4, 1, 64).map_err(err)?.remove(0).frames;
    let pair = make_pair(&frames, PairRecipe::video(1, 0)).map_err(err)?;

    let lum_params = model.lum_encoder().params().len();
    let graph = Graph::new();
    let mut binder = Binder::new(&graph, true);
    let mut trace = Vec::new();
    model.forward(&mut binder, &Batch::from_pairs(&[&pair]).map_err(err)?, &mut trace).map_err(err)?;
    ensure(trace.iter().filter(|s| **s == Stage::EncodeReferenceLuminance).count() == 1, "reference luminance not encoded")?;
    let lum_bound: Vec<_> = binder.bound_names().iter().filter(|n| model.lum_encoder().params().contains(n)).collect();
    let mut unique = lum_bound.clone();
    unique.dedup();
    ensure(lum_bound.len() == lum_params && unique.len() == lum_params, "luminance encoder parameters bound more than once")?;
    let reference_luma = luminance(&pair.reference);
    ensure(reference_luma == pair.target, "reference luminance differs from target")?;
    let p1 = encode_luminance(&pair.target, model.lum_encoder()).map_err(err)?;
    let p2 = encode_luminance(&reference_luma, model.lum_encoder()).map_err(err)?;
    let bit_equal = p1.levels().iter().zip(p2.levels()).all(|(a, b)| {
        a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
    });
    ensure(bit_equal, "pyramids of equal inputs are not bit-equal")?;
    let zero = FlowPyramid::zeros(64, 64).map_err(err)?;
    let warped = warp_pyramid(&p2, &zero).map_err(err)?;
    let fv = feature_visibility(&warped, &p1).map_err(err)?;
    ensure(fv.iter().all(|m| m.data().iter().all(|&v| v == 0.0)), "feature visibility not zero")?;

    // Zero every flow head so the estimator itself predicts zero flow.
    let mut params = model.params();
    for (name, t) in params.iter_mut() {
        if name.contains("predict") {
            *t = Tensor::zeros(t.shape().to_vec());
        }
    }
    model.load_params(&params).map_err(err)?;
    let out = model.colorize_pair(&pair).map_err(err)?;
    ensure(out.flows.levels().iter().all(|f| f.tensor().data().iter().all(|&v| v == 0.0)), "flow not zero")?;
    let maps = out.visibility.ok_or("visibility missing")?;
    let nonzero = maps.all().map(|m| m.data().iter().filter(|&&v| v != 0.0).count()).sum::<usize>();
    ensure(nonzero == 0, format!("{nonzero} non-zero visibility values"))?;
    Ok(format!("{lum_params} shared tensors, 5 all-zero visibility maps"))
}

fn criterion_checkpoint() -> Outcome {
    let cfg = RunConfig { steps: 3, ..training_config() };
    let mut trainer = Trainer::new(&cfg).map_err(err)?;
    trainer.run(|_| {}).map_err(err)?;
    let pair = &toy_dataset(99, 1, 64, cfg.recipe()).map_err(err)?[0];
    let before = trainer.model().colorize_pair(pair).map_err(err)?;

    let tmp = tempfile::tempdir().map_err(err)?;
    let path = tmp.path().join("model.ckpt");
    let ckpt = trainer.checkpoint();
    ckpt.save(&path).map_err(err)?;
    let loaded = Checkpoint::load(&path).map_err(err)?;
    ensure(loaded == ckpt, "loaded checkpoint differs")?;
    ensure(loaded.to_bytes().map_err(err)? == fs::read(&path).map_err(err)?, "re-encoded bytes differ")?;
    let after = Model::from_checkpoint(&loaded).map_err(err)?.colorize_pair(pair).map_err(err)?;
    let same = before.output.tensor().data().iter().zip(after.output.tensor().data()).all(|(a, b)| a.to_bits() == b.to_bits());
    ensure(same, "forward differs after reload")?;
    let flows_same = before.flows == after.flows && before.visibility == after.visibility;
    ensure(flows_same, "intermediates differ after reload")?;
    Ok(format!("{} bytes, forward bit-identical", fs::metadata(&path).map_err(err)?.len()))
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        match outcome {
            Ok(msg) => println!("PASS criterion {n} {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {n} {name}: {msg}")
            }
        }
    };
    report(1, "gradients", criterion_gradients());
    report(2, "identity and oracles", criterion_oracles());
    report(3, "pipeline shapes", criterion_pipeline_shapes());
    let full = train_variant(&training_config());
    report(4, "overfit", criterion_overfit(&full));
    report(5, "ablation direction", criterion_ablation(&full));
    report(6, "determinism", criterion_determinism());
    report(7, "weight sharing", criterion_weight_sharing());
    report(8, "checkpoint round-trip", criterion_checkpoint());
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
