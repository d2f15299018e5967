//! Dual-camera pair synthesis from video sequences, light-field grids and a
//! procedural toy generator.
//!
//! A pair takes the first frame (or view `(0, 0)`) as the color reference,
//! bicubically downsampled by `s`, and converts the frame `t` (or the
//! configured view) to grayscale as the target.
//!
//! On-disk layout, relative to a dataset root:
//!
//! ```text
//! manifest.txt            sequence_dir scale frame_gap viewpoint_r viewpoint_c
//! seq/frame_000.png ...   video frames
//! lf/view_0_0.png ...     static light field
//! lfv/frame_000/view_0_0.png ...   light-field video
//! ```
//!
//! Manifest lines use `- -` as the viewpoint of a plain video; blank lines
//! and `#` comments are ignored.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::thread;

use ccdc_tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imageops::{bicubic_resize_to, luminance, ColorImage, GrayImage, MIN_IMAGE_SIDE};
use crate::io::{read_color_png, write_atomic, color_to_png_bytes};

pub const SUPPORTED_SCALES: [usize; 4] = [1, 2, 4, 8];
pub const TOY_FRAMES: usize = 7;
pub const TOY_SIZE_MULTIPLE: usize = 64;
pub const MANIFEST_NAME: &str = "manifest.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PairRecipe {
    pub scale: usize,
    pub frame_gap: usize,
    pub viewpoint: Option<(usize, usize)>,
    pub seed: u64,
}

impl PairRecipe {
    pub fn video(scale: usize, frame_gap: usize) -> Self {
        PairRecipe { scale, frame_gap, viewpoint: None, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !SUPPORTED_SCALES.contains(&self.scale) {
            return Err(Error::Argument(format!(
                "scale {} is not one of {SUPPORTED_SCALES:?}",
                self.scale
            )));
        }
        Ok(())
    }
}

impl fmt::Display for PairRecipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s={} t={}", self.scale, self.frame_gap)?;
        if let Some((r, c)) = self.viewpoint {
            write!(f, " view=({r},{c})")?;
        }
        Ok(())
    }
}

/// One sample: HR grayscale target, LR color reference, HR color ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub target: GrayImage,
    pub reference: ColorImage,
    pub ground_truth: ColorImage,
    pub recipe: PairRecipe,
}

impl ImagePair {
    pub fn check_invariants(&self) -> Result<()> {
        if self.target != luminance(&self.ground_truth) {
            return Err(Error::Argument("target is not the luminance of the ground truth".into()));
        }
        let (h, w) = self.ground_truth.size();
        let s = self.recipe.scale;
        if self.reference.size() != (h / s, w / s) || h % s != 0 || w % s != 0 {
            return Err(Error::Shape(format!(
                "reference {:?} is not ground truth {h}x{w} divided by {s}",
                self.reference.size()
            )));
        }
        Ok(())
    }
}

fn pair_from(reference_frame: &ColorImage, ground_truth: &ColorImage, recipe: PairRecipe) -> Result<ImagePair> {
    recipe.validate()?;
    if reference_frame.size() != ground_truth.size() {
        return Err(Error::Shape(format!(
            "reference frame is {:?} but target frame is {:?}",
            reference_frame.size(),
            ground_truth.size()
        )));
    }
    let (h, w) = ground_truth.size();
    let s = recipe.scale;
    if h % s != 0 || w % s != 0 || h / s < MIN_IMAGE_SIDE || w / s < MIN_IMAGE_SIDE {
        return Err(Error::Argument(format!(
            "{h}x{w} frames cannot be downsampled by {s} (need divisible sides and at least {MIN_IMAGE_SIDE} pixels after division)"
        )));
    }
    let reference = ColorImage::from_clamped(bicubic_resize_to(reference_frame.tensor(), h / s, w / s)?)?;
    Ok(ImagePair { target: luminance(ground_truth), reference, ground_truth: ground_truth.clone(), recipe })
}

/// Video protocol: reference from frame 0, target and ground truth from
/// frame `t`.
pub fn make_pair(frames: &[ColorImage], recipe: PairRecipe) -> Result<ImagePair> {
    if frames.is_empty() {
        return Err(Error::Argument("sequence has no frames".into()));
    }
    if recipe.frame_gap >= frames.len() {
        return Err(Error::Argument(format!(
            "frame gap {} out of range for a {}-frame sequence",
            recipe.frame_gap,
            frames.len()
        )));
    }
    if let Some(f) = frames.iter().find(|f| f.size() != frames[0].size()) {
        return Err(Error::Shape(format!("frame sizes differ: {:?} vs {:?}", frames[0].size(), f.size())));
    }
    pair_from(&frames[0], &frames[recipe.frame_gap], recipe)
}

/// Views indexed `[frame][row][col]`; static light fields have one frame.
#[derive(Clone, Debug)]
pub struct LightFieldGrid {
    frames: Vec<Vec<Vec<ColorImage>>>,
}

impl LightFieldGrid {
    pub fn new(frames: Vec<Vec<Vec<ColorImage>>>) -> Result<Self> {
        let rows = frames.first().map(|f| f.len()).unwrap_or(0);
        let cols = frames.first().and_then(|f| f.first()).map(|r| r.len()).unwrap_or(0);
        if rows == 0 || cols == 0 {
            return Err(Error::Argument("light field grid is empty".into()));
        }
        if frames.iter().any(|f| f.len() != rows || f.iter().any(|r| r.len() != cols)) {
            return Err(Error::Shape("light field frames have ragged grids".into()));
        }
        Ok(LightFieldGrid { frames })
    }

    pub fn from_views(views: Vec<Vec<ColorImage>>) -> Result<Self> {
        Self::new(vec![views])
    }

    pub fn frames(&self) -> usize {
        self.frames.len()
    }

    pub fn grid_size(&self) -> (usize, usize) {
        (self.frames[0].len(), self.frames[0][0].len())
    }

    pub fn view(&self, frame: usize, row: usize, col: usize) -> Option<&ColorImage> {
        self.frames.get(frame)?.get(row)?.get(col)
    }
}

/// Light-field protocol: reference from view `(0, 0)` of the first frame,
/// target from the recipe's viewpoint at frame `t`.
pub fn make_lightfield_pair(grid: &LightFieldGrid, recipe: PairRecipe) -> Result<ImagePair> {
    let (r, c) = recipe
        .viewpoint
        .ok_or_else(|| Error::Argument("light-field recipe needs a viewpoint".into()))?;
    let (rows, cols) = grid.grid_size();
    if r >= rows || c >= cols {
        return Err(Error::Argument(format!("viewpoint ({r},{c}) outside the {rows}x{cols} grid")));
    }
    if recipe.frame_gap >= grid.frames() {
        return Err(Error::Argument(format!(
            "frame gap {} out of range for {} light-field frame(s)",
            recipe.frame_gap,
            grid.frames()
        )));
    }
    let reference = grid.view(0, 0, 0).expect("grid is non-empty");
    let target = grid.view(recipe.frame_gap, r, c).expect("indices checked");
    pair_from(reference, target, recipe)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ShapeKind {
    Rectangle { half_w: f64, half_h: f64 },
    Circle { radius: f64 },
}

/// Scripted motion of one toy shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeTrack {
    pub kind: ShapeKind,
    pub color: [f32; 3],
    /// Integer pixels per frame.
    pub velocity: (i64, i64),
    /// Degrees per frame.
    pub spin: i64,
    pub start: (f64, f64),
    pub start_angle: f64,
}

impl ShapeTrack {
    pub fn center(&self, frame: usize) -> (f64, f64) {
        let t = frame as f64;
        (self.start.0 + t * self.velocity.0 as f64, self.start.1 + t * self.velocity.1 as f64)
    }

    pub fn angle(&self, frame: usize) -> f64 {
        (self.start_angle + (frame as i64 * self.spin) as f64).to_radians()
    }

    pub fn contains(&self, frame: usize, x: f64, y: f64) -> bool {
        let (cx, cy) = self.center(frame);
        let (dx, dy) = (x - cx, y - cy);
        match self.kind {
            ShapeKind::Circle { radius } => dx * dx + dy * dy <= radius * radius,
            ShapeKind::Rectangle { half_w, half_h } => {
                let (s, c) = self.angle(frame).sin_cos();
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                u.abs() <= half_w && v.abs() <= half_h
            }
        }
    }

    /// Radius of a disc around the centre that lies inside the shape at
    /// every rotation.
    pub fn inner_radius(&self) -> f64 {
        match self.kind {
            ShapeKind::Circle { radius } => radius,
            ShapeKind::Rectangle { half_w, half_h } => half_w.min(half_h),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ToySequence {
    pub frames: Vec<ColorImage>,
    /// Drawn in order; the last track is on top.
    pub tracks: Vec<ShapeTrack>,
}

fn hsv(h: f64, s: f64, v: f64) -> [f32; 3] {
    let h = h.rem_euclid(1.0) * 6.0;
    let i = h.floor();
    let f = h - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    let (r, g, b) = match i as u32 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [r as f32, g as f32, b as f32]
}

fn check_toy_size(size: usize) -> Result<()> {
    if size < TOY_SIZE_MULTIPLE || size % TOY_SIZE_MULTIPLE != 0 {
        return Err(Error::Argument(format!(
            "toy size must be a positive multiple of {TOY_SIZE_MULTIPLE}, got {size}"
        )));
    }
    Ok(())
}

/// Renders one 7-frame sequence: a two-color gradient background with
/// translating circles and translating, spinning rectangles.
pub fn toy_sequence(rng: &mut impl Rng, size: usize) -> Result<ToySequence> {
    check_toy_size(size)?;
    let unit = (size / TOY_SIZE_MULTIPLE) as f64;
    let hue = rng.gen_range(0.0..1.0);
    let bg0 = hsv(hue, rng.gen_range(0.3..0.7), rng.gen_range(0.5..0.9));
    let bg1 = hsv(hue + rng.gen_range(0.2..0.5), rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.8));
    let (gs, gc) = rng.gen_range(0.0..std::f64::consts::TAU).sin_cos();

    let n_shapes = rng.gen_range(2..=4);
    let last = (TOY_FRAMES - 1) as f64;
    let tracks: Vec<ShapeTrack> = (0..n_shapes)
        .map(|k| {
            let kind = if rng.gen_bool(0.5) {
                ShapeKind::Circle { radius: rng.gen_range(5.0..11.0) * unit }
            } else {
                ShapeKind::Rectangle { half_w: rng.gen_range(4.0..11.0) * unit, half_h: rng.gen_range(4.0..11.0) * unit }
            };
            let spin = match kind {
                ShapeKind::Circle { .. } => 0,
                ShapeKind::Rectangle { .. } => rng.gen_range(-2i64..=2) * 5,
            };
            let velocity = (rng.gen_range(-2i64..=2) * unit as i64, rng.gen_range(-2i64..=2) * unit as i64);
            let margin = 8.0 * unit;
            let span = |v: i64| {
                let lo = margin - (last * v as f64).min(0.0);
                let hi = size as f64 - margin - (last * v as f64).max(0.0);
                (lo, hi.max(lo + 1.0))
            };
            let (xl, xh) = span(velocity.0);
            let (yl, yh) = span(velocity.1);
            let color = hsv(hue + 0.15 + 0.7 * (k as f64 + rng.gen_range(0.0..1.0)) / n_shapes as f64, rng.gen_range(0.5..1.0), rng.gen_range(0.5..1.0));
            ShapeTrack {
                kind,
                color,
                velocity,
                spin,
                start: (rng.gen_range(xl..xh).round(), rng.gen_range(yl..yh).round()),
                start_angle: rng.gen_range(0.0..90.0f64).round(),
            }
        })
        .collect();

    let frames = (0..TOY_FRAMES)
        .map(|t| {
            let mut data = vec![0.0f32; 3 * size * size];
            for y in 0..size {
                for x in 0..size {
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    let g = (((px - 0.5 * size as f64) * gc + (py - 0.5 * size as f64) * gs) / size as f64 + 0.5)
                        .clamp(0.0, 1.0) as f32;
                    let mut rgb = [0.0f32; 3];
                    for c in 0..3 {
                        rgb[c] = bg0[c] + (bg1[c] - bg0[c]) * g;
                    }
                    for track in &tracks {
                        if track.contains(t, px, py) {
                            rgb = track.color;
                        }
                    }
                    for c in 0..3 {
                        data[(c * size + y) * size + x] = rgb[c];
                    }
                }
            }
            ColorImage::from_clamped(Tensor::new(vec![3, size, size], data)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ToySequence { frames, tracks })
}

fn sequence_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// `n` independent sequences; sequence `i` depends only on `(seed, i)`.
pub fn toy_sequences(seed: u64, n: usize, size: usize) -> Result<Vec<ToySequence>> {
    if n == 0 {
        return Err(Error::Argument("toy dataset needs at least one pair".into()));
    }
    (0..n).map(|i| toy_sequence(&mut sequence_rng(seed, i), size)).collect()
}

pub fn toy_dataset(seed: u64, n: usize, size: usize, recipe: PairRecipe) -> Result<Vec<ImagePair>> {
    toy_sequences(seed, n, size)?.iter().map(|s| make_pair(&s.frames, recipe)).collect()
}

/// Frame gap drawn at random for per-epoch resampling: `1..=6`, clipped to
/// the sequence length.
pub fn sample_frame_gap(rng: &mut impl Rng, frames: usize) -> usize {
    if frames < 2 {
        return 0;
    }
    rng.gen_range(1..frames.min(TOY_FRAMES))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub sequence: PathBuf,
    pub scale: usize,
    pub frame_gap: usize,
    pub viewpoint: Option<(usize, usize)>,
}

impl fmt::Display for ManifestEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} ", self.sequence.display(), self.scale, self.frame_gap)?;
        match self.viewpoint {
            Some((r, c)) => write!(f, "{r} {c}"),
            None => write!(f, "- -"),
        }
    }
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |message: String| Error::Manifest { path: path.to_path_buf(), line: i + 1, message };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(bad(format!("expected 5 fields, found {}", fields.len())));
        }
        let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| bad(format!("bad {what} {s:?}")));
        let scale = num(fields[1], "scale")?;
        if !SUPPORTED_SCALES.contains(&scale) {
            return Err(bad(format!("scale {scale} is not one of {SUPPORTED_SCALES:?}")));
        }
        let viewpoint = match (fields[3], fields[4]) {
            ("-", "-") => None,
            (r, c) => Some((num(r, "viewpoint row")?, num(c, "viewpoint column")?)),
        };
        entries.push(ManifestEntry {
            sequence: PathBuf::from(fields[0]),
            scale,
            frame_gap: num(fields[2], "frame gap")?,
            viewpoint,
        });
    }
    Ok(entries)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path)
}

pub fn frame_name(index: usize) -> String {
    format!("frame_{index:03}.png")
}

pub fn frame_dir_name(index: usize) -> String {
    format!("frame_{index:03}")
}

pub fn view_name(row: usize, col: usize) -> String {
    format!("view_{row}_{col}.png")
}

/// Loads the pair of one manifest entry, reading only the frames it needs.
pub fn load_pair(root: &Path, entry: &ManifestEntry, seed: u64) -> Result<ImagePair> {
    let dir = root.join(&entry.sequence);
    let recipe = PairRecipe { scale: entry.scale, frame_gap: entry.frame_gap, viewpoint: entry.viewpoint, seed };
    match entry.viewpoint {
        None => {
            let reference = read_color_png(&dir.join(frame_name(0)))?;
            let target = read_color_png(&dir.join(frame_name(entry.frame_gap)))?;
            pair_from(&reference, &target, recipe)
        }
        Some((r, c)) => {
            let (reference, target) = if dir.join(view_name(0, 0)).exists() {
                if entry.frame_gap != 0 {
                    return Err(Error::Argument(format!(
                        "{} is a static light field but frame gap is {}",
                        dir.display(),
                        entry.frame_gap
                    )));
                }
                (dir.join(view_name(0, 0)), dir.join(view_name(r, c)))
            } else {
                (
                    dir.join(frame_dir_name(0)).join(view_name(0, 0)),
                    dir.join(frame_dir_name(entry.frame_gap)).join(view_name(r, c)),
                )
            };
            pair_from(&read_color_png(&reference)?, &read_color_png(&target)?, recipe)
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Shuffle entry order with this seed; `None` keeps manifest order.
    pub shuffle_seed: Option<u64>,
    /// Pairs decoded ahead of the consumer on a background thread.
    pub prefetch: usize,
}

/// Lazily decoded pairs in a deterministic order.
pub struct Dataset {
    inner: DatasetInner,
}

enum DatasetInner {
    Inline { root: PathBuf, entries: std::vec::IntoIter<ManifestEntry>, seed: u64 },
    Prefetch(mpsc::IntoIter<Result<ImagePair>>),
}

impl Iterator for Dataset {
    type Item = Result<ImagePair>;

    fn next(&mut self) -> Option<Self::Item> {
        match &mut self.inner {
            DatasetInner::Inline { root, entries, seed } => entries.next().map(|e| load_pair(root, &e, *seed)),
            DatasetInner::Prefetch(rx) => rx.next(),
        }
    }
}

/// Entry order after optional seeded shuffling.
pub fn dataset_order(entries: &[ManifestEntry], shuffle_seed: Option<u64>) -> Vec<ManifestEntry> {
    let mut order = entries.to_vec();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order
}

pub fn load_dataset(root: &Path, manifest: &Path, options: LoadOptions) -> Result<Dataset> {
    let entries = dataset_order(&read_manifest(manifest)?, options.shuffle_seed);
    let seed = options.shuffle_seed.unwrap_or(0);
    let root = root.to_path_buf();
    if options.prefetch == 0 {
        return Ok(Dataset { inner: DatasetInner::Inline { root, entries: entries.into_iter(), seed } });
    }
    let (tx, rx) = mpsc::sync_channel(options.prefetch);
    thread::spawn(move || {
        for entry in entries {
            if tx.send(load_pair(&root, &entry, seed)).is_err() {
                break;
            }
        }
    });
    Ok(Dataset { inner: DatasetInner::Prefetch(rx.into_iter()) })
}

/// Writes toy sequences as `seq_NNN/frame_NNN.png` plus a manifest using
/// `recipe` for every sequence.
pub fn write_toy_dataset(out: &Path, seed: u64, n: usize, size: usize, recipe: PairRecipe) -> Result<()> {
    recipe.validate()?;
    if recipe.frame_gap >= TOY_FRAMES {
        return Err(Error::Argument(format!("frame gap {} exceeds the {TOY_FRAMES}-frame toy sequences", recipe.frame_gap)));
    }
    let sequences = toy_sequences(seed, n, size)?;
    let mut manifest = format!("# toy dataset seed={seed} n={n} size={size}\n");
    for (i, seq) in sequences.iter().enumerate() {
        let dir = PathBuf::from(format!("seq_{i:03}"));
        for (t, frame) in seq.frames.iter().enumerate() {
            write_atomic(&out.join(&dir).join(frame_name(t)), &color_to_png_bytes(frame)?)?;
        }
        let entry = ManifestEntry { sequence: dir, scale: recipe.scale, frame_gap: recipe.frame_gap, viewpoint: None };
        manifest.push_str(&format!("{entry}\n"));
    }
    write_atomic(&out.join(MANIFEST_NAME), manifest.as_bytes())
}

/// Copies every sequence directory under `src` (those holding
/// `frame_000.png`) into `out` and writes a manifest with `recipe`.
pub fn write_frames_dataset(src: &Path, out: &Path, recipe: PairRecipe) -> Result<()> {
    recipe.validate()?;
    let mut dirs: Vec<PathBuf> = fs::read_dir(src)
        .map_err(|e| Error::io(src, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(frame_name(0)).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Argument(format!("no sequence directories with {} under {}", frame_name(0), src.display())));
    }
    let mut manifest = String::new();
    for dir in dirs {
        let name = PathBuf::from(dir.file_name().expect("read_dir entries have names"));
        let mut t = 0;
        while dir.join(frame_name(t)).is_file() {
            let frame = read_color_png(&dir.join(frame_name(t)))?;
            write_atomic(&out.join(&name).join(frame_name(t)), &color_to_png_bytes(&frame)?)?;
            t += 1;
        }
        if recipe.frame_gap >= t {
            return Err(Error::Argument(format!("{} has {t} frames; frame gap {} is out of range", dir.display(), recipe.frame_gap)));
        }
        let entry = ManifestEntry { sequence: name, scale: recipe.scale, frame_gap: recipe.frame_gap, viewpoint: recipe.viewpoint };
        manifest.push_str(&format!("{entry}\n"));
    }
    write_atomic(&out.join(MANIFEST_NAME), manifest.as_bytes())
}
