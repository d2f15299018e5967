//! Full model, training loop and evaluation.
//!
//! Forward order: upsample the reference, estimate flow, encode the target
//! and the reference, warp the color features, compute visibility maps
//! (skipped entirely when disabled) and fuse.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ccdc_tensor::{Adam, Binder, Graph, ParamStore, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{
    frame_name, load_pair, make_pair, read_manifest, sample_frame_gap, toy_dataset, toy_sequences, ImagePair,
    ManifestEntry, PairRecipe,
};
use crate::encoders::Encoder;
use crate::error::{Error, Result};
use crate::flow_estimator::{FlowNet, FlowPyramid};
use crate::fusion_decoder::{DecoderInputs, FusionDecoder};
use crate::imageops::{bicubic_resize_to, luma_plane, ColorImage, GrayImage};
use crate::io::read_color_png;
use crate::losses::{colorization_loss_var, total_loss, total_loss_var, warping_loss_var, LossReport};
use crate::metrics::{score, MetricReport, PerceptualMetric};
use crate::visibility::{visibility_pyramid, VisibilityMaps};
use crate::warp::{warp, FlowField};

pub const LUM_ENCODER: &str = "lum_encoder";
pub const COLOR_ENCODER: &str = "color_encoder";
pub const LOSS_CSV_HEADER: &str = "step,l_warp,l_color,total";
pub const EVAL_CSV_HEADER: &str = "dataset,frame,view,scale,method,nrmse,psnr,ssim,lpips,runtime";

/// Forward stages in execution order, for ablation inspection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    UpsampleReference,
    EstimateFlow,
    EncodeTarget,
    EncodeReferenceColor,
    WarpFeatures,
    EncodeReferenceLuminance,
    WarpImage,
    Visibility,
    Fuse,
}

/// Target-resolution inputs of a batch, each N×C×H×W.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub target: Tensor<f32>,
    pub reference_up: Tensor<f32>,
    pub reference_luma: Tensor<f32>,
    pub ground_truth: Option<Tensor<f32>>,
}

/// Checks that `reference × scale` gives the target size.
pub fn check_scale(target: (usize, usize), reference: (usize, usize), scale: usize) -> Result<()> {
    let expect = (reference.0 * scale, reference.1 * scale);
    if expect != target {
        return Err(Error::Shape(format!(
            "reference {}x{} × {scale} = {}x{}, but the target is {}x{}",
            reference.0, reference.1, expect.0, expect.1, target.0, target.1
        )));
    }
    Ok(())
}

/// Bicubic upsampling of the reference to the target grid, clamped to `[0, 1]`.
pub fn upsample_reference(reference: &ColorImage, height: usize, width: usize) -> Result<ColorImage> {
    ColorImage::from_clamped(bicubic_resize_to(reference.tensor(), height, width)?)
}

impl Batch {
    pub fn from_inputs(items: &[(&GrayImage, &ColorImage, Option<&ColorImage>)]) -> Result<Batch> {
        let first = items.first().ok_or_else(|| Error::Argument("empty batch".into()))?;
        let (h, w) = first.0.size();
        let mut target = Vec::new();
        let mut reference_up = Vec::new();
        let mut reference_luma = Vec::new();
        let mut truth = Vec::new();
        for (t, r, g) in items {
            if t.size() != (h, w) {
                return Err(Error::Shape(format!("batch mixes {h}x{w} and {:?} targets", t.size())));
            }
            let up = upsample_reference(r, h, w)?;
            reference_luma.push(luma_plane(up.tensor())?);
            reference_up.push(up.into_tensor());
            target.push(t.tensor().clone());
            if let Some(g) = g {
                if g.size() != (h, w) {
                    return Err(Error::Shape(format!("ground truth {:?} differs from target {h}x{w}", g.size())));
                }
                truth.push(g.tensor().clone());
            }
        }
        if !truth.is_empty() && truth.len() != items.len() {
            return Err(Error::Argument("ground truth given for only part of the batch".into()));
        }
        Ok(Batch {
            target: Tensor::stack(&target)?,
            reference_up: Tensor::stack(&reference_up)?,
            reference_luma: Tensor::stack(&reference_luma)?,
            ground_truth: if truth.is_empty() { None } else { Some(Tensor::stack(&truth)?) },
        })
    }

    pub fn from_pairs(pairs: &[&ImagePair]) -> Result<Batch> {
        for p in pairs {
            check_scale(p.target.size(), p.reference.size(), p.recipe.scale)?;
        }
        let items: Vec<_> = pairs.iter().map(|p| (&p.target, &p.reference, Some(&p.ground_truth))).collect();
        Self::from_inputs(&items)
    }
}

/// Graph handles of one forward pass.
pub struct ForwardVars<'g> {
    pub output: Var<'g, f32>,
    /// `[f_0, …, f_4]`.
    pub flows: Vec<Var<'g, f32>>,
    /// `[V_0, …, V_4]`, or `None` when visibility is disabled.
    pub visibility: Option<Vec<Var<'g, f32>>>,
    pub reference_up: Var<'g, f32>,
    pub target_features: Vec<Var<'g, f32>>,
}

/// Result of single-pair inference.
#[derive(Clone, Debug)]
pub struct Colorization {
    pub output: ColorImage,
    pub flows: FlowPyramid,
    pub visibility: Option<VisibilityMaps>,
    pub trace: Vec<Stage>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: RunConfig,
    lum_encoder: Encoder<f32>,
    color_encoder: Encoder<f32>,
    flownet: FlowNet<f32>,
    decoder: FusionDecoder<f32>,
}

fn squeeze(t: &Tensor<f32>) -> Result<Tensor<f32>> {
    let [n, c, h, w] = t.dims4()?;
    if n != 1 {
        return Err(Error::Shape(format!("expected a single item, got a batch of {n}")));
    }
    Ok(t.clone().reshape(vec![c, h, w])?)
}

impl Model {
    /// Builds all four networks from `config.seed`, in a fixed order.
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let lum_encoder = Encoder::new(LUM_ENCODER, 1, &config.ladder, &mut rng)?;
        let color_encoder = Encoder::new(COLOR_ENCODER, 3, &config.ladder, &mut rng)?;
        let flownet = FlowNet::new(config.flow_width, &mut rng)?;
        let decoder = FusionDecoder::new(config.decoder_layout(), &mut rng)?;
        Ok(Model { config: config.clone(), lum_encoder, color_encoder, flownet, decoder })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn lum_encoder(&self) -> &Encoder<f32> {
        &self.lum_encoder
    }

    pub fn color_encoder(&self) -> &Encoder<f32> {
        &self.color_encoder
    }

    pub fn flownet(&self) -> &FlowNet<f32> {
        &self.flownet
    }

    pub fn decoder(&self) -> &FusionDecoder<f32> {
        &self.decoder
    }

    fn stores(&self) -> [&ParamStore<f32>; 4] {
        [self.lum_encoder.params(), self.color_encoder.params(), self.flownet.params(), self.decoder.params()]
    }

    fn stores_mut(&mut self) -> [&mut ParamStore<f32>; 4] {
        [
            self.lum_encoder.params_mut(),
            self.color_encoder.params_mut(),
            self.flownet.params_mut(),
            self.decoder.params_mut(),
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.stores().iter().map(|s| s.element_count()).sum()
    }

    /// All parameters in one store, in construction order.
    pub fn params(&self) -> ParamStore<f32> {
        let mut all = ParamStore::new();
        for store in self.stores() {
            for (name, t) in store.iter() {
                all.insert(name, t.clone());
            }
        }
        all
    }

    /// Overwrites every parameter from `params`; names and shapes must match
    /// exactly.
    pub fn load_params(&mut self, params: &ParamStore<f32>) -> Result<()> {
        let expected: usize = self.stores().iter().map(|s| s.len()).sum();
        if params.len() != expected {
            return Err(Error::Checkpoint(format!("expected {expected} parameter tensors, found {}", params.len())));
        }
        for store in self.stores_mut() {
            for (name, slot) in store.iter_mut() {
                let src = params
                    .get(name)
                    .map_err(|_| Error::Checkpoint(format!("parameter {name} is missing")))?;
                if src.shape() != slot.shape() {
                    return Err(Error::Checkpoint(format!(
                        "parameter {name} has shape {:?}, expected {:?}",
                        src.shape(),
                        slot.shape()
                    )));
                }
                *slot = src.clone();
            }
        }
        self.decoder.check_params()
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut model = Model::new(&ckpt.config)?;
        model.load_params(&ckpt.params)?;
        Ok(model)
    }

    /// Label used in evaluation tables.
    pub fn variant_name(&self) -> &'static str {
        match (self.config.use_visibility, self.config.use_warping_loss) {
            (true, true) => "full",
            (false, true) => "no-visibility",
            (true, false) => "no-warping-loss",
            (false, false) => "no-visibility-no-warping-loss",
        }
    }

    pub fn forward<'g>(
        &self,
        binder: &mut Binder<'g, f32>,
        batch: &Batch,
        trace: &mut Vec<Stage>,
    ) -> Result<ForwardVars<'g>> {
        let graph = binder.graph();
        trace.push(Stage::UpsampleReference);
        let target = graph.constant(batch.target.clone());
        let reference_up = graph.constant(batch.reference_up.clone());

        trace.push(Stage::EstimateFlow);
        let flows = self.flownet.forward(binder, target, reference_up)?;

        trace.push(Stage::EncodeTarget);
        let target_features = self.lum_encoder.forward(binder, target)?;
        trace.push(Stage::EncodeReferenceColor);
        let color_features = self.color_encoder.forward(binder, reference_up)?;

        trace.push(Stage::WarpFeatures);
        let warped_color = color_features
            .iter()
            .zip(&flows[1..])
            .map(|(f, flow)| warp(*f, *flow))
            .collect::<Result<Vec<_>>>()?;

        let visibility = if self.config.use_visibility {
            trace.push(Stage::EncodeReferenceLuminance);
            let reference_luma = graph.constant(batch.reference_luma.clone());
            let luma_features = self.lum_encoder.forward(binder, reference_luma)?;
            trace.push(Stage::WarpImage);
            let warped_luma = warp(reference_luma, flows[0])?;
            let warped_luma_features = luma_features
                .iter()
                .zip(&flows[1..])
                .map(|(f, flow)| warp(*f, *flow))
                .collect::<Result<Vec<_>>>()?;
            trace.push(Stage::Visibility);
            Some(visibility_pyramid(warped_luma, target, &warped_luma_features, &target_features)?)
        } else {
            None
        };

        trace.push(Stage::Fuse);
        let output = self.decoder.forward(
            binder,
            &DecoderInputs {
                target_features: &target_features,
                warped_color_features: &warped_color,
                visibility: visibility.as_deref(),
                target_image: target,
            },
        )?;
        Ok(ForwardVars { output, flows, visibility, reference_up, target_features })
    }

    /// Warping, colorization and total loss graphs of a forward pass.
    pub fn losses<'g>(
        &self,
        forward: &ForwardVars<'g>,
        ground_truth: Var<'g, f32>,
    ) -> Result<(Var<'g, f32>, Var<'g, f32>, Var<'g, f32>)> {
        let l_warp = warping_loss_var(forward.reference_up, ground_truth, forward.flows[0])?;
        let l_color = colorization_loss_var(forward.output, ground_truth)?;
        let total = total_loss_var(l_color, l_warp, self.config.effective_lambda())?;
        Ok((l_warp, l_color, total))
    }

    /// Inference on one pair. The reference must be the target size divided
    /// by the configured scale.
    pub fn colorize(&self, target: &GrayImage, reference: &ColorImage) -> Result<Colorization> {
        check_scale(target.size(), reference.size(), self.config.scale)?;
        self.colorize_unchecked(target, reference)
    }

    fn colorize_unchecked(&self, target: &GrayImage, reference: &ColorImage) -> Result<Colorization> {
        let batch = Batch::from_inputs(&[(target, reference, None)])?;
        let graph = Graph::new();
        let mut binder = Binder::new(&graph, false);
        let mut trace = Vec::new();
        let fw = self.forward(&mut binder, &batch, &mut trace)?;
        let output = ColorImage::new(squeeze(&fw.output.value())?)?;
        let flows = FlowPyramid::new(
            fw.flows.iter().map(|f| FlowField::new(squeeze(&f.value())?)).collect::<Result<Vec<_>>>()?,
        )?;
        let visibility = match &fw.visibility {
            None => None,
            Some(maps) => {
                let mut levels = maps.iter().map(|m| squeeze(&m.value())).collect::<Result<Vec<_>>>()?;
                let v0 = levels.remove(0);
                Some(VisibilityMaps { v0, features: levels })
            }
        };
        Ok(Colorization { output, flows, visibility, trace })
    }

    /// Inference on a synthesized pair, using the pair's own scale.
    pub fn colorize_pair(&self, pair: &ImagePair) -> Result<Colorization> {
        check_scale(pair.target.size(), pair.reference.size(), pair.recipe.scale)?;
        self.colorize_unchecked(&pair.target, &pair.reference)
    }

    /// Loss components of one pair without building gradients.
    pub fn pair_loss(&self, pair: &ImagePair) -> Result<LossReport> {
        let batch = Batch::from_pairs(&[pair])?;
        let graph = Graph::new();
        let mut binder = Binder::new(&graph, false);
        let fw = self.forward(&mut binder, &batch, &mut Vec::new())?;
        let gt = graph.constant(batch.ground_truth.expect("pairs carry ground truth"));
        let (l_warp, l_color, _) = self.losses(&fw, gt)?;
        total_loss(
            l_color.value().scalar_value() as f64,
            l_warp.value().scalar_value() as f64,
            self.config.effective_lambda(),
        )
    }

    /// Mean loss components over `pairs`.
    pub fn dataset_loss(&self, pairs: &[ImagePair]) -> Result<LossReport> {
        let (mut w, mut c) = (0.0, 0.0);
        for p in pairs {
            let r = self.pair_loss(p)?;
            w += r.l_warp;
            c += r.l_color;
        }
        let n = pairs.len().max(1) as f64;
        total_loss(c / n, w / n, self.config.effective_lambda())
    }

    /// Mean PSNR of colorized outputs against ground truth.
    pub fn dataset_psnr(&self, pairs: &[ImagePair]) -> Result<f64> {
        let mut acc = 0.0;
        for p in pairs {
            acc += crate::metrics::psnr(&self.colorize_pair(p)?.output, &p.ground_truth)?;
        }
        Ok(acc / pairs.len().max(1) as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRow {
    pub step: u64,
    pub l_warp: f64,
    pub l_color: f64,
    pub total: f64,
}

pub fn loss_csv(rows: &[LossRow]) -> String {
    let mut s = format!("{LOSS_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.step, r.l_warp, r.l_color, r.total);
    }
    s
}

struct Sequence {
    frames: Vec<ColorImage>,
    recipe: PairRecipe,
}

/// Training samples: fixed pairs, plus video sequences whose frame gap is
/// redrawn every epoch when resampling is on.
pub struct TrainingData {
    fixed: Vec<ImagePair>,
    sequences: Vec<Sequence>,
}

fn load_frames(dir: &Path) -> Result<Vec<ColorImage>> {
    let mut frames = Vec::new();
    while dir.join(frame_name(frames.len())).is_file() {
        frames.push(read_color_png(&dir.join(frame_name(frames.len())))?);
    }
    if frames.is_empty() {
        let missing = dir.join(frame_name(0));
        return Err(Error::io(missing, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    Ok(frames)
}

impl TrainingData {
    pub fn from_config(config: &RunConfig) -> Result<Self> {
        let recipe = config.recipe();
        let Some(manifest) = &config.manifest else {
            if config.resample_frame_gap {
                let sequences = toy_sequences(config.seed, config.toy_pairs, config.toy_size)?
                    .into_iter()
                    .map(|s| Sequence { frames: s.frames, recipe })
                    .collect();
                return Ok(TrainingData { fixed: Vec::new(), sequences });
            }
            return Ok(TrainingData {
                fixed: toy_dataset(config.seed, config.toy_pairs, config.toy_size, recipe)?,
                sequences: Vec::new(),
            });
        };
        let root = dataset_root(config, manifest);
        let mut data = TrainingData { fixed: Vec::new(), sequences: Vec::new() };
        for entry in read_manifest(manifest)? {
            if config.resample_frame_gap && entry.viewpoint.is_none() {
                let frames = load_frames(&root.join(&entry.sequence))?;
                let recipe = PairRecipe { scale: entry.scale, frame_gap: entry.frame_gap, viewpoint: None, seed: config.seed };
                data.sequences.push(Sequence { frames, recipe });
            } else {
                data.fixed.push(load_pair(&root, &entry, config.seed)?);
            }
        }
        if data.len() == 0 {
            return Err(Error::Config(format!("{} lists no pairs", manifest.display())));
        }
        Ok(data)
    }

    pub fn from_pairs(pairs: Vec<ImagePair>) -> Self {
        TrainingData { fixed: pairs, sequences: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.fixed.len() + self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sample `index` as seen during `epoch`.
    fn sample(&self, seed: u64, epoch: u64, index: usize) -> Result<ImagePair> {
        if index < self.fixed.len() {
            return Ok(self.fixed[index].clone());
        }
        let k = index - self.fixed.len();
        let seq = &self.sequences[k];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream((1 << 63) | (epoch << 24) | k as u64);
        let gap = sample_frame_gap(&mut rng, seq.frames.len());
        make_pair(&seq.frames, PairRecipe { frame_gap: gap, ..seq.recipe })
    }

    /// Pairs as seen in the first epoch.
    pub fn first_epoch(&self, seed: u64) -> Result<Vec<ImagePair>> {
        (0..self.len()).map(|i| self.sample(seed, 0, i)).collect()
    }
}

fn dataset_root(config: &RunConfig, manifest: &Path) -> PathBuf {
    config
        .dataset_root
        .clone()
        .unwrap_or_else(|| manifest.parent().map(Path::to_path_buf).unwrap_or_default())
}

fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch + 1);
    order.shuffle(&mut rng);
    order
}

/// Single-threaded, deterministic training state.
pub struct Trainer {
    config: RunConfig,
    model: Model,
    adam: Adam<f32>,
    data: TrainingData,
    step: u64,
    rows: Vec<LossRow>,
}

impl Trainer {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        config.check_paths()?;
        let data = TrainingData::from_config(config)?;
        Self::with_data(config, data)
    }

    pub fn with_data(config: &RunConfig, data: TrainingData) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Config("no training samples".into()));
        }
        Ok(Trainer {
            config: config.clone(),
            model: Model::new(config)?,
            adam: Adam::new(config.adam()),
            data,
            step: 0,
            rows: Vec::new(),
        })
    }

    /// Continues from `ckpt`; the next update is step `ckpt.step + 1`.
    pub fn resume(config: &RunConfig, ckpt: &Checkpoint) -> Result<Self> {
        ckpt.check_compatible(config)?;
        let mut trainer = Self::new(config)?;
        trainer.model.load_params(&ckpt.params)?;
        trainer.adam = Adam::from_state(config.adam(), ckpt.step, ckpt.adam_first.clone(), ckpt.adam_second.clone());
        trainer.step = ckpt.step;
        Ok(trainer)
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn data(&self) -> &TrainingData {
        &self.data
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn rows(&self) -> &[LossRow] {
        &self.rows
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let (_, first, second) = self.adam.state();
        Checkpoint {
            config: self.config.clone(),
            step: self.step,
            params: self.model.params(),
            adam_first: first.clone(),
            adam_second: second.clone(),
        }
    }

    fn batch_for(&self, step: u64) -> Result<Vec<ImagePair>> {
        let n = self.data.len() as u64;
        let b = self.config.batch_size as u64;
        let mut pairs = Vec::with_capacity(b as usize);
        let mut order: Option<(u64, Vec<usize>)> = None;
        for j in 0..b {
            let pos = (step - 1) * b + j;
            let epoch = pos / n;
            if order.as_ref().is_none_or(|o| o.0 != epoch) {
                order = Some((epoch, epoch_order(self.config.seed, epoch, n as usize)));
            }
            let idx = order.as_ref().expect("set above").1[(pos % n) as usize];
            pairs.push(self.data.sample(self.config.seed, epoch, idx)?);
        }
        Ok(pairs)
    }

    /// Runs one optimizer update and returns its loss row.
    pub fn step(&mut self) -> Result<LossRow> {
        let step = self.step + 1;
        let pairs = self.batch_for(step)?;
        let batch = Batch::from_pairs(&pairs.iter().collect::<Vec<_>>())?;
        let graph = Graph::new();
        let mut binder = Binder::new(&graph, true);
        let fw = self.model.forward(&mut binder, &batch, &mut Vec::new())?;
        let gt = graph.constant(batch.ground_truth.clone().expect("pairs carry ground truth"));
        let (l_warp, l_color, total) = self.model.losses(&fw, gt)?;
        let row = LossRow {
            step,
            l_warp: l_warp.value().scalar_value() as f64,
            l_color: l_color.value().scalar_value() as f64,
            total: total.value().scalar_value() as f64,
        };
        if !(row.total.is_finite() && row.l_warp.is_finite() && row.l_color.is_finite()) {
            return Err(Error::NonFiniteLoss { step });
        }
        let grads = binder.collect(&graph.backward(total)?);
        if grads.values().any(|g| !g.all_finite()) {
            return Err(Error::NonFiniteLoss { step });
        }
        let mut stores = self.model.stores_mut();
        self.adam.update(&mut stores, &grads)?;
        self.step = step;
        self.rows.push(row);
        Ok(row)
    }

    /// Trains until `config.steps`, saving periodic checkpoints into the
    /// cache directory.
    pub fn run(&mut self, mut on_row: impl FnMut(&LossRow)) -> Result<()> {
        while self.step < self.config.steps {
            let row = self.step()?;
            on_row(&row);
            let every = self.config.checkpoint_every;
            if every > 0 && self.step % every == 0 {
                self.checkpoint().save(&periodic_checkpoint_path(&self.config, self.step))?;
            }
        }
        Ok(())
    }
}

pub fn periodic_checkpoint_path(config: &RunConfig, step: u64) -> PathBuf {
    config.cache_dir().join("checkpoints").join(format!("step_{step:06}.ckpt"))
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub rows: Vec<LossRow>,
}

pub fn train(config: &RunConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config)?;
    trainer.run(|_| {})?;
    Ok(TrainOutcome { checkpoint: trainer.checkpoint(), rows: trainer.rows })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub dataset: String,
    pub frame: usize,
    pub view: Option<(usize, usize)>,
    pub scale: usize,
    pub method: String,
    pub report: MetricReport,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalOutcome {
    pub rows: Vec<EvalRow>,
    /// `(sequence, error)` for pairs that could not be evaluated.
    pub failures: Vec<(String, String)>,
}

/// Scores every manifest entry in order. Per-pair failures are collected
/// instead of aborting.
pub fn evaluate(
    model: &Model,
    root: &Path,
    entries: &[ManifestEntry],
    dataset: &str,
    plugin: Option<&dyn PerceptualMetric>,
) -> EvalOutcome {
    let mut outcome = EvalOutcome::default();
    for entry in entries {
        let result = load_pair(root, entry, model.config().seed).and_then(|pair| {
            let start = Instant::now();
            let out = model.colorize_pair(&pair)?;
            let runtime = start.elapsed().as_secs_f64();
            score(&out.output, &pair.ground_truth, plugin, runtime)
        });
        match result {
            Ok(report) => outcome.rows.push(EvalRow {
                dataset: dataset.to_string(),
                frame: entry.frame_gap,
                view: entry.viewpoint,
                scale: entry.scale,
                method: model.variant_name().to_string(),
                report,
            }),
            Err(e) => outcome.failures.push((entry.sequence.display().to_string(), e.to_string())),
        }
    }
    outcome
}

pub fn eval_csv(outcome: &EvalOutcome) -> String {
    let mut s = format!("{EVAL_CSV_HEADER}\n");
    for r in &outcome.rows {
        let view = r.view.map(|(a, b)| format!("{a}_{b}")).unwrap_or_else(|| "-".into());
        let m = &r.report;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.6},{:.4},{:.6},{},{:.4}",
            r.dataset, r.frame, view, r.scale, r.method, m.nrmse, m.psnr, m.ssim, m.lpips, m.runtime_seconds
        );
    }
    if !outcome.failures.is_empty() {
        let _ = writeln!(s, "# failures: {}", outcome.failures.len());
        for (seq, err) in &outcome.failures {
            let _ = writeln!(s, "# {seq}: {}", err.replace('\n', " "));
        }
    }
    s
}
