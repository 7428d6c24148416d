//! End-to-end optimization loop, adaptive density control and the render
//! pipeline composition.

pub mod pipeline;

use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::{exponential_lr, AdamParams, AdamState, Mlp, MlpGrads};
use crate::error::{Error, Result};
use crate::gaussians::GaussianSet;
use crate::geometry::Camera;
use crate::losses::{loss_total, psnr, LossTargets, LossTerms, LossWeights};
use crate::scene::{FrameData, ModelConfig, SceneModel};

pub use pipeline::{
    render_backward, render_forward, RenderCache, RenderOutput, RenderSettings, SceneGrads,
    SourceFilter,
};

/// Per-group learning rates. Position and appearance rates decay
/// exponentially over `schedule_steps`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct LearningRates {
    pub position: f64,
    pub position_final: f64,
    pub schedule_steps: u64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub sh: f64,
    pub appearance: f64,
    pub appearance_final: f64,
    pub sky: f64,
    pub pose_translation: f64,
    pub pose_rotation: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            position: 1.6e-4,
            position_final: 1.6e-6,
            schedule_steps: 30_000,
            rotation: 1e-3,
            scale: 5e-3,
            opacity: 5e-2,
            sh: 2.5e-3,
            appearance: 1.6e-3,
            appearance_final: 1.6e-4,
            sky: 1e-2,
            pose_translation: 5e-4,
            pose_rotation: 1e-4,
        }
    }
}

/// Adaptive density control schedule and thresholds.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DensifyConfig {
    pub start: u64,
    pub stop: u64,
    pub interval: u64,
    /// View-space positional gradient threshold.
    pub grad_threshold: f64,
    pub prune_opacity: f64,
    /// Split when the largest scale exceeds this fraction of the scene extent.
    pub split_scale_fraction: f64,
    pub max_gaussians: usize,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        DensifyConfig {
            start: 500,
            stop: 15_000,
            interval: 100,
            grad_threshold: 2e-4,
            prune_opacity: 0.005,
            split_scale_fraction: 0.01,
            max_gaussians: 200_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Total optimization steps.
    pub iterations: u64,
    pub seed: u64,
    /// Worker threads; 0 uses all cores, 1 forces serial execution.
    pub threads: usize,
    pub near_plane: f64,
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub enable_local: bool,
    pub enable_global: bool,
    pub enable_deform: bool,
    pub lr: LearningRates,
    pub densify: DensifyConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 30_000,
            seed: 0,
            threads: 0,
            near_plane: 0.01,
            model: ModelConfig::default(),
            loss: LossWeights::default(),
            enable_local: true,
            enable_global: true,
            enable_deform: true,
            lr: LearningRates::default(),
            densify: DensifyConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn settings(&self) -> RenderSettings {
        RenderSettings {
            sources: SourceFilter::All,
            local_refine: self.enable_local,
            global_refine: self.enable_global,
            actor_deform: self.enable_deform,
            near: self.near_plane,
        }
    }

    /// Apply a `key=value` override with dotted paths (e.g. `lr.position`,
    /// `densify.max_gaussians`, `enable_local`). Unknown keys are rejected.
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<()> {
        let mut root = serde_json::to_value(&*self)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let parts: Vec<&str> = key.split('.').collect();
        let mut cur = &mut root;
        for part in &parts[..parts.len() - 1] {
            cur = cur
                .as_object_mut()
                .and_then(|o| o.get_mut(*part))
                .ok_or_else(|| Error::InvalidParameter(format!("unknown config key: {key}")))?;
        }
        let last = parts.last().unwrap();
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::InvalidParameter(format!("bad config path: {key}")))?;
        if !obj.contains_key(*last) {
            return Err(Error::InvalidParameter(format!("unknown config key: {key}")));
        }
        let parsed: serde_json::Value = serde_json::from_str(value)
            .unwrap_or_else(|_| serde_json::Value::String(value.to_string()));
        obj.insert(last.to_string(), parsed);
        *self = serde_json::from_value(root)
            .map_err(|e| Error::InvalidParameter(format!("config override {key}: {e}")))?;
        Ok(())
    }
}

/// Per-step record written to the JSONL training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepReport {
    pub iteration: u64,
    pub frame: usize,
    pub loss: LossTerms,
    pub psnr: f64,
    pub gaussians: usize,
    pub lr_position: f64,
    pub grad_skipped: u64,
}

struct GaussianOpt {
    positions: AdamState,
    rotations: AdamState,
    log_scales: AdamState,
    opacities: AdamState,
    sh: AdamState,
}

impl GaussianOpt {
    fn new(set: &GaussianSet) -> Self {
        GaussianOpt {
            positions: AdamState::new(set.positions.len()),
            rotations: AdamState::new(set.rotations.len()),
            log_scales: AdamState::new(set.log_scales.len()),
            opacities: AdamState::new(set.opacity_logits.len()),
            sh: AdamState::new(set.sh.len()),
        }
    }

    fn skipped(&self) -> u64 {
        self.positions.skipped
            + self.rotations.skipped
            + self.log_scales.skipped
            + self.opacities.skipped
            + self.sh.skipped
    }
}

struct MlpOpt {
    layers: Vec<(AdamState, AdamState)>,
}

impl MlpOpt {
    fn new(mlp: &Mlp) -> Self {
        MlpOpt {
            layers: mlp
                .layers
                .iter()
                .map(|l| (AdamState::new(l.w.len()), AdamState::new(l.b.len())))
                .collect(),
        }
    }

    fn step(&mut self, mlp: &mut Mlp, grads: &MlpGrads, lr: f64, p: &AdamParams) {
        for (l, (layer, (sw, sb))) in mlp.layers.iter_mut().zip(&mut self.layers).enumerate() {
            sw.step(layer.w.as_mut_slice(), grads.layers[l].0.as_slice(), lr, p);
            sb.step(layer.b.as_mut_slice(), grads.layers[l].1.as_slice(), lr, p);
        }
    }
}

struct OptStates {
    background: GaussianOpt,
    actors: Vec<(GaussianOpt, AdamState, AdamState)>,
    sky: AdamState,
    embeddings: AdamState,
    hash: Vec<AdamState>,
    d_local: MlpOpt,
    d_global: MlpOpt,
    d_actor_enc: MlpOpt,
    d_deform_head: MlpOpt,
    class_encoder: Option<MlpOpt>,
    class_embeddings: AdamState,
}

impl OptStates {
    fn new(scene: &SceneModel) -> Self {
        OptStates {
            background: GaussianOpt::new(&scene.background),
            actors: scene
                .actors
                .iter()
                .map(|a| {
                    (
                        GaussianOpt::new(&a.gaussians),
                        AdamState::new(a.key_rotations.len()),
                        AdamState::new(a.key_translations.len()),
                    )
                })
                .collect(),
            sky: AdamState::new(scene.sky.param_count()),
            embeddings: AdamState::new(scene.embeddings.values.len()),
            hash: scene
                .hash
                .tables
                .iter()
                .map(|t| AdamState::new(t.len()))
                .collect(),
            d_local: MlpOpt::new(&scene.d_local),
            d_global: MlpOpt::new(&scene.d_global),
            d_actor_enc: MlpOpt::new(&scene.d_actor_enc),
            d_deform_head: MlpOpt::new(&scene.d_deform_head),
            class_encoder: scene.class_encoder.as_ref().map(MlpOpt::new),
            class_embeddings: AdamState::new(scene.class_embeddings.values.len()),
        }
    }
}

/// Densification statistics accumulated between density-control steps.
#[derive(Debug, Clone, Default)]
struct DensifyAccum {
    grad_sum: Vec<f64>,
    count: Vec<u32>,
    /// Accumulated 3D positional gradient, 3 per Gaussian.
    pos_grad: Vec<f64>,
}

impl DensifyAccum {
    fn new(n: usize) -> Self {
        DensifyAccum {
            grad_sum: vec![0.0; n],
            count: vec![0; n],
            pos_grad: vec![0.0; 3 * n],
        }
    }

    fn add(&mut self, view_grads: &[f64], pos_grads: &[f64]) {
        for (i, &g) in view_grads.iter().enumerate() {
            if g > 0.0 {
                self.grad_sum[i] += g;
                self.count[i] += 1;
            }
        }
        for (a, b) in self.pos_grad.iter_mut().zip(pos_grads) {
            *a += *b;
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct DensifyReport {
    pub clones: usize,
    pub splits: usize,
    pub pruned: usize,
}

pub struct Trainer {
    pub scene: SceneModel,
    pub cfg: TrainConfig,
    pub frames: Vec<FrameData>,
    pub iteration: u64,
    opt: OptStates,
    rng: ChaCha8Rng,
    accum_bg: DensifyAccum,
    accum_actors: Vec<DensifyAccum>,
    adam: AdamParams,
}

impl Trainer {
    /// `frames` are the training views; the scene's embedding table must have
    /// been built over exactly these frames, in order.
    pub fn new(scene: SceneModel, frames: Vec<FrameData>, cfg: TrainConfig) -> Result<Trainer> {
        if scene.embeddings.rows() != frames.len() {
            return Err(Error::InvalidParameter(format!(
                "embedding table has {} rows for {} training frames",
                scene.embeddings.rows(),
                frames.len()
            )));
        }
        let opt = OptStates::new(&scene);
        let accum_bg = DensifyAccum::new(scene.background.len());
        let accum_actors = scene
            .actors
            .iter()
            .map(|a| DensifyAccum::new(a.gaussians.len()))
            .collect();
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Trainer {
            scene,
            frames,
            cfg,
            iteration: 0,
            opt,
            rng,
            accum_bg,
            accum_actors,
            adam: AdamParams::default(),
        })
    }

    pub fn settings(&self) -> RenderSettings {
        self.cfg.settings()
    }

    /// One optimization step on a uniformly sampled training frame.
    pub fn train_step(&mut self) -> Result<StepReport> {
        self.iteration += 1;
        let fi = self.rng.gen_range(0..self.frames.len());
        self.train_step_on(fi)
    }

    /// One optimization step on a specific training frame.
    pub fn train_step_on(&mut self, frame_idx: usize) -> Result<StepReport> {
        let settings = self.settings();
        let frame = &self.frames[frame_idx];
        let (out, cache) = render_forward(&self.scene, &frame.camera, Some(frame_idx), &settings)?;
        let targets = LossTargets {
            image: &frame.image,
            depth: frame.depth.as_ref(),
            sky_mask: frame.sky_mask.as_ref(),
            has_actors: self.scene.has_actors(),
        };
        let (terms, lgrads) = loss_total(
            &out.rgb,
            &out.depth,
            &out.acc_alpha,
            &out.actor_alpha,
            &targets,
            &self.cfg.loss,
        )?;
        if !terms.total.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss at iteration {}: {:?}",
                self.iteration, terms
            )));
        }
        let grads = render_backward(
            &self.scene,
            &cache,
            &lgrads.d_rgb,
            &lgrads.d_depth,
            &lgrads.d_acc,
            &lgrads.d_actor,
        );

        self.accum_bg.add(&grads.view_grad_bg, &grads.background.positions);
        for (acc, (vg, ag)) in self
            .accum_actors
            .iter_mut()
            .zip(grads.view_grad_actors.iter().zip(&grads.actors))
        {
            acc.add(vg, &ag.gaussians.positions);
        }

        let report_psnr = psnr(&out.rgb.clamped01(), &frame.image);
        self.apply_grads(&grads);
        self.renormalize();

        if self.iteration >= self.cfg.densify.start
            && self.iteration <= self.cfg.densify.stop
            && self.iteration % self.cfg.densify.interval == 0
        {
            self.densify_all();
        }

        Ok(StepReport {
            iteration: self.iteration,
            frame: frame_idx,
            loss: terms,
            psnr: report_psnr,
            gaussians: self.scene.total_gaussians(),
            lr_position: self.lr_position(),
            grad_skipped: self.total_skipped(),
        })
    }

    fn lr_position(&self) -> f64 {
        exponential_lr(
            self.iteration,
            self.cfg.lr.position,
            self.cfg.lr.position_final,
            self.cfg.lr.schedule_steps,
        )
    }

    fn lr_appearance(&self) -> f64 {
        exponential_lr(
            self.iteration,
            self.cfg.lr.appearance,
            self.cfg.lr.appearance_final,
            self.cfg.lr.schedule_steps,
        )
    }

    fn total_skipped(&self) -> u64 {
        self.opt.background.skipped()
            + self
                .opt
                .actors
                .iter()
                .map(|(g, r, t)| g.skipped() + r.skipped + t.skipped)
                .sum::<u64>()
    }

    fn apply_grads(&mut self, grads: &SceneGrads) {
        let lr = &self.cfg.lr;
        let p = self.adam;
        let lr_pos = self.lr_position();
        let lr_app = self.lr_appearance();

        let step_set = |set: &mut GaussianSet, opt: &mut GaussianOpt, g: &crate::gaussians::GaussianGrads| {
            opt.positions.step(&mut set.positions, &g.positions, lr_pos, &p);
            opt.rotations.step(&mut set.rotations, &g.rotations, lr.rotation, &p);
            opt.log_scales.step(&mut set.log_scales, &g.log_scales, lr.scale, &p);
            opt.opacities.step(&mut set.opacity_logits, &g.opacity_logits, lr.opacity, &p);
            opt.sh.step(&mut set.sh, &g.sh, lr.sh, &p);
        };
        step_set(&mut self.scene.background, &mut self.opt.background, &grads.background);
        for (ai, actor) in self.scene.actors.iter_mut().enumerate() {
            let (gopt, ropt, topt) = &mut self.opt.actors[ai];
            step_set(&mut actor.gaussians, gopt, &grads.actors[ai].gaussians);
            ropt.step(
                &mut actor.key_rotations,
                &grads.actors[ai].pose_rot,
                lr.pose_rotation,
                &p,
            );
            topt.step(
                &mut actor.key_translations,
                &grads.actors[ai].pose_trans,
                lr.pose_translation,
                &p,
            );
        }
        self.opt.sky.step(&mut self.scene.sky.texels, &grads.sky, lr.sky, &p);
        self.opt.embeddings.step(
            &mut self.scene.embeddings.values,
            &grads.embeddings,
            lr_app,
            &p,
        );
        for (level, table) in self.scene.hash.tables.iter_mut().enumerate() {
            self.opt.hash[level].step(table, &grads.hash_tables[level], lr_app, &p);
        }
        self.opt.d_local.step(&mut self.scene.d_local, &grads.d_local, lr_app, &p);
        self.opt.d_global.step(&mut self.scene.d_global, &grads.d_global, lr_app, &p);
        self.opt
            .d_actor_enc
            .step(&mut self.scene.d_actor_enc, &grads.d_actor_enc, lr_app, &p);
        self.opt
            .d_deform_head
            .step(&mut self.scene.d_deform_head, &grads.d_deform_head, lr_app, &p);
        if let (Some(enc), Some(opt), Some(g)) = (
            self.scene.class_encoder.as_mut(),
            self.opt.class_encoder.as_mut(),
            grads.class_encoder.as_ref(),
        ) {
            opt.step(enc, g, lr_app, &p);
        }
        self.opt.class_embeddings.step(
            &mut self.scene.class_embeddings.values,
            &grads.class_embeddings,
            lr_app,
            &p,
        );
    }

    fn renormalize(&mut self) {
        self.scene.background.renormalize_rotations();
        for a in &mut self.scene.actors {
            a.gaussians.renormalize_rotations();
            a.renormalize_rotations();
        }
    }

    /// Density control over the background and every actor model.
    pub fn densify_all(&mut self) -> DensifyReport {
        let extent = self.scene.aabb.half_diagonal() * 2.0;
        let mut total = DensifyReport::default();
        let budget_ok = self.scene.total_gaussians() < self.cfg.densify.max_gaussians;
        let cfg = self.cfg.densify;
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ self.iteration);

        let r = densify_and_prune(
            &mut self.scene.background,
            &mut self.opt.background,
            &mut self.accum_bg,
            &cfg,
            extent,
            budget_ok,
            &mut rng,
        );
        total.clones += r.clones;
        total.splits += r.splits;
        total.pruned += r.pruned;
        for (ai, actor) in self.scene.actors.iter_mut().enumerate() {
            let r = densify_and_prune(
                &mut actor.gaussians,
                &mut self.opt.actors[ai].0,
                &mut self.accum_actors[ai],
                &cfg,
                extent,
                budget_ok,
                &mut rng,
            );
            total.clones += r.clones;
            total.splits += r.splits;
            total.pruned += r.pruned;
        }
        total
    }

    /// Render a training frame with the current model.
    pub fn render_train_frame(&self, frame_idx: usize) -> Result<RenderOutput> {
        let frame = &self.frames[frame_idx];
        let (out, _) = render_forward(
            &self.scene,
            &frame.camera,
            Some(frame_idx),
            &self.settings(),
        )?;
        Ok(out)
    }
}

/// Render mode for novel views and decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderMode {
    Full,
    BackgroundOnly,
    ActorsOnly,
    NoRefinement,
}

impl RenderMode {
    pub fn parse(s: &str) -> Result<RenderMode> {
        Ok(match s {
            "full" => RenderMode::Full,
            "background" => RenderMode::BackgroundOnly,
            "actors" => RenderMode::ActorsOnly,
            "raw" => RenderMode::NoRefinement,
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "unknown render mode '{s}' (full|background|actors|raw)"
                )))
            }
        })
    }
}

/// Novel-view render: embedding by nearest-training-frame lookup, actor poses
/// by interpolation, optional lateral camera shift in meters.
pub fn render_novel(
    scene: &SceneModel,
    cam: &Camera,
    cfg: &TrainConfig,
    mode: RenderMode,
    lateral_shift: f64,
) -> Result<RenderOutput> {
    let cam = if lateral_shift != 0.0 {
        cam.with_lateral_shift(lateral_shift)
    } else {
        cam.clone()
    };
    let mut settings = cfg.settings();
    match mode {
        RenderMode::Full => {}
        RenderMode::BackgroundOnly => settings.sources = SourceFilter::BackgroundOnly,
        RenderMode::ActorsOnly => settings.sources = SourceFilter::ActorsOnly,
        RenderMode::NoRefinement => {
            settings = RenderSettings::no_refinement(cfg.near_plane);
        }
    }
    let (out, _) = render_forward(scene, &cam, None, &settings)?;
    Ok(out)
}

/// Every `every_nth` frame (starting at 0) becomes a test view; the rest
/// train. `every_nth = 0` puts everything in the training split.
pub fn split_indices(n_frames: usize, every_nth: usize) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for i in 0..n_frames {
        if every_nth > 0 && i % every_nth == 0 {
            test.push(i);
        } else {
            train.push(i);
        }
    }
    (train, test)
}

/// Assemble a trainer from a loaded dataset: point-to-actor assignment,
/// Gaussian initialization, scene model construction over the training split.
pub fn build_trainer(
    loaded: &crate::scene_io::LoadedScene,
    train_indices: &[usize],
    cfg: TrainConfig,
) -> Result<Trainer> {
    use crate::encoders::FrameKey;
    use crate::scene::{
        assign_points_to_actors, build_actor_models, gaussians_from_points, SceneModel,
    };
    if train_indices.is_empty() {
        return Err(Error::Empty("no training frames".into()));
    }
    let (bg_points, actor_points) = assign_points_to_actors(&loaded.points, &loaded.actor_inits);
    let background = gaussians_from_points(&bg_points, cfg.model.sh_degree);
    if background.is_empty() {
        return Err(Error::Empty("no background points after assignment".into()));
    }
    let actors = build_actor_models(
        &loaded.actor_inits,
        actor_points,
        cfg.model.sh_degree,
        cfg.seed,
    );
    let frames: Vec<FrameData> = train_indices
        .iter()
        .map(|&i| loaded.frames[i].clone())
        .collect();
    let keys: Vec<FrameKey> = frames
        .iter()
        .map(|f| FrameKey {
            camera_index: f.camera.camera_index,
            timestamp: f.camera.timestamp,
        })
        .collect();
    let scene = SceneModel::new(
        cfg.model,
        loaded.json.aabb,
        background,
        actors,
        keys,
        cfg.seed,
    )?;
    Trainer::new(scene, frames, cfg)
}

/// Clone-and-split density control with opacity pruning over one set.
fn densify_and_prune(
    set: &mut GaussianSet,
    opt: &mut GaussianOpt,
    accum: &mut DensifyAccum,
    cfg: &DensifyConfig,
    scene_extent: f64,
    allow_growth: bool,
    rng: &mut ChaCha8Rng,
) -> DensifyReport {
    let n = set.len();
    let split_thresh = cfg.split_scale_fraction * scene_extent;
    let mut keep = vec![true; n];
    let mut clones: Vec<usize> = Vec::new();
    let mut splits: Vec<usize> = Vec::new();
    let mut pruned = 0usize;

    for i in 0..n {
        let opacity = set.opacity(i);
        if opacity < cfg.prune_opacity {
            keep[i] = false;
            pruned += 1;
            continue;
        }
        if !allow_growth || accum.count[i] == 0 {
            continue;
        }
        let avg = accum.grad_sum[i] / accum.count[i] as f64;
        if avg <= cfg.grad_threshold {
            continue;
        }
        let max_scale = set.scale(i).max();
        if max_scale > split_thresh {
            splits.push(i);
            keep[i] = false;
        } else {
            clones.push(i);
        }
    }

    let stride = set.sh_stride();
    let mut new_rows: Vec<(Vector3<f64>, Vector4<f64>, Vector3<f64>, f64, Vec<f64>)> = Vec::new();
    for &i in &clones {
        // Shift the copy along the accumulated negative position gradient.
        let g = Vector3::new(
            accum.pos_grad[3 * i],
            accum.pos_grad[3 * i + 1],
            accum.pos_grad[3 * i + 2],
        );
        let scale = set.scale(i);
        let shift = if g.norm() > 1e-12 {
            -g.normalize() * 0.5 * scale.mean()
        } else {
            Vector3::zeros()
        };
        new_rows.push((
            set.position(i) + shift,
            set.rotation(i),
            Vector3::new(set.log_scales[3 * i], set.log_scales[3 * i + 1], set.log_scales[3 * i + 2]),
            set.opacity_logits[i],
            set.sh_block(i).to_vec(),
        ));
    }
    let ln_split = (1.6f64).ln();
    for &i in &splits {
        let rot = set.rotation(i);
        let scale = set.scale(i);
        let r = crate::geometry::quat_to_rotation(&rot);
        let log_s = Vector3::new(
            set.log_scales[3 * i] - ln_split,
            set.log_scales[3 * i + 1] - ln_split,
            set.log_scales[3 * i + 2] - ln_split,
        );
        for _ in 0..2 {
            // Sample the child position from the parent Gaussian.
            let z = Vector3::new(
                gauss_sample(rng),
                gauss_sample(rng),
                gauss_sample(rng),
            );
            let offset = r * z.component_mul(&scale);
            new_rows.push((
                set.position(i) + offset,
                rot,
                log_s,
                set.opacity_logits[i],
                set.sh_block(i).to_vec(),
            ));
        }
    }

    // Compact originals and their optimizer moments, then append new rows.
    set.retain_mask(&keep);
    opt.positions.retain_mask(&keep, 3);
    opt.rotations.retain_mask(&keep, 4);
    opt.log_scales.retain_mask(&keep, 3);
    opt.opacities.retain_mask(&keep, 1);
    opt.sh.retain_mask(&keep, stride);
    for (pos, rot, log_s, o, sh) in &new_rows {
        set.push(*pos, *rot, *log_s, *o, sh);
    }
    opt.positions.append_zeros(3 * new_rows.len());
    opt.rotations.append_zeros(4 * new_rows.len());
    opt.log_scales.append_zeros(3 * new_rows.len());
    opt.opacities.append_zeros(new_rows.len());
    opt.sh.append_zeros(stride * new_rows.len());

    *accum = DensifyAccum::new(set.len());
    DensifyReport {
        clones: clones.len(),
        splits: splits.len(),
        pruned,
    }
}

/// Box-Muller standard normal draw.
fn gauss_sample(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
