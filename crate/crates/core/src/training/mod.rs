//! Frame-pair sampling, teacher forcing, the two-stage freeze schedule and
//! parameter updates.

mod adam;
mod config;

pub use adam::{optimizer_step, AdamState, BETA1, BETA2, EPS};
pub use config::RunConfig;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data_io::VideoSequence;
use crate::diffarray::{Array, ParamSet, Tape};
use crate::error::{Error, Result};
use crate::losses::{
    mask_flow_loss, photometric_loss, segmentation_loss, visual_flow_loss, LossConfig,
};
use crate::model::VosModel;
use crate::warp::bilinear_warp;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    /// Probability of feeding the ground-truth previous mask.
    pub p_teacher: f64,
    /// Segmenter-only warm-up epochs.
    pub e_s: usize,
    /// Length of each segmenter freeze/unfreeze block after warm-up.
    pub e_a: usize,
    pub epochs_total: usize,
    pub learning_rate: f64,
    pub w_mfl: f64,
    pub w_vfl: f64,
    pub w_seg: f64,
    pub lambda_iou: f64,
    pub seed: u64,
    pub batch_size: usize,
    /// Optimizer steps per epoch; 0 means `ceil(num_sequences / batch_size)`.
    pub steps_per_epoch: usize,
    /// Mask both frames in the visual flow loss. Off gives a plain
    /// photometric loss over the whole frame.
    pub vfl_masked: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            p_teacher: 0.5,
            e_s: 5,
            e_a: 5,
            epochs_total: 40,
            learning_rate: 1e-3,
            w_mfl: 1.0,
            w_vfl: 1.0,
            w_seg: 1.0,
            lambda_iou: 10.0,
            seed: 0,
            batch_size: 4,
            steps_per_epoch: 0,
            vfl_masked: true,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(0.0..=1.0).contains(&self.p_teacher) {
            return bad("train.p_teacher must lie in [0, 1]");
        }
        if self.e_a == 0 {
            return bad("train.e_a must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("train.batch_size must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("train.learning_rate must be positive");
        }
        if ![self.w_mfl, self.w_vfl, self.w_seg]
            .iter()
            .all(|w| *w >= 0.0 && w.is_finite())
        {
            return bad("loss weights must be finite and >= 0");
        }
        self.loss_config().validate()
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda_iou: self.lambda_iou,
            ..LossConfig::default()
        }
    }

    pub fn steps_for(&self, num_sequences: usize) -> usize {
        if self.steps_per_epoch > 0 {
            self.steps_per_epoch
        } else {
            num_sequences.div_ceil(self.batch_size).max(1)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct StagePlan {
    pub seg_trainable: bool,
    pub flow_trainable: bool,
}

/// Warm-up trains only the segmenter; afterwards the flow module stays on
/// and the segmenter alternates in `e_a`-epoch blocks, starting frozen.
pub fn stage_schedule(cfg: &TrainingConfig, epoch: usize) -> StagePlan {
    if epoch < cfg.e_s {
        return StagePlan {
            seg_trainable: true,
            flow_trainable: false,
        };
    }
    let block = (epoch - cfg.e_s) / cfg.e_a.max(1);
    StagePlan {
        seg_trainable: block % 2 == 1,
        flow_trainable: true,
    }
}

/// One uniform draw: true (use ground truth) with probability `p`.
pub fn teacher_force_draw(p: f64, rng: &mut impl Rng) -> bool {
    rng.random::<f64>() < p
}

pub fn teacher_force_select<'a, M>(gt: &'a M, pred: &'a M, p: f64, rng: &mut impl Rng) -> &'a M {
    if teacher_force_draw(p, rng) {
        gt
    } else {
        pred
    }
}

/// A training pair `(t - 1, t)` of one object in one sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct PairSample {
    pub sequence: usize,
    /// Target frame index, `>= 1`.
    pub t: usize,
    pub object: usize,
}

impl PairSample {
    /// `(X_{t-1}, X_t, Y_{t-1}, Y_t)`
    pub fn arrays<'d>(&self, dataset: &'d [VideoSequence]) -> [&'d Array<f32>; 4] {
        let s = &dataset[self.sequence];
        let m = &s.masks[self.object];
        [
            &s.frames[self.t - 1],
            &s.frames[self.t],
            &m[self.t - 1],
            &m[self.t],
        ]
    }

    pub fn object_id(&self, dataset: &[VideoSequence]) -> u8 {
        dataset[self.sequence].object_ids[self.object]
    }
}

pub fn check_dataset(dataset: &[VideoSequence]) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    for s in dataset {
        if s.len() < 2 {
            return Err(Error::Data(format!(
                "sequence {} has fewer than 2 frames",
                s.name
            )));
        }
        if s.num_objects() == 0 {
            return Err(Error::Data(format!("sequence {} has no objects", s.name)));
        }
        if !s.fully_annotated() {
            return Err(Error::Data(format!(
                "sequence {} lacks masks for some frames",
                s.name
            )));
        }
    }
    Ok(())
}

/// Uniform over sequences, then target frame, then object.
pub fn sample_pairs(
    dataset: &[VideoSequence],
    rng: &mut impl Rng,
    batch_size: usize,
) -> Result<Vec<PairSample>> {
    check_dataset(dataset)?;
    Ok((0..batch_size)
        .map(|_| {
            let sequence = rng.random_range(0..dataset.len());
            let s = &dataset[sequence];
            PairSample {
                sequence,
                t: rng.random_range(1..s.len()),
                object: rng.random_range(0..s.num_objects()),
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean of `w_mfl * MFL + w_vfl * VFL + w_seg * SegLoss`.
    pub total: f64,
    pub mfl: f64,
    pub vfl: f64,
    pub seg: f64,
    pub seg_trainable: bool,
    pub flow_trainable: bool,
    pub samples: usize,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: VosModel,
    pub flow_opt: AdamState,
    pub seg_opt: AdamState,
    /// Next epoch to run.
    pub epoch: usize,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(run: &RunConfig) -> Result<Self> {
        run.train.validate()?;
        let model = VosModel::init(run.flownet, run.segnet, run.train.seed)?;
        Ok(Self::from_model(model, run.train.seed))
    }

    pub fn from_model(model: VosModel, seed: u64) -> Self {
        Self {
            flow_opt: AdamState::new(&model.flownet.params),
            seg_opt: AdamState::new(&model.segnet.params),
            model,
            epoch: 0,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x7261_696e),
        }
    }
}

struct SampleOutcome {
    total: f64,
    mfl: f64,
    vfl: f64,
    seg: f64,
    flow_grads: Option<ParamSet<f32>>,
    seg_grads: Option<ParamSet<f32>>,
}

fn accumulate(acc: &mut ParamSet<f32>, g: &ParamSet<f32>) -> Result<()> {
    for ((_, a), (_, g)) in acc.iter_mut().zip(g.iter()) {
        a.add_assign(g);
    }
    Ok(())
}

/// The previous mask fed to the models: ground truth, or the model's own
/// one-step prediction from the ground truth two frames back.
fn previous_mask(
    model: &VosModel,
    dataset: &[VideoSequence],
    s: &PairSample,
    use_gt: bool,
) -> Result<Array<f32>> {
    let seq = &dataset[s.sequence];
    let masks = &seq.masks[s.object];
    if use_gt || s.t == 1 {
        return Ok(masks[s.t - 1].clone());
    }
    let step = model.step(&seq.frames[s.t - 2], &seq.frames[s.t - 1], &masks[s.t - 2])?;
    Ok(step.mask)
}

fn run_sample(
    model: &VosModel,
    cfg: &TrainingConfig,
    plan: StagePlan,
    dataset: &[VideoSequence],
    s: &PairSample,
    prev_mask: Array<f32>,
    scale: f64,
) -> Result<SampleOutcome> {
    let [x0, x1, _, y1] = s.arrays(dataset);
    let use_seg = cfg.w_seg > 0.0;
    let train_flow = plan.flow_trainable;
    let train_seg = plan.seg_trainable && use_seg;
    let tape = Tape::<f32>::new();
    let fp = model.flownet.params.bind(&tape, train_flow);
    let sp = model.segnet.params.bind(&tape, train_seg);
    let prev_frame = tape.constant(x0.clone());
    let frame = tape.constant(x1.clone());
    let prev = tape.constant(prev_mask);
    let target = tape.constant(y1.clone());

    let flow = model.flownet.forward(&fp, prev_frame, frame, prev)?;
    let warped_mask = bilinear_warp(prev, flow)?;
    let warped_frame = bilinear_warp(prev_frame, flow)?;
    let loss_cfg = cfg.loss_config();
    let mfl = mask_flow_loss(warped_mask, target, &loss_cfg)?;
    let vfl = if cfg.vfl_masked {
        visual_flow_loss(warped_frame, warped_mask, frame, target)?
    } else {
        photometric_loss(warped_frame, frame)?
    };
    let mut total = mfl
        .mul_scalar(cfg.w_mfl as f32)
        .add(vfl.mul_scalar(cfg.w_vfl as f32))?;
    let mut seg_value = 0.0;
    if use_seg {
        // The flow module learns from the flow losses only.
        let detached = model
            .segnet
            .config
            .use_warped_mask
            .then(|| warped_mask.value().clone());
        let warped = detached.map(|m| tape.constant(m));
        let pred = model.segnet.forward(&sp, frame, prev, warped)?;
        let seg = segmentation_loss(pred, target, &loss_cfg)?;
        seg_value = seg.item()?.into();
        total = total.add(seg.mul_scalar(cfg.w_seg as f32))?;
    }
    let total_value: f64 = total.item()?.into();
    let out = SampleOutcome {
        total: total_value,
        mfl: mfl.item()?.into(),
        vfl: vfl.item()?.into(),
        seg: seg_value,
        flow_grads: None,
        seg_grads: None,
    };
    if !total_value.is_finite() || !(train_flow || train_seg) {
        return Ok(out);
    }
    tape.backward(total.mul_scalar(scale as f32))?;
    Ok(SampleOutcome {
        flow_grads: train_flow.then(|| fp.grads()).transpose()?,
        seg_grads: train_seg.then(|| sp.grads()).transpose()?,
        ..out
    })
}

/// One epoch: `cfg.steps_for(len)` batches, each updating only the parameter
/// sets the stage schedule enables.
pub fn train_epoch(
    state: &mut TrainState,
    cfg: &TrainingConfig,
    dataset: &[VideoSequence],
) -> Result<EpochMetrics> {
    cfg.validate()?;
    check_dataset(dataset)?;
    let epoch = state.epoch;
    let plan = stage_schedule(cfg, epoch);
    let steps = cfg.steps_for(dataset.len());
    let scale = 1.0 / cfg.batch_size as f64;
    let use_seg = cfg.w_seg > 0.0;
    let (mut sum_total, mut sum_mfl, mut sum_vfl, mut sum_seg) = (0.0, 0.0, 0.0, 0.0);
    let mut samples = 0;
    for batch in 0..steps {
        let pairs = sample_pairs(dataset, &mut state.rng, cfg.batch_size)?;
        let mut flow_acc = plan
            .flow_trainable
            .then(|| state.model.flownet.params.zeros_like());
        let mut seg_acc =
            (plan.seg_trainable && use_seg).then(|| state.model.segnet.params.zeros_like());
        for s in &pairs {
            let use_gt = teacher_force_draw(cfg.p_teacher, &mut state.rng);
            let context = |e: Error| {
                Error::NonFinite(format!(
                    "epoch {epoch} batch {batch} (sequence {}, frame {}, object {}): {e}",
                    dataset[s.sequence].name,
                    s.t,
                    s.object_id(dataset)
                ))
            };
            let prev = previous_mask(&state.model, dataset, s, use_gt)?;
            let out = run_sample(&state.model, cfg, plan, dataset, s, prev, scale).map_err(
                |e| match e {
                    Error::NonFinite(_) => context(e),
                    other => other,
                },
            )?;
            if !out.total.is_finite() {
                return Err(context(Error::NonFinite(format!("loss is {}", out.total))));
            }
            sum_total += out.total;
            sum_mfl += out.mfl;
            sum_vfl += out.vfl;
            sum_seg += out.seg;
            samples += 1;
            if let (Some(acc), Some(g)) = (flow_acc.as_mut(), out.flow_grads.as_ref()) {
                accumulate(acc, g)?;
            }
            if let (Some(acc), Some(g)) = (seg_acc.as_mut(), out.seg_grads.as_ref()) {
                accumulate(acc, g)?;
            }
        }
        if let Some(g) = flow_acc {
            optimizer_step(
                &mut state.model.flownet.params,
                &g,
                &mut state.flow_opt,
                cfg.learning_rate,
            )?;
        }
        if let Some(g) = seg_acc {
            optimizer_step(
                &mut state.model.segnet.params,
                &g,
                &mut state.seg_opt,
                cfg.learning_rate,
            )?;
        }
    }
    state.epoch += 1;
    let n = samples as f64;
    Ok(EpochMetrics {
        epoch,
        total: sum_total / n,
        mfl: sum_mfl / n,
        vfl: sum_vfl / n,
        seg: sum_seg / n,
        seg_trainable: plan.seg_trainable,
        flow_trainable: plan.flow_trainable,
        samples,
    })
}

/// Run the remaining epochs up to `cfg.epochs_total`, calling `on_epoch`
/// after each.
pub fn train(
    state: &mut TrainState,
    cfg: &TrainingConfig,
    dataset: &[VideoSequence],
    mut on_epoch: impl FnMut(&EpochMetrics, &TrainState) -> Result<()>,
) -> Result<Vec<EpochMetrics>> {
    let mut log = Vec::new();
    while state.epoch < cfg.epochs_total {
        let m = train_epoch(state, cfg, dataset)?;
        on_epoch(&m, state)?;
        log.push(m);
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        let cfg = TrainingConfig {
            e_s: 2,
            e_a: 3,
            ..Default::default()
        };
        let flags: Vec<(bool, bool)> = (0..8)
            .map(|e| {
                let p = stage_schedule(&cfg, e);
                (p.seg_trainable, p.flow_trainable)
            })
            .collect();
        let (on, off) = (true, false);
        assert_eq!(
            flags,
            vec![
                (on, off),
                (on, off),
                (off, on),
                (off, on),
                (off, on),
                (on, on),
                (on, on),
                (on, on)
            ]
        );
        let cfg = TrainingConfig {
            e_s: 0,
            e_a: 1,
            ..Default::default()
        };
        for e in 0..6 {
            let p = stage_schedule(&cfg, e);
            assert!(p.flow_trainable);
            assert_eq!(p.seg_trainable, e % 2 == 1);
        }
    }

    #[test]
    fn teacher_forcing_extremes_and_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (gt, pred) = (1, 2);
        for _ in 0..100 {
            assert_eq!(*teacher_force_select(&gt, &pred, 1.0, &mut rng), 1);
            assert_eq!(*teacher_force_select(&gt, &pred, 0.0, &mut rng), 2);
        }
        let hits = (0..10_000)
            .filter(|_| *teacher_force_select(&gt, &pred, 0.5, &mut rng) == 1)
            .count();
        assert!((4800..=5200).contains(&hits), "{hits}");
    }

    #[test]
    fn config_validation() {
        assert!(TrainingConfig::default().validate().is_ok());
        for bad in [
            TrainingConfig {
                p_teacher: 1.5,
                ..Default::default()
            },
            TrainingConfig {
                e_a: 0,
                ..Default::default()
            },
            TrainingConfig {
                batch_size: 0,
                ..Default::default()
            },
            TrainingConfig {
                w_vfl: -1.0,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
        assert_eq!(TrainingConfig::default().steps_for(200), 50);
        assert_eq!(TrainingConfig::default().steps_for(5), 2);
    }
}
