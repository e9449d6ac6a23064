//! Flow module plus segmenter, and semi-supervised mask propagation.

use std::fs;
use std::path::Path;

use crate::data_io::VideoSequence;
use crate::diffarray::{checkpoint, Array};
use crate::error::{Error, Result};
use crate::flownet::{FlowNet, FlowNetConfig};
use crate::segmenter::{merge_objects, SegNet, SegNetConfig};
use crate::training::RunConfig;
use crate::warp::{warp_array, FlowField};

pub const FLOWNET_FILE: &str = "flownet.wseg";
pub const SEGNET_FILE: &str = "segnet.wseg";
pub const CONFIG_FILE: &str = "config.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct VosModel {
    pub flownet: FlowNet<f32>,
    pub segnet: SegNet<f32>,
}

/// Everything one propagation step produces.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub flow: FlowField<f32>,
    pub warped_mask: Array<f32>,
    pub mask: Array<f32>,
}

/// Per-object soft masks `[object][t]` for one sequence, with the flows
/// used at each step (`flows[object][t - 1]` maps frame `t - 1` to `t`).
#[derive(Clone, Debug)]
pub struct Propagation {
    pub masks: Vec<Vec<Array<f32>>>,
    pub flows: Vec<Vec<FlowField<f32>>>,
}

impl Propagation {
    /// Merged label maps, one per frame, with palette ids from `object_ids`.
    pub fn label_maps(&self, object_ids: &[u8]) -> Result<Vec<Vec<u8>>> {
        let frames = self.masks.first().map_or(0, Vec::len);
        (0..frames)
            .map(|t| {
                let probs: Vec<Array<f32>> = self.masks.iter().map(|m| m[t].clone()).collect();
                Ok(merge_objects(&probs)?
                    .into_iter()
                    .map(|k| {
                        if k == 0 {
                            0
                        } else {
                            object_ids[k as usize - 1]
                        }
                    })
                    .collect())
            })
            .collect()
    }
}

impl VosModel {
    pub fn init(flow: FlowNetConfig, seg: SegNetConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            flownet: FlowNet::init(flow, seed.wrapping_mul(2).wrapping_add(1))?,
            segnet: SegNet::init(seg, seed.wrapping_mul(2).wrapping_add(2))?,
        })
    }

    /// One step from `(prev_frame, prev_mask)` to `frame`.
    pub fn step(
        &self,
        prev_frame: &Array<f32>,
        frame: &Array<f32>,
        prev_mask: &Array<f32>,
    ) -> Result<StepOutput> {
        let flow = self.flownet.predict(prev_frame, frame, prev_mask)?;
        let warped_mask = warp_array(prev_mask, &flow)?;
        let warped = self.segnet.config.use_warped_mask.then_some(&warped_mask);
        let mask = self.segnet.predict(frame, prev_mask, warped)?;
        Ok(StepOutput {
            flow,
            warped_mask,
            mask,
        })
    }

    /// Semi-supervised propagation: only the frame-0 masks are read.
    pub fn propagate(&self, seq: &VideoSequence) -> Result<Propagation> {
        let mut masks = Vec::with_capacity(seq.num_objects());
        let mut flows = Vec::with_capacity(seq.num_objects());
        for (k, object_masks) in seq.masks.iter().enumerate() {
            let first = object_masks.first().ok_or_else(|| {
                Error::Data(format!(
                    "sequence {}: object {} has no first-frame mask",
                    seq.name, seq.object_ids[k]
                ))
            })?;
            let mut out = vec![first.clone()];
            let mut f = Vec::with_capacity(seq.len().saturating_sub(1));
            for t in 1..seq.len() {
                let step = self.step(&seq.frames[t - 1], &seq.frames[t], &out[t - 1])?;
                out.push(step.mask);
                f.push(step.flow);
            }
            masks.push(out);
            flows.push(f);
        }
        Ok(Propagation { masks, flows })
    }
}

/// Write `config.txt`, `flownet.wseg` and `segnet.wseg` into `dir`.
pub fn save_checkpoint(dir: &Path, run: &RunConfig, model: &VosModel) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cfg = dir.join(CONFIG_FILE);
    fs::write(&cfg, run.to_text()).map_err(|e| Error::io(&cfg, e))?;
    checkpoint::save(&dir.join(FLOWNET_FILE), &model.flownet.params)?;
    checkpoint::save(&dir.join(SEGNET_FILE), &model.segnet.params)
}

/// Inverse of [`save_checkpoint`]; architectures come from the saved config.
pub fn load_checkpoint(dir: &Path) -> Result<(RunConfig, VosModel)> {
    let run = RunConfig::load(&dir.join(CONFIG_FILE))?;
    let flownet = FlowNet::from_params(run.flownet, checkpoint::load(&dir.join(FLOWNET_FILE))?)?;
    let segnet = SegNet::from_params(run.segnet, checkpoint::load(&dir.join(SEGNET_FILE))?)?;
    Ok((run, VosModel { flownet, segnet }))
}
