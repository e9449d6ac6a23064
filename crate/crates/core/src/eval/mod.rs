//! Region similarity J, contour accuracy F, per-sequence reports and the
//! warped-mask benchmark.

mod viz;

pub use viz::{flow_colorize, masked_warped_frame, warp_diff, wheel_color, WHEEL_SIZE};

use std::collections::BTreeMap;
use std::path::Path;
use std::thread;

use serde::Serialize;

use crate::data_io::{read_label_dir, VideoSequence, ANNOTATIONS_DIR};
use crate::diffarray::Array;
use crate::error::{Error, Result};
use crate::flownet::FlowNet;
use crate::warp::{warp_array, FlowField};

/// A binary mask in row-major order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::invalid(format!(
                "mask has {} pixels, expected {height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Pixels strictly above 0.5 of a `[1, H, W]` array.
    pub fn from_array(a: &Array<f32>) -> Result<Self> {
        let (c, h, w) = a.chw()?;
        if c != 1 {
            return Err(Error::invalid(format!(
                "mask must have one channel, got {c}"
            )));
        }
        Self::new(h, w, a.data().iter().map(|&v| v > 0.5).collect())
    }

    pub fn from_labels(labels: &[u8], id: u8, height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, labels.iter().map(|&l| l == id).collect())
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    fn check(&self, other: &Mask, op: &'static str) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::shape(
                op,
                &[self.height, self.width],
                &[other.height, other.width],
            ));
        }
        Ok(())
    }

    /// Foreground pixels with a 4-neighbour that is background or outside.
    pub fn boundary(&self) -> Vec<bool> {
        let (h, w) = (self.height, self.width);
        let at = |y: isize, x: isize| {
            y >= 0
                && x >= 0
                && (y as usize) < h
                && (x as usize) < w
                && self.data[y as usize * w + x as usize]
        };
        (0..h * w)
            .map(|i| {
                let (y, x) = ((i / w) as isize, (i % w) as isize);
                self.data[i] && !(at(y - 1, x) && at(y + 1, x) && at(y, x - 1) && at(y, x + 1))
            })
            .collect()
    }
}

pub fn jaccard(pred: &Mask, gt: &Mask) -> Result<f64> {
    pred.check(gt, "jaccard")?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        inter += usize::from(p && g);
        union += usize::from(p || g);
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// `ceil(0.008 * diagonal)`
pub fn default_tolerance(height: usize, width: usize) -> f64 {
    (0.008 * ((height * height + width * width) as f64).sqrt()).ceil()
}

fn dilate(bits: &[bool], h: usize, w: usize, radius: f64) -> Vec<bool> {
    let r = radius.floor() as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
        .filter(|&(dy, dx)| ((dy * dy + dx * dx) as f64) <= radius * radius)
        .collect();
    let mut out = vec![false; h * w];
    for (i, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        for &(dy, dx) in &offsets {
            let (yy, xx) = (y + dy, x + dx);
            if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                out[yy as usize * w + xx as usize] = true;
            }
        }
    }
    out
}

/// Boundary F-measure: a boundary pixel matches when the other mask's
/// boundary lies within Euclidean distance `tol_radius`.
pub fn boundary_f(pred: &Mask, gt: &Mask, tol_radius: f64) -> Result<f64> {
    pred.check(gt, "boundary_f")?;
    if !(tol_radius >= 0.0) {
        return Err(Error::invalid(format!(
            "tol_radius must be >= 0, got {tol_radius}"
        )));
    }
    let (h, w) = (pred.height, pred.width);
    let (pb, gb) = (pred.boundary(), gt.boundary());
    let (np, ng) = (
        pb.iter().filter(|&&b| b).count(),
        gb.iter().filter(|&&b| b).count(),
    );
    match (np, ng) {
        (0, 0) => return Ok(1.0),
        (0, _) | (_, 0) => return Ok(0.0),
        _ => {}
    }
    let (pd, gd) = (dilate(&pb, h, w, tol_radius), dilate(&gb, h, w, tol_radius));
    let hits = |a: &[bool], b: &[bool]| a.iter().zip(b).filter(|(&x, &y)| x && y).count();
    let precision = hits(&pb, &gd) as f64 / np as f64;
    let recall = hits(&gb, &pd) as f64 / ng as f64;
    Ok(if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    })
}

/// Label maps of one sequence, one per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelSequence {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub frames: Vec<Vec<u8>>,
}

impl LabelSequence {
    pub fn from_video(seq: &VideoSequence) -> Result<Self> {
        let (height, width) = seq.dims()?;
        let n = seq.masks.iter().map(Vec::len).min().unwrap_or(seq.len());
        Ok(Self {
            name: seq.name.clone(),
            height,
            width,
            frames: (0..n).map(|t| seq.label_map(t)).collect::<Result<_>>()?,
        })
    }

    /// Nonzero labels of the first frame, ascending.
    pub fn object_ids(&self) -> Vec<u8> {
        let mut ids: Vec<u8> = self
            .frames
            .first()
            .into_iter()
            .flatten()
            .copied()
            .filter(|&l| l > 0)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Every subdirectory of `root` as a sequence of label PNGs, in name order.
/// A DAVIS root (with an `Annotations` directory) reads its annotations.
pub fn read_label_sequences(root: &Path) -> Result<Vec<LabelSequence>> {
    let ann = root.join(ANNOTATIONS_DIR);
    let dir = if ann.is_dir() {
        ann
    } else {
        root.to_path_buf()
    };
    let mut names: Vec<String> = std::fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .filter_map(|p| p.file_name().and_then(|n| n.to_str()).map(str::to_owned))
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|name| {
            let maps = read_label_dir(&dir.join(&name))?;
            let (height, width) = maps.first().map(|m| (m.2, m.3)).ok_or_else(|| {
                Error::Data(format!("{}: no label maps", dir.join(&name).display()))
            })?;
            let mut frames = Vec::with_capacity(maps.len());
            for (path, labels, h, w) in maps {
                if (h, w) != (height, width) {
                    return Err(Error::Data(format!(
                        "{}: size {w}x{h} differs from {width}x{height}",
                        path.display()
                    )));
                }
                frames.push(labels);
            }
            Ok(LabelSequence {
                name,
                height,
                width,
                frames,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Scores {
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "JF")]
    pub jf: f64,
}

impl Scores {
    fn new(j: f64, f: f64) -> Self {
        Self {
            j,
            f,
            jf: (j + f) / 2.0,
        }
    }

    fn mean(items: &[Scores]) -> Self {
        let n = items.len().max(1) as f64;
        Self::new(
            items.iter().map(|s| s.j).sum::<f64>() / n,
            items.iter().map(|s| s.f).sum::<f64>() / n,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    /// Mean over all objects of all sequences.
    pub global: Scores,
    pub per_sequence: BTreeMap<String, Scores>,
    /// Keyed `"<sequence>/<object id>"`.
    pub per_object: BTreeMap<String, Scores>,
    /// Not part of the benchmark protocol: mean IoU between consecutive
    /// predicted masks of the same object.
    pub temporal_stability_nonprotocol: f64,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

struct SequenceScores {
    objects: Vec<(u8, Scores)>,
    stability_sum: f64,
    stability_n: usize,
}

fn score_sequence(
    p: &LabelSequence,
    g: &LabelSequence,
    first_frame_excluded: bool,
) -> Result<SequenceScores> {
    if (p.height, p.width) != (g.height, g.width) || p.frames.len() != g.frames.len() {
        return Err(Error::Data(format!(
            "sequence {}: prediction is {} frames of {}x{}, ground truth {} frames of {}x{}",
            g.name,
            p.frames.len(),
            p.width,
            p.height,
            g.frames.len(),
            g.width,
            g.height
        )));
    }
    let start = usize::from(first_frame_excluded);
    if g.frames.len() <= start {
        return Err(Error::Data(format!(
            "sequence {} has no frames to score",
            g.name
        )));
    }
    let tol = default_tolerance(g.height, g.width);
    let mut out = SequenceScores {
        objects: Vec::new(),
        stability_sum: 0.0,
        stability_n: 0,
    };
    for id in g.object_ids() {
        let masks = |s: &LabelSequence| -> Result<Vec<Mask>> {
            s.frames
                .iter()
                .map(|f| Mask::from_labels(f, id, s.height, s.width))
                .collect()
        };
        let (pm, gm) = (masks(p)?, masks(g)?);
        let (mut js, mut fs) = (0.0, 0.0);
        for t in start..gm.len() {
            js += jaccard(&pm[t], &gm[t])?;
            fs += boundary_f(&pm[t], &gm[t], tol)?;
        }
        for t in start.max(1)..pm.len() {
            out.stability_sum += jaccard(&pm[t], &pm[t - 1])?;
            out.stability_n += 1;
        }
        let n = (gm.len() - start) as f64;
        out.objects.push((id, Scores::new(js / n, fs / n)));
    }
    Ok(out)
}

/// J and F per object over frames `1..` (or `0..` when the first frame is
/// included), matched to ground truth by sequence name. Objects are the
/// labels present in the ground-truth first frame. Sequences are scored in
/// parallel.
pub fn evaluate(
    pred: &[LabelSequence],
    gt: &[LabelSequence],
    first_frame_excluded: bool,
) -> Result<EvalReport> {
    if pred.len() != gt.len() {
        return Err(Error::Data(format!(
            "{} predicted sequences for {} ground-truth sequences",
            pred.len(),
            gt.len()
        )));
    }
    let pairs = gt
        .iter()
        .map(|g| {
            pred.iter()
                .find(|p| p.name == g.name)
                .map(|p| (p, g))
                .ok_or_else(|| Error::Data(format!("no prediction for sequence {}", g.name)))
        })
        .collect::<Result<Vec<_>>>()?;
    let workers = thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(pairs.len())
        .max(1);
    let chunk = pairs.len().div_ceil(workers).max(1);
    let scored: Vec<Result<SequenceScores>> = thread::scope(|s| {
        let handles: Vec<_> = pairs
            .chunks(chunk)
            .map(|c| {
                s.spawn(move || {
                    c.iter()
                        .map(|(p, g)| score_sequence(p, g, first_frame_excluded))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    });
    let mut by_name = BTreeMap::new();
    for ((_, g), r) in pairs.iter().zip(scored) {
        if by_name.insert(g.name.clone(), r?).is_some() {
            return Err(Error::Data(format!("duplicate sequence name {}", g.name)));
        }
    }
    let mut per_sequence = BTreeMap::new();
    let mut per_object = BTreeMap::new();
    let mut all = Vec::new();
    let (mut stab_sum, mut stab_n) = (0.0, 0usize);
    for (name, r) in &by_name {
        for &(id, s) in &r.objects {
            per_object.insert(format!("{name}/{id}"), s);
            all.push(s);
        }
        let seq: Vec<Scores> = r.objects.iter().map(|o| o.1).collect();
        per_sequence.insert(name.clone(), Scores::mean(&seq));
        stab_sum += r.stability_sum;
        stab_n += r.stability_n;
    }
    Ok(EvalReport {
        global: Scores::mean(&all),
        per_sequence,
        per_object,
        temporal_stability_nonprotocol: if stab_n == 0 {
            1.0
        } else {
            stab_sum / stab_n as f64
        },
    })
}

/// Warped-mask accuracy over every `(t - 1, t)` object pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WarpScores {
    /// Mean J of the ground-truth previous mask warped by the flow.
    pub warped_j: f64,
    /// Mean J of the unwarped previous mask.
    pub copy_j: f64,
    pub pairs: usize,
}

/// Evaluate `flow_for(seq, object, t)` on every pair, measured against
/// ground truth masks.
pub fn warp_scores_with(
    dataset: &[VideoSequence],
    mut flow_for: impl FnMut(&VideoSequence, usize, usize) -> Result<FlowField<f32>>,
) -> Result<WarpScores> {
    let (mut warped, mut copy, mut pairs) = (0.0, 0.0, 0usize);
    for seq in dataset {
        if !seq.fully_annotated() {
            return Err(Error::Data(format!(
                "sequence {} is not fully annotated",
                seq.name
            )));
        }
        for (k, masks) in seq.masks.iter().enumerate() {
            for t in 1..seq.len() {
                let flow = flow_for(seq, k, t)?;
                let w = warp_array(&masks[t - 1], &flow)?;
                let target = Mask::from_array(&masks[t])?;
                warped += jaccard(&Mask::from_array(&w)?, &target)?;
                copy += jaccard(&Mask::from_array(&masks[t - 1])?, &target)?;
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        return Err(Error::Data("no frame pairs to score".into()));
    }
    Ok(WarpScores {
        warped_j: warped / pairs as f64,
        copy_j: copy / pairs as f64,
        pairs,
    })
}

pub fn warp_scores(flownet: &FlowNet<f32>, dataset: &[VideoSequence]) -> Result<WarpScores> {
    warp_scores_with(dataset, |seq, k, t| {
        flownet.predict(&seq.frames[t - 1], &seq.frames[t], &seq.masks[k][t - 1])
    })
}
