//! DAVIS on-disk convention:
//!
//! ```text
//! root/JPEGImages/<seq>/00000.jpg|png ...
//! root/Annotations/<seq>/00000.png ...   palette-indexed, index k > 0 = object k
//! ```

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::synthetic::motion_records;
use super::VideoSequence;
use crate::diffarray::Array;
use crate::error::{Error, Result};

pub const IMAGES_DIR: &str = "JPEGImages";
pub const ANNOTATIONS_DIR: &str = "Annotations";
/// Sidecar with one line per (frame, object) transition.
pub const MOTION_FILE: &str = "motion.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReadMode {
    /// Every frame must have an annotation.
    Full,
    /// Only the first frame's annotation is read (semi-supervised inference).
    FirstFrameOnly,
}

/// The standard 256-entry VOC/DAVIS color map.
pub fn davis_palette() -> Vec<u8> {
    let mut palette = Vec::with_capacity(256 * 3);
    for i in 0..256u32 {
        let (mut r, mut g, mut b) = (0u8, 0u8, 0u8);
        let mut c = i;
        for j in 0..8 {
            r |= ((c & 1) as u8) << (7 - j);
            g |= (((c >> 1) & 1) as u8) << (7 - j);
            b |= (((c >> 2) & 1) as u8) << (7 - j);
            c >>= 3;
        }
        palette.extend_from_slice(&[r, g, b]);
    }
    palette
}

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Palette indices (or 8-bit gray levels) of a label PNG, with its size.
pub fn read_label_png(path: &Path) -> Result<(Vec<u8>, usize, usize)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| image_err(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| image_err(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| image_err(path, e))?;
    if info.bit_depth != png::BitDepth::Eight
        || !matches!(
            info.color_type,
            png::ColorType::Indexed | png::ColorType::Grayscale
        )
    {
        return Err(image_err(
            path,
            format!(
                "label images must be 8-bit indexed or grayscale, got {:?} {:?}",
                info.color_type, info.bit_depth
            ),
        ));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    buf.truncate(info.buffer_size());
    if buf.len() != w * h {
        return Err(image_err(path, "unexpected row padding in label image"));
    }
    Ok((buf, h, w))
}

pub fn write_label_png(path: &Path, labels: &[u8], height: usize, width: usize) -> Result<()> {
    if labels.len() != height * width {
        return Err(Error::invalid(format!(
            "label map has {} pixels, expected {height}x{width}",
            labels.len()
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(png::ColorType::Indexed);
    encoder.set_depth(png::BitDepth::Eight);
    encoder.set_palette(davis_palette());
    let mut writer = encoder.write_header().map_err(|e| image_err(path, e))?;
    writer
        .write_image_data(labels)
        .map_err(|e| image_err(path, e))?;
    writer.finish().map_err(|e| image_err(path, e))
}

fn read_frame(path: &Path) -> Result<Array<f32>> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let plane = w * h;
    let mut data = vec![0f32; 3 * plane];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = f32::from(px[c]) / 255.0;
        }
    }
    Array::new([3, h, w], data)
}

/// 8-bit PNG or JPEG (by extension) of a `[3, H, W]` or `[1, H, W]` image in `[0, 1]`.
pub fn write_image(path: &Path, image: &Array<f32>) -> Result<()> {
    let (c, h, w) = image.chw()?;
    if c != 1 && c != 3 {
        return Err(Error::invalid(format!(
            "write_image: expected 1 or 3 channels, got {c}"
        )));
    }
    let plane = h * w;
    let d = image.data();
    let img = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        image::Rgb([0, 1, 2].map(|k| {
            let ch = if c == 1 { 0 } else { k };
            (d[ch * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8
        }))
    });
    img.save(path).map_err(|e| image_err(path, e))
}

fn sorted_entries(dir: &Path, keep: impl Fn(&Path) -> bool) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| keep(p))
        .collect();
    out.sort();
    Ok(out)
}

fn has_ext(p: &Path, exts: &[&str]) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| exts.iter().any(|x| e.eq_ignore_ascii_case(x)))
}

/// A label PNG with its path, labels, height and width.
pub type LabelFile = (PathBuf, Vec<u8>, usize, usize);

/// Sorted `*.png` label maps in a directory.
pub fn read_label_dir(dir: &Path) -> Result<Vec<LabelFile>> {
    sorted_entries(dir, |p| p.is_file() && has_ext(p, &["png"]))?
        .into_iter()
        .map(|p| {
            let (labels, h, w) = read_label_png(&p)?;
            Ok((p, labels, h, w))
        })
        .collect()
}

fn read_sequence(root: &Path, name: &str, mode: ReadMode) -> Result<VideoSequence> {
    let frame_dir = root.join(IMAGES_DIR).join(name);
    let ann_dir = root.join(ANNOTATIONS_DIR).join(name);
    let frame_paths = sorted_entries(&frame_dir, |p| {
        p.is_file() && has_ext(p, &["jpg", "jpeg", "png"])
    })?;
    if frame_paths.is_empty() {
        return Err(Error::Data(format!("{}: no frames", frame_dir.display())));
    }
    let frames = frame_paths
        .iter()
        .map(|p| read_frame(p))
        .collect::<Result<Vec<_>>>()?;
    let (_, h, w) = frames[0].chw()?;
    for (p, f) in frame_paths.iter().zip(&frames) {
        if f.chw()? != (3, h, w) {
            return Err(Error::Data(format!(
                "{}: frame size differs from first frame {w}x{h}",
                p.display()
            )));
        }
    }

    let ann_dir_exists = ann_dir.is_dir();
    let labels = if ann_dir_exists {
        read_label_dir(&ann_dir)?
    } else {
        Vec::new()
    };
    if labels.is_empty() {
        return Err(Error::Data(format!(
            "{}: missing annotation for frame 0",
            ann_dir.display()
        )));
    }
    let first_stem = |p: &Path| p.file_stem().map(|s| s.to_os_string());
    if first_stem(&labels[0].0) != first_stem(&frame_paths[0]) {
        return Err(Error::Data(format!(
            "{}: missing annotation for frame 0 ({})",
            ann_dir.display(),
            frame_paths[0].display()
        )));
    }
    let labels = match mode {
        ReadMode::FirstFrameOnly => labels.into_iter().take(1).collect::<Vec<_>>(),
        ReadMode::Full => {
            if labels.len() != frames.len() {
                return Err(Error::Data(format!(
                    "{}: {} annotations for {} frames",
                    ann_dir.display(),
                    labels.len(),
                    frames.len()
                )));
            }
            labels
        }
    };
    for (p, _, lh, lw) in &labels {
        if (*lh, *lw) != (h, w) {
            return Err(Error::Data(format!(
                "{}: annotation is {lw}x{lh}, frames are {w}x{h}",
                p.display()
            )));
        }
    }
    let mut object_ids: Vec<u8> = labels[0].1.iter().copied().filter(|&l| l > 0).collect();
    object_ids.sort_unstable();
    object_ids.dedup();
    let maps: Vec<Vec<u8>> = labels.into_iter().map(|(_, l, _, _)| l).collect();
    let masks = VideoSequence::masks_from_labels(&maps, &object_ids, h, w)?;
    Ok(VideoSequence {
        name: name.to_owned(),
        frames,
        object_ids,
        masks,
        tracks: None,
    })
}

/// Every sequence under `root/JPEGImages`, in name order.
pub fn read_davis_layout(root: &Path, mode: ReadMode) -> Result<Vec<VideoSequence>> {
    let images = root.join(IMAGES_DIR);
    if !images.is_dir() {
        return Err(Error::Data(format!(
            "{}: not a directory",
            images.display()
        )));
    }
    sorted_entries(&images, |p| p.is_dir())?
        .iter()
        .filter_map(|p| p.file_name().and_then(|n| n.to_str()).map(str::to_owned))
        .map(|name| read_sequence(root, &name, mode))
        .collect()
}

/// One palette PNG per frame under `root/<sequence_name>/NNNNN.png`.
pub fn write_masks(
    root: &Path,
    sequence_name: &str,
    label_maps: &[Vec<u8>],
    height: usize,
    width: usize,
) -> Result<Vec<PathBuf>> {
    let dir = root.join(sequence_name);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    label_maps
        .iter()
        .enumerate()
        .map(|(t, labels)| {
            let path = dir.join(format!("{t:05}.png"));
            write_label_png(&path, labels, height, width)?;
            Ok(path)
        })
        .collect()
}

/// Materialize sequences in the DAVIS layout, plus the motion sidecar when
/// ground-truth motion is known.
pub fn write_sequences(root: &Path, sequences: &[VideoSequence]) -> Result<()> {
    let mut motion = String::from("# sequence t object dx_px dy_px dtheta dscale\n");
    let mut any_motion = false;
    for seq in sequences {
        let (h, w) = seq.dims()?;
        let dir = root.join(IMAGES_DIR).join(&seq.name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (t, f) in seq.frames.iter().enumerate() {
            write_image(&dir.join(format!("{t:05}.png")), f)?;
        }
        let n_ann = seq.masks.iter().map(Vec::len).min().unwrap_or(0);
        let maps = (0..n_ann)
            .map(|t| seq.label_map(t))
            .collect::<Result<Vec<_>>>()?;
        write_masks(&root.join(ANNOTATIONS_DIR), &seq.name, &maps, h, w)?;
        for r in motion_records(seq) {
            any_motion = true;
            motion.push_str(&format!(
                "{} {} {} {:.6} {:.6} {:.6} {:.6}\n",
                r.sequence, r.t, r.object, r.dx_px, r.dy_px, r.dtheta, r.dscale
            ));
        }
    }
    if any_motion {
        let path = root.join(MOTION_FILE);
        let mut f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(motion.as_bytes())
            .map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
