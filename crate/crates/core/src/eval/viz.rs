use std::f64::consts::PI;

use crate::diffarray::Array;
use crate::error::{Error, Result};
use crate::warp::FlowField;

// Middlebury color wheel segment lengths: red-yellow, yellow-green,
// green-cyan, cyan-blue, blue-magenta, magenta-red.
const SEGMENTS: [usize; 6] = [15, 6, 4, 11, 13, 6];
pub const WHEEL_SIZE: usize = 55;

fn wheel() -> [[f64; 3]; WHEEL_SIZE] {
    let mut out = [[0.0; 3]; WHEEL_SIZE];
    let mut k = 0;
    for (seg, &n) in SEGMENTS.iter().enumerate() {
        for i in 0..n {
            let ramp = i as f64 / n as f64;
            // Each segment raises one channel or lowers another, cyclically.
            let (rise, fall, full) = match seg {
                0 => (Some(1), None, 0),
                1 => (None, Some(0), 1),
                2 => (Some(2), None, 1),
                3 => (None, Some(1), 2),
                4 => (Some(0), None, 2),
                _ => (None, Some(2), 0),
            };
            let mut c = [0.0; 3];
            c[full] = 1.0;
            if let Some(r) = rise {
                c[r] = ramp;
            }
            if let Some(f) = fall {
                c[f] = 1.0 - ramp;
            }
            out[k] = c;
            k += 1;
        }
    }
    out
}

/// Fully saturated wheel color at `turns` of a revolution (0 = +x).
pub fn wheel_color(turns: f64) -> [f64; 3] {
    let w = wheel();
    let pos = turns.rem_euclid(1.0) * WHEEL_SIZE as f64;
    let k0 = (pos.floor() as usize) % WHEEL_SIZE;
    let k1 = (k0 + 1) % WHEEL_SIZE;
    let f = pos - pos.floor();
    [0, 1, 2].map(|c| (1.0 - f) * w[k0][c] + f * w[k1][c])
}

/// `[3, H, W]` in `[0, 1]`: hue from direction, saturation from magnitude
/// relative to the field maximum, white where the flow is zero.
pub fn flow_colorize(flow: &FlowField<f32>) -> Result<Array<f32>> {
    let px = flow.to_pixels();
    if !px.is_finite() {
        return Err(Error::NonFinite("flow_colorize input".into()));
    }
    let (h, w) = flow.dims();
    let plane = h * w;
    let d = px.data();
    let mag = |i: usize| f64::from(d[i]).hypot(f64::from(d[plane + i]));
    let max = (0..plane).map(mag).fold(0.0, f64::max);
    let mut out = vec![1f32; 3 * plane];
    if max > 0.0 {
        for i in 0..plane {
            let sat = mag(i) / max;
            if sat == 0.0 {
                continue;
            }
            let angle = f64::from(d[plane + i]).atan2(f64::from(d[i]));
            let col = wheel_color(angle / (2.0 * PI));
            for c in 0..3 {
                out[c * plane + i] = (1.0 - sat * (1.0 - col[c])) as f32;
            }
        }
    }
    Array::new([3, h, w], out)
}

fn binary(a: &Array<f32>, op: &'static str) -> Result<()> {
    if a.chw()?.0 != 1 {
        return Err(Error::shape(op, a.shape(), &[1]));
    }
    Ok(())
}

/// Grayscale `[1, H, W]`: the previous mask at 0.3, brightened to 1.0 where
/// it is no longer covered by the warped mask.
pub fn warp_diff(prev_mask: &Array<f32>, warped_mask: &Array<f32>) -> Result<Array<f32>> {
    binary(prev_mask, "warp_diff")?;
    if prev_mask.shape() != warped_mask.shape() {
        return Err(Error::shape(
            "warp_diff",
            prev_mask.shape(),
            warped_mask.shape(),
        ));
    }
    Ok(prev_mask.zip_map(warped_mask, |p, w| {
        let (p, w) = (p > 0.5, w > 0.5);
        if p && !w {
            1.0
        } else if p {
            0.3
        } else {
            0.0
        }
    }))
}

pub fn masked_warped_frame(
    warped_frame: &Array<f32>,
    warped_mask: &Array<f32>,
) -> Result<Array<f32>> {
    binary(warped_mask, "masked_warped_frame")?;
    let (_, h, w) = warped_frame.chw()?;
    let (_, mh, mw) = warped_mask.chw()?;
    if (h, w) != (mh, mw) {
        return Err(Error::shape(
            "masked_warped_frame",
            warped_frame.shape(),
            warped_mask.shape(),
        ));
    }
    let plane = h * w;
    let m = warped_mask.data();
    let data = warped_frame
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| v * m[i % plane])
        .collect();
    Array::new(warped_frame.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wheel_matches_reference_anchors() {
        let w = wheel();
        assert_eq!(w[0], [1.0, 0.0, 0.0]);
        assert_eq!(w[15], [1.0, 1.0, 0.0]);
        assert_eq!(w[21], [0.0, 1.0, 0.0]);
        assert_eq!(w[25], [0.0, 1.0, 1.0]);
        assert_eq!(w[36], [0.0, 0.0, 1.0]);
        assert_eq!(w[49], [1.0, 0.0, 1.0]);
    }

    #[test]
    fn zero_and_uniform_fields() {
        let white = flow_colorize(&FlowField::zeros(3, 4)).unwrap();
        assert!(white.data().iter().all(|&v| v == 1.0));
        let right = flow_colorize(&FlowField::uniform(3, 4, 0.1, 0.0)).unwrap();
        for i in 0..12 {
            assert_eq!(
                [right.data()[i], right.data()[12 + i], right.data()[24 + i]],
                [1.0, 0.0, 0.0]
            );
        }
    }

    #[test]
    fn warp_diff_and_masking() {
        let prev = Array::from_f64([1, 1, 4], &[0., 1., 1., 0.]).unwrap();
        let warped = Array::from_f64([1, 1, 4], &[0., 0., 1., 1.]).unwrap();
        assert_eq!(
            warp_diff(&prev, &warped).unwrap().data(),
            &[0.0, 1.0, 0.3, 0.0]
        );
        assert_eq!(
            warp_diff(&prev, &prev).unwrap().data(),
            &[0.0, 0.3, 0.3, 0.0]
        );
        let frame = Array::from_f64([3, 1, 4], &[0.5; 12]).unwrap();
        let masked = masked_warped_frame(&frame, &warped).unwrap();
        assert_eq!(&masked.data()[4..8], &[0.0, 0.0, 0.5, 0.5]);
        assert!(masked_warped_frame(&frame, &Array::zeros([1, 1, 3])).is_err());
    }
}
