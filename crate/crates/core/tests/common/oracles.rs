//! Brute-force reference implementations shared by the property tests and
//! the acceptance runner.
#![allow(dead_code)]

use fgwarp::eval::Mask;
use fgwarp::Array;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn image(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Array<f64> {
    Array::new(
        [c, h, w],
        (0..c * h * w)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap()
}

pub fn unit_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Array<f64> {
    Array::new([1, h, w], (0..h * w).map(|_| rng.random::<f64>()).collect()).unwrap()
}

pub fn binary_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Array<f64> {
    Array::new(
        [1, h, w],
        (0..h * w)
            .map(|_| f64::from(u8::from(rng.random_bool(0.5))))
            .collect(),
    )
    .unwrap()
}

/// `out(y, x) = src(y + dy, x + dx)`, zero outside.
pub fn shift_oracle(src: &Array<f64>, dx: isize, dy: isize) -> Array<f64> {
    let (c, h, w) = src.chw().unwrap();
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h as isize {
            for x in 0..w as isize {
                let (sy, sx) = (y + dy, x + dx);
                if sy >= 0 && sx >= 0 && sy < h as isize && sx < w as isize {
                    out[ch * h * w + (y as usize) * w + x as usize] =
                        src.data()[ch * h * w + sy as usize * w + sx as usize];
                }
            }
        }
    }
    Array::new([c, h, w], out).unwrap()
}

pub fn random_mask(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Mask {
    let density = rng.random_range(0.0..1.0);
    Mask::new(h, w, (0..h * w).map(|_| rng.random_bool(density)).collect()).unwrap()
}

pub fn jaccard_oracle(a: &Mask, b: &Mask) -> f64 {
    let inter = (0..a.data.len())
        .filter(|&i| a.data[i] && b.data[i])
        .count();
    let union = (0..a.data.len())
        .filter(|&i| a.data[i] || b.data[i])
        .count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Boundary pixels: foreground with a 4-neighbour that is background or off-image.
pub fn boundary_oracle(m: &Mask) -> Vec<(i64, i64)> {
    let (h, w) = (m.height as i64, m.width as i64);
    let fg = |y: i64, x: i64| y >= 0 && x >= 0 && y < h && x < w && m.data[(y * w + x) as usize];
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if fg(y, x)
                && [(-1, 0), (1, 0), (0, -1), (0, 1)]
                    .iter()
                    .any(|&(dy, dx)| !fg(y + dy, x + dx))
            {
                out.push((y, x));
            }
        }
    }
    out
}

pub fn boundary_f_oracle(a: &Mask, b: &Mask, tol: f64) -> f64 {
    let (pa, pb) = (boundary_oracle(a), boundary_oracle(b));
    if pa.is_empty() && pb.is_empty() {
        return 1.0;
    }
    if pa.is_empty() || pb.is_empty() {
        return 0.0;
    }
    let matched = |from: &[(i64, i64)], to: &[(i64, i64)]| {
        from.iter()
            .filter(|&&(y, x)| {
                to.iter()
                    .map(|&(v, u)| (((y - v).pow(2) + (x - u).pow(2)) as f64).sqrt())
                    .fold(f64::INFINITY, f64::min)
                    <= tol
            })
            .count() as f64
            / from.len() as f64
    };
    let (p, r) = (matched(&pa, &pb), matched(&pb, &pa));
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}
