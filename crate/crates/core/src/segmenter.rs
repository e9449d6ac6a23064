//! Toy propagation segmenter.
//!
//! A small U-Net over `(target frame, previous mask)`. The warped previous
//! mask joins exactly once: it is concatenated to the feature map entering
//! the last decoder block, which produces the mask logits.
//!
//! ```text
//! enc_l  : conv3x3/2 -> lrelu -> conv3x3 -> lrelu  l = 1..=levels
//! dec_l  : up x2 -> concat(skip) -> conv3x3 -> lrelu
//! last   : [concat(warped)] -> conv3x3 -> lrelu -> conv1x1 -> sigmoid
//! ```
//!
//!
//! The full-resolution skip is the raw `[4, H, W]` input.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffarray::{Array, Bound, DiffArray, ParamSet, Real, Tape};
use crate::error::{Error, Result};
use crate::flownet::check_layout;
use crate::nn::{add_conv, check_divisible, check_same_dims, conv, conv_act};

/// Logits are clamped to this magnitude so probabilities stay strictly
/// inside (0, 1) in `f32`.
const LOGIT_BOUND: f64 = 15.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SegNetConfig {
    pub levels: usize,
    pub base_channels: usize,
    pub input_channels: usize,
    /// Ablation switch: without it the last block sees no warped mask.
    pub use_warped_mask: bool,
}

impl Default for SegNetConfig {
    fn default() -> Self {
        Self {
            levels: 2,
            base_channels: 16,
            input_channels: 4,
            use_warped_mask: true,
        }
    }
}

impl SegNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.base_channels == 0 {
            return Err(Error::Config(
                "segnet levels and base_channels must be >= 1".into(),
            ));
        }
        if self.input_channels != 4 {
            return Err(Error::Config(format!(
                "segnet input_channels must be 4 (RGB + previous mask), got {}",
                self.input_channels
            )));
        }
        Ok(())
    }

    fn width(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegNet<T = f32> {
    pub config: SegNetConfig,
    pub params: ParamSet<T>,
}

impl<T: Real> SegNet<T> {
    pub fn init(config: SegNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let base = config.base_channels;
        let skip_width = |l: usize| {
            if l == 0 {
                config.input_channels
            } else {
                config.width(l - 1)
            }
        };
        for l in 1..=config.levels {
            let c = config.width(l - 1);
            add_conv(
                &mut params,
                &mut rng,
                &format!("enc{l}.down"),
                skip_width(l - 1),
                c,
                3,
            )?;
            add_conv(&mut params, &mut rng, &format!("enc{l}.conv"), c, c, 3)?;
        }
        for l in (1..=config.levels).rev() {
            let c_in = config.width(l - 1) + skip_width(l - 1);
            let out = config.width(l.saturating_sub(2));
            add_conv(&mut params, &mut rng, &format!("dec{l}.conv"), c_in, out, 3)?;
        }
        let last_in = base + usize::from(config.use_warped_mask);
        add_conv(&mut params, &mut rng, "last.conv", last_in, base, 3)?;
        add_conv(&mut params, &mut rng, "last.out", base, 1, 1)?;
        Ok(Self { config, params })
    }

    pub fn from_params(config: SegNetConfig, params: ParamSet<T>) -> Result<Self> {
        let reference = Self::init(config, 0)?;
        check_layout(&reference.params, &params)?;
        Ok(Self { config, params })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn cast<U: Real>(&self) -> SegNet<U> {
        SegNet {
            config: self.config,
            params: self.params.cast(),
        }
    }

    /// Foreground probabilities `[1, H, W]`. `warped_prev_mask` is required
    /// exactly when the config uses it.
    pub fn forward<'t>(
        &self,
        p: &Bound<'t, T>,
        target_frame: DiffArray<'t, T>,
        prev_mask: DiffArray<'t, T>,
        warped_prev_mask: Option<DiffArray<'t, T>>,
    ) -> Result<DiffArray<'t, T>> {
        let mut shapes = vec![target_frame.shape(), prev_mask.shape()];
        if let Some(w) = &warped_prev_mask {
            shapes.push(w.shape());
        }
        let (h, w) = check_same_dims("seg_forward", &shapes)?;
        check_divisible(h, w, self.config.levels)?;
        if warped_prev_mask.is_some() != self.config.use_warped_mask {
            return Err(Error::invalid(if self.config.use_warped_mask {
                "segmenter expects a warped previous mask"
            } else {
                "segmenter was built without the warped-mask input"
            }));
        }
        let input = target_frame.concat_channels(prev_mask)?;
        if input.shape()[0] != self.config.input_channels {
            return Err(Error::shape(
                "seg_forward",
                &input.shape(),
                &[self.config.input_channels, h, w],
            ));
        }
        let mut x = input;
        let mut skips = vec![x];
        for l in 1..=self.config.levels {
            x = conv_act(p, &format!("enc{l}.down"), x, 2)?;
            x = conv_act(p, &format!("enc{l}.conv"), x, 1)?;
            skips.push(x);
        }
        for l in (1..=self.config.levels).rev() {
            x = x.upsample2x()?.concat_channels(skips[l - 1])?;
            x = conv_act(p, &format!("dec{l}.conv"), x, 1)?;
        }
        if let Some(warped) = warped_prev_mask {
            x = x.concat_channels(warped)?;
        }
        x = conv_act(p, "last.conv", x, 1)?;
        let tape = x.tape();
        let logits = conv(p, "last.out", x, 1)?
            .maximum(tape.scalar(T::lit(-LOGIT_BOUND)))?
            .minimum(tape.scalar(T::lit(LOGIT_BOUND)))?;
        Ok(logits.sigmoid())
    }

    pub fn predict(
        &self,
        target_frame: &Array<T>,
        prev_mask: &Array<T>,
        warped_prev_mask: Option<&Array<T>>,
    ) -> Result<Array<T>> {
        let tape = Tape::no_grad();
        let p = self.params.bind(&tape, false);
        let out = self.forward(
            &p,
            tape.constant(target_frame.clone()),
            tape.constant(prev_mask.clone()),
            warped_prev_mask.map(|m| tape.constant(m.clone())),
        )?;
        Ok(out.to_array())
    }
}

/// Label map from per-object probabilities: the argmax object (1-based)
/// where its probability exceeds 0.5, background 0 elsewhere. Ties go to
/// the lowest object index.
pub fn merge_objects<T: Real>(object_probs: &[Array<T>]) -> Result<Vec<u8>> {
    let first = object_probs.first().ok_or(Error::Empty("merge_objects"))?;
    if object_probs.len() > u8::MAX as usize {
        return Err(Error::invalid("at most 255 objects can be merged"));
    }
    for p in &object_probs[1..] {
        if p.shape() != first.shape() {
            return Err(Error::shape("merge_objects", first.shape(), p.shape()));
        }
    }
    let half = T::lit(0.5);
    Ok((0..first.numel())
        .map(|i| {
            let mut best = 0u8;
            let mut best_p = half;
            for (k, probs) in object_probs.iter().enumerate() {
                let v = probs.data()[i];
                if v > best_p {
                    best = (k + 1) as u8;
                    best_p = v;
                }
            }
            best
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(n: usize) -> (Array<f32>, Array<f32>) {
        let frame = Array::new(
            [3, n, n],
            (0..3 * n * n)
                .map(|i| ((i as f32 * 0.13).cos() + 1.0) / 2.0)
                .collect(),
        )
        .unwrap();
        let mask = Array::new(
            [1, n, n],
            (0..n * n).map(|i| (i % 3 == 0) as u8 as f32).collect(),
        )
        .unwrap();
        (frame, mask)
    }

    #[test]
    fn output_is_a_probability_map() {
        let net = SegNet::<f32>::init(SegNetConfig::default(), 0).unwrap();
        let (f, m) = inputs(64);
        let out = net.predict(&f, &m, Some(&m)).unwrap();
        assert_eq!(out.shape(), &[1, 64, 64]);
        assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(net.predict(&f, &m, Some(&m)).unwrap(), out);
    }

    #[test]
    fn ablation_changes_only_the_last_block() {
        let with = SegNet::<f32>::init(SegNetConfig::default(), 0).unwrap();
        let without = SegNet::<f32>::init(
            SegNetConfig {
                use_warped_mask: false,
                ..Default::default()
            },
            0,
        )
        .unwrap();
        let mut differing = Vec::new();
        for (name, a) in with.params.iter() {
            if without.params.get(name).unwrap().shape() != a.shape() {
                differing.push(name.to_owned());
            }
        }
        assert_eq!(differing, vec!["last.conv.weight".to_owned()]);
        let (f, m) = inputs(16);
        assert!(without.predict(&f, &m, None).is_ok());
        assert!(without.predict(&f, &m, Some(&m)).is_err());
        assert!(with.predict(&f, &m, None).is_err());
    }

    #[test]
    fn merge_cases() {
        let p = |v: &[f64]| Array::<f32>::from_f64([1, 1, v.len()], v).unwrap();
        assert_eq!(merge_objects(&[p(&[0.9, 0.9])]).unwrap(), vec![1, 1]);
        assert_eq!(merge_objects(&[p(&[0.6]), p(&[0.8])]).unwrap(), vec![2]);
        assert_eq!(
            merge_objects(&[p(&[0.5, 0.1]), p(&[0.2, 0.5])]).unwrap(),
            vec![0, 0]
        );
        assert_eq!(merge_objects(&[p(&[0.7]), p(&[0.7])]).unwrap(), vec![1]);
        assert!(merge_objects::<f32>(&[]).is_err());
        assert!(merge_objects(&[p(&[0.7]), p(&[0.7, 0.1])]).is_err());
    }
}
