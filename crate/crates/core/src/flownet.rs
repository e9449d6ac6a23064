//! Hourglass flow regressor: `(prev frame, target frame, prev mask)` to a
//! tanh-bounded normalized flow field.
//!
//! ```text
//! input [7, H, W] = prev RGB | target RGB | prev mask
//! enc_l  : conv3x3/2 -> lrelu -> conv3x3 -> lrelu            l = 0..levels
//! dec_l  : up x2 -> concat(skip_l) -> conv3x3 -> lrelu -> conv3x3 -> lrelu
//! head   : conv1x1 -> 2 channels -> tanh
//! ```
//!
//! The skip of the outermost decoder level is the raw input. The head
//! starts at zero, so a fresh network predicts the zero flow.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffarray::{Array, Bound, DiffArray, ParamSet, Real, Tape};
use crate::error::{Error, Result};
use crate::nn::{add_conv, add_zero_conv, check_divisible, check_same_dims, conv, conv_act};
use crate::warp::FlowField;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlowNetConfig {
    pub levels: usize,
    pub base_channels: usize,
    pub input_channels: usize,
}

impl Default for FlowNetConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            base_channels: 16,
            input_channels: 7,
        }
    }
}

impl FlowNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.base_channels == 0 {
            return Err(Error::Config(
                "flownet levels and base_channels must be >= 1".into(),
            ));
        }
        if self.input_channels != 7 {
            return Err(Error::Config(format!(
                "flownet input_channels must be 7 (two RGB frames + mask), got {}",
                self.input_channels
            )));
        }
        Ok(())
    }

    fn width(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

/// Fully convolutional flow module.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowNet<T = f32> {
    pub config: FlowNetConfig,
    pub params: ParamSet<T>,
}

impl<T: Real> FlowNet<T> {
    pub fn init(config: FlowNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut c_prev = config.input_channels;
        for l in 0..config.levels {
            let c = config.width(l);
            add_conv(&mut params, &mut rng, &format!("enc{l}.down"), c_prev, c, 3)?;
            add_conv(&mut params, &mut rng, &format!("enc{l}.conv"), c, c, 3)?;
            c_prev = c;
        }
        for l in (0..config.levels).rev() {
            let skip = if l == 0 {
                config.input_channels
            } else {
                config.width(l - 1)
            };
            let out = if l == 0 {
                config.base_channels
            } else {
                config.width(l - 1)
            };
            add_conv(
                &mut params,
                &mut rng,
                &format!("dec{l}.conv1"),
                c_prev + skip,
                out,
                3,
            )?;
            add_conv(&mut params, &mut rng, &format!("dec{l}.conv2"), out, out, 3)?;
            c_prev = out;
        }
        add_zero_conv(&mut params, "head", c_prev, 2, 1)?;
        Ok(Self { config, params })
    }

    /// Wrap loaded parameters, checking they match the architecture.
    pub fn from_params(config: FlowNetConfig, params: ParamSet<T>) -> Result<Self> {
        let reference = Self::init(config, 0)?;
        check_layout(&reference.params, &params)?;
        Ok(Self { config, params })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn cast<U: Real>(&self) -> FlowNet<U> {
        FlowNet {
            config: self.config,
            params: self.params.cast(),
        }
    }

    /// Differentiable forward; `p` must be `self.params` bound on the tape
    /// of the inputs. Returns `[2, H, W]` with values in `[-1, 1]`.
    pub fn forward<'t>(
        &self,
        p: &Bound<'t, T>,
        prev_frame: DiffArray<'t, T>,
        target_frame: DiffArray<'t, T>,
        prev_mask: DiffArray<'t, T>,
    ) -> Result<DiffArray<'t, T>> {
        let (h, w) = check_same_dims(
            "flow_forward",
            &[prev_frame.shape(), target_frame.shape(), prev_mask.shape()],
        )?;
        check_divisible(h, w, self.config.levels)?;
        let input = prev_frame
            .concat_channels(target_frame)?
            .concat_channels(prev_mask)?;
        if input.shape()[0] != self.config.input_channels {
            return Err(Error::shape(
                "flow_forward",
                &input.shape(),
                &[self.config.input_channels, h, w],
            ));
        }
        let mut skips = vec![input];
        let mut x = input;
        for l in 0..self.config.levels {
            x = conv_act(p, &format!("enc{l}.down"), x, 2)?;
            x = conv_act(p, &format!("enc{l}.conv"), x, 1)?;
            skips.push(x);
        }
        for l in (0..self.config.levels).rev() {
            x = x.upsample2x()?.concat_channels(skips[l])?;
            x = conv_act(p, &format!("dec{l}.conv1"), x, 1)?;
            x = conv_act(p, &format!("dec{l}.conv2"), x, 1)?;
        }
        Ok(conv(p, "head", x, 1)?.tanh())
    }

    /// Inference without recording gradients.
    pub fn predict(
        &self,
        prev_frame: &Array<T>,
        target_frame: &Array<T>,
        prev_mask: &Array<T>,
    ) -> Result<FlowField<T>> {
        let tape = Tape::no_grad();
        let p = self.params.bind(&tape, false);
        let flow = self.forward(
            &p,
            tape.constant(prev_frame.clone()),
            tape.constant(target_frame.clone()),
            tape.constant(prev_mask.clone()),
        )?;
        FlowField::new(flow.to_array())
    }
}

pub(crate) fn check_layout<T: Real>(reference: &ParamSet<T>, loaded: &ParamSet<T>) -> Result<()> {
    if reference.len() != loaded.len() {
        return Err(Error::Data(format!(
            "checkpoint has {} parameter arrays, architecture expects {}",
            loaded.len(),
            reference.len()
        )));
    }
    for (name, array) in reference.iter() {
        let got = loaded
            .get(name)
            .map_err(|_| Error::Data(format!("checkpoint is missing parameter {name}")))?;
        if got.shape() != array.shape() {
            return Err(Error::Data(format!(
                "parameter {name}: checkpoint shape {:?}, architecture expects {:?}",
                got.shape(),
                array.shape()
            )));
        }
    }
    Ok(())
}
