//! Elementwise arithmetic, activations, reductions and channel plumbing.

use super::array::{Array, Real};
use super::tape::{BinaryKind, DiffArray, Op, UnaryKind};
use crate::error::{Error, Result};

/// Lower clamp applied inside `log`.
pub const LOG_EPSILON: f64 = 1e-7;

fn binary_forward<T: Real>(kind: BinaryKind, a: &Array<T>, b: &Array<T>) -> Result<Array<T>> {
    let f = |x: T, y: T| match kind {
        BinaryKind::Add => x + y,
        BinaryKind::Sub => x - y,
        BinaryKind::Mul => x * y,
        BinaryKind::Div => x / y,
        // ties select the first operand; NaN propagates
        BinaryKind::Min => {
            if x <= y || x.is_nan() {
                x
            } else {
                y
            }
        }
        BinaryKind::Max => {
            if x >= y || x.is_nan() {
                x
            } else {
                y
            }
        }
    };
    if a.shape() == b.shape() {
        Ok(a.zip_map(b, f))
    } else if b.numel() == 1 {
        let y = b.data()[0];
        Ok(a.map(|x| f(x, y)))
    } else if a.numel() == 1 {
        let x = a.data()[0];
        Ok(b.map(|y| f(x, y)))
    } else {
        Err(Error::shape(kind_name(kind), a.shape(), b.shape()))
    }
}

fn kind_name(kind: BinaryKind) -> &'static str {
    match kind {
        BinaryKind::Add => "add",
        BinaryKind::Sub => "sub",
        BinaryKind::Mul => "mul",
        BinaryKind::Div => "div",
        BinaryKind::Min => "min",
        BinaryKind::Max => "max",
    }
}

/// Partial derivatives `(d/da, d/db)` of `kind` at `(x, y)`.
fn binary_partials<T: Real>(kind: BinaryKind, x: T, y: T) -> (T, T) {
    let (zero, one) = (T::zero(), T::one());
    match kind {
        BinaryKind::Add => (one, one),
        BinaryKind::Sub => (one, -one),
        BinaryKind::Mul => (y, x),
        BinaryKind::Div => (one / y, -x / (y * y)),
        BinaryKind::Min => {
            if x <= y {
                (one, zero)
            } else {
                (zero, one)
            }
        }
        BinaryKind::Max => {
            if x >= y {
                (one, zero)
            } else {
                (zero, one)
            }
        }
    }
}

pub(crate) fn binary_backward<T: Real>(
    kind: BinaryKind,
    a: &Array<T>,
    b: &Array<T>,
    g: &Array<T>,
    needs: &[bool],
) -> (Option<Array<T>>, Option<Array<T>>) {
    let n = g.numel();
    let a_at = |i: usize| {
        if a.numel() == 1 {
            a.data()[0]
        } else {
            a.data()[i]
        }
    };
    let b_at = |i: usize| {
        if b.numel() == 1 {
            b.data()[0]
        } else {
            b.data()[i]
        }
    };
    let mut ga = vec![T::zero(); a.numel()];
    let mut gb = vec![T::zero(); b.numel()];
    for i in 0..n {
        let (da, db) = binary_partials(kind, a_at(i), b_at(i));
        let gi = g.data()[i];
        let ia = if a.numel() == 1 { 0 } else { i };
        let ib = if b.numel() == 1 { 0 } else { i };
        ga[ia] += gi * da;
        gb[ib] += gi * db;
    }
    let wrap = |need: bool, data: Vec<T>, like: &Array<T>| {
        need.then(|| Array::new(like.shape(), data).expect("gradient shape"))
    };
    (wrap(needs[0], ga, a), wrap(needs[1], gb, b))
}

fn unary_forward<T: Real>(kind: UnaryKind<T>, x: T) -> T {
    match kind {
        UnaryKind::Sigmoid => {
            // split by sign so exp never overflows
            if x >= T::zero() {
                T::one() / (T::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (T::one() + e)
            }
        }
        UnaryKind::Tanh => x.tanh(),
        UnaryKind::Relu => {
            if x < T::zero() {
                T::zero()
            } else {
                x
            }
        }
        UnaryKind::LeakyRelu(slope) => {
            if x > T::zero() {
                x
            } else {
                slope * x
            }
        }
        UnaryKind::Log(eps) => if x < eps { eps } else { x }.ln(),
        UnaryKind::Square => x * x,
        UnaryKind::AddScalar(c) => x + c,
        UnaryKind::MulScalar(c) => x * c,
    }
}

pub(crate) fn unary_backward<T: Real>(
    kind: UnaryKind<T>,
    input: &Array<T>,
    output: &Array<T>,
    g: &Array<T>,
) -> Array<T> {
    let d = |x: T, y: T| -> T {
        match kind {
            UnaryKind::Sigmoid => y * (T::one() - y),
            UnaryKind::Tanh => T::one() - y * y,
            UnaryKind::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            UnaryKind::LeakyRelu(slope) => {
                if x > T::zero() {
                    T::one()
                } else {
                    slope
                }
            }
            UnaryKind::Log(eps) => {
                if x > eps {
                    T::one() / x
                } else {
                    T::zero()
                }
            }
            UnaryKind::Square => x + x,
            UnaryKind::AddScalar(_) => T::one(),
            UnaryKind::MulScalar(c) => c,
        }
    };
    let data = input
        .data()
        .iter()
        .zip(output.data())
        .zip(g.data())
        .map(|((&x, &y), &gi)| gi * d(x, y))
        .collect();
    Array::new(input.shape(), data).expect("gradient shape")
}

impl<'t, T: Real> DiffArray<'t, T> {
    fn same_tape(&self, other: &DiffArray<'t, T>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "operands belong to different tapes"
        );
    }

    fn binary(self, other: DiffArray<'t, T>, kind: BinaryKind) -> Result<DiffArray<'t, T>> {
        self.same_tape(&other);
        let value = binary_forward(kind, &self.value(), &other.value())?;
        Ok(self.tape.push_op(
            value,
            Op::Binary {
                kind,
                a: self.id,
                b: other.id,
            },
        ))
    }

    fn unary(self, kind: UnaryKind<T>) -> DiffArray<'t, T> {
        let value = self.value().map(|x| unary_forward(kind, x));
        self.tape.push_op(value, Op::Unary { kind, a: self.id })
    }

    pub fn add(self, other: DiffArray<'t, T>) -> Result<DiffArray<'t, T>> {
        self.binary(other, BinaryKind::Add)
    }

    pub fn sub(self, other: DiffArray<'t, T>) -> Result<DiffArray<'t, T>> {
        self.binary(other, BinaryKind::Sub)
    }

    pub fn mul(self, other: DiffArray<'t, T>) -> Result<DiffArray<'t, T>> {
        self.binary(other, BinaryKind::Mul)
    }

    pub fn div(self, other: DiffArray<'t, T>) -> Result<DiffArray<'t, T>> {
        self.binary(other, BinaryKind::Div)
    }

    /// Elementwise minimum; the gradient goes to `self` on ties.
    pub fn minimum(self, other: DiffArray<'t, T>) -> Result<DiffArray<'t, T>> {
        self.binary(other, BinaryKind::Min)
    }

    /// Elementwise maximum; the gradient goes to `self` on ties.
    pub fn maximum(self, other: DiffArray<'t, T>) -> Result<DiffArray<'t, T>> {
        self.binary(other, BinaryKind::Max)
    }

    pub fn add_scalar(self, c: T) -> DiffArray<'t, T> {
        self.unary(UnaryKind::AddScalar(c))
    }

    pub fn mul_scalar(self, c: T) -> DiffArray<'t, T> {
        self.unary(UnaryKind::MulScalar(c))
    }

    pub fn neg(self) -> DiffArray<'t, T> {
        self.mul_scalar(-T::one())
    }

    /// `c - self`
    pub fn rsub_scalar(self, c: T) -> DiffArray<'t, T> {
        self.neg().add_scalar(c)
    }

    pub fn sigmoid(self) -> DiffArray<'t, T> {
        self.unary(UnaryKind::Sigmoid)
    }

    pub fn tanh(self) -> DiffArray<'t, T> {
        self.unary(UnaryKind::Tanh)
    }

    pub fn relu(self) -> DiffArray<'t, T> {
        self.unary(UnaryKind::Relu)
    }

    pub fn leaky_relu(self, slope: T) -> DiffArray<'t, T> {
        self.unary(UnaryKind::LeakyRelu(slope))
    }

    /// `ln(max(x, 1e-7))`
    pub fn log(self) -> DiffArray<'t, T> {
        self.log_eps(T::lit(LOG_EPSILON))
    }

    pub fn log_eps(self, eps: T) -> DiffArray<'t, T> {
        self.unary(UnaryKind::Log(eps))
    }

    pub fn square(self) -> DiffArray<'t, T> {
        self.unary(UnaryKind::Square)
    }

    pub fn sum(self) -> DiffArray<'t, T> {
        let value = Array::scalar(self.value().sum());
        self.tape.push_op(value, Op::Sum { a: self.id })
    }

    pub fn try_sum(self) -> Result<DiffArray<'t, T>> {
        if self.value().numel() == 0 {
            return Err(Error::Empty("sum"));
        }
        Ok(self.sum())
    }

    pub fn mean(self) -> Result<DiffArray<'t, T>> {
        let value = {
            let v = self.value();
            if v.numel() == 0 {
                return Err(Error::Empty("mean"));
            }
            Array::scalar(v.sum() / T::from_usize(v.numel()).expect("count"))
        };
        Ok(self.tape.push_op(value, Op::Mean { a: self.id }))
    }

    /// Stack two `[C, H, W]` arrays along the channel axis.
    pub fn concat_channels(self, other: DiffArray<'t, T>) -> Result<DiffArray<'t, T>> {
        self.same_tape(&other);
        let value = {
            let (a, b) = (self.value(), other.value());
            let (ca, ha, wa) = a.chw()?;
            let (cb, hb, wb) = b.chw()?;
            if (ha, wa) != (hb, wb) {
                return Err(Error::shape("concat_channels", a.shape(), b.shape()));
            }
            let mut data = Vec::with_capacity(a.numel() + b.numel());
            data.extend_from_slice(a.data());
            data.extend_from_slice(b.data());
            Array::new([ca + cb, ha, wa], data)?
        };
        Ok(self.tape.push_op(
            value,
            Op::Concat {
                a: self.id,
                b: other.id,
            },
        ))
    }

    /// Tile a `[1, H, W]` array into `[n, H, W]`.
    pub fn repeat_channels(self, n: usize) -> Result<DiffArray<'t, T>> {
        let value = {
            let a = self.value();
            let (c, h, w) = a.chw()?;
            if c != 1 || n == 0 {
                return Err(Error::invalid(format!(
                    "repeat_channels needs a single-channel input and n >= 1, got {:?} x {n}",
                    a.shape()
                )));
            }
            Array::new([n, h, w], a.data().repeat(n))?
        };
        Ok(self.tape.push_op(value, Op::RepeatChannels { a: self.id }))
    }
}
