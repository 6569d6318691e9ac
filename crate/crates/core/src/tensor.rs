//! Time-major spike rasters, the currency every dataset, layer and attack
//! speaks: shape `[T x channels]`, binary for layer outputs, small
//! non-negative counts allowed for encoded inputs.

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use ndarray::{Array2, ArrayView1, ArrayView2};

#[derive(Debug, Clone, PartialEq)]
pub struct SpikeTensor<F: Scalar> {
    data: Array2<F>,
}

impl<F: Scalar> SpikeTensor<F> {
    /// Wraps a `[T x channels]` array, rejecting negative or non-finite
    /// entries and empty time axes.
    pub fn new(data: Array2<F>) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(CoreError::Empty("spike tensor time axis"));
        }
        for &x in data.iter() {
            if !x.is_finite() {
                return Err(CoreError::NonFinite("spike tensor entry"));
            }
            if x < F::zero() {
                return Err(CoreError::InvalidParam(format!(
                    "negative spike tensor entry {x}"
                )));
            }
        }
        Ok(Self { data })
    }

    pub fn zeros(t_steps: usize, channels: usize) -> Self {
        Self {
            data: Array2::zeros((t_steps.max(1), channels)),
        }
    }

    pub fn t_steps(&self) -> usize {
        self.data.nrows()
    }

    pub fn channels(&self) -> usize {
        self.data.ncols()
    }

    /// Channel activity at one timestep.
    pub fn row(&self, t: usize) -> ArrayView1<'_, F> {
        self.data.row(t)
    }

    pub fn view(&self) -> ArrayView2<'_, F> {
        self.data.view()
    }

    pub fn get(&self, t: usize, channel: usize) -> F {
        self.data[(t, channel)]
    }

    /// Writes one entry. Panics on negative or non-finite values, which
    /// would break the raster invariant.
    pub fn set(&mut self, t: usize, channel: usize, value: F) {
        assert!(
            value.is_finite() && value >= F::zero(),
            "spike tensor entries must be finite and non-negative"
        );
        self.data[(t, channel)] = value;
    }

    /// Sum of all entries (total event mass).
    pub fn total(&self) -> F {
        self.data.iter().copied().sum()
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&x| x != F::zero()).count()
    }

    /// First `t` timesteps as a new tensor. Errors when `t` is zero or past
    /// the end.
    pub fn truncated(&self, t: usize) -> Result<Self> {
        if t == 0 || t > self.t_steps() {
            return Err(CoreError::OutOfRange {
                context: "spike tensor truncation",
                index: t,
                bound: self.t_steps() + 1,
            });
        }
        Ok(Self {
            data: self.data.slice(ndarray::s![..t, ..]).to_owned(),
        })
    }

    /// Per-channel mean intensity over time (the rate view used by the ANN
    /// counterpart).
    pub fn mean_over_time(&self) -> ndarray::Array1<F> {
        let t = F::from_usize(self.t_steps()).unwrap();
        self.data.sum_axis(ndarray::Axis(0)) / t
    }
}
