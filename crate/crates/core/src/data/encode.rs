//! Rate (Poisson/Bernoulli) spike encoding of static intensity images.

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::tensor::SpikeTensor;
use ndarray::ArrayView1;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Encodes an intensity image (values in [0, 1]) into `t_steps` of
/// independent Bernoulli(intensity * max_rate) spikes. Pure function of
/// `(image, seed)`.
pub fn encode_poisson<F: Scalar>(
    image: ArrayView1<'_, F>,
    t_steps: usize,
    max_rate: f64,
    seed: u64,
) -> Result<SpikeTensor<F>> {
    if !(0.0..=1.0).contains(&max_rate) {
        return Err(CoreError::InvalidParam(format!(
            "max_rate must lie in [0, 1], got {max_rate}"
        )));
    }
    if t_steps == 0 {
        return Err(CoreError::Empty("encoding time axis"));
    }
    for &x in image.iter() {
        let v = x.to_f64_c();
        if !(0.0..=1.0).contains(&v) {
            return Err(CoreError::InvalidParam(format!(
                "image intensity {v} outside [0, 1]"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensor = SpikeTensor::zeros(t_steps, image.len());
    for t in 0..t_steps {
        for (c, &intensity) in image.iter().enumerate() {
            let p = intensity.to_f64_c() * max_rate;
            let spike = p > 0.0 && rng.random_bool(p.min(1.0));
            if spike {
                tensor.set(t, c, F::one());
            }
        }
    }
    Ok(tensor)
}
