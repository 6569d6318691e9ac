//! Centered kernel alignment over linear-kernel Gram matrices, with the
//! biased single-shot estimator and the unbiased estimator that accumulates
//! across minibatches.

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::snn::{forward, Network};
use crate::tensor::SpikeTensor;
use ndarray::{Array1, Array2};

/// Batch of layer representations: one row per example, activations of all
/// timesteps concatenated, shape `[b x (T * p)]`.
#[derive(Debug, Clone)]
pub struct RepresentationBlock<F: Scalar> {
    data: Array2<F>,
}

impl<F: Scalar> RepresentationBlock<F> {
    pub fn new(data: Array2<F>) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(CoreError::Empty("representation block"));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(CoreError::NonFinite("representation block"));
        }
        Ok(Self { data })
    }

    pub fn batch_size(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<F> {
        &self.data
    }
}

/// Which activation the representation reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RepresentationSource {
    Spikes,
    Potentials,
}

/// Runs the network over a batch of inputs and collects one representation
/// block per layer (time-concatenated spikes or potentials).
pub fn layer_representations<F: Scalar>(
    net: &Network<F>,
    inputs: &[&SpikeTensor<F>],
    source: RepresentationSource,
) -> Result<Vec<RepresentationBlock<F>>> {
    if inputs.is_empty() {
        return Err(CoreError::Empty("representation batch"));
    }
    let t_steps = inputs[0].t_steps();
    let mut blocks: Vec<Array2<F>> = net
        .layers
        .iter()
        .map(|l| Array2::zeros((inputs.len(), t_steps * l.n_out())))
        .collect();
    for (row, input) in inputs.iter().enumerate() {
        let (_, traces) = forward(net, input, true)?;
        let traces = traces.expect("recording forward returns traces");
        for (l, trace) in traces.iter().enumerate() {
            let p = net.layers[l].n_out();
            for (t, state) in trace.states.iter().enumerate() {
                let vec = match source {
                    RepresentationSource::Spikes => &state.spikes,
                    RepresentationSource::Potentials => &state.potential,
                };
                for (i, &x) in vec.iter().enumerate() {
                    blocks[l][(row, t * p + i)] = x;
                }
            }
        }
    }
    blocks.into_iter().map(RepresentationBlock::new).collect()
}

/// `[b x b]` linear-kernel similarity between examples.
pub type GramMatrix<F> = Array2<F>;

/// `K = Gamma Gamma^T`.
pub fn gram_linear<F: Scalar>(rep: &RepresentationBlock<F>) -> GramMatrix<F> {
    rep.data.dot(&rep.data.t())
}

fn check_same_b<F: Scalar>(k: &GramMatrix<F>, l: &GramMatrix<F>) -> Result<usize> {
    let b = k.nrows();
    if l.nrows() != b || k.ncols() != b || l.ncols() != b {
        return Err(CoreError::DimensionMismatch {
            context: "gram matrix batch sizes",
            expected: b,
            actual: l.nrows(),
        });
    }
    Ok(b)
}

/// Biased HSIC estimator `tr(KCLC) / (b-1)^2` with the centering projection
/// `C = I - (1/b) 11^T`.
pub fn hsic_biased<F: Scalar>(k: &GramMatrix<F>, l: &GramMatrix<F>) -> Result<F> {
    let b = check_same_b(k, l)?;
    if b < 2 {
        return Err(CoreError::BatchTooSmall {
            context: "biased HSIC",
            required: 2,
            actual: b,
        });
    }
    // tr(KCLC) = <CKC, L> because C is an idempotent projection; double
    // centering K is cheaper than two matrix products.
    let kc = double_center(k);
    let mut acc = F::zero();
    for (x, y) in kc.iter().zip(l.iter()) {
        acc = acc + *x * *y;
    }
    let bm1 = F::from_usize(b - 1).unwrap();
    Ok(acc / (bm1 * bm1))
}

fn double_center<F: Scalar>(k: &GramMatrix<F>) -> Array2<F> {
    let b = k.nrows();
    let bf = F::from_usize(b).unwrap();
    let row_means: Array1<F> = k.sum_axis(ndarray::Axis(1)) / bf;
    let grand: F = row_means.iter().copied().sum::<F>() / bf;
    let mut out = k.clone();
    for i in 0..b {
        for j in 0..b {
            out[(i, j)] = out[(i, j)] - row_means[i] - row_means[j] + grand;
        }
    }
    out
}

/// Unbiased HSIC estimator: Gram diagonals zeroed, then
/// `[tr(K~L~) + (1'K~1)(1'L~1)/((b-1)(b-2)) - 2/(b-2) * 1'K~L~1] / (b(b-3))`.
/// May be slightly negative for near-independent inputs.
pub fn hsic_unbiased<F: Scalar>(k: &GramMatrix<F>, l: &GramMatrix<F>) -> Result<F> {
    let b = check_same_b(k, l)?;
    if b < 4 {
        return Err(CoreError::BatchTooSmall {
            context: "unbiased HSIC",
            required: 4,
            actual: b,
        });
    }
    Ok(hsic_unbiased_unchecked(k, l, b))
}

fn hsic_unbiased_unchecked<F: Scalar>(k: &GramMatrix<F>, l: &GramMatrix<F>, b: usize) -> F {
    let kt = zero_diagonal(k);
    let lt = zero_diagonal(l);

    let mut tr_kl = F::zero();
    for i in 0..b {
        for j in 0..b {
            tr_kl = tr_kl + kt[(i, j)] * lt[(j, i)];
        }
    }
    let k_rows: Array1<F> = kt.sum_axis(ndarray::Axis(1));
    let l_rows: Array1<F> = lt.sum_axis(ndarray::Axis(1));
    let sum_k: F = k_rows.iter().copied().sum();
    let sum_l: F = l_rows.iter().copied().sum();
    let mut cross = F::zero();
    for (kr, lr) in k_rows.iter().zip(l_rows.iter()) {
        cross = cross + *kr * *lr;
    }

    let bf = |x: usize| F::from_usize(x).unwrap();
    let two = F::from_f64_c(2.0);
    let bracket =
        tr_kl + (sum_k * sum_l) / (bf(b - 1) * bf(b - 2)) - two / bf(b - 2) * cross;
    bracket / (bf(b) * bf(b - 3))
}

fn zero_diagonal<F: Scalar>(k: &GramMatrix<F>) -> Array2<F> {
    let mut out = k.clone();
    for i in 0..out.nrows() {
        out[(i, i)] = F::zero();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CkaEstimator {
    Biased,
    Unbiased,
}

/// `CKA = HSIC(K, L) / sqrt(HSIC(K, K) HSIC(L, L))`. A constant
/// representation has zero self-HSIC and is reported as an error, not 0.
pub fn cka<F: Scalar>(
    rep_a: &RepresentationBlock<F>,
    rep_b: &RepresentationBlock<F>,
    estimator: CkaEstimator,
) -> Result<F> {
    let k = gram_linear(rep_a);
    let l = gram_linear(rep_b);
    let (xy, xx, yy) = match estimator {
        CkaEstimator::Biased => (
            hsic_biased(&k, &l)?,
            hsic_biased(&k, &k)?,
            hsic_biased(&l, &l)?,
        ),
        CkaEstimator::Unbiased => (
            hsic_unbiased(&k, &l)?,
            hsic_unbiased(&k, &k)?,
            hsic_unbiased(&l, &l)?,
        ),
    };
    finalize_cka(xy, xx, yy)
}

fn finalize_cka<F: Scalar>(xy: F, xx: F, yy: F) -> Result<F> {
    if !(xx > F::zero()) || !(yy > F::zero()) {
        return Err(CoreError::DegenerateRepresentation);
    }
    Ok(xy / (xx * yy).sqrt())
}

/// Running sums of the three unbiased-HSIC statistics across minibatches.
#[derive(Debug, Clone)]
pub struct CkaAccumulator<F: Scalar> {
    sum_xy: F,
    sum_xx: F,
    sum_yy: F,
    batches: usize,
}

impl<F: Scalar> Default for CkaAccumulator<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> CkaAccumulator<F> {
    pub fn new() -> Self {
        Self {
            sum_xy: F::zero(),
            sum_xx: F::zero(),
            sum_yy: F::zero(),
            batches: 0,
        }
    }

    pub fn push(
        &mut self,
        rep_a: &RepresentationBlock<F>,
        rep_b: &RepresentationBlock<F>,
    ) -> Result<()> {
        let k = gram_linear(rep_a);
        let l = gram_linear(rep_b);
        self.sum_xy = self.sum_xy + hsic_unbiased(&k, &l)?;
        self.sum_xx = self.sum_xx + hsic_unbiased(&k, &k)?;
        self.sum_yy = self.sum_yy + hsic_unbiased(&l, &l)?;
        self.batches += 1;
        Ok(())
    }

    /// Averages the three statistics over the pushed batches, then forms the
    /// CKA ratio.
    pub fn finalize(&self) -> Result<F> {
        if self.batches == 0 {
            return Err(CoreError::Empty("CKA accumulator"));
        }
        let n = F::from_usize(self.batches).unwrap();
        finalize_cka(self.sum_xy / n, self.sum_xx / n, self.sum_yy / n)
    }
}

/// Minibatch-accumulated unbiased CKA over a stream of representation pairs.
pub fn cka_minibatch<'a, F: Scalar, I>(stream: I) -> Result<F>
where
    I: IntoIterator<Item = (&'a RepresentationBlock<F>, &'a RepresentationBlock<F>)>,
{
    let mut acc = CkaAccumulator::new();
    for (a, b) in stream {
        acc.push(a, b)?;
    }
    acc.finalize()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn orthonormal_rows_give_identity_gram() {
        let rep = RepresentationBlock::new(array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        let k = gram_linear(&rep);
        assert_eq!(k, array![[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn duplicated_rows_duplicate_gram_entries() {
        let rep = RepresentationBlock::new(array![[1.0, 2.0], [1.0, 2.0], [0.0, 1.0]]).unwrap();
        let k = gram_linear(&rep);
        assert_eq!(k.row(0), k.row(1));
        assert_eq!(k.column(0), k.column(1));
    }

    #[test]
    fn gram_matches_naive_product() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let data = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
        let k = gram_linear(&RepresentationBlock::new(data.clone()).unwrap());
        for i in 0..5 {
            for j in 0..5 {
                let want: f64 = (0..3).map(|d| data[(i, d)] * data[(j, d)]).sum();
                assert!((k[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_representation_has_zero_biased_hsic() {
        let rep = RepresentationBlock::new(Array2::from_elem((6, 4), 0.7)).unwrap();
        let l = gram_linear(&rep);
        let other =
            RepresentationBlock::new(Array2::from_shape_fn((6, 3), |(i, j)| (i * 3 + j) as f64))
                .unwrap();
        let k = gram_linear(&other);
        let h = hsic_biased(&k, &l).unwrap();
        assert!(h.abs() < 1e-9, "centering must annihilate constants: {h}");
    }

    #[test]
    fn biased_self_hsic_is_nonnegative() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let data = Array2::from_shape_fn((7, 4), |_| rng.random_range(-2.0..2.0));
            let k = gram_linear(&RepresentationBlock::new(data).unwrap());
            assert!(hsic_biased(&k, &k).unwrap() >= -1e-12);
        }
    }

    #[test]
    fn unbiased_rejects_tiny_batches() {
        let rep = RepresentationBlock::new(Array2::from_elem((3, 2), 1.0)).unwrap();
        let k = gram_linear(&rep);
        assert!(matches!(
            hsic_unbiased(&k, &k),
            Err(CoreError::BatchTooSmall { .. })
        ));
    }

    #[test]
    fn cka_errors_on_constant_representation() {
        let a = RepresentationBlock::new(Array2::from_elem((6, 3), 1.0)).unwrap();
        let b = RepresentationBlock::new(Array2::from_shape_fn((6, 3), |(i, _)| i as f64))
            .unwrap();
        assert!(matches!(
            cka(&a, &b, CkaEstimator::Biased),
            Err(CoreError::DegenerateRepresentation)
        ));
    }

    #[test]
    fn accumulator_needs_at_least_one_batch() {
        let acc = CkaAccumulator::<f64>::new();
        assert!(acc.finalize().is_err());
    }
}
