//! Symmetric-log transforms, exponential bins and two-hot targets for
//! categorical regression heads, plus the percentile return normalizer.

use slotrl_tensor::{Scalar, Tensor};

use crate::error::{argument, Error, Result};

/// Extent of the symlog grid: bins cover `[-GRID_LIMIT, GRID_LIMIT]`.
pub const GRID_LIMIT: f64 = 20.0;

pub const DEFAULT_BINS: usize = 255;

fn finite<F: Scalar>(x: F) -> Result<F> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::Domain(x.as_f64()))
    }
}

/// `sign(x) ln(1 + |x|)`.
pub fn symlog<F: Scalar>(x: F) -> Result<F> {
    finite(x).map(symlog_unchecked)
}

/// `sign(y) (exp|y| - 1)`.
pub fn symexp<F: Scalar>(y: F) -> Result<F> {
    finite(y).map(symexp_unchecked)
}

pub(crate) fn symlog_unchecked<F: Scalar>(x: F) -> F {
    x.signum() * x.abs().ln_1p()
}

pub(crate) fn symexp_unchecked<F: Scalar>(y: F) -> F {
    y.signum() * y.abs().exp_m1()
}

/// `K` evenly spaced points in symlog space and their real-valued bin centers.
#[derive(Clone, Debug)]
pub struct BinSpec<F: Scalar> {
    symlog_grid: Vec<F>,
    bin_values: Vec<F>,
    values_tensor: Tensor<F>,
}

impl<F: Scalar> BinSpec<F> {
    pub fn new(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(argument(format!("need at least 2 bins, got {k}")));
        }
        let step = 2.0 * GRID_LIMIT / (k - 1) as f64;
        let grid: Vec<f64> = (0..k)
            .map(|i| {
                if i == k - 1 {
                    GRID_LIMIT
                } else {
                    -GRID_LIMIT + step * i as f64
                }
            })
            .collect();
        let symlog_grid: Vec<F> = grid.iter().map(|&g| F::of(g)).collect();
        let bin_values: Vec<F> = grid.iter().map(|&g| F::of(symexp_unchecked(g))).collect();
        let values_tensor = Tensor::from_vec(bin_values.clone(), &[k, 1]);
        Ok(Self {
            symlog_grid,
            bin_values,
            values_tensor,
        })
    }

    pub fn len(&self) -> usize {
        self.bin_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bin_values.is_empty()
    }

    pub fn symlog_grid(&self) -> &[F] {
        &self.symlog_grid
    }

    pub fn bin_values(&self) -> &[F] {
        &self.bin_values
    }

    /// Two-hot weights of `target` in symlog space; out-of-range targets clamp
    /// to the end bins.
    pub fn twohot(&self, target: F) -> Result<Vec<F>> {
        let s = symlog(target)?;
        let mut w = vec![F::zero(); self.len()];
        let (i, frac) = self.locate(s);
        w[i] = F::one() - frac;
        if frac > F::zero() {
            w[i + 1] = frac;
        }
        Ok(w)
    }

    /// Lower bin index and interpolation fraction of symlog value `s`.
    fn locate(&self, s: F) -> (usize, F) {
        let k = self.len();
        let lo = self.symlog_grid[0];
        let hi = self.symlog_grid[k - 1];
        if s <= lo {
            return (0, F::zero());
        }
        if s >= hi {
            return (k - 2, F::one());
        }
        let step = (hi - lo) / F::of((k - 1) as f64);
        let mut i = ((s - lo) / step).floor().to_usize().unwrap_or(0).min(k - 2);
        // guard against rounding in the division
        while i > 0 && s < self.symlog_grid[i] {
            i -= 1;
        }
        while i < k - 2 && s >= self.symlog_grid[i + 1] {
            i += 1;
        }
        let frac = (s - self.symlog_grid[i]) / (self.symlog_grid[i + 1] - self.symlog_grid[i]);
        (i, frac)
    }

    /// `softmax(logits) . bin_values`.
    pub fn expected_value(&self, logits: &[F]) -> Result<F> {
        if logits.len() != self.len() {
            return Err(argument(format!(
                "expected {} logits, got {}",
                self.len(),
                logits.len()
            )));
        }
        let max = logits.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
        let mut num = F::zero();
        let mut den = F::zero();
        for (&l, &b) in logits.iter().zip(&self.bin_values) {
            let e = (l - max).exp();
            num += e * b;
            den += e;
        }
        Ok(num / den)
    }

    /// Cross-entropy of `logits` against the two-hot encoding of `target`.
    pub fn categorical_loss(&self, logits: &[F], target: F) -> Result<F> {
        let w = self.twohot(target)?;
        if logits.len() != self.len() {
            return Err(argument("logit count does not match bins"));
        }
        let max = logits.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
        let lse = max + logits.iter().map(|&v| (v - max).exp()).sum::<F>().ln();
        Ok(w
            .iter()
            .zip(logits)
            .filter(|(&wi, _)| wi > F::zero())
            .map(|(&wi, &l)| -wi * (l - lse))
            .sum())
    }

    /// Two-hot targets for a batch, shaped `[targets.len(), K]`.
    pub fn twohot_tensor(&self, targets: &[F]) -> Result<Tensor<F>> {
        let mut data = Vec::with_capacity(targets.len() * self.len());
        for &t in targets {
            data.extend(self.twohot(t)?);
        }
        Ok(Tensor::from_vec(data, &[targets.len(), self.len()]))
    }

    /// Differentiable expectation decoding: `logits [..., K] -> [...]`.
    pub fn decode(&self, logits: &Tensor<F>) -> Tensor<F> {
        let shape = logits.shape();
        assert_eq!(shape.last(), Some(&self.len()), "logit width must equal bin count");
        let lead = shape[..shape.len() - 1].to_vec();
        let flat = logits.reshape(&[usize::MAX, self.len()]);
        flat.softmax(-1).matmul(&self.values_tensor).reshape(&lead)
    }

    /// Per-row two-hot cross-entropy: `logits [n, K]` against `targets [n]` -> `[n]`.
    pub fn loss_tensor(&self, logits: &Tensor<F>, targets: &[F]) -> Result<Tensor<F>> {
        let flat = logits.reshape(&[usize::MAX, self.len()]);
        if flat.dim(0) != targets.len() {
            return Err(argument(format!(
                "{} logit rows for {} targets",
                flat.dim(0),
                targets.len()
            )));
        }
        let target = self.twohot_tensor(targets)?;
        Ok(slotrl_tensor::nn::soft_cross_entropy(&flat, &target))
    }
}

/// Linear-interpolation percentile of already sorted data, `q` in `[0, 100]`.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q / 100.0 * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Running scale of imagined returns from their 5th-95th percentile range.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ReturnNormalizer {
    pub scale_ema: f64,
    pub decay: f64,
    pub initialized: bool,
}

impl Default for ReturnNormalizer {
    fn default() -> Self {
        Self::new(0.99)
    }
}

impl ReturnNormalizer {
    pub fn new(decay: f64) -> Self {
        Self {
            scale_ema: 0.0,
            decay,
            initialized: false,
        }
    }

    /// Folds the percentile range of `returns` into the running estimate and
    /// returns that range.
    pub fn update(&mut self, returns: &[f64]) -> Result<f64> {
        if returns.is_empty() {
            return Err(argument("empty return batch"));
        }
        if let Some(&bad) = returns.iter().find(|r| !r.is_finite()) {
            return Err(Error::Domain(bad));
        }
        let mut sorted = returns.to_vec();
        sorted.sort_by(f64::total_cmp);
        let range = percentile_sorted(&sorted, 95.0) - percentile_sorted(&sorted, 5.0);
        if self.initialized {
            self.scale_ema = self.decay * self.scale_ema + (1.0 - self.decay) * range;
        } else {
            self.scale_ema = range;
            self.initialized = true;
        }
        Ok(range)
    }

    /// Divisor applied to returns: `max(1, s)`.
    pub fn scale(&self) -> f64 {
        self.scale_ema.max(1.0)
    }
}
