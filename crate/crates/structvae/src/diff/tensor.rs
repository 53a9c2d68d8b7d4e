//! Dense row-major tensors and parameter initializers.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Dense tensor of 64-bit floats, row-major.
///
/// Rank is 1 (vectors) or 2 (matrices) everywhere in this crate; scalars
/// are shape `[1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length must match shape product"
        );
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor {
            shape: vec![n],
            data,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a shape-`[1]` tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() requires a scalar tensor");
        self.data[0]
    }

    /// Rows of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        assert_eq!(self.shape.len(), 2);
        self.shape[0]
    }

    /// Columns of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        assert_eq!(self.shape.len(), 2);
        self.shape[1]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// How a parameter tensor is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitSpec {
    /// `N(0, 1/sqrt(fan_in))` truncated at 2 standard deviations by
    /// rejection. `fan_in` is the last dimension of the shape.
    VarianceScaled,
    Zeros,
    Ones,
    /// Uniform on `[0, 1)`.
    Uniform01,
    Constant(f64),
}

/// Draws a tensor according to `spec`. Deterministic given the rng state.
pub fn init<R: Rng>(spec: InitSpec, shape: &[usize], rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data = match spec {
        InitSpec::Zeros => vec![0.0; n],
        InitSpec::Ones => vec![1.0; n],
        InitSpec::Constant(c) => vec![c; n],
        InitSpec::Uniform01 => (0..n).map(|_| rng.gen::<f64>()).collect(),
        InitSpec::VarianceScaled => {
            let fan_in = *shape.last().expect("variance_scaled needs a shaped tensor") as f64;
            let std = 1.0 / fan_in.sqrt();
            (0..n).map(|_| truncated_normal(std, rng)).collect()
        }
    };
    Tensor::from_vec(shape, data)
}

fn truncated_normal<R: Rng>(std: f64, rng: &mut R) -> f64 {
    loop {
        let v: f64 = rng.sample::<f64, _>(StandardNormal) * std;
        if v.abs() <= 2.0 * std {
            return v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn variance_scaled_respects_truncation_and_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        // fan_in = 16 -> std 0.25 -> all samples within [-0.5, 0.5]
        let t = init(InitSpec::VarianceScaled, &[64, 16], &mut rng);
        assert!(t.data().iter().all(|v| v.abs() <= 0.5));
        let n = t.len() as f64;
        let var = t.data().iter().map(|v| v * v).sum::<f64>() / n;
        // truncation shrinks variance below 0.0625 but not drastically
        assert!(var > 0.02 && var < 0.0625, "var = {var}");
    }

    #[test]
    fn zeros_and_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z = init(InitSpec::Zeros, &[128], &mut rng);
        assert!(z.data().iter().all(|&v| v == 0.0));
        let c = init(InitSpec::Constant(-5.0), &[128], &mut rng);
        assert!(c.data().iter().all(|&v| v == -5.0));
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = init(
            InitSpec::VarianceScaled,
            &[8, 8],
            &mut ChaCha8Rng::seed_from_u64(3),
        );
        let b = init(
            InitSpec::VarianceScaled,
            &[8, 8],
            &mut ChaCha8Rng::seed_from_u64(3),
        );
        assert_eq!(a, b);
    }

    #[test]
    fn uniform01_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = init(InitSpec::Uniform01, &[40, 16], &mut rng);
        assert!(t.data().iter().all(|&v| (0.0..1.0).contains(&v)));
    }
}
