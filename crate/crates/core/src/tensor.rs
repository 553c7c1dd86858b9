//! Dense row-major `f64` tensors and the handful of kernels the model needs.
//!
//! Every reduction runs in a fixed left-to-right order so that two runs over
//! the same inputs produce bitwise-identical results.

use crate::error::{Error, Result};

/// Probabilities are floored at this value before any logarithm in loss code.
pub const PROB_FLOOR: f64 = 1e-12;

/// Tolerance used when checking that a probability row is normalized.
pub const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Parameter(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Builds a 2-D tensor from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Validation("ragged rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(vec![rows.len(), cols], data)
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the trailing axis.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("tensor has at least one axis")
    }

    /// Number of rows along the trailing axis.
    pub fn num_rows(&self) -> usize {
        self.data.len() / self.last_dim()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let d = self.last_dim();
        &self.data[r * d..(r + 1) * d]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let d = self.last_dim();
        &mut self.data[r * d..(r + 1) * d]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::Dimension {
                op: "reshape",
                left: self.shape,
                right: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Adds `other` into `self` element by element.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension {
                op: "add_assign",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs()))
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }
}

/// A tensor paired with an additive gradient accumulator of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct DualTensor {
    pub value: Tensor,
    pub grad: Tensor,
}

impl DualTensor {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    pub fn accumulate(&mut self, g: &Tensor) -> Result<()> {
        self.grad.add_assign(g)
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }
}

fn matrix_dims(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::Dimension {
            op,
            left: t.shape().to_vec(),
            right: vec![],
        }),
    }
}

/// Standard matrix product of `a[m×k]` and `b[k×n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = matrix_dims(a, "matmul")?;
    let (k2, n) = matrix_dims(b, "matmul")?;
    if k != k2 {
        return Err(Error::Dimension {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(Tensor::from_parts(
        vec![m, n],
        kernels::matmul_nn(a.data(), b.data(), m, k, n),
    ))
}

pub(crate) mod kernels {
    /// `a[m×k] · b[k×n]`
    pub fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let out_row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let b_row = &b[p * n..(p + 1) * n];
                for (o, &bv) in out_row.iter_mut().zip(b_row) {
                    *o += av * bv;
                }
            }
        }
        out
    }

    /// `a[m×k] · b[n×k]ᵀ`
    pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &a[i * k..(i + 1) * k];
            for j in 0..n {
                let b_row = &b[j * k..(j + 1) * k];
                out[i * n + j] = dot(a_row, b_row);
            }
        }
        out
    }

    /// `a[k×m]ᵀ · b[k×n]`
    pub fn matmul_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for p in 0..k {
            let a_row = &a[p * m..(p + 1) * m];
            let b_row = &b[p * n..(p + 1) * n];
            for (i, &av) in a_row.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let out_row = &mut out[i * n..(i + 1) * n];
                for (o, &bv) in out_row.iter_mut().zip(b_row) {
                    *o += av * bv;
                }
            }
        }
        out
    }

    pub fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
    }
}

fn check_temperature(temperature: f64) -> Result<()> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::Parameter(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    Ok(())
}

/// Log-probabilities of `softmax(z / temperature)` for one row, written to `out`.
pub(crate) fn log_softmax_row(z: &[f64], temperature: f64, out: &mut [f64]) {
    let max = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v)) / temperature;
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = v / temperature - max;
        sum += o.exp();
    }
    let log_sum = sum.ln();
    for o in out.iter_mut() {
        *o -= log_sum;
    }
}

pub(crate) fn softmax_row(z: &[f64], temperature: f64, out: &mut [f64]) {
    let max = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v)) / temperature;
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v / temperature - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Last-axis log-softmax of `z / temperature`, stabilized by max subtraction.
pub fn log_softmax(z: &Tensor, temperature: f64) -> Result<Tensor> {
    check_temperature(temperature)?;
    let mut out = Tensor::zeros(z.shape());
    for r in 0..z.num_rows() {
        log_softmax_row(z.row(r), temperature, out.row_mut(r));
    }
    Ok(out)
}

/// Last-axis softmax of `z / temperature`.
pub fn softmax(z: &Tensor, temperature: f64) -> Result<Tensor> {
    check_temperature(temperature)?;
    let mut out = Tensor::zeros(z.shape());
    for r in 0..z.num_rows() {
        softmax_row(z.row(r), temperature, out.row_mut(r));
    }
    Ok(out)
}

pub(crate) fn check_distribution(p: &[f64]) -> Result<()> {
    if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::Validation(
            "probability row has negative or non-finite entries".into(),
        ));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::Validation(format!(
            "probability row sums to {total}, not 1"
        )));
    }
    Ok(())
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    check_distribution(p)?;
    Ok(p
        .iter()
        .filter(|&&v| v > 0.0)
        .fold(0.0, |acc, &v| acc - v * v.ln()))
}

/// Index of the largest entry; the first one wins on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity_and_dot() {
        let id = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let m = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(matmul(&id, &m).unwrap(), m);

        let a = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn transposed_kernels_agree_with_plain_product() {
        let a: Vec<f64> = (0..6).map(|i| i as f64 * 0.5 - 1.0).collect(); // 2×3
        let b: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect(); // 3×4
        let c = kernels::matmul_nn(&a, &b, 2, 3, 4);
        // bᵀ laid out as 4×3
        let mut bt = vec![0.0; 12];
        for i in 0..3 {
            for j in 0..4 {
                bt[j * 3 + i] = b[i * 4 + j];
            }
        }
        assert_eq!(kernels::matmul_nt(&a, &bt, 2, 3, 4), c);
        let mut at = vec![0.0; 6];
        for i in 0..2 {
            for j in 0..3 {
                at[j * 2 + i] = a[i * 3 + j];
            }
        }
        let c2 = kernels::matmul_tn(&at, &b, 3, 2, 4);
        for (x, y) in c.iter().zip(&c2) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn log_softmax_uniform_and_reference_values() {
        let z = Tensor::new(vec![3], vec![0.0; 3]).unwrap();
        let ls = log_softmax(&z, 1.0).unwrap();
        for v in ls.data() {
            assert!((v - (1.0f64 / 3.0).ln()).abs() < 1e-15);
        }

        // Reference values from exp-normalize at 50 significant digits.
        let z = Tensor::new(vec![3], vec![2.0, 1.0, 0.0]).unwrap();
        let p = softmax(&z, 1.0).unwrap();
        let expected = [
            0.665_240_955_774_821_9,
            0.244_728_471_054_797_6,
            0.090_030_573_170_380_46,
        ];
        for (a, b) in p.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn high_temperature_flattens() {
        let z = Tensor::new(vec![2], vec![10.0, 0.0]).unwrap();
        let p = softmax(&z, 1000.0).unwrap();
        assert!((p.data()[0] - 0.5).abs() < 1e-2);
        assert!((p.data()[1] - 0.5).abs() < 1e-2);
    }

    #[test]
    fn nonpositive_temperature_rejected() {
        let z = Tensor::new(vec![2], vec![1.0, 0.0]).unwrap();
        assert!(matches!(log_softmax(&z, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(softmax(&z, -1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn entropy_reference_cases() {
        assert_eq!(entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        let v = 7;
        let uniform = vec![1.0 / v as f64; v];
        assert!((entropy(&uniform).unwrap() - (v as f64).ln()).abs() < 1e-12);
        // -(0.5 ln 0.5 + 2 * 0.25 ln 0.25) = 1.5 ln 2
        let h = entropy(&[0.5, 0.25, 0.25]).unwrap();
        assert!((h - 1.039_720_770_839_917_9).abs() < 1e-15);
        assert!(matches!(entropy(&[0.5, 0.6]), Err(Error::Validation(_))));
    }

    #[test]
    fn softmax_survives_extreme_logits() {
        let z = Tensor::new(vec![3], vec![1e300, -1e300, 0.0]).unwrap();
        let p = softmax(&z, 1.0).unwrap();
        assert!(p.is_finite());
        assert_eq!(p.data()[0], 1.0);
    }

    #[test]
    fn dual_tensor_accumulates() {
        let mut d = DualTensor::new(Tensor::zeros(&[2]));
        d.accumulate(&Tensor::new(vec![2], vec![1.0, 2.0]).unwrap())
            .unwrap();
        d.accumulate(&Tensor::new(vec![2], vec![1.0, 2.0]).unwrap())
            .unwrap();
        assert_eq!(d.grad.data(), &[2.0, 4.0]);
        d.zero_grad();
        assert_eq!(d.grad.data(), &[0.0, 0.0]);
    }
}
