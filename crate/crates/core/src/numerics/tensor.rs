use crate::error::{dim_err, Error, Result};

/// Dense row-major f64 array with an optional gradient slot.
#[derive(Clone, Debug)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&s| s == 0) {
            return Err(dim_err(format!("shape {shape:?} must be non-empty with positive extents")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(dim_err(format!("shape {shape:?} needs {n} elements, got {}", data.len())));
        }
        Ok(Tensor { shape, data, grad: None })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n], grad: None }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; n], grad: None }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds an `[rows.len() × cols]` matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|row| row.len() != c) {
            return Err(dim_err("ragged rows"));
        }
        Tensor::new(vec![r, c], rows.concat())
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Tensor::new(vec![n], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    /// Rows when viewed as a matrix: product of all leading dims.
    pub fn rows(&self) -> usize {
        self.data.len() / self.cols()
    }

    /// Size of the trailing axis.
    pub fn cols(&self) -> usize {
        *self.shape.last().expect("non-empty shape")
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.iter().any(|&s| s == 0) {
            return Err(dim_err(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        self.shape = shape;
        self.grad = None;
        Ok(self)
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Adds `g` into the gradient slot, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f64]) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(dim_err(format!("gradient of length {} for tensor {:?}", g.len(), self.shape)));
        }
        let slot = self.grad.get_or_insert_with(|| vec![0.0; g.len()]);
        for (s, v) in slot.iter_mut().zip(g) {
            *s += v;
        }
        Ok(())
    }

    pub fn take_grad(&mut self) -> Option<Vec<f64>> {
        self.grad.take()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

fn as_matrix(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    if t.shape.len() != 2 {
        return Err(dim_err(format!("{what} must be a matrix, got shape {:?}", t.shape)));
    }
    Ok((t.shape[0], t.shape[1]))
}

/// `out[m×n] += a[m×k] · b[k×n]`.
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`.
pub(crate) fn gemm_bt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (x, y) in a_row.iter().zip(b_row) {
                s += x * y;
            }
            out[i * n + j] += s;
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · b[m×n]`.
pub(crate) fn gemm_at_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// Matrix product of `a[m×k]` and `b[k×n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = as_matrix(a, "left operand")?;
    let (k2, n) = as_matrix(b, "right operand")?;
    if k != k2 {
        return Err(dim_err(format!("matmul inner dimensions disagree: {:?} · {:?}", a.shape, b.shape)));
    }
    let mut out = vec![0.0; m * n];
    gemm_acc(&a.data, &b.data, &mut out, m, k, n);
    Tensor::new(vec![m, n], out)
}

pub(crate) fn softmax_slice(x: &[f64], out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Softmax along `axis` (negative values count from the end).
pub fn softmax(x: &Tensor, axis: isize) -> Result<Tensor> {
    let nd = x.shape.len() as isize;
    let ax = if axis < 0 { nd + axis } else { axis };
    if ax < 0 || ax >= nd {
        return Err(dim_err(format!("axis {axis} out of range for shape {:?}", x.shape)));
    }
    let ax = ax as usize;
    let n = x.shape[ax];
    let inner: usize = x.shape[ax + 1..].iter().product();
    let outer: usize = x.shape[..ax].iter().product();
    let mut out = vec![0.0; x.data.len()];
    let mut buf = vec![0.0; n];
    let mut res = vec![0.0; n];
    for o in 0..outer {
        for i in 0..inner {
            for j in 0..n {
                buf[j] = x.data[(o * n + j) * inner + i];
            }
            softmax_slice(&buf, &mut res);
            for j in 0..n {
                out[(o * n + j) * inner + i] = res[j];
            }
        }
    }
    Tensor::new(x.shape.clone(), out)
}

pub(crate) struct LayerNormOut {
    pub y: Vec<f64>,
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub(crate) fn layernorm_raw(x: &[f64], gamma: &[f64], beta: &[f64], d: usize, eps: f64) -> LayerNormOut {
    let rows = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let denom = var + eps;
        // A constant row with eps = 0 normalizes to zeros rather than NaN.
        let is = if denom > 0.0 { 1.0 / denom.sqrt() } else { 0.0 };
        inv_std[r] = is;
        for j in 0..d {
            let xh = (row[j] - mean) * is;
            xhat[r * d + j] = xh;
            y[r * d + j] = gamma[j] * xh + beta[j];
        }
    }
    LayerNormOut { y, xhat, inv_std }
}

/// Per-row normalization followed by the affine `γ·x̂ + β`.
pub fn layernorm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let d = x.cols();
    if gamma.len() != d || beta.len() != d {
        return Err(dim_err(format!("layernorm width {d} vs gamma {:?} / beta {:?}", gamma.shape, beta.shape)));
    }
    if eps < 0.0 {
        return Err(Error::Numeric(format!("negative layernorm eps {eps}")));
    }
    let out = layernorm_raw(&x.data, &gamma.data, &beta.data, d, eps);
    Tensor::new(x.shape.clone(), out.y)
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor { shape: x.shape.clone(), data: x.data.iter().map(|&v| v.max(0.0)).collect(), grad: None }
}

/// Mean negative log-probability of the target classes; returns the loss
/// and the row-wise softmax probabilities.
pub(crate) fn cross_entropy_raw(logits: &[f64], classes: usize, targets: &[usize]) -> Result<(f64, Vec<f64>)> {
    let batch = targets.len();
    if logits.len() != batch * classes {
        return Err(dim_err(format!("{} logits for batch {batch} × {classes} classes", logits.len())));
    }
    let mut probs = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for (b, &t) in targets.iter().enumerate() {
        if t >= classes {
            return Err(Error::Index(format!("target {t} out of range for {classes} classes (row {b})")));
        }
        let row = &logits[b * classes..(b + 1) * classes];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[t];
        for c in 0..classes {
            probs[b * classes + c] = (row[c] - lse).exp();
        }
    }
    Ok((loss / batch as f64, probs))
}

pub fn cross_entropy_logits(logits: &Tensor, targets: &[usize]) -> Result<f64> {
    let (_, c) = as_matrix(logits, "logits")?;
    if c < 2 {
        return Err(dim_err("cross entropy needs at least two classes"));
    }
    if logits.rows() != targets.len() {
        return Err(dim_err(format!("{} logit rows but {} targets", logits.rows(), targets.len())));
    }
    cross_entropy_raw(&logits.data, c, targets).map(|(l, _)| l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::new(vec![r, c], (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn matmul_identity_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&mut rng, 4, 3);
        assert_eq!(matmul(&a, &Tensor::eye(3)).unwrap(), a);
        let z = matmul(&a, &Tensor::zeros(&[3, 2])).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(&mut rng, 7, 5);
        let b = random(&mut rng, 5, 3);
        let c = matmul(&a, &b).unwrap();
        for i in 0..7 {
            for j in 0..3 {
                let mut s = 0.0;
                for p in 0..5 {
                    s += a.at(i, p) * b.at(p, j);
                }
                assert!((c.at(i, j) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[4, 2])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn softmax_cases() {
        let s = softmax(&Tensor::vector(vec![0.0, 0.0]).unwrap(), -1).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax(&Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap(), 0).unwrap();
        // direct evaluation of exp(x_i) / Σ exp(x_j)
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        for (i, want) in [0.09003, 0.24473, 0.66524].iter().enumerate() {
            assert!((s.data()[i] - want).abs() < 1e-5);
            assert!((s.data()[i] - ((i + 1) as f64).exp() / z).abs() < 1e-15);
        }
        let shifted = softmax(&Tensor::vector(vec![101.0, 102.0, 103.0]).unwrap(), 0).unwrap();
        assert!(shifted.max_abs_diff(&s) < 1e-12);
    }

    #[test]
    fn softmax_along_first_axis() {
        let x = Tensor::from_rows(&[vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let s = softmax(&x, 0).unwrap();
        assert!(s.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn layernorm_cases() {
        let one = Tensor::filled(&[3], 1.0);
        let zero = Tensor::zeros(&[3]);
        let c = Tensor::from_rows(&[vec![5.0, 5.0, 5.0]]).unwrap();
        assert!(layernorm(&c, &one, &zero, 1e-5).unwrap().data().iter().all(|&v| v == 0.0));
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let beta = Tensor::vector(vec![0.3, -0.2, 0.7]).unwrap();
        assert_eq!(layernorm(&x, &zero, &beta, 1e-5).unwrap().data(), beta.data());
        let y = layernorm(&x, &one, &zero, 0.0).unwrap();
        for (got, want) in y.data().iter().zip([-1.22474, 0.0, 1.22474]) {
            assert!((got - want).abs() < 1e-5);
        }
        assert!((y.data()[2] - 1.5f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn relu_cases() {
        let x = Tensor::vector(vec![-1.0, 0.0, 2.0]).unwrap();
        let r = relu(&x);
        assert_eq!(r.data(), &[0.0, 0.0, 2.0]);
        assert_eq!(relu(&r), r);
    }

    #[test]
    fn cross_entropy_cases() {
        let l = Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap();
        assert!((cross_entropy_logits(&l, &[0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        let l = Tensor::from_rows(&[vec![100.0, 0.0]]).unwrap();
        assert!(cross_entropy_logits(&l, &[0]).unwrap() < 1e-40);
        assert!(matches!(cross_entropy_logits(&l, &[2]), Err(Error::Index(_))));
    }

    #[test]
    fn cross_entropy_matches_log_sum_exp() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits = random(&mut rng, 6, 4);
        let targets: Vec<usize> = (0..6).map(|_| rng.gen_range(0..4)).collect();
        let mut want = 0.0;
        for (b, &t) in targets.iter().enumerate() {
            let row = logits.row(b);
            let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
            want += lse - row[t];
        }
        want /= 6.0;
        assert!((cross_entropy_logits(&logits, &targets).unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn tensor_shape_invariant() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
    }
}
