use std::fmt;

/// Clamp added inside `log` when evaluating cross-entropy.
pub const CE_CLAMP: f64 = 1e-12;

/// Dense row-major tensor of 64-bit floats.
///
/// Rank 1 (`[n]`) and rank 2 (`[rows, cols]`) cover everything in this
/// workspace; scalars are rank-1 tensors of length 1.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 8 {
            write!(f, " {:?}", self.data)
        } else {
            write!(f, " [{} values]", self.data.len())
        }
    }
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Self {
        let n: usize = shape.iter().product();
        assert!(
            n == data.len(),
            "tensor shape {:?} wants {} values, got {}",
            shape,
            n,
            data.len()
        );
        assert!(shape.iter().all(|&d| d > 0), "tensor shape {shape:?} has a zero dim");
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor::new(shape, vec![0.0; n])
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor::new(shape, vec![value; n])
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::new(&[1], vec![value])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        assert!(!rows.is_empty(), "from_rows needs at least one row");
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert!(r.len() == cols, "ragged rows: {} vs {}", r.len(), cols);
            data.extend_from_slice(r);
        }
        Tensor::new(&[rows.len(), cols], data)
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

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a length-1 tensor.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on non-scalar tensor {:?}", self.shape);
        self.data[0]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Rows of a rank-2 tensor; rank-1 tensors count as a single row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            2 => self.shape[0],
            r => panic!("rows() on rank-{r} tensor"),
        }
    }

    /// Columns of a rank-2 tensor, or the length of a rank-1 tensor.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            1 => self.shape[0],
            2 => self.shape[1],
            r => panic!("cols() on rank-{r} tensor"),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn get2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        let c = self.cols();
        self.data[i * c + j] = v;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::new(&self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        assert_same_shape("add", self, other);
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Tensor::new(&self.shape, data)
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        assert_same_shape("sub", self, other);
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Tensor::new(&self.shape, data)
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        assert_same_shape("mul", self, other);
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        Tensor::new(&self.shape, data)
    }

    /// In-place `self += other * s`.
    pub fn axpy(&mut self, other: &Tensor, s: f64) {
        assert_same_shape("axpy", self, other);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b * s;
        }
    }

    /// Standard matrix product. Rank-1 operands are treated as `1 x n` (lhs)
    /// or rejected (rhs must be rank 2).
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = match other.shape.len() {
            2 => (other.shape[0], other.shape[1]),
            r => panic!("matmul rhs must be rank 2, got rank {r}"),
        };
        assert!(
            k == k2,
            "matmul dimension mismatch: lhs {:?} x rhs {:?}",
            self.shape,
            other.shape
        );
        let mut out = vec![0.0; m * n];
        matmul_into(&self.data, &other.data, &mut out, m, k, n);
        let shape = if self.rank() == 1 { vec![n] } else { vec![m, n] };
        Tensor::new(&shape, out)
    }

    /// `self · otherᵀ` where both are rank 2 (`m x k` · `(n x k)ᵀ -> m x n`).
    pub fn matmul_nt(&self, other: &Tensor) -> Tensor {
        let (m, k) = (self.rows(), self.cols());
        let (n, k2) = (other.rows(), other.cols());
        assert!(
            k == k2,
            "matmul_nt dimension mismatch: lhs {:?} x rhs {:?}",
            self.shape,
            other.shape
        );
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = self.row(i);
            let orow = &mut out[i * n..(i + 1) * n];
            for (j, o) in orow.iter_mut().enumerate() {
                let brow = other.row(j);
                let mut acc = 0.0;
                for l in 0..k {
                    acc += arow[l] * brow[l];
                }
                *o = acc;
            }
        }
        Tensor::new(&[m, n], out)
    }

    /// `selfᵀ · other` where both are rank 2 (`(m x k)ᵀ` · `m x n -> k x n`).
    pub fn matmul_tn(&self, other: &Tensor) -> Tensor {
        let (m, k) = (self.rows(), self.cols());
        let (m2, n) = (other.rows(), other.cols());
        assert!(
            m == m2,
            "matmul_tn dimension mismatch: lhs {:?} x rhs {:?}",
            self.shape,
            other.shape
        );
        let mut out = vec![0.0; k * n];
        for i in 0..m {
            let arow = self.row(i);
            let grow = other.row(i);
            for (l, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let orow = &mut out[l * n..(l + 1) * n];
                for (o, &g) in orow.iter_mut().zip(grow) {
                    *o += a * g;
                }
            }
        }
        Tensor::new(&[k, n], out)
    }
}

fn assert_same_shape(op: &str, a: &Tensor, b: &Tensor) {
    assert!(
        a.shape == b.shape,
        "{op}: shape mismatch {:?} vs {:?}",
        a.shape,
        b.shape
    );
}

/// `out += a · b` for row-major buffers, ikj order so the inner loop vectorizes.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (l, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `Softmax((logits - offset) / temperature)` along the last axis.
///
/// `offset` is a rank-1 tensor broadcast across rows (pass zeros for plain
/// softmax). Stabilized by subtracting the row max before exponentiation.
pub fn softmax_with_temperature(logits: &Tensor, offset: &Tensor, temperature: f64) -> Tensor {
    assert!(temperature > 0.0, "softmax temperature must be > 0, got {temperature}");
    let k = logits.cols();
    assert!(
        offset.rank() == 1 && offset.cols() == k,
        "softmax offset shape {:?} does not match logits {:?}",
        offset.shape(),
        logits.shape()
    );
    let mut out = logits.clone();
    for i in 0..logits.rows() {
        let row = out.row_mut(i);
        softmax_row(row, offset.data(), temperature);
    }
    out
}

pub(crate) fn softmax_row(row: &mut [f64], offset: &[f64], temperature: f64) {
    for (v, &o) in row.iter_mut().zip(offset) {
        *v = (*v - o) / temperature;
    }
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `-Σ p_i · ln(q_i + CE_CLAMP)` for two distributions over the same support.
///
/// Both inputs must be nonnegative and sum to 1 within 1e-6 (checked in
/// debug builds).
pub fn cross_entropy(p: &Tensor, q: &Tensor) -> f64 {
    assert!(
        p.shape() == q.shape(),
        "cross_entropy: shape mismatch {:?} vs {:?}",
        p.shape(),
        q.shape()
    );
    debug_assert!(is_distribution(p.data()), "cross_entropy: p is not a distribution: {p:?}");
    debug_assert!(is_distribution(q.data()), "cross_entropy: q is not a distribution: {q:?}");
    cross_entropy_slices(p.data(), q.data())
}

pub(crate) fn cross_entropy_slices(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        acc -= pi * (qi + CE_CLAMP).ln();
    }
    acc
}

pub(crate) fn is_distribution(v: &[f64]) -> bool {
    v.iter().all(|&x| x >= 0.0) && (v.iter().sum::<f64>() - 1.0).abs() <= 1e-6
}
