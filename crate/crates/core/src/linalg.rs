//! Dense row-major matrices and the GEMM kernels used by the graph and the MLP.

use crate::par;

/// Output rows handled by one GEMM task. Fixed so results do not depend on
/// the thread count.
const ROW_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix buffer has wrong length");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Strided view of a GEMM operand.
#[derive(Clone, Copy)]
struct Operand<'a> {
    data: &'a [f64],
    row_stride: usize,
    col_stride: usize,
}

/// `c = a · b` where `a` is logically `m×k` and `b` is `k×n`.
fn gemm(m: usize, k: usize, n: usize, a: Operand<'_>, b: Operand<'_>, c: &mut [f64]) {
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    par::for_each_chunk_mut(c, ROW_CHUNK * n, |chunk_idx, c_chunk| {
        let r0 = chunk_idx * ROW_CHUNK;
        let rows = c_chunk.len() / n;
        let a_sub = &a.data[r0 * a.row_stride..];
        // SAFETY: every index touched by dgemm lies inside the slices: the
        // operand views were built from matrices whose logical shapes match
        // (m, k, n) and `a_sub` starts at the first row of this chunk.
        unsafe {
            matrixmultiply::dgemm(
                rows,
                k,
                n,
                1.0,
                a_sub.as_ptr(),
                a.row_stride as isize,
                a.col_stride as isize,
                b.data.as_ptr(),
                b.row_stride as isize,
                b.col_stride as isize,
                0.0,
                c_chunk.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    });
}

fn plain(m: &Matrix) -> Operand<'_> {
    Operand {
        data: &m.data,
        row_stride: m.cols,
        col_stride: 1,
    }
}

fn transposed(m: &Matrix) -> Operand<'_> {
    Operand {
        data: &m.data,
        row_stride: 1,
        col_stride: m.cols,
    }
}

/// `a · b`
pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols, b.rows, "matmul: inner dimensions differ");
    let mut c = Matrix::zeros(a.rows, b.cols);
    gemm(a.rows, a.cols, b.cols, plain(a), plain(b), &mut c.data);
    c
}

/// `aᵀ · b`
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.rows, b.rows, "matmul_tn: inner dimensions differ");
    let mut c = Matrix::zeros(a.cols, b.cols);
    gemm(a.cols, a.rows, b.cols, transposed(a), plain(b), &mut c.data);
    c
}

/// `a · bᵀ`
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols, b.cols, "matmul_nt: inner dimensions differ");
    let mut c = Matrix::zeros(a.rows, b.rows);
    gemm(a.rows, a.cols, b.rows, plain(a), transposed(b), &mut c.data);
    c
}

/// Squared Euclidean distances between all pairs of rows, diagonal exactly 0.
pub fn pairwise_sq_dists(x: &Matrix) -> Matrix {
    let gram = matmul_nt(x, x);
    let norms: Vec<f64> = (0..x.rows).map(|i| gram.get(i, i)).collect();
    let n = x.rows;
    let mut d = gram;
    par::for_each_chunk_mut(&mut d.data, n, |i, row| {
        for (j, v) in row.iter_mut().enumerate() {
            *v = if i == j {
                0.0
            } else {
                (norms[i] + norms[j] - 2.0 * *v).max(0.0)
            };
        }
    });
    d
}

/// Determinant of a small square matrix by Gaussian elimination with partial pivoting.
pub fn det_small(m: &Matrix) -> f64 {
    assert_eq!(m.rows, m.cols);
    let n = m.rows;
    match n {
        0 => 1.0,
        1 => m.data[0],
        2 => m.data[0] * m.data[3] - m.data[1] * m.data[2],
        _ => {
            let mut a = m.data.clone();
            let mut det = 1.0;
            for col in 0..n {
                let piv = (col..n)
                    .max_by(|&x, &y| a[x * n + col].abs().total_cmp(&a[y * n + col].abs()))
                    .unwrap();
                if a[piv * n + col] == 0.0 {
                    return 0.0;
                }
                if piv != col {
                    for j in 0..n {
                        a.swap(col * n + j, piv * n + j);
                    }
                    det = -det;
                }
                let p = a[col * n + col];
                det *= p;
                for r in col + 1..n {
                    let f = a[r * n + col] / p;
                    for j in col..n {
                        a[r * n + j] -= f * a[col * n + j];
                    }
                }
            }
            det
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        Matrix::from_fn(a.rows(), b.cols(), |i, j| {
            (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum()
        })
    }

    #[test]
    fn gemm_variants_match_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // 130 rows crosses two chunk boundaries.
        let a = random(130, 17, &mut rng);
        let b = random(17, 9, &mut rng);
        let want = naive(&a, &b);
        let close = |x: &Matrix, y: &Matrix| {
            x.as_slice()
                .iter()
                .zip(y.as_slice())
                .all(|(p, q)| (p - q).abs() < 1e-12)
        };
        assert!(close(&matmul(&a, &b), &want));
        assert!(close(&matmul_tn(&a.transpose(), &b), &want));
        assert!(close(&matmul_nt(&a, &b.transpose()), &want));
    }

    #[test]
    fn pairwise_distances() {
        let x = Matrix::from_vec(3, 2, vec![0.0, 0.0, 3.0, 4.0, 0.0, 1.0]);
        let d = pairwise_sq_dists(&x);
        assert_eq!(d.get(0, 0), 0.0);
        assert!((d.get(0, 1) - 25.0).abs() < 1e-12);
        assert!((d.get(1, 2) - 18.0).abs() < 1e-12);
        assert_eq!(d.get(1, 2), d.get(2, 1));
    }

    #[test]
    fn determinant() {
        let m = Matrix::from_vec(3, 3, vec![2.0, 0.0, 1.0, 1.0, 3.0, 2.0, 1.0, 1.0, 2.0]);
        assert!((det_small(&m) - 6.0).abs() < 1e-12);
    }
}
