//! Dense kernels. Every reduction runs in ascending index order, so results
//! are bit-reproducible and `matmul` agrees exactly with a naive triple loop.

use crate::error::{Error, Result};
use crate::numeric::{Real, Tensor};

const MR: usize = 4;
const NR: usize = 16;

/// `c[m×n] += a[m×k] · b[k×n]`, all row-major.
///
/// Every `c[i][j]` accumulates its products with `k` ascending, the same
/// order as the textbook loop. The main body keeps a 4×16 tile of `c` in
/// registers; edges fall back to i-k-j loops.
pub fn gemm_nn<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let n_main = n - n % NR;
    let mut i = 0;
    while i + MR <= m {
        let mut j = 0;
        while j < n_main {
            let mut acc = [[T::zero(); NR]; MR];
            for (r, row) in acc.iter_mut().enumerate() {
                row.copy_from_slice(&c[(i + r) * n + j..(i + r) * n + j + NR]);
            }
            for kk in 0..k {
                let b_tile: &[T; NR] = b[kk * n + j..kk * n + j + NR].try_into().expect("tile width");
                for (r, row) in acc.iter_mut().enumerate() {
                    let av = a[(i + r) * k + kk];
                    for (cq, &bq) in row.iter_mut().zip(b_tile) {
                        *cq += av * bq;
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                c[(i + r) * n + j..(i + r) * n + j + NR].copy_from_slice(row);
            }
            j += NR;
        }
        if n_main < n {
            gemm_edge(a, b, c, i..i + MR, k, n, n_main);
        }
        i += MR;
    }
    gemm_edge(a, b, c, i..m, k, n, 0);
}

/// i-k-j product restricted to rows `rows` and columns `from..n`.
fn gemm_edge<T: Real>(
    a: &[T],
    b: &[T],
    c: &mut [T],
    rows: std::ops::Range<usize>,
    k: usize,
    n: usize,
    from: usize,
) {
    for i in rows {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n + from..(i + 1) * n];
        for (kk, &aik) in a_row.iter().enumerate() {
            let b_row = &b[kk * n + from..(kk + 1) * n];
            for (cj, &bj) in c_row.iter_mut().zip(b_row) {
                *cj += aik * bj;
            }
        }
    }
}

/// `c[m×n] += a[k×m]ᵀ · b[k×n]`.
pub fn gemm_tn<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let mut at = vec![T::zero(); m * k];
    transpose_into(a, k, m, &mut at);
    gemm_nn(&at, b, c, m, k, n);
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`. `scratch` receives the transpose of `b`.
pub fn gemm_nt<T: Real>(
    a: &[T],
    b: &[T],
    c: &mut [T],
    m: usize,
    k: usize,
    n: usize,
    scratch: &mut Vec<T>,
) {
    scratch.clear();
    scratch.resize(k * n, T::zero());
    transpose_into(b, n, k, scratch);
    gemm_nn(a, scratch, c, m, k, n);
}

pub fn transpose_into<T: Real>(src: &[T], rows: usize, cols: usize, dst: &mut [T]) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// Matrix product of two rank-2 tensors.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::Shape(format!(
            "matmul inner dimensions differ: {m}x{k} · {k2}x{n}"
        )));
    }
    let mut out = Tensor::zeros(&[m, n]);
    gemm_nn(a.data(), b.data(), out.data_mut(), m, k, n);
    Ok(out)
}

/// Which entries of a score matrix take part in the softmax.
#[derive(Clone, Debug)]
pub enum Mask {
    /// Query `i` of `m` sees keys `0..=i + (n - m)`.
    Causal,
    /// Row-major keep flags, same shape as the scores.
    Keep(Vec<bool>),
}

impl Mask {
    fn keeps(&self, i: usize, j: usize, m: usize, n: usize) -> bool {
        match self {
            Mask::Causal => j + m <= i + n,
            Mask::Keep(flags) => flags[i * n + j],
        }
    }
}

/// Row-wise softmax with max subtraction. Masked entries are exactly zero.
pub fn softmax_rows<T: Real>(x: &Tensor<T>, mask: Option<&Mask>) -> Result<Tensor<T>> {
    let (m, n) = x.dims2()?;
    if let Some(Mask::Keep(flags)) = mask {
        if flags.len() != m * n {
            return Err(Error::Shape(format!(
                "mask has {} flags for a {m}x{n} matrix",
                flags.len()
            )));
        }
    }
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        let row = x.row(i);
        let keep = |j: usize| mask.map_or(true, |mk| mk.keeps(i, j, m, n));
        let mut max = T::neg_infinity();
        let mut any = false;
        for (j, &v) in row.iter().enumerate() {
            if keep(j) {
                any = true;
                if v > max {
                    max = v;
                }
            }
        }
        if !any {
            return Err(Error::Numerical(format!("softmax row {i} is fully masked")));
        }
        let dst = &mut out.data_mut()[i * n..(i + 1) * n];
        let mut sum = T::zero();
        for (j, &v) in row.iter().enumerate() {
            if keep(j) {
                let e = (v - max).exp();
                dst[j] = e;
                sum += e;
            }
        }
        let inv = T::one() / sum;
        for d in dst.iter_mut() {
            *d *= inv;
        }
    }
    Ok(out)
}

/// In-place causal softmax of a `t×t` score block; entries above the
/// diagonal are set to zero.
pub(crate) fn causal_softmax_inplace<T: Real>(s: &mut [T], t: usize) {
    for i in 0..t {
        let row = &mut s[i * t..(i + 1) * t];
        let mut max = row[0];
        for &v in &row[1..=i] {
            if v > max {
                max = v;
            }
        }
        let mut sum = T::zero();
        for v in row[..=i].iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = T::one() / sum;
        for v in row[..=i].iter_mut() {
            *v *= inv;
        }
        for v in row[i + 1..].iter_mut() {
            *v = T::zero();
        }
    }
}
