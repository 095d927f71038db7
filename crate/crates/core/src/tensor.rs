//! Dense row-major tensors and the deterministic kernels behind the tape.
//!
//! Every reduction accumulates in index order, one output element at a time,
//! so results are bit-reproducible regardless of how the caller schedules work.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if numel(&shape) != data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Count {
                op: "tensor",
                expected: data.len(),
                shape,
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor of shape {shape:?}")));
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    /// Skips the finiteness scan. Shapes are still checked in debug builds.
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_raw(shape.to_vec(), vec![0.0; numel(shape)])
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::from_raw(shape.to_vec(), vec![value; numel(shape)])
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_raw(Vec::new(), vec![value])
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let data = (0..numel(shape)).map(&mut f).collect();
        Self::from_raw(shape.to_vec(), data)
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
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

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn accumulate_grad(&mut self, g: &[f64]) {
        assert_eq!(g.len(), self.data.len(), "gradient length");
        match &mut self.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.data.len() {
            return Err(Error::Count {
                op: "reshape",
                expected: self.data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(Self::from_raw(shape.to_vec(), self.data.clone()))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        check_perm(perm, self.shape.len())?;
        let (shape, data) = permute_data(&self.data, &self.shape, perm);
        Ok(Self::from_raw(shape, data))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc + v * v)
    }
}

pub(crate) fn check_perm(perm: &[usize], rank: usize) -> Result<()> {
    let mut seen = vec![false; rank];
    let ok = perm.len() == rank
        && perm.iter().all(|&p| {
            if p >= rank || seen[p] {
                false
            } else {
                seen[p] = true;
                true
            }
        });
    if ok {
        Ok(())
    } else {
        Err(Error::Permutation {
            perm: perm.to_vec(),
            rank,
        })
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Output axis `i` is input axis `perm[i]`.
pub(crate) fn permute_data(
    data: &[f64],
    shape: &[usize],
    perm: &[usize],
) -> (Vec<usize>, Vec<f64>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    let rank = out_shape.len();
    if rank == 0 {
        out.extend_from_slice(data);
        return (out_shape, out);
    }
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    let last = rank - 1;
    let (inner_len, inner_stride) = (out_shape[last], src_strides[last]);
    while out.len() < n {
        if inner_stride == 1 {
            out.extend_from_slice(&data[src..src + inner_len]);
        } else {
            let mut s = src;
            for _ in 0..inner_len {
                out.push(data[s]);
                s += inner_stride;
            }
        }
        // advance the multi-index over all but the innermost axis
        let mut ax = last;
        loop {
            if ax == 0 {
                break;
            }
            ax -= 1;
            idx[ax] += 1;
            src += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    (out_shape, out)
}

pub(crate) fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// `c[m×p] += a[m×k] · b[k×p]`.
///
/// Each output starts from its current value and accumulates `a[i,kk]·b[kk,j]`
/// for `kk = 0..k` in order. The blocked paths only keep those running sums in
/// registers, so every path produces the same bits.
#[cfg(test)]
fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, p: usize) {
    debug_assert_eq!(a.len(), m * k);
    gemm_strided::<true>(a, k, 1, b, OutPtr::from(c), m, k, p);
}

/// `a[m×k] · b[k×p]` into a fresh buffer, bit-identical to accumulating
/// into zeros.
pub(crate) fn gemm_new(a: &[f64], b: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(m * p);
    gemm_new_into(a, b, &mut out, m, k, p);
    out
}

/// Appends `a[m×k] · b[k×p]` to `out` without zero-filling first.
pub(crate) fn gemm_new_into(
    a: &[f64],
    b: &[f64],
    out: &mut Vec<f64>,
    m: usize,
    k: usize,
    p: usize,
) {
    debug_assert_eq!(a.len(), m * k);
    let start = out.len();
    out.reserve(m * p);
    let spare = &mut out.spare_capacity_mut()[..m * p];
    // `MaybeUninit<f64>` has the layout of `f64`; the fresh-mode kernel only
    // writes through this pointer, never reads, and covers every element.
    let c = OutPtr {
        ptr: spare.as_mut_ptr() as *mut f64,
        len: m * p,
    };
    gemm_strided::<false>(a, k, 1, b, c, m, k, p);
    // SAFETY: all `m·p` elements were written above.
    unsafe { out.set_len(start + m * p) };
}

/// `aᵀ · g` into a fresh `k×p` buffer, bit-identical to [`gemm_tn_acc`] on zeros.
pub(crate) fn gemm_tn_new(a: &[f64], g: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    let mut out = Vec::with_capacity(k * p);
    let spare = &mut out.spare_capacity_mut()[..k * p];
    let c = OutPtr {
        ptr: spare.as_mut_ptr() as *mut f64,
        len: k * p,
    };
    gemm_strided::<false>(a, 1, k, g, c, k, m, p);
    // SAFETY: the fresh-mode kernel wrote all `k·p` elements.
    unsafe { out.set_len(k * p) };
    out
}

/// `c[m×p] += A · b` with `A[i][kk] = a[i·rs + kk·cs]` and row-major `b[k×p]`.
/// Every output accumulates its `k` products in increasing `kk` order,
/// starting from its current value (`ACC`) or from zero (never reading `c`).
#[allow(clippy::too_many_arguments)]
fn gemm_strided<const ACC: bool>(
    a: &[f64],
    rs: usize,
    cs: usize,
    b: &[f64],
    c: OutPtr,
    m: usize,
    k: usize,
    p: usize,
) {
    debug_assert_eq!(b.len(), k * p);
    debug_assert_eq!(c.len, m * p);
    let mut i = 0;
    while i + 4 <= m {
        let mut j = 0;
        while j + 8 <= p {
            block::<4, 8, ACC>(a, rs, cs, b, c, i, j, k, p);
            j += 8;
        }
        while j + 4 <= p {
            block::<4, 4, ACC>(a, rs, cs, b, c, i, j, k, p);
            j += 4;
        }
        while j < p {
            block::<4, 1, ACC>(a, rs, cs, b, c, i, j, k, p);
            j += 1;
        }
        i += 4;
    }
    while i < m {
        let mut j = 0;
        while j + 8 <= p {
            block::<1, 8, ACC>(a, rs, cs, b, c, i, j, k, p);
            j += 8;
        }
        while j < p {
            block::<1, 1, ACC>(a, rs, cs, b, c, i, j, k, p);
            j += 1;
        }
        i += 1;
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn block<const R: usize, const W: usize, const ACC: bool>(
    a: &[f64],
    rs: usize,
    cs: usize,
    b: &[f64],
    c: OutPtr,
    i: usize,
    j: usize,
    k: usize,
    p: usize,
) {
    // Every index touched below is in bounds: rows i..i+R < m, columns
    // j..j+W <= p, and kk < k, which the callers guarantee and these
    // asserts pin against the slice lengths.
    assert!((i + R - 1) * p + j + W <= c.len);
    assert!(k == 0 || (k - 1) * p + j + W <= b.len());
    assert!(k == 0 || (i + R - 1) * rs + (k - 1) * cs < a.len());
    let mut acc = [[0.0f64; W]; R];
    if ACC {
        for (r, row) in acc.iter_mut().enumerate() {
            // SAFETY: in bounds (asserted); accumulate mode only runs on
            // initialized output.
            *row = unsafe { *(c.ptr.add((i + r) * p + j) as *const [f64; W]) };
        }
    }
    let (ap, bp) = (a.as_ptr(), b.as_ptr());
    for kk in 0..k {
        // SAFETY: bounds asserted above.
        let bv: [f64; W] = unsafe { *(bp.add(kk * p + j) as *const [f64; W]) };
        for (r, row) in acc.iter_mut().enumerate() {
            let av = unsafe { *ap.add((i + r) * rs + kk * cs) };
            for w in 0..W {
                row[w] += av * bv[w];
            }
        }
    }
    for (r, row) in acc.iter().enumerate() {
        // SAFETY: in bounds (asserted); writes never read the destination.
        unsafe { (c.ptr.add((i + r) * p + j) as *mut [f64; W]).write(*row) };
    }
}

/// Output of the gemm kernel: possibly uninitialized in fresh mode, so it is
/// addressed through a raw pointer rather than a slice.
#[derive(Clone, Copy)]
struct OutPtr {
    ptr: *mut f64,
    len: usize,
}

impl From<&mut [f64]> for OutPtr {
    fn from(c: &mut [f64]) -> Self {
        Self {
            ptr: c.as_mut_ptr(),
            len: c.len(),
        }
    }
}

#[cfg(test)]
fn transpose2(b: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    transpose_into(b, &mut out, rows, cols);
    out
}

pub(crate) fn transpose_into(b: &[f64], out: &mut [f64], rows: usize, cols: usize) {
    for (r, row) in b.chunks_exact(cols).enumerate() {
        for (c, &v) in row.iter().enumerate() {
            out[c * rows + r] = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_count_mismatch_and_nan() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(matches!(
            Tensor::new(vec![1], vec![f64::NAN]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn reshape_is_row_major() {
        let t = Tensor::new(vec![6], (0..6).map(f64::from).collect()).unwrap();
        let r = t.reshape(&[2, 3]).unwrap();
        // element 4 sits at (1, 1)
        assert_eq!(r.data()[3 + 1], 4.0);
        assert!(t.reshape(&[4]).is_err());
    }

    #[test]
    fn permute_round_trip_bit_exact() {
        let t = Tensor::from_fn(&[2, 3, 4], |i| (i as f64).sin());
        let p = t.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        let back = p.permute(&inverse_perm(&[2, 0, 1])).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn frame_pixel_layout_moves_to_pixel_frame() {
        // (f=2, h=2, w=2, c=3) flattened to (f, hw, c) then permuted to (hw, f, c)
        let t = Tensor::from_fn(&[2, 2, 2, 3], |i| i as f64);
        let flat = t.reshape(&[2, 4, 3]).unwrap();
        let moved = flat.permute(&[1, 0, 2]).unwrap();
        assert_eq!(moved.shape(), &[4, 2, 3]);
        // source index of (frame 1, pixel 2, ch 0) is 1*12 + 2*3 + 0
        let src = 12 + 6;
        let dst = 2 * 6 + 3;
        assert_eq!(moved.data()[dst], t.data()[src]);
    }

    fn naive(a: &[f64], b: &[f64], c0: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
        let mut c = c0.to_vec();
        for i in 0..m {
            for j in 0..p {
                for kk in 0..k {
                    c[i * p + j] += a[i * k + kk] * b[kk * p + j];
                }
            }
        }
        c
    }

    #[test]
    fn blocked_gemm_matches_naive_bit_for_bit() {
        for (m, k, p) in [
            (1, 1, 1),
            (3, 5, 2),
            (4, 7, 8),
            (9, 3, 13),
            (17, 16, 21),
            (8, 16, 8),
        ] {
            let a: Vec<f64> = (0..m * k)
                .map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.1)
                .collect();
            let b: Vec<f64> = (0..k * p)
                .map(|i| ((i * 13 % 7) as f64 - 3.0) / 1.7)
                .collect();
            let c0: Vec<f64> = (0..m * p).map(|i| (i as f64).sin()).collect();
            let mut c = c0.clone();
            gemm_acc(&a, &b, &mut c, m, k, p);
            let want = naive(&a, &b, &c0, m, k, p);
            assert!(c.iter().zip(&want).all(|(x, y)| x.to_bits() == y.to_bits()));
            let fresh = gemm_new(&a, &b, m, k, p);
            let want = naive(&a, &b, &vec![0.0; m * p], m, k, p);
            assert!(fresh
                .iter()
                .zip(&want)
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn transposed_gemm_matches_explicit_transpose() {
        for (m, k, p) in [(1, 1, 1), (5, 3, 2), (16, 8, 9), (13, 4, 17)] {
            let a: Vec<f64> = (0..m * k)
                .map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.1)
                .collect();
            let g: Vec<f64> = (0..m * p)
                .map(|i| ((i * 13 % 7) as f64 - 3.0) / 1.7)
                .collect();
            let c = gemm_tn_new(&a, &g, m, k, p);
            let want = naive(&transpose2(&a, m, k), &g, &vec![0.0; k * p], k, m, p);
            assert!(c.iter().zip(&want).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn bad_permutations_rejected() {
        let t = Tensor::zeros(&[2, 2]);
        assert!(t.permute(&[0, 0]).is_err());
        assert!(t.permute(&[0]).is_err());
        assert!(t.permute(&[0, 2]).is_err());
    }
}
