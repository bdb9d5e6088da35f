//! Scalar abstraction over `f32` (training) and `f64` (gradient checking),
//! plus the one performance-critical kernel behind every conv/affine layer.

use std::fmt::{Debug, Display};

use num_traits::Float;

/// Element type of tensors. Training runs in `f32`, gradient checks in `f64`.
pub trait Real:
    Float + num_traits::NumAssignOps + Debug + Display + Default + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn from_f32(x: f32) -> Self;
    fn to_f32(self) -> f32;

    /// `c[m x n] += a[m x k] * b[k x n]`, all row-major.
    ///
    /// Every conv1d, transposed conv and affine layer (forward and backward)
    /// funnels through this routine, so the `f32` implementation dispatches
    /// to a SIMD-specialized build of the loop when the CPU supports it.
    fn gemm_acc(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], c: &mut [Self]) {
        gemm_acc_generic(m, k, n, a, b, c);
    }
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f32(x: f32) -> Self {
        x
    }
    fn to_f32(self) -> f32 {
        self
    }
    fn gemm_acc(m: usize, k: usize, n: usize, a: &[Self], b: &[Self], c: &mut [Self]) {
        simd::gemm_acc_f32(m, k, n, a, b, c);
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn from_f32(x: f32) -> Self {
        x as f64
    }
    fn to_f32(self) -> f32 {
        self as f32
    }
}

/// Rows of `b` processed per pass so the active slice of `b` stays cache
/// resident when `k` is large (the flattened-feature affine layers have
/// `k` in the thousands). Tiling only reorders work across output rows;
/// each `c[i][j]` still accumulates its `k` terms in ascending order, so
/// results are bit-identical to the untiled loop.
const K_TILE: usize = 128;

/// Portable fallback body. The accumulation order (rank-1 updates in
/// ascending `k` order per output element) is identical in every
/// implementation, so results are deterministic for a given binary on a
/// given machine.
#[inline(always)]
fn gemm_acc_generic<E: Real>(m: usize, k: usize, n: usize, a: &[E], b: &[E], c: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for kt in (0..k).step_by(K_TILE) {
        let kend = (kt + K_TILE).min(k);
        let btile = &b[kt * n..kend * n];
        for (arow, crow) in a.chunks_exact(k).zip(c.chunks_exact_mut(n)) {
            for (&alpha, brow) in arow[kt..kend].iter().zip(btile.chunks_exact(n)) {
                if alpha != E::zero() {
                    for (cj, &bj) in crow.iter_mut().zip(brow) {
                        *cj = *cj + alpha * bj;
                    }
                }
            }
        }
    }
}

mod simd {
    /// `f32` axpy-form gemm with FMA, selected once per process based on
    /// what the CPU supports. Same k-tiled accumulation order as the
    /// portable body.
    #[inline(always)]
    #[allow(dead_code)]
    fn body_fma(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
        debug_assert_eq!(a.len(), m * k);
        debug_assert_eq!(b.len(), k * n);
        debug_assert_eq!(c.len(), m * n);
        for kt in (0..k).step_by(super::K_TILE) {
            let kend = (kt + super::K_TILE).min(k);
            let btile = &b[kt * n..kend * n];
            for (arow, crow) in a.chunks_exact(k).zip(c.chunks_exact_mut(n)) {
                for (&alpha, brow) in arow[kt..kend].iter().zip(btile.chunks_exact(n)) {
                    if alpha != 0.0 {
                        for (cj, &bj) in crow.iter_mut().zip(brow) {
                            *cj = alpha.mul_add(bj, *cj);
                        }
                    }
                }
            }
        }
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx512f")]
    unsafe fn gemm_avx512(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
        body_fma(m, k, n, a, b, c);
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2,fma")]
    unsafe fn gemm_avx2(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
        body_fma(m, k, n, a, b, c);
    }

    fn gemm_portable(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
        super::gemm_acc_generic(m, k, n, a, b, c);
    }

    type GemmFn = fn(usize, usize, usize, &[f32], &[f32], &mut [f32]);

    #[cfg(target_arch = "x86_64")]
    fn pick() -> GemmFn {
        if std::arch::is_x86_feature_detected!("avx512f") {
            // Safety: the feature was just detected on this CPU.
            return |m, k, n, a, b, c| unsafe { gemm_avx512(m, k, n, a, b, c) };
        }
        if std::arch::is_x86_feature_detected!("avx2")
            && std::arch::is_x86_feature_detected!("fma")
        {
            return |m, k, n, a, b, c| unsafe { gemm_avx2(m, k, n, a, b, c) };
        }
        gemm_portable
    }

    #[cfg(not(target_arch = "x86_64"))]
    fn pick() -> GemmFn {
        gemm_portable
    }

    pub fn gemm_acc_f32(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
        use std::sync::OnceLock;
        static IMPL: OnceLock<GemmFn> = OnceLock::new();
        IMPL.get_or_init(pick)(m, k, n, a, b, c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gemm_naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
        for i in 0..m {
            for j in 0..n {
                for kk in 0..k {
                    c[i * n + j] += a[i * k + kk] * b[kk * n + j];
                }
            }
        }
    }

    #[test]
    fn gemm_matches_naive_triple_loop() {
        let (m, k, n) = (5, 7, 11);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.71).cos()).collect();
        let mut c = vec![0.25; m * n];
        let mut expected = c.clone();
        f64::gemm_acc(m, k, n, &a, &b, &mut c);
        gemm_naive(m, k, n, &a, &b, &mut expected);
        for (got, want) in c.iter().zip(&expected) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn gemm_f32_dispatch_matches_portable_order() {
        let (m, k, n) = (4, 9, 33);
        let a: Vec<f32> = (0..m * k).map(|i| (i as f32 * 0.13).sin()).collect();
        let b: Vec<f32> = (0..k * n).map(|i| (i as f32 * 0.29).cos()).collect();
        let mut c = vec![0.0f32; m * n];
        f32::gemm_acc(m, k, n, &a, &b, &mut c);
        // Same accumulation order in f64 bounds the difference by FMA-vs-not
        // rounding only.
        let a64: Vec<f64> = a.iter().map(|&x| x as f64).collect();
        let b64: Vec<f64> = b.iter().map(|&x| x as f64).collect();
        let mut c64 = vec![0.0f64; m * n];
        f64::gemm_acc(m, k, n, &a64, &b64, &mut c64);
        for (got, want) in c.iter().zip(&c64) {
            assert!((*got as f64 - want).abs() < 1e-4, "{got} vs {want}");
        }
    }

    #[test]
    fn k_dimension_spanning_multiple_tiles_matches_naive() {
        let (m, k, n) = (3, 2 * K_TILE + 37, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.019).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.023).cos()).collect();
        let mut c = vec![0.0; m * n];
        let mut expected = c.clone();
        f64::gemm_acc(m, k, n, &a, &b, &mut c);
        gemm_naive(m, k, n, &a, &b, &mut expected);
        for (got, want) in c.iter().zip(&expected) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn gemm_accumulates_into_existing_values() {
        let mut c = vec![1.0f32, 2.0];
        // 1x1 times 1x2: c += 3 * [10, 20]
        f32::gemm_acc(1, 1, 2, &[3.0], &[10.0, 20.0], &mut c);
        assert_eq!(c, vec![31.0, 62.0]);
    }
}
