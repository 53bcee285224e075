//! Scalar abstraction and strided matrix products.
//!
//! Model code is generic over `f32` (training) and `f64` (gradient checks);
//! both route their matrix products through `matrixmultiply`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// # Safety
    /// All pointers must be valid for the strided extents described.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn cast(x: f64) -> Self {
        Self::from_f64(x).expect("representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("representable")
    }
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// A strided view over a slice: element (i, j) lives at `i * rs + j * cs`.
#[derive(Debug, Clone, Copy)]
pub struct View {
    pub rs: usize,
    pub cs: usize,
}

impl View {
    pub const fn rows(width: usize) -> Self {
        View { rs: width, cs: 1 }
    }

    pub const fn transposed(width: usize) -> Self {
        View { rs: 1, cs: width }
    }

    fn extent(self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * self.rs + (cols - 1) * self.cs + 1
        }
    }
}

/// `c = alpha * a·b + beta * c` where `a` is m×k, `b` is k×n and `c` is m×n,
/// each addressed through its own strided view.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    va: View,
    b: &[T],
    vb: View,
    beta: T,
    c: &mut [T],
    vc: View,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(va.extent(m, k) <= a.len(), "gemm: lhs out of bounds");
    assert!(vb.extent(k, n) <= b.len(), "gemm: rhs out of bounds");
    assert!(vc.extent(m, n) <= c.len(), "gemm: output out of bounds");
    // SAFETY: extents checked above; `c` is uniquely borrowed.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            va.rs as isize,
            va.cs as isize,
            b.as_ptr(),
            vb.rs as isize,
            vb.cs as isize,
            beta,
            c.as_mut_ptr(),
            vc.rs as isize,
            vc.cs as isize,
        );
    }
}

/// Row-major `a (m×k) · b (k×n)`.
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    gemm(
        m,
        k,
        n,
        T::one(),
        a,
        View::rows(k),
        b,
        View::rows(n),
        T::zero(),
        &mut c,
        View::rows(n),
    );
    c
}

/// `c += aᵀ · b` with `a` m×k and `b` m×n (row-major), `c` k×n.
pub fn add_at_b<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, c: &mut [T]) {
    gemm(
        k,
        m,
        n,
        T::one(),
        a,
        View::transposed(k),
        b,
        View::rows(n),
        T::one(),
        c,
        View::rows(n),
    );
}

/// `c += a · bᵀ` with `a` m×k and `b` n×k (row-major), `c` m×n.
pub fn add_a_bt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, c: &mut [T]) {
    gemm(
        m,
        k,
        n,
        T::one(),
        a,
        View::rows(k),
        b,
        View::transposed(k),
        T::one(),
        c,
        View::rows(n),
    );
}
