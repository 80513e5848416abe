//! Matrix exponential for small dense matrices.
//!
//! Scaling and squaring around a truncated Taylor series: the input is
//! divided by `2^s` until its 1-norm is at most [`SCALE_THRESHOLD`], the
//! series is summed through [`TAYLOR_TERMS`] terms, and the result is
//! squared `s` times. With the 1-norm bounded by 0.5 the truncation error
//! of the 18-term series is below `0.5^19 / 19!`, far under `f64` rounding.
//!
//! The adjoint of the exponential uses the block identity
//! `exp([[X, E], [0, X]]) = [[exp(X), L(X, E)], [0, exp(X)]]`, where
//! `L(X, E)` is the Fréchet derivative. For a scalar `f = <G, exp(X)>`
//! the gradient is `L(X^T, G)`.

pub type Mat<const N: usize> = [[f64; N]; N];

pub const TAYLOR_TERMS: usize = 18;
pub const SCALE_THRESHOLD: f64 = 0.5;

pub fn identity<const N: usize>() -> Mat<N> {
    let mut m = [[0.0; N]; N];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

pub fn matmul<const N: usize>(a: &Mat<N>, b: &Mat<N>) -> Mat<N> {
    let mut out = [[0.0; N]; N];
    for i in 0..N {
        for k in 0..N {
            let aik = a[i][k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..N {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

pub fn transpose<const N: usize>(a: &Mat<N>) -> Mat<N> {
    let mut out = [[0.0; N]; N];
    for i in 0..N {
        for j in 0..N {
            out[j][i] = a[i][j];
        }
    }
    out
}

/// Maximum absolute column sum.
pub fn norm1<const N: usize>(a: &Mat<N>) -> f64 {
    (0..N)
        .map(|j| (0..N).map(|i| libm::fabs(a[i][j])).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `exp(a)` by scaling and squaring.
pub fn expm<const N: usize>(a: &Mat<N>) -> Mat<N> {
    let norm = norm1(a);
    let mut squarings = 0u32;
    let mut scale = 1.0;
    while norm * scale > SCALE_THRESHOLD {
        scale *= 0.5;
        squarings += 1;
    }
    let mut scaled = *a;
    for row in scaled.iter_mut() {
        for v in row.iter_mut() {
            *v *= scale;
        }
    }

    // Horner form: I + X(I + X/2(I + X/3(...)))
    let mut acc = identity::<N>();
    for k in (1..=TAYLOR_TERMS).rev() {
        let mut next = matmul(&scaled, &acc);
        let inv_k = 1.0 / k as f64;
        for (i, row) in next.iter_mut().enumerate() {
            for v in row.iter_mut() {
                *v *= inv_k;
            }
            row[i] += 1.0;
        }
        acc = next;
    }

    for _ in 0..squarings {
        acc = matmul(&acc, &acc);
    }
    acc
}

/// Fréchet derivative `L(a, e)` of the exponential at `a` in direction `e`.
pub fn expm_frechet3(a: &Mat<3>, e: &Mat<3>) -> Mat<3> {
    let mut block = [[0.0; 6]; 6];
    for i in 0..3 {
        for j in 0..3 {
            block[i][j] = a[i][j];
            block[i + 3][j + 3] = a[i][j];
            block[i][j + 3] = e[i][j];
        }
    }
    let big = expm(&block);
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = big[i][j + 3];
        }
    }
    out
}

/// Gradient of `<g, exp(a)>` with respect to `a`.
pub fn expm_adjoint3(a: &Mat<3>, g: &Mat<3>) -> Mat<3> {
    expm_frechet3(&transpose(a), g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_diff<const N: usize>(a: &Mat<N>, b: &Mat<N>) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..N {
            for j in 0..N {
                m = m.max(libm::fabs(a[i][j] - b[i][j]));
            }
        }
        m
    }

    #[test]
    fn zero_gives_identity() {
        assert_eq!(expm(&[[0.0; 3]; 3]), identity::<3>());
    }

    #[test]
    fn diagonal_matches_scalar_exp() {
        let a = [[1.5, 0.0], [0.0, -2.0]];
        let e = expm(&a);
        assert!(libm::fabs(e[0][0] - libm::exp(1.5)) < 1e-13);
        assert!(libm::fabs(e[1][1] - libm::exp(-2.0)) < 1e-14);
        assert_eq!(e[0][1], 0.0);
    }

    #[test]
    fn rotation_generator() {
        let t = core::f64::consts::FRAC_PI_3;
        let a = [[0.0, -t], [t, 0.0]];
        let e = expm(&a);
        let expect = [[libm::cos(t), -libm::sin(t)], [libm::sin(t), libm::cos(t)]];
        assert!(max_diff(&e, &expect) < 1e-14);
    }

    #[test]
    fn nilpotent_is_exact() {
        let a = [[0.0, 3.0, 1.0], [0.0, 0.0, 2.0], [0.0, 0.0, 0.0]];
        let e = expm(&a);
        let expect = [[1.0, 3.0, 1.0 + 3.0], [0.0, 1.0, 2.0], [0.0, 0.0, 1.0]];
        assert!(max_diff(&e, &expect) < 1e-13);
    }

    #[test]
    fn frechet_matches_finite_difference() {
        let a = [[0.3, -0.7, 0.2], [0.5, 0.1, -0.4], [0.0, 0.0, 0.0]];
        let e = [[0.1, 0.4, -0.3], [-0.2, 0.6, 0.5], [0.0, 0.0, 0.0]];
        let l = expm_frechet3(&a, &e);
        let h = 1e-6;
        let mut plus = a;
        let mut minus = a;
        for i in 0..3 {
            for j in 0..3 {
                plus[i][j] += h * e[i][j];
                minus[i][j] -= h * e[i][j];
            }
        }
        let (ep, em) = (expm(&plus), expm(&minus));
        for i in 0..3 {
            for j in 0..3 {
                let fd = (ep[i][j] - em[i][j]) / (2.0 * h);
                assert!(libm::fabs(fd - l[i][j]) < 1e-8, "{i},{j}");
            }
        }
    }
}
