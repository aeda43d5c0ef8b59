//! Raw numeric kernels shared by the graph ops.

/// `c (+)= op(a) * op(b)` with `op(a)` of shape m x k and `op(b)` of shape k x n,
/// all row-major. `a_t` / `b_t` mean the stored matrix is the transpose.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above guarantee every index touched by the given
    // dimensions and strides lies inside the three slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Splits `shape` around `axis` into (outer, axis length, inner).
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

pub(crate) fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let p = g.cols();
    for ci in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.sh + ki) as isize - g.ph as isize;
                    for ox in 0..g.wo {
                        let ix = (ox * g.sw + kj) as isize - g.pw as isize;
                        dst[oy * g.wo + ox] = if iy >= 0
                            && (iy as usize) < g.h
                            && ix >= 0
                            && (ix as usize) < g.w
                        {
                            x[(ci * g.h + iy as usize) * g.w + ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

pub(crate) fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let p = g.cols();
    for ci in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.sh + ki) as isize - g.ph as isize;
                    if iy < 0 || iy as usize >= g.h {
                        continue;
                    }
                    for ox in 0..g.wo {
                        let ix = (ox * g.sw + kj) as isize - g.pw as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dx[(ci * g.h + iy as usize) * g.w + ix as usize] +=
                                src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn skew(r: [f64; 3]) -> [f64; 9] {
    [0.0, -r[2], r[1], r[2], 0.0, -r[0], -r[1], r[0], 0.0]
}

fn mat3_mul(a: &[f64; 9], b: &[f64; 9]) -> [f64; 9] {
    let mut out = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            out[i * 3 + j] = (0..3).map(|k| a[i * 3 + k] * b[k * 3 + j]).sum();
        }
    }
    out
}

const SERIES_BELOW: f64 = 1e-2;

/// Coefficients (a, b) of R = I + a K + b K^2.
fn rodrigues_coeffs(theta: f64) -> (f64, f64) {
    if theta < SERIES_BELOW {
        let t2 = theta * theta;
        (
            1.0 - t2 / 6.0 + t2 * t2 / 120.0,
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
        )
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
    }
}

/// Derivatives of the coefficients divided by theta: (a'/theta, b'/theta).
fn rodrigues_coeff_slopes(theta: f64) -> (f64, f64) {
    if theta < SERIES_BELOW {
        let t2 = theta * theta;
        (
            -1.0 / 3.0 + t2 / 30.0 - t2 * t2 / 840.0,
            -1.0 / 12.0 + t2 / 180.0 - t2 * t2 / 6720.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        let t3 = theta * theta * theta;
        (
            (theta * c - s) / t3,
            (theta * s - 2.0 * (1.0 - c)) / (t3 * theta),
        )
    }
}

pub(crate) fn rodrigues(r: [f64; 3]) -> [f64; 9] {
    let theta = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
    let (a, b) = rodrigues_coeffs(theta);
    let k = skew(r);
    let k2 = mat3_mul(&k, &k);
    let mut out = [0.0; 9];
    for i in 0..9 {
        let id = if i % 4 == 0 { 1.0 } else { 0.0 };
        out[i] = id + a * k[i] + b * k2[i];
    }
    out
}

/// Gradient of `sum(g .* R(r))` with respect to `r`.
pub(crate) fn rodrigues_vjp(r: [f64; 3], g: &[f64]) -> [f64; 3] {
    let theta = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
    let (a, b) = rodrigues_coeffs(theta);
    let (da, db) = rodrigues_coeff_slopes(theta);
    let k = skew(r);
    let k2 = mat3_mul(&k, &k);
    let mut out = [0.0; 3];
    for (i, o) in out.iter_mut().enumerate() {
        let mut e = [0.0; 3];
        e[i] = 1.0;
        let ei = skew(e);
        let eik = mat3_mul(&ei, &k);
        let kei = mat3_mul(&k, &ei);
        let mut acc = 0.0;
        for j in 0..9 {
            let d = a * ei[j] + b * (eik[j] + kei[j]) + da * r[i] * k[j] + db * r[i] * k2[j];
            acc += g[j] * d;
        }
        *o = acc;
    }
    out
}
