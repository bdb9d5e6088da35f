//! Eigenvalues of small real matrices via Householder reduction to
//! Hessenberg form followed by implicit double-shift QR iteration (the
//! classic Algol orthes/hqr pair of Martin and Wilkinson, without
//! balancing). 2x2 trailing blocks with negative discriminant yield
//! conjugate complex pairs.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest supported matrix side. The solver targets the k x k predictor
/// matrices of this crate, not general-purpose linear algebra.
pub const MAX_EIGEN_N: usize = 64;

/// All `n` eigenvalues of a row-major `n x n` matrix, sorted by descending
/// magnitude (ties broken by descending real part, then imaginary part).
///
/// Fails when the QR iteration has not deflated every eigenvalue after
/// `100 * n` sweeps; no partial spectrum is returned in that case.
pub fn eigenvalues(matrix: &[f64], n: usize) -> Result<Vec<Complex64>> {
    if n == 0 || n > MAX_EIGEN_N {
        return Err(Error::contract(format!(
            "eigenvalues supports 1..={MAX_EIGEN_N} rows, got {n}"
        )));
    }
    if matrix.len() != n * n {
        return Err(Error::dim(format!(
            "matrix length {} is not {n}x{n}",
            matrix.len()
        )));
    }
    if !matrix.iter().all(|v| v.is_finite()) {
        return Err(Error::numeric("eigenvalues requires finite entries".to_string()));
    }

    let mut h = matrix.to_vec();
    hessenberg(&mut h, n);
    let (re, im) = hqr(&mut h, n, 100 * n)?;

    let mut eigs: Vec<Complex64> =
        re.into_iter().zip(im).map(|(r, i)| Complex64::new(r, i)).collect();
    eigs.sort_by(|a, b| {
        b.norm_sqr()
            .partial_cmp(&a.norm_sqr())
            .unwrap()
            .then(b.re.partial_cmp(&a.re).unwrap())
            .then(b.im.partial_cmp(&a.im).unwrap())
    });
    Ok(eigs)
}

/// Householder reduction to upper Hessenberg form, in place.
fn hessenberg(hd: &mut [f64], n: usize) {
    if n < 3 {
        return;
    }
    let high = n - 1;
    let mut ort = vec![0.0f64; n];

    for m in 1..high {
        let mut scale = 0.0;
        for i in m..=high {
            scale += hd[i * n + m - 1].abs();
        }
        if scale == 0.0 {
            continue;
        }

        let mut hsum = 0.0;
        for i in (m..=high).rev() {
            ort[i] = hd[i * n + m - 1] / scale;
            hsum += ort[i] * ort[i];
        }
        let mut g = hsum.sqrt();
        if ort[m] > 0.0 {
            g = -g;
        }
        hsum -= ort[m] * g;
        ort[m] -= g;

        // Similarity transform H <- (I - u u'/hsum) H (I - u u'/hsum).
        for j in m..n {
            let mut f = 0.0;
            for i in (m..=high).rev() {
                f += ort[i] * hd[i * n + j];
            }
            f /= hsum;
            for i in m..=high {
                hd[i * n + j] -= f * ort[i];
            }
        }
        for i in 0..=high {
            let mut f = 0.0;
            for j in (m..=high).rev() {
                f += ort[j] * hd[i * n + j];
            }
            f /= hsum;
            for j in m..=high {
                hd[i * n + j] -= f * ort[j];
            }
        }
        ort[m] *= scale;
        hd[m * n + m - 1] = scale * g;
    }
}

/// Double-shift QR iteration on an upper Hessenberg matrix (eigenvalues
/// only). Returns (real parts, imaginary parts).
fn hqr(hd: &mut [f64], size: usize, max_sweeps: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let nn = size as isize;
    let at = |i: isize, j: isize| (i * nn + j) as usize;

    let mut d = vec![0.0f64; size];
    let mut e = vec![0.0f64; size];

    let low: isize = 0;
    let eps = 2.0f64.powi(-52);
    let mut exshift = 0.0;
    let (mut p, mut q, mut r): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let (mut s, mut z): (f64, f64);
    let (mut w, mut x, mut y): (f64, f64, f64);

    let mut norm = 0.0;
    for i in 0..nn {
        for j in (i - 1).max(0)..nn {
            norm += hd[at(i, j)].abs();
        }
    }

    let mut n = nn - 1;
    let mut iter = 0usize;
    let mut sweeps = 0usize;
    while n >= low {
        // Look for a single small sub-diagonal element.
        let mut l = n;
        while l > low {
            s = hd[at(l - 1, l - 1)].abs() + hd[at(l, l)].abs();
            if s == 0.0 {
                s = norm;
            }
            if hd[at(l, l - 1)].abs() < eps * s {
                break;
            }
            l -= 1;
        }

        if l == n {
            // One root found.
            hd[at(n, n)] += exshift;
            d[n as usize] = hd[at(n, n)];
            e[n as usize] = 0.0;
            n -= 1;
            iter = 0;
        } else if l == n - 1 {
            // Two roots found.
            w = hd[at(n, n - 1)] * hd[at(n - 1, n)];
            p = (hd[at(n - 1, n - 1)] - hd[at(n, n)]) / 2.0;
            q = p * p + w;
            z = q.abs().sqrt();
            hd[at(n, n)] += exshift;
            hd[at(n - 1, n - 1)] += exshift;
            x = hd[at(n, n)];

            if q >= 0.0 {
                // Real pair.
                z = if p >= 0.0 { p + z } else { p - z };
                d[(n - 1) as usize] = x + z;
                d[n as usize] = d[(n - 1) as usize];
                if z != 0.0 {
                    d[n as usize] = x - w / z;
                }
                e[(n - 1) as usize] = 0.0;
                e[n as usize] = 0.0;
                // (The Schur-form row/column rotation is only needed when
                // accumulating vectors; eigenvalues are already extracted.)
            } else {
                // Complex conjugate pair.
                d[(n - 1) as usize] = x + p;
                d[n as usize] = x + p;
                e[(n - 1) as usize] = z;
                e[n as usize] = -z;
            }
            n -= 2;
            iter = 0;
        } else {
            // No convergence yet; form a shift.
            x = hd[at(n, n)];
            y = 0.0;
            w = 0.0;
            if l < n {
                y = hd[at(n - 1, n - 1)];
                w = hd[at(n, n - 1)] * hd[at(n - 1, n)];
            }

            // Wilkinson's original ad hoc shift.
            if iter == 10 {
                exshift += x;
                for i in low..=n {
                    hd[at(i, i)] -= x;
                }
                s = hd[at(n, n - 1)].abs() + hd[at(n - 1, n - 2)].abs();
                y = 0.75 * s;
                x = y;
                w = -0.4375 * s * s;
            }

            // MATLAB's new ad hoc shift.
            if iter == 30 {
                s = (y - x) / 2.0;
                s = s * s + w;
                if s > 0.0 {
                    s = s.sqrt();
                    if y < x {
                        s = -s;
                    }
                    s = x - w / ((y - x) / 2.0 + s);
                    for i in low..=n {
                        hd[at(i, i)] -= s;
                    }
                    exshift += s;
                    w = 0.964;
                    y = w;
                    x = y;
                }
            }

            iter += 1;
            sweeps += 1;
            if sweeps > max_sweeps {
                let found = (nn - 1 - n) as usize;
                return Err(Error::numeric(format!(
                    "qr iteration did not converge within {max_sweeps} sweeps \
                     ({found} of {size} eigenvalues deflated; partial results discarded)"
                )));
            }

            // Look for two consecutive small sub-diagonal elements.
            let mut m = n - 2;
            while m >= l {
                z = hd[at(m, m)];
                r = x - z;
                s = y - z;
                p = (r * s - w) / hd[at(m + 1, m)] + hd[at(m, m + 1)];
                q = hd[at(m + 1, m + 1)] - z - r - s;
                r = hd[at(m + 2, m + 1)];
                s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                if hd[at(m, m - 1)].abs() * (q.abs() + r.abs())
                    < eps * (p.abs() * (hd[at(m - 1, m - 1)].abs() + z.abs() + hd[at(m + 1, m + 1)].abs()))
                {
                    break;
                }
                m -= 1;
            }

            for i in (m + 2)..=n {
                hd[at(i, i - 2)] = 0.0;
                if i > m + 2 {
                    hd[at(i, i - 3)] = 0.0;
                }
            }

            // Double QR step involving rows l..=n and columns m..=n.
            for k in m..n {
                let notlast = k != n - 1;
                if k != m {
                    p = hd[at(k, k - 1)];
                    q = hd[at(k + 1, k - 1)];
                    r = if notlast { hd[at(k + 2, k - 1)] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x == 0.0 {
                        continue;
                    }
                    p /= x;
                    q /= x;
                    r /= x;
                }

                s = (p * p + q * q + r * r).sqrt();
                if p < 0.0 {
                    s = -s;
                }
                if s != 0.0 {
                    if k != m {
                        hd[at(k, k - 1)] = -s * x;
                    } else if l != m {
                        hd[at(k, k - 1)] = -hd[at(k, k - 1)];
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;

                    // Row modification.
                    for j in k..nn {
                        p = hd[at(k, j)] + q * hd[at(k + 1, j)];
                        if notlast {
                            p += r * hd[at(k + 2, j)];
                            hd[at(k + 2, j)] -= p * z;
                        }
                        hd[at(k, j)] -= p * x;
                        hd[at(k + 1, j)] -= p * y;
                    }

                    // Column modification.
                    for i in 0..=n.min(k + 3) {
                        p = x * hd[at(i, k)] + y * hd[at(i, k + 1)];
                        if notlast {
                            p += z * hd[at(i, k + 2)];
                            hd[at(i, k + 2)] -= p * r;
                        }
                        hd[at(i, k)] -= p;
                        hd[at(i, k + 1)] -= p * q;
                    }
                }
            }
        }
    }
    Ok((d, e))
}

/// Determinant by LU factorization with partial pivoting. Deliberately
/// shares no code with [`eigenvalues`] so the two can cross-check each
/// other (det = product of eigenvalues).
pub fn det_lu(matrix: &[f64], n: usize) -> Result<f64> {
    if matrix.len() != n * n {
        return Err(Error::dim(format!(
            "matrix length {} is not {n}x{n}",
            matrix.len()
        )));
    }
    let mut a = matrix.to_vec();
    let mut det = 1.0f64;
    for col in 0..n {
        // Pivot on the largest magnitude in this column.
        let mut pivot = col;
        for row in (col + 1)..n {
            if a[row * n + col].abs() > a[pivot * n + col].abs() {
                pivot = row;
            }
        }
        if a[pivot * n + col] == 0.0 {
            return Ok(0.0);
        }
        if pivot != col {
            for j in 0..n {
                a.swap(col * n + j, pivot * n + j);
            }
            det = -det;
        }
        let diag = a[col * n + col];
        det *= diag;
        for row in (col + 1)..n {
            let factor = a[row * n + col] / diag;
            a[row * n + col] = factor;
            for j in (col + 1)..n {
                a[row * n + j] -= factor * a[col * n + j];
            }
        }
    }
    Ok(det)
}
