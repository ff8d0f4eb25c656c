//! Fixed-size vector helpers for positions in R^2 and R^3.

#[inline]
pub fn dot<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    let mut s = 0.0;
    for i in 0..D {
        s += a[i] * b[i];
    }
    s
}

#[inline]
pub fn norm<const D: usize>(a: &[f64; D]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn axpy<const D: usize>(alpha: f64, x: &[f64; D], y: &mut [f64; D]) {
    for i in 0..D {
        y[i] += alpha * x[i];
    }
}

/// Cross product for D = 3. Indices wrap modulo 3, so for D = 3 this is
/// the right-handed `a × b`.
#[inline]
pub fn cross<const D: usize>(a: &[f64; D], b: &[f64; D]) -> [f64; D] {
    debug_assert_eq!(D, 3);
    let mut out = [0.0; D];
    for i in 0..D {
        let j = (i + 1) % D;
        let k = (i + 2) % D;
        out[i] = a[j] * b[k] - a[k] * b[j];
    }
    out
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
/// Returns `None` for a (numerically) singular matrix.
pub fn solve<const D: usize>(mut a: [[f64; D]; D], mut b: [f64; D]) -> Option<[f64; D]> {
    for col in 0..D {
        let pivot = (col..D)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if !(a[pivot][col].abs() > 0.0) {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..D {
            let f = a[row][col] / a[col][col];
            for c in col..D {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; D];
    for row in (0..D).rev() {
        let mut s = b[row];
        for c in row + 1..D {
            s -= a[row][c] * x[c];
        }
        x[row] = s / a[row][row];
    }
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}

/// Determinant via LU with partial pivoting.
pub fn determinant<const D: usize>(mut a: [[f64; D]; D]) -> f64 {
    let mut det = 1.0;
    for col in 0..D {
        let pivot = (col..D)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot][col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            a.swap(col, pivot);
            det = -det;
        }
        det *= a[col][col];
        for row in col + 1..D {
            let f = a[row][col] / a[col][col];
            for c in col..D {
                a[row][c] -= f * a[col][c];
            }
        }
    }
    det
}
