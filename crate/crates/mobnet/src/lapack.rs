//! Minimal FFI binding to the system LAPACK `dgeev` routine
//! (eigenvalues and right eigenvectors of a general real matrix).

use ndarray::Array2;
use num_complex::Complex64;

extern "C" {
    fn dgeev_(
        jobvl: *const u8,
        jobvr: *const u8,
        n: *const i32,
        a: *mut f64,
        lda: *const i32,
        wr: *mut f64,
        wi: *mut f64,
        vl: *mut f64,
        ldvl: *const i32,
        vr: *mut f64,
        ldvr: *const i32,
        work: *mut f64,
        lwork: *const i32,
        info: *mut i32,
    );
}

/// Eigenvalues and right eigenvectors of a general real square matrix.
///
/// Returns `(values, vectors)` where `vectors` has eigenvectors as columns,
/// column j matching `values[j]`. Complex conjugate pairs come out adjacent
/// (LAPACK convention). Returns `None` if LAPACK reports a failure.
pub fn eig(a: &Array2<f64>) -> Option<(Vec<Complex64>, Array2<Complex64>)> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let ni = n as i32;
    // Column-major copy; dgeev destroys its input.
    let mut af: Vec<f64> = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            af.push(a[[i, j]]);
        }
    }
    let mut wr = vec![0.0f64; n];
    let mut wi = vec![0.0f64; n];
    let mut vr = vec![0.0f64; n * n];
    let mut vl = vec![0.0f64; 1];
    let mut info: i32 = 0;
    let lwork = (8 * n.max(1)) as i32;
    let mut work = vec![0.0f64; lwork as usize];
    unsafe {
        dgeev_(
            b"N".as_ptr(),
            b"V".as_ptr(),
            &ni,
            af.as_mut_ptr(),
            &ni,
            wr.as_mut_ptr(),
            wi.as_mut_ptr(),
            vl.as_mut_ptr(),
            &1,
            vr.as_mut_ptr(),
            &ni,
            work.as_mut_ptr(),
            &lwork,
            &mut info,
        );
    }
    if info != 0 {
        return None;
    }
    let values: Vec<Complex64> = (0..n).map(|j| Complex64::new(wr[j], wi[j])).collect();
    let mut vectors = Array2::<Complex64>::zeros((n, n));
    let mut j = 0;
    while j < n {
        if wi[j] == 0.0 {
            for i in 0..n {
                vectors[[i, j]] = Complex64::new(vr[j * n + i], 0.0);
            }
            j += 1;
        } else {
            // conjugate pair stored as (re, im) in adjacent columns
            for i in 0..n {
                let re = vr[j * n + i];
                let im = vr[(j + 1) * n + i];
                vectors[[i, j]] = Complex64::new(re, im);
                vectors[[i, j + 1]] = Complex64::new(re, -im);
            }
            j += 2;
        }
    }
    Some((values, vectors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn symmetric_two_by_two() {
        let a = array![[-1.0, 1.0], [1.0, -1.0]];
        let (vals, vecs) = eig(&a).unwrap();
        let mut re: Vec<f64> = vals.iter().map(|z| z.re).collect();
        re.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((re[0] + 2.0).abs() < 1e-12);
        assert!(re[1].abs() < 1e-12);
        // residual check A v = lambda v
        for j in 0..2 {
            for i in 0..2 {
                let av: Complex64 = (0..2).map(|k| a[[i, k]] * vecs[[k, j]]).sum();
                let diff = av - vals[j] * vecs[[i, j]];
                assert!(diff.norm() < 1e-12);
            }
        }
    }
}
