//! Lawson-Hanson active-set non-negative least squares.

use nalgebra::{DMatrix, DVector};

/// Least-squares solution of `a x = b` restricted to the columns in `passive`.
fn restricted_lstsq(a: &DMatrix<f64>, b: &DVector<f64>, passive: &[usize]) -> DVector<f64> {
    let sub = a.select_columns(passive);
    let svd = sub.svd(true, true);
    let s = svd.solve(b, 1e-12).expect("U and V were computed");
    let mut x = DVector::zeros(a.ncols());
    for (k, &j) in passive.iter().enumerate() {
        x[j] = s[k];
    }
    x
}

/// `argmin ||a x - b||` subject to `x >= 0`.
pub(crate) fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let scale = a.norm() * b.norm().max(1.0);
    let tol = 1e-12 * scale.max(1.0);
    let mut x = DVector::<f64>::zeros(n);
    let mut passive: Vec<usize> = Vec::new();
    for _ in 0..(3 * n + 10) {
        let w = a.transpose() * (b - a * &x);
        let Some(j) = (0..n)
            .filter(|j| !passive.contains(j))
            .filter(|&j| w[j] > tol)
            .max_by(|&i, &k| w[i].total_cmp(&w[k]))
        else {
            break;
        };
        passive.push(j);
        loop {
            let s = restricted_lstsq(a, b, &passive);
            if passive.iter().all(|&i| s[i] > 0.0) {
                x = s;
                break;
            }
            let alpha = passive
                .iter()
                .filter(|&&i| s[i] <= 0.0)
                .map(|&i| x[i] / (x[i] - s[i]))
                .fold(f64::INFINITY, f64::min);
            x += (s - &x) * alpha;
            passive.retain(|&i| x[i] > 1e-15);
            for i in 0..n {
                if !passive.contains(&i) {
                    x[i] = 0.0;
                }
            }
            if passive.is_empty() {
                break;
            }
        }
    }
    x
}
