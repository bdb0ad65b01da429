use crate::numkern::DenseMatrix;

/// Central finite-difference gradient of `f` at `x`.
pub fn numeric_gradient(x: &DenseMatrix, step: f64, mut f: impl FnMut(&DenseMatrix) -> f64) -> DenseMatrix {
    let mut grad = DenseMatrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for k in 0..x.values().len() {
        let orig = probe.values()[k];
        probe.values_mut()[k] = orig + step;
        let up = f(&probe);
        probe.values_mut()[k] = orig - step;
        let down = f(&probe);
        probe.values_mut()[k] = orig;
        grad.values_mut()[k] = (up - down) / (2.0 * step);
    }
    grad
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, with a small floor so all-zero pairs compare as equal.
pub fn relative_error(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    let diff = a.zip_map(b, |x, y| x - y).unwrap().frobenius_norm();
    diff / a.frobenius_norm().max(b.frobenius_norm()).max(1e-8)
}

pub fn random_matrix(rng: &mut impl rand::Rng, rows: usize, cols: usize, scale: f64) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}
