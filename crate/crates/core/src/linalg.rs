use nalgebra::{DMatrix, DVector};

/// Eigendecomposition of a symmetric matrix with eigenpairs sorted by
/// ascending eigenvalue and a deterministic sign per eigenvector.
pub struct SortedEigen {
    pub values: Vec<f64>,
    /// Column `i` pairs with `values[i]`.
    pub vectors: DMatrix<f64>,
}

pub fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> SortedEigen {
    let n = m.nrows();
    // symmetrize to keep round-off from leaking into the solver
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col: DVector<f64> = eig.eigenvectors.column(src).into_owned();
        fix_sign(&mut col);
        vectors.set_column(dst, &col);
    }
    SortedEigen { values, vectors }
}

/// Flips `v` so that its largest-magnitude component is positive (first index wins ties).
pub fn fix_sign(v: &mut DVector<f64>) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() + 1e-12 {
            best = i;
        }
    }
    if !v.is_empty() && v[best] < 0.0 {
        v.neg_mut();
    }
}
