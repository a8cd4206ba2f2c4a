//! Dense complex helpers shared by GRAPPA and ESPIRiT.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::tensor::C64;

/// Row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<C64>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMat { rows, cols, data: vec![C64::new(0.0, 0.0); rows * cols] }
    }

    pub fn at(&self, r: usize, c: usize) -> C64 {
        self.data[r * self.cols + c]
    }

    fn to_nalgebra(&self) -> DMatrix<C64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    fn from_nalgebra(m: &DMatrix<C64>) -> Self {
        let mut out = CMat::zeros(m.nrows(), m.ncols());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                out.data[r * m.ncols() + c] = m[(r, c)];
            }
        }
        out
    }
}

/// `Aᴴ B` for row-major `A` (k×m) and `B` (k×n).
pub fn adjoint_mul(a: &CMat, b: &CMat) -> CMat {
    assert_eq!(a.rows, b.rows, "adjoint_mul inner dimension");
    let (k, m, n) = (a.rows, a.cols, b.cols);
    let conj: Vec<C64> = a.data.iter().map(|v| v.conj()).collect();
    let mut out = CMat::zeros(m, n);
    if k == 0 {
        return out;
    }
    // SAFETY: Complex<f64> is repr(C) with layout identical to [f64; 2]; all
    // pointers cover the stated extents and strides.
    unsafe {
        matrixmultiply::zgemm(
            matrixmultiply::CGemmOption::Standard,
            matrixmultiply::CGemmOption::Standard,
            m,
            k,
            n,
            [1.0, 0.0],
            conj.as_ptr() as *const [f64; 2],
            1,
            m as isize,
            b.data.as_ptr() as *const [f64; 2],
            n as isize,
            1,
            [0.0, 0.0],
            out.data.as_mut_ptr() as *mut [f64; 2],
            n as isize,
            1,
        );
    }
    out
}

/// `A B` for row-major operands.
pub fn mul(a: &CMat, b: &CMat) -> CMat {
    assert_eq!(a.cols, b.rows, "mul inner dimension");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = CMat::zeros(m, n);
    if k == 0 {
        return out;
    }
    // SAFETY: see `adjoint_mul`.
    unsafe {
        matrixmultiply::zgemm(
            matrixmultiply::CGemmOption::Standard,
            matrixmultiply::CGemmOption::Standard,
            m,
            k,
            n,
            [1.0, 0.0],
            a.data.as_ptr() as *const [f64; 2],
            k as isize,
            1,
            b.data.as_ptr() as *const [f64; 2],
            n as isize,
            1,
            [0.0, 0.0],
            out.data.as_mut_ptr() as *mut [f64; 2],
            n as isize,
            1,
        );
    }
    out
}

/// Solves `(G + reg·I) X = B` for Hermitian positive semi-definite `G`.
/// Cholesky first; if that fails, an eigendecomposition with eigenvalues
/// floored at `1e-12·λ_max`.
pub fn solve_regularized(gram: &CMat, rhs: &CMat, reg: f64) -> Result<CMat> {
    let n = gram.rows;
    let mut g = gram.to_nalgebra();
    for i in 0..n {
        g[(i, i)] += C64::new(reg, 0.0);
    }
    let b = rhs.to_nalgebra();
    if let Some(ch) = g.clone().cholesky() {
        return Ok(CMat::from_nalgebra(&ch.solve(&b)));
    }
    let eig = SymmetricEigen::new(g);
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    if !(lmax > 0.0) {
        return Err(Error::Numerical("regularized normal matrix has no positive eigenvalue".into()));
    }
    let floor = 1e-12 * lmax;
    let q = &eig.eigenvectors;
    let mut qhb = q.adjoint() * b;
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        let inv = 1.0 / l.max(floor);
        qhb.row_mut(i).scale_mut(inv);
    }
    Ok(CMat::from_nalgebra(&(q * qhb)))
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues descending.
/// Eigenvectors are returned as columns of a row-major matrix with the
/// largest-magnitude entry of each made real and positive.
pub fn hermitian_eigen(h: &CMat) -> (Vec<f64>, CMat) {
    let eig = SymmetricEigen::new(h.to_nalgebra());
    let mut order: Vec<usize> = (0..h.rows).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut vecs = CMat::zeros(h.rows, h.rows);
    let mut vals = Vec::with_capacity(h.rows);
    for (k, &i) in order.iter().enumerate() {
        vals.push(eig.eigenvalues[i]);
        let col = eig.eigenvectors.column(i);
        let mut big = 0;
        for r in 0..h.rows {
            if col[r].norm() > col[big].norm() {
                big = r;
            }
        }
        let phase = if col[big].norm() > 0.0 { col[big].conj() / col[big].norm() } else { C64::new(1.0, 0.0) };
        for r in 0..h.rows {
            vecs.data[r * h.rows + k] = col[r] * phase;
        }
    }
    (vals, vecs)
}
