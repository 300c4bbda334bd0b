//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Operator norm induced by the Euclidean vector norm.
pub fn op_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.nrows() == 1 || m.ncols() == 1 {
        return m.norm();
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0_f64, |a, &s| a.max(s))
}

/// 2-norm condition number; `inf` for singular matrices.
pub fn condition_number(m: &Matrix) -> f64 {
    if m.nrows() == 1 && m.ncols() == 1 {
        let v = m[(0, 0)].abs();
        return if v == 0.0 { f64::INFINITY } else { 1.0 };
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().fold(0.0_f64, |a, &s| a.max(s));
    let min = sv.iter().fold(f64::INFINITY, |a, &s| a.min(s));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn inverse(m: &Matrix) -> Option<Matrix> {
    m.clone().try_inverse()
}

pub fn sup_norm(v: &Vector) -> f64 {
    v.amax()
}

pub fn all_finite(m: &Matrix) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// Moduli of the (complex) eigenvalues of a real square matrix.
pub fn eigen_moduli(m: &Matrix) -> Vec<f64> {
    if m.nrows() == 1 {
        return vec![m[(0, 0)].abs()];
    }
    m.clone().complex_eigenvalues().iter().map(|z| z.norm()).collect()
}

/// Matrix sign function by the scaled Newton iteration `S <- (cS + (cS)^-1)/2`.
fn matrix_sign(w: &Matrix) -> Option<Matrix> {
    let mut s = w.clone();
    for _ in 0..100 {
        let inv = inverse(&s)?;
        // determinant scaling speeds up the first iterations
        let det = s.determinant().abs();
        let c = if det > 0.0 && det.is_finite() {
            det.powf(-1.0 / s.nrows() as f64)
        } else {
            1.0
        };
        let next = (&s * c + &inv / c) * 0.5;
        let delta = (&next - &s).norm() / next.norm().max(1.0);
        s = next;
        if delta < 1e-15 {
            break;
        }
    }
    Some(s)
}

/// Spectral projection onto the invariant subspace of eigenvalues inside the
/// open unit disk.
///
/// The Cayley map `W = (C - I)(C + I)^-1` sends the unit disk to the open
/// left half-plane, so the projection is `(I - sign(W)) / 2`. Requires no
/// eigenvalue on the unit circle.
pub fn stable_projection(c: &Matrix) -> Option<Matrix> {
    let q = c.nrows();
    let id = Matrix::identity(q, q);
    let plus = inverse(&(c + &id))?;
    let w = (c - &id) * plus;
    let s = matrix_sign(&w)?;
    Some((id - s) * 0.5)
}

/// Orthonormal basis of the column space of `m` (thin QR).
pub fn orthonormalize(m: &Matrix) -> Matrix {
    if m.ncols() == 0 {
        return m.clone();
    }
    m.clone().qr().q().columns(0, m.ncols()).into_owned()
}

/// Numerical rank of a projection via its trace.
pub fn projection_rank(p: &Matrix) -> usize {
    p.trace().round().max(0.0) as usize
}

/// Basis for the range of a projection `p` (columns of an orthonormal basis).
pub fn range_basis(p: &Matrix) -> Matrix {
    let r = projection_rank(p);
    let q = p.nrows();
    if r == 0 {
        return Matrix::zeros(q, 0);
    }
    let svd = p.clone().svd(true, false);
    let u = svd.u.expect("u requested");
    // singular values are not sorted by nalgebra in every version
    let mut idx: Vec<usize> = (0..q).collect();
    idx.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Matrix::from_fn(q, r, |i, j| u[(i, idx[j])])
}

/// Projection onto `range(s)` along `range(u)`; the columns of `[s u]` must
/// span the whole space.
pub fn oblique_projection(s: &Matrix, u: &Matrix) -> Option<Matrix> {
    let q = s.nrows();
    let r = s.ncols();
    let mut basis = Matrix::zeros(q, q);
    basis.columns_mut(0, r).copy_from(s);
    basis.columns_mut(r, q - r).copy_from(u);
    let inv = inverse(&basis)?;
    let mut sel = Matrix::zeros(q, q);
    for i in 0..r {
        sel[(i, i)] = 1.0;
    }
    Some(&basis * sel * inv)
}
