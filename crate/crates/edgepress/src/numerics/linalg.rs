use crate::error::{Error, Result};
use crate::numerics::tensor::{dot, Tensor};

/// Condition-estimate limit above which the regularized Gram matrix is
/// treated as numerically singular.
pub const GRAM_CONDITION_LIMIT: f64 = 1e12;

/// Ridge-regularized least squares: arg min over `x` of
/// `‖B·x − w‖² + ridge·‖x‖²`, solved through the normal equations
/// `(BᵀB + ridge·I)·x = Bᵀw`.
///
/// `b` is an `n×m` matrix with `n ≥ m`. Errors with
/// [`Error::SingularSystem`] when the 1-norm condition estimate of the
/// regularized Gram matrix exceeds [`GRAM_CONDITION_LIMIT`].
pub fn least_squares(b: &Tensor, w: &[f64], ridge: f64) -> Result<Vec<f64>> {
    if b.shape().len() != 2 {
        return Err(Error::ShapeMismatch(format!("least_squares needs a matrix, got {:?}", b.shape())));
    }
    let (n, m) = (b.rows(), b.cols());
    if w.len() != n {
        return Err(Error::ShapeMismatch(format!("matrix {n}x{m} vs rhs {}", w.len())));
    }
    if n < m {
        return Err(Error::ShapeMismatch(format!("underdetermined system {n}x{m}")));
    }
    // Gram matrix and right-hand side.
    let mut gram = vec![0.0; m * m];
    let mut rhs = vec![0.0; m];
    for i in 0..m {
        let ci: Vec<f64> = (0..n).map(|r| b.at(r, i)).collect();
        rhs[i] = dot(&ci, w);
        for j in i..m {
            let mut s = 0.0;
            for r in 0..n {
                s += ci[r] * b.at(r, j);
            }
            if i == j {
                s += ridge;
            }
            gram[i * m + j] = s;
            gram[j * m + i] = s;
        }
    }
    solve_spd_small(&gram, &rhs)
}

/// Solve a small symmetric positive-definite system by Gaussian elimination
/// with partial pivoting, checking the 1-norm condition estimate.
pub fn solve_spd_small(a: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let m = rhs.len();
    assert_eq!(a.len(), m * m);
    let inv = invert_small(a, m)?;
    let norm_a = one_norm(a, m);
    let norm_inv = one_norm(&inv, m);
    let cond = norm_a * norm_inv;
    if !cond.is_finite() || cond > GRAM_CONDITION_LIMIT {
        return Err(Error::SingularSystem { cond, limit: GRAM_CONDITION_LIMIT });
    }
    let mut x = vec![0.0; m];
    for i in 0..m {
        x[i] = dot(&inv[i * m..(i + 1) * m], rhs);
    }
    Ok(x)
}

fn one_norm(a: &[f64], m: usize) -> f64 {
    (0..m)
        .map(|j| (0..m).map(|i| a[i * m + j].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn invert_small(a: &[f64], m: usize) -> Result<Vec<f64>> {
    // Gauss-Jordan on [A | I] with partial pivoting.
    let mut aug = vec![0.0; m * 2 * m];
    let w = 2 * m;
    for i in 0..m {
        aug[i * w..i * w + m].copy_from_slice(&a[i * m..(i + 1) * m]);
        aug[i * w + m + i] = 1.0;
    }
    for col in 0..m {
        let mut piv = col;
        for r in col + 1..m {
            if aug[r * w + col].abs() > aug[piv * w + col].abs() {
                piv = r;
            }
        }
        let pval = aug[piv * w + col];
        if pval.abs() < f64::MIN_POSITIVE * 1e4 {
            return Err(Error::SingularSystem { cond: f64::INFINITY, limit: GRAM_CONDITION_LIMIT });
        }
        if piv != col {
            for c in 0..w {
                aug.swap(col * w + c, piv * w + c);
            }
        }
        let inv_p = 1.0 / aug[col * w + col];
        for c in 0..w {
            aug[col * w + c] *= inv_p;
        }
        for r in 0..m {
            if r == col {
                continue;
            }
            let f = aug[r * w + col];
            if f == 0.0 {
                continue;
            }
            for c in 0..w {
                aug[r * w + c] -= f * aug[col * w + c];
            }
        }
    }
    let mut inv = vec![0.0; m * m];
    for i in 0..m {
        inv[i * m..(i + 1) * m].copy_from_slice(&aug[i * w + m..(i + 1) * w]);
    }
    Ok(inv)
}

/// Numerical rank of the columns of `b` via modified Gram-Schmidt: columns
/// whose residual norm after orthogonalization exceeds `tol` count toward
/// the rank.
pub fn numerical_rank(b: &Tensor, tol: f64) -> usize {
    let (n, m) = (b.rows(), b.cols());
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut rank = 0;
    for j in 0..m {
        let mut v: Vec<f64> = (0..n).map(|r| b.at(r, j)).collect();
        for q in &basis {
            let proj = dot(q, &v);
            for (vi, qi) in v.iter_mut().zip(q) {
                *vi -= proj * qi;
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > tol {
            for vi in &mut v {
                *vi /= norm;
            }
            basis.push(v);
            rank += 1;
        }
    }
    rank
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_case() {
        let b = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = least_squares(&b, &[3.0, 4.0], 0.0).unwrap();
        assert_eq!(x, vec![3.0, 4.0]);
    }

    #[test]
    fn mean_of_components() {
        let b = Tensor::from_vec(&[2, 1], vec![1.0, 1.0]).unwrap();
        let x = least_squares(&b, &[2.0, 4.0], 0.0).unwrap();
        assert!((x[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn hand_solved_normal_equations() {
        // B = [[1,1],[1,-1]], w = [0.9,0.1]; BᵀB = 2I so x = Bᵀw/2 = [0.5,0.4].
        let b = Tensor::from_vec(&[2, 2], vec![1.0, 1.0, 1.0, -1.0]).unwrap();
        let x = least_squares(&b, &[0.9, 0.1], 0.0).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-12);
        assert!((x[1] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn residual_orthogonal_to_column_space() {
        use rand::Rng;
        let mut rng = crate::numerics::seeded_rng(7);
        for _ in 0..50 {
            let (n, m) = (8, 3);
            let data: Vec<f64> = (0..n * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b = Tensor::from_vec(&[n, m], data).unwrap();
            let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x = match least_squares(&b, &w, 0.0) {
                Ok(x) => x,
                Err(_) => continue, // near-singular draw
            };
            // residual r = w - Bx must satisfy ‖Bᵀr‖∞ ≤ 1e-9
            let mut r = w.clone();
            for i in 0..n {
                let mut s = 0.0;
                for j in 0..m {
                    s += b.at(i, j) * x[j];
                }
                r[i] -= s;
            }
            for j in 0..m {
                let btr: f64 = (0..n).map(|i| b.at(i, j) * r[i]).sum();
                assert!(btr.abs() <= 1e-9, "BᵀR = {btr}");
            }
        }
    }

    #[test]
    fn singular_system_detected() {
        // Two identical columns: Gram matrix singular at ridge 0.
        let b = Tensor::from_vec(&[3, 2], vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0]).unwrap();
        assert!(matches!(
            least_squares(&b, &[1.0, 2.0, 3.0], 0.0),
            Err(Error::SingularSystem { .. })
        ));
        // A ridge makes it solvable again.
        assert!(least_squares(&b, &[1.0, 2.0, 3.0], 1e-3).is_ok());
    }

    #[test]
    fn rank_of_pm1_columns() {
        let b = Tensor::from_vec(&[4, 3], vec![
            1.0, 1.0, 1.0, //
            1.0, -1.0, 1.0, //
            1.0, 1.0, -1.0, //
            1.0, -1.0, -1.0,
        ])
        .unwrap();
        assert_eq!(numerical_rank(&b, 1e-9), 3);
        let dep = Tensor::from_vec(&[3, 2], vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0]).unwrap();
        assert_eq!(numerical_rank(&dep, 1e-9), 1);
    }
}
