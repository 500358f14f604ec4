use nalgebra::{DMatrix, DVector};

use super::{SolveReport, SolveStatus};
use crate::error::{Error, Result};

/// `0 ≤ z ⊥ Mz + q ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LcpProblem {
    pub m: DMatrix<f64>,
    pub q: DVector<f64>,
}

impl LcpProblem {
    pub fn new(m: DMatrix<f64>, q: DVector<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() != q.len() {
            return Err(Error::InvalidInput(format!(
                "LCP dimensions disagree: M is {}x{}, q has {}",
                m.nrows(),
                m.ncols(),
                q.len()
            )));
        }
        if m.iter().chain(q.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("LCP data must be finite".into()));
        }
        Ok(Self { m, q })
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }
}

/// `‖min(z, Mz + q)‖∞`, zero exactly at solutions.
pub fn lcp_residual(p: &LcpProblem, z: &DVector<f64>) -> f64 {
    let w = &p.m * z + &p.q;
    z.iter()
        .zip(w.iter())
        .map(|(zi, wi)| zi.min(*wi).abs())
        .fold(0.0, f64::max)
}

const PIVOT_TOL: f64 = 1e-12;

/// Lemke's complementary pivoting with covering vector `1` and a
/// lexicographic ratio test. Falls back to PGS when a pivot is numerically
/// singular.
pub fn solve_lcp_lemke(p: &LcpProblem) -> SolveReport {
    lemke(p, 50 * p.dim().max(1))
}

pub(crate) fn lemke(p: &LcpProblem, max_pivots: usize) -> SolveReport {
    let n = p.dim();
    if n == 0 || p.q.iter().all(|&x| x >= 0.0) {
        let z = DVector::zeros(n);
        return SolveReport {
            residual: lcp_residual(p, &z),
            z,
            iterations: 0,
            status: SolveStatus::Converged,
        };
    }

    // Variables: w_i = i, z_i = n + i, artificial z0 = 2n.
    let z0 = 2 * n;
    let column = |var: usize| -> DVector<f64> {
        if var < n {
            let mut e = DVector::zeros(n);
            e[var] = 1.0;
            e
        } else if var < 2 * n {
            -p.m.column(var - n).into_owned()
        } else {
            DVector::from_element(n, -1.0)
        }
    };

    let mut basis: Vec<usize> = (0..n).collect();
    let mut binv = DMatrix::<f64>::identity(n, n);
    let mut x = p.q.clone();

    // First pivot: z0 enters at the row of the most negative q.
    let mut row = 0;
    for i in 1..n {
        if p.q[i] < p.q[row] {
            row = i;
        }
    }
    let mut entering = z0;
    let mut iterations = 0;
    let status = loop {
        let col = &binv * column(entering);
        if iterations > 0 {
            match lex_ratio_row(&x, &binv, &col, &basis, z0) {
                Some(r) => row = r,
                None => break SolveStatus::RayTermination,
            }
        }
        if col[row].abs() <= PIVOT_TOL {
            break SolveStatus::Singular;
        }
        pivot(&mut binv, &mut x, &col, row);
        let leaving = basis[row];
        basis[row] = entering;
        iterations += 1;
        if leaving == z0 {
            break SolveStatus::Converged;
        }
        if iterations >= max_pivots {
            break SolveStatus::MaxIter;
        }
        entering = if leaving < n { leaving + n } else { leaving - n };
    };

    let mut z = DVector::zeros(n);
    for (i, &var) in basis.iter().enumerate() {
        if (n..2 * n).contains(&var) {
            z[var - n] = x[i].max(0.0);
        }
    }
    let residual = lcp_residual(p, &z);
    match status {
        SolveStatus::Converged => SolveReport {
            z,
            residual,
            iterations,
            status,
        },
        SolveStatus::Singular => {
            let mut report = pgs(p, 10_000, 1e-10, z).unwrap_or_else(|_| SolveReport {
                z: DVector::zeros(n),
                residual: f64::INFINITY,
                iterations: 0,
                status: SolveStatus::Singular,
            });
            report.iterations += iterations;
            if !report.converged() {
                report.status = SolveStatus::Singular;
            }
            report
        }
        other => SolveReport {
            z,
            residual,
            iterations,
            status: other,
        },
    }
}

/// Minimum-ratio row with lexicographic tie-breaking on rows of `B⁻¹`;
/// the artificial variable leaves whenever it ties for the minimum.
fn lex_ratio_row(
    x: &DVector<f64>,
    binv: &DMatrix<f64>,
    col: &DVector<f64>,
    basis: &[usize],
    z0: usize,
) -> Option<usize> {
    let n = x.len();
    let candidates: Vec<usize> = (0..n).filter(|&i| col[i] > PIVOT_TOL).collect();
    if candidates.is_empty() {
        return None;
    }
    let min_ratio = candidates
        .iter()
        .map(|&i| x[i] / col[i])
        .fold(f64::INFINITY, f64::min);
    let scale = min_ratio.abs().max(1.0);
    let mut ties: Vec<usize> = candidates
        .into_iter()
        .filter(|&i| x[i] / col[i] <= min_ratio + 1e-12 * scale)
        .collect();
    if let Some(&r) = ties.iter().find(|&&i| basis[i] == z0) {
        return Some(r);
    }
    let mut k = 0;
    while ties.len() > 1 && k < n {
        let m = ties
            .iter()
            .map(|&i| binv[(i, k)] / col[i])
            .fold(f64::INFINITY, f64::min);
        ties.retain(|&i| binv[(i, k)] / col[i] <= m + 1e-14 * m.abs().max(1.0));
        k += 1;
    }
    ties.first().copied()
}

fn pivot(binv: &mut DMatrix<f64>, x: &mut DVector<f64>, col: &DVector<f64>, row: usize) {
    let n = x.len();
    let piv = col[row];
    for c in 0..n {
        binv[(row, c)] /= piv;
    }
    x[row] /= piv;
    for i in 0..n {
        if i == row || col[i] == 0.0 {
            continue;
        }
        let f = col[i];
        for c in 0..n {
            binv[(i, c)] -= f * binv[(row, c)];
        }
        x[i] -= f * x[row];
    }
}

/// Projected Gauss–Seidel sweeps `z_i ← max(0, z_i − (Mz + q)_i / M_ii)`.
pub fn solve_lcp_pgs(p: &LcpProblem, max_iter: usize, tol: f64) -> Result<SolveReport> {
    pgs(p, max_iter, tol, DVector::zeros(p.dim()))
}

fn pgs(p: &LcpProblem, max_iter: usize, tol: f64, z0: DVector<f64>) -> Result<SolveReport> {
    let n = p.dim();
    if let Some(i) = (0..n).find(|&i| p.m[(i, i)] == 0.0) {
        return Err(Error::Solver(format!("PGS needs a nonzero diagonal, M[{i},{i}] = 0")));
    }
    let mut z = z0;
    let mut iterations = 0;
    let mut residual = lcp_residual(p, &z);
    while residual > tol && iterations < max_iter {
        for i in 0..n {
            let wi = p.m.row(i).dot(&z.transpose()) + p.q[i];
            z[i] = (z[i] - wi / p.m[(i, i)]).max(0.0);
        }
        iterations += 1;
        residual = lcp_residual(p, &z);
    }
    Ok(SolveReport {
        status: if residual <= tol {
            SolveStatus::Converged
        } else {
            SolveStatus::MaxIter
        },
        z,
        residual,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn lcp(m: &[f64], q: &[f64]) -> LcpProblem {
        let n = q.len();
        LcpProblem::new(DMatrix::from_row_slice(n, n, m), DVector::from_column_slice(q)).unwrap()
    }

    #[test]
    fn nonnegative_q_is_trivial() {
        let r = solve_lcp_lemke(&lcp(&[2.0, 1.0, 1.0, 2.0], &[1.0, 0.0]));
        assert!(r.converged());
        assert_eq!(r.z.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn identity_matrix_clamps() {
        let r = solve_lcp_lemke(&lcp(&[1.0, 0.0, 0.0, 1.0], &[-1.0, 2.0]));
        assert!(r.converged());
        assert_relative_eq!(r.z[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(r.z[1], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn pgs_scalar() {
        let r = solve_lcp_pgs(&lcp(&[2.0], &[-4.0]), 100, 1e-12).unwrap();
        assert!(r.converged());
        assert_relative_eq!(r.z[0], 2.0, epsilon = 1e-12);
        let r = solve_lcp_pgs(&lcp(&[2.0], &[4.0]), 100, 1e-12).unwrap();
        assert_eq!(r.z[0], 0.0);
    }

    #[test]
    fn pgs_rejects_zero_diagonal() {
        assert!(solve_lcp_pgs(&lcp(&[0.0, 1.0, 1.0, 1.0], &[-1.0, -1.0]), 10, 1e-8).is_err());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        assert!(LcpProblem::new(DMatrix::identity(2, 2), DVector::zeros(3)).is_err());
    }

    #[test]
    fn ray_termination_on_infeasible() {
        // w = -z - 1 can never be nonnegative.
        let r = solve_lcp_lemke(&lcp(&[-1.0], &[-1.0]));
        assert_eq!(r.status, SolveStatus::RayTermination);
    }

    #[test]
    fn degenerate_q_terminates() {
        let r = solve_lcp_lemke(&lcp(
            &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            &[-1.0, -1.0, -1.0],
        ));
        assert!(r.converged(), "{r:?}");
        assert!(r.residual < 1e-12);
    }
}
