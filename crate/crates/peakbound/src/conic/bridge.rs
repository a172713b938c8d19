//! Backend that hands the conic program to Clarabel.
//!
//! The program `max c.s  s.t.  As = b, Gs <= h, Mat_j(s) + C_j psd` maps to
//! Clarabel's `min q.x  s.t.  Ax + slack = b, slack in K` with `q = -c`, a
//! zero cone for the equalities, a nonnegative cone for the inequalities and
//! one triangle cone per matrix block. Slacks for a block are the scaled
//! lower triangle of `Mat_j(s) + C_j` (off-diagonals times sqrt(2)), so the
//! returned cone duals unscale back to dense matrices and the stationarity
//! convention matches the embedded solver:
//!
//! ```txt
//!   c = A' lambda + G' mu - sum_j Mat_j*(X_j)
//! ```

use super::{ConicError, ConicProgram, SolveResult, SolverOptions, Status};
use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use std::collections::BTreeMap;

/// Position of entry `(row, col)`, `row <= col`, in Clarabel's scaled
/// triangle vectorization: upper triangle, column by column.
fn tri_pos(row: usize, col: usize) -> usize {
    col * (col + 1) / 2 + row
}

pub fn solve(program: &ConicProgram, options: &SolverOptions) -> Result<SolveResult, ConicError> {
    let n = program.num_scalars;
    let m_eq = program.equalities.len();
    let m_ineq = program.inequalities.len();
    let sqrt2 = 2f64.sqrt();

    // Constraint rows: equalities, inequalities, then svec rows per block.
    let mut num_rows = m_eq + m_ineq;
    let mut block_base = Vec::with_capacity(program.psd_blocks.len());
    for b in &program.psd_blocks {
        block_base.push(num_rows);
        num_rows += b.side * (b.side + 1) / 2;
    }

    // Triplets accumulated per (row, col); duplicate coefficient entries sum.
    let mut coo: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut rhs = vec![0.0; num_rows];
    for (ri, row) in program.equalities.iter().enumerate() {
        rhs[ri] = row.rhs;
        for &(k, v) in &row.terms {
            *coo.entry((ri, k)).or_insert(0.0) += v;
        }
    }
    for (ri, row) in program.inequalities.iter().enumerate() {
        rhs[m_eq + ri] = row.rhs;
        for &(k, v) in &row.terms {
            *coo.entry((m_eq + ri, k)).or_insert(0.0) += v;
        }
    }
    for (bi, b) in program.psd_blocks.iter().enumerate() {
        let base = block_base[bi];
        for &(p, q, k, v) in &b.coefs {
            let (row, col) = (p.min(q) as usize, p.max(q) as usize);
            let scale = if row == col { 1.0 } else { sqrt2 };
            *coo.entry((base + tri_pos(row, col), k)).or_insert(0.0) -= scale * v;
        }
        for &(p, q, v) in &b.consts {
            let (row, col) = (p.min(q) as usize, p.max(q) as usize);
            let scale = if row == col { 1.0 } else { sqrt2 };
            rhs[base + tri_pos(row, col)] += scale * v;
        }
    }

    // COO (sorted by row, col) to CSC.
    let mut by_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (&(r, c), &v) in &coo {
        by_col[c].push((r, v));
    }
    let mut colptr = Vec::with_capacity(n + 1);
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    colptr.push(0);
    for col in &by_col {
        for &(r, v) in col {
            rowval.push(r);
            nzval.push(v);
        }
        colptr.push(rowval.len());
    }
    let a = CscMatrix::new(num_rows, n, colptr, rowval, nzval);
    let p = CscMatrix::zeros((n, n));
    let q: Vec<f64> = {
        let mut q = vec![0.0; n];
        for &(k, v) in &program.objective {
            q[k] -= v;
        }
        q
    };

    let mut cones = Vec::new();
    if m_eq > 0 {
        cones.push(SupportedConeT::ZeroConeT(m_eq));
    }
    if m_ineq > 0 {
        cones.push(SupportedConeT::NonnegativeConeT(m_ineq));
    }
    for b in &program.psd_blocks {
        cones.push(SupportedConeT::PSDTriangleConeT(b.side));
    }

    let settings = DefaultSettingsBuilder::default()
        .verbose(options.verbose)
        .max_iter(options.max_iterations as u32)
        .build()
        .map_err(|e| ConicError::Backend(format!("settings: {e}")))?;
    let mut solver = DefaultSolver::new(&p, &q, &a, &rhs, &cones, settings)
        .map_err(|e| ConicError::Backend(format!("solver setup: {e:?}")))?;
    solver.solve();
    let sol = &solver.solution;

    let status = match sol.status {
        SolverStatus::Solved => Status::Optimal,
        SolverStatus::AlmostSolved => Status::NearOptimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => Status::Infeasible,
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => Status::Unbounded,
        _ => Status::NumericalFailure,
    };

    let scalars = sol.x.clone();
    let eq_duals = sol.z[..m_eq].to_vec();
    let ineq_duals = sol.z[m_eq..m_eq + m_ineq].to_vec();
    let mut psd_duals = Vec::with_capacity(program.psd_blocks.len());
    for (bi, b) in program.psd_blocks.iter().enumerate() {
        let base = block_base[bi];
        let k = b.side;
        let mut x = vec![0.0; k * k];
        for col in 0..k {
            for row in 0..=col {
                let v = sol.z[base + tri_pos(row, col)];
                let val = if row == col { v } else { v / sqrt2 };
                x[row * k + col] = val;
                x[col * k + row] = val;
            }
        }
        psd_duals.push(x);
    }

    let objective = -sol.obj_val;
    let dual_objective = -sol.obj_val_dual;
    let relative_gap =
        (objective - dual_objective).abs() / (1.0 + objective.abs().max(dual_objective.abs()));
    Ok(SolveResult {
        status,
        objective,
        dual_objective,
        scalars,
        eq_duals,
        ineq_duals,
        psd_duals,
        iterations: sol.iterations as usize,
        primal_residual: sol.r_prim,
        dual_residual: sol.r_dual,
        relative_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::{LinRow, PsdBlock, RowLabel, SolverOptions};

    #[test]
    fn univariate_moment_problem_matches_embedded() {
        // Order-2 moment matrix (side 3): distinguishes the two triangle
        // vectorization layouts, which agree on sides 1 and 2.
        let p = ConicProgram {
            num_scalars: 5,
            objective: vec![(1, 1.0)],
            equalities: vec![LinRow::new(vec![(0, 1.0)], 1.0, RowLabel::Mass)],
            inequalities: vec![LinRow::new(vec![(2, 1.0)], 2.0, RowLabel::TimeBudget)],
            psd_blocks: vec![
                PsdBlock {
                    side: 3,
                    label: "moment".into(),
                    coefs: vec![
                        (0, 0, 0, 1.0),
                        (0, 1, 1, 1.0),
                        (0, 2, 2, 1.0),
                        (1, 1, 2, 1.0),
                        (1, 2, 3, 1.0),
                        (2, 2, 4, 1.0),
                    ],
                    consts: vec![],
                },
                PsdBlock {
                    side: 2,
                    label: "support".into(),
                    coefs: vec![
                        (0, 0, 0, 1.0),
                        (0, 0, 2, -1.0),
                        (0, 1, 1, 1.0),
                        (0, 1, 3, -1.0),
                        (1, 1, 2, 1.0),
                        (1, 1, 4, -1.0),
                    ],
                    consts: vec![],
                },
            ],
        };
        let opts = SolverOptions::default();
        let r = solve(&p, &opts).unwrap();
        assert_eq!(r.status, Status::Optimal);
        assert!((r.objective - 1.0).abs() < 1e-6, "objective {}", r.objective);
        let e = crate::conic::ipm::solve(&p, &opts).unwrap();
        assert!((r.objective - e.objective).abs() < 1e-5);
        assert!((r.eq_duals[0] - e.eq_duals[0]).abs() < 1e-4);
    }

    #[test]
    fn psd_duals_unscale_to_dense_matrices() {
        // max y st [[1, y], [y, 1]] psd: X* = [[1/2, -1/2], [-1/2, 1/2]]
        // satisfies c = -Mat*(X): 1 = -2 * (-1/2).
        let p = ConicProgram {
            num_scalars: 1,
            objective: vec![(0, 1.0)],
            equalities: vec![],
            inequalities: vec![],
            psd_blocks: vec![PsdBlock {
                side: 2,
                label: "corr".into(),
                coefs: vec![(0, 1, 0, 1.0)],
                consts: vec![(0, 0, 1.0), (1, 1, 1.0)],
            }],
        };
        let r = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(r.status, Status::Optimal);
        assert!((r.objective - 1.0).abs() < 1e-7);
        let x = &r.psd_duals[0];
        assert!((x[0] - 0.5).abs() < 1e-5, "X00 {}", x[0]);
        assert!((x[1] + 0.5).abs() < 1e-5, "X01 {}", x[1]);
        // Stationarity in the shared convention.
        assert!((1.0 + 2.0 * x[1]).abs() < 1e-5);
    }
}
