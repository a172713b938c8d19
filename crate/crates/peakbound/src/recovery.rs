//! Candidate extremal points from solved moment vectors.
//!
//! When the peak moment matrix is numerically rank one, the measure behind
//! it is a single Dirac and its degree-1 moments are the coordinates of the
//! extremal point. Only that case is extracted; spread measures come back
//! with their rank indicator and `accepted == false`, which is a valid
//! outcome rather than an error. Multi-atom extraction is out of scope.

use crate::conic::SolveResult;
use crate::model::Horizon;
use crate::moments::moment_matrix;
use crate::poly::{Monomial, Var};
use crate::relaxation::Relaxation;
use crate::simulate::objective_value;

/// Spectral-ratio threshold `sigma_2/sigma_1` under which the peak moment
/// matrix counts as rank one.
pub const RANK_TOLERANCE: f64 = 1e-3;

/// Membership slack for the extracted point. Looser than the model default
/// because candidate coordinates carry solver noise of roughly the square
/// root of the duality gap.
pub const MEMBERSHIP_TOLERANCE: f64 = 1e-6;

/// Single-atom candidate read off a solved relaxation.
#[derive(Clone, Debug)]
pub struct RecoveredPoint {
    /// Peak time; absent in discrete mode, whose relaxation carries no time
    /// variable.
    pub t_star: Option<f64>,
    pub x_star: Vec<f64>,
    pub theta_star: Vec<f64>,
    /// `sigma_2/sigma_1` of the peak moment matrix; near zero for a Dirac.
    pub rank_indicator: f64,
    /// Rank condition and state-set membership both hold.
    pub accepted: bool,
    /// `|p(x*) - bound|`; small when the candidate is genuinely extremal.
    pub objective_gap: f64,
    /// Mean disturbance per subsystem, present when that subsystem's
    /// occupation moments put essentially all disturbance mass at one value
    /// (variance test). Input for trajectory replay.
    pub w_star: Vec<Option<Vec<f64>>>,
}

/// Reads the candidate point from the degree-1 moments of the peak measure
/// and judges it by the rank of the full peak moment matrix. Never mutates
/// or invalidates the solve result.
pub fn recover(relax: &Relaxation, result: &SolveResult) -> RecoveredPoint {
    let problem = &relax.problem;
    let vars = problem.vars;
    let off = &relax.offsets;
    let y_p = &result.scalars[off.peak..off.peak + relax.peak_basis.len()];

    let moment = |m: &Monomial| -> f64 {
        y_p[relax.peak_basis.index_of(m).expect("peak moment outside basis")]
    };
    let mass = moment(&Monomial::one(vars));
    // The balance row for v = 1 forces unit peak mass; guard anyway so a
    // garbage solve cannot divide by zero.
    let denom = if mass.abs() > 1e-12 { mass } else { 1.0 };
    let first = |v: Var| -> f64 {
        let mut m = Monomial::one(vars);
        match v {
            Var::T => m.t = 1,
            Var::X(i) => m.x[i] = 1,
            Var::Th(i) => m.th[i] = 1,
            Var::W(i) => m.w[i] = 1,
        }
        moment(&m) / denom
    };

    let t_star = match problem.horizon {
        Horizon::Finite(_) => Some(first(Var::T)),
        _ => None,
    };
    let x_star: Vec<f64> = (0..vars.nx).map(|i| first(Var::X(i))).collect();
    let theta_star: Vec<f64> = (0..vars.nth).map(|i| first(Var::Th(i))).collect();

    let mm = moment_matrix(&relax.peak_basis, relax.degree);
    let rank_indicator = spectral_ratio(&mm.evaluate(y_p), mm.side);

    let accepted = rank_indicator <= RANK_TOLERANCE
        && problem.state_set.contains(
            &x_star,
            &theta_star,
            &vec![0.0; vars.nw],
            MEMBERSHIP_TOLERANCE,
        );
    let objective_gap = (objective_value(&problem.objective, &x_star) - result.objective).abs();

    let w_star = (0..problem.subsystems.len())
        .map(|k| extract_disturbance(relax, result, k))
        .collect();

    RecoveredPoint {
        t_star,
        x_star,
        theta_star,
        rank_indicator,
        accepted,
        objective_gap,
        w_star,
    }
}

/// `sigma_2/sigma_1` of a symmetric matrix, eigenvalues taken by magnitude.
fn spectral_ratio(sym_dense: &[f64], side: usize) -> f64 {
    if side < 2 {
        return 0.0;
    }
    let a = faer::Mat::from_fn(side, side, |i, j| sym_dense[i * side + j]);
    let Ok(evd) = a.self_adjoint_eigen(faer::Side::Lower) else {
        return f64::INFINITY;
    };
    let mut mags: Vec<f64> = (0..side).map(|i| evd.S()[i].abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    if mags[0] <= 0.0 {
        return f64::INFINITY;
    }
    mags[1] / mags[0]
}

/// Mean disturbance of subsystem `k`'s occupation measure, kept only when
/// every coordinate's conditional variance is negligible (the disturbance
/// mass sits at a single value, so replaying the mean is faithful).
fn extract_disturbance(relax: &Relaxation, result: &SolveResult, k: usize) -> Option<Vec<f64>> {
    let vars = relax.problem.vars;
    if vars.nw == 0 {
        return None;
    }
    let basis = &relax.occ_bases[k];
    let off = relax.offsets.occ[k];
    let y_k = &result.scalars[off..off + basis.len()];
    let moment = |m: &Monomial| -> f64 {
        y_k[basis.index_of(m).expect("occupation moment outside basis")]
    };
    let mass = moment(&Monomial::one(vars));
    if mass <= 1e-8 {
        return None; // subsystem essentially inactive
    }
    let mut means = Vec::with_capacity(vars.nw);
    for j in 0..vars.nw {
        let mut m1 = Monomial::one(vars);
        m1.w[j] = 1;
        let mut m2 = Monomial::one(vars);
        m2.w[j] = 2;
        let mean = moment(&m1) / mass;
        let variance = moment(&m2) / mass - mean * mean;
        if variance > 1e-4 * (1.0 + mean * mean) {
            return None;
        }
        means.push(mean);
    }
    Some(means)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::{SolveResult, Status};
    use crate::model::{Objective, Problem, SemiAlgebraicSet, Subsystem, ValueTransform};
    use crate::poly::{Poly, Vars};

    fn two_state_problem(horizon: Horizon, nw: usize) -> Problem {
        let vars = Vars::new(2, 1, nw);
        let zero = Poly::zero(vars);
        Problem {
            name: "recovery-test".into(),
            vars,
            horizon,
            subsystems: vec![Subsystem::new(vec![zero.clone(), zero])],
            state_set: SemiAlgebraicSet::state_box(vars, &[(-1.0, 1.0), (-1.0, 1.0)]),
            init_set: SemiAlgebraicSet::state_box(vars, &[(0.0, 0.0), (0.0, 0.0)]),
            param_set: SemiAlgebraicSet::param_box(vars, &[(-1.0, 1.0)]),
            dist_set: if nw == 0 {
                SemiAlgebraicSet::whole_space()
            } else {
                SemiAlgebraicSet::dist_box(vars, &[(-0.5, 0.5)])
            },
            objective: Objective::Single(Poly::var(vars, Var::X(0))),
            value_transform: ValueTransform::None,
        }
    }

    /// Solve result whose scalars are exactly the stacked empirical moments;
    /// duals and residuals are irrelevant to recovery.
    fn synthetic_result(relax: &Relaxation, scalars: Vec<f64>, objective: f64) -> SolveResult {
        SolveResult {
            status: Status::Optimal,
            objective,
            dual_objective: objective,
            scalars,
            eq_duals: vec![0.0; relax.program.equalities.len()],
            ineq_duals: vec![0.0; relax.program.inequalities.len()],
            psd_duals: Vec::new(),
            iterations: 0,
            primal_residual: 0.0,
            dual_residual: 0.0,
            relative_gap: 0.0,
        }
    }

    #[test]
    fn dirac_peak_measure_is_accepted_and_exact() {
        let problem = two_state_problem(Horizon::Finite(1.0), 0);
        let relax = Relaxation::build(&problem, 2).unwrap();
        let (t, x, th) = (0.7, [0.3, -0.4], [0.2]);
        let y_init = relax.init_basis.dirac(0.0, &[0.0, 0.0], &th, &[]);
        let y_peak = relax.peak_basis.dirac(t, &x, &th, &[]);
        let y_occ: Vec<Vec<f64>> =
            relax.occ_bases.iter().map(|b| vec![0.0; b.len()]).collect();
        let scalars = relax.stack_scalars(&y_init, &y_peak, &y_occ);
        let result = synthetic_result(&relax, scalars, x[0]);

        let point = recover(&relax, &result);
        assert!(point.accepted, "rank indicator {}", point.rank_indicator);
        assert!(point.rank_indicator < 1e-10);
        assert!((point.t_star.unwrap() - t).abs() < 1e-12);
        for (got, want) in point.x_star.iter().zip(&x) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((point.theta_star[0] - th[0]).abs() < 1e-12);
        assert!(point.objective_gap < 1e-12);
    }

    #[test]
    fn two_atom_peak_measure_is_rejected() {
        let problem = two_state_problem(Horizon::Finite(1.0), 0);
        let relax = Relaxation::build(&problem, 2).unwrap();
        let th = [0.0];
        let a = relax.peak_basis.dirac(0.2, &[0.5, 0.0], &th, &[]);
        let b = relax.peak_basis.dirac(0.8, &[-0.5, 0.3], &th, &[]);
        let y_peak: Vec<f64> =
            a.iter().zip(&b).map(|(pa, pb)| 0.5 * pa + 0.5 * pb).collect();
        let y_init = relax.init_basis.dirac(0.0, &[0.0, 0.0], &th, &[]);
        let y_occ: Vec<Vec<f64>> =
            relax.occ_bases.iter().map(|b| vec![0.0; b.len()]).collect();
        let scalars = relax.stack_scalars(&y_init, &y_peak, &y_occ);
        let result = synthetic_result(&relax, scalars, 0.5);

        let point = recover(&relax, &result);
        assert!(!point.accepted);
        assert!(point.rank_indicator > 0.1, "two atoms must not look rank one");
    }

    #[test]
    fn concentrated_disturbance_is_replayed_spread_is_omitted() {
        let problem = two_state_problem(Horizon::Steps(10), 1);
        let relax = Relaxation::build(&problem, 2).unwrap();
        let th = [0.0];
        let y_init = relax.init_basis.dirac(0.0, &[0.0, 0.0], &th, &[0.0]);
        let y_peak = relax.peak_basis.dirac(0.0, &[0.1, 0.0], &th, &[0.0]);

        type Point = (f64, Vec<f64>, Vec<f64>, Vec<f64>);
        let occ_moments = |points: &[Point]| -> Vec<Vec<f64>> {
            relax
                .occ_bases
                .iter()
                .map(|b| {
                    b.average(points.iter().map(|(t, x, th, w)| {
                        (1.0, *t, &x[..], &th[..], &w[..])
                    }))
                })
                .collect()
        };
        let walk = |w_of: &dyn Fn(usize) -> f64| -> Vec<Point> {
            (0..10)
                .map(|i| (0.0, vec![0.01 * i as f64, 0.0], vec![0.0], vec![w_of(i)]))
                .collect()
        };
        let constant_w = walk(&|_| 0.15);
        // Same mass split across w = +/-0.2: first moments cancel, second
        // moments do not, so the variance test must reject replay.
        let spread_w = walk(&|i| if i % 2 == 0 { 0.2 } else { -0.2 });

        let run = |y_occ: Vec<Vec<f64>>| {
            let scalars = relax.stack_scalars(&y_init, &y_peak, &y_occ);
            let result = synthetic_result(&relax, scalars, 0.1);
            recover(&relax, &result)
        };

        let constant = run(occ_moments(&constant_w));
        assert_eq!(constant.t_star, None);
        let w = constant.w_star[0].as_ref().expect("constant w must replay");
        assert!((w[0] - 0.15).abs() < 1e-12);

        let spread = run(occ_moments(&spread_w));
        assert!(spread.w_star[0].is_none(), "spread w must be omitted");
    }
}
