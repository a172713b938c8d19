//! Assembly of the semidefinite relaxation whose optimum upper-bounds the
//! trajectory peak.
//!
//! The unknowns are truncated moment sequences of three measure families: an
//! initial measure over `(x, th)`, a peak measure over `(t, x, th)` and one
//! occupation measure per subsystem over `(t, x, th, w)` (discrete time and
//! unbounded horizons drop `t`). Linear rows tie them together: transporting
//! any test monomial `v` along the dynamics must balance,
//!
//! ```txt
//!   0 = <v|_{t=0}, mu_0> - <v, mu_p> + sum_k <L_k v, mu_k>
//! ```
//!
//! with `L_k v = dv/dt + f_k . grad_x v` in continuous time and
//! `L_k v = v(f_k(x, th, w), th) - v(x, th)` in discrete time. Moment and
//! localizing matrices of every measure are constrained positive
//! semidefinite. Maximizing the expected objective under the peak measure
//! over this feasible set yields a certified upper bound that shrinks as the
//! relaxation degree grows.

use crate::conic::{ConicProgram, LinRow, PsdBlock, RowLabel, SolveResult};
use crate::model::{Horizon, Objective, Problem, SemiAlgebraicSet};
use crate::moments::{
    localizing_matrix, localizing_matrix_at, moment_matrix, MatrixSpec, MomentBasis,
};
use crate::poly::{BlockMask, Monomial, Poly, Var};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RelaxError {
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error("relaxation degree must be at least 1")]
    DegreeZero,
    #[error("degree {degree} too low: {what} has degree {found}, need 2*degree >= {found}")]
    DegreeTooLow { degree: u32, what: String, found: u32 },
    #[error("initial set constraint {index} evaluates to {value} at the pinned start point")]
    InconsistentInitSet { index: usize, value: f64 },
}

/// Scalar layout: where each measure's moments live in the stacked variable
/// vector.
#[derive(Clone, Debug)]
pub struct Offsets {
    pub init: usize,
    pub peak: usize,
    pub occ: Vec<usize>,
    /// Epigraph variable for maximin objectives, placed after all moments.
    pub q: Option<usize>,
    pub num_scalars: usize,
}

/// Assembled relaxation: the conic program plus everything needed to
/// interpret its solution (bases, offsets, the problem it came from).
#[derive(Clone, Debug)]
pub struct Relaxation {
    pub degree: u32,
    pub problem: Problem,
    pub init_basis: MomentBasis,
    pub peak_basis: MomentBasis,
    pub occ_bases: Vec<MomentBasis>,
    pub occ_orders: Vec<u32>,
    pub offsets: Offsets,
    pub program: ConicProgram,
}

/// Occupation-measure relaxation order. The floor `ceil((2d - 1 + deg f)/2)`
/// keeps every monomial produced by transporting a degree-`2d` test monomial
/// inside the occupation basis.
pub fn continuous_occupation_order(degree: u32, deg_f: u32) -> u32 {
    let a = degree + deg_f.div_ceil(2) - 1;
    let b = (2 * degree - 1 + deg_f).div_ceil(2);
    a.max(b)
}

/// Discrete-time analogue: composing a degree-`2d` test monomial with the
/// update map multiplies degrees, so the order scales with `deg f`.
pub fn discrete_occupation_order(degree: u32, deg_f: u32) -> u32 {
    degree * deg_f.max(1)
}

/// State coordinates the initial set restricts to a single value, with that
/// value: zero-width intervals of the set's bounding box.
fn pinned_init_coords(problem: &Problem) -> Vec<(usize, f64)> {
    let Some(bounds) =
        crate::simulate::bounding_box(&problem.init_set, crate::simulate::Block::X, problem.vars.nx)
    else {
        return Vec::new();
    };
    bounds
        .iter()
        .enumerate()
        .filter_map(|(i, &(lo, hi))| {
            let mid = 0.5 * (lo + hi);
            (hi - lo <= 1e-12 * (1.0 + mid.abs())).then_some((i, mid))
        })
        .collect()
}

impl Relaxation {
    /// Builds the degree-`d` relaxation. The problem is validated first;
    /// callers that want scaled coordinates normalize before building.
    pub fn build(problem: &Problem, degree: u32) -> Result<Relaxation, RelaxError> {
        problem.validate()?;
        if degree == 0 {
            return Err(RelaxError::DegreeZero);
        }
        check_degrees(problem, degree)?;

        let vars = problem.vars;
        let horizon = problem.horizon;
        let discrete = problem.is_discrete();
        let with_t = matches!(horizon, Horizon::Finite(_));

        let init_mask = BlockMask { t: false, x: true, th: true, w: false };
        let peak_mask = BlockMask { t: with_t, x: true, th: true, w: false };
        let occ_mask = BlockMask { t: with_t, x: true, th: true, w: true };

        // Start coordinates the initial set fixes to a point are substituted
        // into the initial measure. Keeping them as zero-width localizing
        // blocks would leave the program without a strictly feasible point
        // and stall any interior-point solver short of full accuracy.
        let pinned = pinned_init_coords(problem);
        let pinned_flats: Vec<usize> = pinned.iter().map(|&(i, _)| 1 + i).collect();
        let init_set = if pinned.is_empty() {
            problem.init_set.clone()
        } else {
            let mut subs = Poly::identity_subs(vars);
            for &(i, c) in &pinned {
                subs[1 + i] = Poly::constant(vars, c);
            }
            let mut kept = Vec::new();
            for (gi, g) in problem.init_set.constraints.iter().enumerate() {
                let h = g.substitute(&subs);
                if h.degree() == 0 {
                    let value = h.coef(&Monomial::one(vars));
                    if value < -1e-9 {
                        return Err(RelaxError::InconsistentInitSet { index: gi, value });
                    }
                    continue;
                }
                kept.push(h);
            }
            SemiAlgebraicSet::new(kept)
        };

        let init_basis = MomentBasis::new_excluding(vars, init_mask, 2 * degree, &pinned_flats);
        let peak_basis = MomentBasis::new(vars, peak_mask, 2 * degree);
        let occ_orders: Vec<u32> = problem
            .subsystems
            .iter()
            .map(|sub| {
                if discrete {
                    discrete_occupation_order(degree, sub.degree())
                } else {
                    continuous_occupation_order(degree, sub.degree())
                }
            })
            .collect();
        let occ_bases: Vec<MomentBasis> = occ_orders
            .iter()
            .map(|&r| MomentBasis::new(vars, occ_mask, 2 * r))
            .collect();

        let mut offsets = Offsets {
            init: 0,
            peak: init_basis.len(),
            occ: Vec::with_capacity(occ_bases.len()),
            q: None,
            num_scalars: 0,
        };
        let mut next = offsets.peak + peak_basis.len();
        for b in &occ_bases {
            offsets.occ.push(next);
            next += b.len();
        }
        let maximin = matches!(problem.objective, Objective::Maximin(_));
        if maximin {
            offsets.q = Some(next);
            next += 1;
        }
        offsets.num_scalars = next;

        let mut program = ConicProgram {
            num_scalars: next,
            ..Default::default()
        };

        // Mass normalization: the initial measure is a probability measure.
        let zero_m = Monomial::one(vars);
        let init_idx = |m: &Monomial| -> usize {
            offsets.init + init_basis.index_of(m).expect("initial moment outside basis")
        };
        let peak_idx = |m: &Monomial| -> usize {
            offsets.peak + peak_basis.index_of(m).expect("peak moment outside basis")
        };
        program.equalities.push(LinRow::new(
            vec![(init_idx(&zero_m), 1.0)],
            1.0,
            RowLabel::Mass,
        ));

        // One balance row per test monomial (the peak basis itself).
        for v in &peak_basis.monomials {
            let mut acc: std::collections::BTreeMap<usize, f64> = Default::default();
            let mut add = |idx: usize, c: f64| {
                let e = acc.entry(idx).or_insert(0.0);
                *e += c;
                if e.abs() <= crate::poly::COEF_PRUNE {
                    acc.remove(&idx);
                }
            };
            if v.t == 0 {
                // Restriction to the start: pinned coordinates evaluate to
                // their constants, the rest index the initial moments.
                let mut factor = 1.0;
                let mut reduced = v.clone();
                for &(i, c) in &pinned {
                    let e = reduced.x[i];
                    if e > 0 {
                        factor *= c.powi(e as i32);
                        reduced.x[i] = 0;
                    }
                }
                if factor.abs() > crate::poly::COEF_PRUNE {
                    add(init_idx(&reduced), factor);
                }
            }
            add(peak_idx(v), -1.0);
            for (k, sub) in problem.subsystems.iter().enumerate() {
                let transported = if discrete {
                    Poly::compose_monomial(v, &sub.f).sub(&Poly::from_term(v.clone(), 1.0))
                } else {
                    Poly::from_term(v.clone(), 1.0).lie(&sub.f)
                };
                for (m, c) in transported.terms() {
                    let idx = offsets.occ[k]
                        + occ_bases[k]
                            .index_of(m)
                            .expect("transported moment outside occupation basis");
                    add(idx, c);
                }
            }
            let terms: Vec<(usize, f64)> = acc.into_iter().collect();
            if terms.is_empty() {
                continue;
            }
            program.equalities.push(
                LinRow::new(terms, 0.0, RowLabel::Liouville(v.clone())).normalized(),
            );
        }

        // Objective and, for maximin, the epigraph links.
        match &problem.objective {
            Objective::Single(p) => {
                program.objective = p
                    .terms()
                    .map(|(m, c)| (peak_idx(m), c))
                    .collect();
            }
            Objective::Maximin(ps) => {
                let q = offsets.q.unwrap();
                program.objective = vec![(q, 1.0)];
                for (i, p) in ps.iter().enumerate() {
                    let mut terms = vec![(q, 1.0)];
                    for (m, c) in p.terms() {
                        terms.push((peak_idx(m), -c));
                    }
                    program.inequalities.push(
                        LinRow::new(terms, 0.0, RowLabel::ObjectiveLink(i)).normalized(),
                    );
                }
            }
        }

        // Discrete time: the occupation masses together spend the step budget.
        if let Horizon::Steps(n) = horizon {
            let terms: Vec<(usize, f64)> = (0..occ_bases.len())
                .map(|k| {
                    (
                        offsets.occ[k]
                            + occ_bases[k].index_of(&zero_m).expect("unit moment"),
                        1.0,
                    )
                })
                .collect();
            program
                .inequalities
                .push(LinRow::new(terms, n as f64, RowLabel::TimeBudget));
        }

        // Positive semidefinite structure per measure.
        let push = |program: &mut ConicProgram, spec: MatrixSpec, offset: usize, label: String| {
            program.psd_blocks.push(PsdBlock::from_spec(&spec, offset, label));
        };
        let support = |program: &mut ConicProgram,
                       basis: &MomentBasis,
                       offset: usize,
                       parent: u32,
                       set: &SemiAlgebraicSet,
                       who: &str,
                       what: &str| {
            for (i, g) in set.constraints.iter().enumerate() {
                push(
                    program,
                    localizing_matrix(basis, parent, g),
                    offset,
                    format!("loc({who}, {what}[{i}])"),
                );
            }
        };

        let time_box = match horizon {
            Horizon::Finite(t) => {
                let tv = Poly::var(vars, Var::T);
                Some(tv.mul(&Poly::constant(vars, t).sub(&tv)))
            }
            _ => None,
        };

        push(
            &mut program,
            moment_matrix(&init_basis, degree),
            offsets.init,
            "M(mu0)".into(),
        );
        support(&mut program, &init_basis, offsets.init, degree, &init_set, "mu0", "X0");
        support(&mut program, &init_basis, offsets.init, degree, &problem.param_set, "mu0", "Th");

        push(
            &mut program,
            moment_matrix(&peak_basis, degree),
            offsets.peak,
            "M(mup)".into(),
        );
        if let Some(gt) = &time_box {
            push(
                &mut program,
                localizing_matrix_at(&peak_basis, degree.saturating_sub(2), gt),
                offsets.peak,
                "loc(mup, time)".into(),
            );
        }
        support(&mut program, &peak_basis, offsets.peak, degree, &problem.state_set, "mup", "X");
        support(&mut program, &peak_basis, offsets.peak, degree, &problem.param_set, "mup", "Th");

        for (k, sub) in problem.subsystems.iter().enumerate() {
            let basis = &occ_bases[k];
            let off = offsets.occ[k];
            let r = occ_orders[k];
            let who = format!("muk{k}");
            push(&mut program, moment_matrix(basis, r), off, format!("M({who})"));
            if let Some(gt) = &time_box {
                push(
                    &mut program,
                    localizing_matrix_at(basis, r.saturating_sub(2), gt),
                    off,
                    format!("loc({who}, time)"),
                );
            }
            support(&mut program, basis, off, r, &problem.state_set, &who, "X");
            support(&mut program, basis, off, r, &sub.valid_on, &who, "Xk");
            support(&mut program, basis, off, r, &problem.param_set, &who, "Th");
            // Disturbance support: discrete transport composes monomials up
            // to the full occupation degree, so anchor at the occupation
            // order there; continuous transport only multiplies by f, and
            // the parent degree suffices.
            let w_parent = if discrete { r } else { degree };
            support(&mut program, basis, off, w_parent, &problem.dist_set, &who, "W");
        }

        Ok(Relaxation {
            degree,
            problem: problem.clone(),
            init_basis,
            peak_basis,
            occ_bases,
            occ_orders,
            offsets,
            program,
        })
    }

    /// Structural sizes, for logs and planning.
    pub fn summary(&self) -> PlanSummary {
        PlanSummary {
            degree: self.degree,
            occupation_orders: self.occ_orders.clone(),
            num_scalars: self.offsets.num_scalars,
            num_equalities: self.program.equalities.len(),
            num_inequalities: self.program.inequalities.len(),
            blocks: self
                .program
                .psd_blocks
                .iter()
                .map(|b| (b.label.clone(), b.side))
                .collect(),
        }
    }

    /// Stacks empirical measure moments into a scalar vector following this
    /// relaxation's layout; for residual diagnostics and tests.
    pub fn stack_scalars(&self, y_init: &[f64], y_peak: &[f64], y_occ: &[Vec<f64>]) -> Vec<f64> {
        assert_eq!(y_init.len(), self.init_basis.len());
        assert_eq!(y_peak.len(), self.peak_basis.len());
        assert_eq!(y_occ.len(), self.occ_bases.len());
        let mut s = vec![0.0; self.offsets.num_scalars];
        s[self.offsets.init..self.offsets.init + y_init.len()].copy_from_slice(y_init);
        s[self.offsets.peak..self.offsets.peak + y_peak.len()].copy_from_slice(y_peak);
        for (k, yk) in y_occ.iter().enumerate() {
            assert_eq!(yk.len(), self.occ_bases[k].len());
            s[self.offsets.occ[k]..self.offsets.occ[k] + yk.len()].copy_from_slice(yk);
        }
        s
    }

    /// Largest absolute violation of the balance rows at a stacked scalar
    /// vector, in unscaled units.
    pub fn balance_residual(&self, s: &[f64]) -> f64 {
        self.program
            .equalities
            .iter()
            .filter(|row| matches!(row.label, RowLabel::Liouville(_)))
            .map(|row| (row.eval(s) - row.rhs).abs() * row.scale)
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug)]
pub struct PlanSummary {
    pub degree: u32,
    pub occupation_orders: Vec<u32>,
    pub num_scalars: usize,
    pub num_equalities: usize,
    pub num_inequalities: usize,
    pub blocks: Vec<(String, usize)>,
}

fn check_degrees(problem: &Problem, degree: u32) -> Result<(), RelaxError> {
    let check = |what: String, found: u32| -> Result<(), RelaxError> {
        if found > 2 * degree {
            Err(RelaxError::DegreeTooLow { degree, what, found })
        } else {
            Ok(())
        }
    };
    for (i, p) in problem.objective.components().iter().enumerate() {
        check(format!("objective component {i}"), p.degree())?;
    }
    let sets = [
        (&problem.init_set, "initial set"),
        (&problem.state_set, "state set"),
        (&problem.param_set, "parameter set"),
        (&problem.dist_set, "disturbance set"),
    ];
    for (set, name) in sets {
        for (i, g) in set.constraints.iter().enumerate() {
            check(format!("{name} constraint {i}"), g.degree())?;
        }
    }
    for (k, sub) in problem.subsystems.iter().enumerate() {
        for (i, g) in sub.valid_on.constraints.iter().enumerate() {
            check(format!("subsystem {k} region constraint {i}"), g.degree())?;
        }
    }
    Ok(())
}

/// Dual certificate recovered from the solved relaxation: a polynomial
/// `v(t, x, th)` and scalars that witness the bound. Feasibility of the
/// certificate means, up to sampling tolerance:
///
/// * `v(0, x, th) <= gamma` on the initial set,
/// * `v` cannot increase along any admissible motion (continuous: `L_k v <=
///   0`; discrete: `v(f_k(x, th, w), th) - v(x, th) <= time_dual`),
/// * `v >= sum_i beta_i p_i` wherever trajectories live.
///
/// Together these force `bound = gamma + horizon * time_dual` to dominate
/// the peak.
#[derive(Clone, Debug)]
pub struct Certificate {
    pub gamma: f64,
    /// Per-step decrease allowance (discrete time budget dual); zero in
    /// continuous time.
    pub time_dual: f64,
    pub v: Poly,
    /// Convex weights over objective components; `[1]` for single
    /// objectives.
    pub beta: Vec<f64>,
    /// `gamma + n * time_dual` for `n` steps, else `gamma`.
    pub dual_bound: f64,
}

/// Reads the dual solution back into certificate form. Row scales recorded
/// during normalization are undone here.
pub fn extract_certificate(relax: &Relaxation, result: &SolveResult) -> Certificate {
    let vars = relax.problem.vars;
    let mut v = Poly::zero(vars);
    let mut gamma = 0.0;
    for (row, &dual) in relax.program.equalities.iter().zip(&result.eq_duals) {
        match &row.label {
            RowLabel::Mass => gamma = dual / row.scale,
            RowLabel::Liouville(m) => v.add_term(m.clone(), dual / row.scale),
            _ => {}
        }
    }
    let mut time_dual = 0.0;
    let ncomp = relax.problem.objective.components().len();
    let mut beta = vec![0.0; ncomp];
    for (row, &dual) in relax.program.inequalities.iter().zip(&result.ineq_duals) {
        match &row.label {
            RowLabel::TimeBudget => time_dual = dual / row.scale,
            RowLabel::ObjectiveLink(i) => beta[*i] = dual / row.scale,
            _ => {}
        }
    }
    if matches!(relax.problem.objective, Objective::Single(_)) {
        beta = vec![1.0];
    }
    let dual_bound = match relax.problem.horizon {
        Horizon::Steps(n) => gamma + n as f64 * time_dual,
        _ => gamma,
    };
    Certificate { gamma, time_dual, v, beta, dual_bound }
}
