//! Linear conic programs over scalar variables with semidefinite constraints,
//! in the form produced by the moment relaxation:
//!
//! ```txt
//!   maximize    c . s
//!   subject to  a_r . s  = b_r          (equality rows)
//!               g_i . s <= h_i          (inequality rows)
//!               Mat_j(s) + C_j  psd     (symmetric matrix blocks, affine in s)
//! ```
//!
//! Every moment of every measure is one scalar in `s`; each matrix block
//! entry is a sparse linear combination of scalars. Solvers report primal
//! scalars and duals for all three constraint families, which downstream
//! code turns into certificates.

pub mod ipm;
pub mod sdpa;

#[cfg(feature = "bridge-clarabel")]
pub mod bridge;

use crate::poly::Monomial;
use thiserror::Error;

/// What a linear row stands for, kept so dual variables can be mapped back
/// to certificate coefficients without positional bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub enum RowLabel {
    /// Normalization `<1, mu_0> = 1`.
    Mass,
    /// Flow balance tested against this monomial.
    Liouville(Monomial),
    /// Discrete-time total step budget `sum_k <1, mu_k> <= n`.
    TimeBudget,
    /// Maximin epigraph link `q <= L_{y_p}(p_i)` for objective component `i`.
    ObjectiveLink(usize),
}

/// Sparse linear row `terms . s (=|<=) rhs`. `scale` records the factor the
/// row was divided by during normalization; duals must be divided by it to
/// recover multipliers of the unscaled row.
#[derive(Clone, Debug)]
pub struct LinRow {
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
    pub label: RowLabel,
    pub scale: f64,
}

impl LinRow {
    pub fn new(terms: Vec<(usize, f64)>, rhs: f64, label: RowLabel) -> Self {
        LinRow { terms, rhs, label, scale: 1.0 }
    }

    /// Divides the row by its largest absolute coefficient (including rhs),
    /// recording the factor.
    pub fn normalized(mut self) -> Self {
        let m = self
            .terms
            .iter()
            .map(|&(_, c)| c.abs())
            .fold(self.rhs.abs(), f64::max);
        if m > 0.0 && m.is_finite() {
            for t in &mut self.terms {
                t.1 /= m;
            }
            self.rhs /= m;
            self.scale = m;
        }
        self
    }

    pub fn eval(&self, s: &[f64]) -> f64 {
        self.terms.iter().map(|&(k, c)| c * s[k]).sum()
    }
}

/// Affine symmetric matrix block `Mat(s) + C`; upper-triangle entries only
/// (`i <= j`).
#[derive(Clone, Debug)]
pub struct PsdBlock {
    pub side: usize,
    pub label: String,
    /// `(i, j, scalar index, coefficient)` contributions to entry `(i, j)`.
    pub coefs: Vec<(u32, u32, usize, f64)>,
    /// Constant part of entry `(i, j)`.
    pub consts: Vec<(u32, u32, f64)>,
}

impl PsdBlock {
    /// Block pinning a moment or localizing matrix over scalars starting at
    /// `offset`.
    pub fn from_spec(spec: &crate::moments::MatrixSpec, offset: usize, label: String) -> PsdBlock {
        PsdBlock {
            side: spec.side,
            label,
            coefs: spec
                .entries
                .iter()
                .flat_map(|(i, j, terms)| {
                    terms
                        .iter()
                        .map(move |&(k, c)| (*i as u32, *j as u32, offset + k, c))
                })
                .collect(),
            consts: Vec::new(),
        }
    }

    /// Dense symmetric evaluation, row-major `side x side`.
    pub fn evaluate(&self, s: &[f64]) -> Vec<f64> {
        let n = self.side;
        let mut out = vec![0.0; n * n];
        for &(i, j, k, c) in &self.coefs {
            out[i as usize * n + j as usize] += c * s[k];
        }
        for &(i, j, c) in &self.consts {
            out[i as usize * n + j as usize] += c;
        }
        for i in 0..n {
            for j in i + 1..n {
                out[j * n + i] = out[i * n + j];
            }
        }
        out
    }
}

/// Complete problem instance. Maximization.
#[derive(Clone, Debug, Default)]
pub struct ConicProgram {
    pub num_scalars: usize,
    pub objective: Vec<(usize, f64)>,
    pub equalities: Vec<LinRow>,
    pub inequalities: Vec<LinRow>,
    pub psd_blocks: Vec<PsdBlock>,
}

impl ConicProgram {
    pub fn objective_value(&self, s: &[f64]) -> f64 {
        self.objective.iter().map(|&(k, c)| c * s[k]).sum()
    }

    /// Worst violation of all constraint families at `s`; negative
    /// eigenvalues of blocks count through `block_eig_floor`.
    pub fn max_violation(&self, s: &[f64], block_eig_floor: impl Fn(&[f64], usize) -> f64) -> f64 {
        let mut v: f64 = 0.0;
        for row in &self.equalities {
            v = v.max((row.eval(s) - row.rhs).abs());
        }
        for row in &self.inequalities {
            v = v.max(row.eval(s) - row.rhs);
        }
        for b in &self.psd_blocks {
            v = v.max(-block_eig_floor(&b.evaluate(s), b.side));
        }
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Optimal,
    /// Converged to reduced accuracy.
    NearOptimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Optimal => "optimal",
            Status::NearOptimal => "near_optimal",
            Status::Infeasible => "infeasible",
            Status::Unbounded => "unbounded",
            Status::NumericalFailure => "numerical_failure",
        }
    }

    pub fn is_usable(&self) -> bool {
        matches!(self, Status::Optimal | Status::NearOptimal)
    }
}

/// Solution with duals for every constraint family.
#[derive(Clone, Debug)]
pub struct SolveResult {
    pub status: Status,
    /// Primal objective `c . s`.
    pub objective: f64,
    pub dual_objective: f64,
    pub scalars: Vec<f64>,
    /// One multiplier per equality row, in order.
    pub eq_duals: Vec<f64>,
    /// One nonnegative multiplier per inequality row, in order.
    pub ineq_duals: Vec<f64>,
    /// Dense symmetric dual matrix per block, row-major.
    pub psd_duals: Vec<Vec<f64>>,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub relative_gap: f64,
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    pub tolerance: f64,
    /// Residual/gap level accepted as `NearOptimal` when full tolerance is
    /// out of reach.
    pub reduced_tolerance: f64,
    pub max_iterations: usize,
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-8,
            reduced_tolerance: 2e-5,
            max_iterations: 200,
            verbose: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConicError {
    #[error("program has no scalar variables")]
    Empty,
    #[error("scalar index {index} out of range ({num} scalars)")]
    BadIndex { index: usize, num: usize },
    #[error("{0}")]
    Backend(String),
    #[error("linear algebra failure: {0}")]
    Numerics(String),
}

/// Which solver implementation to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Backend {
    #[default]
    Embedded,
    #[cfg(feature = "bridge-clarabel")]
    Clarabel,
}

impl Backend {
    pub fn as_str(&self) -> &'static str {
        match self {
            Backend::Embedded => "embedded",
            #[cfg(feature = "bridge-clarabel")]
            Backend::Clarabel => "clarabel",
        }
    }
}

pub fn solve(
    program: &ConicProgram,
    backend: Backend,
    options: &SolverOptions,
) -> Result<SolveResult, ConicError> {
    validate(program)?;
    match backend {
        Backend::Embedded => ipm::solve(program, options),
        #[cfg(feature = "bridge-clarabel")]
        Backend::Clarabel => bridge::solve(program, options),
    }
}

fn validate(program: &ConicProgram) -> Result<(), ConicError> {
    let n = program.num_scalars;
    if n == 0 {
        return Err(ConicError::Empty);
    }
    let check = |k: usize| -> Result<(), ConicError> {
        if k >= n {
            Err(ConicError::BadIndex { index: k, num: n })
        } else {
            Ok(())
        }
    };
    for &(k, _) in &program.objective {
        check(k)?;
    }
    for row in program.equalities.iter().chain(&program.inequalities) {
        for &(k, _) in &row.terms {
            check(k)?;
        }
    }
    for b in &program.psd_blocks {
        for &(i, j, k, _) in &b.coefs {
            check(k)?;
            if i > j || j as usize >= b.side {
                return Err(ConicError::Backend(format!(
                    "block {}: entry ({i}, {j}) outside upper triangle of side {}",
                    b.label, b.side
                )));
            }
        }
    }
    Ok(())
}
