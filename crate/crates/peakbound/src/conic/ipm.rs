//! Embedded primal-dual interior-point solver for the conic programs built
//! by the relaxation, with no external solver dependency.
//!
//! Method: infeasible-start path following with Nesterov-Todd scaling and a
//! Mehrotra predictor-corrector step. Inequality rows are folded into 1x1
//! cone blocks so a single code path handles all cones. Writing `Mat_j` for
//! the affine map of block `j`, the iterates are scalars `s`, equality
//! multipliers `lambda`, cone slacks `Z_j` and cone duals `X_j`, driving
//!
//! ```txt
//!   r_p = b - A s                      -> 0
//!   R_j = Z_j - Mat_j(s) - C_j         -> 0
//!   r_d = c - A' lambda + sum_j Mat_j*(X_j) -> 0
//!   <Z_j, X_j>                         -> 0
//! ```
//!
//! Eliminating the cone directions reduces each Newton step to
//!
//! ```txt
//!   H ds + A' dl = g,    A ds = r_p,
//!   H = sum_j Mat_j*( Winv_j . Winv_j ) Mat_j
//! ```
//!
//! where `Winv_j` is the NT scaling. H is block diagonal across groups of
//! scalars not linked by any cone (in the relaxation: across measures), so
//! it is factored group by group and only the small Schur system over the
//! equality rows is dense. The solver is deterministic: fixed iteration
//! order, no randomness, sequential kernels.

use super::{ConicError, ConicProgram, SolveResult, SolverOptions, Status};
use faer::linalg::solvers::{Llt, Solve};
use faer::{Mat, Side};

/// Fraction of the distance to the cone boundary taken each step.
const STEP_FRACTION: f64 = 0.99;
/// Divergence thresholds for infeasibility/unboundedness classification.
const BLOWUP: f64 = 1e10;

pub fn solve(program: &ConicProgram, options: &SolverOptions) -> Result<SolveResult, ConicError> {
    let compiled = Compiled::new(program)?;
    let mut state = State::init(&compiled)?;
    let aat = factor_aat(&compiled);
    let mut best: Option<(f64, SolveResult)> = None;
    let mut prev_mu = f64::INFINITY;
    let mut stall = 0usize;
    let mut degraded = 0usize;

    for iter in 0..options.max_iterations {
        let mut m = state.metrics(&compiled);
        if let Some(f) = &aat {
            state.polish(&compiled, f, &mut m);
        }
        if options.verbose {
            eprintln!(
                "iter {iter:3}  pobj {:+.9e}  dobj {:+.9e}  gap {:.2e}  pres {:.2e}  dres {:.2e} ({:.2e})",
                m.pobj, m.dobj, m.rep_relgap(), m.pres.max(m.cres), m.dres, m.rep_dres()
            );
        }
        if !m.is_finite() {
            break;
        }
        let score = m.score();
        if best.as_ref().map_or(true, |(s, _)| score < *s) {
            best = Some((score, state.extract(&compiled, &m, iter, Status::NumericalFailure)));
        }
        if m.converged(options.tolerance) {
            return Ok(state.extract(&compiled, &m, iter, Status::Optimal));
        }
        if m.dobj < -BLOWUP * m.pobj.abs().max(1.0) && m.dres < 1e-4 {
            return Ok(state.extract(&compiled, &m, iter, Status::Infeasible));
        }
        if m.pobj > BLOWUP * m.dobj.abs().max(1.0) && m.pres < 1e-4 {
            return Ok(state.extract(&compiled, &m, iter, Status::Unbounded));
        }
        // Stall: complementarity no longer making progress.
        if m.mu > 0.97 * prev_mu {
            stall += 1;
        } else {
            stall = 0;
        }
        prev_mu = m.mu;
        if stall >= 8 {
            break;
        }

        match state.step(&compiled, &m, options.verbose) {
            Ok(false) => degraded = 0,
            Ok(true) => degraded += 1,
            Err(_) => break,
        }
        // Three hard-cut dual steps in a row: the linear algebra is out of
        // accuracy, further iterations only burn time.
        if degraded >= 3 {
            break;
        }
    }

    // Not converged to full tolerance: settle for the best iterate seen.
    let (_, mut result) = best.ok_or_else(|| ConicError::Numerics("no usable iterate".into()))?;
    let near = result.primal_residual.max(result.dual_residual) <= options.reduced_tolerance
        && result.relative_gap <= options.reduced_tolerance;
    result.status = if near { Status::NearOptimal } else { Status::NumericalFailure };
    Ok(result)
}

/// Cholesky behind a Jacobi rescaling: the factored matrix is
/// `D^-1 M D^-1` with `D = sqrt(diag(M))`, so rounding and the escalating
/// regularization act relative to a unit diagonal rather than to the raw
/// entries, whose spread grows like the inverse barrier parameter squared.
struct ScaledLlt {
    fact: Llt<f64>,
    d: Vec<f64>,
}

impl ScaledLlt {
    fn new(m: &Mat<f64>) -> Option<ScaledLlt> {
        let n = m.nrows();
        let d: Vec<f64> = (0..n).map(|i| m[(i, i)].abs().sqrt().max(1e-150)).collect();
        let scaled = Mat::from_fn(n, n, |i, j| m[(i, j)] / (d[i] * d[j]));
        let mut reg = 0.0f64;
        loop {
            let mut t = scaled.clone();
            if reg > 0.0 {
                for i in 0..n {
                    t[(i, i)] += reg;
                }
            }
            match t.llt(Side::Lower) {
                Ok(fact) => return Some(ScaledLlt { fact, d }),
                Err(_) => {
                    reg = if reg == 0.0 { 1e-12 } else { reg * 100.0 };
                    if reg > 1e-4 {
                        return None;
                    }
                }
            }
        }
    }

    fn solve(&self, rhs: &Mat<f64>) -> Mat<f64> {
        let scaled = Mat::from_fn(rhs.nrows(), rhs.ncols(), |i, c| rhs[(i, c)] / self.d[i]);
        let mut sol = self.fact.solve(&scaled);
        for i in 0..sol.nrows() {
            for c in 0..sol.ncols() {
                sol[(i, c)] /= self.d[i];
            }
        }
        sol
    }
}

/// Cholesky of `A A'` for multiplier repair, `None` when there are no
/// equality rows or the factorization fails outright.
fn factor_aat(cp: &Compiled) -> Option<ScaledLlt> {
    if cp.m == 0 {
        return None;
    }
    let mut aat = Mat::<f64>::zeros(cp.m, cp.m);
    for i in 0..cp.m {
        for j in i..cp.m {
            let dot = sparse_dot(&cp.a_rows[i], &cp.a_rows[j]);
            aat[(i, j)] = dot;
            aat[(j, i)] = dot;
        }
    }
    ScaledLlt::new(&aat)
}

/// Block kind: a real PSD constraint or a folded scalar inequality.
enum BlockKind {
    Psd(usize),
    Ineq(usize),
}

struct CBlock {
    side: usize,
    /// Scalar coefficients grouped per variable: `(var, [(a, b, coef)])`
    /// with `a <= b`, variables in increasing order.
    vars: Vec<(usize, Vec<(u32, u32, f64)>)>,
    /// Dense row-major constant part.
    consts: Vec<f64>,
    consts_norm: f64,
    kind: BlockKind,
}

struct Group {
    /// Global scalar ids, increasing.
    vars: Vec<usize>,
    /// Blocks whose scalars live in this group.
    blocks: Vec<usize>,
}

struct Compiled {
    n: usize,
    m: usize,
    c: Vec<f64>,
    c_norm: f64,
    a_rows: Vec<Vec<(usize, f64)>>,
    b: Vec<f64>,
    b_norm: f64,
    blocks: Vec<CBlock>,
    groups: Vec<Group>,
    /// Global scalar id -> (group, index within group).
    var_group: Vec<usize>,
    var_local: Vec<usize>,
    total_cone_dim: f64,
}

impl Compiled {
    fn new(p: &ConicProgram) -> Result<Compiled, ConicError> {
        let n = p.num_scalars;
        let mut c = vec![0.0; n];
        for &(k, v) in &p.objective {
            c[k] += v;
        }

        // All cones in one list; inequalities become 1x1 blocks
        // `rhs - g . s >= 0`.
        let mut raw: Vec<(usize, Vec<(u32, u32, usize, f64)>, Vec<f64>, BlockKind)> = Vec::new();
        for (j, b) in p.psd_blocks.iter().enumerate() {
            let mut consts = vec![0.0; b.side * b.side];
            for &(i, jj, v) in &b.consts {
                consts[i as usize * b.side + jj as usize] += v;
                if i != jj {
                    consts[jj as usize * b.side + i as usize] += v;
                }
            }
            raw.push((b.side, b.coefs.clone(), consts, BlockKind::Psd(j)));
        }
        for (i, row) in p.inequalities.iter().enumerate() {
            let coefs = row
                .terms
                .iter()
                .map(|&(k, v)| (0u32, 0u32, k, -v))
                .collect();
            raw.push((1, coefs, vec![row.rhs], BlockKind::Ineq(i)));
        }

        // Group scalars linked through shared cones (union-find).
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut Vec<usize>, i: usize) -> usize {
            let mut i = i;
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for (_, coefs, _, _) in &raw {
            let mut anchor: Option<usize> = None;
            for &(_, _, k, _) in coefs {
                let rk = find(&mut parent, k);
                match anchor {
                    None => anchor = Some(rk),
                    Some(a) => {
                        let ra = find(&mut parent, a);
                        parent[rk.max(ra)] = rk.min(ra);
                        anchor = Some(rk.min(ra));
                    }
                }
            }
        }
        let mut group_of_root: Vec<Option<usize>> = vec![None; n];
        let mut groups: Vec<Group> = Vec::new();
        let mut var_group = vec![usize::MAX; n];
        let mut var_local = vec![usize::MAX; n];
        for k in 0..n {
            let r = find(&mut parent, k);
            let gi = *group_of_root[r].get_or_insert_with(|| {
                groups.push(Group { vars: Vec::new(), blocks: Vec::new() });
                groups.len() - 1
            });
            var_group[k] = gi;
            var_local[k] = groups[gi].vars.len();
            groups[gi].vars.push(k);
        }

        let mut blocks = Vec::with_capacity(raw.len());
        for (side, coefs, consts, kind) in raw {
            let mut per_var: std::collections::BTreeMap<usize, Vec<(u32, u32, f64)>> =
                Default::default();
            for (a, b, k, v) in coefs {
                per_var.entry(k).or_default().push((a, b, v));
            }
            let vars: Vec<(usize, Vec<(u32, u32, f64)>)> = per_var.into_iter().collect();
            let group = vars
                .first()
                .map(|&(k, _)| var_group[k])
                .ok_or_else(|| ConicError::Backend("cone block touches no scalar".into()))?;
            let consts_norm = consts.iter().map(|v| v * v).sum::<f64>().sqrt();
            let bi = blocks.len();
            groups[group].blocks.push(bi);
            blocks.push(CBlock { side, vars, consts, consts_norm, kind });
        }
        for k in 0..n {
            let covered = blocks
                .iter()
                .any(|b| b.vars.iter().any(|&(v, _)| v == k));
            if !covered {
                return Err(ConicError::Backend(format!(
                    "scalar {k} appears in no cone block; the problem is unbounded in that direction"
                )));
            }
        }

        let m = p.equalities.len();
        let a_rows: Vec<Vec<(usize, f64)>> =
            p.equalities.iter().map(|r| r.terms.clone()).collect();
        let b: Vec<f64> = p.equalities.iter().map(|r| r.rhs).collect();
        let b_norm = norm2(&b);
        let c_norm = norm2(&c);
        let total_cone_dim = blocks.iter().map(|b| b.side as f64).sum();
        Ok(Compiled {
            n,
            m,
            c,
            c_norm,
            a_rows,
            b,
            b_norm,
            blocks,
            groups,
            var_group,
            var_local,
            total_cone_dim,
        })
    }

    /// Dense symmetric `Mat_j(s) + C_j`, row-major.
    fn block_value(&self, j: usize, s: &[f64]) -> Vec<f64> {
        let blk = &self.blocks[j];
        let k = blk.side;
        let mut out = blk.consts.clone();
        for (var, entries) in &blk.vars {
            let sv = s[*var];
            for &(a, b, c) in entries {
                out[a as usize * k + b as usize] += c * sv;
                if a != b {
                    out[b as usize * k + a as usize] += c * sv;
                }
            }
        }
        out
    }

    /// Adds `sum_j Mat_j*(M_j)` into `out` for dense symmetric `M_j`.
    fn add_adjoint(&self, j: usize, mat: &[f64], out: &mut [f64]) {
        let blk = &self.blocks[j];
        let k = blk.side;
        for (var, entries) in &blk.vars {
            let mut acc = 0.0;
            for &(a, b, c) in entries {
                let (a, b) = (a as usize, b as usize);
                acc += if a == b {
                    c * mat[a * k + a]
                } else {
                    c * (mat[a * k + b] + mat[b * k + a])
                };
            }
            out[*var] += acc;
        }
    }
}

/// Scalar and cone iterates.
struct State {
    s: Vec<f64>,
    lambda: Vec<f64>,
    /// Row-major dense symmetric matrices per block.
    z: Vec<Vec<f64>>,
    x: Vec<Vec<f64>>,
}

/// Convergence measures at the top of an iteration.
struct Metrics {
    pobj: f64,
    dobj: f64,
    r_p: Vec<f64>,
    r_d: Vec<f64>,
    cone_res: Vec<Vec<f64>>,
    pres: f64,
    cres: f64,
    dres: f64,
    mu: f64,
    relgap: f64,
    /// Least-squares repaired multipliers, kept when they beat the iterate's
    /// own stationarity residual. Raw `dobj`/`dres` stay untouched: the step
    /// and the divergence heuristics must see the true iterate.
    pol: Option<Polish>,
}

struct Polish {
    lambda: Vec<f64>,
    dobj: f64,
    dres: f64,
    relgap: f64,
}

impl Metrics {
    fn rep_dres(&self) -> f64 {
        self.pol.as_ref().map_or(self.dres, |p| p.dres)
    }

    fn rep_relgap(&self) -> f64 {
        self.pol.as_ref().map_or(self.relgap, |p| p.relgap)
    }

    fn converged(&self, tol: f64) -> bool {
        self.pres.max(self.cres) <= tol && self.rep_dres() <= tol && self.rep_relgap() <= tol
    }

    fn score(&self) -> f64 {
        self.pres.max(self.cres).max(self.rep_dres()).max(self.rep_relgap())
    }

    fn is_finite(&self) -> bool {
        self.pobj.is_finite() && self.dobj.is_finite() && self.mu.is_finite()
    }
}

impl State {
    fn init(cp: &Compiled) -> Result<State, ConicError> {
        // Least-norm solution of A s = b gives a reasonable scalar start.
        let s = if cp.m > 0 {
            let mut aat = Mat::<f64>::zeros(cp.m, cp.m);
            for i in 0..cp.m {
                for j in i..cp.m {
                    let dot = sparse_dot(&cp.a_rows[i], &cp.a_rows[j]);
                    aat[(i, j)] = dot;
                    aat[(j, i)] = dot;
                }
            }
            for i in 0..cp.m {
                aat[(i, i)] += 1e-12 * (1.0 + aat[(i, i)].abs());
            }
            let rhs = Mat::from_fn(cp.m, 1, |i, _| cp.b[i]);
            let llt = aat
                .llt(Side::Lower)
                .map_err(|_| ConicError::Numerics("equality rows are rank deficient".into()))?;
            let xi = llt.solve(&rhs);
            let mut s = vec![0.0; cp.n];
            for (i, row) in cp.a_rows.iter().enumerate() {
                for &(k, v) in row {
                    s[k] += v * xi[(i, 0)];
                }
            }
            s
        } else {
            vec![0.0; cp.n]
        };

        let mut z = Vec::with_capacity(cp.blocks.len());
        let mut x = Vec::with_capacity(cp.blocks.len());
        for j in 0..cp.blocks.len() {
            let k = cp.blocks[j].side;
            let m0 = cp.block_value(j, &s);
            let lam_min = sym_eig_min(&m0, k);
            let scale = 1.0 + frob(&m0) / k as f64;
            let shift = (-1.5 * lam_min).max(0.0) + 0.1 * scale + 0.9;
            let mut zj = m0;
            for i in 0..k {
                zj[i * k + i] += shift;
            }
            z.push(zj);
            let mut xj = vec![0.0; k * k];
            for i in 0..k {
                xj[i * k + i] = 1.0;
            }
            x.push(xj);
        }
        Ok(State { s, lambda: vec![0.0; cp.m], z, x })
    }

    fn metrics(&self, cp: &Compiled) -> Metrics {
        let pobj: f64 = self.s.iter().zip(&cp.c).map(|(a, b)| a * b).sum();
        let mut dobj: f64 = self.lambda.iter().zip(&cp.b).map(|(a, b)| a * b).sum();
        for (j, xj) in self.x.iter().enumerate() {
            dobj += dot(&cp.blocks[j].consts, xj);
        }
        let mut r_p = cp.b.clone();
        for (i, row) in cp.a_rows.iter().enumerate() {
            r_p[i] -= row.iter().map(|&(k, v)| v * self.s[k]).sum::<f64>();
        }
        let mut r_d = cp.c.clone();
        for (i, row) in cp.a_rows.iter().enumerate() {
            for &(k, v) in row {
                r_d[k] -= v * self.lambda[i];
            }
        }
        for j in 0..cp.blocks.len() {
            cp.add_adjoint(j, &self.x[j], &mut r_d);
        }
        let mut cone_res = Vec::with_capacity(cp.blocks.len());
        let mut cres: f64 = 0.0;
        let mut gap = 0.0;
        for j in 0..cp.blocks.len() {
            let mut rj = self.z[j].clone();
            let mj = cp.block_value(j, &self.s);
            for (a, b) in rj.iter_mut().zip(&mj) {
                *a -= b;
            }
            cres = cres.max(frob(&rj) / (1.0 + cp.blocks[j].consts_norm));
            gap += dot(&self.z[j], &self.x[j]);
            cone_res.push(rj);
        }
        let pres = norm2(&r_p) / (1.0 + cp.b_norm);
        let dres = norm2(&r_d) / (1.0 + cp.c_norm);
        let mu = gap / cp.total_cone_dim;
        let relgap = gap.abs() / (1.0 + pobj.abs().max(dobj.abs()));
        Metrics { pobj, dobj, r_p, r_d, cone_res, pres, cres, dres, mu, relgap, pol: None }
    }

    /// Repairs the multipliers by least squares: with the cone duals frozen,
    /// stationarity is linear in lambda, so project `c + sum Mat*(X)` onto
    /// the row space of `A`. Near the solution this shrinks the stationarity
    /// residual far below what the Newton solves can deliver.
    fn polish(&self, cp: &Compiled, aat: &ScaledLlt, m: &mut Metrics) {
        if cp.m == 0 {
            return;
        }
        // t = c + sum Mat*(X) = r_d + A' lambda.
        let mut t = m.r_d.clone();
        for (i, row) in cp.a_rows.iter().enumerate() {
            for &(k, v) in row {
                t[k] += v * self.lambda[i];
            }
        }
        let rhs = Mat::from_fn(cp.m, 1, |i, _| {
            cp.a_rows[i].iter().map(|&(k, v)| v * t[k]).sum::<f64>()
        });
        let sol = aat.solve(&rhs);
        let lambda: Vec<f64> = (0..cp.m).map(|i| sol[(i, 0)]).collect();
        let mut r_pol = t;
        for (i, row) in cp.a_rows.iter().enumerate() {
            for &(k, v) in row {
                r_pol[k] -= v * lambda[i];
            }
        }
        let dres = norm2(&r_pol) / (1.0 + cp.c_norm);
        if dres >= m.dres {
            return;
        }
        let consts_part = m.dobj
            - self.lambda.iter().zip(&cp.b).map(|(a, b)| a * b).sum::<f64>();
        let dobj = lambda.iter().zip(&cp.b).map(|(a, b)| a * b).sum::<f64>() + consts_part;
        let gap = m.mu * cp.total_cone_dim as f64;
        let relgap = gap.abs() / (1.0 + m.pobj.abs().max(dobj.abs()));
        m.pol = Some(Polish { lambda, dobj, dres, relgap });
    }

    /// One Mehrotra predictor-corrector step; mutates the iterates. Returns
    /// whether the dual step had to be cut hard because the Newton solves
    /// have hit their accuracy floor.
    fn step(&mut self, cp: &Compiled, m: &Metrics, debug: bool) -> Result<bool, ConicError> {
        let nb = cp.blocks.len();

        // Per-block NT scaling from the current (Z, X) pair:
        //   Z = Lz Lz', eig(Lz' X Lz) = Q D Q', R = Lz Q D^(-1/4),
        // so that R' X R = Rinv Z Rinv' = D^(1/2) =: Sigma and the scaling
        // Winv = Rinv' Rinv satisfies Winv Z Winv = X.
        let mut winv: Vec<Vec<f64>> = Vec::with_capacity(nb);
        let mut r_mats: Vec<Vec<f64>> = Vec::with_capacity(nb);
        let mut r_invs: Vec<Vec<f64>> = Vec::with_capacity(nb);
        let mut sigmas: Vec<Vec<f64>> = Vec::with_capacity(nb);
        let mut lz_inv: Vec<Vec<f64>> = Vec::with_capacity(nb);
        let mut lx_inv: Vec<Vec<f64>> = Vec::with_capacity(nb);
        for j in 0..nb {
            let k = cp.blocks[j].side;
            let lz = chol_lower(&self.z[j], k)
                .ok_or_else(|| ConicError::Numerics("slack left the cone".into()))?;
            let lzi = lower_tri_inverse(&lz, k);
            let lx = chol_lower(&self.x[j], k)
                .ok_or_else(|| ConicError::Numerics("dual left the cone".into()))?;
            let lxi = lower_tri_inverse(&lx, k);
            // Sandwich Lz' X Lz.
            let xlz = matmul_rm(&self.x[j], &lz, k); // X Lz
            let s_tilde = matmul_tn(&lz, &xlz, k); // Lz' (X Lz)
            let (q, d) = sym_eig(&s_tilde, k)?;
            let sigma: Vec<f64> = d.iter().map(|&v| v.max(1e-300).sqrt()).collect();
            // Rinv = D^(1/4) Q' Lz^-1, row-scaled copy of E = Q' Lz^-1.
            let e = matmul_tn(&q, &lzi, k);
            let mut r_inv = e.clone();
            for r in 0..k {
                let f = sigma[r].sqrt();
                for cidx in 0..k {
                    r_inv[r * k + cidx] *= f;
                }
            }
            // Winv = Rinv' Rinv.
            let w = matmul_tn(&r_inv, &r_inv, k);
            // R = Lz Q D^(-1/4).
            let lzq = matmul_rm(&lz, &q, k);
            let mut r_mat = lzq;
            for row in 0..k {
                for cidx in 0..k {
                    r_mat[row * k + cidx] /= sigma[cidx].sqrt();
                }
            }
            winv.push(w);
            r_mats.push(r_mat);
            r_invs.push(r_inv);
            sigmas.push(sigma);
            lz_inv.push(lzi);
            lx_inv.push(lxi);
        }

        // H per group, factored; U = H^-1 A' per group for the Schur system.
        let mut h_fact: Vec<ScaledLlt> = Vec::with_capacity(cp.groups.len());
        for (gi, group) in cp.groups.iter().enumerate() {
            let gl = group.vars.len();
            let mut h = Mat::<f64>::zeros(gl, gl);
            for &bj in &group.blocks {
                accumulate_h(cp, bj, &winv[bj], &mut h);
            }
            // Mirror the accumulated upper triangle.
            for i in 0..gl {
                for j2 in 0..i {
                    h[(i, j2)] = h[(j2, i)];
                }
            }
            let fact = ScaledLlt::new(&h).ok_or_else(|| {
                ConicError::Numerics(format!(
                    "scaling matrix for group {gi} is numerically singular"
                ))
            })?;
            h_fact.push(fact);
        }

        // Schur matrix S = A H^-1 A'.
        let mut u_groups: Vec<Mat<f64>> = Vec::new();
        let mut schur_fact: Option<ScaledLlt> = None;
        if cp.m > 0 {
            let mut s_mat = Mat::<f64>::zeros(cp.m, cp.m);
            for (gi, group) in cp.groups.iter().enumerate() {
                let gl = group.vars.len();
                let mut at_g = Mat::<f64>::zeros(gl, cp.m);
                for (ri, row) in cp.a_rows.iter().enumerate() {
                    for &(k, v) in row {
                        if cp.var_group[k] == gi {
                            at_g[(cp.var_local[k], ri)] = v;
                        }
                    }
                }
                let u = h_fact[gi].solve(&at_g);
                // S += A_g U (sparse rows times dense).
                for (ri, row) in cp.a_rows.iter().enumerate() {
                    for &(k, v) in row {
                        if cp.var_group[k] == gi {
                            let lr = cp.var_local[k];
                            for cj in ri..cp.m {
                                s_mat[(ri, cj)] += v * u[(lr, cj)];
                            }
                        }
                    }
                }
                u_groups.push(u);
            }
            for i in 0..cp.m {
                for j in 0..i {
                    s_mat[(i, j)] = s_mat[(j, i)];
                }
            }
            let fact = ScaledLlt::new(&s_mat).ok_or_else(|| {
                ConicError::Numerics("Schur complement is numerically singular".into())
            })?;
            schur_fact = Some(fact);
        }

        // Shared rhs piece: Mat*(Winv R Winv) per block.
        let mut wrw: Vec<Vec<f64>> = Vec::with_capacity(nb);
        for j in 0..nb {
            let k = cp.blocks[j].side;
            let t = matmul_rm(&winv[j], &m.cone_res[j], k);
            wrw.push(matmul_rm(&t, &winv[j], k));
        }

        // One inner Newton solve of H ds + A' dl = g, A ds = rp through the
        // cached factorizations.
        let kkt_solve = |g: &[f64], rp: &[f64]| -> (Vec<f64>, Vec<f64>) {
            let mut y = vec![0.0; cp.n];
            for (gi, group) in cp.groups.iter().enumerate() {
                let gl = group.vars.len();
                let rhs = Mat::from_fn(gl, 1, |i, _| g[group.vars[i]]);
                let sol = h_fact[gi].solve(&rhs);
                for i in 0..gl {
                    y[group.vars[i]] = sol[(i, 0)];
                }
            }
            let mut dl = vec![0.0; cp.m];
            if let Some(sf) = &schur_fact {
                let mut rhs = Mat::<f64>::zeros(cp.m, 1);
                for (ri, row) in cp.a_rows.iter().enumerate() {
                    rhs[(ri, 0)] = row.iter().map(|&(k, v)| v * y[k]).sum::<f64>() - rp[ri];
                }
                let sol = sf.solve(&rhs);
                for i in 0..cp.m {
                    dl[i] = sol[(i, 0)];
                }
            }
            let mut ds = y;
            if cp.m > 0 {
                for (gi, group) in cp.groups.iter().enumerate() {
                    let u = &u_groups[gi];
                    for (i, &k) in group.vars.iter().enumerate() {
                        let mut acc = 0.0;
                        for rj in 0..cp.m {
                            acc += u[(i, rj)] * dl[rj];
                        }
                        ds[k] -= acc;
                    }
                }
            }
            (ds, dl)
        };

        // H v = sum_j Mat_j*(Winv Mat_j(v) Winv), the linear part only.
        let apply_h = |v: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; cp.n];
            for j in 0..nb {
                let k = cp.blocks[j].side;
                let mut bv = cp.block_value(j, v);
                for (a, b) in bv.iter_mut().zip(&cp.blocks[j].consts) {
                    *a -= b;
                }
                let t = matmul_rm(&winv[j], &bv, k);
                let t = matmul_rm(&t, &winv[j], k);
                cp.add_adjoint(j, &t, &mut out);
            }
            out
        };

        type Direction = (Vec<f64>, Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>);
        let solve_direction = |rc: &[Vec<f64>]| -> Direction {
            // g = r_d + sum Mat*(Rc) + sum Mat*(Winv R Winv)
            let mut g = m.r_d.clone();
            for j in 0..nb {
                cp.add_adjoint(j, &rc[j], &mut g);
                cp.add_adjoint(j, &wrw[j], &mut g);
            }
            let (mut ds, mut dl) = kkt_solve(&g, &m.r_p);
            // The factorizations are regularized and the system grows ill
            // conditioned as mu shrinks; refine while the KKT residual keeps
            // improving so solve error cannot leak into the dual iterates.
            let g_scale = 1.0 + g.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
            let mut errs = Vec::new();
            let mut best: Option<(f64, Vec<f64>, Vec<f64>, Vec<f64>)> = None;
            for pass in 0..4 {
                let hds = apply_h(&ds);
                let mut res_g = g.clone();
                for (r, h) in res_g.iter_mut().zip(&hds) {
                    *r -= h;
                }
                for (ri, row) in cp.a_rows.iter().enumerate() {
                    for &(k, v) in row {
                        res_g[k] -= v * dl[ri];
                    }
                }
                let mut res_p = m.r_p.clone();
                for (ri, row) in cp.a_rows.iter().enumerate() {
                    res_p[ri] -= row.iter().map(|&(k, v)| v * ds[k]).sum::<f64>();
                }
                let err = res_g
                    .iter()
                    .chain(res_p.iter())
                    .fold(0.0f64, |a, &v| a.max(v.abs()));
                errs.push(err);
                if best.as_ref().map_or(true, |(e, ..)| err < *e) {
                    best = Some((err, ds.clone(), dl.clone(), res_g.clone()));
                }
                if pass == 3 || err < 1e-14 * g_scale {
                    break;
                }
                let (es, el) = kkt_solve(&res_g, &res_p);
                for (d, e) in ds.iter_mut().zip(&es) {
                    *d += e;
                }
                for (d, e) in dl.iter_mut().zip(&el) {
                    *d += e;
                }
            }
            let (_, best_ds, best_dl, err_vec) = best.unwrap();
            let ds = best_ds;
            let dl = best_dl;
            if debug {
                let seq: Vec<String> = errs.iter().map(|e| format!("{e:.2e}")).collect();
                eprintln!("    refine errs [{}] g_scale {:.2e}", seq.join(" "), g_scale);
            }
            // dZ = Mat(ds) - R; dX = Rc - Winv dZ Winv.
            let mut dz_all = Vec::with_capacity(nb);
            let mut dx_all = Vec::with_capacity(nb);
            for j in 0..nb {
                let k = cp.blocks[j].side;
                let mut dz = cp.block_value(j, &ds);
                // block_value adds consts; remove them (affine map on the
                // direction is linear).
                for (a, b) in dz.iter_mut().zip(&cp.blocks[j].consts) {
                    *a -= b;
                }
                for (a, b) in dz.iter_mut().zip(&m.cone_res[j]) {
                    *a -= b;
                }
                let t = matmul_rm(&winv[j], &dz, k);
                let wdw = matmul_rm(&t, &winv[j], k);
                let mut dx = rc[j].clone();
                for (a, b) in dx.iter_mut().zip(&wdw) {
                    *a -= b;
                }
                dz_all.push(dz);
                dx_all.push(dx);
            }
            (ds, dl, dz_all, dx_all, err_vec)
        };

        let step_lengths = |dz: &[Vec<f64>], dx: &[Vec<f64>]| -> (f64, f64) {
            let mut ap = f64::INFINITY;
            let mut ad = f64::INFINITY;
            for j in 0..nb {
                let k = cp.blocks[j].side;
                ap = ap.min(max_cone_step(&lz_inv[j], &dz[j], k));
                ad = ad.min(max_cone_step(&lx_inv[j], &dx[j], k));
            }
            (
                (STEP_FRACTION * ap).min(1.0),
                (STEP_FRACTION * ad).min(1.0),
            )
        };

        // Predictor: aim at zero complementarity.
        let rc_aff: Vec<Vec<f64>> = self.x.iter().map(|xj| neg(xj)).collect();
        let (_ds_a, _dl_a, dz_a, dx_a, _err_a) = solve_direction(&rc_aff);
        let (ap_a, ad_a) = step_lengths(&dz_a, &dx_a);
        let mut gap_aff = 0.0;
        for j in 0..nb {
            let k = cp.blocks[j].side;
            let mut ztrial = self.z[j].clone();
            axpy(&mut ztrial, &dz_a[j], ap_a);
            let mut xtrial = self.x[j].clone();
            axpy(&mut xtrial, &dx_a[j], ad_a);
            let _ = k;
            gap_aff += dot(&ztrial, &xtrial);
        }
        let mu_aff = gap_aff / cp.total_cone_dim;
        let sigma = (mu_aff / m.mu).clamp(0.0, 1.0).powi(3);

        // Corrector, formed in NT-scaled coordinates where both iterates
        // equal diag(sigma): the linearized complementarity is the Lyapunov
        // system L_sigma(dXs + dZs) = 2 s mu I - 2 Sigma^2 - 2 sym(dXs dZs),
        // solved entrywise by dividing by (sigma_i + sigma_j), then mapped
        // back through Rinv' (.) Rinv.
        let mut rc: Vec<Vec<f64>> = Vec::with_capacity(nb);
        for j in 0..nb {
            let k = cp.blocks[j].side;
            let sg = &sigmas[j];
            let t = matmul_rm(&dx_a[j], &r_mats[j], k);
            let dxs = matmul_tn(&r_mats[j], &t, k); // R' dX_aff R
            let t = matmul_rm(&r_invs[j], &dz_a[j], k);
            let dzs = matmul_nt(&t, &r_invs[j], k); // Rinv dZ_aff Rinv'
            let prod = matmul_rm(&dxs, &dzs, k);
            let mut ctilde = vec![0.0; k * k];
            for a in 0..k {
                for b in 0..k {
                    let mut v = -(prod[a * k + b] + prod[b * k + a]) / (sg[a] + sg[b]);
                    if a == b {
                        v += sigma * m.mu / sg[a] - sg[a];
                    }
                    ctilde[a * k + b] = v;
                }
            }
            let t = matmul_tn(&r_invs[j], &ctilde, k);
            rc.push(matmul_rm(&t, &r_invs[j], k)); // Rinv' Ctilde Rinv
        }
        let (ds, dl, dz, dx, err_vec) = solve_direction(&rc);
        let (ap, mut ad) = step_lengths(&dz, &dx);

        // After a dual step the stationarity residual becomes exactly
        // (1 - ad) r_d + ad err_vec, with err_vec the KKT solve error. When
        // the solves have degraded past refinement's reach, a full dual step
        // would trade a clean residual for solver noise; shorten it so the
        // pollution stays within a small multiple of the current residual.
        let err_n = norm2(&err_vec);
        let rd_n = norm2(&m.r_d);
        let dual_budget = 2.0 * rd_n.max(1e-11 * (1.0 + cp.c_norm));
        let mut degraded = false;
        if ad * err_n > dual_budget {
            ad = dual_budget / err_n;
            degraded = ad < 1e-2;
        }
        if debug {
            eprintln!("    sigma {sigma:.3e} ap {ap:.3e} ad {ad:.3e} err_n {err_n:.2e}");
        }

        for (sk, d) in self.s.iter_mut().zip(&ds) {
            *sk += ap * d;
        }
        for (lk, d) in self.lambda.iter_mut().zip(&dl) {
            *lk += ad * d;
        }
        for j in 0..nb {
            axpy(&mut self.z[j], &dz[j], ap);
            axpy(&mut self.x[j], &dx[j], ad);
        }
        Ok(degraded)
    }

    fn extract(&self, cp: &Compiled, m: &Metrics, iter: usize, status: Status) -> SolveResult {
        let mut psd_count = 0usize;
        let mut ineq_count = 0usize;
        for b in &cp.blocks {
            match b.kind {
                BlockKind::Psd(_) => psd_count += 1,
                BlockKind::Ineq(_) => ineq_count += 1,
            }
        }
        let mut psd_duals: Vec<Vec<f64>> = vec![Vec::new(); psd_count];
        let mut ineq_duals = vec![0.0; ineq_count];
        for (j, b) in cp.blocks.iter().enumerate() {
            match b.kind {
                BlockKind::Psd(orig) => psd_duals[orig] = self.x[j].clone(),
                BlockKind::Ineq(row) => ineq_duals[row] = self.x[j][0],
            }
        }
        let (eq_duals, dual_objective) = match &m.pol {
            Some(p) => (p.lambda.clone(), p.dobj),
            None => (self.lambda.clone(), m.dobj),
        };
        SolveResult {
            status,
            objective: m.pobj,
            dual_objective,
            scalars: self.s.clone(),
            eq_duals,
            ineq_duals,
            psd_duals,
            iterations: iter,
            primal_residual: m.pres.max(m.cres),
            dual_residual: m.rep_dres(),
            relative_gap: m.rep_relgap(),
        }
    }
}

/// Adds a block's contribution to its group's `H` (upper triangle): for
/// variables `p <= q` in the block, `H[p][q] += <B_p, Winv B_q Winv>`.
/// Works entry list by entry list through the intermediate `T_q = Winv B_q
/// Winv`, accumulated as scaled outer products of columns of `Winv`.
fn accumulate_h(cp: &Compiled, bj: usize, winv: &[f64], h: &mut Mat<f64>) {
    let blk = &cp.blocks[bj];
    let k = blk.side;
    if k == 1 {
        let w = winv[0];
        for (qi, (qvar, qentries)) in blk.vars.iter().enumerate() {
            let cq = qentries[0].2;
            for (pvar, pentries) in blk.vars.iter().take(qi + 1) {
                let cpv = pentries[0].2;
                let (lp, lq) = (cp.var_local[*pvar], cp.var_local[*qvar]);
                let (i, j) = if lp <= lq { (lp, lq) } else { (lq, lp) };
                h[(i, j)] += cpv * cq * w * w;
            }
        }
        return;
    }
    // T buffer holds the upper triangle of Winv B_q Winv.
    let mut t = vec![0.0; k * k];
    for (qi, (qvar, qentries)) in blk.vars.iter().enumerate() {
        t.iter_mut().for_each(|v| *v = 0.0);
        for &(a, b, c) in qentries {
            let (a, b) = (a as usize, b as usize);
            let ua = &winv[a * k..a * k + k];
            let ub = &winv[b * k..b * k + k];
            if a == b {
                for i in 0..k {
                    let f = c * ua[i];
                    let row = &mut t[i * k + i..(i + 1) * k];
                    let ubr = &ub[i..];
                    for (tv, uv) in row.iter_mut().zip(ubr) {
                        *tv += f * uv;
                    }
                }
            } else {
                for i in 0..k {
                    let fa = c * ua[i];
                    let fb = c * ub[i];
                    let row = &mut t[i * k + i..(i + 1) * k];
                    for ((tv, ubv), uav) in row.iter_mut().zip(&ub[i..]).zip(&ua[i..]) {
                        *tv += fa * ubv + fb * uav;
                    }
                }
            }
        }
        // Dot T against every B_p with p <= q (all entries; T upper only).
        for (pvar, pentries) in blk.vars.iter().take(qi + 1) {
            let mut acc = 0.0;
            for &(a, b, c) in pentries {
                let (a, b) = (a as usize, b as usize);
                if a == b {
                    acc += c * t[a * k + a];
                } else {
                    // Full symmetric contribution: entries live at (a,b) and
                    // (b,a); T stores the upper triangle only.
                    acc += 2.0 * c * t[a.min(b) * k + a.max(b)];
                }
            }
            let (lp, lq) = (cp.var_local[*pvar], cp.var_local[*qvar]);
            let (i, j) = if lp <= lq { (lp, lq) } else { (lq, lp) };
            h[(i, j)] += acc;
        }
    }
}

/// Largest step `alpha` keeping `P + alpha D` in the cone, from the
/// congruence `Linv D Linv'` of the direction.
fn max_cone_step(l_inv: &[f64], d: &[f64], k: usize) -> f64 {
    let t = matmul_rm(l_inv, d, k);
    let m = matmul_nt(&t, l_inv, k);
    let lam = sym_eig_min(&m, k);
    if lam >= 0.0 {
        f64::INFINITY
    } else {
        1.0 / (-lam)
    }
}

// Dense helpers on row-major square matrices.

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn frob(a: &[f64]) -> f64 {
    norm2(a)
}

fn neg(a: &[f64]) -> Vec<f64> {
    a.iter().map(|v| -v).collect()
}

#[allow(dead_code)]
fn scale(a: &[f64], f: f64) -> Vec<f64> {
    a.iter().map(|v| f * v).collect()
}

fn axpy(y: &mut [f64], x: &[f64], a: f64) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

fn sparse_dot(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    // Term lists are sorted by index.
    let mut out = 0.0;
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    out
}

/// `A * B` for row-major `k x k`.
fn matmul_rm(a: &[f64], b: &[f64], k: usize) -> Vec<f64> {
    let am = Mat::from_fn(k, k, |i, j| a[i * k + j]);
    let bm = Mat::from_fn(k, k, |i, j| b[i * k + j]);
    let cm = &am * &bm;
    to_rm(&cm, k)
}

/// `A' * B` for row-major `k x k`.
fn matmul_tn(a: &[f64], b: &[f64], k: usize) -> Vec<f64> {
    let am = Mat::from_fn(k, k, |i, j| a[j * k + i]);
    let bm = Mat::from_fn(k, k, |i, j| b[i * k + j]);
    let cm = &am * &bm;
    to_rm(&cm, k)
}

/// `A * B'` for row-major `k x k`.
fn matmul_nt(a: &[f64], b: &[f64], k: usize) -> Vec<f64> {
    let am = Mat::from_fn(k, k, |i, j| a[i * k + j]);
    let bm = Mat::from_fn(k, k, |i, j| b[j * k + i]);
    let cm = &am * &bm;
    to_rm(&cm, k)
}

fn to_rm(m: &Mat<f64>, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            out[i * k + j] = m[(i, j)];
        }
    }
    out
}

/// Cholesky factor (lower, row-major) of a symmetric positive definite
/// matrix, or None if not PD.
fn chol_lower(a: &[f64], k: usize) -> Option<Vec<f64>> {
    let am = Mat::from_fn(k, k, |i, j| a[i * k + j]);
    let f = am.llt(Side::Lower).ok()?;
    let l = f.L();
    let mut out = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..=i {
            out[i * k + j] = l[(i, j)];
        }
    }
    Some(out)
}

/// Inverse of a lower-triangular matrix, row-major.
fn lower_tri_inverse(l: &[f64], k: usize) -> Vec<f64> {
    let mut inv = vec![0.0; k * k];
    for j in 0..k {
        inv[j * k + j] = 1.0 / l[j * k + j];
        for i in j + 1..k {
            let mut acc = 0.0;
            for p in j..i {
                acc += l[i * k + p] * inv[p * k + j];
            }
            inv[i * k + j] = -acc / l[i * k + i];
        }
    }
    inv
}

fn sym_eig(a: &[f64], k: usize) -> Result<(Vec<f64>, Vec<f64>), ConicError> {
    let am = Mat::from_fn(k, k, |i, j| a[i * k + j]);
    let evd = am
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| ConicError::Numerics("eigendecomposition failed".into()))?;
    let mut q = vec![0.0; k * k];
    let mut d = vec![0.0; k];
    let u = evd.U();
    for i in 0..k {
        d[i] = evd.S()[i];
        for j in 0..k {
            q[i * k + j] = u[(i, j)];
        }
    }
    Ok((q, d))
}

fn sym_eig_min(a: &[f64], k: usize) -> f64 {
    match sym_eig(a, k) {
        Ok((_, d)) => d.iter().copied().fold(f64::INFINITY, f64::min),
        Err(_) => f64::NEG_INFINITY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::{LinRow, PsdBlock, RowLabel, SolverOptions};

    fn opts() -> SolverOptions {
        SolverOptions::default()
    }

    #[test]
    fn scalar_lp_with_equality() {
        // max x  s.t.  x = 0.3,  x >= 0.
        let p = ConicProgram {
            num_scalars: 1,
            objective: vec![(0, 1.0)],
            equalities: vec![LinRow::new(vec![(0, 1.0)], 0.3, RowLabel::Mass)],
            inequalities: vec![],
            psd_blocks: vec![PsdBlock {
                side: 1,
                label: "x>=0".into(),
                coefs: vec![(0, 0, 0, 1.0)],
                consts: vec![],
            }],
        };
        let r = solve(&p, &opts()).unwrap();
        assert_eq!(r.status, Status::Optimal);
        assert!((r.objective - 0.3).abs() < 1e-7);
        // Stationarity: c = A' lambda - Mat*(X) with X ~ 0 gives lambda ~ 1.
        assert!((r.eq_duals[0] - 1.0).abs() < 1e-6);
        assert!((r.objective - r.dual_objective).abs() < 1e-7);
    }

    #[test]
    fn correlation_matrix_extreme() {
        // max y  s.t.  [[1, y], [y, 1]] psd; optimum 1, no equalities.
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
        let r = solve(&p, &opts()).unwrap();
        assert!(r.status.is_usable());
        assert!((r.objective - 1.0).abs() < 1e-6, "objective {}", r.objective);
    }

    #[test]
    fn univariate_moment_problem_hits_interval_end() {
        // Moments (y0, y1, y2) of a measure on [-1, 1]:
        // max y1 s.t. y0 = 1, [[y0, y1], [y1, y2]] psd, y0 - y2 >= 0.
        // Optimum: Dirac at 1, y1 = 1.
        let p = ConicProgram {
            num_scalars: 3,
            objective: vec![(1, 1.0)],
            equalities: vec![LinRow::new(vec![(0, 1.0)], 1.0, RowLabel::Mass)],
            inequalities: vec![],
            psd_blocks: vec![
                PsdBlock {
                    side: 2,
                    label: "moment".into(),
                    coefs: vec![(0, 0, 0, 1.0), (0, 1, 1, 1.0), (1, 1, 2, 1.0)],
                    consts: vec![],
                },
                PsdBlock {
                    side: 1,
                    label: "support".into(),
                    coefs: vec![(0, 0, 0, 1.0), (0, 0, 2, -1.0)],
                    consts: vec![],
                },
            ],
        };
        let r = solve(&p, &opts()).unwrap();
        assert_eq!(r.status, Status::Optimal);
        assert!((r.objective - 1.0).abs() < 1e-6);
        assert!((r.scalars[1] - 1.0).abs() < 1e-5);
        assert!((r.scalars[2] - 1.0).abs() < 1e-5);
        // Duality gap within the acceptance envelope.
        assert!((r.objective - r.dual_objective).abs() < 1e-6);
    }

    #[test]
    fn inequality_rows_fold_into_cones_with_duals() {
        // max x1 + x2  s.t.  x1 + x2 <= 1, x1 <= 0.4, x >= 0 elementwise.
        let p = ConicProgram {
            num_scalars: 2,
            objective: vec![(0, 1.0), (1, 1.0)],
            equalities: vec![],
            inequalities: vec![
                LinRow::new(vec![(0, 1.0), (1, 1.0)], 1.0, RowLabel::TimeBudget),
                LinRow::new(vec![(0, 1.0)], 0.4, RowLabel::ObjectiveLink(0)),
            ],
            psd_blocks: vec![
                PsdBlock {
                    side: 1,
                    label: "x1".into(),
                    coefs: vec![(0, 0, 0, 1.0)],
                    consts: vec![],
                },
                PsdBlock {
                    side: 1,
                    label: "x2".into(),
                    coefs: vec![(0, 0, 1, 1.0)],
                    consts: vec![],
                },
            ],
        };
        let r = solve(&p, &opts()).unwrap();
        assert!(r.status.is_usable());
        assert!((r.objective - 1.0).abs() < 1e-6);
        // The budget row is active: unit dual. The x1 cap is slack: zero dual.
        assert_eq!(r.ineq_duals.len(), 2);
        assert!((r.ineq_duals[0] - 1.0).abs() < 1e-5);
        assert!(r.ineq_duals[1].abs() < 1e-5);
    }

    #[test]
    fn infeasible_program_is_flagged() {
        // x = -1 with x >= 0.
        let p = ConicProgram {
            num_scalars: 1,
            objective: vec![(0, 1.0)],
            equalities: vec![LinRow::new(vec![(0, 1.0)], -1.0, RowLabel::Mass)],
            inequalities: vec![],
            psd_blocks: vec![PsdBlock {
                side: 1,
                label: "x>=0".into(),
                coefs: vec![(0, 0, 0, 1.0)],
                consts: vec![],
            }],
        };
        let r = solve(&p, &opts()).unwrap();
        assert!(!r.status.is_usable(), "status {:?}", r.status);
    }

    #[test]
    fn unbounded_program_is_flagged() {
        // max x with x >= 0 only.
        let p = ConicProgram {
            num_scalars: 1,
            objective: vec![(0, 1.0)],
            equalities: vec![],
            inequalities: vec![],
            psd_blocks: vec![PsdBlock {
                side: 1,
                label: "x>=0".into(),
                coefs: vec![(0, 0, 0, 1.0)],
                consts: vec![],
            }],
        };
        let r = solve(&p, &opts()).unwrap();
        assert!(!r.status.is_usable(), "status {:?}", r.status);
    }

    #[test]
    fn two_block_problem_solves_groupwise() {
        // Two independent moment problems share nothing; the grouped Schur
        // path must reproduce the separable optimum. Objective couples them.
        // Block A: measure on [-1,1], maximize y1. Block B: same but
        // minimize (coefficient -1): optimum y1 = 1, v1 = -1.
        let mk = |base: usize| -> Vec<PsdBlock> {
            vec![
                PsdBlock {
                    side: 2,
                    label: format!("m{base}"),
                    coefs: vec![
                        (0, 0, base, 1.0),
                        (0, 1, base + 1, 1.0),
                        (1, 1, base + 2, 1.0),
                    ],
                    consts: vec![],
                },
                PsdBlock {
                    side: 1,
                    label: format!("s{base}"),
                    coefs: vec![(0, 0, base, 1.0), (0, 0, base + 2, -1.0)],
                    consts: vec![],
                },
            ]
        };
        let mut blocks = mk(0);
        blocks.extend(mk(3));
        let p = ConicProgram {
            num_scalars: 6,
            objective: vec![(1, 1.0), (4, -1.0)],
            equalities: vec![
                LinRow::new(vec![(0, 1.0)], 1.0, RowLabel::Mass),
                LinRow::new(vec![(3, 1.0)], 1.0, RowLabel::Mass),
            ],
            inequalities: vec![],
            psd_blocks: blocks,
        };
        let r = solve(&p, &opts()).unwrap();
        assert_eq!(r.status, Status::Optimal);
        assert!((r.objective - 2.0).abs() < 1e-6);
        assert!((r.scalars[1] - 1.0).abs() < 1e-5);
        assert!((r.scalars[4] + 1.0).abs() < 1e-5);
    }
}
