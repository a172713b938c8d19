//! Truncated moment sequences: basis enumeration, the Riesz functional, and
//! the symbolic structure of moment and localizing matrices.
//!
//! A measure is represented by its moments `y_m = <m, mu>` over the monomials
//! `m` of its active variable blocks up to a degree cap. Matrix structure is
//! kept symbolic (each matrix entry is a sparse combination of moment
//! indices) so the same description serves the SDP assembler, numeric
//! evaluation in tests, and solution recovery.

use crate::poly::{monomials_up_to, BlockMask, Monomial, Poly, Vars};
use std::collections::HashMap;

/// Monomial basis of a measure: all monomials over the active blocks with
/// total degree at most `max_degree`, in canonical order.
#[derive(Clone, Debug)]
pub struct MomentBasis {
    pub vars: Vars,
    pub mask: BlockMask,
    pub max_degree: u32,
    pub monomials: Vec<Monomial>,
    index: HashMap<Monomial, usize>,
}

impl MomentBasis {
    pub fn new(vars: Vars, mask: BlockMask, max_degree: u32) -> Self {
        Self::new_excluding(vars, mask, max_degree, &[])
    }

    /// Basis without any monomial touching the given flat variable indices.
    /// Products of retained monomials stay in the basis, so moment and
    /// localizing matrices remain well formed over the reduced index set.
    pub fn new_excluding(
        vars: Vars,
        mask: BlockMask,
        max_degree: u32,
        excluded_flats: &[usize],
    ) -> Self {
        let mut monomials = monomials_up_to(vars, mask, max_degree);
        if !excluded_flats.is_empty() {
            monomials.retain(|m| {
                let flat: Vec<u8> = m.flat().collect();
                excluded_flats.iter().all(|&i| flat[i] == 0)
            });
        }
        let index = monomials
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), i))
            .collect();
        MomentBasis { vars, mask, max_degree, monomials, index }
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    /// Basis monomials of degree at most `r`, in basis order. Matrix rows
    /// come from here so exclusions propagate to every derived matrix.
    pub fn rows_up_to(&self, r: u32) -> Vec<Monomial> {
        self.monomials
            .iter()
            .filter(|m| m.degree() <= r)
            .cloned()
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    pub fn index_of(&self, m: &Monomial) -> Option<usize> {
        self.index.get(m).copied()
    }

    /// Riesz functional `L_y(p) = sum_a p_a y_a`. Fails if `p` involves a
    /// monomial outside the basis.
    pub fn riesz(&self, y: &[f64], p: &Poly) -> Option<f64> {
        debug_assert_eq!(y.len(), self.len());
        let mut acc = 0.0;
        for (m, c) in p.terms() {
            acc += c * y[self.index_of(m)?];
        }
        Some(acc)
    }

    /// Moments of the Dirac measure at the given point.
    pub fn dirac(&self, t: f64, x: &[f64], th: &[f64], w: &[f64]) -> Vec<f64> {
        self.monomials
            .iter()
            .map(|m| m.eval(t, x, th, w))
            .collect()
    }

    /// Moments of a weighted average of Dirac measures; the workhorse for
    /// empirical occupation moments. Weights need not sum to one.
    pub fn average<'a, I>(&self, points: I) -> Vec<f64>
    where
        I: IntoIterator<Item = (f64, f64, &'a [f64], &'a [f64], &'a [f64])>,
    {
        let mut acc = vec![0.0; self.len()];
        for (weight, t, x, th, w) in points {
            for (yi, m) in acc.iter_mut().zip(&self.monomials) {
                *yi += weight * m.eval(t, x, th, w);
            }
        }
        acc
    }
}

/// Symbolic symmetric matrix whose entry `(i, j)` is a sparse linear
/// combination of moments. Only the upper triangle `i <= j` is stored.
#[derive(Clone, Debug)]
pub struct MatrixSpec {
    pub side: usize,
    /// Row labels: the monomial attached to each row/column.
    pub row_monomials: Vec<Monomial>,
    /// `(i, j, terms)` with `i <= j`; each term is `(moment index, coef)`.
    pub entries: Vec<(usize, usize, Vec<(usize, f64)>)>,
}

impl MatrixSpec {
    /// Dense symmetric evaluation at a concrete moment vector, row-major.
    pub fn evaluate(&self, y: &[f64]) -> Vec<f64> {
        let n = self.side;
        let mut out = vec![0.0; n * n];
        for (i, j, terms) in &self.entries {
            let v: f64 = terms.iter().map(|&(k, c)| c * y[k]).sum();
            out[i * n + j] = v;
            out[j * n + i] = v;
        }
        out
    }

    /// Every moment index referenced by some entry.
    pub fn referenced_moments(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries
            .iter()
            .flat_map(|(_, _, terms)| terms.iter().map(|&(k, _)| k))
    }
}

/// Moment matrix `M_r(y)`: rows indexed by basis monomials of degree at most
/// `r`, entry `(i, j) = y_{m_i * m_j}`. Requires `2r <= basis.max_degree`.
pub fn moment_matrix(basis: &MomentBasis, r: u32) -> MatrixSpec {
    assert!(2 * r <= basis.max_degree, "moment matrix order exceeds basis degree");
    let rows = basis.rows_up_to(r);
    let mut entries = Vec::with_capacity(rows.len() * (rows.len() + 1) / 2);
    for i in 0..rows.len() {
        for j in i..rows.len() {
            let prod = rows[i].mul(&rows[j]);
            let k = basis
                .index_of(&prod)
                .expect("moment matrix entry outside basis");
            entries.push((i, j, vec![(k, 1.0)]));
        }
    }
    MatrixSpec { side: rows.len(), row_monomials: rows, entries }
}

/// Localizing matrix `M_{r'}(g y)` with `r' = parent_order - ceil(deg g / 2)`:
/// entry `(i, j) = L_y(g * m_i * m_j)`. The constraint polynomial may use any
/// blocks active in the basis.
pub fn localizing_matrix(basis: &MomentBasis, parent_order: u32, g: &Poly) -> MatrixSpec {
    localizing_matrix_at(basis, localizing_order(parent_order, g), g)
}

/// Localizing matrix with the row degree pinned directly instead of derived
/// from the parent order.
pub fn localizing_matrix_at(basis: &MomentBasis, r: u32, g: &Poly) -> MatrixSpec {
    let rows = basis.rows_up_to(r);
    let mut entries = Vec::with_capacity(rows.len() * (rows.len() + 1) / 2);
    for i in 0..rows.len() {
        for j in i..rows.len() {
            let pair = rows[i].mul(&rows[j]);
            let mut terms = Vec::with_capacity(g.num_terms());
            for (m, c) in g.terms() {
                let k = basis
                    .index_of(&pair.mul(m))
                    .expect("localizing matrix entry outside basis");
                terms.push((k, c));
            }
            entries.push((i, j, terms));
        }
    }
    MatrixSpec { side: rows.len(), row_monomials: rows, entries }
}

/// Order of the localizing matrix for constraint `g` under a parent
/// relaxation order: `parent - ceil(deg g / 2)`, floored at zero.
pub fn localizing_order(parent_order: u32, g: &Poly) -> u32 {
    parent_order.saturating_sub(g.degree().div_ceil(2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::Var;
    use proptest::prelude::*;

    fn eigvals(sym_dense: &[f64], n: usize) -> Vec<f64> {
        use faer::Mat;
        let a = Mat::from_fn(n, n, |i, j| sym_dense[i * n + j]);
        let evd = a
            .self_adjoint_eigen(faer::Side::Lower)
            .expect("eigendecomposition failed");
        (0..n).map(|i| evd.S()[i]).collect()
    }

    #[test]
    fn basis_size_two_states_order_two() {
        let vars = Vars::new(2, 0, 0);
        let basis = MomentBasis::new(vars, BlockMask::all(false), 4);
        let mm = moment_matrix(&basis, 2);
        assert_eq!(mm.side, 6); // C(2+2, 2)
    }

    #[test]
    fn dirac_moment_matrix_one_var() {
        // Dirac at x = 2, order 1: [[1, 2], [2, 4]].
        let vars = Vars::new(1, 0, 0);
        let basis = MomentBasis::new(vars, BlockMask::all(false), 2);
        let y = basis.dirac(0.0, &[2.0], &[], &[]);
        let m = moment_matrix(&basis, 1).evaluate(&y);
        assert_eq!(m, vec![1.0, 2.0, 2.0, 4.0]);
    }

    #[test]
    fn dirac_moment_matrix_two_vars() {
        // Dirac at (1, 2), order 1: rows (1, x1, x2).
        let vars = Vars::new(2, 0, 0);
        let basis = MomentBasis::new(vars, BlockMask::all(false), 2);
        let y = basis.dirac(0.0, &[1.0, 2.0], &[], &[]);
        let m = moment_matrix(&basis, 1).evaluate(&y);
        assert_eq!(
            m,
            vec![1.0, 1.0, 2.0, 1.0, 1.0, 2.0, 2.0, 2.0, 4.0]
        );
    }

    #[test]
    fn localizing_interval_constraint_inside() {
        // g = 1 - x^2, parent order 1, Dirac at 0.5: scalar [0.75].
        let vars = Vars::new(1, 0, 0);
        let basis = MomentBasis::new(vars, BlockMask::all(false), 2);
        let x = Poly::var(vars, Var::X(0));
        let g = Poly::constant(vars, 1.0).sub(&x.mul(&x));
        let y = basis.dirac(0.0, &[0.5], &[], &[]);
        let spec = localizing_matrix(&basis, 1, &g);
        assert_eq!(spec.side, 1);
        assert_eq!(spec.evaluate(&y), vec![0.75]);
    }

    #[test]
    fn localizing_detects_point_outside_support() {
        // g = (x + 0.2)(0.2 - x), Dirac at 0.3 lies outside: L(g) = -0.05.
        let vars = Vars::new(1, 0, 0);
        let basis = MomentBasis::new(vars, BlockMask::all(false), 2);
        let x = Poly::var(vars, Var::X(0));
        let g = x
            .add(&Poly::constant(vars, 0.2))
            .mul(&Poly::constant(vars, 0.2).sub(&x));
        let y = basis.dirac(0.0, &[0.3], &[], &[]);
        let m = localizing_matrix(&basis, 1, &g).evaluate(&y);
        assert_eq!(m.len(), 1);
        assert!((m[0] - (-0.05)).abs() < 1e-12);
        assert!(m[0] < 0.0, "localizing value must expose the violation");
    }

    #[test]
    fn localizing_order_subtracts_half_degree() {
        let vars = Vars::new(1, 0, 0);
        let x = Poly::var(vars, Var::X(0));
        let g1 = Poly::constant(vars, 1.0).sub(&x.clone()); // degree 1
        let g2 = Poly::constant(vars, 1.0).sub(&x.mul(&x)); // degree 2
        assert_eq!(localizing_order(3, &g1), 2);
        assert_eq!(localizing_order(3, &g2), 2);
        assert_eq!(localizing_order(1, &g2), 0);
    }

    #[test]
    fn riesz_matches_evaluation_for_dirac() {
        let vars = Vars::new(2, 1, 0);
        let basis = MomentBasis::new(vars, BlockMask::all(true), 3);
        let p = Poly::var(vars, Var::X(0))
            .mul(&Poly::var(vars, Var::Th(0)))
            .add(&Poly::var(vars, Var::T).scale(2.5));
        let (t, x, th) = (0.3, [1.2, -0.7], [0.4]);
        let y = basis.dirac(t, &x, &th, &[]);
        let lv = basis.riesz(&y, &p).unwrap();
        assert!((lv - p.eval(t, &x, &th, &[])).abs() < 1e-12);
    }

    #[test]
    fn riesz_rejects_out_of_basis_monomials() {
        let vars = Vars::new(1, 0, 0);
        let basis = MomentBasis::new(vars, BlockMask::all(false), 2);
        let p = Poly::var(vars, Var::X(0)).pow(3);
        assert!(basis.riesz(&vec![0.0; basis.len()], &p).is_none());
    }

    #[test]
    fn masked_basis_has_no_inactive_exponents() {
        let vars = Vars::new(2, 1, 1);
        let mask = BlockMask { t: false, x: true, th: true, w: false };
        let basis = MomentBasis::new(vars, mask, 3);
        assert!(basis
            .monomials
            .iter()
            .all(|m| m.t == 0 && m.w.iter().all(|&e| e == 0)));
    }

    proptest! {
        // Moment matrices of point masses are PSD with numerical rank one:
        // the defining property the SDP relaxation rests on.
        #[test]
        fn dirac_moment_matrices_are_psd_rank_one(
            x1 in -2.0f64..2.0, x2 in -2.0f64..2.0, th in -1.0f64..1.0
        ) {
            let vars = Vars::new(2, 1, 0);
            let basis = MomentBasis::new(vars, BlockMask { t: false, x: true, th: true, w: false }, 4);
            let y = basis.dirac(0.0, &[x1, x2], &[th], &[]);
            let spec = moment_matrix(&basis, 2);
            let m = spec.evaluate(&y);
            let mut ev = eigvals(&m, spec.side);
            ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
            prop_assert!(ev[ev.len() - 1] > -1e-10);
            prop_assert!(ev[0] >= 1.0 - 1e-12); // contains the mass entry
            prop_assert!(ev[1].abs() / ev[0] < 1e-10);
        }
    }
}
