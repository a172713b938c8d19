//! Sparse multivariate polynomial arithmetic over four variable blocks:
//! time `t`, state `x`, uncertain parameters `th`, and disturbances `w`.
//!
//! Monomials are ordered graded-lexicographically (total degree first, then
//! lexicographic on the flattened exponent vector in block order `t, x, th, w`
//! with the larger leading exponent sorting first). All public containers
//! iterate in that order, so downstream moment indexing is deterministic.

use std::collections::BTreeMap;
use std::fmt;

/// Coefficients with absolute value at or below this are dropped after every
/// arithmetic operation.
pub const COEF_PRUNE: f64 = 1e-14;

/// Dimensions of the variable blocks. The time variable is always a single
/// scalar and needs no dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Vars {
    pub nx: usize,
    pub nth: usize,
    pub nw: usize,
}

impl Vars {
    pub fn new(nx: usize, nth: usize, nw: usize) -> Self {
        Vars { nx, nth, nw }
    }

    /// Total number of scalar variables including time.
    pub fn total(&self) -> usize {
        1 + self.nx + self.nth + self.nw
    }
}

/// Exponent vector of a single monomial, split by block.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Monomial {
    pub t: u8,
    pub x: Vec<u8>,
    pub th: Vec<u8>,
    pub w: Vec<u8>,
}

impl Monomial {
    pub fn one(vars: Vars) -> Self {
        Monomial {
            t: 0,
            x: vec![0; vars.nx],
            th: vec![0; vars.nth],
            w: vec![0; vars.nw],
        }
    }

    pub fn vars(&self) -> Vars {
        Vars::new(self.x.len(), self.th.len(), self.w.len())
    }

    pub fn degree(&self) -> u32 {
        let sum = |v: &[u8]| v.iter().map(|&e| e as u32).sum::<u32>();
        self.t as u32 + sum(&self.x) + sum(&self.th) + sum(&self.w)
    }

    /// Exponents in canonical flat order `t, x.., th.., w..`.
    pub fn flat(&self) -> impl Iterator<Item = u8> + '_ {
        std::iter::once(self.t)
            .chain(self.x.iter().copied())
            .chain(self.th.iter().copied())
            .chain(self.w.iter().copied())
    }

    /// Elementwise sum of exponents. Both monomials must share dimensions.
    pub fn mul(&self, other: &Monomial) -> Monomial {
        assert_eq!(self.vars(), other.vars(), "monomial block dims differ");
        let add = |a: &[u8], b: &[u8]| a.iter().zip(b).map(|(&p, &q)| p + q).collect();
        Monomial {
            t: self.t + other.t,
            x: add(&self.x, &other.x),
            th: add(&self.th, &other.th),
            w: add(&self.w, &other.w),
        }
    }

    pub fn eval(&self, t: f64, x: &[f64], th: &[f64], w: &[f64]) -> f64 {
        fn powi(base: f64, e: u8) -> f64 {
            base.powi(e as i32)
        }
        let mut acc = powi(t, self.t);
        for (v, &e) in x.iter().zip(&self.x) {
            acc *= powi(*v, e);
        }
        for (v, &e) in th.iter().zip(&self.th) {
            acc *= powi(*v, e);
        }
        for (v, &e) in w.iter().zip(&self.w) {
            acc *= powi(*v, e);
        }
        acc
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.degree()
            .cmp(&other.degree())
            // Within a degree class the larger leading exponent comes first,
            // so lexicographic comparison runs on the *other* operand.
            .then_with(|| other.flat().cmp(self.flat()))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Which scalar variable a monomial index position refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Var {
    T,
    X(usize),
    Th(usize),
    W(usize),
}

/// Sparse polynomial with `f64` coefficients.
///
/// Operations that combine two polynomials panic if their block dimensions
/// differ; that is a programming error, not an input error.
#[derive(Clone, PartialEq)]
pub struct Poly {
    vars: Vars,
    terms: BTreeMap<Monomial, f64>,
}

impl Poly {
    pub fn zero(vars: Vars) -> Self {
        Poly { vars, terms: BTreeMap::new() }
    }

    pub fn constant(vars: Vars, c: f64) -> Self {
        let mut p = Poly::zero(vars);
        p.add_term(Monomial::one(vars), c);
        p
    }

    /// The monomial `v^1` as a polynomial.
    pub fn var(vars: Vars, v: Var) -> Self {
        let mut m = Monomial::one(vars);
        match v {
            Var::T => m.t = 1,
            Var::X(i) => m.x[i] = 1,
            Var::Th(i) => m.th[i] = 1,
            Var::W(i) => m.w[i] = 1,
        }
        Poly::from_term(m, 1.0)
    }

    pub fn from_term(m: Monomial, c: f64) -> Self {
        let mut p = Poly::zero(m.vars());
        p.add_term(m, c);
        p
    }

    pub fn vars(&self) -> Vars {
        self.vars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Total degree; zero polynomial reports 0.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    /// Largest exponent of `t` across all terms.
    pub fn degree_in_t(&self) -> u8 {
        self.terms.keys().map(|m| m.t).max().unwrap_or(0)
    }

    pub fn max_degree_in(&self, v: Var) -> u8 {
        self.terms
            .keys()
            .map(|m| match v {
                Var::T => m.t,
                Var::X(i) => m.x[i],
                Var::Th(i) => m.th[i],
                Var::W(i) => m.w[i],
            })
            .max()
            .unwrap_or(0)
    }

    pub fn coef(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    pub fn add_term(&mut self, m: Monomial, c: f64) {
        assert_eq!(m.vars(), self.vars, "monomial block dims differ from polynomial");
        use std::collections::btree_map::Entry;
        match self.terms.entry(m) {
            Entry::Occupied(mut e) => {
                *e.get_mut() += c;
                if e.get().abs() <= COEF_PRUNE {
                    e.remove();
                }
            }
            Entry::Vacant(e) => {
                if c.abs() > COEF_PRUNE {
                    e.insert(c);
                }
            }
        }
    }

    pub fn add(&self, other: &Poly) -> Poly {
        assert_eq!(self.vars, other.vars, "polynomial block dims differ");
        let mut out = self.clone();
        for (m, c) in other.terms() {
            out.add_term(m.clone(), c);
        }
        out
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, c: f64) -> Poly {
        if c == 0.0 {
            return Poly::zero(self.vars);
        }
        let mut out = Poly::zero(self.vars);
        for (m, v) in self.terms() {
            let cv = c * v;
            if cv.abs() > COEF_PRUNE {
                out.terms.insert(m.clone(), cv);
            }
        }
        out
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        assert_eq!(self.vars, other.vars, "polynomial block dims differ");
        let mut out = Poly::zero(self.vars);
        for (ma, ca) in self.terms() {
            for (mb, cb) in other.terms() {
                out.add_term(ma.mul(mb), ca * cb);
            }
        }
        out
    }

    pub fn pow(&self, e: u32) -> Poly {
        let mut out = Poly::constant(self.vars, 1.0);
        for _ in 0..e {
            out = out.mul(self);
        }
        out
    }

    pub fn partial(&self, v: Var) -> Poly {
        let mut out = Poly::zero(self.vars);
        for (m, c) in self.terms() {
            let e = match v {
                Var::T => m.t,
                Var::X(i) => m.x[i],
                Var::Th(i) => m.th[i],
                Var::W(i) => m.w[i],
            };
            if e == 0 {
                continue;
            }
            let mut dm = m.clone();
            match v {
                Var::T => dm.t -= 1,
                Var::X(i) => dm.x[i] -= 1,
                Var::Th(i) => dm.th[i] -= 1,
                Var::W(i) => dm.w[i] -= 1,
            }
            out.add_term(dm, c * e as f64);
        }
        out
    }

    /// Lie derivative along a vector field: `dv/dt + sum_i f_i dv/dx_i`.
    /// `f` must have one component per state variable.
    pub fn lie(&self, f: &[Poly]) -> Poly {
        assert_eq!(f.len(), self.vars.nx, "vector field arity mismatch");
        let mut out = self.partial(Var::T);
        for (i, fi) in f.iter().enumerate() {
            out = out.add(&fi.mul(&self.partial(Var::X(i))));
        }
        out
    }

    /// Pushforward of a monomial through a state map: substitutes
    /// `x_i <- f_i(x, th, w)` into `t^b x^a th^g w^e`, keeping the non-state
    /// exponents as-is.
    pub fn compose_monomial(m: &Monomial, f: &[Poly]) -> Poly {
        assert!(!f.is_empty(), "state map must have at least one component");
        let vars = f[0].vars();
        assert_eq!(m.x.len(), f.len(), "state exponent arity mismatch");
        let mut rest = m.clone();
        rest.x = vec![0; vars.nx];
        let mut out = Poly::from_term(rest, 1.0);
        for (i, &e) in m.x.iter().enumerate() {
            if e > 0 {
                out = out.mul(&f[i].pow(e as u32));
            }
        }
        out
    }

    /// Substitutes an affine expression for each scalar variable. Entries of
    /// `subs` are indexed by the canonical flat order and must use the same
    /// block dimensions as `self`.
    /// One substitution slot per variable in flat order, each mapping to
    /// itself; callers overwrite the slots they replace.
    pub fn identity_subs(vars: Vars) -> Vec<Poly> {
        let mut subs = Vec::with_capacity(vars.total());
        subs.push(Poly::var(vars, Var::T));
        for i in 0..vars.nx {
            subs.push(Poly::var(vars, Var::X(i)));
        }
        for i in 0..vars.nth {
            subs.push(Poly::var(vars, Var::Th(i)));
        }
        for i in 0..vars.nw {
            subs.push(Poly::var(vars, Var::W(i)));
        }
        subs
    }

    pub fn substitute(&self, subs: &[Poly]) -> Poly {
        assert_eq!(subs.len(), self.vars.total(), "one substitution per variable");
        let mut out = Poly::zero(self.vars);
        for (m, c) in self.terms() {
            let mut term = Poly::constant(self.vars, c);
            for (k, e) in m.flat().enumerate() {
                if e > 0 {
                    term = term.mul(&subs[k].pow(e as u32));
                }
            }
            out = out.add(&term);
        }
        out
    }

    pub fn eval(&self, t: f64, x: &[f64], th: &[f64], w: &[f64]) -> f64 {
        assert_eq!(x.len(), self.vars.nx);
        assert_eq!(th.len(), self.vars.nth);
        assert_eq!(w.len(), self.vars.nw);
        self.terms().map(|(m, c)| c * m.eval(t, x, th, w)).sum()
    }

    /// Largest absolute coefficient; zero polynomial reports 0.
    pub fn max_abs_coef(&self) -> f64 {
        self.terms().map(|(_, c)| c.abs()).fold(0.0, f64::max)
    }
}

impl fmt::Display for Poly {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(fm, "0");
        }
        let mut first = true;
        for (m, c) in self.terms() {
            if first {
                write!(fm, "{}", c)?;
                first = false;
            } else if c >= 0.0 {
                write!(fm, " + {}", c)?;
            } else {
                write!(fm, " - {}", -c)?;
            }
            let emit_var = |fm: &mut fmt::Formatter<'_>, name: &str, e: u8| -> fmt::Result {
                if e == 1 {
                    write!(fm, "*{}", name)
                } else if e > 1 {
                    write!(fm, "*{}^{}", name, e)
                } else {
                    Ok(())
                }
            };
            emit_var(fm, "t", m.t)?;
            for (i, &e) in m.x.iter().enumerate() {
                emit_var(fm, &format!("x{}", i + 1), e)?;
            }
            for (i, &e) in m.th.iter().enumerate() {
                emit_var(fm, &format!("th{}", i + 1), e)?;
            }
            for (i, &e) in m.w.iter().enumerate() {
                emit_var(fm, &format!("w{}", i + 1), e)?;
            }
        }
        Ok(())
    }
}

impl fmt::Debug for Poly {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, fm)
    }
}

/// Selects which variable blocks participate in an enumeration or a measure.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockMask {
    pub t: bool,
    pub x: bool,
    pub th: bool,
    pub w: bool,
}

impl BlockMask {
    pub fn all(use_t: bool) -> Self {
        BlockMask { t: use_t, x: true, th: true, w: true }
    }

    /// True if the monomial touches only active blocks.
    pub fn admits(&self, m: &Monomial) -> bool {
        (self.t || m.t == 0)
            && (self.x || m.x.iter().all(|&e| e == 0))
            && (self.th || m.th.iter().all(|&e| e == 0))
            && (self.w || m.w.iter().all(|&e| e == 0))
    }
}

/// All monomials over the active blocks with total degree at most `deg`, in
/// canonical order. Inactive blocks keep exponent zero; a block with
/// dimension 0 contributes nothing.
pub fn monomials_up_to(vars: Vars, mask: BlockMask, deg: u32) -> Vec<Monomial> {
    let nvars = vars.total();
    let mut out = Vec::new();
    let mut exps = vec![0u8; nvars];
    // Positions in flat order that are allowed to be nonzero.
    let allowed: Vec<bool> = (0..nvars)
        .map(|k| {
            if k == 0 {
                mask.t
            } else if k < 1 + vars.nx {
                mask.x
            } else if k < 1 + vars.nx + vars.nth {
                mask.th
            } else {
                mask.w
            }
        })
        .collect();
    fn rec(
        k: usize,
        remaining: u32,
        exps: &mut Vec<u8>,
        allowed: &[bool],
        vars: Vars,
        out: &mut Vec<Monomial>,
    ) {
        if k == exps.len() {
            let mut m = Monomial::one(vars);
            m.t = exps[0];
            m.x.copy_from_slice(&exps[1..1 + vars.nx]);
            m.th.copy_from_slice(&exps[1 + vars.nx..1 + vars.nx + vars.nth]);
            m.w.copy_from_slice(&exps[1 + vars.nx + vars.nth..]);
            out.push(m);
            return;
        }
        let top = if allowed[k] { remaining } else { 0 };
        for e in 0..=top {
            exps[k] = e as u8;
            rec(k + 1, remaining - e, exps, allowed, vars, out);
        }
        exps[k] = 0;
    }
    rec(0, deg, &mut exps, &allowed, vars, &mut out);
    out.sort();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v2() -> Vars {
        Vars::new(2, 0, 0)
    }

    fn x(i: usize) -> Poly {
        Poly::var(v2(), Var::X(i))
    }

    #[test]
    fn product_adds_exponents_across_blocks() {
        let vars = Vars::new(1, 1, 1);
        let p = Poly::var(vars, Var::X(0)).mul(&Poly::var(vars, Var::Th(0)));
        let q = Poly::var(vars, Var::W(0)).mul(&Poly::var(vars, Var::X(0)));
        let pq = p.mul(&q);
        assert_eq!(pq.num_terms(), 1);
        let (m, c) = pq.terms().next().unwrap();
        assert_eq!((m.t, m.x[0], m.th[0], m.w[0]), (0, 2, 1, 1));
        assert_eq!(c, 1.0);
        assert_eq!(pq.degree(), 4);
    }

    #[test]
    fn cancelling_coefficients_prunes_the_term() {
        let p = x(0).mul(&x(1)).scale(0.75);
        let q = p.scale(-1.0);
        assert!(p.add(&q).is_zero());
    }

    #[test]
    fn partial_derivative() {
        // d/dx1 (x1^2 x2 - 3 x1) = 2 x1 x2 - 3
        let p = x(0).pow(2).mul(&x(1)).sub(&x(0).scale(3.0));
        let d = p.partial(Var::X(0));
        let expect = x(0).mul(&x(1)).scale(2.0).sub(&Poly::constant(v2(), 3.0));
        assert_eq!(d, expect);
    }

    #[test]
    fn lie_derivative_includes_time_partial() {
        // v = t x1, f = (x2, 0): Lv = x1 + t x2
        let t = Poly::var(v2(), Var::T);
        let v = t.mul(&x(0));
        let f = [x(1), Poly::zero(v2())];
        let lv = v.lie(&f);
        let expect = x(0).add(&t.mul(&x(1)));
        assert_eq!(lv, expect);
    }

    #[test]
    fn compose_monomial_pushforward() {
        // x1^2 x2 with x1 <- x2, x2 <- x1 + w  gives  x2^2 (x1 + w)
        let vars = Vars::new(2, 0, 1);
        let mut m = Monomial::one(vars);
        m.x = vec![2, 1];
        let f = [
            Poly::var(vars, Var::X(1)),
            Poly::var(vars, Var::X(0)).add(&Poly::var(vars, Var::W(0))),
        ];
        let composed = Poly::compose_monomial(&m, &f);
        let expect = Poly::var(vars, Var::X(1))
            .pow(2)
            .mul(&Poly::var(vars, Var::X(0)).add(&Poly::var(vars, Var::W(0))));
        assert_eq!(composed, expect);
    }

    #[test]
    fn substitute_affine_shift() {
        // p = x1^2 under x1 <- x1 + 1 becomes x1^2 + 2 x1 + 1
        let vars = v2();
        let subs = vec![
            Poly::var(vars, Var::T),
            x(0).add(&Poly::constant(vars, 1.0)),
            x(1),
        ];
        let p = x(0).pow(2).substitute(&subs);
        let expect = x(0)
            .pow(2)
            .add(&x(0).scale(2.0))
            .add(&Poly::constant(vars, 1.0));
        assert_eq!(p, expect);
    }

    #[test]
    fn graded_lex_enumeration_order() {
        let vars = Vars::new(2, 0, 0);
        let ms = monomials_up_to(vars, BlockMask::all(true), 2);
        let flat: Vec<(u8, u8, u8)> = ms.iter().map(|m| (m.t, m.x[0], m.x[1])).collect();
        assert_eq!(
            flat,
            vec![
                (0, 0, 0),
                (1, 0, 0),
                (0, 1, 0),
                (0, 0, 1),
                (2, 0, 0),
                (1, 1, 0),
                (1, 0, 1),
                (0, 2, 0),
                (0, 1, 1),
                (0, 0, 2),
            ]
        );
        // Count: C(2+3, 3) = 10 monomials over 3 variables up to degree 2.
        assert_eq!(ms.len(), 10);
    }

    #[test]
    fn enumeration_is_sorted_and_unique() {
        let vars = Vars::new(2, 1, 1);
        let ms = monomials_up_to(vars, BlockMask::all(true), 3);
        for pair in ms.windows(2) {
            assert!(pair[0] < pair[1]);
        }
        assert_eq!(ms.len(), 56); // C(3+5, 5) = 56
    }

    #[test]
    fn t_gating_excludes_time() {
        let ms = monomials_up_to(Vars::new(1, 0, 0), BlockMask::all(false), 4);
        assert!(ms.iter().all(|m| m.t == 0));
        assert_eq!(ms.len(), 5);
    }

    proptest! {
        #[test]
        fn eval_is_ring_homomorphism(
            ca in -3.0f64..3.0, cb in -3.0f64..3.0,
            pt in (-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0)
        ) {
            let vars = v2();
            let t = Poly::var(vars, Var::T);
            // a = ca + x1 t, b = x2 - cb x1^2
            let a = Poly::constant(vars, ca).add(&x(0).mul(&t));
            let b = x(1).sub(&x(0).pow(2).scale(cb));
            let (tv, x1, x2) = pt;
            let xs = [x1, x2];
            let va = a.eval(tv, &xs, &[], &[]);
            let vb = b.eval(tv, &xs, &[], &[]);
            let sum = a.add(&b).eval(tv, &xs, &[], &[]);
            let prod = a.mul(&b).eval(tv, &xs, &[], &[]);
            prop_assert!((sum - (va + vb)).abs() < 1e-9);
            prop_assert!((prod - va * vb).abs() < 1e-9);
        }

        #[test]
        fn monomial_order_is_total_and_graded(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let vars = Vars::new(2, 1, 0);
            let mut gen = || {
                let mut m = Monomial::one(vars);
                m.t = rng.gen_range(0..3);
                m.x[0] = rng.gen_range(0..3);
                m.x[1] = rng.gen_range(0..3);
                m.th[0] = rng.gen_range(0..3);
                m
            };
            let a = gen();
            let b = gen();
            if a.degree() < b.degree() {
                prop_assert!(a < b);
            }
            prop_assert_eq!(a.cmp(&b), b.cmp(&a).reverse());
        }
    }
}
