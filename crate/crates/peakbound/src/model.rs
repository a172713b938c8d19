//! Problem model: dynamics, support sets, horizon, and objective, plus the
//! validation and normalization steps that run before a relaxation is built.

use crate::poly::{Poly, Var, Vars};
use thiserror::Error;

/// Time structure of the system.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Horizon {
    /// Continuous time on `[0, T]`.
    Finite(f64),
    /// Continuous time, unbounded; requires time-invariant dynamics and
    /// produces a time-independent certificate.
    Infinite,
    /// Discrete time with at most `n` transitions.
    Steps(u64),
}

impl Horizon {
    pub fn is_discrete(&self) -> bool {
        matches!(self, Horizon::Steps(_))
    }
}

/// Basic closed semialgebraic set `{z : g_i(z) >= 0}`. An empty constraint
/// list is the whole space.
#[derive(Clone, Debug, PartialEq)]
pub struct SemiAlgebraicSet {
    pub constraints: Vec<Poly>,
}

impl SemiAlgebraicSet {
    pub fn whole_space() -> Self {
        SemiAlgebraicSet { constraints: Vec::new() }
    }

    pub fn new(constraints: Vec<Poly>) -> Self {
        SemiAlgebraicSet { constraints }
    }

    /// Product of intervals `lo_i <= x_i <= hi_i`, one constraint per state:
    /// `(x_i - lo)(hi - x_i) >= 0`.
    pub fn state_box(vars: Vars, ranges: &[(f64, f64)]) -> Self {
        let constraints = ranges
            .iter()
            .enumerate()
            .map(|(i, &(lo, hi))| {
                let xi = Poly::var(vars, Var::X(i));
                xi.sub(&Poly::constant(vars, lo))
                    .mul(&Poly::constant(vars, hi).sub(&xi))
            })
            .collect();
        SemiAlgebraicSet { constraints }
    }

    /// Closed ball `|x - c|^2 <= r^2` in the state block.
    pub fn state_ball(vars: Vars, center: &[f64], radius: f64) -> Self {
        let mut g = Poly::constant(vars, radius * radius);
        for (i, &ci) in center.iter().enumerate() {
            let d = Poly::var(vars, Var::X(i)).sub(&Poly::constant(vars, ci));
            g = g.sub(&d.mul(&d));
        }
        SemiAlgebraicSet { constraints: vec![g] }
    }

    /// Interval constraints on every parameter: `(th_i - lo)(hi - th_i) >= 0`.
    pub fn param_box(vars: Vars, ranges: &[(f64, f64)]) -> Self {
        let constraints = ranges
            .iter()
            .enumerate()
            .map(|(i, &(lo, hi))| {
                let v = Poly::var(vars, Var::Th(i));
                v.sub(&Poly::constant(vars, lo))
                    .mul(&Poly::constant(vars, hi).sub(&v))
            })
            .collect();
        SemiAlgebraicSet { constraints }
    }

    /// Interval constraints on every disturbance component.
    pub fn dist_box(vars: Vars, ranges: &[(f64, f64)]) -> Self {
        let constraints = ranges
            .iter()
            .enumerate()
            .map(|(i, &(lo, hi))| {
                let v = Poly::var(vars, Var::W(i));
                v.sub(&Poly::constant(vars, lo))
                    .mul(&Poly::constant(vars, hi).sub(&v))
            })
            .collect();
        SemiAlgebraicSet { constraints }
    }

    /// Membership up to slack: all constraints `g_i >= -tol`.
    pub fn contains(&self, x: &[f64], th: &[f64], w: &[f64], tol: f64) -> bool {
        self.constraints
            .iter()
            .all(|g| g.eval(0.0, x, th, w) >= -tol)
    }

    pub fn is_whole_space(&self) -> bool {
        self.constraints.is_empty()
    }
}

/// One mode of the dynamics. In continuous time `f` is the vector field
/// `dx/dt`; in discrete time it is the update map `x^+ = f(x, th, w)`.
/// `valid_on` restricts where the mode may be active (constraints over `x`);
/// the mode is admissible anywhere on the state set when it is the whole
/// space.
#[derive(Clone, Debug)]
pub struct Subsystem {
    pub f: Vec<Poly>,
    pub valid_on: SemiAlgebraicSet,
}

impl Subsystem {
    pub fn new(f: Vec<Poly>) -> Self {
        Subsystem { f, valid_on: SemiAlgebraicSet::whole_space() }
    }

    pub fn with_region(f: Vec<Poly>, valid_on: SemiAlgebraicSet) -> Self {
        Subsystem { f, valid_on }
    }

    pub fn degree(&self) -> u32 {
        self.f.iter().map(Poly::degree).max().unwrap_or(0)
    }
}

/// Quantity to maximize along trajectories.
#[derive(Clone, Debug)]
pub enum Objective {
    /// Upper bound on `max_t p(x(t))`.
    Single(Poly),
    /// Upper bound on `max_t min_i p_i(x(t))`; a negative bound certifies
    /// that no trajectory ever enters the region where all `p_i` are
    /// positive.
    Maximin(Vec<Poly>),
}

impl Objective {
    pub fn components(&self) -> &[Poly] {
        match self {
            Objective::Single(p) => std::slice::from_ref(p),
            Objective::Maximin(ps) => ps,
        }
    }
}

/// Transformation applied to bound values for reporting only; the underlying
/// certificate always refers to the raw objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ValueTransform {
    #[default]
    None,
    /// Report `sqrt(max(bound, 0))`; for objectives that are squares.
    Sqrt,
    /// Like `Sqrt`, then radians to degrees.
    SqrtDegrees,
}

impl ValueTransform {
    pub fn apply(&self, raw: f64) -> f64 {
        match self {
            ValueTransform::None => raw,
            ValueTransform::Sqrt => raw.max(0.0).sqrt(),
            ValueTransform::SqrtDegrees => raw.max(0.0).sqrt().to_degrees(),
        }
    }
}

/// Complete peak estimation problem.
#[derive(Clone, Debug)]
pub struct Problem {
    pub name: String,
    pub vars: Vars,
    pub horizon: Horizon,
    pub subsystems: Vec<Subsystem>,
    /// State support `X` (constraints over `x`); trajectories are only
    /// certified while they remain inside.
    pub state_set: SemiAlgebraicSet,
    /// Initial set `X0` (constraints over `x`).
    pub init_set: SemiAlgebraicSet,
    /// Parameter set (constraints over `th`); parameters are drawn once at
    /// time zero and held constant.
    pub param_set: SemiAlgebraicSet,
    /// Disturbance set (constraints over `w`); disturbances may vary in time.
    pub dist_set: SemiAlgebraicSet,
    pub objective: Objective,
    pub value_transform: ValueTransform,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("system must have at least one subsystem")]
    NoSubsystems,
    #[error("subsystem {k}: has {found} components, state dimension is {expected}")]
    WrongArity { k: usize, expected: usize, found: usize },
    #[error("{place}: polynomial has block dims {found:?}, problem has {expected:?}")]
    DimMismatch { place: String, found: Vars, expected: Vars },
    #[error("{place}: variable block `{block}` is not allowed here")]
    ForbiddenBlock { place: String, block: &'static str },
    #[error("time horizon must be positive and finite, got {0}")]
    BadHorizon(f64),
    #[error("discrete step budget must be at least 1")]
    NoSteps,
    #[error("{place}: coefficient is not finite")]
    NonFiniteCoef { place: String },
    #[error("maximin objective needs at least one component")]
    EmptyObjective,
    #[error("state scaling needs one finite range with lo < hi per state, got {0}")]
    BadScaling(String),
}

/// Block-usage rule for polynomials in a given structural position.
struct BlockRule {
    t: bool,
    x: bool,
    th: bool,
    w: bool,
}

fn check_poly(p: &Poly, vars: Vars, rule: BlockRule, place: &str) -> Result<(), ModelError> {
    if p.vars() != vars {
        return Err(ModelError::DimMismatch {
            place: place.into(),
            found: p.vars(),
            expected: vars,
        });
    }
    for (m, c) in p.terms() {
        if !c.is_finite() {
            return Err(ModelError::NonFiniteCoef { place: place.into() });
        }
        let bad = [
            (!rule.t && m.t > 0, "t"),
            (!rule.x && m.x.iter().any(|&e| e > 0), "x"),
            (!rule.th && m.th.iter().any(|&e| e > 0), "th"),
            (!rule.w && m.w.iter().any(|&e| e > 0), "w"),
        ];
        for (hit, block) in bad {
            if hit {
                return Err(ModelError::ForbiddenBlock { place: place.into(), block });
            }
        }
    }
    Ok(())
}

impl Problem {
    /// Structural checks: arities, block dims, variable-usage rules per
    /// position, horizon sanity. Runs before any relaxation is assembled.
    pub fn validate(&self) -> Result<(), ModelError> {
        let vars = self.vars;
        if self.subsystems.is_empty() {
            return Err(ModelError::NoSubsystems);
        }
        match self.horizon {
            Horizon::Finite(t) if !(t.is_finite() && t > 0.0) => {
                return Err(ModelError::BadHorizon(t))
            }
            Horizon::Steps(0) => return Err(ModelError::NoSteps),
            _ => {}
        }
        // Dynamics may use time only on a finite continuous horizon.
        let t_in_f = matches!(self.horizon, Horizon::Finite(_));
        for (k, sub) in self.subsystems.iter().enumerate() {
            if sub.f.len() != vars.nx {
                return Err(ModelError::WrongArity {
                    k,
                    expected: vars.nx,
                    found: sub.f.len(),
                });
            }
            for (i, fi) in sub.f.iter().enumerate() {
                check_poly(
                    fi,
                    vars,
                    BlockRule { t: t_in_f, x: true, th: true, w: true },
                    &format!("subsystem {k} component {i}"),
                )?;
            }
            for (i, g) in sub.valid_on.constraints.iter().enumerate() {
                check_poly(
                    g,
                    vars,
                    BlockRule { t: false, x: true, th: false, w: false },
                    &format!("subsystem {k} region constraint {i}"),
                )?;
            }
        }
        let set_rules: [(&SemiAlgebraicSet, &str, BlockRule); 4] = [
            (&self.state_set, "state set", BlockRule { t: false, x: true, th: false, w: false }),
            (&self.init_set, "initial set", BlockRule { t: false, x: true, th: false, w: false }),
            (&self.param_set, "parameter set", BlockRule { t: false, x: false, th: true, w: false }),
            (&self.dist_set, "disturbance set", BlockRule { t: false, x: false, th: false, w: true }),
        ];
        for (set, place, rule) in set_rules {
            let BlockRule { t, x, th, w } = rule;
            for (i, g) in set.constraints.iter().enumerate() {
                check_poly(
                    g,
                    vars,
                    BlockRule { t, x, th, w },
                    &format!("{place} constraint {i}"),
                )?;
            }
        }
        let ps = self.objective.components();
        if ps.is_empty() {
            return Err(ModelError::EmptyObjective);
        }
        for (i, p) in ps.iter().enumerate() {
            check_poly(
                p,
                vars,
                BlockRule { t: false, x: true, th: false, w: false },
                &format!("objective component {i}"),
            )?;
        }
        Ok(())
    }

    pub fn is_discrete(&self) -> bool {
        self.horizon.is_discrete()
    }

    pub fn max_dynamics_degree(&self) -> u32 {
        self.subsystems.iter().map(Subsystem::degree).max().unwrap_or(0)
    }
}

/// Invertible change of coordinates applied before building a relaxation:
/// time is mapped to `[0, 1]` on finite horizons and the state is optionally
/// mapped through `x = center + half * x_scaled` componentwise. Objective
/// values are unchanged by both maps.
#[derive(Clone, Debug)]
pub struct Normalization {
    pub time_scale: f64,
    pub x_center: Vec<f64>,
    pub x_half: Vec<f64>,
}

impl Normalization {
    pub fn identity(nx: usize) -> Self {
        Normalization {
            time_scale: 1.0,
            x_center: vec![0.0; nx],
            x_half: vec![1.0; nx],
        }
    }

    pub fn is_identity(&self) -> bool {
        self.time_scale == 1.0
            && self.x_center.iter().all(|&c| c == 0.0)
            && self.x_half.iter().all(|&s| s == 1.0)
    }

    /// Original coordinates from scaled ones.
    pub fn x_from_scaled(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter()
            .zip(self.x_center.iter().zip(&self.x_half))
            .map(|(&v, (&c, &h))| c + h * v)
            .collect()
    }

    pub fn x_to_scaled(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.x_center.iter().zip(&self.x_half))
            .map(|(&v, (&c, &h))| (v - c) / h)
            .collect()
    }

    pub fn t_from_scaled(&self, ts: f64) -> f64 {
        ts * self.time_scale
    }
}

fn substitute_state(p: &Poly, vars: Vars, center: &[f64], half: &[f64], t_sub: &Poly) -> Poly {
    let mut subs: Vec<Poly> = Vec::with_capacity(vars.total());
    subs.push(t_sub.clone());
    for i in 0..vars.nx {
        subs.push(
            Poly::var(vars, Var::X(i))
                .scale(half[i])
                .add(&Poly::constant(vars, center[i])),
        );
    }
    for i in 0..vars.nth {
        subs.push(Poly::var(vars, Var::Th(i)));
    }
    for i in 0..vars.nw {
        subs.push(Poly::var(vars, Var::W(i)));
    }
    p.substitute(&subs)
}

impl Problem {
    /// Rewrites the problem in normalized coordinates and returns the map
    /// back. On a finite horizon time becomes `[0, 1]` and the dynamics are
    /// multiplied by `T`; with `state_ranges` given, each state is affinely
    /// mapped so the range becomes `[-1, 1]`. The peak bound of the
    /// normalized problem equals that of the original.
    pub fn normalize(
        &self,
        state_ranges: Option<&[(f64, f64)]>,
    ) -> Result<(Problem, Normalization), ModelError> {
        let vars = self.vars;
        let nx = vars.nx;
        let (center, half) = match state_ranges {
            None => (vec![0.0; nx], vec![1.0; nx]),
            Some(ranges) => {
                if ranges.len() != nx {
                    return Err(ModelError::BadScaling(format!(
                        "{} ranges for {} states",
                        ranges.len(),
                        nx
                    )));
                }
                let mut c = Vec::with_capacity(nx);
                let mut h = Vec::with_capacity(nx);
                for &(lo, hi) in ranges {
                    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                        return Err(ModelError::BadScaling(format!("[{lo}, {hi}]")));
                    }
                    c.push(0.5 * (lo + hi));
                    h.push(0.5 * (hi - lo));
                }
                (c, h)
            }
        };
        let time_scale = match self.horizon {
            Horizon::Finite(t) => t,
            _ => 1.0,
        };
        let norm = Normalization { time_scale, x_center: center, x_half: half };
        if norm.is_identity() {
            return Ok((self.clone(), norm));
        }

        // Inside dynamics, t must also be rescaled: t = T * t_scaled.
        let t_in_f = Poly::var(vars, Var::T).scale(time_scale);
        let t_plain = Poly::var(vars, Var::T);
        let sub_f = |p: &Poly| substitute_state(p, vars, &norm.x_center, &norm.x_half, &t_in_f);
        let sub_set = |s: &SemiAlgebraicSet| SemiAlgebraicSet {
            constraints: s
                .constraints
                .iter()
                .map(|g| substitute_state(g, vars, &norm.x_center, &norm.x_half, &t_plain))
                .collect(),
        };

        let subsystems = self
            .subsystems
            .iter()
            .map(|sub| Subsystem {
                f: sub
                    .f
                    .iter()
                    .enumerate()
                    .map(|(i, fi)| {
                        let g = sub_f(fi);
                        let scale = if self.is_discrete() {
                            // Discrete maps transform as x+ = f: scaled
                            // update is (f(c + h x) - c_i) / h_i.
                            1.0 / norm.x_half[i]
                        } else {
                            time_scale / norm.x_half[i]
                        };
                        if self.is_discrete() {
                            g.sub(&Poly::constant(vars, norm.x_center[i])).scale(scale)
                        } else {
                            g.scale(scale)
                        }
                    })
                    .collect(),
                valid_on: sub_set(&sub.valid_on),
            })
            .collect();

        let objective = match &self.objective {
            Objective::Single(p) => Objective::Single(substitute_state(
                p,
                vars,
                &norm.x_center,
                &norm.x_half,
                &t_plain,
            )),
            Objective::Maximin(ps) => Objective::Maximin(
                ps.iter()
                    .map(|p| substitute_state(p, vars, &norm.x_center, &norm.x_half, &t_plain))
                    .collect(),
            ),
        };

        let horizon = match self.horizon {
            Horizon::Finite(_) => Horizon::Finite(1.0),
            h => h,
        };
        let scaled = Problem {
            name: self.name.clone(),
            vars,
            horizon,
            subsystems,
            state_set: sub_set(&self.state_set),
            init_set: sub_set(&self.init_set),
            param_set: self.param_set.clone(),
            dist_set: self.dist_set.clone(),
            objective,
            value_transform: self.value_transform,
        };
        Ok((scaled, norm))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simple_problem() -> Problem {
        let vars = Vars::new(2, 0, 0);
        let f = vec![
            Poly::var(vars, Var::X(1)),
            Poly::var(vars, Var::X(0)).scale(-1.0),
        ];
        Problem {
            name: "rotor".into(),
            vars,
            horizon: Horizon::Finite(2.0),
            subsystems: vec![Subsystem::new(f)],
            state_set: SemiAlgebraicSet::state_box(vars, &[(-2.0, 2.0), (-2.0, 2.0)]),
            init_set: SemiAlgebraicSet::state_ball(vars, &[1.0, 0.0], 0.1),
            param_set: SemiAlgebraicSet::whole_space(),
            dist_set: SemiAlgebraicSet::whole_space(),
            objective: Objective::Single(Poly::var(vars, Var::X(0))),
            value_transform: ValueTransform::None,
        }
    }

    #[test]
    fn valid_problem_passes() {
        simple_problem().validate().unwrap();
    }

    #[test]
    fn objective_must_not_use_disturbance() {
        let vars = Vars::new(1, 0, 1);
        let mut p = simple_problem();
        p.vars = vars;
        p.subsystems = vec![Subsystem::new(vec![Poly::var(vars, Var::W(0))])];
        p.state_set = SemiAlgebraicSet::whole_space();
        p.init_set = SemiAlgebraicSet::state_ball(vars, &[0.0], 1.0);
        p.dist_set = SemiAlgebraicSet::dist_box(vars, &[(-1.0, 1.0)]);
        p.objective = Objective::Single(Poly::var(vars, Var::W(0)));
        assert!(matches!(
            p.validate(),
            Err(ModelError::ForbiddenBlock { block: "w", .. })
        ));
    }

    #[test]
    fn discrete_dynamics_reject_time() {
        let vars = Vars::new(1, 0, 0);
        let mut p = simple_problem();
        p.vars = vars;
        p.horizon = Horizon::Steps(10);
        p.subsystems = vec![Subsystem::new(vec![Poly::var(vars, Var::T)])];
        p.state_set = SemiAlgebraicSet::whole_space();
        p.init_set = SemiAlgebraicSet::state_ball(vars, &[0.0], 1.0);
        p.objective = Objective::Single(Poly::var(vars, Var::X(0)));
        assert!(matches!(
            p.validate(),
            Err(ModelError::ForbiddenBlock { block: "t", .. })
        ));
    }

    #[test]
    fn zero_horizon_is_rejected() {
        let mut p = simple_problem();
        p.horizon = Horizon::Finite(0.0);
        assert!(matches!(p.validate(), Err(ModelError::BadHorizon(_))));
    }

    #[test]
    fn normalize_maps_time_to_unit_interval() {
        let p = simple_problem();
        let (scaled, norm) = p.normalize(None).unwrap();
        assert_eq!(scaled.horizon, Horizon::Finite(1.0));
        assert_eq!(norm.time_scale, 2.0);
        // Scaled field is T * f.
        let f0 = &scaled.subsystems[0].f[0];
        assert_eq!(f0, &Poly::var(p.vars, Var::X(1)).scale(2.0));
    }

    #[test]
    fn normalize_state_scaling_preserves_objective_values() {
        let p = simple_problem();
        let ranges = [(-2.0, 4.0), (-1.0, 1.0)];
        let (scaled, norm) = p.normalize(Some(&ranges)).unwrap();
        // Pick a point, map to scaled coordinates, compare objective values.
        let x = [1.5, -0.25];
        let xs = norm.x_to_scaled(&x);
        let orig = match &p.objective {
            Objective::Single(q) => q.eval(0.0, &x, &[], &[]),
            _ => unreachable!(),
        };
        let mapped = match &scaled.objective {
            Objective::Single(q) => q.eval(0.0, &xs, &[], &[]),
            _ => unreachable!(),
        };
        assert!((orig - mapped).abs() < 1e-12);
        assert_eq!(norm.x_from_scaled(&xs), x.to_vec());
    }

    #[test]
    fn normalized_flow_matches_rescaled_trajectory() {
        // dx/dt = -x on [0, 2] has x(T) = x0 exp(-2); the normalized system
        // dx/ds = -2x on [0, 1] must reproduce it at s = 1.
        let vars = Vars::new(1, 0, 0);
        let p = Problem {
            name: "decay".into(),
            vars,
            horizon: Horizon::Finite(2.0),
            subsystems: vec![Subsystem::new(vec![Poly::var(vars, Var::X(0)).scale(-1.0)])],
            state_set: SemiAlgebraicSet::whole_space(),
            init_set: SemiAlgebraicSet::state_ball(vars, &[1.0], 0.0),
            param_set: SemiAlgebraicSet::whole_space(),
            dist_set: SemiAlgebraicSet::whole_space(),
            objective: Objective::Single(Poly::var(vars, Var::X(0))),
            value_transform: ValueTransform::None,
        };
        let (scaled, _) = p.normalize(None).unwrap();
        let f = &scaled.subsystems[0].f[0];
        // Euler-integrate both on matching grids and compare endpoints.
        let mut x_orig = 1.0f64;
        let mut x_norm = 1.0f64;
        let n = 20000;
        for k in 0..n {
            let t = 2.0 * k as f64 / n as f64;
            let s = k as f64 / n as f64;
            x_orig += (2.0 / n as f64)
                * p.subsystems[0].f[0].eval(t, &[x_orig], &[], &[]);
            x_norm += (1.0 / n as f64) * f.eval(s, &[x_norm], &[], &[]);
        }
        assert!((x_orig - x_norm).abs() < 1e-6);
        assert!((x_orig - (-2.0f64).exp()).abs() < 1e-4);
    }
}
