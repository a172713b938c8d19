//! Trajectory sampling under admissible uncertainty: random initial
//! conditions and parameters, piecewise-constant disturbances, uniform
//! switching among admissible subsystems. Used for empirical lower bounds on
//! the peak (soundness checks against certified upper bounds) and for
//! diagnostics.
//!
//! Sampling is deterministic: trajectory `i` under seed `s` uses stream `i`
//! of a counter-based generator seeded with `s`, so outputs are reproducible
//! byte for byte.

use crate::model::{Horizon, Objective, Problem, SemiAlgebraicSet};
use crate::poly::{Monomial, Poly};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("cannot derive a bounding box for the {0}; only products of intervals, balls and ellipsoids are recognized")]
    NoSampleBox(&'static str),
    #[error("rejection sampling exhausted {tries} tries for the {place}")]
    EmptySet { place: &'static str, tries: u32 },
    #[error("an unbounded-horizon problem needs an explicit simulation time")]
    MissingSimTime,
    #[error("simulation options: {0}")]
    BadOptions(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Options for a batch of sampled trajectories.
#[derive(Clone, Debug)]
pub struct SimOptions {
    pub trajectories: usize,
    pub seed: u64,
    /// Disturbance/switching hold interval; disturbance and active subsystem
    /// are redrawn at this rate. Defaults to `time / 200`.
    pub hold: Option<f64>,
    /// Integrator steps per hold interval (continuous time only).
    pub substeps: u32,
    /// Simulated window; defaults to the problem horizon, required when the
    /// horizon is unbounded.
    pub sim_time: Option<f64>,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { trajectories: 100, seed: 0, hold: None, substeps: 1, sim_time: None }
    }
}

/// One recorded state: time, state, active subsystem and held disturbance on
/// the step starting here.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: Vec<f64>,
    pub mode: usize,
    pub w: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub theta: Vec<f64>,
    /// States at step boundaries, including the initial point; the final
    /// sample's `mode`/`w` repeat the last step's values.
    pub samples: Vec<Sample>,
    /// True if the trajectory left the state set and was truncated there.
    pub exited: bool,
}

impl Trajectory {
    /// Largest objective value over all recorded states (the min over
    /// components for maximin objectives).
    pub fn peak(&self, objective: &Objective) -> f64 {
        self.samples
            .iter()
            .map(|s| objective_value(objective, &s.x))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Step weight, left-endpoint state pairs approximating the occupation
    /// measure of subsystem `k` (continuous: weight = step length; discrete:
    /// weight 1 per transition).
    pub fn occupation_steps(&self, k: usize) -> impl Iterator<Item = (f64, &Sample)> {
        self.samples
            .windows(2)
            .filter_map(move |pair| {
                let (a, b) = (&pair[0], &pair[1]);
                (a.mode == k).then(|| {
                    let w = if b.t > a.t { b.t - a.t } else { 1.0 };
                    (w, a)
                })
            })
    }
}

/// Objective value at a state: `p(x)`, or `min_i p_i(x)` for maximin.
/// Objective polynomials only use the state block, so the other blocks are
/// evaluated at zero.
pub fn objective_value(objective: &Objective, x: &[f64]) -> f64 {
    objective
        .components()
        .iter()
        .map(|p| {
            let v = p.vars();
            p.eval(0.0, x, &vec![0.0; v.nth], &vec![0.0; v.nw])
        })
        .fold(f64::INFINITY, f64::min)
}

/// Variable block a set constrains, used for box recognition.
#[derive(Clone, Copy)]
pub enum Block {
    X,
    Th,
    W,
}

/// Per-axis bounds implied by interval/ball/ellipsoid constraints of a set.
/// Returns `None` when some axis stays unbounded or a constraint has an
/// unrecognized shape that would be needed for a bound.
pub fn bounding_box(set: &SemiAlgebraicSet, block: Block, dim: usize) -> Option<Vec<(f64, f64)>> {
    if dim == 0 {
        return Some(Vec::new());
    }
    let exps = |m: &Monomial| -> Vec<u8> {
        match block {
            Block::X => m.x.clone(),
            Block::Th => m.th.clone(),
            Block::W => m.w.clone(),
        }
    };
    let mut lo = vec![f64::NEG_INFINITY; dim];
    let mut hi = vec![f64::INFINITY; dim];
    'next_constraint: for g in &set.constraints {
        // Recognize g = c0 + sum b_i v_i + sum a_i v_i^2 with no cross terms.
        let mut c0 = 0.0;
        let mut b = vec![0.0; dim];
        let mut a = vec![0.0; dim];
        for (m, c) in g.terms() {
            let e = exps(m);
            if e.iter().map(|&v| v as u32).sum::<u32>() != m.degree() {
                continue 'next_constraint; // touches another block
            }
            let nz: Vec<usize> = (0..dim).filter(|&i| e[i] > 0).collect();
            match nz.len() {
                0 => c0 += c,
                1 if e[nz[0]] == 1 => b[nz[0]] += c,
                1 if e[nz[0]] == 2 => a[nz[0]] += c,
                _ => continue 'next_constraint, // cross term or high degree
            }
        }
        if a.iter().any(|&ai| ai > 0.0) {
            continue; // unbounded directions, not box-like
        }
        if a.iter().all(|&ai| ai == 0.0) {
            // Halfspace: only single-variable ones give an axis bound.
            let nz: Vec<usize> = (0..dim).filter(|&i| b[i] != 0.0).collect();
            if let [i] = nz[..] {
                let bound = -c0 / b[i];
                if b[i] > 0.0 {
                    lo[i] = lo[i].max(bound);
                } else {
                    hi[i] = hi[i].min(bound);
                }
            }
            continue;
        }
        // Ellipsoid: complete the square on each quadratic axis.
        let mut radius = c0;
        let mut center = vec![0.0; dim];
        for i in 0..dim {
            if a[i] < 0.0 {
                center[i] = -b[i] / (2.0 * a[i]);
                radius -= a[i] * center[i] * center[i];
            } else if b[i] != 0.0 {
                continue 'next_constraint; // linear in one axis, quadratic in another
            }
        }
        if radius < 0.0 {
            radius = 0.0; // empty or degenerate set; keep the center point
        }
        for i in 0..dim {
            if a[i] < 0.0 {
                let ext = (radius / -a[i]).sqrt();
                lo[i] = lo[i].max(center[i] - ext);
                hi[i] = hi[i].min(center[i] + ext);
            }
        }
    }
    lo.iter()
        .zip(&hi)
        .map(|(&l, &h)| (l.is_finite() && h.is_finite() && l <= h).then_some((l, h)))
        .collect()
}

const REJECTION_TRIES: u32 = 100_000;

fn sample_in(
    set: &SemiAlgebraicSet,
    block: Block,
    vars: crate::poly::Vars,
    box_: &[(f64, f64)],
    rng: &mut ChaCha8Rng,
    place: &'static str,
) -> Result<Vec<f64>, SimError> {
    if box_.is_empty() {
        return Ok(Vec::new());
    }
    // Set polynomials carry full problem dims; inactive blocks evaluate at 0.
    let (zx, zth, zw) = (vec![0.0; vars.nx], vec![0.0; vars.nth], vec![0.0; vars.nw]);
    let dists: Vec<Uniform<f64>> = box_
        .iter()
        .map(|&(l, h)| if l < h { Uniform::new_inclusive(l, h) } else { Uniform::new_inclusive(l, l) })
        .collect();
    for _ in 0..REJECTION_TRIES {
        let pt: Vec<f64> = dists.iter().map(|d| d.sample(rng)).collect();
        let inside = match block {
            Block::X => set.contains(&pt, &zth, &zw, 1e-12),
            Block::Th => set.contains(&zx, &pt, &zw, 1e-12),
            Block::W => set.contains(&zx, &zth, &pt, 1e-12),
        };
        if inside {
            return Ok(pt);
        }
    }
    Err(SimError::EmptySet { place, tries: REJECTION_TRIES })
}

/// Contains-check tolerance when deciding subsystem admissibility and state
/// set exit; slightly loose so boundary states stay usable.
const MEMBERSHIP_TOL: f64 = 1e-9;

struct Stepper<'a> {
    problem: &'a Problem,
    /// Evaluates x' or x+ for subsystem k.
    k_fields: Vec<&'a [Poly]>,
    zth: Vec<f64>,
    zw: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn admissible_modes(&self, x: &[f64]) -> Vec<usize> {
        (0..self.k_fields.len())
            .filter(|&k| {
                self.problem.subsystems[k]
                    .valid_on
                    .contains(x, &self.zth, &self.zw, MEMBERSHIP_TOL)
            })
            .collect()
    }

    fn in_state_set(&self, x: &[f64]) -> bool {
        self.problem
            .state_set
            .contains(x, &self.zth, &self.zw, MEMBERSHIP_TOL)
    }

    fn rk4(&self, k: usize, t: f64, x: &[f64], th: &[f64], w: &[f64], h: f64) -> Vec<f64> {
        let f = |t: f64, x: &[f64]| -> Vec<f64> {
            self.k_fields[k].iter().map(|fi| fi.eval(t, x, th, w)).collect()
        };
        let add = |x: &[f64], k: &[f64], s: f64| -> Vec<f64> {
            x.iter().zip(k).map(|(&a, &b)| a + s * b).collect()
        };
        let k1 = f(t, x);
        let k2 = f(t + 0.5 * h, &add(x, &k1, 0.5 * h));
        let k3 = f(t + 0.5 * h, &add(x, &k2, 0.5 * h));
        let k4 = f(t + h, &add(x, &k3, h));
        x.iter()
            .enumerate()
            .map(|(i, &xi)| xi + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect()
    }
}

/// Samples a batch of trajectories. The problem must already be validated.
pub fn sample_trajectories(problem: &Problem, opts: &SimOptions) -> Result<Vec<Trajectory>, SimError> {
    let vars = problem.vars;
    let time = match (problem.horizon, opts.sim_time) {
        (Horizon::Finite(t), None) => t,
        (Horizon::Infinite, None) => return Err(SimError::MissingSimTime),
        (Horizon::Steps(n), None) => n as f64,
        (_, Some(t)) if t > 0.0 => t,
        (_, Some(t)) => return Err(SimError::BadOptions(format!("sim time {t} must be positive"))),
    };
    let discrete = problem.is_discrete();
    let steps_total;
    let hold;
    if discrete {
        steps_total = time.round() as usize;
        hold = 1.0;
    } else {
        hold = match opts.hold {
            Some(h) if h > 0.0 => h,
            Some(h) => return Err(SimError::BadOptions(format!("hold {h} must be positive"))),
            None => time / 200.0,
        };
        steps_total = (time / hold).round().max(1.0) as usize;
    }
    if opts.substeps == 0 {
        return Err(SimError::BadOptions("substeps must be at least 1".into()));
    }

    let init_box = bounding_box(&problem.init_set, Block::X, vars.nx)
        .ok_or(SimError::NoSampleBox("initial set"))?;
    let param_box = bounding_box(&problem.param_set, Block::Th, vars.nth)
        .ok_or(SimError::NoSampleBox("parameter set"))?;
    let dist_box = bounding_box(&problem.dist_set, Block::W, vars.nw)
        .ok_or(SimError::NoSampleBox("disturbance set"))?;

    let stepper = Stepper {
        problem,
        k_fields: problem.subsystems.iter().map(|s| s.f.as_slice()).collect(),
        zth: vec![0.0; vars.nth],
        zw: vec![0.0; vars.nw],
    };

    let mut out = Vec::with_capacity(opts.trajectories);
    for traj_idx in 0..opts.trajectories {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(traj_idx as u64);
        let x0 = sample_in(&problem.init_set, Block::X, vars, &init_box, &mut rng, "initial set")?;
        let theta = sample_in(&problem.param_set, Block::Th, vars, &param_box, &mut rng, "parameter set")?;

        let mut samples = Vec::with_capacity(steps_total + 1);
        let mut x = x0;
        let mut t = 0.0;
        let mut exited = false;
        let mut last_mode = 0usize;
        let mut last_w: Vec<f64> = vec![0.0; vars.nw];
        for step in 0..steps_total {
            let modes = stepper.admissible_modes(&x);
            let Some(&mode) = pick(&modes, &mut rng) else {
                exited = true;
                break;
            };
            let w = sample_in(&problem.dist_set, Block::W, vars, &dist_box, &mut rng, "disturbance set")?;
            samples.push(Sample { t, x: x.clone(), mode, w: w.clone() });
            last_mode = mode;
            last_w = w.clone();
            if discrete {
                x = stepper.k_fields[mode]
                    .iter()
                    .map(|fi| fi.eval(0.0, &x, &theta, &w))
                    .collect();
                t = (step + 1) as f64;
            } else {
                let h = hold / opts.substeps as f64;
                for sub in 0..opts.substeps {
                    let tl = t + sub as f64 * h;
                    x = stepper.rk4(mode, tl, &x, &theta, &w, h);
                    if !stepper.in_state_set(&x) {
                        exited = true;
                        break;
                    }
                    if opts.substeps > 1 && sub + 1 < opts.substeps {
                        samples.push(Sample {
                            t: tl + h,
                            x: x.clone(),
                            mode,
                            w: w.clone(),
                        });
                    }
                }
                t += hold;
            }
            if exited {
                break;
            }
            if discrete && !stepper.in_state_set(&x) {
                exited = true;
                break;
            }
        }
        if !exited {
            samples.push(Sample { t, x: x.clone(), mode: last_mode, w: last_w });
        }
        out.push(Trajectory { theta, samples, exited });
    }
    Ok(out)
}

fn pick<'a>(modes: &'a [usize], rng: &mut ChaCha8Rng) -> Option<&'a usize> {
    use rand::seq::SliceRandom;
    modes.choose(rng)
}

/// Largest objective value over a batch; an empirical lower bound on the
/// true peak.
pub fn empirical_peak(problem: &Problem, trajectories: &[Trajectory]) -> f64 {
    trajectories
        .iter()
        .map(|tr| tr.peak(&problem.objective))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Moments of the empirical measures one trajectory induces, stacked in the
/// relaxation's scalar layout: a unit Dirac at the start for the initial
/// measure, a unit Dirac at the final recorded state for the peak measure,
/// and per-subsystem occupation sums. Discrete occupation is one unit Dirac
/// per transition (exact). Continuous occupation freezes state and
/// disturbance at each step's left endpoint but integrates the time factor
/// of every monomial in closed form, so stationary trajectories have exact
/// moments and moving ones err at first order in the step.
pub fn empirical_scalars(relax: &crate::relaxation::Relaxation, traj: &Trajectory) -> Vec<f64> {
    let first = traj.samples.first().expect("empty trajectory");
    let last = traj.samples.last().expect("empty trajectory");
    let y_init = relax.init_basis.dirac(first.t, &first.x, &traj.theta, &first.w);
    let y_peak = relax.peak_basis.dirac(last.t, &last.x, &traj.theta, &last.w);
    let discrete = relax.problem.is_discrete();
    let y_occ: Vec<Vec<f64>> = relax
        .occ_bases
        .iter()
        .enumerate()
        .map(|(k, basis)| {
            if discrete {
                return basis.average(
                    traj.occupation_steps(k)
                        .map(|(w, s)| (w, s.t, &s.x[..], &traj.theta[..], &s.w[..])),
                );
            }
            let mut acc = vec![0.0; basis.len()];
            for pair in traj.samples.windows(2) {
                let (a, b) = (&pair[0], &pair[1]);
                if a.mode != k {
                    continue;
                }
                for (yi, m) in acc.iter_mut().zip(&basis.monomials) {
                    let e = m.t as i32 + 1;
                    let time_part = (b.t.powi(e) - a.t.powi(e)) / e as f64;
                    *yi += time_part * m.eval(1.0, &a.x, &traj.theta, &a.w);
                }
            }
            acc
        })
        .collect();
    relax.stack_scalars(&y_init, &y_peak, &y_occ)
}

/// Largest absolute violation of the degree-`degree` balance rows at one
/// trajectory's empirical moments. Discrete sums telescope exactly, so the
/// residual sits at rounding level; continuous left-endpoint quadrature is
/// first order in the recording step, which step-halving tests exploit.
pub fn liouville_residual(
    problem: &Problem,
    traj: &Trajectory,
    degree: u32,
) -> Result<f64, crate::relaxation::RelaxError> {
    let relax = crate::relaxation::Relaxation::build(problem, degree)?;
    Ok(relax.balance_residual(&empirical_scalars(&relax, traj)))
}

/// Writes trajectories as CSV: one row per recorded state, LF line endings.
/// Identical inputs produce identical bytes.
pub fn write_csv<W: Write>(
    problem: &Problem,
    trajectories: &[Trajectory],
    mut out: W,
) -> Result<(), SimError> {
    let vars = problem.vars;
    let mut header = String::from("traj,t,mode");
    for i in 0..vars.nx {
        header.push_str(&format!(",x{}", i + 1));
    }
    for i in 0..vars.nth {
        header.push_str(&format!(",th{}", i + 1));
    }
    for i in 0..vars.nw {
        header.push_str(&format!(",w{}", i + 1));
    }
    header.push_str(",value\n");
    out.write_all(header.as_bytes())?;
    for (idx, tr) in trajectories.iter().enumerate() {
        for s in &tr.samples {
            let mut row = format!("{},{},{}", idx, s.t, s.mode);
            for v in &s.x {
                row.push_str(&format!(",{v}"));
            }
            for v in &tr.theta {
                row.push_str(&format!(",{v}"));
            }
            for v in &s.w {
                row.push_str(&format!(",{v}"));
            }
            row.push_str(&format!(",{}\n", objective_value(&problem.objective, &s.x)));
            out.write_all(row.as_bytes())?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Horizon, Objective, Problem, SemiAlgebraicSet, Subsystem, ValueTransform};
    use crate::poly::{Var, Vars};

    fn problem_1d(f: Poly, horizon: Horizon, x0: f64) -> Problem {
        let vars = f.vars();
        Problem {
            name: "test".into(),
            vars,
            horizon,
            subsystems: vec![Subsystem::new(vec![f])],
            state_set: SemiAlgebraicSet::state_box(vars, &[(-10.0, 10.0)]),
            init_set: SemiAlgebraicSet::state_ball(vars, &[x0], 0.0),
            param_set: SemiAlgebraicSet::whole_space(),
            dist_set: SemiAlgebraicSet::whole_space(),
            objective: Objective::Single(Poly::var(vars, Var::X(0))),
            value_transform: ValueTransform::None,
        }
    }

    #[test]
    fn constant_field_integrates_exactly() {
        // x' = 1 from 0 on [0, 1]: endpoint 1, occupation moment of x near 1/2.
        let vars = Vars::new(1, 0, 0);
        let p = problem_1d(Poly::constant(vars, 1.0), Horizon::Finite(1.0), 0.0);
        let opts = SimOptions { trajectories: 1, seed: 7, ..Default::default() };
        let trs = sample_trajectories(&p, &opts).unwrap();
        let tr = &trs[0];
        assert!(!tr.exited);
        let last = tr.samples.last().unwrap();
        assert!((last.t - 1.0).abs() < 1e-12);
        assert!((last.x[0] - 1.0).abs() < 1e-12);
        // Left-endpoint quadrature of the occupation moment <x, mu>.
        let y_x: f64 = tr
            .occupation_steps(0)
            .map(|(w, s)| w * s.x[0])
            .sum();
        let h = 1.0 / 200.0;
        assert!((y_x - 0.5).abs() <= h, "y_x = {y_x}");
        assert!((empirical_peak(&p, &trs) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rk4_matches_exponential_decay() {
        let vars = Vars::new(1, 0, 0);
        let f = Poly::var(vars, Var::X(0)).scale(-1.0);
        let p = problem_1d(f, Horizon::Finite(1.0), 1.0);
        let opts = SimOptions { trajectories: 1, seed: 0, ..Default::default() };
        let trs = sample_trajectories(&p, &opts).unwrap();
        let end = trs[0].samples.last().unwrap().x[0];
        assert!((end - (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn trajectory_truncates_on_state_set_exit() {
        let vars = Vars::new(1, 0, 0);
        let mut p = problem_1d(Poly::constant(vars, 1.0), Horizon::Finite(1.0), 0.9);
        p.state_set = SemiAlgebraicSet::state_box(vars, &[(-1.0, 1.0)]);
        let opts = SimOptions { trajectories: 1, seed: 0, ..Default::default() };
        let trs = sample_trajectories(&p, &opts).unwrap();
        assert!(trs[0].exited);
        let peak = empirical_peak(&p, &trs);
        assert!(peak <= 1.0 + 1e-9 && peak >= 0.9);
    }

    #[test]
    fn switching_respects_validity_regions() {
        // Mode 0 valid on x <= 0 pushes right; mode 1 valid on x >= 0 pushes
        // right too. Started at -1 only mode 0 is admissible until x crosses 0.
        let vars = Vars::new(1, 0, 0);
        let one = Poly::constant(vars, 1.0);
        let x = Poly::var(vars, Var::X(0));
        let mut p = problem_1d(one.clone(), Horizon::Finite(2.0), -1.0);
        p.subsystems = vec![
            Subsystem::with_region(vec![one.clone()], SemiAlgebraicSet::new(vec![x.scale(-1.0)])),
            Subsystem::with_region(vec![one.scale(2.0)], SemiAlgebraicSet::new(vec![x.clone()])),
        ];
        let opts = SimOptions { trajectories: 3, seed: 11, ..Default::default() };
        let trs = sample_trajectories(&p, &opts).unwrap();
        for tr in &trs {
            for s in &tr.samples {
                if s.x[0] < -1e-6 {
                    assert_eq!(s.mode, 0);
                } else if s.x[0] > 1e-6 {
                    assert_eq!(s.mode, 1);
                }
            }
        }
    }

    #[test]
    fn discrete_steps_count_and_occupation_weights() {
        let vars = Vars::new(1, 0, 0);
        let f = Poly::var(vars, Var::X(0)).scale(0.5);
        let p = problem_1d(f, Horizon::Steps(10), 1.0);
        let opts = SimOptions { trajectories: 1, seed: 0, ..Default::default() };
        let trs = sample_trajectories(&p, &opts).unwrap();
        let tr = &trs[0];
        assert_eq!(tr.samples.len(), 11);
        let mass: f64 = tr.occupation_steps(0).map(|(w, _)| w).sum();
        assert_eq!(mass, 10.0);
        assert!((tr.samples[10].x[0] - 0.5f64.powi(10)).abs() < 1e-12);
    }

    #[test]
    fn same_seed_reproduces_csv_bytes() {
        let vars = Vars::new(1, 0, 1);
        let f = Poly::var(vars, Var::W(0));
        let mut p = problem_1d(f, Horizon::Finite(1.0), 0.0);
        p.init_set = SemiAlgebraicSet::state_ball(vars, &[0.0], 0.5);
        p.dist_set = SemiAlgebraicSet::dist_box(vars, &[(-1.0, 1.0)]);
        let opts = SimOptions { trajectories: 5, seed: 42, ..Default::default() };
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_csv(&p, &sample_trajectories(&p, &opts).unwrap(), &mut a).unwrap();
        write_csv(&p, &sample_trajectories(&p, &opts).unwrap(), &mut b).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b);
        assert!(a.starts_with(b"traj,t,mode,x1,w1,value\n"));
    }

    #[test]
    fn bounding_box_recognizes_balls_and_boxes() {
        let vars = Vars::new(2, 1, 0);
        let ball = SemiAlgebraicSet::state_ball(vars, &[1.0, -1.0], 0.5);
        let bx = bounding_box(&ball, Block::X, 2).unwrap();
        assert!((bx[0].0 - 0.5).abs() < 1e-12 && (bx[0].1 - 1.5).abs() < 1e-12);
        assert!((bx[1].0 + 1.5).abs() < 1e-12 && (bx[1].1 + 0.5).abs() < 1e-12);

        let pbox = SemiAlgebraicSet::param_box(vars, &[(-0.1, 0.3)]);
        let bt = bounding_box(&pbox, Block::Th, 1).unwrap();
        assert!((bt[0].0 + 0.1).abs() < 1e-12 && (bt[0].1 - 0.3).abs() < 1e-12);

        // Halfspace alone cannot bound an axis.
        let half = SemiAlgebraicSet::new(vec![Poly::var(vars, Var::X(0))]);
        assert!(bounding_box(&half, Block::X, 2).is_none());
    }

    #[test]
    fn stationary_field_has_zero_balance_residual() {
        let vars = Vars::new(1, 0, 0);
        let p = problem_1d(Poly::zero(vars), Horizon::Finite(1.0), 0.3);
        let opts = SimOptions { trajectories: 1, seed: 0, ..Default::default() };
        let trs = sample_trajectories(&p, &opts).unwrap();
        let res = liouville_residual(&p, &trs[0], 2).unwrap();
        assert!(res <= 1e-12, "residual {res}");
    }

    #[test]
    fn discrete_balance_residual_telescopes_to_rounding() {
        let vars = Vars::new(1, 0, 0);
        let f = Poly::var(vars, Var::X(0)).scale(0.5);
        let p = problem_1d(f, Horizon::Steps(10), 1.0);
        let opts = SimOptions { trajectories: 1, seed: 0, ..Default::default() };
        let trs = sample_trajectories(&p, &opts).unwrap();
        let res = liouville_residual(&p, &trs[0], 3).unwrap();
        assert!(res <= 1e-10, "residual {res}");
    }

    #[test]
    fn continuous_balance_residual_is_first_order_in_step() {
        let vars = Vars::new(1, 0, 0);
        let f = Poly::var(vars, Var::X(0)).scale(-1.0);
        let p = problem_1d(f, Horizon::Finite(1.0), 1.0);
        let res = |substeps: u32| -> f64 {
            let opts = SimOptions { trajectories: 1, seed: 0, substeps, ..Default::default() };
            let trs = sample_trajectories(&p, &opts).unwrap();
            liouville_residual(&p, &trs[0], 2).unwrap()
        };
        let (r1, r2) = (res(1), res(2));
        assert!(r1 / r2 >= 1.8, "r1 = {r1}, r2 = {r2}");
        assert!(r1 < 0.05, "coarse residual should already be small, got {r1}");
    }

    #[test]
    fn substeps_refine_quadrature() {
        // Halving the step roughly halves the left-endpoint quadrature error
        // for <x, mu> under x' = 1.
        let vars = Vars::new(1, 0, 0);
        let p = problem_1d(Poly::constant(vars, 1.0), Horizon::Finite(1.0), 0.0);
        let err = |substeps: u32| -> f64 {
            let opts = SimOptions { trajectories: 1, seed: 0, substeps, ..Default::default() };
            let trs = sample_trajectories(&p, &opts).unwrap();
            let y: f64 = trs[0].occupation_steps(0).map(|(w, s)| w * s.x[0]).sum();
            (y - 0.5).abs()
        };
        let (e1, e2) = (err(1), err(2));
        assert!(e1 / e2 > 1.8, "e1 = {e1}, e2 = {e2}");
    }
}
