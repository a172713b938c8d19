//! Scratch trace driver (to be removed).

use peakbound::conic::{self, Backend, SolverOptions};
use peakbound::model::{Horizon, Objective, Problem, SemiAlgebraicSet, Subsystem, ValueTransform};
use peakbound::poly::{Poly, Var, Vars};
use peakbound::relaxation::Relaxation;

fn coupled_drift_problem() -> Problem {
    let vars = Vars { nx: 2, nth: 1, nw: 1 };
    let x1 = Poly::var(vars, Var::X(0));
    let x2 = Poly::var(vars, Var::X(1));
    let th = Poly::var(vars, Var::Th(0));
    let w = Poly::var(vars, Var::W(0));
    let f1 = x1
        .clone()
        .scale(-0.5)
        .add(&x2.clone().scale(-0.5))
        .add(&w.mul(&x2).scale(-1.0))
        .add(&Poly::constant(vars, 0.5));
    let f2 = x2.clone().scale(-0.5).add(&Poly::constant(vars, 1.0)).add(&th);
    let mut init = x1.clone().sub(&Poly::constant(vars, -1.0));
    init = init.clone().mul(&init).scale(-1.0);
    let mut i2 = x2.clone().sub(&Poly::constant(vars, -1.0));
    i2 = i2.clone().mul(&i2).scale(-1.0);
    let init_set =
        SemiAlgebraicSet::new(vec![init.add(&i2).add(&Poly::constant(vars, 0.0625))]);
    Problem {
        name: "coupled-drift".into(),
        vars,
        horizon: Horizon::Finite(1.0),
        subsystems: vec![Subsystem::new(vec![f1, f2])],
        state_set: SemiAlgebraicSet::state_box(vars, &[(-2.0, 2.0), (-2.0, 2.0)]),
        init_set,
        param_set: SemiAlgebraicSet::param_box(vars, &[(-0.1, 0.1)]),
        dist_set: SemiAlgebraicSet::dist_box(vars, &[(-0.1, 0.1)]),
        objective: Objective::Single(x2),
        value_transform: ValueTransform::None,
    }
}

fn main() {
    let problem = coupled_drift_problem();
    let relax = Relaxation::build(&problem, 2).unwrap();
    println!("{:?}", relax.summary());
    let opts = SolverOptions { verbose: true, ..SolverOptions::default() };
    let r = conic::solve(&relax.program, Backend::Embedded, &opts).unwrap();
    println!("embedded: {:?} obj {:+.6e} iters {}", r.status, r.objective, r.iterations);
    #[cfg(feature = "bridge-clarabel")]
    {
        let r2 = conic::solve(&relax.program, Backend::Clarabel, &SolverOptions::default()).unwrap();
        println!("clarabel: {:?} obj {:+.6e} iters {}", r2.status, r2.objective, r2.iterations);
    }
}
