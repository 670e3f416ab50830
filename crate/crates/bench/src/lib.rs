//! Fixtures shared by the solver benchmarks.

use acopt_core::scenario::{Scenario, ScenarioConfig};
use acopt_core::{ControlField, ReducedProblem, StepScheme};

/// A keep-circle problem on an `n x n` grid with `steps` time steps.
pub fn keep_circle(n: usize, steps: usize, scheme: StepScheme) -> (ReducedProblem, ControlField) {
    let text = format!(
        "scenario = bench\nnx = {n}\nt_final = 0.01\nsteps = {steps}\nepsilon = 0.022736420441699334\n\
         nu_T = 1\nnu_d = 0\nnu_f = 0.01\ninitial = circle cx=0 cy=0 r=0.5\n"
    );
    let cfg = ScenarioConfig::parse(&text).expect("bench config parses");
    let sc = Scenario::build(&cfg).expect("bench scenario builds");
    let problem = sc.problem(scheme).expect("bench problem builds");
    let f = acopt_core::reduced::random_control(&problem, 7, 1.0);
    (problem, f)
}
