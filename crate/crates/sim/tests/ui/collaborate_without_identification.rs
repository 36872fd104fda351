use hfl_core::phases::{Analytic, Simulation};
use hfl_core::Sequential;

fn skip(sim: Simulation<Analytic>) {
    let _ = sim.collaborate(&Sequential);
}

fn main() {
    let _ = skip;
}
