//! Fixtures shared by the criterion benchmarks.

use nestmc::{
    make_stream, problem1, problem2, NestedProblem, Problem1Spec, Problem2Spec, SampleBatch,
    Scenario,
};

pub fn problem1_batch(m: u32, seed: u64) -> (SampleBatch, Box<dyn NestedProblem>) {
    let prob = problem1(Problem1Spec { signals: 7, p: 0.7 }).expect("valid spec");
    let batch = prob.sample_joint(1 << m, &mut make_stream(seed));
    (batch, Box::new(prob))
}

pub fn problem2_batch(m: u32, seed: u64) -> (SampleBatch, Box<dyn NestedProblem>) {
    let prob = problem2(Problem2Spec::new(Scenario::EvSvG, 1000.0)).expect("valid spec");
    let batch = prob.sample_joint(1 << m, &mut make_stream(seed));
    (batch, Box::new(prob))
}
