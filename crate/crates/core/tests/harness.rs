use nestmc::harness::{monotone_decreasing_fit, mse_with_stderr, nested_mc_split};
use nestmc::{
    problem1_truth, run_experiment, Error, ExperimentConfig, InnerBudget, Method, Problem1Spec,
    Problem2Spec, ProblemSpec, Reference, Scenario,
};

fn p1_config(
    spec: Problem1Spec,
    methods: Vec<Method>,
    m_values: Vec<u32>,
    r: usize,
) -> ExperimentConfig {
    ExperimentConfig {
        problem: ProblemSpec::P1(spec),
        methods,
        m_values,
        r,
        master_seed: 42,
        reference: Reference::Analytic,
        threads: None,
    }
}

#[test]
fn identical_across_thread_counts() {
    let base = p1_config(
        Problem1Spec { signals: 3, p: 0.8 },
        vec![Method::SparseGrid, Method::Simple, Method::NestedMc],
        vec![4, 6, 8],
        12,
    );
    let one = run_experiment(&ExperimentConfig {
        threads: Some(1),
        ..base.clone()
    })
    .unwrap();
    let four = run_experiment(&ExperimentConfig {
        threads: Some(4),
        ..base.clone()
    })
    .unwrap();
    let global = run_experiment(&base).unwrap();
    assert_eq!(one.without_timing(), four.without_timing());
    assert_eq!(one.without_timing(), global.without_timing());
}

#[test]
fn cells_do_not_depend_on_the_rest_of_the_sweep() {
    let spec = Problem1Spec { signals: 3, p: 0.8 };
    let wide = run_experiment(&p1_config(
        spec,
        vec![Method::SparseGrid, Method::Simple],
        vec![5, 7],
        6,
    ))
    .unwrap();
    let narrow = run_experiment(&p1_config(spec, vec![Method::Simple], vec![7], 6)).unwrap();
    assert_eq!(
        wide.cell(Method::Simple, 7).unwrap().estimates,
        narrow.cell(Method::Simple, 7).unwrap().estimates
    );
}

#[test]
fn mse_matches_stored_estimates() {
    let spec = Problem1Spec {
        signals: 4,
        p: 0.75,
    };
    let report = run_experiment(&p1_config(
        spec,
        vec![Method::SparseGrid, Method::Simple],
        vec![6, 9],
        25,
    ))
    .unwrap();
    let truth = problem1_truth(spec).unwrap();
    assert_eq!(report.reference.value, truth);
    assert_eq!(report.reference.stderr, 0.0);
    assert_eq!(report.cells.len(), 4);
    for cell in &report.cells {
        assert_eq!(cell.estimates.len(), 25);
        assert_eq!(cell.seed_paths.len(), 25);
        assert_eq!(cell.samples_used, 1 << cell.m);
        let sq: Vec<f64> = cell.estimates.iter().map(|e| (e - truth).powi(2)).collect();
        let mse = sq.iter().sum::<f64>() / 25.0;
        let var = sq.iter().map(|s| (s - mse).powi(2)).sum::<f64>() / 24.0;
        assert!((cell.mse - mse).abs() <= 1e-15 * mse.max(1e-300));
        assert!((cell.mse_stderr - (var / 25.0).sqrt()).abs() <= 1e-12 * cell.mse_stderr);
    }
    let slope = report.slope(Method::SparseGrid).unwrap();
    assert!(slope.is_finite());
}

#[test]
fn uninformative_problem_converges() {
    let spec = Problem1Spec { signals: 1, p: 0.5 };
    let report = run_experiment(&p1_config(
        spec,
        vec![Method::SparseGrid],
        vec![6, 9, 12],
        100,
    ))
    .unwrap();
    assert_eq!(report.reference.value, 0.5);
    let mse: Vec<f64> = report.cells.iter().map(|c| c.mse).collect();
    assert!(mse[0] > mse[1] && mse[1] > mse[2], "{mse:?}");
    assert!(mse[2] < 0.01, "{mse:?}");
}

#[test]
fn single_replication() {
    assert_eq!(mse_with_stderr(&[0.3], 0.3), (0.0, f64::INFINITY));

    let spec = Problem1Spec { signals: 1, p: 0.5 };
    let cfg = ExperimentConfig {
        reference: Reference::NestedMc {
            outer: 10,
            inner: InnerBudget::EXACT,
        },
        ..p1_config(spec, vec![Method::SparseGrid], vec![0], 1)
    };
    let report = run_experiment(&cfg).unwrap();
    let cell = &report.cells[0];
    // uninformative signal: every exact posterior mean is (1/2, 1/2)
    assert_eq!(report.reference.value, 0.5);
    assert_eq!(report.reference.stderr, 0.0);
    // one joint draw gives max(theta, 1 - theta) = 1
    assert_eq!(cell.estimates, vec![1.0]);
    assert_eq!(cell.mse, 0.25);
    assert_eq!(cell.mse_stderr, f64::INFINITY);
    assert!(report.slope(Method::SparseGrid).is_none());
}

#[test]
fn nested_mc_cells_use_the_split_budget() {
    let spec = Problem1Spec { signals: 2, p: 0.9 };
    let report = run_experiment(&p1_config(spec, vec![Method::NestedMc], vec![5, 6], 3)).unwrap();
    for cell in &report.cells {
        let (outer, inner) = nested_mc_split(cell.m);
        assert_eq!(outer * inner, 1 << cell.m);
        assert_eq!(cell.samples_used, 1 << cell.m);
        assert_eq!(cell.f_evals, outer);
    }
}

#[test]
fn configuration_errors() {
    let p2 = ProblemSpec::P2(Problem2Spec::new(Scenario::EvSvG, 1000.0));
    let cfg = ExperimentConfig {
        problem: p2,
        ..p1_config(
            Problem1Spec { signals: 1, p: 0.6 },
            vec![Method::SparseGrid],
            vec![3],
            2,
        )
    };
    assert_eq!(run_experiment(&cfg).unwrap_err(), Error::MissingTruth);

    let mut bad = p1_config(
        Problem1Spec { signals: 1, p: 0.6 },
        vec![Method::SparseGrid],
        vec![3],
        0,
    );
    assert!(matches!(
        run_experiment(&bad),
        Err(Error::InvalidParameter(_))
    ));
    bad.r = 1;
    bad.m_values.clear();
    assert!(matches!(
        run_experiment(&bad),
        Err(Error::InvalidParameter(_))
    ));
}

#[test]
fn monotone_fit_pools_violations() {
    let fit = monotone_decreasing_fit(&[4.0, 5.0, 2.0, 1.0], &[1.0; 4]);
    assert_eq!(fit, vec![4.5, 4.5, 2.0, 1.0]);
    let weighted = monotone_decreasing_fit(&[1.0, 3.0], &[3.0, 1.0]);
    assert_eq!(weighted, vec![1.5, 1.5]);
}
