use hte_core::blp::{blp_fit, Design, SeType};
use hte_core::contest::{simulate, SimConfig};
use hte_core::dml::{
    ate, audit_cluster_folds, audit_crossfit, crossfit_nuisances, orthogonal_scores, read_scores_csv,
    scores_csv, CrossFitConfig, LearnerConfig,
};
use hte_core::forest::ForestParams;
use hte_core::kernel_cate::{
    bandwidth_grid, cv_bandwidth, default_bandwidth_factors, kernel_cate, Kernel, KernelSpec,
};
use hte_core::stats::mean;

fn crossfit_cfg(n_features: usize, n_trees: usize, seed: u64) -> CrossFitConfig {
    let mut forest = ForestParams::defaults_for(n_features, seed);
    forest.n_trees = n_trees;
    CrossFitConfig::new(LearnerConfig { forest, tuning: None }, seed)
}

#[test]
fn confounded_contest_ate_recovered() {
    let sim = simulate(&SimConfig::darts_like(8000, 21)).unwrap();
    let data = &sim.dataset;
    let mut cfg = crossfit_cfg(data.x_columns().len(), 60, 5);
    cfg.cluster_folds = true;
    let fit = crossfit_nuisances(data, &cfg).unwrap();
    audit_crossfit(&fit).unwrap();
    audit_cluster_folds(&fit.fold_id, &data.cluster_ids()).unwrap();
    let scores = orthogonal_scores(data, &fit).unwrap();
    let est = ate(&scores, 0.9).unwrap();
    let truth = sim.true_ate();
    assert!((est.estimate - truth).abs() < 3.0 * est.std_error, "{est:?} vs {truth}");

    let y = data.y();
    let d = data.d();
    let arm = |a: u8| mean(&y.iter().zip(&d).filter(|(_, di)| **di == a).map(|(v, _)| *v).collect::<Vec<_>>());
    let naive = arm(1) - arm(0);
    assert!(naive - truth > 3.0 * est.std_error, "naive {naive} truth {truth}");

    // constant-only BLP is the ATE
    let blp = blp_fit(&scores, &Design::constant_only(data.n()), SeType::HeteroscedasticityRobust, None).unwrap();
    assert!((blp.coefficients[0] - est.estimate).abs() < 1e-12);
}

#[test]
fn scores_file_round_trips_exactly() {
    let sim = simulate(&SimConfig::darts_like(600, 2)).unwrap();
    let data = &sim.dataset;
    let fit = crossfit_nuisances(data, &crossfit_cfg(data.x_columns().len(), 10, 1)).unwrap();
    let scores = orthogonal_scores(data, &fit).unwrap();
    let text = scores_csv(&fit, &scores);
    let back = read_scores_csv(text.as_bytes()).unwrap();
    for (r, y) in back.iter().zip(&scores.y_star) {
        assert_eq!(r.y_star.to_bits(), y.to_bits());
    }
    assert!(text.starts_with("row,fold,mu0,mu1,p,y_star\n"));
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                let sim = simulate(&SimConfig::darts_like(1500, 8)).unwrap();
                let data = &sim.dataset;
                let fit = crossfit_nuisances(data, &crossfit_cfg(data.x_columns().len(), 20, 3)).unwrap();
                let scores = orthogonal_scores(data, &fit).unwrap();
                (sim.truth_csv(), scores_csv(&fit, &scores))
            })
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn kernel_curve_averages_to_the_ate() {
    let sim = simulate(&SimConfig::linear_effect(6000, 0.02, 0.12, 17)).unwrap();
    let data = &sim.dataset;
    let fit = crossfit_nuisances(data, &crossfit_cfg(data.x_columns().len(), 40, 2)).unwrap();
    let scores = orthogonal_scores(data, &fit).unwrap();
    let z = data.columns_matrix(&["x1"]).unwrap();
    let grid = bandwidth_grid(&z, &default_bandwidth_factors());
    let h = cv_bandwidth(&scores.y_star, &z, Kernel::Gaussian, &grid, 5).unwrap();
    let spec = KernelSpec::new(Kernel::Gaussian, h, 0.9).unwrap();
    // evaluate at every observed z
    let curve = kernel_cate(&scores.y_star, &z, &spec, &z_sorted(&z), 0.9).unwrap();
    let thetas: Vec<f64> = curve.thetas().into_iter().map(|t| t.unwrap()).collect();
    let est = ate(&scores, 0.9).unwrap();
    assert!((mean(&thetas) - est.estimate).abs() < 2.0 * est.std_error);

    let slope = blp_fit(
        &scores,
        &Design::from_dataset(data, &["x1"]).unwrap(),
        SeType::HeteroscedasticityRobust,
        None,
    )
    .unwrap();
    let se = slope.std_errors()[1];
    assert!((slope.coefficients[1] - 0.12).abs() < 2.5 * se, "{:?}", slope.coefficients);
}

/// Observed values in increasing order, duplicates removed.
fn z_sorted(z: &hte_core::Matrix) -> hte_core::Matrix {
    let mut v = z.column(0).to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    hte_core::Matrix::from_columns(vec![v]).unwrap()
}
