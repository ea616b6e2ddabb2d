mod common;

use common::sparse_dataset;
use hdben::diagnostics::{l2_error, summarize};
use hdben::model::Hyperparameters;
use hdben::samplers::{fit_hdben, SamplerConfig, TauUpdateMode};
use hdben::simulation::{
    generate_dataset, run_grid, run_grid_with, run_replicate, table_layout, Method, Profile,
    ReplicateRecord, RunSettings, ScenarioResult, ScenarioSpec, Table,
};
use hdben::Error;
use nalgebra::dvector;
use proptest::prelude::*;

fn small_spec(methods: Vec<Method>) -> ScenarioSpec {
    ScenarioSpec {
        n: 40,
        d: 8,
        s_beta: 3,
        s_gamma: 2,
        replicates: 3,
        methods,
        ..ScenarioSpec::default()
    }
}

fn quick_settings() -> RunSettings {
    RunSettings::from_sampler(SamplerConfig {
        iterations: 200,
        burn_in: 50,
        ..SamplerConfig::default()
    })
}

fn without_timing(mut r: ReplicateRecord) -> ReplicateRecord {
    r.seconds = 0.0;
    r
}

#[test]
fn no_variance_support_gives_unit_noise() {
    let spec = ScenarioSpec {
        n: 20_000,
        d: 3,
        s_beta: 2,
        s_gamma: 0,
        ..ScenarioSpec::default()
    };
    let data = generate_dataset(&spec, 0).unwrap();
    let truth = data.truth().unwrap();
    assert!(truth.gamma0.iter().all(|&g| g == 0.0));
    assert!(truth.support_gamma.is_empty());
    let r = data.y() - data.x() * &truth.beta0;
    let var = r.norm_squared() / spec.n as f64;
    assert!((var - 1.0).abs() < 0.05, "{var}");
}

#[test]
fn full_support_draws_every_coefficient_in_range() {
    let spec = ScenarioSpec {
        s_beta: 8,
        ..small_spec(vec![])
    };
    let truth = generate_dataset(&spec, 1).unwrap().truth().unwrap().clone();
    assert!(truth.beta0.iter().all(|&b| (1.0..=2.0).contains(&b)));
    assert!(truth
        .gamma0
        .iter()
        .filter(|&&g| g != 0.0)
        .all(|&g| (0.5..=1.5).contains(&g)));
}

#[test]
fn residual_variance_tracks_log_linear_model() {
    let spec = ScenarioSpec {
        n: 100_000,
        d: 5,
        s_beta: 2,
        s_gamma: 2,
        ..ScenarioSpec::default()
    };
    let data = generate_dataset(&spec, 0).unwrap();
    let truth = data.truth().unwrap();
    let r = data.y() - data.x() * &truth.beta0;
    let eta = data.x() * &truth.gamma0;
    let mut order: Vec<usize> = (0..spec.n).collect();
    order.sort_by(|&a, &b| eta[a].partial_cmp(&eta[b]).unwrap());
    let buckets = 20;
    let size = spec.n / buckets;
    // Skip the two extreme buckets, whose widths span orders of magnitude.
    for k in 1..buckets - 1 {
        let idx = &order[k * size..(k + 1) * size];
        let mean_r = idx.iter().map(|&i| r[i]).sum::<f64>() / size as f64;
        let var = idx.iter().map(|&i| (r[i] - mean_r).powi(2)).sum::<f64>() / (size - 1) as f64;
        let expected = idx.iter().map(|&i| eta[i].exp()).sum::<f64>() / size as f64;
        assert!((var / expected - 1.0).abs() < 0.1, "bucket {k}: {var} vs {expected}");
    }
}

#[test]
fn ols_replicate_matches_direct_solve() {
    let spec = ScenarioSpec {
        n: 30,
        d: 30,
        s_beta: 5,
        s_gamma: 3,
        ..small_spec(vec![Method::Ols])
    };
    let data = generate_dataset(&spec, 0).unwrap();
    let direct = data.x().clone().lu().solve(data.y()).unwrap();
    let oracle = l2_error(&direct, &data.truth().unwrap().beta0).unwrap();
    let rec = run_replicate(&spec, 0, Method::Ols, &quick_settings()).unwrap();
    assert!((rec.l2_error - oracle).abs() < 1e-8 * oracle.max(1.0), "{} vs {oracle}", rec.l2_error);
}

#[test]
fn replicates_are_deterministic() {
    let spec = small_spec(Method::ALL.to_vec());
    let settings = quick_settings();
    for m in Method::ALL {
        let a = run_replicate(&spec, 1, m, &settings).unwrap();
        let b = run_replicate(&spec, 1, m, &settings).unwrap();
        assert_eq!(without_timing(a), without_timing(b), "{m}");
    }
}

/// Coverage of a single dataset is a random event (three 95% intervals miss
/// jointly about 14% of the time), so the check runs over ten datasets: each
/// coordinate must be covered at least 8 times (a miss count above 2 has
/// probability about 1% under nominal coverage) and every posterior mean must
/// sit near the truth. Runs with the reciprocal scale conditional; with the
/// literal one the chains disagree on this strongly heteroscedastic design.
#[test]
fn hdben_posterior_concentrates_on_illustrative_truth() {
    let truth = [2.0, 1.0, 0.5];
    let mut covered = [0usize; 3];
    for seed in 40..50u64 {
        let data = sparse_dataset(200, dvector![2.0, 1.0, 0.5], dvector![1.5, 0.5, 0.0], seed);
        let cfg = SamplerConfig {
            seed,
            tau_update_mode: TauUpdateMode::Reciprocal,
            ..SamplerConfig::default()
        };
        let draws = fit_hdben(&data, &Hyperparameters::default(), &cfg).unwrap();
        let s = summarize(&draws).unwrap();
        assert!(s.max_rhat() < 1.1, "seed {seed}: R-hat {}", s.max_rhat());
        for (j, b0) in truth.into_iter().enumerate() {
            covered[j] += usize::from(s.beta.q_lower[j] <= b0 && b0 <= s.beta.q_upper[j]);
            assert!((s.beta.mean[j] - b0).abs() < 0.3, "seed {seed}, coordinate {j}: mean {}", s.beta.mean[j]);
        }
    }
    assert!(covered.iter().all(|&c| c >= 8), "coverage counts {covered:?} out of 10");
}

fn stub_record(method: Method, replicate: usize, err: f64) -> ReplicateRecord {
    ReplicateRecord {
        method,
        replicate,
        beta_hat: vec![],
        gamma_hat: None,
        l2_error: err,
        tpr: 1.0,
        fpr: 0.0,
        exact: replicate == 0,
        seconds: 0.0,
        max_rhat: None,
        min_ess: None,
        mh_acceptance: None,
    }
}

#[test]
fn two_point_aggregation() {
    let spec = ScenarioSpec {
        replicates: 2,
        ..small_spec(vec![Method::Ols])
    };
    let res = run_grid_with(&[spec], |_, rep, m| Ok(stub_record(m, rep, [3.0, 4.0][rep]))).unwrap();
    let s = res[0].summary(Method::Ols).unwrap();
    assert_eq!(s.mean_error, 3.5);
    assert!((s.sd_error - 0.5f64.sqrt()).abs() < 1e-15);
    assert!((s.sd_error - 0.707).abs() < 1e-3);
    assert_eq!(s.exact_rate, 0.5);
    assert_eq!(s.cell(), "3.5000 ± 0.7071");
}

#[test]
fn empty_method_list_is_vacuous() {
    let res = run_grid(&[small_spec(vec![])], &quick_settings()).unwrap();
    assert!(res[0].summaries.is_empty());
    assert!(res[0].records.is_empty() && res[0].failures.is_empty());
}

#[test]
fn failures_are_recorded_not_propagated() {
    let spec = small_spec(vec![Method::Ols, Method::Lasso]);
    let res = run_grid_with(&[spec], |_, rep, m| {
        if m == Method::Lasso || rep == 2 {
            Err(Error::Contract("planted".into()))
        } else {
            Ok(stub_record(m, rep, 1.0))
        }
    })
    .unwrap();
    let r = &res[0];
    assert_eq!(r.summary(Method::Ols).unwrap().successes, 2);
    assert_eq!(r.summary(Method::Ols).unwrap().failures, 1);
    assert_eq!(r.summary(Method::Lasso).unwrap().cell(), "NA");
    assert_eq!(r.fully_failed(), vec![Method::Lasso]);
    assert_eq!(r.failures.len(), 4);
}

#[test]
fn invalid_spec_aborts_grid() {
    let spec = ScenarioSpec {
        s_beta: 9,
        ..small_spec(vec![])
    };
    assert!(run_grid(&[spec], &quick_settings()).is_err());
}

#[test]
fn aggregates_are_recomputable_from_records() {
    let spec = small_spec(vec![Method::Ols, Method::Lasso, Method::Enet]);
    let res = run_grid(&[spec], &quick_settings()).unwrap();
    let r = &res[0];
    for s in &r.summaries {
        let errs: Vec<f64> = r.records.iter().filter(|x| x.method == s.method).map(|x| x.l2_error).collect();
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        let sd = (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (errs.len() - 1) as f64).sqrt();
        assert!((s.mean_error - mean).abs() < 1e-12);
        assert!((s.sd_error - sd).abs() < 1e-12);
        assert!(s.sd_error >= 0.0);
        assert!((0.0..=1.0).contains(&s.exact_rate) && (0.0..=1.0).contains(&s.mean_tpr));
    }
    let rebuilt = ScenarioResult::aggregate(r.spec.clone(), r.records.clone(), r.failures.clone());
    assert_eq!(&rebuilt, r);
}

#[test]
fn grid_is_independent_of_method_order() {
    let settings = quick_settings();
    let a = run_grid(&[small_spec(vec![Method::Hdben, Method::Ols, Method::Lasso])], &settings).unwrap();
    let b = run_grid(&[small_spec(vec![Method::Lasso, Method::Hdben, Method::Ols])], &settings).unwrap();
    for m in [Method::Hdben, Method::Ols, Method::Lasso] {
        let ra: Vec<_> = a[0].records.iter().filter(|r| r.method == m).cloned().map(without_timing).collect();
        let rb: Vec<_> = b[0].records.iter().filter(|r| r.method == m).cloned().map(without_timing).collect();
        assert_eq!(ra, rb);
        assert_eq!(a[0].summary(m).unwrap().mean_error, b[0].summary(m).unwrap().mean_error);
    }
}

#[test]
fn table_layouts_follow_profiles() {
    let base = ScenarioSpec::default();
    let t2 = table_layout(Table::Table2, Profile::Desk, &base);
    assert_eq!(t2.column_labels, vec!["d = 100", "d = 250"]);
    assert!(t2.specs.iter().flatten().all(|s| s.n == 200 && s.s_beta == 10 && s.replicates == 5));
    let t2f = table_layout(Table::Table2, Profile::Full, &base);
    assert_eq!((t2f.specs.len(), t2f.specs[0].len()), (3, 4));
    assert!(t2f.specs.iter().flatten().all(|s| s.replicates == 20));
    let t3 = table_layout(Table::Table3, Profile::Desk, &base);
    let ns: Vec<usize> = t3.specs[0].iter().map(|s| s.n).collect();
    assert_eq!(ns, vec![50, 100, 150, 200]);
    assert!(t3.specs[0].iter().all(|s| s.d == 100));
    assert_eq!(table_layout(Table::Table3, Profile::Full, &base).specs.len(), 3);
}

#[test]
fn names_parse() {
    assert_eq!("HDBEN".parse::<Method>().unwrap(), Method::Hdben);
    assert_eq!(Method::Enet.display_name(), "EN");
    assert_eq!("full".parse::<Profile>().unwrap(), Profile::Full);
    assert_eq!("table3".parse::<Table>().unwrap(), Table::Table3);
    assert!("table4".parse::<Table>().is_err());
    assert_eq!(Profile::Full.sampler().iterations, 5_000);
    assert_eq!(Profile::Full.sampler().chains, 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn truth_supports_have_requested_sizes(
        d in 1usize..40,
        sb in 0usize..40,
        sg in 0usize..40,
        rep in 0usize..50,
        seed in any::<u64>(),
    ) {
        let spec = ScenarioSpec {
            n: 5,
            d,
            s_beta: sb.min(d),
            s_gamma: sg.min(d),
            seed,
            ..ScenarioSpec::default()
        };
        let data = generate_dataset(&spec, rep).unwrap();
        let t = data.truth().unwrap();
        prop_assert_eq!(t.s_beta(), spec.s_beta);
        prop_assert_eq!(t.s_gamma(), spec.s_gamma);
        let again = generate_dataset(&spec, rep).unwrap();
        prop_assert_eq!(data.y(), again.y());
    }

    #[test]
    fn stub_aggregation_is_self_consistent(errs in proptest::collection::vec(0.0f64..50.0, 1..8)) {
        let spec = ScenarioSpec { replicates: errs.len(), ..small_spec(vec![Method::Ben]) };
        let res = run_grid_with(&[spec], |_, rep, m| Ok(stub_record(m, rep, errs[rep]))).unwrap();
        let s = res[0].summary(Method::Ben).unwrap();
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        prop_assert!((s.mean_error - mean).abs() < 1e-12);
        prop_assert!(s.sd_error >= 0.0);
        let errs_back: Vec<f64> = res[0].records.iter().map(|r| r.l2_error).collect();
        prop_assert_eq!(errs_back, errs);
    }
}

#[test]
fn record_vectors_have_model_dimension() {
    let spec = small_spec(vec![Method::Hdben]);
    let rec = run_replicate(&spec, 0, Method::Hdben, &quick_settings()).unwrap();
    assert_eq!(rec.beta_hat.len(), 8);
    assert_eq!(rec.gamma_hat.as_ref().map(Vec::len), Some(8));
    assert!(rec.max_rhat.is_some() && rec.min_ess.is_some());
    let acc = rec.mh_acceptance.unwrap();
    assert!((0.0..=1.0).contains(&acc));
}
