use diffsde_core::portfolio::{
    evaluate_policy, plugin_policy, train_emv, EmvHyper, MarketPathPool, MvProblem, PoolKind,
};
use diffsde_core::sde::{simulate_gbm, GbmSpec, TimeGrid};

const MU: f64 = 0.08;
const SIGMA: f64 = 0.2;

fn gbm_pool(n: usize, seed: u64) -> MarketPathPool {
    let spec = GbmSpec { drift: vec![MU], vol: vec![SIGMA], corr: vec![1.0], x0: vec![1.0] };
    let grid = TimeGrid::new(0.0, 1.0 / 252.0, 126).unwrap();
    MarketPathPool::from_path_set(PoolKind::Split, &simulate_gbm(&spec, &grid, n, seed).unwrap()).unwrap()
}

#[test]
fn plugin_multiplier_hand_value() {
    let p = plugin_policy(MU, SIGMA, &MvProblem::default()).unwrap();
    assert!((p.lagrange_w - 3.0539).abs() < 1e-3, "w = {}", p.lagrange_w);
    assert!((p.slope() - 1.5).abs() < 1e-12);
}

#[test]
fn plugin_policy_hits_target_in_mean() {
    let problem = MvProblem::default();
    let policy = plugin_policy(MU, SIGMA, &problem).unwrap();
    let report = evaluate_policy(&policy, &gbm_pool(100_000, 2024), &problem).unwrap();
    let se = (report.variance / report.n_episodes as f64).sqrt();
    assert!((report.mean / problem.target - 1.0).abs() < 0.01, "mean {}", report.mean);
    // Daily rebalancing adds a small discretization bias on top of the
    // sampling error; three standard errors still cover it.
    assert!((report.mean - problem.target).abs() < 3.0 * se, "mean {} se {se}", report.mean);
}

#[test]
fn multiplier_grows_with_target() {
    let mut last = f64::NEG_INFINITY;
    for z in [1.02, 1.05, 1.1, 1.2, 1.5] {
        let w = plugin_policy(MU, SIGMA, &MvProblem { target: z, ..MvProblem::default() }).unwrap().lagrange_w;
        assert!(w > last);
        last = w;
    }
}

#[test]
fn riskless_policy_compounds_the_rate() {
    let problem = MvProblem::default();
    let r = evaluate_policy(&|_t: f64, _x: f64| 0.0, &gbm_pool(50, 1), &problem).unwrap();
    let expected = (1.0 + 0.02 / 252.0f64).powi(126);
    assert!((r.mean - expected).abs() < 1e-12);
    assert_eq!(r.variance, 0.0);
    assert!(!r.sharpe_defined && r.sharpe.is_nan());
}

/// 4000 episodes on a ground-truth GBM pool: the learned slope should land
/// near `(mu - r) / sigma^2 = 1.5` and the policy should meet the target out
/// of sample. Seed and step sizes are fixed in advance.
#[test]
fn emv_learns_the_optimal_slope() {
    let problem = MvProblem::default();
    let hyper = EmvHyper { episodes: 4000, actor_lr: 1e-3, multiplier_lr: 0.5, multiplier_every: 10, ..EmvHyper::default() };
    let (policy, report) = train_emv(&gbm_pool(1000, 70), &problem, &hyper, 7).unwrap();
    let eval = evaluate_policy(&policy, &gbm_pool(10_000, 71), &problem).unwrap();
    println!("phi1 {:.4} w {:.4} aborted {} mean {:.4}", policy.phi1, policy.lagrange_w, report.aborted, eval.mean);
    assert_eq!(report.episodes, 4000);
    assert!((policy.phi1 / 1.5 - 1.0).abs() <= 0.3, "phi1 = {}", policy.phi1);
    assert!((eval.mean - problem.target).abs() <= 0.02, "mean terminal wealth {}", eval.mean);
}
