//! End-to-end checks across modules: chain, Stein field, decomposition,
//! exchangeable pair and transport.

use lclt_core::chain::{read_trajectory, simulate, write_trajectory, ChainConfig, StartKind};
use lclt_core::decomposition::{compute_w_n, decompose};
use lclt_core::linalg::inv_sqrt_spd;
use lclt_core::linear::{w_n_from_innovations, LinearCaseModel};
use lclt_core::pair::{conditional_mean_check, d_delta_moments, draw_pairs};
use lclt_core::potential::{PotentialConfig, PotentialSpec};
use lclt_core::stats::norm2;
use lclt_core::stein::solve_exact;
use lclt_core::wasserstein::{noise_floor, w_to_gamma, SampleCloud};

#[test]
fn log_cosh_run_decomposes_exactly() {
    let spec = PotentialSpec::log_cosh(1.0, 0.5, 2).unwrap();
    let field = solve_exact(&spec).unwrap();
    let cfg = ChainConfig::new(0.05, 400, 2, 17).with_start(StartKind::Warmup);
    let run = simulate(&spec, &cfg).unwrap();
    let dec = decompose(&run, &field).unwrap();
    assert!(dec.residual_norm() < 1e-9, "{}", dec.residual_norm());
    let w = compute_w_n(&run, &field.pi_mean()).unwrap();
    assert_eq!(w, dec.w_n);
}

#[test]
fn linear_closed_form_matches_simulated_average() {
    let spec = PotentialConfig::Quadratic { a_diag: None, a_range: Some([0.5, 1.5]) }.build(Some(3)).unwrap();
    let cfg = ChainConfig::new(0.1, 300, 3, 5).with_start(StartKind::GaussianExact);
    let run = simulate(&spec, &cfg).unwrap();
    let model = LinearCaseModel::from_spec(&spec, 0.1, 300).unwrap();
    let a = w_n_from_innovations(&model, &run).unwrap();
    let b = compute_w_n(&run, &[0.0; 3]).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn pair_statistics_on_separable_potential() {
    let spec = PotentialSpec::log_cosh(1.0, 0.5, 1).unwrap();
    let field = solve_exact(&spec).unwrap();
    let sigma = field.sigma_exact().unwrap().unwrap();
    let s = inv_sqrt_spd(&sigma).unwrap();
    let run = simulate(&spec, &ChainConfig::new(0.05, 200, 1, 3).with_start(StartKind::Warmup)).unwrap();
    let cm = conditional_mean_check(&run, &field, &s).unwrap();
    assert!(cm.lambda_hat.is_some());
    let pairs = draw_pairs(&spec, &run, &field, &s, 64, 9).unwrap();
    assert!(pairs.iter().all(|p| (1..=200).contains(&p.index_i)));
    // W′ − W = δ, and δ = D exactly when the perturbation leaves later gradients unchanged
    for p in &pairs {
        let diff: Vec<f64> = p.w_prime.iter().zip(&p.w).zip(&p.delta).map(|((a, b), e)| a - b - e).collect();
        assert!(norm2(&diff) < 1e-12);
        let sr: Vec<f64> = s.mul_vec(&p.r_vec);
        let gap: Vec<f64> = p.d_vec.iter().zip(&p.delta).zip(&sr).map(|((d, e), r)| d - e - r).collect();
        assert!(norm2(&gap) < 1e-12);
    }
    let m = d_delta_moments(&pairs).unwrap();
    assert!(m.m2.mean > 0.0 && m.m2log.mean >= m.m2.mean);
}

#[test]
fn trajectory_dump_round_trips() {
    let spec = PotentialSpec::quadratic_diag(&[1.0, 2.0]).unwrap();
    let run = simulate(&spec, &ChainConfig::new(0.05, 50, 2, 1)).unwrap();
    let mut buf = Vec::new();
    write_trajectory(&run, &mut buf).unwrap();
    let dump = read_trajectory(buf.as_slice()).unwrap();
    assert_eq!(dump.states, run.states_flat());
}

#[test]
fn gaussian_cloud_sits_near_the_floor() {
    let floor = noise_floor(256, 2, 1, 4, 11).unwrap();
    let cloud = SampleCloud::gaussian(256, 2, 99).unwrap();
    let w = w_to_gamma(&cloud, 1, 100).unwrap();
    assert!((w - floor.mean).abs() < 6.0 * floor.stderr.max(0.01), "{w} vs {floor:?}");
}
