//! Worked examples checked against hand arithmetic, and calibrated operator
//! norms checked against an independent Jacobi eigenvalue solver.

use trilevel::bounds::{elasticity_sweep, eps_hebb, eps_meta, eta1_max, total_bound};
use trilevel::cascade::{make_encoder, modulation, CoordinationTarget};
use trilevel::drift::tv_distance;
use trilevel::error::Error;
use trilevel::linalg::Matrix;
use trilevel::meta::{cascading_sensitivity, compatibility_check, max_meta_rate, MetaCascade};
use trilevel::sim::{run, Scenario, ScenarioKind};
use trilevel::{load_config, ContractId, SystemConfig};

fn cfg() -> SystemConfig {
    SystemConfig::default()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    ((a - b) / b).abs() <= tol
}

/// Largest eigenvalue of a symmetric matrix by cyclic Jacobi rotations.
#[allow(clippy::needless_range_loop)]
fn jacobi_max_eigenvalue(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).fold(f64::NEG_INFINITY, f64::max)
}

fn operator_norm(m: &Matrix) -> f64 {
    // Gram matrix on the smaller side.
    let (r, c) = (m.rows, m.cols);
    let at = |i: usize, j: usize| m.data[i * c + j];
    let gram: Vec<Vec<f64>> = if r <= c {
        (0..r).map(|i| (0..r).map(|j| (0..c).map(|k| at(i, k) * at(j, k)).sum()).collect()).collect()
    } else {
        (0..c).map(|i| (0..c).map(|j| (0..r).map(|k| at(k, i) * at(k, j)).sum()).collect()).collect()
    };
    jacobi_max_eigenvalue(gram).sqrt()
}

#[test]
fn jacobi_oracle_on_known_matrix() {
    let m = Matrix::from_vec(2, 2, vec![3.0, 0.0, 4.0, 5.0]).unwrap();
    // Singular values of [[3,0],[4,5]] are 3*sqrt(5) and sqrt(5).
    assert!(close(operator_norm(&m), 45f64.sqrt(), 1e-12));
    assert!(close(m.spectral_norm().unwrap(), 45f64.sqrt(), 1e-9));
}

#[test]
fn calibrated_maps_have_requested_norms() {
    for seed in [1, 7, 99] {
        let c = SystemConfig { seed, ..cfg() };
        let enc = make_encoder(&c).unwrap();
        assert!(close(operator_norm(&enc.matrix), c.lip_phi, 1e-8), "encoder seed {seed}");
        let cascade = MetaCascade::new(&c).unwrap();
        assert!(close(operator_norm(&cascade.map), c.lip_theta_to_h, 1e-8));
        let target = CoordinationTarget::new(&c).unwrap();
        assert!(close(operator_norm(&target.map), 1.0, 1e-8));
    }
}

#[test]
fn bound_examples() {
    let c = cfg();
    assert!(close(eps_hebb(&SystemConfig { gamma_disc: 0.9, ..cfg() }), 0.03, 1e-12));
    assert_eq!(eps_hebb(&SystemConfig { delta_np: 0.0, ..cfg() }), 0.0);
    assert!(close(eps_meta(&c), 6.0, 1e-12));
    assert!(close(eps_meta(&SystemConfig { eta3: 2e-5, ..cfg() }), 12.0, 1e-12));
    assert_eq!(eps_meta(&SystemConfig { eta3: 0.0, ..cfg() }), 0.0);
    let cap = eta1_max(&SystemConfig { eps_phi_star: 0.05, ..cfg() });
    assert!(close(cap, 4.7281e-5, 1e-4), "{cap}");
    let doubled = eta1_max(&SystemConfig { eps_phi_star: 0.05, tau2: 4.0, tau3: 40.0, ..cfg() });
    assert!(close(doubled, cap / 2.0, 1e-12));
    assert_eq!(cascading_sensitivity(&c), 30.0);

    let r = total_bound(&SystemConfig { n_agents: 30, ..cfg() }).unwrap();
    assert!(close(r.coord_share, 0.916, 0.003 / 0.916));
    let np = elasticity_sweep(&SystemConfig { n_agents: 30, ..cfg() }, "delta_np", &[2.0]).unwrap();
    assert!(close(np[0].eps_total, 141.1, 0.005));
    let nc = Scenario::new(ScenarioKind::NoClamp).configure(&cfg());
    assert!(close(total_bound(&nc).unwrap().phi_max, 1.0575, 1e-12));
}

#[test]
fn meta_examples() {
    let c = cfg();
    assert!(close(max_meta_rate(0.01, &c).unwrap(), 0.01, 1e-15));
    assert!(close(max_meta_rate(0.01, &SystemConfig { g_max: 2.0, ..cfg() }).unwrap(), 0.005, 1e-15));
    assert!(max_meta_rate(0.0, &c).is_err());

    let margins: Vec<_> = ContractId::ALL.iter().map(|&id| (id, 0.01)).collect();
    let v = compatibility_check(1e-5, &margins, &c).unwrap();
    assert!(v.pass && close(v.predicted_dpi, 3e-4, 1e-12));
    let mut one_zero = margins.clone();
    one_zero[2].1 = 0.0;
    assert!(!compatibility_check(1e-5, &one_zero, &c).unwrap().m1);
    let at: Vec<_> = ContractId::ALL.iter().map(|&id| (id, 1e-5)).collect();
    assert!(!compatibility_check(1e-5, &at, &c).unwrap().m3);
    assert!(compatibility_check(1e-5, &[], &c).is_err());
}

#[test]
fn drift_and_modulation_examples() {
    assert_eq!(tv_distance(&[0.5, 0.5], &[1.0, 0.0]).unwrap(), 0.5);
    assert_eq!(tv_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
    assert!(tv_distance(&[1.0], &[0.5, 0.5]).is_err());
    let c = cfg();
    let z = vec![0.0; c.embed_dim];
    let mut e = z.clone();
    e[0] = 1.0;
    assert!((modulation(&e, &z, &c) - 4.0 * 1f64.tanh()).abs() < 1e-12);
    assert!((modulation(&e, &z, &c) - 3.0463).abs() < 1e-4);
    assert_eq!(modulation(&z, &z, &c), 0.0);
}

#[test]
fn error_paths() {
    match load_config("n_agents = 10\neta1 = \"fast\"\n") {
        Err(Error::ConfigParse { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected parse error, got {other:?}"),
    }
    assert!(matches!(load_config("no_such_key = 1\n"), Err(Error::ConfigParse { .. })));
    let err = load_config("tau1 = 5.0\n").unwrap_err();
    assert!(err.to_string().contains("tau1 < tau2"), "{err}");

    let sc = Scenario::new(ScenarioKind::Baseline).with_duration(4.0);
    let c = SystemConfig { n_agents: 4, ..cfg() };
    let t = run(&sc, &c, 1).unwrap();
    match t.snapshot_at(3.0) {
        Err(Error::MissingSnapshot { nearest, .. }) => assert!(nearest.contains(&2.0) && nearest.contains(&4.0)),
        other => panic!("expected missing snapshot, got {other:?}"),
    }
    assert!(matches!(Scenario::by_name("nope"), Err(Error::UnknownScenario(_))));
    assert!(matches!(elasticity_sweep(&c, "gamma", &[2.0]), Err(Error::UnknownParameter(_))));
}
