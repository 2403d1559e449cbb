use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use romfsm::burgers::{run_fom_burgers, BurgersConfig, Grid1D};
use romfsm::pod::{build_pod, build_pod_with, ric, PodBasis, PodOptions, SvdMethod};
use romfsm::snapshots::{GridMeta, SnapshotSet};

fn random_set(n: usize, m: usize, seed: u64) -> SnapshotSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = DMatrix::from_fn(n, m, |_, _| rng.random::<f64>() - 0.5);
    SnapshotSet::new(data, (1..=m).map(|k| k as f64 * 0.1).collect(), GridMeta::OneD(Grid1D::new(n, 1.0).unwrap())).unwrap()
}

fn centred(s: &SnapshotSet, b: &PodBasis) -> DMatrix<f64> {
    let mut d = s.data.clone();
    for mut c in d.column_iter_mut() {
        c -= &b.mean;
    }
    d
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn orthonormal_modes_and_eckart_young(seed in 0u64..10_000, n in 20usize..80, m in 3usize..20, frac in 0.1f64..0.9, snapshots in any::<bool>()) {
        let s = random_set(n, m, seed);
        let r = ((m - 1) as f64 * frac).ceil() as usize;
        let method = if snapshots { SvdMethod::Snapshots } else { SvdMethod::Direct };
        let b = build_pod_with(&s, r, PodOptions { method: Some(method), ..PodOptions::default() }).unwrap();
        let gram = b.modes.tr_mul(&b.modes) - DMatrix::<f64>::identity(r, r);
        prop_assert!(gram.amax() < 1e-10);
        let x = centred(&s, &b);
        let resid = &x - &b.modes * b.modes.tr_mul(&x);
        let tail: f64 = b.singular_values[r..].iter().map(|v| v * v).sum();
        prop_assert!((resid.norm_squared() - tail).abs() <= 1e-8 * x.norm_squared());
        prop_assert!(b.singular_values.windows(2).all(|w| w[0] >= w[1]));
        let ric_r = ric(&b, r).unwrap();
        prop_assert!((ric_r - (1.0 - tail / x.norm_squared())).abs() < 1e-10);
    }
}

#[test]
fn direct_and_snapshot_methods_span_the_same_space() {
    let s = random_set(60, 12, 3);
    let a = build_pod_with(&s, 5, PodOptions { method: Some(SvdMethod::Direct), ..PodOptions::default() }).unwrap();
    let b = build_pod_with(&s, 5, PodOptions { method: Some(SvdMethod::Snapshots), ..PodOptions::default() }).unwrap();
    let overlap = a.modes.tr_mul(&b.modes);
    for k in 0..5 {
        assert!((overlap[(k, k)].abs() - 1.0).abs() < 1e-9);
        assert!((a.singular_values[k] - b.singular_values[k]).abs() < 1e-9 * a.singular_values[0]);
    }
}

#[test]
fn burgers_basis_roundtrips_through_disk_and_truncates() {
    let grid = Grid1D::new(256, 1.0).unwrap();
    let cfg = BurgersConfig { t_final: 0.3, ..BurgersConfig::paper() };
    let fom = run_fom_burgers(&cfg, &grid).unwrap();
    let b = build_pod(&fom, 6).unwrap();
    assert!(ric(&b, 6).unwrap() > ric(&b, 2).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("basis.bin");
    b.write(&path).unwrap();
    assert_eq!(PodBasis::read(&path).unwrap(), b);
    let small = b.truncate(3).unwrap();
    let direct = build_pod(&fom, 3).unwrap();
    assert!((small.modes - direct.modes).amax() < 1e-12);
    assert!(b.truncate(7).is_err());
}
