use cmiknn_core::datagen::{sample_gaussian_chain, true_cmi_xy_given_z, GaussianChainConfig};
use cmiknn_core::estimator::{estimate_all, EstimatorKind, OracleTarget, RatioModel};
use cmiknn_core::resample::{isolated_knn_batch, joint_batch};
use cmiknn_core::rng::derive_seed;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let h = v.len() / 2;
    if v.len() % 2 == 0 {
        0.5 * (v[h - 1] + v[h])
    } else {
        v[h]
    }
}

#[test]
fn oracle_error_shrinks_with_test_size() {
    let chain = GaussianChainConfig::standard(3);
    let truth = true_cmi_xy_given_z(&chain).unwrap();
    let model = RatioModel::oracle(chain, OracleTarget::CmiXyGivenZ).unwrap();
    let kinds = [EstimatorKind::Dv, EstimatorKind::Nwj, EstimatorKind::Ldr];

    let mut medians = vec![Vec::new(); kinds.len()];
    for n in [1_000usize, 10_000, 100_000] {
        let mut errors = vec![Vec::new(); kinds.len()];
        for s in 0..10u64 {
            let ds = sample_gaussian_chain(&chain, n, derive_seed(5, &[n as u64, s])).unwrap();
            let joint = joint_batch(&ds, n, derive_seed(6, &[n as u64, s])).unwrap();
            let product = isolated_knn_batch(&ds, n / 2, 20, derive_seed(7, &[n as u64, s])).unwrap();
            let est = estimate_all(&model, &joint, &product).unwrap();
            for (e, &kind) in errors.iter_mut().zip(&kinds) {
                e.push((est.get(kind) - truth).abs());
            }
        }
        for (m, e) in medians.iter_mut().zip(errors) {
            m.push(median(e));
        }
    }
    for (kind, m) in kinds.iter().zip(&medians) {
        assert!(m.windows(2).all(|w| w[1] <= w[0]), "{kind}: {m:?}");
        assert!(m[2] < 0.1, "{kind}: {m:?}");
    }
}
