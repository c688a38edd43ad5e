mod common;

use adev::hrpcf::{develop_rank2, ehrpcfd, sample_rank2_ensemble, TimeChannel};
use adev::regression::{oracle_for_samples, FiniteProcessSpec};
use adev::unitary::unitarity_defect;
use adev::{develop, epcfd, expm_anti_hermitian, hs_distance, sample_map_ensemble, AntiHermitian, CMat, Dataset};
use common::{expm_taylor, random_cond_path, random_dataset, random_tree_dataset};
use proptest::prelude::*;

fn cfg() -> ProptestConfig {
    ProptestConfig { cases: 64, ..ProptestConfig::default() }
}

fn uniform(d: &Dataset) -> FiniteProcessSpec {
    FiniteProcessSpec::new(d.samples().to_vec(), vec![1.0 / d.len() as f64; d.len()]).unwrap()
}

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn exponential_matches_taylor(m in 1usize..7, std in 0.05f64..3.0, seed in any::<u64>()) {
        let a = sample_map_ensemble(1, m, 1, std, seed).unwrap().maps()[0].generators()[0].clone();
        let e = expm_anti_hermitian(&a).unwrap();
        prop_assert!(hs_distance(e.matrix(), &expm_taylor(a.matrix())).unwrap() < 1e-9);
        prop_assert!(unitarity_defect(e.matrix()) < 1e-10);
    }

    #[test]
    fn developments_are_unitary(d in 1usize..4, m in 1usize..6, len in 2usize..9, std in 0.1f64..2.0, seed in any::<u64>()) {
        let map = sample_map_ensemble(d, m, 1, std, seed).unwrap().maps()[0].clone();
        let x = random_dataset(1, len, d, seed ^ 1);
        let u = develop(&map, &x.samples()[0]).unwrap();
        prop_assert!(unitarity_defect(u.matrix()) < 1e-10);
    }

    #[test]
    fn development_is_multiplicative(d in 1usize..4, m in 1usize..6, len in 3usize..9, cut in 1usize..8, seed in any::<u64>()) {
        let cut = 1 + cut % (len - 2);
        let map = sample_map_ensemble(d, m, 1, 0.7, seed).unwrap().maps()[0].clone();
        let p = random_dataset(1, len, d, seed ^ 2).samples()[0].clone();
        let whole = develop(&map, &p).unwrap().into_matrix();
        let split = develop(&map, &p.slice(0, cut).unwrap()).unwrap().into_matrix() * develop(&map, &p.slice(cut, len - 1).unwrap()).unwrap().into_matrix();
        prop_assert!(hs_distance(&whole, &split).unwrap() < 1e-10);
    }

    #[test]
    fn zero_map_develops_to_identity(d in 1usize..4, m in 1usize..5, len in 2usize..6, seed in any::<u64>()) {
        let map = adev::DevMap::new(vec![AntiHermitian::zeros(m); d]).unwrap();
        let p = random_dataset(1, len, d, seed).samples()[0].clone();
        prop_assert!(hs_distance(develop(&map, &p).unwrap().matrix(), &CMat::identity(m, m)).unwrap() < 1e-12);
    }

    #[test]
    fn epcfd_is_a_pseudometric(m in 1usize..5, k in 1usize..4, seed in any::<u64>()) {
        let ens = sample_map_ensemble(2, m, k, 0.8, seed).unwrap();
        let x = random_dataset(5, 4, 2, seed ^ 1);
        let y = random_dataset(4, 4, 2, seed ^ 2);
        let z = random_dataset(6, 4, 2, seed ^ 3);
        let dxy = epcfd(&ens, &x, &y).unwrap();
        prop_assert!(dxy >= 0.0);
        prop_assert!(epcfd(&ens, &x, &x).unwrap() < 1e-12);
        prop_assert!((dxy - epcfd(&ens, &y, &x).unwrap()).abs() < 1e-12);
        prop_assert!(epcfd(&ens, &x, &z).unwrap() <= dxy + epcfd(&ens, &y, &z).unwrap() + 1e-12);
        prop_assert!(dxy <= 2.0 * (m as f64).sqrt() + 1e-12);
    }

    #[test]
    fn rank2_developments_are_unitary(n in 1usize..4, m in 1usize..6, len in 2usize..6, seed in any::<u64>()) {
        let ens = sample_rank2_ensemble(n, m, 1, TimeChannel::Normalized, 0.6, seed).unwrap();
        let u = develop_rank2(&ens.maps()[0], &random_cond_path(n, len, seed ^ 4)).unwrap();
        prop_assert!(unitarity_defect(u.matrix()) < 1e-10);
    }

    #[test]
    fn ehrpcfd_is_a_bounded_pseudometric(n in 1usize..4, m in 1usize..6, k2 in 1usize..3, seed in any::<u64>()) {
        let m_ens = sample_map_ensemble(2, n, 1, 1.0, seed).unwrap();
        let m2 = sample_rank2_ensemble(n, m, k2, TimeChannel::Normalized, 1.5, seed ^ 5).unwrap();
        let cond = |d: &Dataset| -> Vec<Vec<adev::hrpcf::CondDevPath>> {
            let spec = uniform(d);
            m_ens.maps().iter().map(|mp| oracle_for_samples(&spec, mp, d).unwrap()).collect()
        };
        let sets: Vec<Dataset> = (0..3).map(|i| random_tree_dataset(6, 4, 1, seed ^ (10 + i)).time_augment()).collect();
        let c: Vec<_> = sets.iter().map(cond).collect();
        let d = |a: usize, b: usize| ehrpcfd(&m_ens, &m2, &c[a], &c[b]).unwrap();
        prop_assert!(d(0, 1) >= 0.0);
        prop_assert!(d(0, 0) < 1e-12);
        prop_assert!((d(0, 1) - d(1, 0)).abs() < 1e-12);
        prop_assert!(d(0, 2) <= d(0, 1) + d(1, 2) + 1e-12);
        prop_assert!(d(0, 1) <= 2.0 * (m as f64).sqrt() + 1e-9);
    }
}

