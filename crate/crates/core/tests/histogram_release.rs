use dpsan::histogram::{build_tree, sanitize_tree, uniform_allocation, Attribute, TreeSpec};
use dpsan::privacy::sample_laplace;
use dpsan::{PrivacyBudget, RandomSource};
use proptest::prelude::*;

const LEAVES: [u64; 8] = [50, 30, 40, 20, 25, 15, 12, 8];

fn spec() -> TreeSpec {
    TreeSpec::binary(&["age", "race", "gender"]).unwrap()
}

#[test]
fn root_variance_beats_flat_release() {
    let tree = build_tree(&LEAVES, &spec()).unwrap();
    let eps = 0.5;
    let budget = PrivacyBudget::per_dataset(eps).unwrap();
    let alloc = uniform_allocation(4);
    let mut rng = RandomSource::new(21, 0).rng();
    let reps = 20_000;
    let roots: Vec<f64> = (0..reps)
        .map(|_| sanitize_tree(&tree, budget, &alloc, &mut rng).unwrap().h().unwrap()[0])
        .collect();
    let flat: Vec<f64> = (0..reps)
        .map(|_| 200.0 + sample_laplace(4.0 / eps, &mut rng).unwrap())
        .collect();
    let var = |xs: &[f64]| {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
    };
    let (uh, fl) = (var(&roots), var(&flat));
    // flat variance is 2·(h/ε)² = 128
    assert!(uh < fl, "UH {uh} vs flat {fl}");
}

#[test]
fn root_mean_is_unbiased() {
    let tree = build_tree(&LEAVES, &spec()).unwrap();
    let budget = PrivacyBudget::per_dataset(0.5).unwrap();
    let alloc = uniform_allocation(4);
    let mut rng = RandomSource::new(22, 0).rng();
    let reps = 10_000;
    let roots: Vec<f64> = (0..reps)
        .map(|_| sanitize_tree(&tree, budget, &alloc, &mut rng).unwrap().h().unwrap()[0])
        .collect();
    let m = roots.iter().sum::<f64>() / reps as f64;
    let sd = (roots.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
    assert!((m - 200.0).abs() <= 3.0 * sd / (reps as f64).sqrt());
}

#[test]
fn budget_kind_is_enforced() {
    let tree = build_tree(&LEAVES, &spec()).unwrap();
    let mut rng = RandomSource::new(0, 0).rng();
    let wrong = PrivacyBudget::per_node(1.0).unwrap();
    assert!(sanitize_tree(&tree, wrong, &uniform_allocation(4), &mut rng).is_err());
}

fn arb_tree() -> impl Strategy<Value = (TreeSpec, Vec<u64>)> {
    prop::collection::vec(2usize..4, 1..4).prop_flat_map(|fanouts| {
        let spec = TreeSpec::new(
            fanouts
                .iter()
                .enumerate()
                .map(|(i, &k)| Attribute {
                    name: format!("a{i}"),
                    levels: (0..k).map(|l| l.to_string()).collect(),
                })
                .collect(),
        )
        .unwrap();
        let n = spec.leaf_count();
        (Just(spec), prop::collection::vec(0u64..500, n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn released_trees_are_consistent(
        (spec, leaves) in arb_tree(),
        eps in 0.05f64..5.0,
        seed in any::<u64>(),
    ) {
        let tree = build_tree(&leaves, &spec).unwrap();
        prop_assert_eq!(tree.root_true(), leaves.iter().sum::<u64>());
        let mut rng = RandomSource::new(seed, 0).rng();
        let alloc = spec.allocation_or_uniform();
        let out = sanitize_tree(&tree, PrivacyBudget::per_dataset(eps).unwrap(), &alloc, &mut rng).unwrap();
        let h = out.h().unwrap();
        for (id, node) in out.nodes().iter().enumerate() {
            if !node.children.is_empty() {
                let s: f64 = node.children.iter().map(|&c| h[c]).sum();
                prop_assert!((h[id] - s).abs() <= 1e-9 * h[id].abs().max(1.0));
            }
        }
        let rounded = out.postprocess_counts(dpsan::histogram::PostProcess::RoundedNonnegative).unwrap();
        prop_assert!(rounded.consistency_error().unwrap() == 0.0);
        prop_assert!(rounded.h().unwrap().iter().all(|&v| v >= 0.0 && v.fract() == 0.0));
    }
}
