//! The ambient fixture models carry a full orthonormal frame whose leading
//! fields span a constraint subbundle. Restricting onto those fields must
//! reproduce the corresponding bundled reduced models numerically, at the
//! default parameters and away from them.

use algebroid::models;

fn overrides(pairs: &[(&str, f64)]) -> Vec<(String, f64)> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

#[test]
fn carriage_ambient_restricts_to_the_bundled_model() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/carriage_ambient.model");
    let cases: [(Vec<(String, f64)>, Vec<(String, f64)>); 2] = [
        (vec![], vec![]),
        (
            overrides(&[("m", 2.0), ("J", 1.5), ("Caxial", 0.7), ("a", 1.2), ("r", 0.8)]),
            overrides(&[("m", 2.0), ("J", 1.5), ("C", 0.7), ("a", 1.2), ("r", 0.8)]),
        ),
    ];
    for (ambient_over, reduced_over) in &cases {
        let ambient = models::load_with_overrides(path, ambient_over).unwrap();
        let reduced = models::load_with_overrides("carriage", reduced_over).unwrap();
        assert_eq!(ambient.algebroid.rank(), 5);

        let restricted = ambient.algebroid.restrict_constrained(2).unwrap();
        // every ambient structure function touches the complement, so the
        // constrained bundle has none
        assert!(restricted.structure_entries().is_empty());

        let leaf = reduced.function("leaf").unwrap();
        for q in ambient.algebroid.sample_points(25, 11).unwrap() {
            let ra = restricted.anchor_matrix(&q).unwrap();
            let rb = reduced.algebroid.anchor_matrix(&q).unwrap();
            assert_eq!(ra.shape(), (5, 2));
            let gap = (&ra - &rb).amax();
            assert!(gap < 1e-12, "anchor gap {gap} at {q:?}");

            // the wheel-angle combination is a first integral of the
            // constraint distribution: closed for both presentations
            for v in restricted
                .d_function(leaf, &q)
                .unwrap()
                .iter()
                .chain(reduced.algebroid.d_function(leaf, &q).unwrap().iter())
            {
                // finite-difference differential, so noise floor ~1e-10
                assert!(v.abs() < 1e-8, "leaf differential {v} at {q:?}");
            }
        }
    }
}

#[test]
fn snakeboard_ambient_restricts_to_the_bundled_model() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/snakeboard_ambient.model");
    let cases: [Vec<(String, f64)>; 2] = [
        vec![],
        overrides(&[("m", 1.5), ("r", 1.1), ("J0", 0.6), ("J1", 0.22)]),
    ];
    for over in &cases {
        let ambient = models::load_with_overrides(path, over).unwrap();
        let reduced = models::load_with_overrides("snakeboard_reduced", over).unwrap();
        assert_eq!(ambient.algebroid.rank(), 5);

        let restricted = ambient.algebroid.restrict_constrained(3).unwrap();
        assert_eq!(restricted.structure_entries().len(), 2);

        for q in ambient.algebroid.sample_points(25, 13).unwrap() {
            let ra = restricted.anchor_matrix(&q).unwrap();
            let rb = reduced.algebroid.anchor_matrix(&q).unwrap();
            assert_eq!(ra.shape(), (2, 3));
            let gap = (&ra - &rb).amax();
            assert!(gap < 1e-12, "anchor gap {gap} at {q:?}");

            let ba = restricted.binding_for(&q).unwrap();
            let bb = reduced.algebroid.binding_for(&q).unwrap();
            for alpha in 0..3 {
                for beta in (alpha + 1)..3 {
                    for gamma in 0..3 {
                        let va = restricted.structure_value(alpha, beta, gamma, &ba).unwrap();
                        let vb = reduced.algebroid.structure_value(alpha, beta, gamma, &bb).unwrap();
                        assert!(
                            (va - vb).abs() < 1e-12,
                            "C^{}_{{{} {}}}: {va} vs {vb} at {q:?}",
                            gamma + 1,
                            alpha + 1,
                            beta + 1
                        );
                    }
                }
            }
        }
    }
}
