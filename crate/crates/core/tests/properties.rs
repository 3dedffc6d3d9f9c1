use hankel_pgd::factor::{procrustes, project_feasible, ProjectionParams};
use hankel_pgd::hankel::{g_apply, gstar_factored};
use hankel_pgd::objective::eval_F;
use hankel_pgd::oracle::dense_gstar;
use hankel_pgd::rng::{complex_normal, derive_seed, seeded};
use hankel_pgd::signal::{synthesize, wraparound_dist};
use hankel_pgd::{FactorPair, HankelShape, ObjectiveContext, SampleMode, SampleSet, SpectralModel};
use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;

fn vector(n: usize, seed: u64) -> Vec<Complex64> {
    let mut rng = seeded(seed);
    (0..n).map(|_| complex_normal(&mut rng)).collect()
}

fn matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<Complex64> {
    DMatrix::from_vec(rows, cols, vector(rows * cols, seed))
}

fn unitary(r: usize, seed: u64) -> DMatrix<Complex64> {
    matrix(r, r, seed).qr().q()
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn dist(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}

/// Grid dims plus a valid pencil, 1D or 2D.
fn shapes() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    prop_oneof![
        (2usize..80).prop_flat_map(|n| (Just(vec![n]), (1..=n).prop_map(|p| vec![p]))),
        (2usize..9, 2usize..9).prop_flat_map(|(a, b)| (Just(vec![a, b]), (1..=a, 1..=b).prop_map(|(p, q)| vec![p, q]))),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lift_is_an_isometry((dims, pencil) in shapes(), seed in any::<u64>()) {
        let shape = HankelShape::new(&dims, Some(&pencil)).unwrap();
        let z = vector(shape.len(), seed);
        let lifted = g_apply(&shape, &z).unwrap().to_dense().unwrap();
        prop_assert!((lifted.norm() - norm(&z)).abs() <= 1e-12 * norm(&z));
        let back = dense_gstar(&shape, &lifted).unwrap();
        prop_assert!(dist(&back, &z) <= 1e-12 * norm(&z));
    }

    #[test]
    fn adjoint_pairs_with_forward((dims, pencil) in shapes(), r in 1usize..4, seed in any::<u64>()) {
        let shape = HankelShape::new(&dims, Some(&pencil)).unwrap();
        let z = vector(shape.len(), seed);
        let a = matrix(shape.rows(), r, seed ^ 1);
        let b = matrix(shape.cols(), r, seed ^ 2);
        let w = &a * b.adjoint();
        let gz = g_apply(&shape, &z).unwrap().to_dense().unwrap();
        let lhs = gz.dotc(&w);
        let gw = gstar_factored(&shape, &a, &b).unwrap();
        let rhs: Complex64 = z.iter().zip(&gw).map(|(x, y)| x.conj() * y).sum();
        prop_assert!((lhs - rhs).norm() <= 1e-12 * norm(&z) * w.norm());
    }

    #[test]
    fn projection_is_idempotent_and_feasible(rows in 2usize..20, r in 1usize..4, bound in 0.05f64..3.0, seed in any::<u64>()) {
        let z = FactorPair::new(matrix(rows, r, seed), matrix(rows + 3, r, seed ^ 7)).unwrap();
        let params = ProjectionParams::with_bound(bound, 1.0, 1.0, r, rows);
        let once = project_feasible(&z, &params);
        prop_assert!(once.max_row_norm() <= bound + 1e-12);
        let twice = project_feasible(&once, &params);
        prop_assert!((twice.stacked() - once.stacked()).norm() <= 1e-15 * (1.0 + once.norm()));
        // rows already inside the ball are left alone
        for (orig, kept) in z.u.row_iter().zip(once.u.row_iter()) {
            if orig.norm() <= bound {
                prop_assert_eq!(orig.into_owned(), kept.into_owned());
            }
        }
    }

    #[test]
    fn objective_is_invariant_on_orbits(n in 8usize..40, r in 1usize..4, lambda in 0.0f64..1.0, seed in any::<u64>()) {
        let shape = HankelShape::new(&[n], None).unwrap();
        let samples = SampleSet::draw(n, n / 2, SampleMode::WithoutReplacement, seed).unwrap();
        let y = samples.project(&vector(n, seed ^ 3)).unwrap();
        let ctx = ObjectiveContext::new(shape.clone(), samples, &y, lambda).unwrap();
        let z = FactorPair::new(matrix(shape.rows(), r, seed ^ 4), matrix(shape.cols(), r, seed ^ 5)).unwrap();
        let q = unitary(r, seed ^ 6);
        let zq = z.mul_right(&q);
        let (f0, f1) = (eval_F(&ctx, &z).unwrap(), eval_F(&ctx, &zq).unwrap());
        prop_assert!((f0 - f1).abs() <= 1e-10 * (1.0 + f0));
        let align = procrustes(&zq.stacked(), &z.stacked()).unwrap();
        prop_assert!(align.dist <= 1e-10 * z.norm());
    }

    #[test]
    fn synthesis_is_linear_in_components(
        f in proptest::collection::vec(0.0f64..1.0, 1..5),
        g in proptest::collection::vec(0.0f64..1.0, 1..5),
        n in 1usize..50,
        scale in -3.0f64..3.0,
    ) {
        let coeffs = |k: usize| (0..k).map(|i| Complex64::new(1.0 + i as f64, -0.5 * i as f64)).collect::<Vec<_>>();
        let a = SpectralModel::undamped(f.clone(), coeffs(f.len()));
        let b = SpectralModel::undamped(g.clone(), coeffs(g.len()));
        let xa = synthesize(&a, &[n]).unwrap();
        let xb = synthesize(&b, &[n]).unwrap();
        let sum: Vec<Complex64> = xa.iter().zip(&xb).map(|(u, v)| u + v).collect();
        let merged = synthesize(&a.merge(&b).unwrap(), &[n]).unwrap();
        prop_assert!(dist(&merged, &sum) <= 1e-12 * (1.0 + norm(&sum)));

        let mut scaled = a.clone();
        scaled.coeffs.iter_mut().for_each(|c| *c *= scale);
        let xs = synthesize(&scaled, &[n]).unwrap();
        let expect: Vec<Complex64> = xa.iter().map(|v| v * scale).collect();
        prop_assert!(dist(&xs, &expect) <= 1e-12 * (1.0 + norm(&expect)));
    }

    #[test]
    fn wraparound_distance_is_a_circle_metric(a in 0.0f64..1.0, b in 0.0f64..1.0, shift in 0.0f64..1.0) {
        let d = wraparound_dist(a, b);
        prop_assert!((0.0..=0.5).contains(&d));
        prop_assert_eq!(d, wraparound_dist(b, a));
        let (sa, sb) = ((a + shift).fract(), (b + shift).fract());
        prop_assert!((wraparound_dist(sa, sb) - d).abs() <= 1e-12);
    }

    #[test]
    fn draws_respect_their_mode(n in 1usize..200, frac in 0.0f64..1.0, seed in any::<u64>()) {
        let m = ((n as f64 * frac) as usize).max(1);
        let without = SampleSet::draw(n, m, SampleMode::WithoutReplacement, seed).unwrap();
        let mut idx = without.indices().to_vec();
        idx.sort_unstable();
        idx.dedup();
        prop_assert_eq!(idx.len(), m);
        let with = SampleSet::draw(n, m, SampleMode::WithReplacement, seed).unwrap();
        prop_assert_eq!(with.multiplicity().iter().map(|&c| c as usize).sum::<usize>(), m);
        prop_assert!(with.indices().iter().all(|&i| i < n));
        prop_assert_eq!(SampleSet::draw(n, m, SampleMode::WithReplacement, seed).unwrap(), with);
    }

    #[test]
    fn derived_seeds_are_stable_and_spread(master in any::<u64>(), a in 0u64..1000, b in 0u64..1000) {
        prop_assert_eq!(derive_seed(master, &[a, b]), derive_seed(master, &[a, b]));
        if a != b {
            prop_assert_ne!(derive_seed(master, &[a]), derive_seed(master, &[b]));
        }
    }
}
