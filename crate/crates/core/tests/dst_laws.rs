use evifuse::dst::{ContourFunction, Frame, MassFunction, ReliabilityVector, SimpleMassFunction, Subset};
use evifuse::fusion::{fuse, ReliabilityMatrix};
use evifuse::oracle;
use proptest::prelude::*;

const TOL: f64 = 1e-9;

fn normalize(v: &[f64]) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

/// General mass function on a frame of `k` classes.
fn mass(k: usize) -> impl Strategy<Value = MassFunction> {
    let n = (1usize << k) - 1;
    (prop::collection::vec(prop::bool::weighted(0.4), n), prop::collection::vec(0.01f64..1.0, n)).prop_map(
        move |(keep, w)| {
            let frame = Frame::numbered(k).unwrap();
            let mut entries: Vec<(Subset, f64)> =
                (0..n).filter(|&i| keep[i]).map(|i| (Subset(i as u32 + 1), w[i])).collect();
            if entries.is_empty() {
                entries.push((frame.full(), 1.0));
            }
            let total: f64 = entries.iter().map(|e| e.1).sum();
            MassFunction::new(&frame, entries.into_iter().map(|(a, m)| (a, m / total))).unwrap()
        },
    )
}

fn simple(k: usize) -> impl Strategy<Value = SimpleMassFunction> {
    prop::collection::vec(0.001f64..1.0, k + 1).prop_map(move |raw| {
        let mut v = normalize(&raw);
        let theta = v.pop().unwrap();
        SimpleMassFunction::new(&Frame::numbered(k).unwrap(), v, theta).unwrap()
    })
}

fn betas(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..=1.0, k)
}

fn dense_diff(a: &MassFunction, b: &MassFunction) -> f64 {
    oracle::max_abs_diff(&oracle::dense(a), &oracle::dense(b))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn combination_matches_reference_and_commutes((a, b) in (2usize..=4).prop_flat_map(|k| (mass(k), mass(k)))) {
        match (a.dempster_combine(&b), oracle::combine(&oracle::dense(&a), &oracle::dense(&b))) {
            (Ok((ab, kappa)), Some((reference, rk))) => {
                prop_assert!(oracle::max_abs_diff(&oracle::dense(&ab), &reference) <= TOL);
                prop_assert!((kappa - rk).abs() <= TOL);
                let (ba, _) = b.dempster_combine(&a).unwrap();
                prop_assert!(dense_diff(&ab, &ba) <= TOL);
            }
            (Err(_), None) => {}
            (x, y) => prop_assert!(false, "production {:?} vs reference {:?}", x.is_ok(), y.is_some()),
        }
    }

    #[test]
    fn combination_is_associative(a in mass(3), b in mass(3), c in mass(3)) {
        let left = a.dempster_combine(&b).and_then(|(ab, _)| ab.dempster_combine(&c));
        let right = b.dempster_combine(&c).and_then(|(bc, _)| a.dempster_combine(&bc));
        if let (Ok((l, _)), Ok((r, _))) = (left, right) {
            prop_assert!(dense_diff(&l, &r) <= 1e-9);
        }
    }

    #[test]
    fn vacuous_is_neutral(m in mass(4)) {
        let (out, kappa) = m.dempster_combine(&MassFunction::vacuous(m.frame()).unwrap()).unwrap();
        prop_assert_eq!(kappa, 0.0);
        prop_assert!(dense_diff(&out, &m) <= TOL);
    }

    #[test]
    fn belief_plausibility_match_reference(m in mass(4), a in 1u32..16) {
        let d = oracle::dense(&m);
        prop_assert!((m.belief(Subset(a)).unwrap() - oracle::belief(&d, a as usize)).abs() <= TOL);
        prop_assert!((m.plausibility(Subset(a)).unwrap() - oracle::plausibility(&d, a as usize)).abs() <= TOL);
        prop_assert!(m.belief(Subset(a)).unwrap() <= m.plausibility(Subset(a)).unwrap() + TOL);
    }

    #[test]
    fn simple_family_is_closed_and_contours_multiply(a in simple(4), b in simple(4)) {
        let (ab, kappa) = a.dempster_combine(&b).unwrap();
        let general = a.to_mass_function().unwrap().dempster_combine(&b.to_mass_function().unwrap()).unwrap().0;
        prop_assert!(dense_diff(&ab.to_mass_function().unwrap(), &general) <= TOL);
        let shortcut = a.contour().combine(&b.contour(), kappa).unwrap();
        prop_assert!(oracle::max_abs_diff(ab.contour().values(), shortcut.values()) <= TOL);
        // Normalizing the plain product gives the same decision distribution.
        let prod: Vec<f64> = a.contour().values().iter().zip(b.contour().values()).map(|(x, y)| x * y).collect();
        prop_assert!(oracle::max_abs_diff(&normalize(&prod), &ab.contour().to_probability().unwrap()) <= TOL);
    }

    #[test]
    fn contextual_discount_contour_form(m in mass(3), beta in betas(3)) {
        let frame = m.frame().clone();
        let rv = ReliabilityVector::new(&frame, beta.clone()).unwrap();
        let d = m.contextual_discount(&rv).unwrap();
        prop_assert!(d.validate().is_ok());
        let via = m.contour().contextual_discount(&rv).unwrap();
        prop_assert!(oracle::max_abs_diff(d.contour().values(), via.values()) <= TOL);
        prop_assert!(oracle::max_abs_diff(&oracle::dense(&d), &oracle::contextual_discount(&oracle::dense(&m), &beta)) <= TOL);
    }

    #[test]
    fn full_reliability_is_identity_and_zero_is_vacuous(m in mass(3)) {
        let frame = m.frame().clone();
        let one = m.contextual_discount(&ReliabilityVector::uniform(&frame, 1.0).unwrap()).unwrap();
        prop_assert!(dense_diff(&one, &m) <= TOL);
        let zero = m.contextual_discount(&ReliabilityVector::uniform(&frame, 0.0).unwrap()).unwrap();
        prop_assert!((zero.mass(frame.full()) - 1.0).abs() <= TOL);
    }

    #[test]
    fn uniform_reliability_matches_classical_discounting_on_contours(m in mass(4), b in 0.0f64..=1.0) {
        let frame = m.frame().clone();
        let ctx = m.contextual_discount(&ReliabilityVector::uniform(&frame, b).unwrap()).unwrap();
        let classical = m.discount(b).unwrap();
        prop_assert!(oracle::max_abs_diff(ctx.contour().values(), classical.contour().values()) <= TOL);
    }

    #[test]
    fn uniform_reliability_matches_classical_discounting_on_binary_frames(m in mass(2), b in 0.0f64..=1.0) {
        let frame = m.frame().clone();
        let ctx = m.contextual_discount(&ReliabilityVector::uniform(&frame, b).unwrap()).unwrap();
        prop_assert!(dense_diff(&ctx, &m.discount(b).unwrap()) <= TOL);
    }

    #[test]
    fn conditional_embedding_round_trip(m in mass(4), context in 1u32..16) {
        let frame = m.frame().clone();
        let context = Subset(context);
        // Restrict the focal sets to the context first.
        let Ok(local) = m.condition(context) else { return Ok(()) };
        let embedded = local.conditional_embed(context).unwrap();
        prop_assert!(dense_diff(&embedded.condition(context).unwrap(), &local) <= TOL);
        // Every focal set of the embedding covers the complement of the context.
        let outside = context.complement(frame.len());
        for (a, _) in embedded.focal_sets() {
            prop_assert!(outside.is_subset_of(a));
        }
    }

    #[test]
    fn fusion_matches_reference(
        pl in prop::collection::vec(0.01f64..=1.0, 6),
        beta in prop::collection::vec(0.0f64..=1.0, 6),
    ) {
        let frame = Frame::numbered(3).unwrap();
        let contours: Vec<ContourFunction> =
            pl.chunks(3).map(|c| ContourFunction::new(&frame, c.to_vec()).unwrap()).collect();
        let raw: Vec<f64> = beta.iter().map(|&b| {
            let b = b.clamp(1e-6, 1.0 - 1e-6);
            (b / (1.0 - b)).ln()
        }).collect();
        let rm = ReliabilityMatrix::from_raw(&frame, vec!["A".into(), "B".into()], raw).unwrap();
        let got = fuse(&contours, &rm).unwrap();
        let rows: Vec<Vec<f64>> = pl.chunks(3).map(<[f64]>::to_vec).collect();
        let brows: Vec<Vec<f64>> = rm.betas().chunks(3).map(<[f64]>::to_vec).collect();
        let want = oracle::fuse(&rows, &brows);
        prop_assert!(oracle::max_abs_diff(&got.probabilities, &want) <= TOL);
        prop_assert!((got.probabilities.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn worked_discounting_example() {
    let frame = Frame::numbered(2).unwrap();
    let m = MassFunction::new(&frame, [(Subset::singleton(0), 0.7), (Subset::singleton(1), 0.2), (frame.full(), 0.1)])
        .unwrap();
    let beta = ReliabilityVector::new(&frame, vec![1.0, 0.6]).unwrap();
    let d = m.contextual_discount(&beta).unwrap();
    assert!((d.mass(Subset::singleton(0)) - 0.42).abs() <= 1e-12);
    assert!((d.mass(Subset::singleton(1)) - 0.2).abs() <= 1e-12);
    assert!((d.mass(frame.full()) - 0.38).abs() <= 1e-12);
    let pl = m.contour().contextual_discount(&beta).unwrap();
    assert!(oracle::max_abs_diff(pl.values(), &[0.8, 0.58]) <= 1e-12);
}
