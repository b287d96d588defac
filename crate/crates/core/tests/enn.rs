use evifuse::dst::{Frame, MassFunction};
use evifuse::enn::{enn_backward, enn_forward, init_enn, prototype_mass, EnnParameters};
use evifuse::oracle;
use proptest::prelude::*;

fn params(i: usize, k: usize, h: usize, seed: u64) -> EnnParameters {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let prototypes = (0..i).map(|_| (0..h).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let alpha: Vec<f64> = (0..i).map(|_| rng.random_range(0.1..0.9)).collect();
    let gamma: Vec<f64> = (0..i).map(|_| rng.random_range(0.2..2.0)).collect();
    let memberships: Vec<Vec<f64>> = (0..i)
        .map(|_| {
            let r: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
            let s: f64 = r.iter().sum();
            r.into_iter().map(|v| v / s).collect()
        })
        .collect();
    EnnParameters::from_values(k, prototypes, &alpha, &gamma, &memberships).unwrap()
}

/// Scalar objective `Σ_k c_k m({θ_k}) + c_θ m(Θ)` with fixed weights.
fn objective(frame: &Frame, x: &[f64], p: &EnnParameters, c: &[f64]) -> f64 {
    let m = enn_forward(frame, x, p).unwrap();
    m.singletons().iter().zip(c).map(|(a, b)| a * b).sum::<f64>() + c[c.len() - 1] * m.theta()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[test]
fn forward_equals_combination_of_prototype_masses() {
    for (i, k, h, seed) in [(2, 2, 2, 0), (3, 3, 2, 1), (5, 4, 3, 2)] {
        let frame = Frame::numbered(k).unwrap();
        let p = params(i, k, h, seed);
        let x: Vec<f64> = (0..h).map(|j| 0.3 * j as f64 - 0.2).collect();
        let got = enn_forward(&frame, &x, &p).unwrap();
        let sims = evifuse::enn::prototype_activation(&x, &p).unwrap();
        let mut acc = MassFunction::vacuous(&frame).unwrap();
        for (n, s) in sims.iter().enumerate() {
            let mi = prototype_mass(&frame, *s, &p.membership_row(n)).unwrap().to_mass_function().unwrap();
            acc = acc.dempster_combine(&mi).unwrap().0;
        }
        let want = oracle::dense(&acc);
        let have = oracle::dense(&got.to_mass_function().unwrap());
        assert!(oracle::max_abs_diff(&have, &want) < 1e-12, "I={i} K={k}");
    }
}

#[test]
fn backward_matches_finite_differences() {
    let (i, k, h) = (3, 2, 2);
    let frame = Frame::numbered(k).unwrap();
    let p = params(i, k, h, 7);
    let x = vec![0.25, -0.4];
    let c = [0.7, -1.3, 0.4];
    let g = enn_backward(&x, &p, &c[..k], c[k]).unwrap();
    let step = 1e-5;
    let resolved = |p: &EnnParameters| {
        let alpha: Vec<f64> = (0..i).map(|n| p.alpha(n)).collect();
        let gamma: Vec<f64> = (0..i).map(|n| p.gamma(n)).collect();
        let mem: Vec<Vec<f64>> = (0..i).map(|n| p.membership_row(n)).collect();
        let protos: Vec<Vec<f64>> = (0..i).map(|n| p.prototype(n).to_vec()).collect();
        (protos, alpha, gamma, mem)
    };
    let (protos, alpha, gamma, mem) = resolved(&p);
    let rebuild = |pr: &Vec<Vec<f64>>, a: &Vec<f64>, gm: &Vec<f64>, m: &Vec<Vec<f64>>| {
        EnnParameters::from_values(k, pr.clone(), a, gm, m).unwrap()
    };
    let mut worst = 0.0f64;
    for j in 0..h {
        let mut up = x.clone();
        up[j] += step;
        let mut down = x.clone();
        down[j] -= step;
        let fd = (objective(&frame, &up, &p, &c) - objective(&frame, &down, &p, &c)) / (2.0 * step);
        worst = worst.max(rel(g.input[j], fd));
    }
    for n in 0..i {
        for j in 0..h {
            let (mut a, mut b) = (protos.clone(), protos.clone());
            a[n][j] += step;
            b[n][j] -= step;
            let fd = (objective(&frame, &x, &rebuild(&a, &alpha, &gamma, &mem), &c)
                - objective(&frame, &x, &rebuild(&b, &alpha, &gamma, &mem), &c))
                / (2.0 * step);
            worst = worst.max(rel(g.prototypes[n * h + j], fd));
        }
        let (mut a, mut b) = (alpha.clone(), alpha.clone());
        a[n] += step;
        b[n] -= step;
        let fd = (objective(&frame, &x, &rebuild(&protos, &a, &gamma, &mem), &c)
            - objective(&frame, &x, &rebuild(&protos, &b, &gamma, &mem), &c))
            / (2.0 * step);
        worst = worst.max(rel(g.alpha[n], fd));
        let (mut a, mut b) = (gamma.clone(), gamma.clone());
        a[n] += step;
        b[n] -= step;
        let fd = (objective(&frame, &x, &rebuild(&protos, &alpha, &a, &mem), &c)
            - objective(&frame, &x, &rebuild(&protos, &alpha, &b, &mem), &c))
            / (2.0 * step);
        worst = worst.max(rel(g.gamma[n], fd));
        // Memberships move along the simplex: +step on class 0, -step on class 1.
        let (mut a, mut b) = (mem.clone(), mem.clone());
        a[n][0] += step;
        a[n][1] -= step;
        b[n][0] -= step;
        b[n][1] += step;
        let fd = (objective(&frame, &x, &rebuild(&protos, &alpha, &gamma, &a), &c)
            - objective(&frame, &x, &rebuild(&protos, &alpha, &gamma, &b), &c))
            / (2.0 * step);
        worst = worst.max(rel(g.memberships[n * k] - g.memberships[n * k + 1], fd));
    }
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn operation_count_scales_with_prototypes_times_width() {
    let mut ratios = Vec::new();
    for (i, k, h) in [(4, 2, 4), (16, 3, 8), (64, 5, 32)] {
        let x = vec![0.1; h];
        let count = |n: usize| {
            let mut ops = 0usize;
            params(n, k, h, 3).resolve().forward(&x, &mut ops);
            ops
        };
        let (one, two, three) = (count(i), count(2 * i), count(3 * i));
        // Linear in I: equal increments for equal steps.
        assert_eq!(three - two, two - one, "I={i} K={k} H={h}");
        ratios.push(one as f64 / (i * (h + k)) as f64);
    }
    for r in &ratios {
        assert!((3.0..=12.0).contains(r), "ops per I(H+K) = {r}");
    }
}

#[test]
fn init_values_and_determinism() {
    let a = init_enn(10, 3, 4, 5).unwrap();
    assert_eq!(a, init_enn(10, 3, 4, 5).unwrap());
    for n in 0..10 {
        assert_eq!(a.alpha(n), 0.5);
        assert_eq!(a.gamma(n), 0.01);
        assert!((a.membership_row(n).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn output_is_valid_and_permutation_equivariant(
        seed in any::<u64>(),
        x in prop::collection::vec(-3.0f64..3.0, 3),
        shift in 1usize..5,
    ) {
        let (i, k) = (5, 3);
        let frame = Frame::numbered(k).unwrap();
        let p = params(i, k, 3, seed);
        let m = enn_forward(&frame, &x, &p).unwrap();
        let total: f64 = m.singletons().iter().sum::<f64>() + m.theta();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(m.singletons().iter().all(|&v| v >= 0.0));
        prop_assert!(m.theta() > 0.0);
        let order: Vec<usize> = (0..i).map(|n| (n + shift) % i).collect();
        let q = enn_forward(&frame, &x, &p.permuted(&order)).unwrap();
        prop_assert!(oracle::max_abs_diff(m.singletons(), q.singletons()) < 1e-12);
        prop_assert!((m.theta() - q.theta()).abs() < 1e-12);
    }
}
