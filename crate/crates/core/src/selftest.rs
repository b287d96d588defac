//! Oracle suites comparing the production code with brute-force
//! references, plus a finite-difference check of every gradient.
//!
//! Each suite returns one [`Check`]; the `selftest` command prints them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::LabeledExample;
use crate::dst::{Frame, MassFunction, ReliabilityVector, SimpleMassFunction, Subset};
use crate::error::Result;
use crate::features::{FeatureExtractor, ModalityImage};
use crate::metrics::{brier, calibration_bins, dice_score, ece, nll, EvaluationRegion, NllMode, Selector, DEFAULT_BINS};
use crate::oracle;
use crate::training::{Model, ModelShape, Trainable};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }

    fn failed(name: &'static str, e: impl std::fmt::Display) -> Self {
        Self::new(name, false, format!("error: {e}"))
    }

    /// `PASS name: detail` or `FAIL name: detail`.
    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

fn random_simple(rng: &mut ChaCha8Rng, frame: &Frame) -> Result<SimpleMassFunction> {
    let mut v = random_simplex(rng, frame.len() + 1);
    let theta = v.pop().expect("nonempty");
    SimpleMassFunction::new(frame, v, theta)
}

/// Random mass function whose focal sets are nonempty subsets of `within`.
fn random_mass(rng: &mut ChaCha8Rng, frame: &Frame, within: Subset) -> Result<MassFunction> {
    let subsets: Vec<Subset> = (1..=within.bits()).filter(|b| b & !within.bits() == 0).map(Subset).collect();
    let chosen: Vec<Subset> = subsets.iter().copied().filter(|_| rng.random::<f64>() < 0.5).collect();
    let chosen = if chosen.is_empty() { vec![subsets[rng.random_range(0..subsets.len())]] } else { chosen };
    let w = random_simplex(rng, chosen.len());
    MassFunction::new(frame, chosen.into_iter().zip(w))
}

fn dense_diff(a: &MassFunction, b: &MassFunction) -> f64 {
    oracle::max_abs_diff(&oracle::dense(a), &oracle::dense(b))
}

/// Contextual discounting of (0.7, 0.2, 0.1 on the frame) with β = (1, 0.6).
pub fn discount_example() -> Check {
    const NAME: &str = "contextual discounting worked example";
    let run = || -> Result<(f64, f64, String)> {
        let frame = Frame::numbered(2)?;
        let m = MassFunction::new(
            &frame,
            [(Subset::singleton(0), 0.7), (Subset::singleton(1), 0.2), (frame.full(), 0.1)],
        )?;
        let beta = ReliabilityVector::new(&frame, vec![1.0, 0.6])?;
        let d = m.contextual_discount(&beta)?;
        let got = [d.mass(Subset::singleton(0)), d.mass(Subset::singleton(1)), d.mass(frame.full())];
        let mass_err = oracle::max_abs_diff(&got, &[0.42, 0.2, 0.38]);
        let pl = m.contour().contextual_discount(&beta)?;
        let pl_err = oracle::max_abs_diff(pl.values(), &[0.8, 0.58]);
        Ok((mass_err, pl_err, format!("masses {got:?}, contour {:?}", pl.values())))
    };
    match run() {
        Ok((a, b, s)) => Check::new(NAME, a <= 1e-12 && b <= 1e-12, format!("{s}, max errors {a:.1e} / {b:.1e}")),
        Err(e) => Check::failed(NAME, e),
    }
}

/// Contour of Dempster's combination against the normalized contour product.
pub fn contour_shortcut(trials: usize, seed: u64) -> Check {
    const NAME: &str = "contour shortcut of Dempster's rule";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut count = 0;
    for k in 2..=4 {
        let frame = Frame::numbered(k).expect("small frame");
        for _ in 0..trials {
            let r = (|| -> Result<f64> {
                let a = random_simple(&mut rng, &frame)?;
                let b = random_simple(&mut rng, &frame)?;
                let (da, db) = (oracle::dense(&a.to_mass_function()?), oracle::dense(&b.to_mass_function()?));
                let (combined, kappa) = oracle::combine(&da, &db).expect("simple masses with theta > 0 never fully conflict");
                let (ab, _) = a.dempster_combine(&b)?;
                let shortcut = a.contour().combine(&b.contour(), kappa)?;
                let direct = ab.contour();
                Ok(oracle::max_abs_diff(direct.values(), shortcut.values())
                    .max(oracle::max_abs_diff(&oracle::contour(&combined, k), shortcut.values())))
            })();
            match r {
                Ok(e) => worst = worst.max(e),
                Err(e) => return Check::failed(NAME, e),
            }
            count += 1;
        }
    }
    Check::new(NAME, worst <= 1e-9, format!("{count} pairs over K = 2..4, max error {worst:.2e}"))
}

/// Contour form of contextual discounting against the mass-level operation
/// and the literal reference formula.
pub fn contextual_discount_oracle(trials: usize, seed: u64) -> Check {
    const NAME: &str = "contextual discounting oracle";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut invalid = 0;
    let mut count = 0;
    for k in 2..=4 {
        let frame = Frame::numbered(k).expect("small frame");
        for _ in 0..trials {
            let r = (|| -> Result<(f64, bool)> {
                let m = random_mass(&mut rng, &frame, frame.full())?;
                let beta: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
                let rv = ReliabilityVector::new(&frame, beta.clone())?;
                let d = m.contextual_discount(&rv)?;
                let via_contour = m.contour().contextual_discount(&rv)?;
                let reference = oracle::contextual_discount(&oracle::dense(&m), &beta);
                let e = oracle::max_abs_diff(d.contour().values(), via_contour.values())
                    .max(oracle::max_abs_diff(&oracle::dense(&d), &reference));
                Ok((e, d.validate().is_ok()))
            })();
            match r {
                Ok((e, ok)) => {
                    worst = worst.max(e);
                    invalid += usize::from(!ok);
                }
                Err(e) => return Check::failed(NAME, e),
            }
            count += 1;
        }
    }
    Check::new(
        NAME,
        worst <= 1e-9 && invalid == 0,
        format!("{count} instances over K = 2..4, max error {worst:.2e}, invalid outputs {invalid}"),
    )
}

/// Commutativity, vacuous neutrality and the conditioning/embedding
/// round trip on random general mass functions.
pub fn algebraic_laws(trials: usize, seed: u64) -> Check {
    const NAME: &str = "algebraic laws";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for i in 0..trials {
        let k = 2 + i % 3;
        let frame = Frame::numbered(k).expect("small frame");
        let r = (|| -> Result<f64> {
            let a = random_mass(&mut rng, &frame, frame.full())?;
            let b = random_mass(&mut rng, &frame, frame.full())?;
            let commute = match (a.dempster_combine(&b), b.dempster_combine(&a)) {
                (Ok((ab, k1)), Ok((ba, k2))) => dense_diff(&ab, &ba).max((k1 - k2).abs()),
                (Err(_), Err(_)) => 0.0,
                _ => f64::INFINITY,
            };
            let (neutral, kappa) = a.dempster_combine(&MassFunction::vacuous(&frame)?)?;
            let vacuous = dense_diff(&neutral, &a).max(kappa.abs());
            let context = Subset(rng.random_range(1..(1u32 << k)));
            let local = random_mass(&mut rng, &frame, context)?;
            let back = local.conditional_embed(context)?.condition(context)?;
            Ok(commute.max(vacuous).max(dense_diff(&back, &local)))
        })();
        match r {
            Ok(e) => {
                worst = worst.max(e);
                failures += usize::from(!(e <= 1e-9));
            }
            Err(_) => failures += 1,
        }
    }
    Check::new(NAME, failures == 0, format!("{trials} trials, {failures} failures, max error {worst:.2e}"))
}

/// Dice, Brier, NLL and ECE on hand-computed inputs.
pub fn metric_units() -> Check {
    const NAME: &str = "metric unit checks";
    let run = || -> Result<Vec<(&'static str, bool)>> {
        // TP = 5, FP = 2, FN = 3 for class 1.
        let pred: Vec<u16> = [1, 1, 1, 1, 1, 1, 1, 0, 0, 0].to_vec();
        let truth: Vec<u16> = [1, 1, 1, 1, 1, 0, 0, 1, 1, 1].to_vec();
        let dice = dice_score(&pred, &truth, &Selector::Class(1)) == 2.0 / 3.0;

        let labels = [0u16, 2, 1, 2];
        let perfect: Vec<f64> = labels.iter().flat_map(|&l| (0..3).map(move |c| f64::from(u8::from(c == l)))).collect();
        let r = EvaluationRegion::full(4, 1);
        let brier_zero = brier(&perfect, 3, &labels, &r, 4)? == 0.0;
        let nll_zero = nll(&perfect, 3, &labels, &r, 4, NllMode::TrueClass)? == 0.0;

        let mut probs = Vec::new();
        let mut hand = Vec::new();
        for i in 0..10 {
            probs.extend([0.95, 0.05]);
            hand.push(u16::from(i >= 8));
        }
        for i in 0..10 {
            probs.extend([0.45, 0.55]);
            hand.push(u16::from(i >= 5));
        }
        let r20 = EvaluationRegion::full(20, 1);
        let want = 0.5 * 0.15 + 0.5 * 0.05;
        let ece20 = (ece(&probs, 2, &hand, &r20, 20, DEFAULT_BINS)? - want).abs() <= 1e-12;
        let bins = calibration_bins(&probs, 2, &hand, &r20, 20, DEFAULT_BINS)?;
        let counts = bins.counts[9] == 10 && bins.counts[5] == 10;
        Ok(vec![
            ("dice 2/3", dice),
            ("brier 0", brier_zero),
            ("nll 0", nll_zero),
            ("20-voxel ece", ece20 && counts),
        ])
    };
    match run() {
        Ok(parts) => {
            let bad: Vec<&str> = parts.iter().filter(|p| !p.1).map(|p| p.0).collect();
            let detail = if bad.is_empty() { "all cases exact".to_string() } else { format!("failed: {}", bad.join(", ")) };
            Check::new(NAME, bad.is_empty(), detail)
        }
        Err(e) => Check::failed(NAME, e),
    }
}

/// ECE is exactly zero when every bin's accuracy equals its confidence.
pub fn ece_calibrated_zero() -> Check {
    const NAME: &str = "ece of a calibrated input";
    // Confidence 0.75 with 3 of 4 right, and confidence 1 with all right.
    let probs = [0.75, 0.25, 0.75, 0.25, 0.75, 0.25, 0.75, 0.25, 1.0, 0.0, 0.0, 1.0];
    let labels = [0u16, 0, 0, 1, 0, 1];
    let r = EvaluationRegion::full(6, 1);
    match ece(&probs, 2, &labels, &r, 6, DEFAULT_BINS) {
        Ok(e) => Check::new(NAME, e == 0.0, format!("ece = {e}")),
        Err(e) => Check::failed(NAME, e),
    }
}

/// Largest relative error per parameter group between analytic and
/// central-difference gradients of the total loss.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub groups: Vec<(String, f64)>,
}

impl GradientReport {
    pub fn max_error(&self) -> f64 {
        self.groups.iter().map(|g| g.1).fold(0.0, f64::max)
    }
}

/// Small random instance: 4×4 grid, two modalities, two classes, two
/// prototypes, with parameters moved away from their initial values.
pub fn gradient_instance(seed: u64) -> Result<(Model, LabeledExample)> {
    let frame = Frame::numbered(2)?;
    let shape = ModelShape { features: 2, radius: 1, hidden: 3, prototypes: 2 };
    let mut model = Model::init(&frame, vec!["A".into(), "B".into()], &[1, 1], shape, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let jitter = Normal::new(0.0, 0.5).expect("valid");
    for e in &mut model.enns {
        for s in e.param_slices_mut().into_iter().skip(1) {
            s.iter_mut().for_each(|v| *v += jitter.sample(&mut rng));
        }
    }
    model.reliability.raw.iter_mut().for_each(|v| *v += 2.0 * jitter.sample(&mut rng));
    let (w, h) = (4, 4);
    let mut labels: Vec<u16> = (0..w * h).map(|_| rng.random_range(0..2)).collect();
    labels[0] = 0;
    labels[1] = 1;
    let images = (0..2)
        .map(|_| {
            let data = labels.iter().map(|&l| l as f64 + jitter.sample(&mut rng)).collect();
            ModalityImage::new(w, h, 1, data)
        })
        .collect::<Result<Vec<_>>>()?;
    let ex = LabeledExample::new("grad".into(), images, labels)?;
    Ok((model, ex))
}

fn group_names<E: FeatureExtractor>(model: &Model<E>) -> Vec<String> {
    let mut names = Vec::new();
    for (t, e) in model.extractors.iter().enumerate() {
        for (j, _) in e.params().iter().enumerate() {
            let kind = if j % 2 == 0 { "weights" } else { "biases" };
            names.push(format!("{} extractor layer {} {kind}", model.modalities[t], j / 2));
        }
    }
    for m in &model.modalities {
        for p in ["prototypes", "alpha", "gamma", "memberships"] {
            names.push(format!("{m} {p}"));
        }
    }
    names.push("raw beta".into());
    names
}

pub fn gradient_check<E: FeatureExtractor>(model: &Model<E>, ex: &LabeledExample, h: f64) -> Result<GradientReport> {
    let (_, grads) = model.loss_and_gradients(ex, Trainable::ALL)?;
    let analytic: Vec<Vec<f64>> = grads.groups(Trainable::ALL).iter().map(|g| g.to_vec()).collect();
    let names = group_names(model);
    let mut probe = model.clone();
    let mut groups = Vec::new();
    for (g, name) in names.into_iter().enumerate() {
        let mut worst = 0.0f64;
        for j in 0..analytic[g].len() {
            let orig = probe.groups(Trainable::ALL)[g][j];
            probe.groups_mut(Trainable::ALL)[g][j] = orig + h;
            let up = probe.loss(ex)?.total();
            probe.groups_mut(Trainable::ALL)[g][j] = orig - h;
            let down = probe.loss(ex)?.total();
            probe.groups_mut(Trainable::ALL)[g][j] = orig;
            let fd = (up - down) / (2.0 * h);
            let a = analytic[g][j];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
        }
        groups.push((name, worst));
    }
    Ok(GradientReport { groups })
}

pub fn gradient_suite(seed: u64) -> Check {
    const NAME: &str = "gradient suite";
    match gradient_instance(seed).and_then(|(m, ex)| gradient_check(&m, &ex, 1e-5)) {
        Ok(r) => {
            let worst = r.max_error();
            let detail = format!("{} parameter groups, max relative error {worst:.2e}", r.groups.len());
            Check::new(NAME, worst < 1e-4, detail)
        }
        Err(e) => Check::failed(NAME, e),
    }
}

/// Every oracle suite with its default sizes.
pub fn run_all(seed: u64) -> Vec<Check> {
    vec![
        discount_example(),
        contour_shortcut(1000, seed),
        contextual_discount_oracle(1000, seed),
        gradient_suite(seed),
        metric_units(),
        ece_calibrated_zero(),
        algebraic_laws(10_000, seed),
    ]
}
