//! Invariant checks. Each takes generated inputs and fails with a message;
//! the proptest suite and the acceptance harness drive the same checks.

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ktpfl_core::data::{encode_idx, parse_idx_pair, partition, synth_gen, SynthParams};
use ktpfl_core::gradcheck::{central_difference, central_difference_vec, max_relative_error};
use ktpfl_core::knowledge::{
    apply_coefficient_update, coeff_gradient, coefficient_objective, ensemble_teacher,
    normalize_columns, topk_coefficients,
};
use ktpfl_core::nn::{
    cross_entropy, flatten_params, forward, grad_ce, grad_kl_student, kl_divergence,
    kl_divergence_eps, softmax_t, unflatten_params,
};
use ktpfl_core::{
    CoefficientMatrix, Dataset, KnowledgeHyper, Model, PartitionScheme, SoftPredictionBank, Tensor,
};

pub type Check = std::result::Result<(), TestCaseError>;

pub const TEMPERATURES: [f64; 4] = [0.5, 1.0, 2.0, 10.0];
pub const GRAD_TOL: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

/// Row-stochastic matrix with entries bounded away from zero.
pub fn random_stochastic(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let logits = random_tensor(rng, rows, cols, 3.0);
    softmax_t(&logits, 1.0).unwrap()
}

pub fn random_columns(rng: &mut impl Rng, n: usize) -> CoefficientMatrix {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| rng.random_range(0.05..1.0)).collect())
        .collect();
    normalize_columns(&CoefficientMatrix::from_rows(&rows).unwrap())
}

pub fn random_bank(rng: &mut impl Rng, n: usize, b: usize, classes: usize) -> SoftPredictionBank {
    let preds = (0..n).map(|_| random_stochastic(rng, b, classes)).collect();
    SoftPredictionBank::new((0..n).collect(), preds, (0..b).collect()).unwrap()
}

pub fn random_simplex(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

fn entropy_rows(p: &Tensor) -> f64 {
    -p.data().iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

// ---------------------------------------------------------------------------
// nn-core

pub fn softmax_rows_sum_to_one(logits: &Tensor, t: f64) -> Check {
    let p = softmax_t(logits, t).unwrap();
    for i in 0..p.rows() {
        let s: f64 = p.row(i).iter().sum();
        prop_assert!((s - 1.0).abs() <= 1e-9, "row {i} sums to {s} at T={t}");
        prop_assert!(p.row(i).iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
    Ok(())
}

pub fn entropy_grows_with_temperature(logits: &Tensor) -> Check {
    let mut prev = f64::NEG_INFINITY;
    for t in TEMPERATURES {
        let h = entropy_rows(&softmax_t(logits, t).unwrap());
        prop_assert!(h >= prev - 1e-12, "entropy fell from {prev} to {h} at T={t}");
        prev = h;
    }
    Ok(())
}

pub fn kl_is_a_divergence(p: &Tensor, q: &Tensor) -> Check {
    let d = kl_divergence(p, q).unwrap();
    prop_assert!(d >= -1e-9, "KL = {d}");
    prop_assert!(kl_divergence(p, p).unwrap().abs() <= 1e-12);
    let gap = p.data().iter().zip(q.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if gap > 1e-3 {
        prop_assert!(d > 0.0, "distinct distributions gave KL = {d}");
    }
    Ok(())
}

pub fn params_round_trip(model: &Model) -> Check {
    let flat = flatten_params(model);
    prop_assert_eq!(flat.len(), model.param_count());
    let back = unflatten_params(model, flat.data()).unwrap();
    prop_assert!(&back == model);
    Ok(())
}

/// Random dense model, input batch, labels and teacher for gradient checks.
pub struct GradCase {
    pub model: Model,
    pub batch: Tensor,
    pub labels: Vec<usize>,
    pub teacher: Tensor,
    pub temperature: f64,
}

pub fn grad_case(seed: u64, classes: usize) -> GradCase {
    let mut r = rng(seed);
    let d_in = r.random_range(2..=12);
    let depth = r.random_range(0..=2);
    let mut dims = vec![d_in];
    for _ in 0..depth {
        dims.push(r.random_range(2..=40));
    }
    dims.push(classes);
    let model = Model::init(&dims, &mut r).unwrap();
    assert!(model.param_count() <= 5000);
    let rows = r.random_range(1..=6);
    GradCase {
        batch: random_tensor(&mut r, rows, d_in, 1.0),
        labels: (0..rows).map(|_| r.random_range(0..classes)).collect(),
        teacher: random_stochastic(&mut r, rows, classes),
        temperature: [0.5, 1.0, 2.0, 4.0][r.random_range(0..4)],
        model,
    }
}

/// Worst relative error of the CE and KL gradients against central differences.
pub fn model_gradient_error(case: &GradCase) -> (f64, f64) {
    let GradCase {
        model,
        batch,
        labels,
        teacher,
        temperature,
    } = case;
    let ce = grad_ce(model, batch, labels).unwrap().flatten();
    let ce_fd = central_difference(model, FD_STEP, |m| {
        cross_entropy(&forward(m, batch).unwrap(), labels).unwrap()
    });
    let kl = grad_kl_student(model, batch, teacher, *temperature).unwrap().flatten();
    let kl_fd = central_difference(model, FD_STEP, |m| {
        let q = softmax_t(&forward(m, batch).unwrap(), *temperature).unwrap();
        kl_divergence_eps(teacher, &q, 1e-300).unwrap()
    });
    (max_relative_error(&ce, &ce_fd), max_relative_error(&kl, &kl_fd))
}

pub fn model_gradients_match(case: &GradCase) -> Check {
    let (ce, kl) = model_gradient_error(case);
    prop_assert!(ce < GRAD_TOL, "CE gradient relative error {ce}");
    prop_assert!(kl < GRAD_TOL, "KL gradient relative error {kl}");
    Ok(())
}

// ---------------------------------------------------------------------------
// knowledge

pub struct CoeffCase {
    pub bank: SoftPredictionBank,
    pub c: CoefficientMatrix,
    pub weights: Vec<f64>,
    pub hyper: KnowledgeHyper,
}

pub fn coeff_case(seed: u64, n: usize, b: usize, classes: usize) -> CoeffCase {
    let mut r = rng(seed);
    CoeffCase {
        bank: random_bank(&mut r, n, b, classes),
        c: random_columns(&mut r, n),
        weights: random_simplex(&mut r, n),
        hyper: KnowledgeHyper {
            lambda: r.random_range(0.1..2.0),
            rho: r.random_range(0.0..1.0),
            ..KnowledgeHyper::default()
        },
    }
}

pub fn coeff_gradient_error(case: &CoeffCase) -> f64 {
    let CoeffCase {
        bank,
        c,
        weights,
        hyper,
    } = case;
    let analytic = coeff_gradient(bank, c, weights, hyper).unwrap();
    let n = c.dim();
    let numeric = central_difference_vec(c.as_slice(), FD_STEP, |x| {
        let rows: Vec<Vec<f64>> = x.chunks(n).map(<[f64]>::to_vec).collect();
        let probe = CoefficientMatrix::from_rows(&rows).unwrap();
        coefficient_objective(bank, &probe, weights, hyper).unwrap()
    });
    max_relative_error(analytic.as_slice(), &numeric)
}

pub fn coeff_gradient_matches(case: &CoeffCase) -> Check {
    let err = coeff_gradient_error(case);
    prop_assert!(err < GRAD_TOL, "coefficient gradient relative error {err}");
    Ok(())
}

pub fn uniform_teacher_is_mean(bank: &SoftPredictionBank) -> Check {
    let n = bank.len();
    let c = CoefficientMatrix::uniform(n);
    for pos in 0..n {
        let t = ensemble_teacher(bank, &c, pos).unwrap();
        for (i, v) in t.data().iter().enumerate() {
            let mean = bank.predictions.iter().map(|p| p.data()[i]).sum::<f64>() / n as f64;
            prop_assert!((v - mean).abs() <= 1e-12);
        }
    }
    Ok(())
}

pub fn normalize_idempotent_keeps_argmax(c: &CoefficientMatrix) -> Check {
    let once = normalize_columns(c);
    let twice = normalize_columns(&once);
    prop_assert!(once.is_column_stochastic(1e-12));
    for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
        prop_assert!((a - b).abs() <= 1e-15);
    }
    for col in 0..c.dim() {
        let before = c.column(col);
        if before.iter().all(|&v| v <= 0.0) {
            continue;
        }
        let top = |v: &[f64]| {
            v.iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .unwrap()
                .0
        };
        prop_assert_eq!(top(&before), top(&once.column(col)));
    }
    Ok(())
}

/// With `λ = 0` the update is `c ← u + (1 − 2·η·ρ)(c − u)`, so the distance to
/// uniform shrinks by exactly that factor each step.
pub fn regularizer_contracts_to_uniform(c0: &CoefficientMatrix, eta: f64, rho: f64) -> Check {
    let n = c0.dim();
    let mut r = rng(n as u64);
    let bank = random_bank(&mut r, n, 3, 4);
    let hyper = KnowledgeHyper {
        lambda: 0.0,
        rho,
        coeff_lr: eta,
        ..KnowledgeHyper::default()
    };
    let weights = vec![1.0 / n as f64; n];
    let factor = 1.0 - 2.0 * eta * rho;
    let mut c = c0.clone();
    for _ in 0..10 {
        let before = c.distance_to_uniform();
        let g = coeff_gradient(&bank, &c, &weights, &hyper).unwrap();
        c = apply_coefficient_update(&c, &g, eta, true).unwrap();
        let after = c.distance_to_uniform();
        prop_assert!(
            (after - factor * before).abs() <= 1e-12 + 1e-9 * before,
            "distance {before} -> {after}, expected factor {factor}"
        );
    }
    Ok(())
}

pub fn topk_keeps_exactly_k(bank: &SoftPredictionBank, k: usize) -> Check {
    let c = topk_coefficients(bank, k).unwrap();
    prop_assert!(c.is_column_stochastic(1e-12));
    for col in 0..c.dim() {
        let nz = c.column(col).iter().filter(|&&v| v > 0.0).count();
        prop_assert_eq!(nz, k, "column {}", col);
        prop_assert!(c.get(col, col) > 0.0, "column {} drops itself", col);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// data

pub fn small_dataset(seed: u64, classes: usize, per_class: usize) -> Dataset {
    synth_gen(&SynthParams {
        num_classes: classes,
        samples_per_class: per_class,
        input_dim: 6,
        spread: 0.2,
        seed,
    })
    .unwrap()
}

pub fn partition_is_sound(
    ds: &Dataset,
    n: usize,
    scheme: PartitionScheme,
    holdout: usize,
    seed: u64,
) -> Check {
    let p = partition(ds, n, scheme, holdout, seed).unwrap();
    prop_assert!(p.is_disjoint(ds.len()));
    prop_assert_eq!(p.public_indices.len(), holdout);
    let test: usize = p.test_shards.iter().map(Vec::len).sum();
    prop_assert_eq!(p.total_private() + test + holdout, ds.len());
    prop_assert!(p.total_private() + holdout <= ds.len());
    for (i, shard) in p.private_shards.iter().enumerate() {
        prop_assert!(!shard.is_empty(), "client {} is empty", i);
        let h = ds.label_histogram(shard);
        let test_h = ds.label_histogram(&p.test_shards[i]);
        for l in 0..h.len() {
            let held = h[l] + test_h[l];
            prop_assert_eq!(test_h[l], held / 4, "client {} label {} split {}/{}", i, l, h[l], test_h[l]);
        }
        if let PartitionScheme::LabelSkew { labels_per_client } = scheme {
            let held = h.iter().filter(|&&v| v > 0).count();
            prop_assert_eq!(held, labels_per_client, "client {} labels {:?}", i, h);
        }
    }
    Ok(())
}

pub fn idx_round_trips(ds: &Dataset, rows: usize, cols: usize) -> Check {
    let (images, labels) = encode_idx(ds, rows, cols).unwrap();
    let back = parse_idx_pair(&images, &labels).unwrap();
    prop_assert_eq!(&back.labels, &ds.labels);
    prop_assert_eq!(back.inputs.shape(), ds.inputs.shape());
    for (a, b) in back.inputs.data().iter().zip(ds.inputs.data()) {
        prop_assert!((a - (b * 255.0).round() / 255.0).abs() <= 1e-12);
    }
    let (images2, labels2) = encode_idx(&back, rows, cols).unwrap();
    prop_assert!(images2 == images && labels2 == labels);
    Ok(())
}

// ---------------------------------------------------------------------------
// fed-sim

use ktpfl_core::nn::combine_models;
use ktpfl_core::{Algorithm, Federation, SimConfig};

/// A quick federation: 4 classes, 6-dimensional inputs, a few clients.
pub fn small_federation(
    algorithm: Algorithm,
    n: usize,
    archs: &[Vec<usize>],
    seed: u64,
    tweak: impl FnOnce(&mut SimConfig),
) -> Federation {
    let ds = small_dataset(seed, 4, 60);
    let p = partition(&ds, n, PartitionScheme::Dirichlet { alpha: 1.0 }, 40, seed).unwrap();
    let public = ds.subset(&p.public_indices).to_public(true);
    let archs: Vec<Vec<usize>> = (0..n).map(|i| archs[i % archs.len()].clone()).collect();
    let mut config = SimConfig {
        algorithm,
        rounds: 4,
        local_epochs: 2,
        private_batch_size: 16,
        public_batch_size: 16,
        public_size: 40,
        lr_local: 0.1,
        lr_distill: 0.2,
        seed,
        ..SimConfig::default()
    };
    config.knowledge.coeff_lr = 0.3;
    config.knowledge.rho = 0.3;
    tweak(&mut config);
    Federation::new(config, &ds, &p, public, &archs).unwrap()
}

pub const MIXED: [&[usize]; 2] = [&[6, 8, 4], &[6, 5, 7, 4]];

fn mixed() -> Vec<Vec<usize>> {
    MIXED.iter().map(|a| a.to_vec()).collect()
}

pub fn coefficients_stay_stochastic(seed: u64, rate: f64, algorithm: Algorithm) -> Check {
    let archs = if algorithm.requires_homogeneous() { vec![vec![6, 8, 4]] } else { mixed() };
    let mut f = small_federation(algorithm, 6, &archs, seed, |c| c.sample_rate = rate);
    f.run().unwrap();
    for (r, c) in f.coefficient_history().iter().enumerate() {
        prop_assert!(c.is_column_stochastic(1e-9), "round {}: {:?}", r + 1, c);
        prop_assert!(c.as_slice().iter().all(|&v| v >= 0.0));
    }
    Ok(())
}

fn frozen(c: &mut SimConfig) {
    c.knowledge.coeff_lr = 0.0;
}

/// Homogeneous mode with frozen uniform coefficients hands every client the
/// plain average of the locally trained models.
pub fn homogeneous_uniform_is_mean(seed: u64) -> Check {
    let arch = vec![vec![6, 8, 4]];
    let mut homo = small_federation(Algorithm::KtpflHomogeneous, 5, &arch, seed, frozen);
    let mut local = small_federation(Algorithm::Local, 5, &arch, seed, frozen);
    homo.run_round().unwrap();
    local.run_round().unwrap();
    let models: Vec<&Model> = local.clients().iter().map(|c| &c.model).collect();
    let mean = combine_models(&models, &[0.2; 5]).unwrap();
    for c in homo.clients() {
        let (a, b) = (flatten_params(&c.model), flatten_params(&mean));
        let gap = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        prop_assert!(gap <= 1e-12, "client {} is {} from the mean", c.id, gap);
    }
    Ok(())
}

/// Homogeneous mode with frozen identity coefficients follows the local-only
/// trajectory.
pub fn homogeneous_identity_is_local(seed: u64) -> Check {
    let arch = vec![vec![6, 8, 4]];
    let mut homo = small_federation(Algorithm::KtpflHomogeneous, 5, &arch, seed, frozen)
        .with_coefficients(CoefficientMatrix::identity(5))
        .unwrap();
    let mut local = small_federation(Algorithm::Local, 5, &arch, seed, frozen);
    homo.run().unwrap();
    local.run().unwrap();
    for (a, b) in homo.clients().iter().zip(local.clients()) {
        prop_assert!(a.model == b.model, "client {} diverged", a.id);
    }
    Ok(())
}

/// One client teaches itself: `c = [[1]]`, the teacher is its own prediction
/// and the run matches local-only training.
pub fn single_client_is_local(seed: u64) -> Check {
    let arch = vec![vec![6, 8, 4]];
    let mut kt = small_federation(Algorithm::Ktpfl, 1, &arch, seed, |_| {});
    let mut local = small_federation(Algorithm::Local, 1, &arch, seed, |_| {});
    kt.run().unwrap();
    local.run().unwrap();
    prop_assert!(kt.coefficients().get(0, 0) == 1.0);
    let (a, b) = (flatten_params(&kt.clients()[0].model), flatten_params(&local.clients()[0].model));
    let gap = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    prop_assert!(gap <= 1e-12, "single client drifted {gap} from local training");
    Ok(())
}
