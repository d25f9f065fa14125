//! Training the score network on a Gaussian task whose exact score is known.

use gradtts::analytic::GaussianScore;
use gradtts::rng::{seeded, standard_normal, SeededRng};
use gradtts::scorenet::{diffusion_loss, loss_and_gradients, AdamState, ScoreNetArch, ToyScoreNet, TrainBatch};
use gradtts::{DiffusionSpec, NoiseSchedule, ScoreModel};
use ndarray::{array, Array1, Array2};

const DIM: usize = 2;
const SPREAD: f64 = 0.3;

fn centre() -> Array1<f64> {
    array![0.8, -0.5]
}

/// `instances` segments of `frames` rows drawn from `N(centre, SPREAD² I)`, with `μ = centre`.
fn gaussian_batch(instances: usize, frames: usize, schedule: &NoiseSchedule, rng: &mut SeededRng) -> TrainBatch {
    let m = centre();
    let x0 = (0..instances)
        .map(|_| standard_normal::<_, ndarray::Ix2, _>((frames, DIM), rng) * SPREAD + &m)
        .collect();
    let mu = (0..instances).map(|_| Array2::from_shape_fn((frames, DIM), |(_, j)| m[j])).collect();
    TrainBatch::sample(x0, mu, schedule, 1e-3, rng).unwrap()
}

fn trained(steps: usize) -> (ToyScoreNet, ToyScoreNet, DiffusionSpec) {
    let schedule = NoiseSchedule::default();
    let spec = DiffusionSpec::identity(schedule, DIM).unwrap();
    let arch = ScoreNetArch { dim: DIM, hidden: vec![32, 32], ..ScoreNetArch::default() };
    let mut rng = seeded(90);
    let initial = ToyScoreNet::new(arch, schedule, &mut rng).unwrap();
    let mut net = initial.clone();
    let mut adam = AdamState::new(net.num_params(), 1e-3);
    for _ in 0..steps {
        let batch = gaussian_batch(8, 8, &schedule, &mut rng);
        let g = loss_and_gradients(&net, &batch, &spec).unwrap();
        adam.step(&mut net.params, &g.params).unwrap();
    }
    (initial, net, spec)
}

#[test]
fn loss_halves_and_score_approaches_the_exact_one() {
    let (initial, net, spec) = trained(2000);
    let mut rng = seeded(91);
    let eval = gaussian_batch(256, 8, &spec.schedule, &mut rng);
    let before = diffusion_loss(&initial, &eval, &spec).unwrap();
    let after = diffusion_loss(&net, &eval, &spec).unwrap();
    assert!(after < 0.5 * before, "loss {before} -> {after}");

    let exact = GaussianScore::new(centre(), Array2::eye(DIM) * (SPREAD * SPREAD), spec.clone()).unwrap();
    let noisy = eval.noisy(&spec).unwrap();
    // Weighted by λ_t like the loss: unweighted, the 1/λ_t blow-up of every score near t = 0
    // would let a sliver of small times decide the comparison.
    let (mut err_before, mut err_after, mut weight) = (0.0, 0.0, 0.0);
    for ((x, mu), &t) in noisy.iter().zip(&eval.mu).zip(&eval.t) {
        let lam = spec.schedule.lambda_scalar(t).unwrap();
        let truth = exact.score(x.view(), mu.view(), t).unwrap();
        err_before += lam * (&initial.forward(x.view(), mu.view(), t).unwrap() - &truth).mapv(|v| v * v).sum();
        err_after += lam * (&net.forward(x.view(), mu.view(), t).unwrap() - &truth).mapv(|v| v * v).sum();
        weight += lam * x.len() as f64;
    }
    let (err_before, err_after) = (err_before / weight, err_after / weight);
    assert!(err_after * 10.0 <= err_before, "weighted score MSE {err_before} -> {err_after}");
}

#[test]
fn untrained_loss_is_noise_energy_per_frame() {
    let (initial, _, spec) = trained(0);
    let mut rng = seeded(92);
    let eval = gaussian_batch(512, 8, &spec.schedule, &mut rng);
    let loss = diffusion_loss(&initial, &eval, &spec).unwrap();
    assert!((loss - DIM as f64).abs() < 0.1, "{loss}");
}
