use climsurr_core::dataset::NormStats;
use climsurr_core::env::AgentAction;
use climsurr_core::rl::{gae, ppo_loss_and_grads, AgentBatch, PolicyNet, PpoConfig};
use climsurr_core::surrogate::{loss_on_tape, EncoderKind, SurrogateConfig, SurrogateModel, SurrogateStepper};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Advantages straight from the definition: a discounted sum of TD errors.
fn gae_by_definition(r: &[f64], v: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = r.len();
    let value = |t: usize| if t < n { v[t] } else { 0.0 };
    (0..n)
        .map(|t| {
            (t..n)
                .map(|k| (gamma * lambda).powi((k - t) as i32) * (r[k] + gamma * value(k + 1) - v[k]))
                .sum()
        })
        .collect()
}

proptest! {
    #[test]
    fn gae_matches_the_definition(
        rv in prop::collection::vec((-3.0f64..1.0, -2.0f64..2.0), 1..60),
        gamma in 0.5f64..1.0,
        lambda in 0.0f64..1.0,
    ) {
        let (r, v): (Vec<f64>, Vec<f64>) = rv.into_iter().unzip();
        let (adv, ret) = gae(&r, &v, gamma, lambda);
        for ((a, want), (rt, vt)) in adv.iter().zip(gae_by_definition(&r, &v, gamma, lambda)).zip(ret.iter().zip(&v)) {
            prop_assert!((a - want).abs() < 1e-9 * want.abs().max(1.0));
            prop_assert!((rt - (a + vt)).abs() < 1e-12);
        }
    }
}

fn norm(c: usize) -> NormStats {
    NormStats {
        gas_mean: (0..c).map(|i| 1.0 + i as f64).collect(),
        gas_std: (0..c).map(|i| 0.5 + 0.25 * i as f64).collect(),
        temp_mean: 1.2,
        temp_std: 0.6,
    }
}

fn tiny_surrogate(kind: EncoderKind, window: usize) -> SurrogateModel {
    let mut cfg = SurrogateConfig::for_encoder(kind);
    cfg.hidden_dim = 4;
    cfg.head_hidden = 5;
    cfg.window = window;
    cfg.seed = 9;
    if kind == EncoderKind::Tcn {
        cfg.tcn_kernel = 2;
        cfg.tcn_dilations = vec![1, 2, 4];
        cfg.encoder_layers = 3;
    }
    SurrogateModel::init(cfg, norm(3), "toy".into()).unwrap()
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[test]
fn surrogate_loss_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for kind in [EncoderKind::Gru, EncoderKind::Lstm, EncoderKind::Tcn] {
        let model = tiny_surrogate(kind, 6);
        let batch = Array2::from_shape_fn((3, model.window_len()), |_| rng.gen_range(-1.5..1.5));
        let targets = [0.3, -0.2, 1.1];
        let (_, grads) = loss_on_tape(&model, &batch, &targets);
        let h = 1e-5;
        for (p, g) in grads.iter().enumerate() {
            for (k, an) in g.iter().enumerate() {
                let mut plus = model.clone();
                let mut minus = model.clone();
                plus.params.tensors[p].as_slice_mut().unwrap()[k] += h;
                minus.params.tensors[p].as_slice_mut().unwrap()[k] -= h;
                let fd = (loss_on_tape(&plus, &batch, &targets).0 - loss_on_tape(&minus, &batch, &targets).0) / (2.0 * h);
                assert!(relative_error(*an, fd) <= 1e-4 || (an - fd).abs() < 1e-10, "{kind} param {p}[{k}]: {an} vs {fd}");
            }
        }
    }
}

fn ppo_batch(net: &PolicyNet, episodes: usize, horizon: usize) -> AgentBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut b = AgentBatch {
        obs: vec![],
        actions: vec![],
        log_probs: vec![],
        advantages: vec![],
        returns: vec![],
    };
    for _ in 0..episodes {
        let obs: Vec<Vec<f64>> = (0..horizon)
            .map(|_| (0..net.obs_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let acts: Vec<AgentAction> = (0..horizon)
            .map(|_| AgentAction::from_indices(std::array::from_fn(|_| rng.gen_range(0..3))))
            .collect();
        b.log_probs.push((0..horizon).map(|_| rng.gen_range(-5.0..-3.5)).collect());
        b.advantages.push((0..horizon).map(|_| rng.gen_range(-1.0..1.0)).collect());
        b.returns.push((0..horizon).map(|_| rng.gen_range(-2.0..0.0)).collect());
        b.obs.push(obs);
        b.actions.push(acts);
    }
    b
}

#[test]
fn ppo_loss_gradient_matches_central_differences() {
    let net = PolicyNet::new(5, 4, 3);
    let batch = ppo_batch(&net, 3, 7);
    for normalize in [false, true] {
        let cfg = PpoConfig {
            normalize_advantages: normalize,
            ..PpoConfig::default()
        };
        let idx = [0, 1, 2];
        let (_, grads) = ppo_loss_and_grads(&net, &batch, &idx, &cfg);
        let h = 1e-5;
        for (p, g) in grads.iter().enumerate() {
            for (k, an) in g.iter().enumerate() {
                let mut plus = net.clone();
                let mut minus = net.clone();
                plus.params.tensors[p].as_slice_mut().unwrap()[k] += h;
                minus.params.tensors[p].as_slice_mut().unwrap()[k] -= h;
                let fd = (ppo_loss_and_grads(&plus, &batch, &idx, &cfg).0.total
                    - ppo_loss_and_grads(&minus, &batch, &idx, &cfg).0.total)
                    / (2.0 * h);
                assert!(relative_error(*an, fd) <= 1e-4 || (an - fd).abs() < 1e-10, "param {p}[{k}]: {an} vs {fd}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn stepper_agrees_with_whole_window_inference(
        rows in prop::collection::vec(prop::array::uniform3(0.0f64..4.0), 30),
        tcn: bool,
    ) {
        let kind = if tcn { EncoderKind::Tcn } else { EncoderKind::Gru };
        let w = 6;
        let model = tiny_surrogate(kind, w);
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let mut stepper = SurrogateStepper::new(&model, 1990, &flat[..w * 3]).unwrap();
        prop_assert_eq!(stepper.year(), 1990 + w as i32);
        let mut windows = vec![];
        let mut stepped = vec![];
        for t in w..rows.len() {
            stepped.push(stepper.step(&flat[t * 3..(t + 1) * 3]).unwrap());
            windows.push(flat[(t - w) * 3..(t + 1) * 3].to_vec());
        }
        // the batched path runs the tape graph, an independent implementation
        for (a, b) in stepped.iter().zip(model.forward_batch(&windows).unwrap()) {
            prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
        }
        stepper.reset();
        prop_assert_eq!(stepper.step(&flat[w * 3..(w + 1) * 3]).unwrap(), stepped[0]);
    }
}
