use idbaseline::baselines::{BaselineConfig, BaselineKind, BaselineModel};
use idbaseline::envs::{EnvConfig, GridWorldConfig};
use idbaseline::imdp::{discounted_returns, InputSequence};
use idbaseline::nn::MlpParams;
use idbaseline::rng::{derive_seed, rng_from, stream};
use idbaseline::trainer::{collect_rollouts, test_inputs, TrainConfig, FRESH_ID_BASE};
use proptest::prelude::*;

fn zero_policy(env: &EnvConfig) -> MlpParams {
    MlpParams::zeros(TrainConfig::default().policy_config(env).unwrap())
}

#[test]
fn meta_training_halves_post_adaptation_loss() {
    let env = EnvConfig::Gridworld(GridWorldConfig {
        input_persistence: 0.9,
        ..Default::default()
    });
    let horizon = env.episode_len();
    let gamma = TrainConfig::default().gamma;
    let cfg = BaselineConfig {
        kind: BaselineKind::Meta,
        ..Default::default()
    };
    let mut rng = rng_from(7, &[stream::INIT]);
    let BaselineModel::Meta(mut meta) = BaselineModel::new(&cfg, env.obs_dim(), &[], &mut rng).unwrap() else {
        unreachable!()
    };
    let policy = zero_policy(&env);
    let rollouts = |input: &InputSequence, tag: u64, n: u64| {
        let jobs: Vec<_> = (0..n).map(|j| (input, derive_seed(7, &[tag, input.id(), j]))).collect();
        collect_rollouts(&policy, &env, &jobs).unwrap()
    };
    let tests = test_inputs(&env, 20, 7).unwrap();
    let held_out = |meta: &idbaseline::baselines::MetaBaseline| {
        tests
            .iter()
            .map(|input| {
                let t = rollouts(input, 1, 20);
                meta.held_out_mse(&t[..4], &t[4..], gamma, horizon, true).unwrap()
            })
            .sum::<f64>()
            / tests.len() as f64
    };
    let before = held_out(&meta);
    for it in 0..500 {
        let input = env.generate_input(FRESH_ID_BASE + it, 7).unwrap();
        meta.values_and_update(&rollouts(&input, 0, 8), gamma, horizon).unwrap();
    }
    let after = held_out(&meta);
    assert!(after < 0.5 * before, "before {before}, after {after}");
}

#[test]
fn rollouts_depend_only_on_input_and_seed() {
    for name in ["gridworld", "motivating2", "abr"] {
        let env = EnvConfig::preset(name).unwrap();
        let policy = zero_policy(&env);
        let input = env.generate_input(3, 11).unwrap();
        let jobs = [(&input, 5u64), (&input, 5u64), (&input, 6u64)];
        let t = collect_rollouts(&policy, &env, &jobs).unwrap();
        assert_eq!(t[0].rewards(), t[1].rewards(), "{name}");
        assert_eq!(t[0].len(), env.episode_len(), "{name}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn input_csv_round_trips(id in 0u64..1000, seed in any::<u64>(), which in 0usize..3) {
        let env = EnvConfig::preset(["gridworld", "motivating2", "abr"][which]).unwrap();
        let input = env.generate_input(id, seed).unwrap();
        let back = env.input_from_csv(id, &EnvConfig::input_to_csv(&input)).unwrap();
        prop_assert_eq!(back.rows().collect::<Vec<_>>(), input.rows().collect::<Vec<_>>());
    }

    #[test]
    fn returns_satisfy_the_bellman_recursion(
        rewards in prop::collection::vec(-100.0f64..100.0, 1..50),
        gamma in 0.0f64..=1.0,
    ) {
        let g = discounted_returns(&rewards, gamma).unwrap();
        let n = rewards.len();
        prop_assert!((g[n - 1] - rewards[n - 1]).abs() < 1e-9);
        for t in 0..n - 1 {
            prop_assert!((g[t] - rewards[t] - gamma * g[t + 1]).abs() < 1e-7 * (1.0 + g[t].abs()));
        }
    }

    #[test]
    fn gridworld_inputs_are_unit_steps(id in 0u64..100, seed in any::<u64>(), p in 0.0f64..=1.0) {
        let env = EnvConfig::Gridworld(GridWorldConfig { input_persistence: p, ..Default::default() });
        let input = env.generate_input(id, seed).unwrap();
        prop_assert_eq!(input.len(), env.episode_len());
        for row in input.rows() {
            prop_assert!(row == [1.0] || row == [-1.0]);
        }
    }
}
