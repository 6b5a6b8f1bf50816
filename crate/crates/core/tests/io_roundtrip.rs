use ciql_core::confidence::score_dataset;
use ciql_core::env::generate_dataset;
use ciql_core::io::{read_dataset, read_scored, write_dataset, write_scored};
use ciql_core::qfunc::{read_checkpoint, write_checkpoint};
use ciql_core::{ConfidenceConfig, DemonstratorSpec, EnvConfig, QModel};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dataset_and_scores_survive_a_round_trip(noise in 0.0f64..1.0, seed in 0u64..1_000, n in 0usize..4, two_stage: bool) {
        let env = EnvConfig { two_stage, ..EnvConfig::default() };
        let spec = DemonstratorSpec { noise_p: noise, seed, n_trajectories: n, category_target: None };
        let data = generate_dataset(&env, &[spec]).unwrap();

        let mut buf = Vec::new();
        write_dataset(&mut buf, &data).unwrap();
        prop_assert_eq!(&read_dataset(buf.as_slice()).unwrap(), &data);

        let conf = ConfidenceConfig::new(1.0, 0.05, 1.5, env.target).unwrap();
        let scored = score_dataset(&data, &conf);
        let mut buf = Vec::new();
        write_scored(&mut buf, &scored).unwrap();
        prop_assert_eq!(read_scored(buf.as_slice()).unwrap(), scored);
    }

    #[test]
    fn checkpoints_are_bit_exact(seed in 0u64..1_000, hidden in 1usize..12) {
        let model = QModel::dense(&[hidden], 9, 0.5, seed);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &model).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        let bits = |m: &QModel| m.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&model));
        prop_assert_eq!(back.kind(), model.kind());
    }
}
