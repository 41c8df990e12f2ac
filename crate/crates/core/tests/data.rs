use popo::data::{DataError, Dataset, DatasetBuilder, Manifest, Transition};
use popo::envs::{collect_dataset, BehaviorKind, BehaviorPolicy, EnvKind};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Emits the documented layout by hand, independent of the crate's encoder.
fn fixture_bytes(header_json: &str, rows: &[Vec<f32>]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(b"POPO");
    out.extend_from_slice(&[1, 0, 0, 0]);
    let len = header_json.len() as u32;
    out.extend_from_slice(&[
        len as u8,
        (len >> 8) as u8,
        (len >> 16) as u8,
        (len >> 24) as u8,
    ]);
    out.extend_from_slice(header_json.as_bytes());
    for row in rows {
        for v in row {
            let bits = v.to_bits();
            out.extend_from_slice(&[
                bits as u8,
                (bits >> 8) as u8,
                (bits >> 16) as u8,
                (bits >> 24) as u8,
            ]);
        }
    }
    out
}

#[test]
fn reads_independently_written_fixture() {
    let header = r#"{"env_id":"pendulum-v0","obs_dim":3,"act_dim":1,"max_action":2.0,"count":2,"manifest":{"policy":"fixture","episode_returns":[-1.5]}}"#;
    let rows = vec![
        vec![1.0, 0.0, 0.5, -2.0, -0.25, 0.9, 0.1, 0.4, 0.0],
        vec![0.9, 0.1, 0.4, 2.0, -0.125, 0.8, 0.2, 0.3, 1.0],
    ];
    let ds = Dataset::from_bytes(&fixture_bytes(header, &rows)).unwrap();
    assert_eq!(
        (ds.env_id(), ds.obs_dim(), ds.act_dim(), ds.len()),
        ("pendulum-v0", 3, 1, 2)
    );
    assert_eq!(ds.max_action(), 2.0);
    assert_eq!(ds.obs(), &[1.0, 0.0, 0.5, 0.9, 0.1, 0.4]);
    assert_eq!(ds.actions(), &[-2.0, 2.0]);
    assert_eq!(ds.rewards(), &[-0.25, -0.125]);
    assert_eq!(ds.next_obs(), &[0.9, 0.1, 0.4, 0.8, 0.2, 0.3]);
    assert_eq!(ds.dones(), &[0.0, 1.0]);
    assert_eq!(ds.manifest().policy.as_deref(), Some("fixture"));
    assert_eq!(ds.manifest().episode_returns, vec![-1.5]);
}

#[test]
fn fixture_error_paths() {
    let header = r#"{"env_id":"pointmass-v0","obs_dim":4,"act_dim":2,"max_action":1.0,"count":1,"manifest":{}}"#;
    let row = vec![vec![0.0f32; 12]];
    let good = fixture_bytes(header, &row);
    assert!(Dataset::from_bytes(&good).is_ok());

    let mut bad = good.clone();
    bad[0] = b'X';
    assert!(matches!(
        Dataset::from_bytes(&bad),
        Err(DataError::BadMagic { .. })
    ));

    let cut = &good[..good.len() - 4];
    match Dataset::from_bytes(cut) {
        Err(DataError::Truncated { expected, actual }) => {
            assert_eq!((expected, actual), (good.len(), good.len() - 4));
        }
        other => panic!("expected truncation error, got {other:?}"),
    }

    let wide = r#"{"env_id":"pointmass-v0","obs_dim":4,"act_dim":3,"max_action":1.0,"count":1,"manifest":{}}"#;
    assert!(matches!(
        Dataset::from_bytes(&fixture_bytes(wide, &row)),
        Err(DataError::Truncated { .. })
    ));
}

#[test]
fn file_size_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    for (env, n) in [(EnvKind::PointMass, 537), (EnvKind::Pendulum, 201)] {
        let ds = collect_dataset(env, &BehaviorPolicy::new(BehaviorKind::Random), n, 2, 1).unwrap();
        let path = dir.path().join("d.popo");
        ds.write(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let s = env.spec();
        let expected = 12 + header_len + n * (2 * s.obs_dim + s.act_dim + 2) * 4;
        assert_eq!(bytes.len(), expected);
    }
}

#[test]
fn collected_dataset_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let ds = collect_dataset(
        EnvKind::Pendulum,
        &BehaviorPolicy::new(BehaviorKind::Medium),
        450,
        9,
        1,
    )
    .unwrap();
    let path = dir.path().join("d.popo");
    ds.write(&path).unwrap();
    let back = Dataset::read(&path).unwrap();
    assert_eq!(back, ds);
    assert_eq!(back.content_hash(), ds.content_hash());
}

#[test]
fn sampling_is_uniform() {
    let mut b = DatasetBuilder::new("pointmass-v0", 1, 1, 1.0);
    for i in 0..100 {
        b.push(&Transition {
            obs: vec![i as f32],
            act: vec![0.0],
            reward: 0.0,
            next_obs: vec![0.0],
            done: 0.0,
        })
        .unwrap();
    }
    let ds = b.build(Manifest::default()).unwrap();
    let hash = ds.content_hash().to_string();
    let mut counts = [0u64; 100];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let batch = ds.sample::<f64, _>(1000, &mut rng).unwrap();
        for (k, &i) in batch.indices.iter().enumerate() {
            assert_eq!(batch.obs[k], i as f64);
            counts[i] += 1;
        }
    }
    let expected = 1e6 / 100.0;
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let p = 1.0 - ChiSquared::new(99.0).unwrap().cdf(chi2);
    assert!(p > 1e-3, "chi2 {chi2}, p {p}");
    assert_eq!(ds.content_hash(), hash);
}

fn arb_dataset() -> impl Strategy<Value = Dataset> {
    (1usize..5, 1usize..4, 0usize..20).prop_flat_map(|(o, a, n)| {
        let row = (
            prop::collection::vec(-1e6f32..1e6, o),
            prop::collection::vec(-1f32..1.0, a),
            -1e3f32..0.0,
            prop::collection::vec(-1e6f32..1e6, o),
            prop::bool::ANY,
        );
        (
            prop::collection::vec(row, n),
            prop::option::of(any::<u64>()),
            prop::collection::vec(-1e4f64..0.0, 0..4),
        )
            .prop_map(move |(rows, seed, returns)| {
                let mut b = DatasetBuilder::new("pointmass-v0", o, a, 1.0);
                for (obs, act, reward, next_obs, done) in rows {
                    b.push(&Transition {
                        obs,
                        act,
                        reward,
                        next_obs,
                        done: if done { 1.0 } else { 0.0 },
                    })
                    .unwrap();
                }
                b.build(Manifest {
                    policy: Some("prop".into()),
                    seed,
                    mean_return: returns.first().copied(),
                    episode_returns: returns,
                    ..Manifest::default()
                })
                .unwrap()
            })
    })
}

proptest! {
    #[test]
    fn write_read_is_identity(ds in arb_dataset()) {
        let back = Dataset::from_bytes(&ds.to_bytes()).unwrap();
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(back.obs()), bits(ds.obs()));
        prop_assert_eq!(bits(back.actions()), bits(ds.actions()));
        prop_assert_eq!(bits(back.rewards()), bits(ds.rewards()));
        prop_assert_eq!(bits(back.next_obs()), bits(ds.next_obs()));
        prop_assert_eq!(bits(back.dones()), bits(ds.dones()));
        prop_assert_eq!(back.manifest(), ds.manifest());
        prop_assert_eq!(back.content_hash(), ds.content_hash());
    }
}
