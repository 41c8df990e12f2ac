use popo::nn::{adam_step, Activation, AdamConfig, AdamState, DenseNet};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn arb_net() -> impl Strategy<Value = (DenseNet<f64>, Vec<f64>, usize)> {
    (
        any::<u64>(),
        1usize..6,
        prop::collection::vec(1usize..9, 0..3),
        1usize..4,
        1usize..5,
    )
        .prop_flat_map(|(seed, inputs, hidden, outputs, rows)| {
            let net = DenseNet::mlp(
                inputs,
                &hidden,
                outputs,
                Activation::Relu,
                Activation::Tanh,
                &mut ChaCha8Rng::seed_from_u64(seed),
            )
            .unwrap();
            (
                Just(net),
                prop::collection::vec(-2.0f64..2.0, inputs * rows),
                Just(rows),
            )
        })
}

proptest! {
    #[test]
    fn adam_ignores_zero_gradients(
        params in prop::collection::vec(-10.0f64..10.0, 1..50),
        lr in 1e-5f64..1.0,
        steps in 1usize..20,
    ) {
        let mut p = params.clone();
        let mut state = AdamState::new(AdamConfig::with_lr(lr), p.len());
        let zeros = vec![0.0; p.len()];
        for _ in 0..steps {
            adam_step(&mut p, &zeros, &mut state).unwrap();
        }
        prop_assert_eq!(p, params);
    }

    #[test]
    fn forward_and_backward_are_deterministic((net, x, rows) in arb_net()) {
        let a = net.forward_trace(x.clone(), rows).unwrap();
        let b = net.forward_trace(x.clone(), rows).unwrap();
        prop_assert_eq!(a.output(), b.output());
        let up = vec![1.0; a.output().len()];
        let mut ga = vec![0.0; net.num_params()];
        let mut gb = vec![0.0; net.num_params()];
        let ia = net.backward(&a, &up, &mut ga, true).unwrap();
        let ib = net.backward(&b, &up, &mut gb, true).unwrap();
        prop_assert_eq!(ga, gb);
        prop_assert_eq!(ia, ib);
    }

    #[test]
    fn batch_rows_are_independent((net, x, rows) in arb_net()) {
        let batch = net.forward_batch(&x, rows).unwrap();
        let d = net.input_dim();
        let o = net.output_dim();
        for r in 0..rows {
            let single = net.forward(&x[r * d..(r + 1) * d]).unwrap();
            prop_assert_eq!(&batch[r * o..(r + 1) * o], &single[..]);
        }
    }
}
