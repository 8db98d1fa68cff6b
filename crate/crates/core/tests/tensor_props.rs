use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vroc_core::layers::uniform;
use vroc_core::seq::{lstm_run, lstm_step, LstmCell, LstmState};
use vroc_core::tensor::{ParamStore, Tape, Tensor};

fn vec_of(len: impl Into<prop::collection::SizeRange>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-20.0f64..20.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn softmax_is_a_positive_distribution(x in vec_of(1..12)) {
        let mut tape = Tape::new();
        let v = tape.vector(x).unwrap();
        let p = tape.softmax(v);
        let p = tape.value(p);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|&q| q > 0.0));
    }

    #[test]
    fn backward_is_linear_in_the_loss(x in vec_of(2..8), w in vec_of(2..8), c in -3.0f64..3.0) {
        let n = x.len().min(w.len());
        let x = Tensor::vector(x[..n].to_vec()).with_grad();
        let w = w[..n].to_vec();
        let losses = |tape: &mut Tape<'_>, xv| {
            let t = tape.tanh(xv);
            let wv = tape.vector(w.clone()).unwrap();
            let a = tape.mul(t, wv).unwrap();
            let a = tape.sum(a);
            let s = tape.softmax(xv);
            let l = tape.log(s).unwrap();
            let b = tape.pick(l, 0).unwrap();
            (a, b)
        };

        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let (a, b) = losses(&mut tape, xv);
        let cb = tape.scale(b, c);
        let both = tape.add(a, cb).unwrap();
        let g_both = tape.backward(both).unwrap().wrt(&tape, xv);

        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let (a, _) = losses(&mut tape, xv);
        let g_a = tape.backward(a).unwrap().wrt(&tape, xv);

        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let (_, b) = losses(&mut tape, xv);
        let g_b = tape.backward(b).unwrap().wrt(&tape, xv);

        for i in 0..n {
            prop_assert!((g_both[i] - (g_a[i] + c * g_b[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn replaying_a_tape_is_bit_identical(x in vec_of(3..9), seed in any::<u64>()) {
        let x = Tensor::vector(x).with_grad();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut tape = Tape::training();
            let xv = tape.leaf(&x);
            let d = tape.dropout(xv, 0.3, &mut rng);
            let s = tape.sigmoid(d);
            let q = tape.square(s);
            let l = tape.mean(q);
            tape.backward(l).unwrap().wrt(&tape, xv)
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn lstm_gates_stay_in_range(
        seed in any::<u64>(),
        input in 1usize..5,
        hidden in 1usize..6,
        steps in 1usize..6,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "c", input, hidden, &mut rng);
        for t in store.tensors_mut() {
            let scaled: Vec<f64> = uniform(t.shape(), 1.5, &mut rng).into_data();
            t.data_mut().copy_from_slice(&scaled);
        }
        let mut state = LstmState::zeros(hidden);
        for _ in 0..steps {
            let x = uniform(&[input], 2.0, &mut rng).into_data();
            let (next, gates) = lstm_step(&store, &cell, &state, &x).unwrap();
            for g in gates.forget.iter().chain(&gates.input).chain(&gates.output) {
                prop_assert!(*g > 0.0 && *g < 1.0);
            }
            prop_assert!(gates.candidate.iter().all(|v| v.abs() < 1.0));
            prop_assert!(next.h.iter().all(|v| v.abs() < 1.0));
            state = next;
        }
    }

    #[test]
    fn lstm_outputs_are_causal(seed in any::<u64>(), len in 2usize..8, k in 1usize..8) {
        let k = k.min(len);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "c", 3, 4, &mut rng);
        let xs: Vec<Vec<f64>> = (0..len).map(|_| uniform(&[3], 1.0, &mut rng).into_data()).collect();
        let full = lstm_run(&store, &cell, &xs).unwrap();
        let prefix = lstm_run(&store, &cell, &xs[..k]).unwrap();
        prop_assert_eq!(&full[..k], &prefix[..]);
        prop_assert_eq!(lstm_run(&store, &cell, &xs).unwrap(), full);
    }
}
