//! Property tests over the numeric core: randomized inputs exercise the
//! normalization, shape and finiteness invariants, and random small shapes go
//! through the finite-difference gradient checker.

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

use ember_core::numerics::gradcheck::{check, DELTA, TOLERANCE};
use ember_core::numerics::layers::{
    bidirectional_encode, register_attention, register_gru, register_lstm, Attention, GruCell,
    LstmCell, Recurrent,
};
use ember_core::numerics::params::{register_weight, ParamStore, Session};
use ember_core::numerics::tape::{NodeId, Tape};
use ember_core::numerics::{AdamState, Tensor};

fn row(tape: &mut Tape, values: Vec<f64>) -> NodeId {
    tape.leaf(Tensor::row(values))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_is_a_distribution_for_any_finite_input(
        values in proptest::collection::vec(-30.0f64..30.0, 1..12)
    ) {
        let mut tape = Tape::new();
        let x = row(&mut tape, values);
        let s = tape.softmax_rows(x, None).unwrap();
        let weights = tape.value(s).data();
        let sum: f64 = weights.iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12, "sum {sum}");
        prop_assert!(weights.iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn bidirectional_output_length_matches_input(len in 1usize..=32) {
        let mut store = ParamStore::new();
        let mut rng = StdRng::seed_from_u64(17);
        register_gru(&mut store, "f", 3, 4, &mut rng).unwrap();
        register_gru(&mut store, "b", 3, 4, &mut rng).unwrap();
        let mut sess = Session::new(&store);
        let fwd = Recurrent::Gru(GruCell::bind(&mut sess, "f", 4).unwrap());
        let bwd = Recurrent::Gru(GruCell::bind(&mut sess, "b", 4).unwrap());
        let xs: Vec<NodeId> = (0..len)
            .map(|i| row(&mut sess.tape, vec![i as f64 * 0.1, -0.2, 0.3]))
            .collect();
        let out = bidirectional_encode(&mut sess.tape, &fwd, &bwd, &xs).unwrap();
        prop_assert_eq!(out.len(), len);
        for o in out {
            prop_assert_eq!(sess.tape.value(o).shape(), (1, 8));
        }
    }

    #[test]
    fn adam_zero_gradients_never_move_parameters(
        warmup_grads in proptest::collection::vec(-2.0f64..2.0, 1..6),
        lr in 1e-5f64..1e-1,
    ) {
        // Whatever momentum state earlier steps built up, a zero gradient
        // leaves every parameter untouched.
        let mut store = ParamStore::new();
        store.register("w", Tensor::row(vec![0.5; warmup_grads.len()])).unwrap();
        let mut adam = AdamState::new(lr);
        store.accumulate_grad("w", &warmup_grads).unwrap();
        adam.step(&mut store).unwrap();
        let before = store.get("w").unwrap().clone();
        store.zero_grads();
        adam.step(&mut store).unwrap();
        prop_assert_eq!(store.get("w").unwrap(), &before);
    }

    #[test]
    fn recurrent_cells_stay_finite_for_bounded_inputs(
        x1 in -10.0f64..10.0,
        x2 in -10.0f64..10.0,
        h0 in -1.0f64..1.0,
        seed in 0u64..1000,
    ) {
        let mut store = ParamStore::new();
        let mut rng = StdRng::seed_from_u64(seed);
        register_gru(&mut store, "g", 2, 3, &mut rng).unwrap();
        register_lstm(&mut store, "l", 2, 3, &mut rng).unwrap();
        let mut sess = Session::new(&store);
        let gru = GruCell::bind(&mut sess, "g", 3).unwrap();
        let lstm = LstmCell::bind(&mut sess, "l", 3).unwrap();
        let x = row(&mut sess.tape, vec![x1, x2]);
        let h = row(&mut sess.tape, vec![h0, -h0, h0 * 0.5]);
        let c = row(&mut sess.tape, vec![h0 * 2.0, 0.0, -h0]);

        let gh = gru.step(&mut sess.tape, x, h).unwrap();
        prop_assert!(sess.tape.value(gh).is_finite());
        // Convex gate mixing keeps the state inside (-1, 1) from |h| <= 1.
        prop_assert!(sess.tape.value(gh).data().iter().all(|v| v.abs() < 1.0));

        let (lh, lc) = lstm.step(&mut sess.tape, x, h, c).unwrap();
        prop_assert!(sess.tape.value(lh).is_finite());
        prop_assert!(sess.tape.value(lc).is_finite());
        prop_assert!(sess.tape.value(lh).data().iter().all(|v| v.abs() < 1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn gru_gradcheck_on_random_small_shapes(
        in_dim in 1usize..4,
        hidden in 1usize..4,
        len in 1usize..4,
        seed in 0u64..500,
    ) {
        let mut store = ParamStore::new();
        let mut rng = StdRng::seed_from_u64(seed);
        register_gru(&mut store, "g", in_dim, hidden, &mut rng).unwrap();
        let inputs: Vec<Vec<f64>> = (0..len)
            .map(|i| (0..in_dim).map(|j| ((i * 3 + j) as f64 * 0.37).sin()).collect())
            .collect();
        let loss = move |s: &ParamStore| -> ember_core::Result<(f64, BTreeMap<String, Tensor>)> {
            let mut sess = Session::new(s);
            let cell = Recurrent::Gru(GruCell::bind(&mut sess, "g", hidden)?);
            let xs: Vec<NodeId> = inputs.iter().map(|r| sess.leaf(Tensor::row(r.clone()))).collect();
            let outs = cell.run(&mut sess.tape, &xs)?;
            let stacked = sess.tape.concat_rows(&outs)?;
            let sq = sess.tape.mul(stacked, stacked)?;
            let l = sess.tape.sum_all(sq);
            Ok((sess.tape.value(l).item()?, sess.parameter_gradients(l)?))
        };
        let report = check(&mut store, loss, 24, DELTA, seed ^ 99).unwrap();
        prop_assert!(report.max_rel_err < TOLERANCE, "err {} at {}", report.max_rel_err, report.worst_path);
    }

    #[test]
    fn attention_gradcheck_on_random_small_shapes(
        width in 1usize..4,
        att in 1usize..4,
        n in 1usize..5,
        seed in 0u64..500,
    ) {
        let mut store = ParamStore::new();
        let mut rng = StdRng::seed_from_u64(seed);
        register_attention(&mut store, "a", width, att, &mut rng).unwrap();
        register_weight(&mut store, "readout", width, 1, &mut rng).unwrap();
        let rows_data: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..width).map(|j| ((i + 2 * j) as f64 * 0.61).cos()).collect())
            .collect();
        let loss = move |s: &ParamStore| -> ember_core::Result<(f64, BTreeMap<String, Tensor>)> {
            let mut sess = Session::new(s);
            let attn = Attention::bind(&mut sess, "a")?;
            let readout = sess.param("readout")?;
            let rows: Vec<NodeId> = rows_data.iter().map(|r| sess.leaf(Tensor::row(r.clone()))).collect();
            let (weights, pooled) = attn.pool(&mut sess.tape, &rows, None)?;
            let projected = sess.tape.matmul(pooled, readout)?;
            let wsq = sess.tape.mul(weights, weights)?;
            let a = sess.tape.sum_all(wsq);
            let b = sess.tape.sum_all(projected);
            let l = sess.tape.add(a, b)?;
            Ok((sess.tape.value(l).item()?, sess.parameter_gradients(l)?))
        };
        let report = check(&mut store, loss, 24, DELTA, seed ^ 7).unwrap();
        prop_assert!(report.max_rel_err < TOLERANCE, "err {} at {}", report.max_rel_err, report.worst_path);
    }
}
