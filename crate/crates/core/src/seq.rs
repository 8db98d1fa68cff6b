//! LSTM cell, unidirectional runner and bidirectional wrapper.
//!
//! The cell follows the classic gate equations over the concatenation
//! `[h_{t-1}, w_t]`:
//!
//! ```text
//! f_t = σ(W_f·[h_{t-1}, w_t] + b_f)
//! i_t = σ(W_i·[h_{t-1}, w_t] + b_i)
//! C̄_t = tanh(W_C·[h_{t-1}, w_t] + b_C)
//! C_t = f_t ∗ C_{t-1} + i_t ∗ C̄_t
//! o_t = σ(W_o·[h_{t-1}, w_t] + b_o)
//! h_t = o_t ∗ tanh(C_t)
//! ```

use rand::Rng;

use crate::layers::uniform;
use crate::tensor::{Bound, ParamId, ParamStore, Result, Tape, Tensor, TensorError, Var};

/// Parameter handles of one LSTM cell. Every weight is `[H, H + D]`, every
/// bias `[H]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub input_dim: usize,
    pub hidden: usize,
    pub w_o: ParamId,
    pub w_f: ParamId,
    pub w_i: ParamId,
    pub w_c: ParamId,
    pub b_o: ParamId,
    pub b_f: ParamId,
    pub b_i: ParamId,
    pub b_c: ParamId,
}

/// Tape handles for `(h_t, C_t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LstmVars {
    pub h: Var,
    pub c: Var,
}

/// One recorded step including its gate activations.
#[derive(Debug, Clone, Copy)]
pub struct LstmStep {
    pub state: LstmVars,
    pub forget: Var,
    pub input: Var,
    pub output: Var,
    pub candidate: Var,
}

impl LstmCell {
    /// Uniform(-1/√H, 1/√H) weights, forget bias 1, other biases 0.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        let shape = [hidden, hidden + input_dim];
        let w_o = store.add(format!("{prefix}.w_o"), uniform(&shape, k, rng));
        let w_f = store.add(format!("{prefix}.w_f"), uniform(&shape, k, rng));
        let w_i = store.add(format!("{prefix}.w_i"), uniform(&shape, k, rng));
        let w_c = store.add(format!("{prefix}.w_c"), uniform(&shape, k, rng));
        let b_o = store.add(format!("{prefix}.b_o"), Tensor::zeros(&[hidden]));
        let b_f = store.add(format!("{prefix}.b_f"), Tensor::from_fn(&[hidden], |_| 1.0));
        let b_i = store.add(format!("{prefix}.b_i"), Tensor::zeros(&[hidden]));
        let b_c = store.add(format!("{prefix}.b_c"), Tensor::zeros(&[hidden]));
        Self {
            input_dim,
            hidden,
            w_o,
            w_f,
            w_i,
            w_c,
            b_o,
            b_f,
            b_i,
            b_c,
        }
    }

    pub fn zero_state(&self, tape: &mut Tape<'_>) -> LstmVars {
        let h = tape.vector(vec![0.0; self.hidden]).expect("hidden > 0");
        let c = tape.vector(vec![0.0; self.hidden]).expect("hidden > 0");
        LstmVars { h, c }
    }

    pub fn params(&self) -> [ParamId; 8] {
        [
            self.w_o, self.w_f, self.w_i, self.w_c, self.b_o, self.b_f, self.b_i, self.b_c,
        ]
    }

    fn gate(&self, tape: &mut Tape<'_>, bound: &Bound, w: ParamId, b: ParamId, hx: Var) -> Result<Var> {
        let wx = tape.matmul(bound[w], hx)?;
        tape.add(wx, bound[b])
    }

    pub fn step(&self, tape: &mut Tape<'_>, bound: &Bound, state: LstmVars, x: Var) -> Result<LstmStep> {
        if tape.shape(x) != [self.input_dim] {
            return Err(TensorError::ShapeMismatch {
                op: "lstm_step input",
                left: vec![self.input_dim],
                right: tape.shape(x).to_vec(),
            });
        }
        if tape.shape(state.h) != [self.hidden] || tape.shape(state.c) != [self.hidden] {
            return Err(TensorError::ShapeMismatch {
                op: "lstm_step state",
                left: vec![self.hidden],
                right: tape.shape(state.h).to_vec(),
            });
        }
        let hx = tape.concat(&[state.h, x])?;
        let f_pre = self.gate(tape, bound, self.w_f, self.b_f, hx)?;
        let forget = tape.sigmoid(f_pre);
        let i_pre = self.gate(tape, bound, self.w_i, self.b_i, hx)?;
        let input = tape.sigmoid(i_pre);
        let c_pre = self.gate(tape, bound, self.w_c, self.b_c, hx)?;
        let candidate = tape.tanh(c_pre);
        let keep = tape.mul(forget, state.c)?;
        let write = tape.mul(input, candidate)?;
        let c = tape.add(keep, write)?;
        let o_pre = self.gate(tape, bound, self.w_o, self.b_o, hx)?;
        let output = tape.sigmoid(o_pre);
        let tc = tape.tanh(c);
        let h = tape.mul(output, tc)?;
        Ok(LstmStep {
            state: LstmVars { h, c },
            forget,
            input,
            output,
            candidate,
        })
    }
}

/// Runs the cell over a sequence from the zero state.
pub fn lstm_forward(tape: &mut Tape<'_>, cell: &LstmCell, bound: &Bound, inputs: &[Var]) -> Result<Vec<LstmVars>> {
    let init = cell.zero_state(tape);
    lstm_forward_from(tape, cell, bound, init, inputs)
}

pub fn lstm_forward_from(
    tape: &mut Tape<'_>,
    cell: &LstmCell,
    bound: &Bound,
    init: LstmVars,
    inputs: &[Var],
) -> Result<Vec<LstmVars>> {
    if inputs.is_empty() {
        return Err(TensorError::Invalid("lstm_forward: empty sequence".into()));
    }
    let mut state = init;
    let mut out = Vec::with_capacity(inputs.len());
    for &x in inputs {
        state = cell.step(tape, bound, state, x)?.state;
        out.push(state);
    }
    Ok(out)
}

/// Per-step `[forward h_t ; backward h_t]`, where the backward half is the
/// backward cell run over the reversed sequence and re-reversed.
pub fn bilstm_forward(
    tape: &mut Tape<'_>,
    fwd: &LstmCell,
    bwd: &LstmCell,
    bound: &Bound,
    inputs: &[Var],
) -> Result<Vec<Var>> {
    if fwd.hidden != bwd.hidden {
        return Err(TensorError::Invalid(format!(
            "bilstm: hidden sizes differ ({} vs {})",
            fwd.hidden, bwd.hidden
        )));
    }
    let forward = lstm_forward(tape, fwd, bound, inputs)?;
    let reversed: Vec<Var> = inputs.iter().rev().copied().collect();
    let mut backward = lstm_forward(tape, bwd, bound, &reversed)?;
    backward.reverse();
    forward
        .iter()
        .zip(&backward)
        .map(|(f, b)| tape.concat(&[f.h, b.h]))
        .collect()
}

/// Plain-value LSTM state.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Gate activations of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct GateValues {
    pub forget: Vec<f64>,
    pub input: Vec<f64>,
    pub output: Vec<f64>,
    pub candidate: Vec<f64>,
}

/// Value-level single step, evaluated on a scratch tape.
pub fn lstm_step(
    store: &ParamStore,
    cell: &LstmCell,
    state: &LstmState,
    input: &[f64],
) -> Result<(LstmState, GateValues)> {
    if state.h.len() != cell.hidden || state.c.len() != cell.hidden {
        return Err(TensorError::ShapeMismatch {
            op: "lstm_step state",
            left: vec![cell.hidden],
            right: vec![state.h.len(), state.c.len()],
        });
    }
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape, false);
    let h = tape.vector(state.h.clone())?;
    let c = tape.vector(state.c.clone())?;
    let x = tape.vector(input.to_vec())?;
    let step = cell.step(&mut tape, &bound, LstmVars { h, c }, x)?;
    Ok((
        LstmState {
            h: tape.value(step.state.h).to_vec(),
            c: tape.value(step.state.c).to_vec(),
        },
        GateValues {
            forget: tape.value(step.forget).to_vec(),
            input: tape.value(step.input).to_vec(),
            output: tape.value(step.output).to_vec(),
            candidate: tape.value(step.candidate).to_vec(),
        },
    ))
}

/// Value-level run over a sequence of input vectors.
pub fn lstm_run(store: &ParamStore, cell: &LstmCell, inputs: &[Vec<f64>]) -> Result<Vec<LstmState>> {
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape, false);
    let xs = inputs
        .iter()
        .map(|x| tape.vector(x.clone()))
        .collect::<Result<Vec<_>>>()?;
    let states = lstm_forward(&mut tape, cell, &bound, &xs)?;
    Ok(states
        .iter()
        .map(|s| LstmState {
            h: tape.value(s.h).to_vec(),
            c: tape.value(s.c).to_vec(),
        })
        .collect())
}

/// Value-level bidirectional run.
pub fn bilstm_run(store: &ParamStore, fwd: &LstmCell, bwd: &LstmCell, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape, false);
    let xs = inputs
        .iter()
        .map(|x| tape.vector(x.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = bilstm_forward(&mut tape, fwd, bwd, &bound, &xs)?;
    Ok(out.iter().map(|&v| tape.value(v).to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zeroed(input: usize, hidden: usize) -> (ParamStore, LstmCell) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cell = LstmCell::new(&mut store, "cell", input, hidden, &mut rng);
        for t in store.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        (store, cell)
    }

    fn random(input: usize, hidden: usize, seed: u64) -> (ParamStore, LstmCell) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cell = LstmCell::new(&mut store, "cell", input, hidden, &mut rng);
        for t in store.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
        (store, cell)
    }

    #[test]
    fn zero_params_zero_state() {
        let (store, cell) = zeroed(3, 2);
        let (s, gates) = lstm_step(&store, &cell, &LstmState::zeros(2), &[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(gates.forget, vec![0.5; 2]);
        assert_eq!(gates.input, vec![0.5; 2]);
        assert_eq!(gates.output, vec![0.5; 2]);
        assert_eq!(gates.candidate, vec![0.0; 2]);
        assert_eq!(s, LstmState::zeros(2));
    }

    #[test]
    fn zero_params_unit_cell_hand_trace() {
        let (store, cell) = zeroed(1, 1);
        let start = LstmState { h: vec![0.0], c: vec![1.0] };
        let (s, _) = lstm_step(&store, &cell, &start, &[0.7]).unwrap();
        assert_eq!(s.c, vec![0.5]);
        assert!((s.h[0] - 0.5 * 0.5f64.tanh()).abs() < 1e-15);
        assert!((s.h[0] - 0.2311).abs() < 1e-4);
    }

    #[test]
    fn default_init_sets_forget_bias() {
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "c", 3, 4, &mut ChaCha8Rng::seed_from_u64(3));
        assert!(store.get(cell.b_f).data().iter().all(|&v| v == 1.0));
        let k = 0.5;
        assert!(store.get(cell.w_o).data().iter().all(|v| v.abs() <= k));
        assert_eq!(store.get(cell.w_c).shape(), &[4, 7]);
    }

    #[test]
    fn rejects_wrong_input_dim() {
        let (store, cell) = zeroed(3, 2);
        assert!(lstm_step(&store, &cell, &LstmState::zeros(2), &[1.0]).is_err());
        assert!(lstm_step(&store, &cell, &LstmState::zeros(3), &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn empty_sequence_rejected() {
        let (store, cell) = zeroed(2, 2);
        assert!(lstm_run(&store, &cell, &[]).is_err());
    }

    #[test]
    fn single_token_run_equals_step() {
        let (store, cell) = random(3, 4, 9);
        let x = vec![0.1, -0.4, 0.9];
        let run = lstm_run(&store, &cell, std::slice::from_ref(&x)).unwrap();
        let (s, _) = lstm_step(&store, &cell, &LstmState::zeros(4), &x).unwrap();
        assert_eq!(run, vec![s]);
    }

    #[test]
    fn three_step_run_is_composition_of_steps() {
        let (store, cell) = random(2, 3, 10);
        let xs = vec![vec![0.2, -1.0], vec![0.5, 0.5], vec![-0.3, 0.8]];
        let run = lstm_run(&store, &cell, &xs).unwrap();
        let mut s = LstmState::zeros(3);
        for (x, got) in xs.iter().zip(&run) {
            s = lstm_step(&store, &cell, &s, x).unwrap().0;
            assert_eq!(&s, got);
        }
    }

    #[test]
    fn runs_are_causal() {
        let (store, cell) = random(2, 3, 11);
        let xs: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 0.1, -(i as f64) * 0.2]).collect();
        let full = lstm_run(&store, &cell, &xs).unwrap();
        for k in 1..=6 {
            assert_eq!(lstm_run(&store, &cell, &xs[..k]).unwrap(), full[..k]);
        }
    }

    #[test]
    fn gate_ranges_hold() {
        let (store, cell) = random(4, 5, 12);
        let mut s = LstmState::zeros(5);
        for t in 0..20 {
            let x: Vec<f64> = (0..4).map(|j| ((t * 4 + j) as f64).sin() * 3.0).collect();
            let (next, g) = lstm_step(&store, &cell, &s, &x).unwrap();
            for v in g.forget.iter().chain(&g.input).chain(&g.output) {
                assert!(*v > 0.0 && *v < 1.0);
            }
            assert!(g.candidate.iter().all(|v| v.abs() < 1.0));
            assert!(next.h.iter().all(|v| v.abs() < 1.0));
            s = next;
        }
    }

    #[test]
    fn bilstm_single_token() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = LstmCell::new(&mut store, "f", 2, 3, &mut rng);
        let b = LstmCell::new(&mut store, "b", 2, 3, &mut rng);
        let x = vec![0.4, -0.1];
        let out = bilstm_run(&store, &f, &b, std::slice::from_ref(&x)).unwrap();
        let (sf, _) = lstm_step(&store, &f, &LstmState::zeros(3), &x).unwrap();
        let (sb, _) = lstm_step(&store, &b, &LstmState::zeros(3), &x).unwrap();
        assert_eq!(out[0], [sf.h, sb.h].concat());
    }

    #[test]
    fn bilstm_matches_two_directional_runs() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = LstmCell::new(&mut store, "f", 3, 2, &mut rng);
        let b = LstmCell::new(&mut store, "b", 3, 2, &mut rng);
        let xs: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let out = bilstm_run(&store, &f, &b, &xs).unwrap();
        let fw = lstm_run(&store, &f, &xs).unwrap();
        let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
        let mut bw = lstm_run(&store, &b, &rev).unwrap();
        bw.reverse();
        for t in 0..4 {
            assert_eq!(out[t], [fw[t].h.clone(), bw[t].h.clone()].concat());
        }
    }

    #[test]
    fn bilstm_palindrome_symmetry() {
        // Same parameters in both directions on a palindrome: the output read
        // backwards equals the output with halves swapped.
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = LstmCell::new(&mut store, "f", 2, 3, &mut rng);
        let b = LstmCell { ..f.clone() };
        let xs = vec![vec![0.1, 0.2], vec![-0.5, 0.3], vec![0.9, -0.9], vec![-0.5, 0.3], vec![0.1, 0.2]];
        let out = bilstm_run(&store, &f, &b, &xs).unwrap();
        let n = out.len();
        for t in 0..n {
            let swapped = [out[n - 1 - t][3..].to_vec(), out[n - 1 - t][..3].to_vec()].concat();
            assert_eq!(out[t], swapped);
        }
    }

    #[test]
    fn step_gradients_match_finite_differences() {
        let (store, cell) = random(3, 2, 13);
        let mut point: Vec<Tensor> = cell.params().iter().map(|&id| store.get(id).clone()).collect();
        point.push(Tensor::vector(vec![0.3, -0.6]));
        point.push(Tensor::vector(vec![0.2, 0.1]));
        point.push(Tensor::vector(vec![1.0, -0.5, 0.25]));
        let report = grad_check(
            |tape, v| {
                // The store holds only this cell, so ids 0..8 are its params.
                let bound = Bound::from_vars(v[..8].to_vec());
                let step = cell.step(tape, &bound, LstmVars { h: v[8], c: v[9] }, v[10])?;
                let hs = tape.sum(step.state.h);
                let cs = tape.sum(step.state.c);
                let cs = tape.scale(cs, 0.5);
                tape.add(hs, cs)
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
