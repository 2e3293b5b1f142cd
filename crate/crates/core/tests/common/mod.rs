#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use serkit::dataset::NUM_CLASSES;
use serkit::models::{Batch, Model, ModelKind, ModelSpec};
use serkit::numcore::{
    bilstm, lstm_cell, LstmSlots, Matrix, ParamId, ParamStore, Segments, Tape, Var,
};
use serkit::train::Confusion;

pub const FD_EPS: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Entries in `±[0.1, 1]`, away from the kink of relu.
pub fn rand_matrix_off_zero(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| {
            let v: f64 = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Scalar loss `Σ x ⊙ R` with a fixed pseudo-random `R` per shape.
pub fn project(tape: &mut Tape, x: Var) -> Var {
    let (r, c) = tape.value(x).shape();
    let weights = rand_matrix(r, c, &mut rng((r * 1000 + c) as u64));
    let w = tape.input(weights);
    let y = tape.mul(x, w).unwrap();
    tape.sum_all(y)
}

/// Largest relative error between backprop gradients and central
/// differences over every scalar of every slot in `store`.
pub fn gradcheck<F>(store: &mut ParamStore, build: F) -> f64
where
    F: Fn(&mut Tape, &ParamStore) -> Var,
{
    let mut tape = Tape::new();
    let loss = build(&mut tape, store);
    store.zero_grads();
    tape.backward(loss, store).unwrap();
    let ids: Vec<ParamId> = store.ids().collect();
    let grads: Vec<Matrix> = ids.iter().map(|&id| store.grad(id).clone()).collect();
    let eval = |store: &ParamStore| {
        let mut t = Tape::new();
        let l = build(&mut t, store);
        t.value(l).get(0, 0)
    };
    let mut worst = 0.0f64;
    for (id, grad) in ids.into_iter().zip(grads) {
        for i in 0..grad.len() {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + FD_EPS;
            let plus = eval(store);
            store.value_mut(id).data_mut()[i] = orig - FD_EPS;
            let minus = eval(store);
            store.value_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * FD_EPS);
            worst = worst.max(rel_err(grad.data()[i], numeric));
        }
    }
    worst
}

fn store_of(mats: Vec<(&str, Matrix)>) -> (ParamStore, Vec<ParamId>) {
    let mut store = ParamStore::new();
    let ids = mats
        .into_iter()
        .map(|(n, m)| store.add(n, m).unwrap())
        .collect();
    (store, ids)
}

fn bind_all(tape: &mut Tape, store: &ParamStore, ids: &[ParamId]) -> Vec<Var> {
    ids.iter().map(|&id| tape.param(store, id)).collect()
}

/// Gradient check of every tape operation on small random inputs.
pub fn op_gradchecks() -> Vec<(&'static str, f64)> {
    let mut r = rng(42);
    let segs = Segments::new(vec![3, 1, 2], 3).unwrap();
    let audio = Segments::new(vec![3, 2], 3).unwrap();
    let text = Segments::new(vec![2, 1], 2).unwrap();
    let mut out = Vec::new();

    macro_rules! case {
        ($name:expr, [$($n:expr => $m:expr),*], |$t:ident, $v:ident| $body:expr) => {{
            let (mut store, ids) = store_of(vec![$(($n, $m)),*]);
            let err = gradcheck(&mut store, |$t, s| {
                let $v = bind_all($t, s, &ids);
                let y: Var = $body;
                project($t, y)
            });
            out.push(($name, err));
        }};
    }

    case!("matmul", ["a" => rand_matrix(3, 4, &mut r), "b" => rand_matrix(4, 2, &mut r)],
        |t, v| t.matmul(v[0], v[1]).unwrap());
    case!("dense", ["x" => rand_matrix(3, 4, &mut r), "w" => rand_matrix(4, 2, &mut r), "b" => rand_matrix(1, 2, &mut r)],
        |t, v| t.dense(v[0], v[1], v[2]).unwrap());
    case!("add", ["a" => rand_matrix(2, 3, &mut r), "b" => rand_matrix(2, 3, &mut r)],
        |t, v| t.add(v[0], v[1]).unwrap());
    case!("mul", ["a" => rand_matrix(2, 3, &mut r), "b" => rand_matrix(2, 3, &mut r)],
        |t, v| t.mul(v[0], v[1]).unwrap());
    case!("relu", ["x" => rand_matrix_off_zero(3, 3, &mut r)], |t, v| t.relu(v[0]));
    case!("tanh", ["x" => rand_matrix(3, 3, &mut r)], |t, v| t.tanh(v[0]));
    case!("sigmoid", ["x" => rand_matrix(3, 3, &mut r)], |t, v| t.sigmoid(v[0]));
    case!("dropout", ["x" => rand_matrix(4, 5, &mut r)], |t, v| {
        let mut mask_rng = rng(5);
        t.dropout(v[0], 0.3, true, &mut mask_rng).unwrap()
    });
    case!("concat_cols", ["a" => rand_matrix(3, 2, &mut r), "b" => rand_matrix(3, 4, &mut r)],
        |t, v| t.concat_cols(v[0], v[1]).unwrap());
    case!("slice_cols", ["x" => rand_matrix(3, 5, &mut r)], |t, v| t.slice_cols(v[0], 1, 4).unwrap());
    case!("gather_rows", ["x" => rand_matrix(4, 3, &mut r)],
        |t, v| t.gather_rows(v[0], vec![2, 0, 2, 3]).unwrap());
    case!("stack_steps", ["a" => rand_matrix(2, 3, &mut r), "b" => rand_matrix(2, 3, &mut r), "c" => rand_matrix(2, 3, &mut r)],
        |t, v| t.stack_steps(v.clone()).unwrap());
    case!("select_rows", ["a" => rand_matrix(3, 2, &mut r), "b" => rand_matrix(3, 2, &mut r)],
        |t, v| t.select_rows(v[0], v[1], vec![true, false, true]).unwrap());
    case!("seg_mean", ["x" => rand_matrix(9, 3, &mut r)], |t, v| t.seg_mean(v[0], &segs).unwrap());
    case!("seg_max", ["x" => rand_matrix(9, 3, &mut r)], |t, v| t.seg_max(v[0], &segs).unwrap());
    case!("attn_pool", ["x" => rand_matrix(9, 3, &mut r), "s" => rand_matrix(9, 1, &mut r)],
        |t, v| t.attn_pool(v[0], v[1], &segs).unwrap());
    case!("pairwise_add", ["a" => rand_matrix(6, 3, &mut r), "e" => rand_matrix(4, 3, &mut r)],
        |t, v| t.pairwise_add(v[0], v[1], &audio, &text).unwrap());
    case!("align_pool", ["x" => rand_matrix(6, 3, &mut r), "s" => rand_matrix(12, 1, &mut r)],
        |t, v| t.align_pool(v[0], v[1], &audio, &text).unwrap());

    let (mut store, ids) = store_of(vec![("z", rand_matrix(3, 4, &mut r).map(|x| 3.0 * x))]);
    let err = gradcheck(&mut store, |t, s| {
        let z = t.param(s, ids[0]);
        t.softmax_xent(z, &[1, 3, 0]).unwrap()
    });
    out.push(("softmax_xent", err));

    let (mut store, ids) = store_of(vec![("w", rand_matrix(2, 3, &mut r))]);
    let err = gradcheck(&mut store, |t, s| {
        let w = t.param(s, ids[0]);
        let y = t.tanh(w);
        t.sum_all(y)
    });
    out.push(("sum_all", err));

    let mut store = ParamStore::new();
    let cell = LstmSlots::register(&mut store, "cell", 3, 2, &mut r).unwrap();
    let x_id = store.add("x", rand_matrix(2, 3, &mut r)).unwrap();
    let h_id = store.add("h", rand_matrix(2, 2, &mut r)).unwrap();
    let c_id = store.add("c", rand_matrix(2, 2, &mut r)).unwrap();
    let err = gradcheck(&mut store, |t, s| {
        let p = cell.bind(t, s);
        let (x, h, c) = (t.param(s, x_id), t.param(s, h_id), t.param(s, c_id));
        let (h, c) = lstm_cell(t, x, h, c, &p).unwrap();
        let both = t.concat_cols(h, c).unwrap();
        project(t, both)
    });
    out.push(("lstm_cell", err));

    let mut store = ParamStore::new();
    let fwd = LstmSlots::register(&mut store, "fwd", 2, 3, &mut r).unwrap();
    let bwd = LstmSlots::register(&mut store, "bwd", 2, 3, &mut r).unwrap();
    let x_id = store.add("x", rand_matrix(9, 2, &mut r)).unwrap();
    let err = gradcheck(&mut store, |t, s| {
        let (f, b) = (fwd.bind(t, s), bwd.bind(t, s));
        let x = t.param(s, x_id);
        let states = bilstm(t, x, &segs, &f, &b).unwrap();
        let pooled = t.seg_mean(states, &segs).unwrap();
        project(t, pooled)
    });
    out.push(("bilstm", err));
    out
}

/// Spec with toy widths so every head fits a quick gradient check.
pub fn toy_spec(kind: ModelKind) -> ModelSpec {
    let mut spec = ModelSpec::new(kind, 4);
    match kind {
        ModelKind::MlpPool => spec.mlp_hidden = vec![5, 3],
        ModelKind::BimodalAlign => {
            spec.text_dim = Some(3);
            spec.rnn_hidden = 2;
            spec.attn_dim = 3;
        }
        _ => {}
    }
    spec
}

pub fn random_sequences(lengths: &[usize], dim: usize, rng: &mut impl Rng) -> Vec<Matrix> {
    lengths.iter().map(|&t| rand_matrix(t, dim, rng)).collect()
}

pub fn batch_for(spec: &ModelSpec, audio: &[Matrix], text: Option<&[Matrix]>) -> Batch {
    match (spec.kind, text) {
        (ModelKind::BimodalAlign, Some(text)) => Batch::bimodal(audio, text).unwrap(),
        _ => Batch::acoustic(audio).unwrap(),
    }
}

/// Gradient check of a whole head: softmax loss over a two-utterance
/// batch, dropout active with a fixed mask.
pub fn head_gradcheck(kind: ModelKind) -> f64 {
    let mut r = rng(7 + kind as u64);
    let spec = toy_spec(kind);
    let mut model = Model::new(spec.clone(), &mut r).unwrap();
    // The 3-frame / 2-token instance, next to a shorter padded partner.
    let audio = random_sequences(&[3, 2], spec.input_dim, &mut r);
    let text = spec.text_dim.map(|d| random_sequences(&[2, 1], d, &mut r));
    let batch = batch_for(&spec, &audio, text.as_deref());
    let labels = [2, 0];

    let loss_of = |model: &Model, tape: &mut Tape| {
        let mut mask_rng = rng(11);
        let out = model.forward(tape, &batch, true, &mut mask_rng).unwrap();
        tape.softmax_xent(out.logits, &labels).unwrap()
    };
    let mut tape = Tape::new();
    let loss = loss_of(&model, &mut tape);
    model.params_mut().zero_grads();
    tape.backward(loss, model.params_mut()).unwrap();
    let ids: Vec<ParamId> = model.params().ids().collect();
    let grads: Vec<Matrix> = ids.iter().map(|&id| model.params().grad(id).clone()).collect();
    let eval = |model: &Model| {
        let mut t = Tape::new();
        let l = loss_of(model, &mut t);
        t.value(l).get(0, 0)
    };
    let mut worst = 0.0f64;
    for (id, grad) in ids.into_iter().zip(grads) {
        for i in 0..grad.len() {
            let orig = model.params().value(id).data()[i];
            model.params_mut().value_mut(id).data_mut()[i] = orig + FD_EPS;
            let plus = eval(&model);
            model.params_mut().value_mut(id).data_mut()[i] = orig - FD_EPS;
            let minus = eval(&model);
            model.params_mut().value_mut(id).data_mut()[i] = orig;
            worst = worst.max(rel_err(grad.data()[i], (plus - minus) / (2.0 * FD_EPS)));
        }
    }
    worst
}

/// Largest difference between the logits of a padded batch and of each
/// utterance run alone, over random lengths in 1..=50.
pub fn masked_batch_gap(spec: &ModelSpec, seed: u64) -> f64 {
    let mut r = rng(seed);
    let model = Model::new(spec.clone(), &mut r).unwrap();
    let lengths: Vec<usize> = (0..6).map(|_| r.gen_range(1..=50)).collect();
    let audio = random_sequences(&lengths, spec.input_dim, &mut r);
    let text = spec.text_dim.map(|d| {
        let tl: Vec<usize> = (0..6).map(|_| r.gen_range(1..=12)).collect();
        random_sequences(&tl, d, &mut r)
    });
    let batched = model
        .predict(&batch_for(spec, &audio, text.as_deref()))
        .unwrap();
    let mut worst = 0.0f64;
    for b in 0..audio.len() {
        let one_text = text.as_ref().map(|t| vec![t[b].clone()]);
        let single = model
            .predict(&batch_for(spec, &audio[b..=b], one_text.as_deref()))
            .unwrap();
        for (x, y) in batched.row(b).iter().zip(single.row(0)) {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}

/// Confusion matrix with recall and accuracy computed from the expanded
/// list of (truth, prediction) pairs.
pub fn oracle_metrics(counts: &[[u64; NUM_CLASSES]; NUM_CLASSES]) -> (f64, f64) {
    let mut pairs = Vec::new();
    for (t, row) in counts.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            pairs.extend(std::iter::repeat((t, p)).take(n as usize));
        }
    }
    let mut recalls = Vec::new();
    for c in 0..NUM_CLASSES {
        let of_class: Vec<_> = pairs.iter().filter(|(t, _)| *t == c).collect();
        if !of_class.is_empty() {
            let hit = of_class.iter().filter(|(_, p)| *p == c).count();
            recalls.push(hit as f64 / of_class.len() as f64);
        }
    }
    let ua = recalls.iter().sum::<f64>() / recalls.len() as f64;
    let wa = pairs.iter().filter(|(t, p)| t == p).count() as f64 / pairs.len() as f64;
    (ua, wa)
}

pub fn random_confusion(rng: &mut impl Rng) -> Confusion {
    let mut counts = [[0u64; NUM_CLASSES]; NUM_CLASSES];
    for row in counts.iter_mut() {
        // Occasionally leave a class without test examples.
        if rng.gen_bool(0.1) {
            continue;
        }
        for v in row.iter_mut() {
            *v = rng.gen_range(0..25);
        }
    }
    counts[0][0] += 1;
    Confusion::from_counts(counts)
}

/// Runs `evaluate` on a mean-pool model whose output layer is the identity
/// and whose inputs are one-hot rows, so that every example is predicted
/// as the class of its one-hot position. Reproduces `target` exactly.
pub fn evaluate_confusion(target: &Confusion) -> Confusion {
    use serkit::dataset::Emotion;
    use serkit::train::{evaluate, Example};

    let spec = ModelSpec::new(ModelKind::MeanPool, NUM_CLASSES).with_dropout(0.0);
    let mut params = ParamStore::new();
    params.add("out.w", Matrix::identity(NUM_CLASSES)).unwrap();
    params.add("out.b", Matrix::zeros(1, NUM_CLASSES)).unwrap();
    let model = Model::from_params(spec, params).unwrap();
    let mut examples = Vec::new();
    for (t, row) in target.counts.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            let mut x = Matrix::zeros(1, NUM_CLASSES);
            x.set(0, p, 1.0);
            for i in 0..n {
                examples.push(Example {
                    id: format!("{t}-{p}-{i}"),
                    label: Emotion::from_index(t).unwrap(),
                    audio: x.clone(),
                    text: None,
                });
            }
        }
    }
    evaluate(&model, &examples).unwrap()
}

/// Computed by a throwaway numpy script: naive DFT of the zero-padded
/// Hamming-windowed frame, explicit HTK triangular filterbank, log with a
/// 1e-10 floor and scipy's orthonormal DCT-II.
pub const FIXTURE_MFCC: [f64; serkit::lld::MFCC_COUNT] = [
    -38.55495784956816,
    16.15577166369909,
    -4.678173833434533,
    4.677808776932382,
    0.4526315176536492,
    -0.24907506508724242,
    3.398276188322513,
    -10.711939247683846,
    -12.676695768527647,
    0.9987939959407893,
    0.2955438261072856,
    -1.9667989875280116,
    1.6968768295964556,
];

pub const FIXTURE_ENERGY: f64 = 0.1610074213876478;

pub fn fixture_frame() -> Vec<f64> {
    use std::f64::consts::PI;
    let sr = serkit::lld::SAMPLE_RATE as f64;
    (0..800)
        .map(|n| {
            let t = n as f64 / sr;
            0.5 * (2.0 * PI * 300.0 * t).sin()
                + 0.25 * (2.0 * PI * 1234.0 * t).sin()
                + 0.1 * (2.0 * PI * 3000.0 * t + 0.3).cos()
        })
        .collect()
}
