//! Gradient checks of whole models on sampled parameters.

use misinfo::encoder::{EncoderConfig, EncoderModel, Preset};
use misinfo::heads::{Head, HeadConfig, HeadVariant};
use misinfo::params::truncated_normal;
use misinfo::{ParamStore, SeedTree, Tape, Tensor, Var};
use rand::Rng;

use super::gradcheck::{check_params, Report};
use super::reference::{self, EncoderShape, ResNetShape};

pub const PICKS: usize = 50;


/// `count` (name, index) pairs; `rows_used` limits embedding tables to rows
/// the inputs actually touch, so samples are not trivially zero.
fn sample_picks(
    store: &ParamStore,
    seed: u64,
    count: usize,
    rows_used: &dyn Fn(&str) -> Option<(usize, usize)>,
) -> Vec<(String, usize)> {
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut rng = SeedTree::new(seed).rng();
    (0..count)
        .map(|_| {
            let name = names[rng.gen_range(0..names.len())].clone();
            let t = store.get(&name).unwrap();
            let index = match rows_used(&name) {
                Some((rows, width)) => rng.gen_range(0..rows * width),
                None => rng.gen_range(0..t.len()),
            };
            (name, index)
        })
        .collect()
}

/// Tape gradients of `f` for every parameter of `store`.
fn tape_grads(store: &ParamStore, f: impl Fn(&mut Tape, &ParamStore) -> Var) -> ParamStore {
    let mut tape = Tape::new();
    let loss = f(&mut tape, store);
    tape.backward(loss).unwrap();
    let mut with_grads = store.clone();
    with_grads.collect_grads(&tape);
    with_grads
}

fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| f64::from(v)).collect()
}

/// Tiny encoder, masked mean pool and a linear probe, dropout off, against
/// the f64 reference.
pub fn encoder_probe() -> Report {
    let vocab = 12;
    let mut cfg = EncoderConfig::preset(Preset::Tiny, Some(vocab));
    cfg.max_positions = 8;
    let mut model = EncoderModel::new(cfg, SeedTree::new(5)).unwrap();
    // larger weights than the 0.02 init so every path carries real signal
    let mut rng = SeedTree::new(6).rng();
    let names: Vec<String> = model.params().names().map(str::to_string).collect();
    for n in &names {
        if n.ends_with("weight") || n.starts_with("embeddings.word") || n.starts_with("embeddings.position") {
            let shape = model.params().get(n).unwrap().shape().to_vec();
            *model.params_mut().get_mut(n).unwrap() = truncated_normal(&shape, 0.2, &mut rng);
        }
    }
    let h = model.config().hidden_size;
    model
        .params_mut()
        .insert("probe.weight", truncated_normal(&[h, 2], 0.3, &mut rng))
        .unwrap();
    model.params_mut().insert("probe.bias", Tensor::zeros(vec![2])).unwrap();

    let id_rows = vec![vec![2, 5, 7, 3, 0], vec![2, 9, 11, 4, 3]];
    let mask_rows = vec![vec![true, true, true, true, false], vec![true; 5]];
    let ids = Tensor::new(vec![2, 5], id_rows.iter().flatten().map(|&i| i as f32).collect()).unwrap();
    let mask = Tensor::new(vec![2, 5], mask_rows.iter().flatten().map(|&m| f32::from(u8::from(m))).collect()).unwrap();
    let labels = [0, 1];

    let analytic = tape_grads(model.params(), |tape, store| {
        let mut probe = model.clone();
        *probe.params_mut() = store.clone();
        let mut rng = SeedTree::new(8).rng();
        let hidden = probe.forward(tape, &ids, &mask, false, &mut rng).unwrap();
        let pooled = tape.mean_pool(hidden, &mask).unwrap();
        let w = tape.param(store, "probe.weight").unwrap();
        let b = tape.param(store, "probe.bias").unwrap();
        let logits = tape.linear(pooled, w, b).unwrap();
        tape.cross_entropy(logits, &labels).unwrap()
    });
    let c = model.config();
    let shape = EncoderShape {
        layers: c.num_layers,
        hidden: h,
        heads: c.num_heads,
        ln_eps: 1e-12,
    };
    let picks = sample_picks(model.params(), 7, PICKS, &|n| match n {
        "embeddings.word" => Some((vocab, h)),
        "embeddings.position" => Some((5, h)),
        _ => None,
    });
    reference::compare(&reference::widen(model.params()), &analytic, &picks, |p, _| {
        reference::encoder_probe_loss(p, &shape, &id_rows, &mask_rows, &labels)
    })
    .0
}

fn head_inputs(width: usize, seed: u64) -> Tensor {
    let mut rng = SeedTree::new(seed + 1).rng();
    Tensor::new(vec![3, width], (0..3 * width).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

const HEAD_LABELS: [usize; 3] = [0, 1, 1];

fn head_grads<'a>(head: &'a Head, x: &Tensor, training: bool, seed: u64) -> impl Fn(&mut Tape, &ParamStore) -> Var + 'a {
    let x = x.clone();
    move |tape, store| {
        let mut probe = head.clone();
        *probe.params_mut() = store.clone();
        let xv = tape.constant(x.clone());
        // a fixed stream, so dropout draws identical masks on every pass
        let mut rng = SeedTree::new(seed + 3).rng();
        let logits = probe.forward(tape, xv, training, &mut rng).unwrap();
        tape.cross_entropy(logits, &HEAD_LABELS).unwrap()
    }
}

/// Dropout on, against f32 finite differences of the tape's own forward pass.
fn mlp_training_check(variant: HeadVariant, width: usize, seed: u64) -> Report {
    let head = Head::new(variant.config(width), width, SeedTree::new(seed)).unwrap();
    let x = head_inputs(width, seed);
    let picks = sample_picks(head.params(), seed + 2, PICKS, &|_| None);
    check_params(head.params(), &picks, head_grads(&head, &x, true, seed))
}

fn mlp_reference_check(variant: HeadVariant, width: usize, seed: u64) -> Report {
    let head = Head::new(variant.config(width), width, SeedTree::new(seed)).unwrap();
    let x = head_inputs(width, seed);
    let analytic = tape_grads(head.params(), head_grads(&head, &x, false, seed));
    let HeadConfig::Mlp(c) = head.config() else { unreachable!() };
    let layers = c.layer_widths.len() - 1;
    let xs = to_f64(&x);
    let picks = sample_picks(head.params(), seed + 2, PICKS, &|_| None);
    reference::compare(&reference::widen(head.params()), &analytic, &picks, |p, _| {
        reference::mlp_loss(p, layers, &xs, 3, &HEAD_LABELS)
    })
    .0
}

fn resnet_reference_check(variant: HeadVariant, width: usize, seed: u64) -> (Report, usize) {
    let head = Head::new(variant.config(width), width, SeedTree::new(seed)).unwrap();
    let x = head_inputs(width, seed);
    let analytic = tape_grads(head.params(), head_grads(&head, &x, false, seed));
    let HeadConfig::ResNet(c) = head.config() else { unreachable!() };
    let shape = ResNetShape {
        stem: c.stem_channels,
        stages: c.stage_channels.clone(),
        blocks: c.blocks_per_stage.clone(),
        kernel: c.kernel_size,
    };
    let rows: Vec<Vec<f64>> = to_f64(&x).chunks(width).map(<[f64]>::to_vec).collect();
    // extra candidates make up for picks that straddle a ReLU kink
    let picks = sample_picks(head.params(), seed + 2, 2 * PICKS, &|_| None);
    reference::compare(&reference::widen(head.params()), &analytic, &picks, |p, relu_inputs| {
        reference::resnet_loss(p, &shape, &rows, &HEAD_LABELS, relu_inputs)
    })
}

/// A check passes with enough usable picks and error under tolerance.
pub fn passed(r: &Report) -> bool {
    r.passed() && r.checked >= PICKS
}

/// Both MLP variants over three seeds: once with dropout active against the
/// tape's own forward pass, once with dropout off against the f64 reference.
pub fn mlp_heads() -> Vec<(String, Report)> {
    let mut out = Vec::new();
    for v in [HeadVariant::Mlp4, HeadVariant::Mlp4RegDrop] {
        for seed in [10, 20, 30] {
            out.push((format!("{} seed {seed} (dropout)", v.name()), mlp_training_check(v, 24, seed)));
            out.push((format!("{} seed {seed}", v.name()), mlp_reference_check(v, 24, seed)));
        }
    }
    out
}

/// Both ResNet variants over three seeds against the f64 reference. Picks
/// whose perturbation flips a ReLU are dropped; see [`reference::compare`].
pub fn resnet_heads() -> Vec<(String, Report)> {
    let mut out = Vec::new();
    for v in [HeadVariant::ResNet10, HeadVariant::ResNet18] {
        for seed in [40, 50, 60] {
            let (report, skipped) = resnet_reference_check(v, 16, seed);
            out.push((format!("{} seed {seed} ({skipped} kink picks dropped)", v.name()), report));
        }
    }
    out
}
