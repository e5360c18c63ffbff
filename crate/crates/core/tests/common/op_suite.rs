//! Finite-difference checks of every differentiable tape op.

use misinfo::{SeedTree, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check, project, random_tensor};

const TRIALS: u64 = 20;

/// Op name and worst relative error over `TRIALS` random draws, checking
/// every input element.
pub type OpResult = (&'static str, f64);

fn run_trials<F>(name: &'static str, shapes: &[&[usize]], f: F) -> OpResult
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut worst = 0.0f64;
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let inputs: Vec<Tensor> = shapes.iter().map(|s| random_tensor(s, &mut rng)).collect();
        worst = worst.max(check(&inputs, None, trial, &f).worst);
    }
    (name, worst)
}

pub fn matmul() -> Vec<OpResult> {
    vec![
        run_trials("matmul", &[&[3, 4], &[4, 2]], |t, v| {
            let y = t.matmul(v[0], v[1]).unwrap();
            project(t, y, 1)
        }),
        run_trials("bmm", &[&[2, 3, 4], &[2, 4, 2]], |t, v| {
            let y = t.bmm(v[0], v[1], false).unwrap();
            project(t, y, 2)
        }),
        run_trials("bmm_transposed", &[&[2, 3, 4], &[2, 5, 4]], |t, v| {
            let y = t.bmm(v[0], v[1], true).unwrap();
            project(t, y, 3)
        }),
        run_trials("linear", &[&[3, 4], &[4, 5], &[5]], |t, v| {
            let y = t.linear(v[0], v[1], v[2]).unwrap();
            project(t, y, 5)
        }),
    ]
}

pub fn elementwise() -> Vec<OpResult> {
    vec![
        run_trials("add", &[&[2, 3], &[2, 3]], |t, v| {
            let y = t.add(v[0], v[1]).unwrap();
            project(t, y, 4)
        }),
        run_trials("scale", &[&[5]], |t, v| {
            let y = t.scale(v[0], -1.7).unwrap();
            project(t, y, 6)
        }),
        run_trials("gelu", &[&[2, 6]], |t, v| {
            let y = t.gelu(v[0]).unwrap();
            project(t, y, 7)
        }),
        run_trials("relu", &[&[2, 6]], |t, v| {
            let y = t.relu(v[0]).unwrap();
            project(t, y, 8)
        }),
        run_trials("dropout", &[&[4, 5]], |t, v| {
            // same stream on every evaluation so the mask is fixed
            let mut rng = SeedTree::new(5).rng();
            let y = t.dropout(v[0], 0.3, true, &mut rng).unwrap();
            project(t, y, 14)
        }),
    ]
}

pub fn normalisation() -> Vec<OpResult> {
    let mut out: Vec<OpResult> = (0..3)
        .map(|axis| {
            run_trials("softmax", &[&[2, 3, 4]], move |t, v| {
                let y = t.softmax(v[0], axis).unwrap();
                project(t, y, 9 + axis as u64)
            })
        })
        .collect();
    out.push(run_trials("layer_norm", &[&[3, 5], &[5], &[5]], |t, v| {
        let y = t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
        project(t, y, 12)
    }));
    out.push(run_trials("cross_entropy", &[&[4, 3]], |t, v| {
        t.cross_entropy(v[0], &[0, 2, 1, 2]).unwrap()
    }));
    out
}

pub fn conv1d() -> Vec<OpResult> {
    vec![
        run_trials("conv1d", &[&[2, 3, 7], &[4, 3, 3]], |t, v| {
            let y = t.conv1d(v[0], v[1], 2, 1).unwrap();
            project(t, y, 13)
        }),
        run_trials("conv1d_projection", &[&[2, 3, 6], &[4, 3, 1]], |t, v| {
            let y = t.conv1d(v[0], v[1], 2, 0).unwrap();
            project(t, y, 22)
        }),
    ]
}

pub fn pooling_and_shape() -> Vec<OpResult> {
    let mask = Tensor::new(vec![2, 4], vec![1., 1., 0., 0., 1., 1., 1., 0.]).unwrap();
    vec![
        run_trials("mean_pool", &[&[2, 4, 3]], |t, v| {
            let y = t.mean_pool(v[0], &mask).unwrap();
            project(t, y, 15)
        }),
        run_trials("mean_last_axis", &[&[2, 3, 4]], |t, v| {
            let y = t.mean_last_axis(v[0]).unwrap();
            project(t, y, 16)
        }),
        run_trials("permute", &[&[2, 3, 4]], |t, v| {
            let y = t.permute(v[0], &[1, 2, 0]).unwrap();
            project(t, y, 17)
        }),
        run_trials("reshape", &[&[2, 6]], |t, v| {
            let y = t.reshape(v[0], &[3, 4]).unwrap();
            project(t, y, 18)
        }),
        run_trials("embedding", &[&[5, 3]], |t, v| {
            let y = t.embedding(v[0], &[4, 0, 4, 2], &[2, 2]).unwrap();
            project(t, y, 19)
        }),
        run_trials("mask_keys", &[&[2, 3, 4]], |t, v| {
            let s = t.mask_keys(v[0], &mask).unwrap();
            let y = t.softmax(s, 2).unwrap();
            project(t, y, 20)
        }),
    ]
}

/// q·kᵀ/√d → softmax → ·v, the attention core.
pub fn attention() -> Vec<OpResult> {
    vec![run_trials("attention", &[&[2, 3, 4], &[2, 3, 4], &[2, 3, 4]], |t, v| {
        let s = t.bmm(v[0], v[1], true).unwrap();
        let s = t.scale(s, 0.5).unwrap();
        let p = t.softmax(s, 2).unwrap();
        let y = t.bmm(p, v[2], false).unwrap();
        project(t, y, 21)
    })]
}

pub fn all() -> Vec<OpResult> {
    [matmul(), elementwise(), normalisation(), conv1d(), pooling_and_shape(), attention()].concat()
}
