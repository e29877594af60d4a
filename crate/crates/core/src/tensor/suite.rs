//! Finite-difference verification suite covering every differentiable tape
//! operation. Shared by the test suite and the `gradcheck` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    attention, grad_check, AttentionWeights, Conv2dSpec, FnFragment, GradCheckConfig, GradCheckReport, GradFragment, Mode, NormStats, Tape, Tensor, Var,
};
use crate::error::Result;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap().with_grad()
}

/// Contracts `y` against fixed pseudo-random weights so that every output
/// coordinate influences the scalar loss differently.
pub fn probe(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let n = tape.value(y).len();
    let w = tape.constant(tape.shape(y).to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

type OpFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

fn case(name: &str, shapes: &[&[usize]], rng: &mut ChaCha8Rng, f: OpFn) -> (String, Box<dyn GradFragment>) {
    let params = shapes.iter().map(|s| random(s, rng)).collect();
    let seed: u64 = rng.random();
    let frag = FnFragment::new(params, move |tape: &mut Tape, v: &[Var]| {
        let y = f(tape, v)?;
        if tape.shape(y).is_empty() {
            Ok(y)
        } else {
            probe(tape, y, seed)
        }
    });
    (name.to_string(), Box::new(frag))
}

/// One fragment per differentiable operation.
pub fn op_fragments(seed: u64) -> Vec<(String, Box<dyn GradFragment>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let mut out = vec![
        case("matmul", &[&[4, 3], &[3, 5]], r, Box::new(|t, v| t.matmul(v[0], v[1]))),
        case("bmm", &[&[2, 3, 4], &[2, 4, 5]], r, Box::new(|t, v| t.bmm(v[0], v[1], false))),
        case("bmm_transposed", &[&[2, 3, 4], &[2, 5, 4]], r, Box::new(|t, v| t.bmm(v[0], v[1], true))),
        case("add_bias", &[&[2, 3, 4], &[3, 4]], r, Box::new(|t, v| t.add_bias(v[0], v[1]))),
        case("add", &[&[3, 4], &[3, 4]], r, Box::new(|t, v| t.add(v[0], v[1]))),
        case("mul", &[&[3, 4], &[3, 4]], r, Box::new(|t, v| t.mul(v[0], v[1]))),
        case("scale", &[&[3, 4]], r, Box::new(|t, v| Ok(t.scale(v[0], -1.7)))),
        case("relu", &[&[4, 5]], r, Box::new(|t, v| Ok(t.relu(v[0])))),
        case("gelu", &[&[4, 5]], r, Box::new(|t, v| Ok(t.gelu(v[0])))),
        case("sigmoid", &[&[4, 5]], r, Box::new(|t, v| Ok(t.sigmoid(v[0])))),
        case("tanh", &[&[4, 5]], r, Box::new(|t, v| Ok(t.tanh(v[0])))),
        case("softmax", &[&[3, 6]], r, Box::new(|t, v| t.softmax(v[0]))),
        case("softmax_axis0", &[&[4, 3, 2]], r, Box::new(|t, v| t.softmax_axis(v[0], 0))),
        case("layer_norm", &[&[3, 2, 6], &[6], &[6]], r, Box::new(|t, v| t.layer_norm(v[0], v[1], v[2]))),
        case("batch_norm_train", &[&[3, 4, 2, 3], &[4], &[4]], r, Box::new(|t, v| Ok(t.batch_norm(v[0], v[1], v[2], NormStats::Batch)?.0))),
        case("batch_norm_dense", &[&[5, 4], &[4], &[4]], r, Box::new(|t, v| Ok(t.batch_norm(v[0], v[1], v[2], NormStats::Batch)?.0))),
        case(
            "batch_norm_infer",
            &[&[3, 4, 2, 3], &[4], &[4]],
            r,
            Box::new(|t, v| {
                let mean = [0.1, -0.2, 0.3, 0.0];
                let var = [0.5, 1.5, 2.0, 0.8];
                Ok(t.batch_norm(v[0], v[1], v[2], NormStats::Running { mean: &mean, var: &var })?.0)
            }),
        ),
        case(
            "conv2d",
            &[&[2, 4, 7, 6], &[6, 2, 3, 2], &[6]],
            r,
            Box::new(|t, v| t.conv2d(v[0], v[1], Some(v[2]), Conv2dSpec { stride: (2, 1), padding: (1, 1), groups: 2 })),
        ),
        case("conv2d_depthwise", &[&[2, 3, 6, 5], &[3, 1, 3, 3]], r, Box::new(|t, v| t.conv2d(v[0], v[1], None, Conv2dSpec::padded(1, 1).with_groups(3)))),
        case("max_pool2d", &[&[2, 3, 6, 4]], r, Box::new(|t, v| t.max_pool2d(v[0], 2, 1))),
        case("global_avg_pool", &[&[2, 3, 4, 5]], r, Box::new(|t, v| t.global_avg_pool(v[0]))),
        case("reshape", &[&[2, 6]], r, Box::new(|t, v| t.reshape(v[0], [3, 4]))),
        case("permute", &[&[2, 3, 4]], r, Box::new(|t, v| t.permute(v[0], &[2, 0, 1]))),
        case("concat", &[&[2, 3, 4], &[2, 1, 4]], r, Box::new(|t, v| t.concat(&[v[0], v[1]], 1))),
        case("select", &[&[2, 3, 4]], r, Box::new(|t, v| t.select(v[0], 1, 2))),
        case("narrow", &[&[2, 3, 8]], r, Box::new(|t, v| t.narrow(v[0], 2, 2, 4))),
        case("repeat", &[&[1, 2, 5]], r, Box::new(|t, v| t.repeat(v[0], 4))),
        case(
            "dropout",
            &[&[4, 6]],
            r,
            Box::new(|t, v| {
                let mut rng = ChaCha8Rng::seed_from_u64(9);
                t.dropout(v[0], 0.3, Mode::Train, &mut rng)
            }),
        ),
        case("sum", &[&[3, 4]], r, Box::new(|t, v| Ok(t.sum(v[0])))),
        case("mean", &[&[3, 4]], r, Box::new(|t, v| Ok(t.mean(v[0])))),
        case(
            "bce_with_logits",
            &[&[5, 4]],
            r,
            Box::new(|t, v| {
                let y: Vec<f64> = (0..20).map(|i| (i % 3 == 0) as u8 as f64).collect();
                t.bce_with_logits(v[0], &y, 2.0)
            }),
        ),
        case(
            "squared_error",
            &[&[5, 4]],
            r,
            Box::new(|t, v| {
                let y: Vec<f64> = (0..20).map(|i| (i % 2 == 0) as u8 as f64).collect();
                t.squared_error(v[0], &y)
            }),
        ),
    ];
    let d = 8;
    out.push(case(
        "attention",
        &[&[2, 3, d], &[2, 4, d], &[d, d], &[d], &[d, d], &[d], &[d, d], &[d], &[d, d], &[d]],
        r,
        Box::new(|t, v| {
            let w = AttentionWeights { wq: v[2], bq: v[3], wk: v[4], bk: v[5], wv: v[6], bv: v[7], wo: v[8], bo: v[9] };
            attention(t, v[0], v[1], v[1], &w, 2)
        }),
    ));
    out
}

/// Runs [`grad_check`] over every operation fragment.
pub fn run_op_suite(seed: u64, config: &GradCheckConfig) -> Result<Vec<(String, GradCheckReport)>> {
    op_fragments(seed).into_iter().map(|(name, mut frag)| Ok((name, grad_check(frag.as_mut(), config)?))).collect()
}
