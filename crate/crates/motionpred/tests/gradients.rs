//! Finite-difference verification of every differentiable tape operation.
//!
//! Each check builds a tiny parameter store, scalarizes the operation's
//! output through a fixed random weighting (which catches transposed or
//! misrouted gradients that a plain sum would miss), and compares the
//! backward-pass gradients against central differences at twenty random
//! draws per operation.

use motionpred::gradcheck::{finite_diff_grad, relative_error, DEFAULT_STEP, DEFAULT_TOLERANCE};
use motionpred::tensor::numel_of;
use motionpred::{ParamStore, Result, Tape, Tensor, VarId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// How one parameter of an operation under test is sampled.
struct ParamSpec {
    shape: Vec<usize>,
    lo: f64,
    hi: f64,
    /// Entries are pushed this far from zero, for operations with a kink
    /// or a derivative blow-up at the origin.
    min_abs: f64,
}

impl ParamSpec {
    fn new(shape: &[usize], lo: f64, hi: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            lo,
            hi,
            min_abs: 0.0,
        }
    }

    fn away_from_zero(mut self, min_abs: f64) -> Self {
        self.min_abs = min_abs;
        self
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Tensor {
        let data: Vec<f64> = (0..numel_of(&self.shape))
            .map(|_| {
                let v: f64 = rng.gen_range(self.lo..self.hi);
                if v.abs() < self.min_abs {
                    if v < 0.0 {
                        -self.min_abs
                    } else {
                        self.min_abs
                    }
                } else {
                    v
                }
            })
            .collect();
        Tensor::new(self.shape.clone(), data).unwrap()
    }
}

/// Runs `trials` randomized finite-difference checks of `build`, which maps
/// bound parameter nodes to the operation's output node.
fn verify_op(
    name: &str,
    seed: u64,
    specs: &[ParamSpec],
    build: impl Fn(&mut Tape, &[VarId]) -> Result<VarId>,
) {
    let trials = 20;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed * 1000 + trial);
        let mut store = ParamStore::new();
        for (i, spec) in specs.iter().enumerate() {
            store.insert(&format!("p{i}"), spec.sample(&mut rng)).unwrap();
        }

        // Discover the output shape, then fix a random weighting of it.
        let out_shape = {
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape);
            let out = build(&mut tape, bound.vars()).unwrap();
            tape.shape(out).to_vec()
        };
        let weights = ParamSpec::new(&out_shape, -1.0, 1.0).sample(&mut rng);

        let objective = |store: &ParamStore| -> Result<f64> {
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape);
            let out = build(&mut tape, bound.vars())?;
            let w = tape.constant(&weights);
            let weighted = tape.mul(out, w)?;
            let loss = tape.sum_all(weighted)?;
            Ok(tape.data(loss)[0])
        };

        let analytic: Vec<Vec<f64>> = {
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape);
            let out = build(&mut tape, bound.vars()).unwrap();
            let w = tape.constant(&weights);
            let weighted = tape.mul(out, w).unwrap();
            let loss = tape.sum_all(weighted).unwrap();
            let grads = tape.backward(loss).unwrap();
            bound
                .vars()
                .iter()
                .map(|&v| {
                    grads
                        .get(v)
                        .unwrap_or_else(|| panic!("{name}: parameter unreachable from objective"))
                        .to_vec()
                })
                .collect()
        };
        let numeric = finite_diff_grad(&mut store, DEFAULT_STEP, objective).unwrap();

        for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
            let rel = relative_error(a, n);
            assert!(
                rel < DEFAULT_TOLERANCE,
                "{name}: trial {trial}, parameter {i}: relative error {rel:.3e}"
            );
        }
    }
}

fn unit(shape: &[usize]) -> ParamSpec {
    ParamSpec::new(shape, -1.0, 1.0)
}

#[test]
fn grad_add_sub_mul() {
    let two = || vec![unit(&[2, 3]), unit(&[2, 3])];
    verify_op("add", 1, &two(), |t, p| t.add(p[0], p[1]));
    verify_op("sub", 2, &two(), |t, p| t.sub(p[0], p[1]));
    verify_op("mul", 3, &two(), |t, p| t.mul(p[0], p[1]));
}

#[test]
fn grad_scalar_ops() {
    verify_op("add_scalar", 4, &[unit(&[3, 2])], |t, p| t.add_scalar(p[0], 0.7));
    verify_op("scale", 5, &[unit(&[3, 2])], |t, p| t.scale(p[0], -1.3));
}

#[test]
fn grad_unary_elementwise() {
    verify_op("exp", 6, &[unit(&[2, 3])], |t, p| t.exp(p[0]));
    verify_op("log", 7, &[ParamSpec::new(&[2, 3], 0.2, 3.0)], |t, p| t.log(p[0]));
    verify_op("tanh", 8, &[ParamSpec::new(&[2, 3], -2.0, 2.0)], |t, p| t.tanh(p[0]));
    verify_op("square", 9, &[unit(&[2, 3])], |t, p| t.square(p[0]));
    verify_op("sqrt", 10, &[ParamSpec::new(&[2, 3], 0.25, 4.0)], |t, p| {
        t.sqrt(p[0])
    });
    // The kink at zero makes finite differences meaningless there; sampled
    // inputs stay clear of it.
    verify_op(
        "relu",
        11,
        &[unit(&[2, 3]).away_from_zero(0.05)],
        |t, p| t.relu(p[0]),
    );
}

#[test]
fn grad_matmul_all_batch_forms() {
    verify_op(
        "matmul 2d*2d",
        12,
        &[unit(&[3, 4]), unit(&[4, 2])],
        |t, p| t.matmul(p[0], p[1]),
    );
    verify_op(
        "matmul 3d*2d",
        13,
        &[unit(&[2, 3, 4]), unit(&[4, 2])],
        |t, p| t.matmul(p[0], p[1]),
    );
    verify_op(
        "matmul 2d*3d",
        14,
        &[unit(&[3, 4]), unit(&[2, 4, 2])],
        |t, p| t.matmul(p[0], p[1]),
    );
    verify_op(
        "matmul 3d*3d",
        15,
        &[unit(&[2, 3, 4]), unit(&[2, 4, 2])],
        |t, p| t.matmul(p[0], p[1]),
    );
}

#[test]
fn grad_softmax() {
    verify_op("softmax 2d", 16, &[ParamSpec::new(&[3, 4], -3.0, 3.0)], |t, p| {
        t.softmax_rows(p[0])
    });
    verify_op(
        "softmax 3d",
        17,
        &[ParamSpec::new(&[2, 3, 4], -3.0, 3.0)],
        |t, p| t.softmax_rows(p[0]),
    );
}

#[test]
fn grad_reductions() {
    for axis in 0..3 {
        verify_op(
            &format!("sum_axis {axis}"),
            18 + axis as u64,
            &[unit(&[2, 3, 4])],
            move |t, p| t.sum_axis(p[0], axis),
        );
        verify_op(
            &format!("mean_axis {axis}"),
            21 + axis as u64,
            &[unit(&[2, 3, 4])],
            move |t, p| t.mean_axis(p[0], axis),
        );
    }
    verify_op("sum_all", 24, &[unit(&[2, 3, 4])], |t, p| t.sum_all(p[0]));
    verify_op("mean_all", 25, &[unit(&[2, 3, 4])], |t, p| t.mean_all(p[0]));
}

#[test]
fn grad_conv_time() {
    verify_op(
        "conv_time",
        26,
        &[unit(&[5, 2, 3]), unit(&[3, 3, 4]), unit(&[4])],
        |t, p| t.conv_time(p[0], p[1], p[2]),
    );
}

#[test]
fn grad_structural_ops() {
    verify_op("reshape", 27, &[unit(&[2, 6])], |t, p| {
        t.reshape(p[0], vec![3, 4])
    });
    verify_op("permute", 28, &[unit(&[2, 3, 4])], |t, p| {
        t.permute(p[0], &[2, 0, 1])
    });
    verify_op("narrow", 29, &[unit(&[4, 3])], |t, p| t.narrow(p[0], 0, 1, 2));
    verify_op(
        "broadcast_add rank1",
        30,
        &[unit(&[2, 3, 4]), unit(&[4])],
        |t, p| t.broadcast_add(p[0], p[1]),
    );
    verify_op(
        "broadcast_add rank2",
        31,
        &[unit(&[2, 3, 4]), unit(&[3, 4])],
        |t, p| t.broadcast_add(p[0], p[1]),
    );
}

#[test]
fn grad_shared_subexpression_accumulates() {
    // x feeds two paths; its gradient is the sum of both contributions.
    verify_op("x*tanh(x) + x^2", 32, &[unit(&[3, 3])], |t, p| {
        let th = t.tanh(p[0])?;
        let prod = t.mul(p[0], th)?;
        let sq = t.square(p[0])?;
        t.add(prod, sq)
    });
}

#[test]
fn grad_attention_shaped_composite() {
    // softmax(q k^T) v, the attention pattern the encoder relies on.
    verify_op(
        "attention composite",
        33,
        &[unit(&[3, 2]), unit(&[3, 2]), unit(&[3, 4])],
        |t, p| {
            let kt = t.permute(p[1], &[1, 0])?;
            let scores = t.matmul(p[0], kt)?;
            let scaled = t.scale(scores, 1.0 / (2.0_f64).sqrt())?;
            let attn = t.softmax_rows(scaled)?;
            t.matmul(attn, p[2])
        },
    );
}

#[test]
fn hand_checked_product_rule() {
    // f(x, y) = sum(x * y + x^2): df/dx = y + 2x, df/dy = x.
    let mut store = ParamStore::new();
    let x = store
        .insert("x", Tensor::new(vec![2], vec![1.5, -0.5]).unwrap())
        .unwrap();
    let y = store
        .insert("y", Tensor::new(vec![2], vec![2.0, 4.0]).unwrap())
        .unwrap();
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let xy = tape.mul(bound.var(x), bound.var(y)).unwrap();
    let xx = tape.square(bound.var(x)).unwrap();
    let sum = tape.add(xy, xx).unwrap();
    let loss = tape.sum_all(sum).unwrap();
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.get(bound.var(x)).unwrap(), &[2.0 + 3.0, 4.0 - 1.0]);
    assert_eq!(grads.get(bound.var(y)).unwrap(), &[1.5, -0.5]);
}
