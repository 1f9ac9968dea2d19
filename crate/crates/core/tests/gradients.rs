//! Tape gradients against central finite differences, step 1e-5.

use floodnet::fastgrnn::FastGrnnParams;
use floodnet::hybrid::{forward_graph, ModelConfig, ModelParams, ModelVars, Variant};
use floodnet::tensor::{grad_check, BnConfig, BnStats};
use floodnet::{Mode, Result, RngState, Tape, Tensor, Var};

const STEP: f64 = 1e-5;
const LINEAR_TOL: f64 = 1e-6;
const NONLINEAR_TOL: f64 = 1e-4;
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn randn(shape: &[usize], rng: &mut RngState) -> Tensor {
    Tensor::from_fn(shape, |_| rng.normal())
}

/// Reduces `out` to a scalar with fixed random weights so every output
/// coordinate contributes a distinct gradient.
fn probe_sum(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let mut rng = RngState::new(seed ^ 0xABCD);
    let probe = randn(tape.value(out).shape(), &mut rng);
    let p = tape.leaf(probe);
    let prod = tape.hadamard(out, p)?;
    Ok(tape.sum(prod))
}

fn check<F>(name: &str, tol: f64, shapes: &[&[usize]], f: F)
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    for seed in SEEDS {
        let mut rng = RngState::new(seed);
        let params: Vec<Tensor> = shapes.iter().map(|s| randn(s, &mut rng)).collect();
        let err = grad_check(
            |tape, vars| {
                let out = f(tape, vars)?;
                probe_sum(tape, out, seed)
            },
            &params,
            STEP,
        )
        .unwrap();
        assert!(err < tol, "{name} seed {seed}: relative error {err:e} >= {tol:e}");
    }
}

#[test]
fn matmul() {
    check("matmul", LINEAR_TOL, &[&[3, 4], &[4, 5]], |t, v| t.matmul(v[0], v[1]));
}

#[test]
fn transpose() {
    check("transpose", LINEAR_TOL, &[&[3, 4]], |t, v| t.transpose(v[0]));
}

#[test]
fn conv1d_single_and_batched() {
    check("conv1d single", LINEAR_TOL, &[&[2, 7], &[3, 2, 3], &[3]], |t, v| {
        t.conv1d(v[0], v[1], v[2])
    });
    check("conv1d batched", LINEAR_TOL, &[&[3, 2, 6], &[4, 2, 5], &[4]], |t, v| {
        t.conv1d(v[0], v[1], v[2])
    });
}

#[test]
fn batchnorm_train_and_infer() {
    check("batchnorm train", NONLINEAR_TOL, &[&[3, 2, 5], &[2], &[2]], |t, v| {
        let mut stats = BnStats::new(2);
        t.batchnorm(v[0], v[1], v[2], &mut stats, Mode::Train, BnConfig::default())
    });
    check("batchnorm infer", LINEAR_TOL, &[&[3, 2, 5], &[2], &[2]], |t, v| {
        let mut stats = BnStats::new(2);
        stats.running_mean = Tensor::vector(vec![0.3, -0.2]);
        stats.running_var = Tensor::vector(vec![1.7, 0.4]);
        t.batchnorm(v[0], v[1], v[2], &mut stats, Mode::Infer, BnConfig::default())
    });
}

#[test]
fn pointwise() {
    check("tanh", NONLINEAR_TOL, &[&[4, 3]], |t, v| Ok(t.tanh(v[0])));
    check("sigmoid", NONLINEAR_TOL, &[&[4, 3]], |t, v| Ok(t.sigmoid(v[0])));
    check("relu", NONLINEAR_TOL, &[&[4, 3]], |t, v| Ok(t.relu(v[0])));
}

#[test]
fn elementwise_and_broadcast() {
    check("hadamard", NONLINEAR_TOL, &[&[3, 4], &[3, 4]], |t, v| t.hadamard(v[0], v[1]));
    check("add", LINEAR_TOL, &[&[3, 4], &[3, 4]], |t, v| t.add(v[0], v[1]));
    check("add_bias", LINEAR_TOL, &[&[3, 4], &[4]], |t, v| t.add_bias(v[0], v[1]));
    check("scale_by", NONLINEAR_TOL, &[&[3, 4], &[1]], |t, v| t.scale_by(v[0], v[1]));
    check("add_scalar", LINEAR_TOL, &[&[3, 4], &[1]], |t, v| t.add_scalar(v[0], v[1]));
    check("affine", LINEAR_TOL, &[&[3, 4]], |t, v| Ok(t.affine(v[0], -1.5, 0.25)));
    check("mul_const", LINEAR_TOL, &[&[6]], |t, v| {
        t.mul_const(v[0], vec![0.0, 2.0, 2.0, 0.0, 2.0, 1.0])
    });
}

#[test]
fn reductions_and_reshapes() {
    check("sum", LINEAR_TOL, &[&[3, 4]], |t, v| Ok(t.sum(v[0])));
    check("mean", LINEAR_TOL, &[&[3, 4]], |t, v| Ok(t.mean(v[0])));
    check("dimension_shuffle", LINEAR_TOL, &[&[2, 3, 4]], |t, v| {
        t.dimension_shuffle(v[0])
    });
    check("select_last", LINEAR_TOL, &[&[2, 3, 4]], |t, v| t.select_last(v[0], 2));
    check("concat_cols", LINEAR_TOL, &[&[3, 2], &[3, 4]], |t, v| {
        t.concat_cols(&[v[0], v[1]])
    });
    check("global_avg_pool", LINEAR_TOL, &[&[2, 3, 5]], |t, v| t.global_avg_pool(v[0]));
}

#[test]
fn softmax_and_weighted_bce() {
    check("softmax", NONLINEAR_TOL, &[&[4, 2]], |t, v| t.softmax(v[0]));
    for w in [1.0, 2.0, 10.0] {
        check("softmax+weighted_bce", NONLINEAR_TOL, &[&[5, 2]], |t, v| {
            let p = t.softmax(v[0])?;
            t.weighted_bce(p, &[1.0, 0.0, 0.0, 1.0, 0.0], w)
        });
    }
}

#[test]
fn fastgrnn_sequence() {
    let (d, h, steps, batch) = (3, 4, 5, 2);
    for seed in SEEDS {
        let mut rng = RngState::new(seed);
        let p = FastGrnnParams::init(d, h, &mut rng);
        let params = vec![
            p.w.clone(),
            p.u.clone(),
            randn(&[h], &mut rng),
            randn(&[h], &mut rng),
            Tensor::scalar(rng.normal()),
            Tensor::scalar(rng.normal()),
            randn(&[batch, d, steps], &mut rng),
            randn(&[batch, h], &mut rng),
        ];
        let err = grad_check(
            |tape, v| {
                let vars = floodnet::fastgrnn::FastGrnnVars {
                    w: v[0],
                    u: v[1],
                    b_z: v[2],
                    b_h: v[3],
                    zeta_raw: v[4],
                    nu_raw: v[5],
                };
                let h = vars.run_sequence(tape, v[6], v[7])?;
                probe_sum(tape, h, seed)
            },
            &params,
            STEP,
        )
        .unwrap();
        assert!(err < NONLINEAR_TOL, "fastgrnn seed {seed}: {err:e}");
    }
}

#[test]
fn full_hybrid_model() {
    for variant in [Variant::Hybrid, Variant::FastGrnnOnly, Variant::FcnOnly] {
        let cfg = ModelConfig {
            hidden_size: 4,
            conv_channels: vec![4, 8, 4],
            kernel_sizes: vec![3, 3, 3],
            dropout_rate: 0.0,
            loss_weight: 3.0,
            n_vars: 3,
            seq_len: 6,
            variant,
            ..ModelConfig::default()
        };
        for seed in SEEDS {
            let mut rng = RngState::new(seed);
            let params = ModelParams::init(&cfg, &mut rng).unwrap();
            let x = randn(&[4, cfg.n_vars, cfg.seq_len], &mut rng);
            let targets = [1.0, 0.0, 1.0, 0.0];
            let err = grad_check(
                |tape, v| {
                    let vars = ModelVars::from_flat(&cfg, v)?;
                    let input = tape.leaf(x.clone());
                    let mut bn = params.bn_stats();
                    let out = forward_graph(
                        tape,
                        &cfg,
                        &vars,
                        &mut bn,
                        input,
                        Mode::Train,
                        &mut RngState::new(0),
                    )?;
                    tape.weighted_bce(out.probs, &targets, cfg.loss_weight)
                },
                &params.trainable(),
                STEP,
            )
            .unwrap();
            assert!(err < NONLINEAR_TOL, "{variant} seed {seed}: {err:e}");
        }
    }
}
