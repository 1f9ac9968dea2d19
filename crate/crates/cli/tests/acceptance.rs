//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Criteria 6 and 7 share one `floodnet sweep` run.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use floodnet::dataset::SampleMeta;
use floodnet::eval::{
    accuracy, confusion_at, f_curve_and_critical, f_measure, pr_curve, precision_recall,
    threshold_grid, threshold_metrics, RunMetrics, SweepReport, Table,
};
use floodnet::fastgrnn::{sparsity_keep_count, FastGrnnParams, FastGrnnVars, SparsityBudget};
use floodnet::floodgen::{
    generate_graph, generate_scenario, rainfall_field, sample_storms, simulate_event, write_graph,
    GraphConfig, ScenarioConfig, SimConfig, StormConfig,
};
use floodnet::hybrid::{
    forward_graph, load_model, save_model, train, ModelParams, ModelVars,
};
use floodnet::tensor::{grad_check, BnConfig, BnStats};
use floodnet::{Dataset, Mode, Model, ModelConfig, RngState, Tape, Tensor, Var, Variant};

type Check = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- 1

fn randn(shape: &[usize], rng: &mut RngState) -> Tensor {
    Tensor::from_fn(shape, |_| rng.normal())
}

type Op = Box<dyn Fn(&mut Tape, &[Var]) -> floodnet::Result<Var>>;

fn op_cases() -> Vec<(&'static str, bool, Vec<Vec<usize>>, Op)> {
    let v = |s: &[&[usize]]| s.iter().map(|x| x.to_vec()).collect::<Vec<_>>();
    vec![
        ("matmul", true, v(&[&[3, 4], &[4, 5]]), Box::new(|t, v| t.matmul(v[0], v[1]))),
        ("transpose", true, v(&[&[3, 4]]), Box::new(|t, v| t.transpose(v[0]))),
        ("conv1d", true, v(&[&[3, 2, 6], &[4, 2, 5], &[4]]), Box::new(|t, v| t.conv1d(v[0], v[1], v[2]))),
        (
            "batchnorm/train",
            false,
            v(&[&[3, 2, 5], &[2], &[2]]),
            Box::new(|t, v| {
                let mut s = BnStats::new(2);
                t.batchnorm(v[0], v[1], v[2], &mut s, Mode::Train, BnConfig::default())
            }),
        ),
        (
            "batchnorm/infer",
            true,
            v(&[&[3, 2, 5], &[2], &[2]]),
            Box::new(|t, v| {
                let mut s = BnStats::new(2);
                s.running_var = Tensor::vector(vec![1.7, 0.4]);
                t.batchnorm(v[0], v[1], v[2], &mut s, Mode::Infer, BnConfig::default())
            }),
        ),
        ("tanh", false, v(&[&[4, 3]]), Box::new(|t, v| Ok(t.tanh(v[0])))),
        ("sigmoid", false, v(&[&[4, 3]]), Box::new(|t, v| Ok(t.sigmoid(v[0])))),
        ("relu", false, v(&[&[4, 3]]), Box::new(|t, v| Ok(t.relu(v[0])))),
        ("hadamard", false, v(&[&[3, 4], &[3, 4]]), Box::new(|t, v| t.hadamard(v[0], v[1]))),
        ("add", true, v(&[&[3, 4], &[3, 4]]), Box::new(|t, v| t.add(v[0], v[1]))),
        ("add_bias", true, v(&[&[3, 4], &[4]]), Box::new(|t, v| t.add_bias(v[0], v[1]))),
        ("scale_by", false, v(&[&[3, 4], &[1]]), Box::new(|t, v| t.scale_by(v[0], v[1]))),
        ("add_scalar", true, v(&[&[3, 4], &[1]]), Box::new(|t, v| t.add_scalar(v[0], v[1]))),
        ("affine", true, v(&[&[3, 4]]), Box::new(|t, v| Ok(t.affine(v[0], -1.5, 0.25)))),
        ("mul_const", true, v(&[&[4]]), Box::new(|t, v| t.mul_const(v[0], vec![0.0, 2.0, 2.0, 1.0]))),
        ("sum", true, v(&[&[3, 4]]), Box::new(|t, v| Ok(t.sum(v[0])))),
        ("mean", true, v(&[&[3, 4]]), Box::new(|t, v| Ok(t.mean(v[0])))),
        ("dimension_shuffle", true, v(&[&[2, 3, 4]]), Box::new(|t, v| t.dimension_shuffle(v[0]))),
        ("select_last", true, v(&[&[2, 3, 4]]), Box::new(|t, v| t.select_last(v[0], 2))),
        ("concat_cols", true, v(&[&[3, 2], &[3, 4]]), Box::new(|t, v| t.concat_cols(&[v[0], v[1]]))),
        ("global_avg_pool", true, v(&[&[2, 3, 5]]), Box::new(|t, v| t.global_avg_pool(v[0]))),
        ("softmax", false, v(&[&[4, 2]]), Box::new(|t, v| t.softmax(v[0]))),
        (
            "weighted_bce",
            false,
            v(&[&[5, 2]]),
            Box::new(|t, v| {
                let p = t.softmax(v[0])?;
                t.weighted_bce(p, &[1.0, 0.0, 0.0, 1.0, 0.0], 10.0)
            }),
        ),
        (
            "fastgrnn",
            false,
            v(&[&[4, 3], &[4, 4], &[4], &[4], &[], &[], &[2, 3, 5], &[2, 4]]),
            Box::new(|t, v| {
                let vars = FastGrnnVars {
                    w: v[0],
                    u: v[1],
                    b_z: v[2],
                    b_h: v[3],
                    zeta_raw: v[4],
                    nu_raw: v[5],
                };
                vars.run_sequence(t, v[6], v[7])
            }),
        ),
    ]
}

fn probed(tape: &mut Tape, out: Var, seed: u64) -> floodnet::Result<Var> {
    let mut rng = RngState::new(seed ^ 0xABCD);
    let probe = tape.leaf(randn(tape.value(out).shape(), &mut rng));
    let prod = tape.hadamard(out, probe)?;
    Ok(tape.sum(prod))
}

fn criterion_1() -> Check {
    let mut worst = (0.0f64, "");
    for (name, linear, shapes, op) in op_cases() {
        let tol = if linear { 1e-6 } else { 1e-4 };
        for seed in 1..=5u64 {
            let mut rng = RngState::new(seed);
            let params: Vec<Tensor> = shapes
                .iter()
                .map(|s| if s.is_empty() { Tensor::scalar(rng.normal()) } else { randn(s, &mut rng) })
                .collect();
            let err = grad_check(|t, v| {
                let out = op(t, v)?;
                probed(t, out, seed)
            }, &params, 1e-5).map_err(e2s)?;
            ensure(err < tol, || format!("{name} seed {seed}: {err:e} >= {tol:e}"))?;
            if err > worst.0 {
                worst = (err, name);
            }
        }
    }
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
        for seed in 1..=5u64 {
            let mut rng = RngState::new(seed);
            let params = ModelParams::init(&cfg, &mut rng).map_err(e2s)?;
            let x = randn(&[4, 3, 6], &mut rng);
            let err = grad_check(
                |tape, v| {
                    let vars = ModelVars::from_flat(&cfg, v)?;
                    let input = tape.leaf(x.clone());
                    let mut bn = params.bn_stats();
                    let out = forward_graph(tape, &cfg, &vars, &mut bn, input, Mode::Train, &mut RngState::new(0))?;
                    tape.weighted_bce(out.probs, &[1.0, 0.0, 1.0, 0.0], cfg.loss_weight)
                },
                &params.trainable(),
                1e-5,
            )
            .map_err(e2s)?;
            ensure(err < 1e-4, || format!("{variant} model seed {seed}: {err:e}"))?;
            if err > worst.0 {
                worst = (err, "model");
            }
        }
    }
    Ok(format!("{} ops + 3 model variants x 5 seeds, worst {:.1e} ({})", op_cases().len(), worst.0, worst.1))
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Check {
    let mut rng = RngState::new(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let [w, u, bz, bh, zr, nr, x, h]: [f64; 8] = std::array::from_fn(|_| rng.normal() * 2.0);
        let mut p = FastGrnnParams::zeros(1, 1);
        p.w = Tensor::full(&[1, 1], w);
        p.u = Tensor::full(&[1, 1], u);
        p.b_z = Tensor::full(&[1], bz);
        p.b_h = Tensor::full(&[1], bh);
        p.zeta_raw = zr;
        p.nu_raw = nr;
        let s = |v: f64| 1.0 / (1.0 + (-v).exp());
        let z = s(w * x + u * h + bz);
        let expect = (s(zr) * (1.0 - z) + s(nr)) * (w * x + u * h + bh).tanh() + z * h;
        let got = p.cell_step(&[x], &[h]).map_err(e2s)?[0];
        worst = worst.max((got - expect).abs());
    }
    ensure(worst < 1e-12, || format!("max abs error {worst:e}"))?;
    Ok(format!("10 configurations, max abs error {worst:.1e}"))
}

// ---------------------------------------------------------------- 3

fn brute(scores: &[f64], labels: &[u8], phi: f64) -> [usize; 4] {
    let mut c = [0; 4];
    for (s, l) in scores.iter().zip(labels) {
        let i = match (*s > phi, *l == 1) {
            (true, true) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (false, false) => 3,
        };
        c[i] += 1;
    }
    c
}

fn brute_pr_area(counts: &[[usize; 4]]) -> f64 {
    let mut pts: Vec<(f64, f64)> = counts
        .iter()
        .filter(|c| c[0] + c[1] > 0)
        .map(|c| (c[0] as f64 / (c[0] + c[2]) as f64, c[0] as f64 / (c[0] + c[1]) as f64))
        .collect();
    if pts.is_empty() {
        return 0.0;
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64, usize)> = Vec::new();
    for (r, p) in pts {
        match merged.last_mut() {
            Some(m) if m.0 == r => {
                m.1 += p;
                m.2 += 1;
            }
            _ => merged.push((r, p, 1)),
        }
    }
    let m: Vec<(f64, f64)> = merged.iter().map(|&(r, p, n)| (r, p / n as f64)).collect();
    let mut area = m[0].0 * m[0].1;
    for k in 1..m.len() {
        area += (m[k].0 - m[k - 1].0) * (m[k].1 + m[k - 1].1) / 2.0;
    }
    area
}

fn criterion_3() -> Check {
    let grid = threshold_grid();
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = RngState::new(seed + 1000);
        let n = 1 + rng.below(50);
        let scores: Vec<f64> = (0..n)
            .map(|_| if rng.bernoulli(0.3) { rng.below(101) as f64 / 100.0 } else { rng.uniform() })
            .collect();
        let mut labels: Vec<u8> = (0..n).map(|_| rng.bernoulli(0.3) as u8).collect();
        labels[rng.below(n)] = 1;
        let counts: Vec<[usize; 4]> = grid.iter().map(|&g| brute(&scores, &labels, g)).collect();
        let mut fs = Vec::new();
        for (k, &phi) in grid.iter().enumerate() {
            let c = counts[k];
            let cm = confusion_at(&scores, &labels, phi).map_err(e2s)?;
            ensure([cm.tp, cm.fp, cm.fn_, cm.tn] == c, || format!("seed {seed} φ {phi}: counts differ"))?;
            let p = if c[0] + c[1] == 0 { 0.0 } else { c[0] as f64 / (c[0] + c[1]) as f64 };
            let r = c[0] as f64 / (c[0] + c[2]) as f64;
            let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            let acc = (c[0] + c[3]) as f64 / n as f64;
            let (pp, rr) = precision_recall(&cm);
            for (a, b) in [(pp, p), (rr, r), (f_measure(pp, rr), f), (accuracy(&cm).map_err(e2s)?, acc)] {
                worst = worst.max((a - b).abs());
            }
            fs.push(f);
        }
        let pr = pr_curve(&scores, &labels, &grid).map_err(e2s)?;
        worst = worst.max((pr.area - brute_pr_area(&counts)).abs());
        let fc = f_curve_and_critical(&scores, &labels, &grid).map_err(e2s)?;
        let best = (0..grid.len()).fold(0, |b, k| if fs[k] > fs[b] { k } else { b });
        ensure(fc.critical_threshold == grid[best], || format!("seed {seed}: φ_c differs"))?;
        let area: f64 = (1..grid.len()).map(|k| (grid[k] - grid[k - 1]) * (fs[k] + fs[k - 1]) / 2.0).sum();
        worst = worst.max((fc.area - area).abs()).max((fc.max_f - fs[best]).abs());
    }
    ensure(worst < 1e-12, || format!("max float deviation {worst:e}"))?;
    Ok(format!("100 instances, counts exact, max float deviation {worst:.1e}"))
}

// ---------------------------------------------------------------- 4, 8, 9

fn toy_set(n: usize, seed: u64) -> Dataset {
    let mut rng = RngState::new(seed);
    let mut ds = Dataset::new(3, 8);
    let when = NaiveDate::from_ymd_opt(2017, 8, 25).unwrap().and_hms_opt(0, 0, 0).unwrap();
    for i in 0..n {
        let label = (i % 2) as u8;
        let shift = if label == 1 { 1.5 } else { -1.5 };
        let x: Vec<f64> = (0..24).map(|k| 0.3 * rng.normal() + if k < 8 { shift } else { 0.0 }).collect();
        let meta = SampleMeta {
            sensor_id: format!("S{i:03}"),
            event: 0,
            t_end: i as u32,
            window_end: when,
        };
        ds.push(&x, label, meta).unwrap();
    }
    ds
}

fn toy_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        hidden_size: 4,
        conv_channels: vec![4, 8, 4],
        kernel_sizes: vec![3, 3, 3],
        dropout_rate: 0.0,
        n_vars: 3,
        seq_len: 8,
        batch_size: 8,
        learning_rate: 1e-2,
        max_epochs: 200,
        patience: 200,
        variant,
        seed: 7,
        ..ModelConfig::default()
    }
}

fn train_accuracy(model: &Model, data: &Dataset) -> Result<f64, String> {
    let p = model.predict_dataset(data).map_err(e2s)?;
    let cm = confusion_at(&p, data.labels(), 0.5).map_err(e2s)?;
    accuracy(&cm).map_err(e2s)
}

fn criterion_4() -> Check {
    let data = toy_set(16, 1);
    let mut parts = Vec::new();
    for variant in [Variant::Hybrid, Variant::FastGrnnOnly, Variant::FcnOnly] {
        let (model, report) = train(&toy_config(variant), &data, &data).map_err(e2s)?;
        let acc = train_accuracy(&model, &data)?;
        ensure(acc == 1.0, || format!("{variant}: train accuracy {acc}"))?;
        parts.push(format!("{variant} 100% ({} epochs)", report.epochs.len()));
    }
    Ok(parts.join(", "))
}

fn criterion_8() -> Check {
    let data = toy_set(16, 1);
    let cfg = ModelConfig {
        sparsity: SparsityBudget::new(0.25, 0.25).map_err(e2s)?,
        ..toy_config(Variant::Hybrid)
    };
    let (model, _) = train(&cfg, &data, &data).map_err(e2s)?;
    let g = model.params.fastgrnn.as_ref().ok_or("no recurrent branch")?;
    let (kw, ku) = (sparsity_keep_count(0.25, g.w.numel()), sparsity_keep_count(0.25, g.u.numel()));
    ensure(g.w.count_nonzero() <= kw && g.u.count_nonzero() <= ku, || {
        format!("nnz W {} > {kw} or U {} > {ku}", g.w.count_nonzero(), g.u.count_nonzero())
    })?;
    let acc = train_accuracy(&model, &data)?;
    ensure(acc >= 0.95, || format!("train accuracy {acc}"))?;
    Ok(format!(
        "nnz(W) {}/{kw}, nnz(U) {}/{ku}, train accuracy {acc}",
        g.w.count_nonzero(),
        g.u.count_nonzero()
    ))
}

fn criterion_9() -> Check {
    let data = toy_set(16, 2);
    let cfg = ModelConfig {
        max_epochs: 5,
        dropout_rate: 0.5,
        ..toy_config(Variant::Hybrid)
    };
    let (model, _) = train(&cfg, &data, &data).map_err(e2s)?;
    let dir = tempfile::tempdir().map_err(e2s)?;
    let path = dir.path().join("model.bin");
    save_model(&model, &path).map_err(e2s)?;
    let back = load_model(&path).map_err(e2s)?;
    ensure(back == model, || "reloaded parameters differ".into())?;
    let probe = toy_set(100, 3);
    let (a, b) = (model.predict_dataset(&probe).map_err(e2s)?, back.predict_dataset(&probe).map_err(e2s)?);
    ensure(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()), || "predictions differ".into())?;
    Ok("parameters and 100 predictions bit-identical".into())
}

// ---------------------------------------------------------------- 5

/// Benchmark model: the desk-scale architecture used throughout.
fn bench_model(seed: u64) -> ModelConfig {
    ModelConfig {
        hidden_size: 16,
        conv_channels: vec![16, 32, 16],
        kernel_sizes: vec![7, 5, 3],
        max_epochs: 100,
        patience: 10,
        seed,
        ..ModelConfig::default()
    }
}

fn bench_scenario() -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.window.stride = 4;
    cfg
}

fn criterion_5() -> Check {
    let mut acc = Vec::new();
    let mut max_f = Vec::new();
    let mut lines = Vec::new();
    for seed in 1..=3u64 {
        let sc = generate_scenario(&bench_scenario(), seed).map_err(e2s)?;
        let data = sc.datasets(&bench_scenario(), seed).map_err(e2s)?;
        let (model, report) = train(&bench_model(seed), &data.train, &data.val).map_err(e2s)?;
        let scores = model.predict_dataset(&data.test).map_err(e2s)?;
        let tm = threshold_metrics(&scores, data.test.labels(), &threshold_grid()).map_err(e2s)?;
        let at_c = confusion_at(&scores, data.test.labels(), tm.f.critical_threshold).map_err(e2s)?;
        let a = accuracy(&at_c).map_err(e2s)?;
        lines.push(format!(
            "seed {seed}: acc {a:.3} maxF {:.3} at φ_c {} ({} epochs)",
            tm.f.max_f,
            tm.f.critical_threshold,
            report.epochs.len()
        ));
        acc.push(a);
        max_f.push(tm.f.max_f);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mf) = (mean(&acc), mean(&max_f));
    let detail = format!("mean acc {ma:.4}, mean maxF {mf:.4} [{}]", lines.join("; "));
    ensure(ma >= 0.90 && mf >= 0.60, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 6, 7

struct SweepRun {
    dir: tempfile::TempDir,
    weights: Vec<f64>,
}

fn sweep_run() -> &'static Result<SweepRun, String> {
    static RUN: OnceLock<Result<SweepRun, String>> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().map_err(e2s)?;
        let data = dir.path().join("data");
        let out = dir.path().join("sweep");
        let arch = [
            "--set", "stride=4",
            "--set", "hidden_size=16",
            "--set", "conv_channels=16,32,16",
            "--set", "kernel_sizes=7,5,3",
            "--set", "max_epochs=100",
            "--set", "patience=10",
        ];
        let bin = env!("CARGO_BIN_EXE_floodnet");
        let run = |args: Vec<&str>| -> Result<(), String> {
            let o = Command::new(bin).args(&args).output().map_err(e2s)?;
            ensure(o.status.success(), || {
                format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr))
            })
        };
        let d = data.to_str().unwrap();
        let mut sim = vec!["simulate", "--seed", "1", "--out", d];
        sim.extend(arch);
        run(sim)?;
        let mut sw = vec![
            "sweep", "--seed", "1", "--data", d, "--out", out.to_str().unwrap(), "--weights", "1,10,100", "--runs", "10",
        ];
        sw.extend(arch);
        run(sw)?;
        Ok(SweepRun {
            dir,
            weights: vec![1.0, 10.0, 100.0],
        })
    })
}

fn read_table(path: &Path) -> Result<Table, String> {
    let f = fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Table::read_csv(f).map_err(e2s)
}

fn sweep_path(run: &SweepRun, name: &str) -> PathBuf {
    run.dir.path().join("sweep").join(name)
}

fn inversions(values: &[f64], rising: bool) -> usize {
    values
        .windows(2)
        .filter(|w| if rising { w[1] < w[0] } else { w[1] > w[0] })
        .count()
}

fn criterion_6() -> Check {
    let run = sweep_run().as_ref().map_err(Clone::clone)?;
    let runs = read_table(&sweep_path(run, "sweep_runs.csv"))?;
    let records = SweepReport::records_from_table(&runs).map_err(e2s)?;
    let mut recall = Vec::new();
    let mut precision = Vec::new();
    for &w in &run.weights {
        let ok: Vec<&RunMetrics> = records
            .iter()
            .filter(|r| r.weight == w)
            .filter_map(|r| r.outcome.as_ref().ok())
            .collect();
        ensure(!ok.is_empty(), || format!("w={w}: no successful runs"))?;
        recall.push(ok.iter().map(|m| m.recall).sum::<f64>() / ok.len() as f64);
        precision.push(ok.iter().map(|m| m.precision).sum::<f64>() / ok.len() as f64);
    }
    let (ri, pi) = (inversions(&recall, true), inversions(&precision, false));
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" → ");
    let detail = format!(
        "recall@0.5 {} ({ri} inversions), precision@0.5 {} ({pi} inversions)",
        fmt(&recall),
        fmt(&precision)
    );
    ensure(ri <= 1 && pi <= 1, || detail.clone())?;
    Ok(detail)
}

fn criterion_7() -> Check {
    let run = sweep_run().as_ref().map_err(Clone::clone)?;
    let summary = read_table(&sweep_path(run, "sweep_summary.csv"))?;
    let runs = read_table(&sweep_path(run, "sweep_runs.csv"))?;
    let best = read_table(&sweep_path(run, "sweep_best.csv"))?;
    ensure(summary.rows.len() == run.weights.len(), || {
        format!("{} rows for {} weights", summary.rows.len(), run.weights.len())
    })?;
    ensure(summary.header[..4] == ["weight", "max_f", "f_area", "pr_area"], || {
        format!("header {:?}", summary.header)
    })?;
    let records = SweepReport::records_from_table(&runs).map_err(e2s)?;
    ensure(records.len() == 10 * run.weights.len(), || format!("{} run rows", records.len()))?;
    let mut worst: f64 = 0.0;
    for row in &summary.rows {
        let w: f64 = row[0].parse().map_err(e2s)?;
        let ok: Vec<&RunMetrics> = records
            .iter()
            .filter(|r| r.weight == w)
            .filter_map(|r| r.outcome.as_ref().ok())
            .collect();
        for (col, get) in [
            (1, (|m: &RunMetrics| m.max_f) as fn(&RunMetrics) -> f64),
            (2, |m: &RunMetrics| m.f_area),
            (3, |m: &RunMetrics| m.pr_area),
        ] {
            let mean = ok.iter().map(|m| get(m)).sum::<f64>() / ok.len() as f64;
            let emitted: f64 = row[col].parse().map_err(e2s)?;
            worst = worst.max((mean - emitted).abs());
        }
    }
    ensure(worst < 1e-12, || format!("aggregate deviation {worst:e}"))?;
    let again = SweepReport::assemble(10, &run.weights, records);
    let (w, t) = (again.best_weight.ok_or("no best weight")?, again.best_threshold.ok_or("no threshold")?);
    ensure(best.rows[0] == [w.to_string(), t.to_string()], || {
        format!("emitted best {:?}, recomputed ({w}, {t})", best.rows[0])
    })?;
    Ok(format!(
        "{} rows, aggregate deviation {worst:.1e}, best w*={w} φ_c*={t}",
        summary.rows.len()
    ))
}

// ---------------------------------------------------------------- 10

fn criterion_10() -> Check {
    let graph = generate_graph(30, &GraphConfig::default(), &mut RngState::new(1)).map_err(e2s)?;
    let start = NaiveDate::from_ymd_opt(2019, 9, 17).unwrap().and_hms_opt(0, 0, 0).unwrap();
    let n = graph.len();

    let dry = simulate_event(&graph, &vec![vec![0.0; 200]; n], &SimConfig::default(), start).map_err(e2s)?;
    ensure(
        dry.level.iter().all(|s| s.windows(2).all(|w| w[1] <= w[0]) && s.iter().all(|&l| l < 0.0)),
        || "dry run rises or overflows".into(),
    )?;

    let closed = SimConfig {
        discharge_per_ft2: 0.0,
        spill_fraction: 0.0,
        ..SimConfig::default()
    };
    let (steps, storms) = sample_storms(&graph, &StormConfig::default(), &mut RngState::new(5));
    let rain = rainfall_field(&graph, &storms, steps, 3.0);
    let tr = simulate_event(&graph, &rain, &closed, start).map_err(e2s)?;
    let mut worst: f64 = 0.0;
    for (i, node) in graph.nodes.iter().enumerate() {
        let rise = tr.level[i][steps - 1] - (closed.initial_fill - 1.0) * node.bank_height;
        let runoff: f64 = rain[i].iter().map(|&r| closed.runoff(node, r)).sum();
        if runoff > 0.0 {
            worst = worst.max((rise - runoff).abs() / runoff);
        }
    }
    ensure(worst < 1e-9, || format!("conservation error {worst:e}"))?;

    let cascade = SimConfig {
        discharge_per_ft2: 0.0,
        ..SimConfig::default()
    };
    let mut burst = vec![vec![0.0; 150]; n];
    burst[0][20..40].iter_mut().for_each(|r| *r = 5.0);
    let wet = simulate_event(&graph, &burst, &cascade, start).map_err(e2s)?;
    let base = simulate_event(&graph, &vec![vec![0.0; 150]; n], &cascade, start).map_err(e2s)?;
    let spill = wet.level[0].iter().position(|&l| l > 0.0).ok_or("upstream never overflows")?;
    let down = graph.successors(0)[0];
    let reach = (0..150)
        .find(|&s| wet.level[down][s] != base.level[down][s])
        .ok_or("downstream never responds")?;
    ensure(reach > spill, || format!("lag {}", reach as i64 - spill as i64))?;

    let dir = tempfile::tempdir().map_err(e2s)?;
    let mut bytes = Vec::new();
    for sub in ["a", "b"] {
        let g = generate_graph(175, &GraphConfig::default(), &mut RngState::new(42)).map_err(e2s)?;
        let d = dir.path().join(sub);
        write_graph(&g, &d).map_err(e2s)?;
        bytes.push((fs::read(d.join("graph.csv")).map_err(e2s)?, fs::read(d.join("edges.csv")).map_err(e2s)?));
    }
    ensure(bytes[0] == bytes[1], || "graph files differ under a fixed seed".into())?;
    let sc = ScenarioConfig {
        n_sensors: 15,
        ..bench_scenario()
    };
    ensure(
        generate_scenario(&sc, 9).map_err(e2s)? == generate_scenario(&sc, 9).map_err(e2s)?,
        || "scenario differs under a fixed seed".into(),
    )?;
    Ok(format!(
        "dry run monotone, conservation {worst:.1e}, cascade lag {} steps, deterministic",
        reach - spill
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("gradient correctness", Duration::from_secs(120), criterion_1),
        ("FastGRNN cell oracle", Duration::from_secs(1), criterion_2),
        ("metric oracle equivalence", Duration::from_secs(10), criterion_3),
        ("separable-data overfit", Duration::from_secs(300), criterion_4),
        ("end-to-end synthetic benchmark", Duration::from_secs(1800), criterion_5),
        ("weight-recall tendency", Duration::from_secs(7200), criterion_6),
        ("sweep report fidelity", Duration::from_secs(7200), criterion_7),
        ("sparsity projection", Duration::from_secs(300), criterion_8),
        ("serialization round trip", Duration::from_secs(10), criterion_9),
        ("simulator physics sanity", Duration::from_secs(30), criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = check();
        let took = t.elapsed();
        let (verdict, detail) = match outcome {
            Ok(d) if took <= *budget => ("PASS", d),
            Ok(d) => ("FAIL", format!("{d}; over budget {:?}", budget)),
            Err(e) => ("FAIL", e),
        };
        if verdict == "FAIL" {
            failed += 1;
        }
        println!("{verdict} [{:>2}] {name}: {detail} ({:.1}s)", i + 1, took.as_secs_f64());
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
