//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero when a criterion fails that is not listed in
//! `EXPECTED_RED`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use dam2p::autodiff::{gradcheck, Adam, Params, Tape, Tensor};
use dam2p::config::{Mode, TrainConfig};
use dam2p::corpus::{generate_corpus, CorpusSpec, DomainStyle};
use dam2p::kernel::{
    decide, gaussian_kernel, margin_loss, margins, median_heuristic_gamma, rff_map, sample_frequencies, FeatureMap,
    KernelParams, TargetTerm, RHO_NAME, W_NAME,
};
use dam2p::metrics::{compute_metrics, confusion, percent};
use dam2p::nets::{
    discriminator, gan_objective, generator_batch, init_discriminator, init_generator, lstm_cell, EncodedFunction,
    LstmState, ModelDims,
};
use dam2p::preproc::{normalize_source, tokenize_statement, PreprocessedRecord, Vocab};
use dam2p::trainer::{
    ablate, audit, build_objective, labeled_records, prepare_run, train, LabeledFunction, SourceBatch,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria that are run and reported but known not to pass; the README
/// explains why.
const EXPECTED_RED: &[u8] = &[6, 7];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

fn small_dims() -> ModelDims {
    ModelDims { vocab: 6, embed: 3, hidden: 3, latent: 3, mlp_hidden: 4 }
}

fn toy_vocab() -> Vocab {
    Vocab::from_tokens(["if", "(", ")", "var1", "=", "<number>"].iter().map(|s| s.to_string()).collect()).unwrap()
}

fn random_function(rng: &mut ChaCha8Rng, vocab: &Vocab) -> EncodedFunction {
    let n = rng.random_range(1..4);
    let statements: Vec<Vec<String>> = (0..n)
        .map(|_| {
            (0..rng.random_range(1..5)).map(|_| vocab.token(rng.random_range(0..vocab.len())).unwrap().to_owned()).collect()
        })
        .collect();
    EncodedFunction::encode(&statements, vocab, 3)
}

const TRIALS: u64 = 20;
const FD_STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;

/// Worst relative error of `make` over independent parameterizations.
fn worst_over_trials(make: impl Fn(&mut ChaCha8Rng) -> f64) -> f64 {
    (0..TRIALS).map(|t| make(&mut ChaCha8Rng::seed_from_u64(1000 + t))).fold(0.0, f64::max)
}

fn gradient_suite() -> Outcome {
    let dims = small_dims();
    let vocab = toy_vocab();
    let mut worst = Vec::new();

    worst.push(("lstm cell", worst_over_trials(|rng| {
        let mut p = init_generator(&dims, rng);
        p.insert("x", uniform(rng, 2, dims.embed, 1.0));
        p.insert("h0", uniform(rng, 2, dims.hidden, 1.0));
        p.insert("c0", uniform(rng, 2, dims.hidden, 1.0));
        let readout = uniform(rng, 2, 2 * dims.hidden, 1.0);
        gradcheck::check(
            &p,
            |tape, b| {
                let s = lstm_cell(tape, b, "gen.fwd", b.var("x"), LstmState { h: b.var("h0"), c: b.var("c0") });
                let cat = tape.concat_cols(&[s.h, s.c]);
                let r = tape.constant(readout.clone());
                let prod = tape.mul(cat, r);
                tape.sum(prod)
            },
            FD_STEP,
        )
        .max_rel_error
    })));

    worst.push(("generator", worst_over_trials(|rng| {
        let p = init_generator(&dims, rng);
        let batch: Vec<EncodedFunction> = (0..3).map(|_| random_function(rng, &vocab)).collect();
        let readout = uniform(rng, 3, dims.latent, 1.0);
        gradcheck::check(
            &p,
            |tape, b| {
                let z = generator_batch(tape, b, &batch.iter().collect::<Vec<_>>());
                let r = tape.constant(readout.clone());
                let prod = tape.mul(z, r);
                tape.sum(prod)
            },
            FD_STEP,
        )
        .max_rel_error
    })));

    worst.push(("discriminator", worst_over_trials(|rng| {
        let mut p = init_discriminator(&dims, rng);
        p.insert("z", uniform(rng, 4, dims.latent, 1.0));
        let readout = uniform(rng, 4, 1, 1.0);
        gradcheck::check(
            &p,
            |tape, b| {
                let d = discriminator(tape, b, b.var("z"));
                let r = tape.constant(readout.clone());
                let prod = tape.mul(d, r);
                tape.sum(prod)
            },
            FD_STEP,
        )
        .max_rel_error
    })));

    worst.push(("rff map", worst_over_trials(|rng| {
        let map = FeatureMap::Rff(sample_frequencies(3, 6, rng.random_range(0.2..2.0), rng.random()).unwrap());
        let mut p = Params::new();
        p.insert("z", uniform(rng, 4, 3, 1.0));
        let readout = uniform(rng, 4, 12, 1.0);
        gradcheck::check(
            &p,
            |tape, b| {
                let phi = map.apply(tape, b.var("z"));
                let r = tape.constant(readout.clone());
                let prod = tape.mul(phi, r);
                tape.sum(prod)
            },
            FD_STEP,
        )
        .max_rel_error
    })));

    worst.push(("adversarial term", worst_over_trials(|rng| {
        let mut p = init_discriminator(&dims, rng);
        p.insert("zs", uniform(rng, 3, dims.latent, 1.0));
        p.insert("zt", uniform(rng, 2, dims.latent, 1.0));
        gradcheck::check(
            &p,
            |tape, b| {
                let ds = discriminator(tape, b, b.var("zs"));
                let dt = discriminator(tape, b, b.var("zt"));
                gan_objective(tape, ds, dt)
            },
            FD_STEP,
        )
        .max_rel_error
    })));

    worst.push(("margin loss", worst_over_trials(|rng| {
        let map = FeatureMap::Rff(sample_frequencies(3, 5, rng.random_range(0.2..2.0), rng.random()).unwrap());
        let mut p = KernelParams { w: (0..10).map(|_| rng.random_range(-1.0..1.0)).collect(), rho: rng.random_range(-0.5..0.5) }
            .to_params();
        p.insert("zs", uniform(rng, 4, 3, 1.0));
        p.insert("zt", uniform(rng, 3, 3, 1.0));
        let labels = [1, 0, 1, 0];
        let lambda = rng.random_range(0.01..1.0);
        gradcheck::check(
            &p,
            |tape, b| {
                let ps = map.apply(tape, b.var("zs"));
                let pt = map.apply(tape, b.var("zt"));
                margin_loss(tape, ps, &labels, TargetTerm::Hinge(pt), b.var(W_NAME), b.var(RHO_NAME), lambda)
                    .unwrap()
                    .total
            },
            FD_STEP,
        )
        .max_rel_error
    })));

    worst.push(("combined objective", worst_over_trials(|rng| {
        let cfg = TrainConfig {
            hidden: dims.hidden,
            embed: dims.embed,
            latent: dims.latent,
            mlp_hidden: dims.mlp_hidden,
            rff_features: 4,
            max_len: 3,
            mode: Mode::Full,
            alpha: rng.random_range(0.01..1.0),
            lambda: rng.random_range(0.01..1.0),
            ..TrainConfig::default()
        };
        let map = FeatureMap::Rff(sample_frequencies(dims.latent, 4, rng.random_range(0.2..2.0), rng.random()).unwrap());
        let mut p = init_generator(&dims, rng);
        p.merge(KernelParams { w: (0..8).map(|_| rng.random_range(-1.0..1.0)).collect(), rho: rng.random_range(-0.5..0.5) }.to_params());
        p.merge(init_discriminator(&dims, rng));
        let source: Vec<EncodedFunction> = (0..3).map(|_| random_function(rng, &vocab)).collect();
        let target: Vec<EncodedFunction> = (0..2).map(|_| random_function(rng, &vocab)).collect();
        let labels = vec![1, 0, 0];
        gradcheck::check_entries(
            &p,
            |tape, b| {
                let batch = SourceBatch { inputs: source.iter().collect(), labels: labels.clone() };
                let t: Vec<&EncodedFunction> = target.iter().collect();
                build_objective(tape, b, Some(&map), &batch, &t, &cfg).unwrap().objective
            },
            FD_STEP,
            6,
        )
        .max_rel_error
    })));

    let pass = worst.iter().all(|(_, e)| *e < GRAD_TOL);
    let detail = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    outcome(pass, format!("max relative error over {TRIALS} draws each: {detail}"))
}

fn synthetic(n: usize, style: DomainStyle, seed: u64) -> Vec<LabeledFunction> {
    let raw = generate_corpus(&CorpusSpec::new(n, style, seed)).unwrap();
    let pre: Vec<PreprocessedRecord> = raw.iter().map(|r| PreprocessedRecord::from_raw(r).0).collect();
    labeled_records(&pre).unwrap()
}

fn kernel_fidelity() -> Outcome {
    let source = synthetic(200, DomainStyle::A, 1);
    let target = synthetic(200, DomainStyle::B, 2);
    let data = prepare_run(&source, &target, 0, 1).unwrap();
    let cfg = TrainConfig::default();
    let dims = cfg.dims(data.vocab.len());
    let params = init_generator(&dims, &mut ChaCha8Rng::seed_from_u64(0));
    let enc: Vec<EncodedFunction> = data
        .source_train
        .iter()
        .map(|f| &f.statements)
        .chain(data.target_train.iter().map(|f| &f.statements))
        .take(200)
        .map(|s| EncodedFunction::encode(s, &data.vocab, cfg.max_len))
        .collect();
    let mut tape = Tape::new();
    let bound = params.bind_prefix(&mut tape, "", false);
    let z = generator_batch(&mut tape, &bound, &enc.iter().collect::<Vec<_>>());
    let zv = tape.value(z);
    let latents: Vec<Vec<f64>> = (0..zv.rows()).map(|r| zv.row_slice(r).to_vec()).collect();
    let gamma = median_heuristic_gamma(&latents);
    let freqs = sample_frequencies(cfg.latent, 512, gamma, 7).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_kernel, mut worst_norm) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let a = &latents[rng.random_range(0..latents.len())];
        let b = &latents[rng.random_range(0..latents.len())];
        let (pa, pb) = (rff_map(a, &freqs), rff_map(b, &freqs));
        let dot: f64 = pa.iter().zip(&pb).map(|(x, y)| x * y).sum();
        worst_kernel = worst_kernel.max((dot - gaussian_kernel(a, b, gamma)).abs());
        for p in [&pa, &pb] {
            worst_norm = worst_norm.max((p.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs());
        }
    }
    outcome(
        worst_kernel < 0.2 && worst_norm <= 1e-12,
        format!("gamma {gamma:.4}, max kernel error {worst_kernel:.4}, max | |phi| - 1 | {worst_norm:.1e}"),
    )
}

/// Exact minimizer of the hinge objective with the identity map: every
/// partition of the points into inactive, on-margin and violated yields an
/// equality-constrained quadratic problem; the best of their solutions,
/// scored on the true objective, is the global optimum.
mod qp {
    pub struct Point {
        pub x: [f64; 2],
        pub vulnerable: bool,
    }

    fn signed(p: &Point) -> f64 {
        if p.vulnerable { 1.0 } else { -1.0 }
    }

    fn offset(p: &Point) -> f64 {
        if p.vulnerable { 0.0 } else { 1.0 }
    }

    /// `u = (w1, w2, ρ)`; constraint row for point `p` is `ỹ(w·x − ρ)`.
    fn row(p: &Point) -> [f64; 3] {
        let s = signed(p);
        [s * p.x[0], s * p.x[1], -s]
    }

    pub fn objective(points: &[Point], u: [f64; 3]) -> f64 {
        let c = 1.0 / points.len() as f64;
        let hinge: f64 = points
            .iter()
            .map(|p| {
                let a = row(p);
                let z = a[0] * u[0] + a[1] * u[1] + a[2] * u[2];
                (offset(p) - z).max(0.0)
            })
            .sum();
        0.5 * (u[0] * u[0] + u[1] * u[1]) + c * hinge
    }

    fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
        let n = b.len();
        for col in 0..n {
            let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
            if a[pivot][col].abs() < 1e-12 {
                return None;
            }
            a.swap(col, pivot);
            b.swap(col, pivot);
            for r in 0..n {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    for k in col..n {
                        a[r][k] -= f * a[col][k];
                    }
                    b[r] -= f * b[col];
                }
            }
        }
        Some((0..n).map(|i| b[i] / a[i][i]).collect())
    }

    pub fn solve_exact(points: &[Point]) -> [f64; 3] {
        let n = points.len();
        let c = 1.0 / n as f64;
        let mut best: Option<(f64, [f64; 3])> = None;
        for code in 0..3usize.pow(n as u32) {
            let mut status = Vec::with_capacity(n);
            let mut k = code;
            for _ in 0..n {
                status.push(k % 3);
                k /= 3;
            }
            let margin: Vec<&Point> = points.iter().zip(&status).filter(|(_, &s)| s == 1).map(|(p, _)| p).collect();
            if margin.len() > 3 {
                continue;
            }
            // Stationarity: diag(1,1,0)·u − c·Σ_violated a_i − Σ_margin μ_i a_i = 0.
            let mut lin = [0.0; 3];
            for (p, _) in points.iter().zip(&status).filter(|(_, &s)| s == 2) {
                let a = row(p);
                for j in 0..3 {
                    lin[j] += c * a[j];
                }
            }
            let m = margin.len();
            let size = 3 + m;
            let mut a = vec![vec![0.0; size]; size];
            let mut b = vec![0.0; size];
            a[0][0] = 1.0;
            a[1][1] = 1.0;
            b[..3].copy_from_slice(&lin);
            for (i, p) in margin.iter().enumerate() {
                let r = row(p);
                for j in 0..3 {
                    a[j][3 + i] = -r[j];
                    a[3 + i][j] = r[j];
                }
                b[3 + i] = offset(p);
            }
            let Some(sol) = solve(a, b) else { continue };
            let u = [sol[0], sol[1], sol[2]];
            let f = objective(points, u);
            if best.is_none_or(|(bf, _)| f < bf) {
                best = Some((f, u));
            }
        }
        best.expect("some partition is solvable").1
    }

    /// Smallest distance from a non-vulnerable point to the hyperplane.
    pub fn clean_margin(points: &[Point], u: [f64; 3]) -> f64 {
        let norm = (u[0] * u[0] + u[1] * u[1]).sqrt();
        points
            .iter()
            .filter(|p| !p.vulnerable)
            .map(|p| -(u[0] * p.x[0] + u[1] * p.x[1] - u[2]) / norm)
            .fold(f64::INFINITY, f64::min)
    }
}

fn qp_oracle() -> Outcome {
    use qp::Point;
    let points = vec![
        Point { x: [3.0, 2.5], vulnerable: true },
        Point { x: [4.0, 3.5], vulnerable: true },
        Point { x: [2.5, 4.0], vulnerable: true },
        Point { x: [3.5, 3.0], vulnerable: true },
        Point { x: [-2.0, -1.0], vulnerable: false },
        Point { x: [-1.0, -2.5], vulnerable: false },
        Point { x: [-3.0, -2.0], vulnerable: false },
        Point { x: [-1.5, -1.5], vulnerable: false },
    ];
    let exact = qp::solve_exact(&points);

    let map = FeatureMap::Linear { dim: 2 };
    let z = Tensor::from_rows(&points.iter().map(|p| p.x.to_vec()).collect::<Vec<_>>()).unwrap();
    let labels: Vec<u8> = points.iter().map(|p| u8::from(p.vulnerable)).collect();
    let mut params = KernelParams { w: vec![0.01, -0.01], rho: 0.0 }.to_params();
    let mut opt = Adam::new(1e-2);
    let steps = 40_000;
    for step in 0..steps {
        opt.lr = 1e-2 * (1e-3f64).powf(step as f64 / steps as f64);
        let mut tape = Tape::new();
        let b = params.bind(&mut tape);
        let zv = tape.constant(z.clone());
        let phi = map.apply(&mut tape, zv);
        let l = margin_loss(&mut tape, phi, &labels, TargetTerm::CountOnly(0), b.var(W_NAME), b.var(RHO_NAME), 1.0)
            .unwrap();
        let grads = tape.backward(l.total).unwrap().collect(&tape, &b);
        opt.step(&mut params, &grads).unwrap();
    }
    let kp = KernelParams::from_params(&params).unwrap();
    let learned = [kp.w[0], kp.w[1], kp.rho];

    let (m_exact, m_learned) = (qp::clean_margin(&points, exact), qp::clean_margin(&points, learned));
    let rel = (m_learned - m_exact).abs() / m_exact;
    // Vulnerable support vectors sit exactly on score 0 at the optimum, so
    // predictions are compared midway between the two constraint offsets.
    let threshold = -0.5;
    let exact_kp = KernelParams { w: vec![exact[0], exact[1]], rho: exact[2] };
    let agree = points
        .iter()
        .filter(|p| decide(&p.x, &kp, &map, threshold) == decide(&p.x, &exact_kp, &map, threshold))
        .count();
    outcome(
        rel < 0.02 && agree == points.len(),
        format!(
            "margin exact {m_exact:.5} vs minimized {m_learned:.5} ({:.3}%), objective {:.6} vs {:.6}, agreement {agree}/8",
            100.0 * rel,
            qp::objective(&points, exact),
            qp::objective(&points, learned)
        ),
    )
}

fn fuzz_source(rng: &mut ChaCha8Rng) -> String {
    const PIECES: &[&str] = &[
        "int ", "x", "y1", "_tmp", " ", "  ", "\t", "\n", "\r\n", ";", "{", "}", "(", ")", "=", "==", "+", "<<=", "->",
        "42", "0x1F", "3.5e-2", "'a'", "'\\n'", "\"str\"", "\"a\\\"b\"", "/* c */", "// line\n", "/*", "*/", "//", "#",
        "é", "\u{7f}", ",", "&", "!", "[", "]", "memcpy", "if", "while",
    ];
    (0..rng.random_range(0..30)).map(|_| PIECES[rng.random_range(0..PIECES.len())]).collect()
}

fn tokenizer_golden() -> Outcome {
    let got = tokenize_statement("if(func2(func3(number,number),&var2)!=var10)");
    let expected = [
        "if", "(", "func2", "(", "func3", "(", "number", "number", ")", "&", "var2", ")", "!=", "var10", ")",
    ];
    let golden = got == expected;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut stable = 0;
    for _ in 0..1000 {
        let src = fuzz_source(&mut rng);
        let once = normalize_source(&src).text;
        stable += usize::from(normalize_source(&once).text == once);
    }
    outcome(golden && stable == 1000, format!("{} tokens, golden {golden}, idempotent on {stable}/1000 inputs", got.len()))
}

fn metrics_fixture() -> Outcome {
    let mut preds = Vec::new();
    let mut truth = Vec::new();
    for (p, t, n) in [(1u8, 1u8, 7), (0, 1, 1), (1, 0, 1), (0, 0, 91)] {
        preds.extend(std::iter::repeat_n(p, n));
        truth.extend(std::iter::repeat_n(t, n));
    }
    let m = compute_metrics(&confusion(&preds, &truth).unwrap());
    let shown = [m.fnr, m.recall, m.precision, m.f1, m.fpr].map(percent);
    let expected = ["12.50", "87.50", "87.50", "87.50", "1.09"];
    let fpr_gap = (100.0 * m.fpr - 1.08).abs();
    outcome(
        shown == expected && fpr_gap <= 0.02,
        format!("FNR {} Recall {} Precision {} F1 {} FPR {} (printed 1.08, gap {fpr_gap:.4})", shown[0], shown[1], shown[2], shown[3], shown[4]),
    )
}

/// Settings of the ablation run; sized to finish within the time budget on
/// one core.
fn desk_config() -> TrainConfig {
    TrainConfig { hidden: 32, embed: 32, latent: 32, epochs: 30, n_runs: 5, seed: 0, ..TrainConfig::default() }
}

const ABLATION_BUDGET: Duration = Duration::from_secs(60 * 60);

fn ablation_direction() -> Outcome {
    let started = Instant::now();
    let source = synthetic(1000, DomainStyle::A, 1);
    let target = synthetic(1000, DomainStyle::B, 2);
    let results = ablate(&desk_config(), &source, &target).unwrap();
    let elapsed = started.elapsed();
    let f1 = |m: Mode| 100.0 * results[&m].mean.f1;
    let (full, st, s) = (f1(Mode::Full), f1(Mode::KernelSt), f1(Mode::KernelS));
    let table = Mode::ALL.iter().map(|&m| format!("{m} {:.2}", f1(m))).collect::<Vec<_>>().join(", ");
    outcome(
        full >= st && st >= s && full - s >= 5.0 && elapsed < ABLATION_BUDGET,
        format!("mean F1 {table}; FULL - KERNEL_S = {:.2}", full - s),
    )
}

fn scale_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = 16;
    let freqs = sample_frequencies(d, 64, 0.3, 9).unwrap();
    let map = FeatureMap::Rff(freqs);
    let points: Vec<Vec<f64>> = (0..1000).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let kp = KernelParams { w: (0..128).map(|_| rng.random_range(-1.0..1.0)).collect(), rho: 0.05 };
    let base_preds: Vec<u8> = points.iter().map(|z| decide(z, &kp, &map, 0.0)).collect();
    let vulnerable: Vec<Vec<f64>> =
        points.iter().zip(&base_preds).filter(|(_, &p)| p == 1).map(|(z, _)| map.features(z)).collect();
    let base = margins(&kp, &vulnerable).unwrap();

    let mut report = Vec::new();
    let mut pass = true;
    for k in [0.5, 2.0, 10.0] {
        let scaled = kp.scaled(k);
        let preds_same = points.iter().zip(&base_preds).all(|(z, &p)| decide(z, &scaled, &map, 0.0) == p);
        let m = margins(&scaled, &vulnerable).unwrap();
        let bits_same = m.0.to_bits() == base.0.to_bits() && m.1.to_bits() == base.1.to_bits();
        let rel = ((m.0 - base.0) / base.0).abs().max(((m.1 - base.1) / base.1).abs());
        pass &= preds_same && bits_same;
        report.push(format!("k={k}: predictions {}, margins {} (rel {rel:.1e})", if preds_same { "identical" } else { "differ" }, if bits_same { "bit-identical" } else { "differ" }));
    }
    outcome(pass, report.join("; "))
}

fn label_hygiene() -> Outcome {
    let source = synthetic(120, DomainStyle::A, 1);
    let target = synthetic(120, DomainStyle::B, 2);
    let data = prepare_run(&source, &target, 0, 1).unwrap();
    let cfg = TrainConfig {
        hidden: 8,
        embed: 8,
        latent: 8,
        rff_features: 16,
        mlp_hidden: 16,
        batch: 20,
        epochs: 2,
        ..TrainConfig::default()
    };
    let target_domain = data.target_test[0].domain.clone();
    let source_domain = data.source_train[0].domain.clone();
    let mut reads = Vec::new();
    for mode in Mode::ALL {
        audit::reset();
        train(&TrainConfig { mode, ..cfg.clone() }, &data.vocab, &data.source_train, &data.source_val, &data.target_train)
            .unwrap();
        reads.push((mode, audit::label_reads(&target_domain), audit::label_reads(&source_domain)));
    }
    let pass = reads.iter().all(|&(_, t, s)| t == 0 && s > 0);
    let detail = reads.iter().map(|(m, t, s)| format!("{m} target {t} source {s}")).collect::<Vec<_>>().join(", ");
    outcome(pass, format!("label reads per mode: {detail}"))
}

fn determinism() -> Outcome {
    let source = synthetic(300, DomainStyle::A, 1);
    let target = synthetic(300, DomainStyle::B, 2);
    let cfg = TrainConfig { hidden: 16, embed: 16, latent: 16, rff_features: 64, batch: 50, epochs: 3, mode: Mode::Full, seed: 3, ..TrainConfig::default() };
    let run = || {
        let data = prepare_run(&source, &target, cfg.seed, cfg.min_count).unwrap();
        let out = train(&cfg, &data.vocab, &data.source_train, &data.source_val, &data.target_train).unwrap();
        (out.checkpoint().unwrap().to_json().unwrap(), out.history.to_csv())
    };
    let (a, b) = (run(), run());
    outcome(
        a.0 == b.0 && a.1 == b.1,
        format!("checkpoint {} bytes identical {}, history {} bytes identical {}", a.0.len(), a.0 == b.0, a.1.len(), a.1 == b.1),
    )
}

fn main() -> ExitCode {
    let criteria: [(u8, &str, fn() -> Outcome); 9] = [
        (1, "gradient suite", gradient_suite),
        (2, "kernel fidelity", kernel_fidelity),
        (3, "exact solver agreement", qp_oracle),
        (4, "tokenizer golden and normalization idempotence", tokenizer_golden),
        (5, "metrics fixture", metrics_fixture),
        (6, "ablation direction", ablation_direction),
        (7, "scale invariance", scale_invariance),
        (8, "label hygiene", label_hygiene),
        (9, "determinism", determinism),
    ];
    let only: Option<Vec<u8>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut unexpected = 0;
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let started = Instant::now();
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {id} {verdict} {name}: {} [{:.1} s]", o.detail, started.elapsed().as_secs_f64());
        if !o.pass && !EXPECTED_RED.contains(&id) {
            unexpected += 1;
        }
    }
    if unexpected > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
