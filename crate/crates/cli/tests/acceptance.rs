//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs as a plain binary (`harness = false`) so the lines
//! reach the terminal in order.

use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use fedmcsa_core::aggregation::{average_aggregate, mcsa_aggregate, CohortMatrix};
use fedmcsa_core::data::{generate_synthetic, shard_by_label, DatasetKind, FederationData, MNIST_SIZE_RANGE};
use fedmcsa_core::engine::{
    initial_states, local_update, run_experiment, run_round, Algorithm, ClientState, LocalRule, LocalSchedule,
    Objective, RunConfig,
};
use fedmcsa_core::nn::{self, Architecture, Gradient, Matrix, Model, ModelSpec};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Outcome of one criterion: pass flag and a short detail string.
type Verdict = (bool, String);

struct Criterion {
    id: usize,
    name: &'static str,
    budget: Option<Duration>,
    check: fn(&mut Shared) -> Verdict,
}

/// Desk-scale runs shared by the ordering, ablation and sweep criteria.
#[derive(Default)]
struct Shared {
    desk: Option<DeskRuns>,
}

const DESK_SEEDS: [u64; 3] = [1, 2, 3];

struct DeskRuns {
    fedavg: Vec<f64>,
    fedmcsa: Vec<f64>,
    minus: Vec<f64>,
    fedavg_plus: Vec<f64>,
    sigma0: Vec<f64>,
    sigma10: Vec<f64>,
    elapsed: Duration,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fmt_runs(v: &[f64]) -> String {
    let each: Vec<String> = v.iter().map(|x| format!("{x:.2}")).collect();
    format!("{:.2} [{}]", mean(v), each.join(" "))
}

fn desk_config(algorithm: Algorithm, seed: u64, sigma: f64) -> RunConfig {
    let mut cfg = RunConfig::defaults(algorithm, DatasetKind::Synthetic, Architecture::Mlr);
    cfg.clients = 20;
    cfg.clients_per_round = 10;
    cfg.rounds = 100;
    cfg.alpha = 0.5;
    cfg.beta = 0.5;
    cfg.seed = seed;
    cfg.sigma = sigma;
    cfg
}

impl Shared {
    fn desk(&mut self) -> &DeskRuns {
        self.desk.get_or_insert_with(|| {
            let start = Instant::now();
            let mut runs = DeskRuns {
                fedavg: vec![],
                fedmcsa: vec![],
                minus: vec![],
                fedavg_plus: vec![],
                sigma0: vec![],
                sigma10: vec![],
                elapsed: Duration::ZERO,
            };
            for seed in DESK_SEEDS {
                let data = generate_synthetic(20, 0.5, 0.5, seed).expect("synthetic federation");
                let bmta = |alg, sigma| {
                    run_experiment(&desk_config(alg, seed, sigma), &data, None)
                        .expect("desk run")
                        .series
                        .bmta_percent()
                };
                runs.fedavg.push(bmta(Algorithm::FedAvg, 50.0));
                runs.fedmcsa.push(bmta(Algorithm::FedMcsa, 50.0));
                runs.minus.push(bmta(Algorithm::FedMcsaMinusMcsa, 50.0));
                runs.fedavg_plus.push(bmta(Algorithm::FedAvgPlusMcsa, 50.0));
                runs.sigma0.push(bmta(Algorithm::FedMcsa, 0.0));
                runs.sigma10.push(bmta(Algorithm::FedMcsa, 10.0));
            }
            runs.elapsed = start.elapsed();
            runs
        })
    }
}

fn random_model(spec: ModelSpec, rng: &mut ChaCha8Rng, scale: f64) -> Model {
    let comps = spec
        .layout()
        .iter()
        .map(|&(_, fan_in, fan_out)| (0..fan_in * fan_out).map(|_| rng.random_range(-scale..scale)).collect())
        .collect();
    Model::from_components(spec, comps).expect("random model")
}

fn finite_difference_error(model: &Model, x: &Matrix, y: &[usize]) -> f64 {
    let eps = 1e-5;
    let (_, grad) = nn::loss_and_grad(model, x, y, 0.0).expect("gradient");
    let mut worst: f64 = 0.0;
    for l in 0..model.num_components() {
        for j in 0..model.component(l).len() {
            let mut plus = model.clone();
            plus.component_mut(l)[j] += eps;
            let mut minus = model.clone();
            minus.component_mut(l)[j] -= eps;
            let numeric =
                (nn::loss(&plus, x, y, 0.0).unwrap() - nn::loss(&minus, x, y, 0.0).unwrap()) / (2.0 * eps);
            let analytic = grad.components()[l][j];
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(err);
        }
    }
    worst
}

fn gradient_oracle(_: &mut Shared) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for arch in [Architecture::Mlr, Architecture::Dnn] {
        for _ in 0..20 {
            let d = rng.random_range(1..=24);
            let c = rng.random_range(2..=10);
            let n = rng.random_range(1..=16);
            let spec = match arch {
                Architecture::Mlr => ModelSpec::mlr(d, c),
                Architecture::Dnn => ModelSpec::dnn(d, rng.random_range(1..=12), c),
            };
            let model = random_model(spec, &mut rng, 1.0);
            let x = Matrix::new(n, d, (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
            let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
            worst = worst.max(finite_difference_error(&model, &x, &y));
        }
    }
    (worst < 1e-4, format!("max relative error {worst:.2e} over 40 instances"))
}

fn build_cohort(models: Vec<Model>) -> CohortMatrix {
    CohortMatrix::new(models, 1).expect("cohort")
}

fn scaled(model: &Model, k: f64) -> Model {
    let comps = model
        .components()
        .iter()
        .map(|c| c.values.iter().map(|v| v * k).collect())
        .collect();
    Model::from_components(*model.spec(), comps).unwrap()
}

fn max_diff(a: &Model, b: &Model) -> f64 {
    a.flatten()
        .iter()
        .zip(b.flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Returns the first violated property of one randomized cohort.
fn attention_case(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let n = rng.random_range(1..=8);
    let c = rng.random_range(2..=8);
    let d = rng.random_range(1..=64 / c);
    let sigma = rng.random_range(0.0..=100.0);
    let spec = ModelSpec::mlr(d, c);
    let models: Vec<Model> = (0..n).map(|_| random_model(spec, rng, 3.0)).collect();
    let cohort = build_cohort(models.clone());
    let (out, psi) = mcsa_aggregate(&cohort, sigma).map_err(|e| e.to_string())?;

    for m in &psi.layers {
        for i in 0..n {
            let s: f64 = m.row(i).iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(format!("row sum {s}"));
            }
        }
    }

    let (uniform, _) = mcsa_aggregate(&cohort, 0.0).map_err(|e| e.to_string())?;
    let mean = average_aggregate(&cohort, None).map_err(|e| e.to_string())?;
    for m in uniform.models() {
        let diff = max_diff(m, &mean);
        if diff > 1e-12 {
            return Err(format!("sigma=0 differs from mean by {diff:e}"));
        }
    }

    let same = build_cohort(vec![models[0].clone(); n]);
    let (fixed, _) = mcsa_aggregate(&same, sigma).map_err(|e| e.to_string())?;
    for m in fixed.models() {
        let diff = max_diff(m, &models[0]);
        if diff > 1e-12 {
            return Err(format!("identical cohort moved by {diff:e}"));
        }
    }

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let permuted = build_cohort(perm.iter().map(|&p| models[p].clone()).collect());
    let (out_p, psi_p) = mcsa_aggregate(&permuted, sigma).map_err(|e| e.to_string())?;
    for (i, &p) in perm.iter().enumerate() {
        if out_p.models()[i] != out.models()[p] {
            return Err("permutation changed an output".into());
        }
        for (lp, l) in psi_p.layers.iter().zip(&psi.layers) {
            for (k, &q) in perm.iter().enumerate() {
                if lp.row(i)[k] != l.row(p)[q] {
                    return Err("permutation changed a weight".into());
                }
            }
        }
    }

    for (l, _) in spec.layout().iter().enumerate() {
        for j in 0..models[0].component(l).len() {
            let column = models.iter().map(|m| m.component(l)[j]);
            let lo = column.clone().fold(f64::INFINITY, f64::min);
            let hi = column.fold(f64::NEG_INFINITY, f64::max);
            if out.models().iter().any(|m| !(lo..=hi).contains(&m.component(l)[j])) {
                return Err("output left the coordinate hull".into());
            }
        }
    }

    let k = rng.random_range(0.01..100.0);
    let rescaled = build_cohort(models.iter().map(|m| scaled(m, k)).collect());
    let (_, psi_k) = mcsa_aggregate(&rescaled, sigma).map_err(|e| e.to_string())?;
    for (a, b) in psi_k.layers.iter().zip(&psi.layers) {
        for i in 0..n {
            for (x, y) in a.row(i).iter().zip(b.row(i)) {
                if (x - y).abs() > 1e-9 {
                    return Err(format!("rescaling by {k} moved a weight by {:e}", (x - y).abs()));
                }
            }
        }
    }
    Ok(())
}

fn attention_algebra(_: &mut Shared) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..1000 {
        if let Err(why) = attention_case(&mut rng) {
            return (false, format!("cohort {case}: {why}"));
        }
    }
    (true, "1000 cohorts".into())
}

/// f(θ) = ½θ² with gradient θ.
struct Quadratic;

impl Objective for Quadratic {
    fn minibatch_grad(&self, params: &Model, _: &mut ChaCha8Rng) -> fedmcsa_core::Result<(f64, Gradient)> {
        let comps: Vec<Vec<f64>> = params.components().iter().map(|c| c.values.clone()).collect();
        let loss = 0.5 * params.flatten().iter().map(|v| v * v).sum::<f64>();
        Ok((loss, Gradient::from_components(comps)))
    }
}

fn proximal_oracle(_: &mut Shared) -> Verdict {
    let (w, lambda) = (2.0, 5.0);
    let anchor = Model::from_components(ModelSpec::mlr(1, 1), vec![vec![w], vec![w]]).unwrap();
    let client = ClientState::new(0, anchor);
    let out = local_update(
        &client,
        &Quadratic,
        LocalRule::Proximal { strength: lambda },
        LocalSchedule { steps: 500, eta: 0.01 },
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .expect("local update");
    let target = lambda * w / (1.0 + lambda);
    let err = out.model.flatten().iter().map(|v| (v - target).abs()).fold(0.0, f64::max);
    (err < 1e-3, format!("|θ - 5/3| = {err:.2e}"))
}

fn degeneracy(_: &mut Shared) -> Verdict {
    let data = generate_synthetic(10, 0.5, 0.5, 5).expect("federation");
    let series = |alg, sigma| {
        let mut cfg = RunConfig::defaults(alg, DatasetKind::Synthetic, Architecture::Mlr);
        cfg.clients = 10;
        cfg.clients_per_round = 10;
        cfg.rounds = 20;
        cfg.seed = 5;
        cfg.sigma = sigma;
        run_experiment(&cfg, &data, None).expect("run").series.mean_accuracies()
    };
    let a = series(Algorithm::FedMcsa, 0.0);
    let b = series(Algorithm::FedMcsaMinusMcsa, 50.0);
    let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    (a.len() == 20 && diff <= 1e-9, format!("max per-round gap {diff:e} over {} rounds", a.len()))
}

fn single_client_data() -> FederationData {
    let f = generate_synthetic(2, 0.5, 0.5, 9).expect("federation");
    FederationData::new(f.name, f.feature_width, f.classes, f.clients[..1].to_vec()).expect("single client")
}

fn single_client(_: &mut Shared) -> Verdict {
    let data = single_client_data();
    let config = |alg| {
        let mut cfg = RunConfig::defaults(alg, DatasetKind::Synthetic, Architecture::Mlr);
        cfg.clients = 1;
        cfg.clients_per_round = 1;
        cfg.rounds = 10;
        cfg.lambda = 0.0;
        cfg.seed = 9;
        cfg
    };
    let trajectory = |alg| {
        let cfg = config(alg);
        let (mut server, mut clients) = initial_states(&cfg, &data).expect("init");
        let mut steps = Vec::new();
        for _ in 0..cfg.rounds {
            run_round(&mut server, &mut clients, &data, &cfg).expect("round");
            steps.push((server.columns[0].clone(), clients[0].local.clone()));
        }
        steps
    };
    let a = trajectory(Algorithm::FedMcsa);
    let b = trajectory(Algorithm::FedAvg);
    let same = a.len() == 10 && a == b;
    (same, format!("{} rounds compared, {}", a.len(), if same { "bit-identical" } else { "diverged" }))
}

fn masked_metrics(path: &Path) -> Vec<String> {
    let text = fs::read_to_string(path).unwrap_or_default();
    text.lines()
        .map(|line| {
            let mut cells: Vec<&str> = line.split(',').collect();
            cells.pop();
            cells.join(",")
        })
        .collect()
}

fn determinism(_: &mut Shared) -> Verdict {
    let dir = tempfile::tempdir().expect("tempdir");
    let bin = env!("CARGO_BIN_EXE_fedmcsa");
    let mut checked = 0;
    for alg in ["fedmcsa", "pfedme-pm", "heurfedamp"] {
        let mut outputs = Vec::new();
        for threads in ["1", "4", "1"] {
            let out = dir.path().join(format!("{alg}-{threads}-{}", outputs.len()));
            let status = Command::new(bin)
                .args(["run", "--algorithm", alg, "--clients", "12", "--clients-per-round", "6"])
                .args(["--rounds", "8", "--local-epochs", "5", "--seed", "17", "--threads", threads])
                .arg("--out")
                .arg(&out)
                .output()
                .expect("spawn fedmcsa");
            if !status.status.success() {
                return (false, format!("{alg} exited with {}", status.status));
            }
            outputs.push(masked_metrics(&out.join("metrics.csv")));
        }
        if outputs[0].len() != 9 || outputs.iter().any(|o| *o != outputs[0]) {
            return (false, format!("{alg}: metrics differ across thread counts"));
        }
        checked += 1;
    }
    (true, format!("{checked} algorithms, threads 1/4/1, timing column masked"))
}

fn partition_audit(_: &mut Shared) -> Verdict {
    let (classes, per_class, width) = (10, 8000, 3);
    let total = classes * per_class;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut values = Vec::with_capacity(total * width);
    let mut labels = Vec::with_capacity(total);
    for i in 0..total {
        // the first feature identifies the sample
        values.push(i as f64);
        values.extend((1..width).map(|_| rng.random_range(-1.0..1.0)));
        labels.push(i % classes);
    }
    let x = Matrix::new(total, width, values).unwrap();
    let fed = match shard_by_label("fixture", &x, &labels, 20, 2, MNIST_SIZE_RANGE, 3) {
        Ok(f) => f,
        Err(e) => return (false, format!("sharding failed: {e}")),
    };
    if fed.len() != 20 {
        return (false, format!("{} clients", fed.len()));
    }
    let mut seen = HashSet::new();
    for c in &fed.clients {
        let mut labels: Vec<usize> = c.train_y.iter().chain(&c.test_y).copied().collect();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() != 2 {
            return (false, format!("client {} holds {} classes", c.id, labels.len()));
        }
        for m in [&c.train_x, &c.test_x] {
            for row in m.iter_rows() {
                if !seen.insert(row[0] as usize) {
                    return (false, format!("sample {} appears twice", row[0]));
                }
            }
        }
        let expected = 0.25 * c.len() as f64;
        if (c.test_len() as f64 - expected).abs() > 1.0 {
            return (false, format!("client {} test share {} of {}", c.id, c.test_len(), c.len()));
        }
    }
    (true, format!("20 clients, {} disjoint samples", seen.len()))
}

fn ordering(shared: &mut Shared) -> Verdict {
    let r = shared.desk();
    let gap_avg = mean(&r.fedmcsa) - mean(&r.fedavg);
    let gap_minus = mean(&r.fedmcsa) - mean(&r.minus);
    (
        gap_avg >= 5.0 && gap_minus >= 5.0,
        format!(
            "FedMCSA {} FedAvg {} FedMCSA-minus {}; gaps {gap_avg:+.2} / {gap_minus:+.2} (need +5)",
            fmt_runs(&r.fedmcsa),
            fmt_runs(&r.fedavg),
            fmt_runs(&r.minus)
        ),
    )
}

fn ablation(shared: &mut Shared) -> Verdict {
    let r = shared.desk();
    let sym = (mean(&r.minus) - mean(&r.fedavg)).abs();
    let graft = mean(&r.fedavg_plus) - mean(&r.fedavg);
    (
        sym <= 3.0 && graft >= 5.0,
        format!(
            "|FedMCSA-minus - FedAvg| = {sym:.2} (need <= 3); FedAvg-plus {} gap {graft:+.2} (need +5)",
            fmt_runs(&r.fedavg_plus)
        ),
    )
}

fn sigma_sweep(shared: &mut Shared) -> Verdict {
    let r = shared.desk();
    let (s0, s10, s50) = (mean(&r.sigma0), mean(&r.sigma10), mean(&r.fedmcsa));
    (
        s10 > s0 && s50 > s0,
        format!("BMTA sigma=0 {s0:.2}, sigma=10 {s10:.2}, sigma=50 {s50:.2}; desk runs took {:.1?}", r.elapsed),
    )
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "gradient oracle", budget: Some(Duration::from_secs(10)), check: gradient_oracle },
        Criterion { id: 2, name: "attention algebra", budget: Some(Duration::from_secs(30)), check: attention_algebra },
        Criterion { id: 3, name: "proximal step oracle", budget: Some(Duration::from_secs(1)), check: proximal_oracle },
        Criterion { id: 4, name: "sigma=0 degeneracy", budget: Some(Duration::from_secs(120)), check: degeneracy },
        Criterion { id: 5, name: "single-client reduction", budget: None, check: single_client },
        Criterion { id: 6, name: "desk ordering", budget: Some(Duration::from_secs(900)), check: ordering },
        Criterion { id: 7, name: "ablation symmetry", budget: None, check: ablation },
        Criterion { id: 8, name: "thread determinism", budget: None, check: determinism },
        Criterion { id: 9, name: "partition audit", budget: None, check: partition_audit },
        Criterion { id: 10, name: "sigma sweep shape", budget: None, check: sigma_sweep },
    ];
    let mut shared = Shared::default();
    let mut failed = Vec::new();
    for c in &criteria {
        let start = Instant::now();
        let (mut pass, mut detail) = (c.check)(&mut shared);
        let elapsed = start.elapsed();
        if let Some(budget) = c.budget.filter(|b| elapsed > *b) {
            pass = false;
            detail += &format!("; over budget {budget:?}");
        }
        println!(
            "criterion {:>2} {} {:<24} {detail} ({elapsed:.2?})",
            c.id,
            if pass { "PASS" } else { "FAIL" },
            c.name
        );
        if !pass {
            failed.push(c.id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", criteria.len());
    } else {
        println!("acceptance: {} of {} criteria failed: {failed:?}", failed.len(), criteria.len());
        std::process::exit(1);
    }
}
