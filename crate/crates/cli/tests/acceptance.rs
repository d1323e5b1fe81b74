//! End-to-end acceptance checks, one line of output per criterion.
//!
//! Runs without the libtest harness so every line is printed even when
//! criteria pass; the process exits non-zero if any criterion outside
//! `KNOWN_FAILURES` fails.

#[path = "../../core/tests/support/gradcheck.rs"]
mod gradcheck;
#[path = "../../core/tests/support/oracles.rs"]
mod oracles;

use std::cell::OnceCell;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode, Stdio};
use std::time::{Duration, Instant};

use anyhow::{ensure, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use varbench::config::ExperimentConfig;
use varbench::pipeline::{load_dataset, obtain_ife};
use varbench::report::CLEAN;
use varbench_core::attacks::{attack_many, cw_l2, fgsm, pgd, AttackJob, AttackKind, AttackSpec, AttackedImage};
use varbench_core::dataio::{
    density, kcore_filter, synthesize_dataset, Interaction, InteractionDataset, AMAZON_MEN, AMAZON_WOMEN,
    TRADESY,
};
use varbench_core::ife::{
    accuracy, train_adversarial, train_standard, Architecture, Classifier, LabeledImages, LinearClassifier,
    LogitModel, Regime,
};
use varbench_core::dataio::ImageShape;
use varbench_core::recsys::{pairwise_auc, train_bpr, FeatureStore, RecKind};
use varbench_core::tensor::Tensor;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn gradient_check() -> Result<Outcome> {
    let (agreement, total) = gradcheck::gradient_agreement(50, 1e-5, 1e-3);
    outcome(
        agreement >= 0.99,
        format!("{:.2}% of {total} coordinates within 1e-3", agreement * 100.0),
    )
}

fn metric_oracles() -> Result<Outcome> {
    let dev = oracles::max_oracle_deviation(1000, 2024);
    outcome(dev < 1e-9, format!("max deviation {dev:.2e} over 1000 instances"))
}

fn dataset_densities() -> Result<Outcome> {
    let mut parts = Vec::new();
    let mut pass = true;
    for (stats, expected) in [(AMAZON_MEN, 0.000495), (AMAZON_WOMEN, 0.001096), (TRADESY, 0.002062)] {
        let d = density(stats.interactions, stats.users, stats.items);
        pass &= (d - expected).abs() <= 1e-6 && (stats.density() - d).abs() == 0.0;
        parts.push(format!("{} {d:.6}", stats.name));
    }
    outcome(pass, parts.join(", "))
}

fn kcore_properties() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut violations = 0;
    let mut emptied = 0;
    for _ in 0..200 {
        let users = rng.random_range(5..60u32);
        let items = rng.random_range(5..60u32);
        let n = rng.random_range(10..600);
        let events: Vec<Interaction> = (0..n)
            .map(|t| Interaction {
                user: rng.random_range(0..users),
                item: rng.random_range(0..items),
                timestamp: t,
            })
            .collect();
        let ds = InteractionDataset::from_interactions(events);
        let k = rng.random_range(1..8);
        let core = kcore_filter(&ds, k);
        let min_user = core.user_degrees().values().copied().min().unwrap_or(usize::MAX);
        let min_item = core.item_degrees().values().copied().min().unwrap_or(usize::MAX);
        if min_user < k || min_item < k || kcore_filter(&core, k) != core {
            violations += 1;
        }
        if core.is_empty() {
            emptied += 1;
        }
    }
    outcome(
        violations == 0,
        format!("{violations} violations on 200 graphs ({emptied} filtered to empty)"),
    )
}

fn ulp(x: f64) -> f64 {
    f64::from_bits(x.abs().to_bits() + 1) - x.abs()
}

fn random_linear(n: usize, m: usize, rng: &mut ChaCha8Rng) -> LinearClassifier<f64> {
    let w = (0..n * m).map(|_| rng.random_range(-1.0..1.0)).collect();
    let b = (0..m).map(|_| rng.random_range(-0.1..0.1)).collect();
    LinearClassifier::new(Tensor::new(vec![n, m], w).unwrap(), Tensor::new(vec![m], b).unwrap()).unwrap()
}

fn attack_constraints() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let cnn = Classifier::<f64>::new(
        Architecture {
            input: ImageShape::new(3, 6, 6),
            hidden_channels: 4,
            feature_dim: 8,
            num_classes: 3,
        },
        5,
    )?;
    let mut range = 0;
    let mut ball = 0;
    let mut bitwise = 0;
    for kind in [AttackKind::Fgsm, AttackKind::Pgd, AttackKind::CwL2] {
        for trial in 0..1000u64 {
            let linear = random_linear(108, 3, &mut rng);
            let model: &dyn LogitModel<f64> = if trial % 4 == 0 { &cnn } else { &linear };
            let x: Vec<f64> = (0..108)
                .map(|_| match rng.random_range(0..5) {
                    0 => 0.0,
                    1 => 1.0,
                    _ => rng.random(),
                })
                .collect();
            let eps = rng.random_range(0.5..32.0);
            let target = (trial % 2 == 0).then(|| rng.random_range(0..3));
            let out = match kind {
                AttackKind::Fgsm => fgsm(model, &x, 0, &AttackSpec { target, ..AttackSpec::fgsm(eps) })?,
                AttackKind::Pgd => {
                    let mut spec = AttackSpec::pgd(eps).with_seed(trial);
                    spec.target = target;
                    spec.iterations = rng.random_range(1..12);
                    spec.alpha = Some(eps * rng.random_range(0.05..1.0));
                    pgd(model, &x, 0, &spec)?
                }
                AttackKind::CwL2 => {
                    let mut spec = AttackSpec::cw_l2().targeted(target.unwrap_or(1));
                    spec.max_iterations = 30;
                    spec.binary_search_steps = 3;
                    cw_l2(model, &x, 0, &spec)?
                }
            };
            if out.perturbed.iter().any(|v| !(0.0..=1.0).contains(v)) {
                range += 1;
            }
            if kind.is_linf() {
                let e = eps / 255.0;
                let outside = out
                    .perturbed
                    .iter()
                    .zip(&x)
                    .any(|(&a, &b)| (a - b).abs() > e + ulp(e).max(ulp(a)).max(ulp(b)));
                if outside {
                    ball += 1;
                }
            }
        }
    }
    for trial in 0..200u64 {
        let model = random_linear(108, 3, &mut rng);
        let x: Vec<f64> = (0..108).map(|_| rng.random()).collect();
        let eps = rng.random_range(0.5..32.0);
        let target = (trial % 2 == 0).then_some(2);
        let mut p = AttackSpec::pgd(eps);
        p.iterations = 1;
        p.random_start = false;
        p.alpha = Some(eps);
        p.target = target;
        let f = AttackSpec { target, ..AttackSpec::fgsm(eps) };
        let a = pgd(&model, &x, 0, &p)?;
        let b = fgsm(&model, &x, 0, &f)?;
        if a.perturbed.iter().zip(&b.perturbed).any(|(u, v)| u.to_bits() != v.to_bits()) {
            bitwise += 1;
        }
    }
    outcome(
        range == 0 && ball == 0 && bitwise == 0,
        format!(
            "3000 attacks: {range} range and {ball} eps-ball violations; {bitwise} of 200 one-step PGD runs differ from FGSM"
        ),
    )
}

fn cw_optimality() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    let mut within = 0;
    let mut trials = 0;
    let mut worst: f64 = 0.0;
    while trials < 100 {
        let n = rng.random_range(2..12);
        let model = random_linear(n, 2, &mut rng);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.3..0.7)).collect();
        let z = model.logits_of(&x)?;
        if z[0] <= z[1] {
            continue;
        }
        // closest point on the boundary z0 = z1, which must lie in the box
        let w = model.weights.data();
        let dw: Vec<f64> = (0..n).map(|i| w[i * 2 + 1] - w[i * 2]).collect();
        let norm = dw.iter().map(|v| v * v).sum::<f64>().sqrt();
        let dist = (z[0] - z[1]) / norm;
        if x.iter().zip(&dw).any(|(xi, d)| !(0.0..=1.0).contains(&(xi + dist * d / norm))) {
            continue;
        }
        trials += 1;
        let out = cw_l2(&model, &x, 0, &AttackSpec::cw_l2().targeted(1))?;
        let err = (out.l2_norm() - dist).abs() / dist;
        worst = worst.max(err);
        if out.success && err <= 0.05 {
            within += 1;
        }
    }
    outcome(
        within >= 95,
        format!("{within}/100 trials within 5% of the boundary distance (worst {:.2}%)", worst * 100.0),
    )
}

/// Standard and adversarially trained extractors on the synthetic images,
/// with every fourth image held out.
struct Extractors {
    held: LabeledImages<f64>,
    undefended: Classifier<f64>,
    undefended_time: Duration,
    defended: Option<Classifier<f64>>,
}

const ATTACK_SEED: u64 = 11;

impl Extractors {
    fn train() -> Result<Self> {
        let started = Instant::now();
        let cfg = ExperimentConfig::load(configs_dir().join("desk.toml"))?;
        let data = synthesize_dataset(&cfg.synth_spec().context("desk config is not synthetic")?)?;
        let labeled = LabeledImages::from_samples(&data.images)?;
        let (train, held) = labeled.split_every(4);
        let (undefended, _) = train_standard(&train, &cfg.ife.training_for(Regime::Traditional, cfg.seed()))?;
        let undefended_time = started.elapsed();
        let defended = train_adversarial(&train, &cfg.ife.training_for(Regime::AdvTrain, cfg.seed()))
            .map(|m| m.0)
            .ok();
        Ok(Extractors {
            held,
            undefended,
            undefended_time,
            defended,
        })
    }

    fn defended(&self) -> Result<&Classifier<f64>> {
        self.defended.as_ref().context("adversarial training failed")
    }

    /// Attacks every held-out image toward the next class.
    fn attack(&self, model: &Classifier<f64>, spec: &AttackSpec) -> Result<Vec<AttackedImage<f64>>> {
        let mut out = Vec::new();
        for target in 0..self.held.num_classes() {
            let jobs: Vec<AttackJob<f64>> = (0..self.held.len())
                .filter(|&i| (self.held.labels[i] + 1) % self.held.num_classes() == target)
                .map(|i| AttackJob {
                    item: i as u32,
                    pixels: self.held.image(i),
                    label: self.held.labels[i],
                })
                .collect();
            let spec = spec.clone().targeted(target).with_seed(ATTACK_SEED);
            out.extend(attack_many(model, &jobs, &spec)?.into_iter().map(|r| r.1));
        }
        Ok(out)
    }

    fn success_rate(&self, model: &Classifier<f64>, spec: &AttackSpec) -> Result<f64> {
        let attacked = self.attack(model, spec)?;
        Ok(attacked.iter().filter(|a| a.success).count() as f64 / attacked.len() as f64)
    }

    /// Mean squared feature change per dimension.
    fn feature_loss(&self, model: &Classifier<f64>, spec: &AttackSpec) -> Result<f64> {
        let attacked = self.attack(model, spec)?;
        let mut total = 0.0;
        for a in &attacked {
            let before = model.extract_features(&a.original)?;
            let after = model.extract_features(&a.perturbed)?;
            total += before.iter().zip(&after).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / before.len() as f64;
        }
        Ok(total / attacked.len() as f64)
    }
}

fn cw_spec() -> AttackSpec {
    AttackSpec::cw_l2()
}

fn undefended_success(ex: &Extractors) -> Result<Outcome> {
    let started = Instant::now();
    let acc = accuracy(&ex.undefended, &ex.held)?;
    let pgd8 = ex.success_rate(&ex.undefended, &AttackSpec::pgd(8.0))?;
    let fgsm4 = ex.success_rate(&ex.undefended, &AttackSpec::fgsm(4.0))?;
    let elapsed = ex.undefended_time + started.elapsed();
    outcome(
        acc >= 0.95 && pgd8 >= 0.9 && fgsm4 < pgd8 && elapsed < Duration::from_secs(300),
        format!(
            "held-out accuracy {acc:.3}, SR PGD8 {pgd8:.3}, SR FGSM4 {fgsm4:.3}, {:.0} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn defense_effect(ex: &Extractors) -> Result<Outcome> {
    let defended = ex.defended()?;
    let mut parts = Vec::new();
    let mut pass = true;
    for spec in [AttackSpec::fgsm(4.0), AttackSpec::pgd(4.0)] {
        let before = ex.success_rate(&ex.undefended, &spec)?;
        let after = ex.success_rate(defended, &spec)?;
        pass &= after <= 0.5 * before;
        parts.push(format!("{} {before:.3} -> {after:.3}", spec.label()));
    }
    let defended_sr: Vec<f64> = [AttackSpec::fgsm(4.0), AttackSpec::pgd(8.0)]
        .iter()
        .map(|s| ex.success_rate(defended, s))
        .collect::<Result<_>>()?;
    let cw = ex.success_rate(defended, &cw_spec())?;
    pass &= defended_sr.iter().all(|&s| cw > s);
    parts.push(format!(
        "defended SR fgsm_e4 {:.3}, pgd_e8 {:.3}, cw_l2 {cw:.3}",
        defended_sr[0], defended_sr[1]
    ));
    outcome(pass, parts.join("; "))
}

fn feature_loss_ordering(ex: &Extractors) -> Result<Outcome> {
    let defended = ex.defended()?;
    let und4 = ex.feature_loss(&ex.undefended, &AttackSpec::pgd(4.0))?;
    let def4 = ex.feature_loss(defended, &AttackSpec::pgd(4.0))?;
    let pgd8 = ex.feature_loss(&ex.undefended, &AttackSpec::pgd(8.0))?;
    let cw = ex.feature_loss(&ex.undefended, &cw_spec())?;
    outcome(
        def4 <= und4 / 10.0 && pgd8 > cw,
        format!("PGD4 FL undefended {und4:.3e}, defended {def4:.3e}; undefended FL PGD8 {pgd8:.3e}, C&W {cw:.3e}"),
    )
}

fn push_config(seed: u64, checkpoints: &Path) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(configs_dir().join("desk.toml"))?.with_seed(seed);
    cfg.ife.defenses = vec![Regime::Traditional];
    cfg.ife.checkpoint_dir = Some(checkpoints.to_path_buf());
    cfg.attacks.retain(|a| a.kind == AttackKind::Pgd);
    cfg.recommenders.retain(|r| r.kind == RecKind::Vbpr);
    cfg.parallel_cells = false;
    ensure!(cfg.attacks.len() == 1 && cfg.recommenders.len() == 1, "desk config lacks pgd or vbpr");
    Ok(cfg)
}

fn category_push(checkpoints: &Path) -> Result<Outcome> {
    let mut ratios = Vec::new();
    let mut slowest = Duration::ZERO;
    for seed in [7, 8, 9] {
        let started = Instant::now();
        let cfg = push_config(seed, checkpoints)?;
        let label = cfg.attacks[0].label();
        let results = varbench::pipeline::run_experiment(&cfg)?;
        let plan = results.plan.clone().context("no category plan")?;
        let chr = |attack: &str| {
            results
                .cell("vbpr", "traditional", attack)
                .and_then(|c| c.value("chr", 20))
                .with_context(|| format!("missing chr@20 for {attack}"))
        };
        ratios.push((seed, plan.origin, chr(&label)? / chr(CLEAN)?));
        slowest = slowest.max(started.elapsed());
    }
    let mut sorted: Vec<f64> = ratios.iter().map(|r| r.2).collect();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[1];
    let per_seed: Vec<String> = ratios.iter().map(|(s, o, r)| format!("seed {s} class {o}: {r:.3}")).collect();
    outcome(
        median >= 1.5 && slowest < Duration::from_secs(600),
        format!(
            "median origin CHR@20 ratio {median:.3} ({}), slowest seed {:.0} s",
            per_seed.join(", "),
            slowest.as_secs_f64()
        ),
    )
}

fn bpr_sanity(checkpoints: &Path) -> Result<Outcome> {
    let cfg = push_config(7, checkpoints)?;
    let data = load_dataset(&cfg)?;
    let model = obtain_ife(&cfg, &data, Regime::Traditional)?;
    let store = FeatureStore::extract(&model, &data.images)?;
    let mut parts = Vec::new();
    let mut pass = true;
    for kind in [RecKind::Fm, RecKind::Vbpr, RecKind::Amr] {
        let rec_cfg = varbench_core::recsys::RecConfig {
            seed: cfg.seed(),
            ..Default::default()
        };
        let (m, _) = train_bpr(kind, &data.split, &store, &rec_cfg)?;
        let auc = pairwise_auc(&m, &store, &data.split)?;
        pass &= auc > 0.6;
        parts.push(format!("{} {auc:.3}", kind.name()));
    }
    outcome(pass, format!("held-out AUC {}", parts.join(", ")))
}

fn report_determinism() -> Result<Outcome> {
    let dir = tempfile::tempdir()?;
    let config = configs_dir().join("smoke.toml");
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_varbench"))
            .args(["run", "--seed", "3", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()?;
        ensure!(status.success(), "run {run} exited with {status}");
        outputs.push(out);
    }
    let mut differing = BTreeSet::new();
    for file in ["results.csv", "cells.csv"] {
        let a = std::fs::read(outputs[0].join(file))?;
        let b = std::fs::read(outputs[1].join(file))?;
        if a != b || a.is_empty() {
            differing.insert(file);
        }
    }
    outcome(
        differing.is_empty(),
        if differing.is_empty() {
            "results.csv and cells.csv byte-identical across two runs".into()
        } else {
            format!("differing: {differing:?}")
        },
    )
}

/// Criteria that do not hold at desk scale (see the README). They still
/// print FAIL but do not fail the run, so the rest of the workspace tests
/// keep running under `cargo test`.
const KNOWN_FAILURES: [usize; 2] = [9, 10];

fn main() -> ExitCode {
    // any numeric argument selects criteria by number; other arguments that
    // cargo passes through (such as --nocapture) are ignored
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| selected.is_empty() || selected.contains(&n);
    let checkpoints = tempfile::tempdir().expect("temporary directory");
    let extractors: OnceCell<Result<Extractors, String>> = OnceCell::new();
    let trained = || -> Result<&Extractors> {
        extractors
            .get_or_init(|| Extractors::train().map_err(|e| format!("{e:#}")))
            .as_ref()
            .map_err(|e| anyhow::anyhow!("training extractors: {e}"))
    };
    let mut failures = 0;
    let mut known = 0;

    let mut check = |n: usize, name: &str, f: &dyn Fn() -> Result<Outcome>| {
        if !wanted(n) {
            return;
        }
        let started = Instant::now();
        let (pass, detail, errored) = match f() {
            Ok(o) => (o.pass, o.detail, false),
            Err(e) => (false, format!("error: {e:#}"), true),
        };
        let status = match (pass, KNOWN_FAILURES.contains(&n) && !errored) {
            (true, _) => "PASS",
            (false, true) => {
                known += 1;
                "FAIL (known)"
            }
            (false, false) => {
                failures += 1;
                "FAIL"
            }
        };
        println!(
            "acceptance {n:>2} {name}: {status} ({detail}; {:.1} s)",
            started.elapsed().as_secs_f64()
        );
    };

    check(1, "gradient correctness", &gradient_check);
    check(2, "metric oracle equivalence", &metric_oracles);
    check(3, "density arithmetic", &dataset_densities);
    check(4, "k-core", &kcore_properties);
    check(5, "attack constraints", &attack_constraints);
    check(6, "C&W near-optimality", &cw_optimality);
    check(7, "undefended success rates", &|| undefended_success(trained()?));
    check(8, "defense effect", &|| defense_effect(trained()?));
    check(9, "feature-loss ordering", &|| feature_loss_ordering(trained()?));
    check(10, "category push", &|| category_push(checkpoints.path()));
    check(11, "BPR sanity", &|| bpr_sanity(checkpoints.path()));
    check(12, "report determinism", &report_determinism);

    if known > 0 {
        println!("{known} known failing criteria");
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} acceptance criteria failed unexpectedly");
        ExitCode::FAILURE
    }
}
