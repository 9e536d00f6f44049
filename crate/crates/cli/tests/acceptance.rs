//! Acceptance checks, one line per criterion. Run with
//! `cargo test -p cocal-cli --test acceptance`; exits non-zero if any
//! criterion fails.

#[path = "../../core/tests/oracle/mod.rs"]
mod oracle;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use cocal::calibrators::{
    cc_calibrate, consistency_votes, ts_apply, ts_fit, ConsistencyConfig, NoiseSpec, Temperature,
};
use cocal::data::{split, LogitSet, ProbSet, SplitSpec};
use cocal::metrics::{self, argmax, softmax};
use cocal::rng::SplitMix64;
use cocal::synthetic::{overconfident, SyntheticConfig};
use cocal::toy::{run_toy_experiment, EstimatorGrids, ToyWorld, TrainConfig};
use cocal::tuner::{tune, TuneGrid};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Small deterministic generator for test inputs.
struct Gen(SplitMix64);

impl Gen {
    fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    fn range(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.0.next_u64() % (hi - lo + 1) as u64) as usize
    }
}

fn random_instance(g: &mut Gen) -> oracle::Instance {
    let n = g.range(1, 200);
    let k = g.range(2, 10);
    // a third of the instances use coarse values, which creates ties
    let coarse = g.range(0, 2) == 0;
    let mut probs = Vec::with_capacity(n);
    for _ in 0..n {
        let raw: Vec<f64> = (0..k)
            .map(|_| {
                let v = g.unit();
                if coarse {
                    (v * 4.0).floor() + 1.0
                } else {
                    v + 1e-3
                }
            })
            .collect();
        let s: f64 = raw.iter().sum();
        probs.push(raw.into_iter().map(|v| v / s).collect());
    }
    let labels = (0..n).map(|_| g.range(0, k - 1)).collect();
    oracle::Instance { k, probs, labels }
}

fn to_probset(inst: &oracle::Instance) -> ProbSet {
    let flat = inst.probs.iter().flatten().copied().collect();
    ProbSet::new(
        inst.k,
        flat,
        inst.labels.iter().map(|&l| l as u32).collect(),
    )
    .unwrap()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut g = Gen(SplitMix64::new(2024));
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let inst = random_instance(&mut g);
        let p = to_probset(&inst);
        let n = inst.labels.len();
        let bins = g.range(1, 20);
        let ada_bins = bins.min(n);
        let diffs = [
            metrics::ece(&p, bins).unwrap().0 - oracle::ece(&inst, bins),
            metrics::adaece(&p, ada_bins).unwrap() - oracle::adaece(&inst, ada_bins),
            metrics::cece(&p, bins).unwrap() - oracle::cece(&inst, bins),
            metrics::nll(&p) - oracle::nll(&inst),
        ];
        worst = diffs.iter().fold(worst, |w, d| w.max(d.abs()));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-9 && secs < 5.0,
        format!("max |diff| = {worst:.2e} over 200 instances (tol 1e-9), {secs:.2} s (limit 5 s)"),
    )
}

fn from_conf(cases: &[(f64, bool)]) -> ProbSet {
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    for &(c, ok) in cases {
        let rest = (1.0 - c) / 3.0;
        probs.extend([c, rest, rest, rest]);
        labels.push(if ok { 0 } else { 1 });
    }
    ProbSet::new(4, probs, labels).unwrap()
}

fn criterion_2() -> Outcome {
    let four = from_conf(&[(0.9, true), (0.8, false), (0.6, true), (0.3, false)]);
    let e = metrics::ece(&four, 2).unwrap().0;
    let a = metrics::adaece(&four, 2).unwrap();
    let two = ProbSet::new(2, vec![0.7, 0.3, 0.4, 0.6], vec![0, 1]).unwrap();
    let c = metrics::cece(&two, 1).unwrap();
    let pass = (e - 0.15).abs() <= 1e-12 && (a - 0.2).abs() <= 1e-12 && (c - 0.05).abs() <= 1e-12;
    outcome(
        pass,
        format!("ECE {e:.15}, AdaECE {a:.15}, CECE {c:.15} (tol 1e-12)"),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let t = 100_000u32;
    let mut worst = (0.0f64, String::new());
    let mut ok = true;
    for (gi, delta) in [0.5f64, 1.0, 2.0].into_iter().enumerate() {
        for (ei, eps) in [0.5f64, 1.0, 2.0].into_iter().enumerate() {
            let cases = [
                (
                    NoiseSpec::gaussian(eps).unwrap(),
                    oracle::phi(delta / (eps * std::f64::consts::SQRT_2)),
                ),
                (
                    NoiseSpec::uniform(eps).unwrap(),
                    oracle::uniform_win_probability(delta, eps),
                ),
            ];
            for (noise, p) in cases {
                let label = format!("{} delta {delta} eps {eps}", noise.kind());
                let cfg = ConsistencyConfig::new(noise, t).unwrap();
                let votes = consistency_votes(&[delta as f32, 0.0], gi * 3 + ei, &cfg);
                let got = votes[0] as f64 / t as f64;
                let bound = 3.0 * (p * (1.0 - p) / t as f64).sqrt();
                let err = (got - p).abs();
                if err > bound {
                    ok = false;
                }
                if bound > 0.0 && err / bound > worst.0 {
                    worst = (err / bound, label);
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        ok && secs < 10.0,
        format!(
            "18 cases, worst |error| / 3-sigma bound = {:.3} ({}), {secs:.2} s (limit 10 s)",
            worst.0, worst.1
        ),
    )
}

struct SyntheticRun {
    vanilla_ece: f64,
    vanilla_acc: f64,
    cc_ece: f64,
    cc_acc: f64,
    ece_t16: f64,
    best: NoiseSpec,
}

fn synthetic_run() -> SyntheticRun {
    let set = overconfident(&SyntheticConfig::default()).unwrap().logits;
    let parts = split(
        &set,
        &SplitSpec {
            validation_fraction: 0.5,
            shuffle_seed: 42,
        },
    )
    .unwrap();
    let tuned = tune(&parts.validation, &TuneGrid::default()).unwrap();
    let run = |t| {
        let cfg = ConsistencyConfig::new(tuned.best, t).unwrap();
        cc_calibrate(&parts.test, &cfg)
    };
    let vanilla = softmax(&parts.test);
    let cc = run(1000);
    SyntheticRun {
        vanilla_ece: metrics::ece(&vanilla, 15).unwrap().0,
        vanilla_acc: metrics::accuracy(&vanilla),
        cc_ece: metrics::ece(&cc, 15).unwrap().0,
        cc_acc: metrics::accuracy(&cc),
        ece_t16: metrics::ece(&run(16), 15).unwrap().0,
        best: tuned.best,
    }
}

fn criterion_4(r: &SyntheticRun) -> Outcome {
    let reduction = 1.0 - r.cc_ece / r.vanilla_ece;
    let acc_change = (r.cc_acc - r.vanilla_acc).abs();
    outcome(
        reduction >= 0.5 && acc_change <= 0.005,
        format!(
            "test ECE {:.2}% -> {:.2}% ({:.0}% reduction, need 50%), accuracy {:.2}% -> {:.2}% (limit 0.5 pp), tuned {} eps {:.3}",
            100.0 * r.vanilla_ece,
            100.0 * r.cc_ece,
            100.0 * reduction,
            100.0 * r.vanilla_acc,
            100.0 * r.cc_acc,
            r.best.kind(),
            r.best.strength()
        ),
    )
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let report = run_toy_experiment(
        &ToyWorld::default(),
        &TrainConfig::default(),
        &EstimatorGrids::default(),
    )
    .unwrap();
    let secs = start.elapsed().as_secs_f64();
    let cons = report.best("consistency").unwrap();
    let topk = report.best("topk").unwrap();
    let (c, k) = (cons.mean_abs_error, topk.mean_abs_error);
    outcome(
        c <= k && c <= 0.05 && k <= 0.05 && secs < 120.0,
        format!(
            "consistency {:.3}% (eps {}) <= top-K {:.3}% (K {}), both <= 5%, {secs:.1} s (limit 120 s)",
            100.0 * c,
            cons.estimator.parameter(),
            100.0 * k,
            topk.estimator.parameter()
        ),
    )
}

fn criterion_6(r: &SyntheticRun) -> Outcome {
    let diff = (r.ece_t16 - r.cc_ece).abs();
    outcome(
        diff <= 0.005,
        format!(
            "ECE(T=16) {:.3}% vs ECE(T=1000) {:.3}%, |diff| {:.3} pp (limit 0.5 pp)",
            100.0 * r.ece_t16,
            100.0 * r.cc_ece,
            100.0 * diff
        ),
    )
}

fn cocal_bin(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_cocal"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn collect_files(dir: &Path, base: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_files(&path, base, out);
        } else {
            let bytes = std::fs::read(&path).unwrap();
            out.push((path.strip_prefix(base).unwrap().to_path_buf(), bytes));
        }
    }
}

/// Every subcommand, writing into `out`. Inputs are shared so that the
/// only difference between runs is the thread count.
fn run_all(threads: &str, inputs: &Path, out: &Path) -> Result<(), String> {
    let p = |name: &str| out.join(name).to_str().unwrap().to_string();
    let val = inputs.join("parts/val.clb1");
    let test = inputs.join("parts/test.clb1");
    let (val, test) = (val.to_str().unwrap(), test.to_str().unwrap());
    let all = inputs.join("all.clb1");
    let all = all.to_str().unwrap();
    let t = ["--threads", threads];
    let commands: Vec<Vec<String>> = vec![
        vec![
            "synth".into(),
            "--n".into(),
            "3000".into(),
            "--out".into(),
            p("synth.clb1"),
        ],
        vec!["split".into(), all.into(), "--out".into(), p("split")],
        vec![
            "metrics".into(),
            test.into(),
            "--out".into(),
            p("metrics.json"),
        ],
        vec![
            "calibrate".into(),
            "ts".into(),
            "--val".into(),
            val.into(),
            "--test".into(),
            test.into(),
            "--out".into(),
            p("ts"),
        ],
        vec![
            "calibrate".into(),
            "cc".into(),
            "--val".into(),
            val.into(),
            "--test".into(),
            test.into(),
            "--tune-t".into(),
            "32".into(),
            "--out".into(),
            p("cc"),
        ],
        vec![
            "calibrate".into(),
            "cc".into(),
            "--test".into(),
            test.into(),
            "--noise".into(),
            "uniform".into(),
            "--eps".into(),
            "3".into(),
            "--aggregation".into(),
            "mean_softmax".into(),
            "--T".into(),
            "64".into(),
            "--format".into(),
            "csv".into(),
            "--out".into(),
            p("cc_mean"),
        ],
        vec![
            "tune".into(),
            "--val".into(),
            val.into(),
            "--T".into(),
            "32".into(),
            "--out".into(),
            p("tune.json"),
        ],
        vec![
            "sweep".into(),
            "--test".into(),
            test.into(),
            "--eps".into(),
            "4".into(),
            "--T".into(),
            "2,16,256".into(),
            "--out".into(),
            p("sweep.csv"),
        ],
        vec![
            "toy".into(),
            "--n-train".into(),
            "2000".into(),
            "--n-test".into(),
            "300".into(),
            "--T".into(),
            "500".into(),
            "--grid-steps".into(),
            "21".into(),
            "--out".into(),
            p("toy"),
        ],
        vec![
            "diagnose".into(),
            test.into(),
            "--out".into(),
            p("diagnose.json"),
        ],
        vec![
            "local".into(),
            test.into(),
            "--row".into(),
            "7".into(),
            "--eps".into(),
            "4".into(),
            "--out".into(),
            p("local.json"),
        ],
    ];
    for cmd in commands {
        let mut args: Vec<&str> = cmd.iter().map(String::as_str).collect();
        args.extend(t);
        cocal_bin(&args)?;
    }
    Ok(())
}

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let inputs = dir.path().join("inputs");
    std::fs::create_dir_all(&inputs).unwrap();
    let setup = || -> Result<(), String> {
        let all = inputs.join("all.clb1");
        cocal_bin(&["synth", "--n", "4000", "--out", all.to_str().unwrap()])?;
        cocal_bin(&[
            "split",
            all.to_str().unwrap(),
            "--out",
            inputs.join("parts").to_str().unwrap(),
        ])
    };
    let one = dir.path().join("t1");
    let eight = dir.path().join("t8");
    let ran = setup()
        .and_then(|_| run_all("1", &inputs, &one))
        .and_then(|_| run_all("8", &inputs, &eight));
    if let Err(e) = ran {
        return outcome(false, format!("command failed: {e}"));
    }
    let (mut a, mut b) = (Vec::new(), Vec::new());
    collect_files(&one, &one, &mut a);
    collect_files(&eight, &eight, &mut b);
    let names: Vec<_> = a.iter().map(|(p, _)| p.clone()).collect();
    let same_names = names == b.iter().map(|(p, _)| p.clone()).collect::<Vec<_>>();
    let differing: Vec<String> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| x.0.display().to_string())
        .collect();
    outcome(
        same_names && differing.is_empty() && !a.is_empty(),
        if differing.is_empty() {
            format!(
                "{} output files from 11 commands byte-identical at --threads 1 and 8",
                a.len()
            )
        } else {
            format!("files differ: {}", differing.join(", "))
        },
    )
}

fn criterion_8() -> Outcome {
    let mut g = Gen(SplitMix64::new(8));
    let mut flips = 0usize;
    let mut rows = 0usize;
    for _ in 0..100 {
        let n = g.range(1, 100);
        let k = g.range(2, 12);
        let scale = 0.1 + 30.0 * g.unit();
        let logits: Vec<f32> = (0..n * k)
            .map(|_| (scale * (2.0 * g.unit() - 1.0)) as f32)
            .collect();
        let labels = (0..n).map(|_| g.range(0, k - 1) as u32).collect();
        let set = LogitSet::new(k, logits, labels).unwrap();
        let temps = [
            ts_fit(&set),
            Temperature::new(0.01 + 99.99 * g.unit()).unwrap(),
        ];
        for temp in temps {
            let p = ts_apply(&set, temp);
            for i in 0..n {
                rows += 1;
                flips += usize::from(argmax(p.row(i)) != argmax(set.row(i)));
            }
        }
    }
    let sharpened = overconfident(&SyntheticConfig {
        n_samples: 10_000,
        ..SyntheticConfig::default()
    })
    .unwrap()
    .logits;
    let t = ts_fit(&sharpened).value();
    outcome(
        flips == 0 && (t - 3.0).abs() <= 0.1,
        format!("{flips} argmax changes over {rows} rows; fitted T on 3x log-probability logits = {t:.4} (need 3.0 +- 0.1)"),
    )
}

fn report(id: u8, name: &str, o: &Outcome, failures: &mut u32) {
    let tag = if o.pass { "PASS" } else { "FAIL" };
    println!("{tag} criterion {id} ({name}): {}", o.detail);
    if !o.pass {
        *failures += 1;
    }
}

fn main() {
    let mut failures = 0;
    report(
        1,
        "metric oracle equivalence",
        &criterion_1(),
        &mut failures,
    );
    report(2, "hand-case exactness", &criterion_2(), &mut failures);
    report(3, "analytic convergence", &criterion_3(), &mut failures);
    let synthetic = synthetic_run();
    report(
        4,
        "synthetic calibration improvement",
        &criterion_4(&synthetic),
        &mut failures,
    );
    report(5, "toy estimator ordering", &criterion_5(), &mut failures);
    report(
        6,
        "perturbation-count robustness",
        &criterion_6(&synthetic),
        &mut failures,
    );
    report(7, "thread-count determinism", &criterion_7(), &mut failures);
    report(
        8,
        "temperature scaling properties",
        &criterion_8(),
        &mut failures,
    );
    if failures > 0 {
        println!("{failures} of 8 criteria failed");
        std::process::exit(1);
    }
    println!("all 8 criteria passed");
}
