#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use odebundle::bundle::BundleConfig;
use odebundle::config::RunConfig;
use odebundle::network::NetworkParams;
use odebundle::training::{loss_and_gradient, loss_value, sample_batch, taped_loss_gradient};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn load_config(name: &str) -> RunConfig {
    let path = configs_dir().join(format!("{name}.toml"));
    RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Domains of the four systems as shipped in the configs.
pub fn system_domains() -> Vec<BundleConfig> {
    ["crtbp", "pendulum", "fhn_curriculum", "sho_desk"]
        .iter()
        .map(|n| load_config(n).bundle_config().unwrap())
        .collect()
}

/// Largest relative mismatch between the analytic loss gradient (fused and
/// taped) and fourth-order central differences with `h = 1e-3·max(|w|, 1)`,
/// on a 2x8 network and a batch of 4 points.
pub fn gradient_mismatch(cfg: &BundleConfig, seed: u64) -> f64 {
    let spec = cfg.network_spec(vec![8, 8], false);
    let params = NetworkParams::init(&spec, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let batch = sample_batch(cfg, cfg.tf, 4, &mut rng);
    let lambda = 0.5;
    let fused = loss_and_gradient(&params, cfg, &batch, lambda).unwrap();
    let taped = taped_loss_gradient(&params, cfg, &batch, lambda).unwrap();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let w = params.values()[i];
        let h = 1e-3 * w.abs().max(1.0);
        let shifted = |d: f64| {
            let mut v = params.values().to_vec();
            v[i] += d;
            let p = NetworkParams::from_values(spec.clone(), v).unwrap();
            loss_value(&p, cfg, &batch, lambda).unwrap()
        };
        let fd = (8.0 * (shifted(h) - shifted(-h)) - (shifted(2.0 * h) - shifted(-2.0 * h)))
            / (12.0 * h);
        for g in [fused.gradient[i], taped.gradient[i]] {
            // absolute floor keeps round-off on vanishing components from dominating
            let scale = fd.abs().max(g.abs()).max(1e-6 * fused.loss.max(1e-12));
            worst = worst.max((g - fd).abs() / scale);
        }
    }
    worst
}

/// A complete run on a few-second budget: every command has a section.
pub const TINY_RUN: &str = r#"
seed = 5
output_dir = "out"

[bundle]
system = "sho"
t0 = 0.0
tf = 3.0
time_margin = 0.01
x0_box = [[-1.0, 1.0], [-1.0, 1.0]]
params = { k = [0.5, 2.0] }

[network]
hidden = [6, 6]

[training]
batches = 60
batch_size = 32
lr = 1e-2
smoothing_window = 10
checkpoint_every = 20

[eval]
points = [{ x0 = [0.25, -0.5], theta = [1.5], times = [0.0, 1.0, 4.0] }]

[propagate]
t = 1.0
theta = [1.0]
x0_grid = [[-1.0, 1.0, 10], [-1.0, 1.0, 10]]
density = { kind = "gaussian", mean = [0.0, 0.0], sigma = [0.3, 0.3] }
histogram = { components = [0, 1], bins = [[-1.5, 1.5, 6], [-1.5, 1.5, 6]] }

[infer]
data = { kind = "synthetic", x0 = [0.5, 0.0], theta = [1.2], times = [0.5, 1.0, 1.5, 2.0], components = [0], sigma = 0.05 }
coordinates = { x0 = 0.5, v0 = [-0.2, 0.2, 5], k = [0.5, 2.0, 6] }
map = { tol = 1e-4, max_iter = 50 }

[bench]
samples = 200
networks = [{ label = "tiny", checkpoint = "out/checkpoint.ckpt" }]
rk4_steps = [4, 8]
euler_steps = [16]
table_divisions = [3]
table_h = 0.1
"#;

pub fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), config).unwrap();
    dir
}

/// Run the CLI in `dir`; returns exit code, stdout and stderr.
pub fn odebundle(dir: &Path, args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_odebundle"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

pub fn ok(dir: &Path, args: &[&str]) -> String {
    let (code, stdout, stderr) = odebundle(dir, args);
    assert_eq!(code, 0, "{args:?}\n{stdout}\n{stderr}");
    stdout
}

pub fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join("out").join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Run every command on `run.toml` in `dir`, rerun each from its manifest,
/// and list the outputs whose bytes changed.
pub fn manifest_rerun_mismatches(dir: &Path) -> Vec<String> {
    let steps: [(&str, &str, &[&str]); 5] = [
        ("train", "config.resolved", &["checkpoint.ckpt", "loss.csv"]),
        ("eval", "manifest_eval.toml", &["eval.csv"]),
        ("propagate", "manifest_propagate.toml", &["histogram.csv"]),
        (
            "infer",
            "manifest_infer.toml",
            &[
                "data.csv",
                "posterior_v0.csv",
                "posterior_k.csv",
                "map.txt",
                "map_fit.csv",
            ],
        ),
        (
            "bench",
            "manifest_bench.toml",
            &["bench_flops.csv", "bench_memory.csv"],
        ),
    ];
    let mut changed = Vec::new();
    for (cmd, manifest, outputs) in steps {
        ok(dir, &[cmd, "--config", "run.toml", "--quiet"]);
        let first: Vec<Vec<u8>> = outputs.iter().map(|o| read(dir, o)).collect();
        let m = format!("out/{manifest}");
        ok(dir, &[cmd, "--config", &m, "--quiet", "--threads", "1"]);
        for (o, bytes) in outputs.iter().zip(&first) {
            if read(dir, o) != *bytes {
                changed.push(format!("{cmd}: {o}"));
            }
        }
    }
    changed
}
