#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use repfuse::commands::delta;
use repfuse::emb::{decode, encode, read_emb, write_frames, HEADER_LEN};
use repfuse::synth::{generate, SynthConfig};
use repfuse::Error;
use repfuse_core::Matrix;

pub const SPECIAL: [f32; 8] = [
    0.0,
    -0.0,
    f32::MIN_POSITIVE,
    f32::MIN_POSITIVE / 8.0,
    -f32::MIN_POSITIVE / 3.0,
    f32::MAX,
    f32::MIN,
    f32::EPSILON,
];

/// Random `T×d` with occasional extreme and subnormal values.
pub fn random_frames(rng: &mut ChaCha8Rng) -> Matrix {
    let t = rng.random_range(1..=64);
    let d = rng.random_range(1..=64);
    Matrix::from_fn(t, d, |_, _| {
        if rng.random_bool(0.05) {
            SPECIAL[rng.random_range(0..SPECIAL.len())]
        } else {
            let m: f32 = rng.random_range(-1.0..1.0);
            m * 10f32.powi(rng.random_range(-30..30))
        }
    })
}

/// Writes and reads `n` random shapes; returns how many differ in any bit.
pub fn emb_roundtrip_failures(n: usize, seed: u64, dir: &Path) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    for i in 0..n {
        let m = random_frames(&mut rng);
        let path = dir.join(format!("{i}.emb"));
        write_frames(&m, &path).unwrap();
        let back = read_emb(&path).unwrap();
        let bits = |x: &Matrix| x.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        let same_size = fs::metadata(&path).unwrap().len() as usize == HEADER_LEN + 4 * m.as_slice().len();
        if back.shape() != m.shape() || bits(&back) != bits(&m) || !same_size {
            failures += 1;
        }
    }
    failures
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    Format,
    Truncated,
}

fn with_u32(mut bytes: Vec<u8>, at: usize, v: u32) -> Vec<u8> {
    bytes[at..at + 4].copy_from_slice(&v.to_le_bytes());
    bytes
}

/// Corrupted EMB1 buffers and the error each must produce.
pub fn corrupted_cases() -> Vec<(&'static str, Vec<u8>, Rejection)> {
    let good = encode(&Matrix::from_fn(3, 2, |r, c| (r * 2 + c) as f32));
    let mut nan = good.clone();
    nan[HEADER_LEN..HEADER_LEN + 4].copy_from_slice(&f32::NAN.to_le_bytes());
    let mut bad_magic = good.clone();
    bad_magic[3] = b'2';
    let mut trailing = good.clone();
    trailing.push(0);
    vec![
        ("empty file", Vec::new(), Rejection::Format),
        ("wrong magic", bad_magic, Rejection::Format),
        ("short header", good[..10].to_vec(), Rejection::Truncated),
        ("version 2", with_u32(good.clone(), 4, 2), Rejection::Format),
        ("zero frames", with_u32(good.clone(), 8, 0), Rejection::Format),
        ("zero width", with_u32(good.clone(), 12, 0), Rejection::Format),
        ("payload one byte short", good[..good.len() - 1].to_vec(), Rejection::Truncated),
        ("header declares more frames", with_u32(good.clone(), 8, 4), Rejection::Truncated),
        ("header declares u32::MAX squared", with_u32(with_u32(good.clone(), 8, u32::MAX), 12, u32::MAX), Rejection::Truncated),
        ("trailing byte", trailing, Rejection::Format),
        ("nan in payload", nan, Rejection::Format),
    ]
}

/// Names of corrupted cases that were not rejected as expected.
pub fn corrupted_failures() -> Vec<&'static str> {
    corrupted_cases()
        .into_iter()
        .filter(|(_, bytes, want)| {
            let got = match decode(bytes, Path::new("case.emb")) {
                Err(Error::Format { .. }) => Some(Rejection::Format),
                Err(Error::Truncated { .. }) => Some(Rejection::Truncated),
                _ => None,
            };
            got != Some(*want)
        })
        .map(|(name, _, _)| name)
        .collect()
}

pub fn repfuse() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_repfuse"));
    cmd.env("REPFUSE_THREADS", "0").env("RUST_LOG", "warn");
    cmd
}

pub fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    assert!(out.status.success(), "{cmd:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

pub fn exit_code(cmd: &mut Command) -> (i32, String) {
    let out = cmd.output().expect("binary runs");
    (out.status.code().expect("exited"), String::from_utf8_lossy(&out.stderr).into_owned())
}

pub struct Corpus {
    pub root: PathBuf,
    /// Delta manifests per split; they also carry the pt and ft paths.
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test: PathBuf,
    pub raw_test: PathBuf,
}

pub const REF: &str = "ref/2/finetuned";
pub const DELTA: &str = "aux/2/delta";

/// Generates a synthetic corpus under `root` and derives its delta streams.
pub fn corpus(root: &Path, cfg: &SynthConfig) -> Corpus {
    generate(cfg, &root.join("data")).unwrap();
    let mut out = Vec::new();
    for split in ["train", "dev", "test"] {
        let manifest = root.join("data").join(format!("{split}.jsonl"));
        let dir = root.join(format!("delta_{split}"));
        delta::run(&delta::Args {
            ft_manifest: Some(manifest.clone()),
            pt_manifest: Some(manifest),
            out: Some(dir.clone()),
            config: None,
        })
        .unwrap();
        out.push(dir.join(delta::MANIFEST_NAME));
    }
    Corpus {
        root: root.to_path_buf(),
        train: out[0].clone(),
        dev: out[1].clone(),
        test: out[2].clone(),
        raw_test: root.join("data/test.jsonl"),
    }
}

pub fn small_synth(seed: u64) -> SynthConfig {
    SynthConfig {
        seed,
        utts: [40, 10, 10],
        d: 8,
        ..SynthConfig::default()
    }
}

/// `repfuse train` arguments for a corpus.
pub fn train_cmd(c: &Corpus, fusion: &str, out: &Path) -> Command {
    let mut cmd = repfuse();
    cmd.arg("train")
        .arg("--train")
        .arg(&c.train)
        .arg("--dev")
        .arg(&c.dev)
        .args(["--ref-stream", REF, "--delta-stream", DELTA, "--fusion", fusion])
        .arg("--out")
        .arg(out);
    cmd
}

/// Every file under `dir`, relative path and contents, sorted.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}
