//! Experiment orchestration: validated JSON configs, deterministic artifact
//! output with embedded config hashes, and a run manifest with per-file
//! digests.

use critlat::estimate::{Horizon, NestedConfig};
use critlat::lattice::{Point, Region};
use critlat::rng::SeedStream;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as FmtWrite;
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(thiserror::Error, Debug)]
pub enum HarnessError {
    #[error("unknown experiment: {0}")]
    UnknownExperiment(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("resource budget exceeded: {0}")]
    Budget(String),
    #[error("input does not match the expected schema: {0}")]
    Schema(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("config parse: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Lib(critlat::Error),
}

impl From<critlat::Error> for HarnessError {
    fn from(e: critlat::Error) -> Self {
        use critlat::Error as E;
        match e {
            E::RegionTooLarge { .. }
            | E::ExactModeBudget { .. }
            | E::LatticeBudget(_)
            | E::EnumerationCap { .. } => HarnessError::Budget(e.to_string()),
            E::Invalid(msg) => HarnessError::InvalidParams(msg),
            other => HarnessError::Lib(other),
        }
    }
}

impl HarnessError {
    /// Distinct process exit codes per error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::UnknownExperiment(_) => 2,
            HarnessError::InvalidParams(_) | HarnessError::Json(_) => 3,
            HarnessError::Budget(_) => 4,
            HarnessError::Schema(_) => 5,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Per-experiment knobs; unset fields take experiment defaults. Unknown keys
/// are rejected.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    pub n: Option<i64>,
    pub n_grid: Option<Vec<i64>>,
    pub samples: Option<u64>,
    pub outer: Option<u64>,
    pub inner: Option<u64>,
    pub guard_delta: Option<i32>,
    /// "steps" or "shell".
    pub horizon: Option<String>,
    pub radius: Option<f64>,
    pub lambda_radius: Option<u32>,
    pub max_attempts: Option<u64>,
    /// Built-in graph name ("k4", "grid2", "grid3") or a path to an
    /// edge-list file.
    pub graph: Option<String>,
    pub start: Option<u32>,
    pub d: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub experiment: String,
    pub seed: u64,
    #[serde(default)]
    pub workers: Option<usize>,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub params: Params,
}

impl ExperimentConfig {
    pub fn new(experiment: &str, seed: u64, out_dir: PathBuf) -> Self {
        ExperimentConfig {
            version: SCHEMA_VERSION,
            experiment: experiment.to_string(),
            seed,
            workers: None,
            out_dir,
            params: Params::default(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Hash over the canonical serialization; embedded in every artifact.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        // artifacts must not depend on where they are written or on the
        // worker count, only on the experiment inputs
        canon.out_dir = PathBuf::new();
        canon.workers = None;
        hex_digest(serde_json::to_string(&canon).expect("config serializes").as_bytes())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub code_version: String,
    pub wall_time_s: f64,
    pub criteria: BTreeMap<String, bool>,
    /// filename -> sha256 of the file bytes.
    pub outputs: BTreeMap<String, String>,
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let out = h.finalize();
    let mut s = String::with_capacity(64);
    for b in out {
        write!(s, "{b:02x}").unwrap();
    }
    s
}

fn worker_count(cfg: &ExperimentConfig) -> usize {
    let mut w = cfg.workers.unwrap_or_else(num_cpus);
    if let Ok(cap) = std::env::var("CRITLAT_THREADS") {
        if let Ok(cap) = cap.trim().parse::<usize>() {
            w = w.min(cap.max(1));
        }
    }
    w.max(1)
}

fn num_cpus() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

struct Artifacts {
    hash: String,
    files: Vec<(String, Vec<u8>)>,
    criteria: BTreeMap<String, bool>,
}

impl Artifacts {
    fn new(hash: String) -> Self {
        Artifacts {
            hash,
            files: Vec::new(),
            criteria: BTreeMap::new(),
        }
    }

    /// CSV artifact: config-hash comment line, then the header and rows.
    fn csv(&mut self, name: &str, body: &str) {
        let text = format!("# config {}\n{}", self.hash, body);
        self.files.push((name.to_string(), text.into_bytes()));
    }

    fn json(&mut self, name: &str, value: &serde_json::Value) {
        let mut obj = value.clone();
        if let serde_json::Value::Object(map) = &mut obj {
            map.insert(
                "config_hash".to_string(),
                serde_json::Value::String(self.hash.clone()),
            );
        }
        let text = serde_json::to_string_pretty(&obj).expect("json artifact");
        self.files.push((name.to_string(), text.into_bytes()));
    }
}

/// Executes the named experiment, writes its artifacts and `manifest.json`
/// under `out_dir`, and returns the manifest.
pub fn run(cfg: &ExperimentConfig) -> Result<RunManifest> {
    if cfg.version != SCHEMA_VERSION {
        return Err(HarnessError::InvalidParams(format!(
            "config version {} (expected {SCHEMA_VERSION})",
            cfg.version
        )));
    }
    let start = std::time::Instant::now();
    let mut art = Artifacts::new(cfg.hash());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count(cfg))
        .build()
        .map_err(|e| HarnessError::InvalidParams(e.to_string()))?;
    pool.install(|| dispatch(cfg, &mut art))?;

    std::fs::create_dir_all(&cfg.out_dir)?;
    let mut outputs = BTreeMap::new();
    for (name, bytes) in &art.files {
        std::fs::write(cfg.out_dir.join(name), bytes)?;
        outputs.insert(name.clone(), hex_digest(bytes));
    }
    let manifest = RunManifest {
        config_hash: art.hash.clone(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_s: start.elapsed().as_secs_f64(),
        criteria: art.criteria.clone(),
        outputs,
    };
    std::fs::write(
        cfg.out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

fn dispatch(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<()> {
    match cfg.experiment.as_str() {
        "wilson" => exp_wilson(cfg, art),
        "field" => exp_field(cfg, art),
        "lerw" => exp_lerw(cfg, art),
        "green" => exp_green(cfg, art),
        "twosided" => exp_twosided(cfg, art),
        "oracle" => exp_oracle(cfg, art),
        "acceptance" => exp_acceptance(cfg, art),
        other => Err(HarnessError::UnknownExperiment(other.to_string())),
    }
}

fn horizon_of(p: &Params) -> Result<Horizon> {
    match p.horizon.as_deref() {
        None | Some("steps") => Ok(Horizon::Steps),
        Some("shell") => Ok(Horizon::ShellExit),
        Some(other) => Err(HarnessError::InvalidParams(format!(
            "horizon must be \"steps\" or \"shell\", got {other:?}"
        ))),
    }
}

fn nested_of(p: &Params, outer: u64, inner: u64, guard: i32, horizon: Horizon) -> Result<NestedConfig> {
    let cfg = NestedConfig {
        outer: p.outer.unwrap_or(outer),
        inner: p.inner.unwrap_or(inner),
        guard_delta: p.guard_delta.unwrap_or(guard),
        horizon: if p.horizon.is_some() { horizon_of(p)? } else { horizon },
    };
    if cfg.outer == 0 || cfg.inner == 0 {
        return Err(HarnessError::InvalidParams(
            "outer and inner sample counts must be positive".into(),
        ));
    }
    Ok(cfg)
}

fn small_n(p: &Params, default: i64, lo: i64, hi: i64) -> Result<i64> {
    let n = p.n.unwrap_or(default);
    if n < lo || n > hi {
        return Err(HarnessError::InvalidParams(format!(
            "n = {n} outside [{lo}, {hi}]"
        )));
    }
    Ok(n)
}

// ---------------------------------------------------------------------------
// Experiments

fn exp_wilson(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<()> {
    use critlat::wilson::{default_order, usf_components, wilson_ust, WiredGraph};
    let radius = cfg.params.radius.unwrap_or(3.0);
    if !(1.0..=40.0).contains(&radius) {
        return Err(HarnessError::InvalidParams(format!(
            "radius = {radius} outside [1, 40]"
        )));
    }
    let samples = cfg.params.samples.unwrap_or(200);
    let (graph, _) = WiredGraph::from_region(
        &Region::ball(radius, 4),
        critlat::lattice::DEFAULT_SITE_BUDGET,
    )?;
    let order = default_order(&graph);
    let seed = SeedStream::from_root(cfg.seed);
    let mut body = String::from("sample_id,component_count,edges_into_root\n");
    for i in 0..samples {
        let forest = wilson_ust(&graph, &order, seed.child(i));
        let mut parts = usf_components(&forest);
        writeln!(
            body,
            "{i},{},{}",
            parts.component_count(),
            forest.edges_into_root()
        )
        .unwrap();
    }
    art.csv("wilson.csv", &body);
    Ok(())
}

fn exp_field(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<()> {
    use critlat::field;
    let n = small_n(&cfg.params, 4, 2, 64)? as u32;
    let samples = cfg.params.samples.unwrap_or(200);
    let h = field::TestFunction::bump_diff();
    let seed = SeedStream::from_root(cfg.seed);
    let values = field::pairing_samples(&h, n, samples, seed)?;
    let mut buf = Vec::new();
    field::write_pairings_csv(&values, &mut buf)?;
    art.csv("pairings.csv", &String::from_utf8(buf).expect("utf8 csv"));
    let report = field::moment_report(&values, seed.key());
    let quad = field::covariance_quadrature(&h, 4)?;
    art.json(
        "moments.json",
        &serde_json::json!({
            "n": n,
            "samples": samples,
            "report": report,
            "covariance_quadrature": quad,
        }),
    );
    Ok(())
}

fn exp_lerw(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<()> {
    use critlat::lerw;
    let grid: Vec<i64> = cfg.params.n_grid.clone().unwrap_or_else(|| vec![2, 3]);
    for &n in &grid {
        if !(1..=8).contains(&n) {
            return Err(HarnessError::InvalidParams(format!(
                "shell index {n} outside [1, 8]"
            )));
        }
    }
    let nc = nested_of(&cfg.params, 60, 12, 2, Horizon::ShellExit)?;
    let seed = SeedStream::from_root(cfg.seed);
    let mut rows = Vec::new();
    for (k, &n) in grid.iter().enumerate() {
        let s = seed.child(k as u64);
        let zn = lerw::estimate_zn(n as i32, &nc, s.child(0))?;
        let hn = lerw::estimate_hn_delta(
            n as i32,
            nc.outer * nc.inner,
            nc.guard_delta,
            s.child(1),
        )?;
        let mut push = |name: &'static str, e| {
            rows.push(lerw::EstimatorRow {
                n,
                estimator: name,
                estimate: e,
                outer: nc.outer,
                inner: nc.inner,
            })
        };
        push("zn", zn);
        push("hn", hn);
        if nc.inner >= 3 && n >= 2 {
            let phat = lerw::estimate_pn_hat(n as i32, &nc, s.child(2))?;
            rows.push(lerw::EstimatorRow {
                n,
                estimator: "pn_hat",
                estimate: phat,
                outer: nc.outer,
                inner: nc.inner,
            });
        }
    }
    let mut buf = Vec::new();
    lerw::write_estimates_csv(&rows, &mut buf)?;
    art.csv("lerw.csv", &String::from_utf8(buf).expect("utf8 csv"));
    Ok(())
}

fn exp_green(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<()> {
    use critlat::green::{class_multiplicity, GreenCache};
    let d = cfg.params.d.unwrap_or(4);
    if d != 4 {
        return Err(HarnessError::InvalidParams(format!(
            "the scan experiment is defined for d = 4, got {d}"
        )));
    }
    let radius = cfg.params.radius.unwrap_or(10.0);
    if !(1.0..=60.0).contains(&radius) {
        return Err(HarnessError::InvalidParams(format!(
            "radius = {radius} outside [1, 60]"
        )));
    }
    let r = radius as i64;
    let cache = GreenCache::build(4, (r as u32).min(30), 1e-9)?;
    let mut body = String::from("x1,x2,x3,x4,norm2,green,scaled\n");
    let pi2 = std::f64::consts::PI * std::f64::consts::PI;
    for a in 0..=r {
        for b in a..=r {
            for c in b..=r {
                for e in c..=r {
                    let n2 = a * a + b * b + c * c + e * e;
                    if n2 == 0 || n2 > r * r {
                        continue;
                    }
                    let cls = [a as i32, b as i32, c as i32, e as i32];
                    let p = Point::new(&cls);
                    let g = cache.value(&p);
                    writeln!(
                        body,
                        "{a},{b},{c},{e},{n2},{g},{}",
                        g * pi2 * n2 as f64 / 2.0
                    )
                    .unwrap();
                    let _ = class_multiplicity(&cls);
                }
            }
        }
    }
    art.csv("green.csv", &body);
    if let Some(lr) = cfg.params.lambda_radius {
        let rep = critlat::green::lambda_constant(lr)?;
        art.json(
            "lambda.json",
            &serde_json::json!({
                "r_max": lr,
                "lambda": rep.lambda,
                "sequence": rep.sequence,
            }),
        );
    }
    Ok(())
}

fn exp_twosided(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<()> {
    use critlat::twosided;
    let n = small_n(&cfg.params, 2, 1, 6)? as i32;
    let samples = cfg.params.samples.unwrap_or(50);
    let max_attempts = cfg.params.max_attempts.unwrap_or(1_000_000);
    let seed = SeedStream::from_root(cfg.seed);
    let (paths, stats) = twosided::sample_many(n, samples, seed, max_attempts)?;
    let mut buf = Vec::new();
    twosided::write_paths_csv(&paths, &mut buf)?;
    art.csv("paths.csv", &String::from_utf8(buf).expect("utf8 csv"));
    let probe = twosided::stationarity_probe(&paths);
    art.json(
        "twosided.json",
        &serde_json::json!({
            "n": n,
            "accepted": stats.accepted,
            "attempted": stats.attempted,
            "rate": stats.rate(),
            "rate_stderr": stats.rate_stderr(),
            "past_dirs": probe.past_dirs.to_vec(),
            "future_dirs": probe.future_dirs.to_vec(),
            "homogeneity_p": probe.homogeneity_p,
        }),
    );
    Ok(())
}

pub fn builtin_graph(name: &str) -> Result<critlat::oracle::SmallGraph> {
    use critlat::oracle::SmallGraph;
    Ok(match name {
        "k4" => SmallGraph::complete(4, 3),
        "grid2" => SmallGraph::wired_grid(2),
        "grid3" => SmallGraph::wired_grid(3),
        path => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                HarnessError::InvalidParams(format!("graph {path:?}: not built in and {e}"))
            })?;
            SmallGraph::from_edge_list(&text)?
        }
    })
}

fn exp_oracle(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<()> {
    use critlat::oracle;
    use num_traits::ToPrimitive;
    let g = builtin_graph(cfg.params.graph.as_deref().unwrap_or("grid2"))?;
    let start = cfg.params.start.unwrap_or(0);
    if start as usize >= g.vertices || start == g.root {
        return Err(HarnessError::InvalidParams(format!(
            "start vertex {start} invalid for a {}-vertex graph rooted at {}",
            g.vertices, g.root
        )));
    }
    let count = oracle::matrix_tree_count(&g);
    let law = oracle::exact_lerw_law(&g, start)?;
    let mut rows: Vec<(String, f64)> = law
        .iter()
        .map(|(path, p)| {
            let text = path
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("-");
            (text, p.to_f64().unwrap())
        })
        .collect();
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    let mut body = String::from("path,probability\n");
    for (path, p) in &rows {
        writeln!(body, "{path},{p}").unwrap();
    }
    art.csv("oracle.csv", &body);
    art.json(
        "oracle.json",
        &serde_json::json!({
            "vertices": g.vertices,
            "edges": g.edges.len(),
            "root": g.root,
            "start": start,
            "spanning_trees": count.to_string(),
            "distinct_paths": rows.len(),
        }),
    );
    Ok(())
}

fn exp_acceptance(cfg: &ExperimentConfig, art: &mut Artifacts) -> Result<()> {
    let scratch = cfg.out_dir.join("scratch");
    let results = crate::criteria::run_all(cfg.seed, &scratch);
    let mut body = String::from("id,name,pass,detail\n");
    for r in &results {
        println!("{r}");
        writeln!(body, "{},{},{},\"{}\"", r.id, r.name, r.pass, r.detail.replace('"', "'")).unwrap();
        art.criteria.insert(format!("{:02}-{}", r.id, r.name), r.pass);
    }
    art.csv("acceptance.csv", &body);
    Ok(())
}
