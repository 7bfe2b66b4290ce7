//! One function per experiment. Each returns an [`Artifact`]: a JSON report,
//! optional CSV and SVG renderings, and an overall verdict where the
//! experiment checks something.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Serialize, Serializer};
use serde_json::{json, Value as Json};

use mconvex::banach::{self, LpSpace};
use mconvex::embeddings::generators::{classification_survey, classify_instance, InstanceKind};
use mconvex::embeddings::paths::{grid_distortion, random_bounded_path, PathMap};
use mconvex::embeddings::ramsey::{HashColoring, RamseyOutcome};
use mconvex::embeddings::{b4_search, distortion_gap_experiment, extract_vertically_faithful, path_boost, ramsey_search};
use mconvex::markov::{self, ChainSpec};
use mconvex::metric::RealLine;
use mconvex::numeric::Value;
use mconvex::quotients::{lift_chain, quotient_constants, transfer_check, verify_quotient, QuotientMap};
use mconvex::rational::{self, Rational};
use mconvex::trees::{enumerate_bn, random_epsilon, validate_htree, HTreeSpace, TreeVertex};
use mconvex::{FiniteMetricSpace, LaaksoGraph, PointMap};

use crate::svg;

/// `1..4` (inclusive), `3` or `2,3,5`.
#[derive(Clone, Debug, PartialEq)]
pub struct UsizeList(pub Vec<usize>);

impl FromStr for UsizeList {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let bad = |_| format!("expected an integer list like 1..4 or 2,3, got {s:?}");
        if let Some((a, b)) = s.split_once("..") {
            let (a, b): (usize, usize) = (a.trim().parse().map_err(bad)?, b.trim().parse().map_err(bad)?);
            if a > b {
                return Err(format!("empty range {s:?}"));
            }
            return Ok(Self((a..=b).collect()));
        }
        s.split(',').map(|t| t.trim().parse().map_err(bad)).collect::<std::result::Result<_, _>>().map(Self)
    }
}

impl Serialize for UsizeList {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

/// A rational given as `p/q`, an integer or a terminating decimal.
#[derive(Clone, Debug, PartialEq)]
pub struct Rat(pub Rational);

impl FromStr for Rat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        rational::parse(s).map(Rat).map_err(|e| e.to_string())
    }
}

impl Serialize for Rat {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&rational::format(&self.0))
    }
}

#[derive(Debug)]
pub struct Artifact {
    pub report: Json,
    pub passed: Option<bool>,
    pub csv: Option<String>,
    pub svg: Option<String>,
}

impl Artifact {
    fn new(report: impl Serialize, passed: Option<bool>) -> Result<Self> {
        Ok(Self { report: serde_json::to_value(report)?, passed, csv: None, svg: None })
    }

    fn csv(mut self, csv: String) -> Self {
        self.csv = Some(csv);
        self
    }

    fn svg(mut self, svg: String) -> Self {
        self.svg = Some(svg);
        self
    }
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(untagged)]
pub enum Experiment {
    /// Convexity ratio of the Laakso walk for each level m.
    LaaksoRatio(LaaksoRatio),
    /// Convexity ratio and per-k terms of the downward walk on B_n.
    BnRatio(BnRatio),
    /// Per-k terms of the Laakso walk against the certified lower bounds.
    PerKBound(PerKBound),
    /// Estimates the p-convexity constant of l_p^d and checks both inequalities with it.
    PconvexCheck(PconvexCheck),
    /// Parallelogram identity and fork inequality in l_2 with K = 1.
    Parallelogram(Parallelogram),
    /// Transfer inequality on random chains mapped into l_2, exact on both sides.
    Prop21Check(Prop21Check),
    /// Triangle inequality of H-tree metrics over random schedules.
    HtreeValidate(HtreeValidate),
    /// Classifies one instance from a file, or a random batch.
    Classify(Classify),
    /// Finds a nearly isometric sub-path of a path map.
    Boost(Boost),
    /// Random vertically faithful B_4 embeddings against the contraction bound.
    B4Search(B4Search),
    /// Identity distortion of B_n next to the B_4 search evidence.
    DistortionGap(DistortionGap),
    /// Checks the (a, b)-quotient inclusions for a map.
    QuotientVerify(QuotientVerify),
    /// Lifts a chain through a quotient and checks the transfer inequality.
    QuotientLift(QuotientLift),
    /// Searches a level-colored copy of B_m in a hash-colored k-ary tree.
    RamseyToy(RamseyToy),
    /// Extracts a vertically faithful copy of B_t from the identity of B_n into an H-tree.
    ExtractSubtree(ExtractSubtree),
}

impl Experiment {
    pub fn run(&self) -> Result<Artifact> {
        match self {
            Self::LaaksoRatio(a) => a.run(),
            Self::BnRatio(a) => a.run(),
            Self::PerKBound(a) => a.run(),
            Self::PconvexCheck(a) => a.run(),
            Self::Parallelogram(a) => a.run(),
            Self::Prop21Check(a) => a.run(),
            Self::HtreeValidate(a) => a.run(),
            Self::Classify(a) => a.run(),
            Self::Boost(a) => a.run(),
            Self::B4Search(a) => a.run(),
            Self::DistortionGap(a) => a.run(),
            Self::QuotientVerify(a) => a.run(),
            Self::QuotientLift(a) => a.run(),
            Self::RamseyToy(a) => a.run(),
            Self::ExtractSubtree(a) => a.run(),
        }
    }
}

/// Acceptance criteria each experiment reproduces.
pub fn criteria(name: &str) -> &'static [u8] {
    match name {
        "laakso-ratio" => &[1, 3],
        "per-k-bound" => &[2],
        "bn-ratio" => &[4],
        "htree-validate" => &[5],
        "parallelogram" | "pconvex-check" => &[6],
        "prop21-check" => &[7],
        "boost" => &[8],
        "classify" => &[9],
        "b4-search" | "distortion-gap" => &[10],
        "quotient-verify" | "quotient-lift" => &[11],
        _ => &[],
    }
}

fn f64_of(v: &Value) -> f64 {
    v.to_f64()
}

fn read_json(path: &Path) -> Result<Json> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Args, Debug, Serialize)]
pub struct LaaksoRatio {
    #[arg(long, default_value = "1..4", value_name = "RANGE")]
    pub m: UsizeList,
    #[arg(long, default_value_t = 2, value_name = "INT")]
    pub p: u32,
    #[arg(long, value_name = "INT")]
    pub k_max: Option<usize>,
}

impl LaaksoRatio {
    fn run(&self) -> Result<Artifact> {
        let mut rows = Vec::new();
        let mut csv = String::from("m,lhs,rhs,ratio,ratio_f64\n");
        let mut pts = Vec::new();
        for &m in &self.m.0 {
            let g = LaaksoGraph::build(m)?;
            let r = markov::laakso_report(&g, self.p, self.k_max)?;
            let expected = rational::pow2(-2 * m as i64 * (self.p as i64 - 1));
            let ratio = r.ratio.clone().ok_or(mconvex::Error::DegenerateChain)?;
            writeln!(csv, "{m},{},{},{ratio},{:.12e}", r.lhs_total, r.rhs, f64_of(&ratio))?;
            pts.push((m as f64, f64_of(&ratio)));
            rows.push(json!({
                "m": m,
                "lhs": r.lhs_total,
                "rhs": r.rhs,
                "ratio": ratio,
                "ratio_f64": f64_of(&ratio),
                "pi_lower": r.pi_lower,
                "rhs_expected": rational::format(&expected),
                "rhs_identity": r.rhs.exact() == Some(&expected),
                "per_k": r.per_k,
            }));
        }
        let increasing = pts.windows(2).all(|w| w[1].1 > w[0].1);
        let identity = rows.iter().all(|r| r["rhs_identity"] == true);
        let svg = svg::line_chart(&format!("Laakso walk, p = {}", self.p), "m", "LHS / RHS", &pts);
        Ok(Artifact::new(json!({ "rows": rows, "ratio_increasing": increasing }), Some(increasing && identity))?.csv(csv).svg(svg))
    }
}

#[derive(Args, Debug, Serialize)]
pub struct BnRatio {
    #[arg(long, default_value = "4,8,16", value_name = "LIST")]
    pub n: UsizeList,
    #[arg(long, default_value_t = 2, value_name = "INT")]
    pub p: u32,
    #[arg(long, value_name = "INT")]
    pub k_max: Option<usize>,
}

impl BnRatio {
    fn run(&self) -> Result<Artifact> {
        let two_pm1 = 2f64.powi(self.p as i32 - 1);
        let (lo, hi) = (two_pm1 / 4.0, 4.0 * two_pm1);
        let mut rows = Vec::new();
        let mut csv = String::from("n,k,term,term_over_rhs\n");
        let mut ratios = Vec::new();
        let mut windows_ok = true;
        let mut last_bars = Vec::new();
        for &n in &self.n.0 {
            let r = markov::bn_report(n, self.p, self.k_max)?;
            let rhs = f64_of(&r.rhs);
            let over: Vec<f64> = r.per_k.iter().map(|v| f64_of(v) / rhs).collect();
            let k_window = ((n as f64).log2() / 2.0).floor() as usize;
            let in_window = over.iter().take(k_window + 1).all(|&x| (lo..=hi).contains(&x));
            windows_ok &= in_window;
            for (k, (v, o)) in r.per_k.iter().zip(&over).enumerate() {
                writeln!(csv, "{n},{k},{v},{o:.12e}")?;
            }
            let ratio = r.require_ratio()?;
            ratios.push(ratio);
            last_bars = over.iter().enumerate().map(|(k, &o)| (k.to_string(), o)).collect();
            rows.push(json!({
                "n": n,
                "ratio": r.ratio,
                "ratio_f64": ratio,
                "rhs": r.rhs,
                "per_k": r.per_k,
                "per_k_over_rhs": over,
                "k_window": k_window,
                "window_holds": in_window,
            }));
        }
        let growing = ratios.windows(2).all(|w| w[1] > w[0]);
        let last = self.n.0.last().copied().unwrap_or(0);
        let svg = svg::bar_chart(&format!("B_{last} walk: per-k term / RHS, p = {}", self.p), "k", "term / RHS", &last_bars, &[lo, hi]);
        let report = json!({ "rows": rows, "window": [lo, hi], "ratio_growing": growing });
        Ok(Artifact::new(report, Some(windows_ok && growing))?.csv(csv).svg(svg))
    }
}

#[derive(Args, Debug, Serialize)]
pub struct PerKBound {
    #[arg(long, default_value = "2,3", value_name = "LIST")]
    pub m: UsizeList,
    #[arg(long, default_value_t = 2, value_name = "INT")]
    pub p: u32,
}

impl PerKBound {
    fn run(&self) -> Result<Artifact> {
        let mut rows = Vec::new();
        let mut csv = String::from("m,k,t_k,term,bound,holds\n");
        let mut bars = Vec::new();
        let mut violations = 0;
        for &m in &self.m.0 {
            let g = LaaksoGraph::build(m)?;
            let r = markov::laakso_report(&g, self.p, None)?;
            bars.clear();
            for k in 0..=(2 * m).saturating_sub(2) {
                let b = markov::per_k_laakso_bound(&g, k, self.p)?;
                let term = &r.per_k[k];
                let holds = match (term.exact(), b.bound.exact()) {
                    (Some(t), Some(bd)) => t >= bd,
                    _ => f64_of(term) >= f64_of(&b.bound),
                };
                violations += !holds as usize;
                writeln!(csv, "{m},{k},{},{term},{},{holds}", b.t_k, b.bound)?;
                bars.push((k.to_string(), (f64_of(term) / f64_of(&b.bound)).log10()));
                rows.push(json!({ "m": m, "k": k, "t_k": b.t_k, "term": term, "bound": b.bound, "holds": holds }));
            }
        }
        let last = self.m.0.last().copied().unwrap_or(0);
        let svg = svg::bar_chart(&format!("G_{last}: per-k term over certified bound"), "k", "log10(term / bound)", &bars, &[0.0]);
        Ok(Artifact::new(json!({ "rows": rows, "violations": violations }), Some(violations == 0))?.csv(csv).svg(svg))
    }
}

#[derive(Args, Debug, Serialize)]
pub struct PconvexCheck {
    #[arg(long, default_value_t = 4.0, value_name = "FLOAT")]
    pub p: f64,
    #[arg(long, default_value_t = 8, value_name = "INT")]
    pub d: usize,
    #[arg(long, default_value_t = 100_000, value_name = "INT")]
    pub trials: usize,
    #[arg(long, default_value_t = 0, value_name = "INT")]
    pub seed: u64,
}

impl PconvexCheck {
    fn run(&self) -> Result<Artifact> {
        let space = LpSpace::new(self.d, self.p)?;
        let mut rng = rng(self.seed);
        let est = banach::find_k(&space, self.trials, &mut rng)?;
        let survey = banach::slack_survey(self.p, est.k, self.trials, self.d, &mut rng)?;
        let passed = survey.passed(banach::SLACK_TOL, 1e-12);
        let csv = format!(
            "p,d,trials,k,min_pconvex,min_fork\n{},{},{},{:.12e},{:.6e},{:.6e}\n",
            self.p, self.d, self.trials, est.k, survey.min_pconvex, survey.min_fork
        );
        Ok(Artifact::new(json!({ "k_estimate": est, "slack": survey }), Some(passed))?.csv(csv))
    }
}

#[derive(Args, Debug, Serialize)]
pub struct Parallelogram {
    #[arg(long, default_value_t = 100_000, value_name = "INT")]
    pub trials: usize,
    #[arg(long, default_value_t = 64, value_name = "INT")]
    pub max_dim: usize,
    #[arg(long, default_value_t = 0, value_name = "INT")]
    pub seed: u64,
}

impl Parallelogram {
    fn run(&self) -> Result<Artifact> {
        let s = banach::slack_survey(2.0, 1.0, self.trials, self.max_dim, &mut rng(self.seed))?;
        let passed = s.passed(banach::SLACK_TOL, 1e-12);
        Ok(Artifact::new(s, Some(passed))?)
    }
}

#[derive(Args, Debug, Serialize)]
pub struct Prop21Check {
    #[arg(long, default_value_t = 100, value_name = "INT")]
    pub chains: usize,
    #[arg(long, default_value_t = 10, value_name = "INT")]
    pub max_states: usize,
    #[arg(long, default_value_t = 8, value_name = "INT")]
    pub max_horizon: usize,
    #[arg(long, default_value_t = 4, value_name = "INT")]
    pub dim: usize,
    #[arg(long, default_value_t = 0, value_name = "INT")]
    pub seed: u64,
}

impl Prop21Check {
    fn run(&self) -> Result<Artifact> {
        let s = banach::transfer_survey(self.chains, self.max_states, self.max_horizon, self.dim, self.seed)?;
        let passed = s.passed();
        Ok(Artifact::new(s, Some(passed))?)
    }
}

#[derive(Args, Debug, Serialize)]
pub struct HtreeValidate {
    #[arg(long, default_value_t = 20, value_name = "INT")]
    pub sequences: usize,
    /// Schedules are drawn with every value below this.
    #[arg(long, default_value = "1/4", value_name = "RATIONAL")]
    pub cap: Rat,
    #[arg(long, default_value_t = 8, value_name = "INT")]
    pub exhaustive_depth: usize,
    #[arg(long, default_value_t = 64, value_name = "INT")]
    pub depth: usize,
    #[arg(long, default_value_t = 100_000, value_name = "INT")]
    pub triples: u64,
    #[arg(long, default_value_t = 12, value_name = "INT")]
    pub tree_depth: usize,
    #[arg(long, default_value_t = 0, value_name = "INT")]
    pub seed: u64,
}

impl HtreeValidate {
    fn run(&self) -> Result<Artifact> {
        let v = validate_htree(self.sequences, &self.cap.0, self.exhaustive_depth, self.depth, self.triples, self.tree_depth, self.seed)?;
        let passed = v.passed();
        Ok(Artifact::new(v, Some(passed))?)
    }
}

fn default_delta(kind: InstanceKind) -> Rational {
    match kind {
        InstanceKind::Midpoint => rational::ratio(1, 32),
        InstanceKind::Fork => rational::ratio(1, 128),
        InstanceKind::ThreePath => rational::ratio(1, 256),
    }
}

/// `{"space": <H-tree>}` or `{"eps": "1/5", "depth": 40}`.
fn space_from_json(v: &Json) -> Result<HTreeSpace> {
    if let Some(s) = v.get("space") {
        return Ok(HTreeSpace::from_json(s)?);
    }
    let eps = v.get("eps").and_then(Json::as_str).context("input needs \"space\" or \"eps\"")?;
    let depth = v.get("depth").and_then(Json::as_u64).context("input with \"eps\" needs \"depth\"")?;
    Ok(HTreeSpace::constant(rational::parse(eps)?, depth as usize)?)
}

#[derive(Args, Debug, Serialize)]
pub struct Classify {
    /// midpoint, fork or 3path.
    #[arg(long, value_name = "KIND")]
    pub kind: String,
    /// JSON with the space and "points" as bit strings; without it a random batch is classified.
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// Defaults to 1/32, 1/128 and 1/256 for the three kinds.
    #[arg(long, value_name = "RATIONAL")]
    pub delta: Option<Rat>,
    #[arg(long, default_value_t = 1000, value_name = "INT")]
    pub count: usize,
    #[arg(long, default_value_t = 40, value_name = "INT")]
    pub depth: usize,
    /// Constant schedule for random batches; a random schedule below 1/4 otherwise.
    #[arg(long, value_name = "RATIONAL")]
    pub eps: Option<Rat>,
    #[arg(long, default_value_t = 0, value_name = "INT")]
    pub seed: u64,
}

impl Classify {
    fn run(&self) -> Result<Artifact> {
        let kind: InstanceKind = self.kind.parse()?;
        let delta = self.delta.as_ref().map_or_else(|| default_delta(kind), |d| d.0.clone());
        if let Some(path) = &self.input {
            let v = read_json(path)?;
            let space = space_from_json(&v)?;
            let pts: Vec<TreeVertex> = v
                .get("points")
                .and_then(Json::as_array)
                .context("input needs \"points\"")?
                .iter()
                .map(|p| p.as_str().context("points are bit strings").and_then(|s| Ok(s.parse::<TreeVertex>()?)))
                .collect::<Result<_>>()?;
            let detail = match kind {
                InstanceKind::Midpoint => {
                    let [x, y, z] = pts[..].try_into().context("a midpoint needs 3 points")?;
                    serde_json::to_value(mconvex::embeddings::classify_midpoint(&space, &x, &y, &z, &delta)?)?
                }
                InstanceKind::Fork => {
                    let [x, y, z, w] = pts[..].try_into().context("a fork needs 4 points")?;
                    serde_json::to_value(mconvex::embeddings::classify_fork(&space, &x, &y, &z, &w, &delta)?)?
                }
                InstanceKind::ThreePath => {
                    let xs: [TreeVertex; 4] = pts[..].try_into().context("a 3-path needs 4 points")?;
                    serde_json::to_value(mconvex::embeddings::classify_3path(&space, &xs, &delta)?)?
                }
            };
            let outcome = classify_instance(&space, kind, &pts, &delta)?;
            let passed = outcome.ok();
            return Artifact::new(json!({ "outcome": outcome, "class": detail }), Some(passed));
        }
        let space = match &self.eps {
            Some(e) => HTreeSpace::constant(e.0.clone(), self.depth)?,
            None => HTreeSpace::new(random_epsilon(self.depth, &rational::ratio(1, 4), &mut rng(self.seed)), self.depth)?,
        };
        let s = classification_survey(&space, kind, &delta, self.count, self.seed)?;
        let mut csv = String::from("variant,count\n");
        for (v, c) in &s.tally {
            writeln!(csv, "{v},{c}")?;
        }
        let bars: Vec<(String, f64)> = s.tally.iter().map(|(v, &c)| (v.clone(), c as f64)).collect();
        let svg = svg::bar_chart(&format!("{} classification, delta = {}", self.kind, rational::format(&delta)), "variant", "count", &bars, &[]);
        let passed = s.passed();
        Ok(Artifact::new(json!({ "space": space.to_json(), "survey": s }), Some(passed))?.csv(csv).svg(svg))
    }
}

#[derive(Args, Debug, Serialize)]
pub struct Boost {
    /// JSON with "points" (reals on the line) or "space" plus "assignment"; without it random paths are used.
    #[arg(long, value_name = "FILE")]
    pub path: Option<PathBuf>,
    #[arg(long, default_value_t = 4, value_name = "INT")]
    pub t: usize,
    #[arg(long, default_value_t = 0.5, value_name = "FLOAT")]
    pub delta: f64,
    /// Distortion bound of the input, for the size precondition and random paths.
    #[arg(long, value_name = "FLOAT")]
    pub d: Option<f64>,
    /// Random paths live on P_{t^k}.
    #[arg(long, default_value_t = 6, value_name = "INT")]
    pub k: u32,
    #[arg(long, default_value_t = 100, value_name = "INT")]
    pub count: usize,
    #[arg(long, default_value_t = 0, value_name = "INT")]
    pub seed: u64,
}

impl Boost {
    fn run(&self) -> Result<Artifact> {
        let target = 1.0 / (1.0 - self.delta / 2.0);
        if let Some(p) = &self.path {
            let v = read_json(p)?;
            let b = if let Some(space) = v.get("space") {
                let space = FiniteMetricSpace::from_json(space)?;
                let assignment: Vec<usize> = serde_json::from_value(v.get("assignment").cloned().context("\"space\" needs \"assignment\"")?)?;
                let f = PathMap::from_space(&space, assignment)?;
                let b = path_boost(&f, self.t, self.delta, self.d)?;
                (b.clone(), grid_distortion(&f, b.grid).dist)
            } else {
                let pts: Vec<f64> = serde_json::from_value(v.get("points").cloned().context("input needs \"points\" or \"space\"")?)?;
                let f = PathMap::new(RealLine, pts)?;
                let b = path_boost(&f, self.t, self.delta, self.d)?;
                (b.clone(), grid_distortion(&f, b.grid).dist)
            };
            let passed = b.1 <= target;
            return Artifact::new(json!({ "boost": b.0, "recomputed_distortion": b.1, "target": target }), Some(passed));
        }
        let d = self.d.unwrap_or(2.0);
        let n = self.t.checked_pow(self.k).context("t^k overflows")?;
        let mut rng = rng(self.seed);
        let mut results = Vec::new();
        let mut csv = String::from("instance,start,step,t_value,distortion,method\n");
        let mut failures = 0;
        for i in 0..self.count {
            let f = PathMap::new(RealLine, random_bounded_path(n, self.t, d, &mut rng))?;
            match path_boost(&f, self.t, self.delta, Some(d)) {
                Ok(b) => {
                    let dist = grid_distortion(&f, b.grid).dist;
                    failures += (dist > target) as usize;
                    writeln!(csv, "{i},{},{},{:.12},{:.12},{:?}", b.grid.start, b.grid.step, b.t_value, dist, b.method)?;
                    results.push(json!({ "grid": b.grid, "t_value": b.t_value, "distortion": dist, "method": b.method }));
                }
                Err(e) => {
                    failures += 1;
                    results.push(json!({ "error": e.to_string() }));
                }
            }
        }
        let report = json!({ "n": n, "d": d, "target": target, "instances": results, "failures": failures });
        Ok(Artifact::new(report, Some(failures == 0))?.csv(csv))
    }
}

#[derive(Args, Debug, Serialize)]
pub struct B4Search {
    /// eps = 1 / s-const at every level.
    #[arg(long, default_value = "5", value_name = "RATIONAL")]
    pub s_const: Rat,
    #[arg(long, default_value_t = 60, value_name = "INT")]
    pub depth: usize,
    #[arg(long, default_value = "1/512", value_name = "RATIONAL")]
    pub delta: Rat,
    #[arg(long, default_value_t = 10_000, value_name = "INT")]
    pub trials: usize,
    #[arg(long, default_value_t = 0, value_name = "INT")]
    pub anneal: usize,
    #[arg(long, default_value_t = 0, value_name = "INT")]
    pub seed: u64,
}

impl B4Search {
    fn run(&self) -> Result<Artifact> {
        let space = HTreeSpace::constant(self.s_const.0.recip(), self.depth)?;
        let r = b4_search(&space, &self.delta.0, self.trials, self.anneal, self.seed)?;
        let passed = r.violations.is_empty() && r.annealed.as_ref().map_or(true, |a| a.check.holds);
        Ok(Artifact::new(r, Some(passed))?)
    }
}

#[derive(Args, Debug, Serialize)]
pub struct DistortionGap {
    /// `const:D` for s = D, or `log2` for s(n) = max(4, log2(n + 2)).
    #[arg(long, default_value = "const:4", value_name = "GROWTH")]
    pub growth: String,
    #[arg(long, default_value_t = 8, value_name = "INT")]
    pub n: usize,
    #[arg(long, default_value_t = 1000, value_name = "INT")]
    pub trials: usize,
    #[arg(long, default_value_t = 0, value_name = "INT")]
    pub seed: u64,
}

impl DistortionGap {
    fn run(&self) -> Result<Artifact> {
        let s: Box<dyn Fn(usize) -> f64> = match self.growth.split_once(':') {
            Some(("const", d)) => {
                let d: f64 = d.parse().context("const:D needs a number")?;
                Box::new(move |_| d)
            }
            None if self.growth == "log2" => Box::new(|n| ((n + 2) as f64).log2().max(4.0)),
            _ => bail!("unknown growth {:?}; expected const:D or log2", self.growth),
        };
        let r = distortion_gap_experiment(s, self.n, self.trials, self.seed)?;
        let passed = r.violations == 0 && r.upper <= r.s_n * (1.0 + 1e-9);
        Ok(Artifact::new(r, Some(passed))?)
    }
}

struct MapInput {
    source: FiniteMetricSpace,
    target: FiniteMetricSpace,
    assignment: Vec<usize>,
}

fn read_map(path: &Path) -> Result<MapInput> {
    let v = read_json(path)?;
    let get = |k: &str| v.get(k).cloned().with_context(|| format!("map file needs {k:?}"));
    Ok(MapInput {
        source: FiniteMetricSpace::from_json(&get("source")?)?,
        target: FiniteMetricSpace::from_json(&get("target")?)?,
        assignment: serde_json::from_value(get("assignment")?)?,
    })
}

fn constants(map: &PointMap, a: &Option<Rat>, b: &Option<Rat>) -> Result<(Rational, Rational, Rational, Rational)> {
    let (a_min, b_min) = quotient_constants(map)?;
    let a = a.as_ref().map_or_else(|| a_min.clone(), |r| r.0.clone());
    let b = b.as_ref().map_or_else(|| b_min.clone(), |r| r.0.clone());
    Ok((a, b, a_min, b_min))
}

#[derive(Args, Debug, Serialize)]
pub struct QuotientVerify {
    /// JSON with "source", "target" (finite metric spaces) and "assignment".
    #[arg(long, value_name = "FILE")]
    pub map: PathBuf,
    /// Defaults to the least valid constant.
    #[arg(long, value_name = "RATIONAL")]
    pub a: Option<Rat>,
    #[arg(long, value_name = "RATIONAL")]
    pub b: Option<Rat>,
}

impl QuotientVerify {
    fn run(&self) -> Result<Artifact> {
        let m = read_map(&self.map)?;
        let map = PointMap::new(&m.source, &m.target, m.assignment.clone())?;
        let (a, b, a_min, b_min) = constants(&map, &self.a, &self.b)?;
        let violations = verify_quotient(&map, &a, &b)?;
        let f = rational::format;
        let report = json!({ "a": f(&a), "b": f(&b), "least_a": f(&a_min), "least_b": f(&b_min), "violations": violations });
        Ok(Artifact::new(report, Some(violations.is_empty()))?)
    }
}

#[derive(Args, Debug, Serialize)]
pub struct QuotientLift {
    #[arg(long, value_name = "FILE")]
    pub map: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub chain: PathBuf,
    /// Image of each chain state in the target; the identity by default.
    #[arg(long, value_name = "LIST")]
    pub g: Option<UsizeList>,
    #[arg(long, value_name = "RATIONAL")]
    pub a: Option<Rat>,
    #[arg(long, value_name = "RATIONAL")]
    pub b: Option<Rat>,
    #[arg(long, default_value_t = 2, value_name = "INT")]
    pub p: u32,
    /// A state trajectory to lift and print.
    #[arg(long, value_name = "LIST")]
    pub trajectory: Option<UsizeList>,
}

impl QuotientLift {
    fn run(&self) -> Result<Artifact> {
        let m = read_map(&self.map)?;
        let chain = ChainSpec::from_json(&read_json(&self.chain)?)?;
        let map = PointMap::new(&m.source, &m.target, m.assignment.clone())?;
        let (a, b, _, _) = constants(&map, &self.a, &self.b)?;
        let q = QuotientMap::new(map, a, b)?;
        let g = self.g.as_ref().map_or_else(|| (0..chain.n_states()).collect(), |g| g.0.clone());
        let lifted = match &self.trajectory {
            Some(t) => Some(lift_chain(&q, &chain, &g)?.lift(&t.0)?),
            None => None,
        };
        let r = transfer_check(&q, &chain, &g, self.p, None)?;
        let passed = r.holds && r.lhs_bound_holds && r.rhs_bound_holds;
        let f = rational::format;
        Ok(Artifact::new(json!({ "a": f(q.a()), "b": f(q.b()), "lifted": lifted, "transfer": r }), Some(passed))?)
    }
}

#[derive(Args, Debug, Serialize)]
pub struct RamseyToy {
    #[arg(long, default_value_t = 4, value_name = "INT")]
    pub k: usize,
    #[arg(long, default_value_t = 1, value_name = "INT")]
    pub m: usize,
    #[arg(long, default_value_t = 2, value_name = "INT")]
    pub r: usize,
    #[arg(long, default_value_t = 0, value_name = "INT")]
    pub seed: u64,
}

impl RamseyToy {
    fn run(&self) -> Result<Artifact> {
        let rep = ramsey_search(self.k, self.m, self.r, &HashColoring { r: self.r, seed: self.seed })?;
        let found = matches!(rep.outcome, RamseyOutcome::Found { .. });
        let passed = found || !rep.guaranteed;
        Ok(Artifact::new(rep, Some(passed))?)
    }
}

#[derive(Args, Debug, Serialize)]
pub struct ExtractSubtree {
    #[arg(long, default_value_t = 8, value_name = "INT")]
    pub n: usize,
    #[arg(long, default_value_t = 2, value_name = "INT")]
    pub t: usize,
    #[arg(long, default_value_t = 0.5, value_name = "FLOAT")]
    pub delta: f64,
    #[arg(long, default_value_t = 1.0, value_name = "FLOAT")]
    pub xi: f64,
    /// Constant schedule of the target H-tree.
    #[arg(long, default_value = "1/5", value_name = "RATIONAL")]
    pub eps: Rat,
}

impl ExtractSubtree {
    fn run(&self) -> Result<Artifact> {
        let space = HTreeSpace::constant(self.eps.0.clone(), self.n)?;
        let id = enumerate_bn(self.n)?;
        let e = extract_vertically_faithful(&space, &id, self.n, self.t, self.delta, self.xi)?;
        Ok(Artifact::new(e, Some(true))?)
    }
}
