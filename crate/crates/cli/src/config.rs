//! Run configuration: defaults, then the JSON file, then command-line flags.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use graphlink::eval::MatchMode;
use graphlink::perturb::PerturbConfig;
use graphlink::synthetic::SyntheticConfig;
use graphlink::{AttributeKind, BrowsingRecord, LinkerConfig, Scorer, Variant, WeightMode};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    GraphTrack(Variant),
    Bat(Variant),
    DeviceGraph,
}

impl Default for Method {
    fn default() -> Self {
        Method::GraphTrack(Variant::Or)
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.to_ascii_lowercase();
        let variant = |v: &str| v.parse::<Variant>().map_err(|e| e.to_string());
        match s.as_str() {
            "devicegraph" => Ok(Method::DeviceGraph),
            "bat" => Ok(Method::Bat(Variant::Or)),
            "bat-ip" => Ok(Method::Bat(Variant::Ip)),
            "bat-domain" => Ok(Method::Bat(Variant::Domain)),
            _ => match s.strip_prefix("graphtrack-") {
                Some(v) => Ok(Method::GraphTrack(variant(v)?)),
                None => Err(format!(
                    "unknown method {s:?} (expected graphtrack-{{ip,domain,unigraph,or,and}}, bat, bat-ip, bat-domain or devicegraph)"
                )),
            },
        }
    }
}

impl TryFrom<String> for Method {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = |v: &Variant| match v {
            Variant::Ip => "ip",
            Variant::Domain => "domain",
            Variant::UniGraph => "unigraph",
            Variant::Or => "or",
            Variant::And => "and",
        };
        match self {
            Method::GraphTrack(var) => write!(f, "graphtrack-{}", v(var)),
            Method::Bat(Variant::Or) => f.write_str("bat"),
            Method::Bat(var) => write!(f, "bat-{}", v(var)),
            Method::DeviceGraph => f.write_str("devicegraph"),
        }
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

impl Method {
    /// Attribute kinds the method needs to find in the records.
    fn required_kinds(self) -> (Vec<AttributeKind>, bool) {
        use AttributeKind::*;
        match self {
            Method::DeviceGraph => (vec![Ip], true),
            Method::GraphTrack(v) | Method::Bat(v) => match v {
                Variant::Ip => (vec![Ip], true),
                Variant::Domain => (vec![Domain], true),
                Variant::UniGraph | Variant::Or => (vec![Ip, Domain], false),
                Variant::And => (vec![Ip, Domain], true),
            },
        }
    }

    pub fn check_records(self, records: &[BrowsingRecord]) -> Result<(), CliError> {
        let (kinds, all) = self.required_kinds();
        let present = |k: &AttributeKind| records.iter().any(|r| r.attribute.kind() == *k);
        let ok = if all { kinds.iter().all(present) } else { kinds.iter().any(present) };
        if ok {
            Ok(())
        } else {
            let names: Vec<&str> = kinds.iter().map(|k| k.as_str()).collect();
            let sep = if all { " and " } else { " or " };
            Err(CliError::Config(format!("method {self} needs {} records", names.join(sep))))
        }
    }
}

/// Where labeled device pairs come from in supervised runs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LabelSource {
    #[default]
    Off,
    /// Label all device pairs of this fraction of users.
    Random(f64),
    /// Label same-user pairs that both visited this domain.
    Domain(String),
}

impl FromStr for LabelSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "off" {
            return Ok(LabelSource::Off);
        }
        match s.split_once(':') {
            Some(("random", f)) => {
                let f: f64 = f.parse().map_err(|_| format!("bad label fraction {f:?}"))?;
                if !(0.0..=1.0).contains(&f) {
                    return Err(format!("label fraction {f} outside [0, 1]"));
                }
                Ok(LabelSource::Random(f))
            }
            Some(("domain", d)) if !d.is_empty() => Ok(LabelSource::Domain(d.to_string())),
            _ => Err(format!("bad label source {s:?} (expected off, random:F or domain:NAME)")),
        }
    }
}

impl TryFrom<String> for LabelSource {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<LabelSource> for String {
    fn from(l: LabelSource) -> String {
        match l {
            LabelSource::Off => "off".into(),
            LabelSource::Random(f) => format!("random:{f}"),
            LabelSource::Domain(d) => format!("domain:{d}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Synthetic user counts, one CSV row each.
    pub ladder: Vec<usize>,
    /// Devices held back from the base graph and linked one at a time.
    pub new_devices: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            ladder: vec![500, 1000, 2000],
            new_devices: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Records file (`.csv` or JSON Lines). Without it, data is generated
    /// from `synthetic`.
    pub records: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub synthetic: SyntheticConfig,
    pub method: Method,
    pub supervised: LabelSource,
    /// Seed for label sampling and community detection.
    pub seed: u64,
    pub linker: LinkerConfig,
    /// Applied to the records before tracking.
    pub perturb: Option<PerturbConfig>,
    pub threads: Option<usize>,
    pub out: PathBuf,
    pub match_mode: MatchMode,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            records: None,
            truth: None,
            synthetic: SyntheticConfig::default(),
            method: Method::default(),
            supervised: LabelSource::Off,
            seed: 0,
            linker: LinkerConfig::default(),
            perturb: None,
            threads: None,
            out: PathBuf::from("out"),
            match_mode: MatchMode::Strict,
            bench: BenchConfig::default(),
        }
    }
}

/// Flags shared by every subcommand. Each one overrides the config file.
#[derive(clap::Args, Clone, Debug, Default)]
pub struct Overrides {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// graphtrack-{ip,domain,unigraph,or,and}, bat, bat-ip, bat-domain or devicegraph.
    #[arg(long, global = true)]
    pub method: Option<Method>,
    /// Restart probability of the walk.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Most devices per user.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true, env = "GRAPHLINK_THREADS")]
    pub threads: Option<usize>,
    /// Replaces every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// normalized, unnorm or unweighted.
    #[arg(long, global = true)]
    pub weight_mode: Option<WeightMode>,
    /// off, random:F or domain:NAME.
    #[arg(long, global = true)]
    pub supervised: Option<LabelSource>,
    #[arg(long, global = true)]
    pub fixed_threshold: Option<f64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Defaults, then the file named by `--config`, then flags.
    pub fn resolve(o: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match &o.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(m) = o.method {
            cfg.method = m;
        }
        if let Some(a) = o.alpha {
            cfg.linker.walk.alpha = a;
        }
        if let Some(k) = o.k {
            cfg.linker.k = k;
        }
        if let Some(t) = o.threads {
            cfg.threads = Some(t);
        }
        if let Some(s) = o.seed {
            cfg.seed = s;
            cfg.synthetic.seed = s;
            cfg.linker.rng_seed = s;
            if let Some(p) = &mut cfg.perturb {
                p.seed = s;
            }
        }
        if let Some(w) = o.weight_mode {
            cfg.linker.weight_mode = w;
        }
        if let Some(l) = &o.supervised {
            cfg.supervised = l.clone();
        }
        if let Some(t) = o.fixed_threshold {
            cfg.linker.fixed_threshold = Some(t);
        }
        if let Some(out) = &o.out {
            cfg.out = out.clone();
        }
        cfg.sync_linker();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Method and label source decide the linker's variant, scorer and mode.
    fn sync_linker(&mut self) {
        match self.method {
            Method::GraphTrack(v) => {
                self.linker.variant = v;
                self.linker.scorer = Scorer::RandomWalk;
            }
            Method::Bat(v) => {
                self.linker.variant = v;
                self.linker.scorer = Scorer::Bhattacharyya;
            }
            Method::DeviceGraph => {}
        }
        self.linker.supervised = self.supervised != LabelSource::Off;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.linker.validate()?;
        self.synthetic.validate()?;
        if let Some(p) = &self.perturb {
            p.validate()?;
        }
        if self.threads == Some(0) {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        if self.method == Method::DeviceGraph && self.supervised != LabelSource::Off {
            return Err(CliError::Config("devicegraph has no supervised mode".into()));
        }
        Ok(())
    }
}
