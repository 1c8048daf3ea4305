//! Browsing records, ground truth, label extraction and preprocessing.
//!
//! Records are kept as `(device, attribute, count)` aggregates. Timestamps or
//! any other extra columns in input files are accepted and dropped.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeKind {
    Ip,
    Domain,
}

impl AttributeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttributeKind::Ip => "ip",
            AttributeKind::Domain => "domain",
        }
    }
}

impl FromStr for AttributeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ip" => Ok(AttributeKind::Ip),
            "domain" => Ok(AttributeKind::Domain),
            _ => Err(Error::UnknownAttributeKind(s.to_string())),
        }
    }
}

impl fmt::Display for AttributeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An IP address or a domain a device was seen with.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Attribute {
    Ip(String),
    Domain(String),
}

impl Attribute {
    pub fn new(kind: AttributeKind, value: impl Into<String>) -> Self {
        match kind {
            AttributeKind::Ip => Attribute::Ip(value.into()),
            AttributeKind::Domain => Attribute::Domain(value.into()),
        }
    }

    pub fn kind(&self) -> AttributeKind {
        match self {
            Attribute::Ip(_) => AttributeKind::Ip,
            Attribute::Domain(_) => AttributeKind::Domain,
        }
    }

    pub fn value(&self) -> &str {
        match self {
            Attribute::Ip(v) | Attribute::Domain(v) => v,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceType {
    Mobile,
    Desktop,
    #[default]
    Unknown,
}

impl DeviceType {
    pub fn as_str(self) -> &'static str {
        match self {
            DeviceType::Mobile => "mobile",
            DeviceType::Desktop => "desktop",
            DeviceType::Unknown => "unknown",
        }
    }

    /// The type a mobile-desktop tracker looks for when seeded from `self`.
    pub fn opposite(self) -> Option<DeviceType> {
        match self {
            DeviceType::Mobile => Some(DeviceType::Desktop),
            DeviceType::Desktop => Some(DeviceType::Mobile),
            DeviceType::Unknown => None,
        }
    }
}

impl FromStr for DeviceType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mobile" => Ok(DeviceType::Mobile),
            "desktop" => Ok(DeviceType::Desktop),
            "" | "unknown" => Ok(DeviceType::Unknown),
            other => Err(Error::InvalidConfig(format!("unknown device type {other:?}"))),
        }
    }
}

/// Aggregated visits of one device to one attribute.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BrowsingRecord {
    pub device_id: String,
    pub attribute: Attribute,
    pub count: u64,
    pub device_type: DeviceType,
}

impl BrowsingRecord {
    pub fn new(device_id: impl Into<String>, attribute: Attribute, count: u64) -> Self {
        BrowsingRecord {
            device_id: device_id.into(),
            attribute,
            count,
            device_type: DeviceType::Unknown,
        }
    }

    pub fn ip(device_id: impl Into<String>, ip: impl Into<String>, count: u64) -> Self {
        Self::new(device_id, Attribute::Ip(ip.into()), count)
    }

    pub fn domain(device_id: impl Into<String>, domain: impl Into<String>, count: u64) -> Self {
        Self::new(device_id, Attribute::Domain(domain.into()), count)
    }

    pub fn with_type(mut self, device_type: DeviceType) -> Self {
        self.device_type = device_type;
        self
    }
}

/// Merge duplicate `(device, attribute)` rows, summing counts.
///
/// Output is sorted by device id then attribute. A device's type is the
/// first non-unknown type seen for it.
pub fn aggregate(records: impl IntoIterator<Item = BrowsingRecord>) -> Vec<BrowsingRecord> {
    let mut counts: BTreeMap<(String, Attribute), u64> = BTreeMap::new();
    let mut types: HashMap<String, DeviceType> = HashMap::new();
    for r in records {
        let t = types.entry(r.device_id.clone()).or_default();
        if *t == DeviceType::Unknown {
            *t = r.device_type;
        }
        *counts.entry((r.device_id, r.attribute)).or_insert(0) += r.count;
    }
    counts
        .into_iter()
        .map(|((device_id, attribute), count)| {
            let device_type = types.get(&device_id).copied().unwrap_or_default();
            BrowsingRecord {
                device_id,
                attribute,
                count,
                device_type,
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordFormat {
    Csv,
    Jsonl,
}

impl RecordFormat {
    /// `.csv` is CSV, everything else is JSON Lines.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => RecordFormat::Csv,
            _ => RecordFormat::Jsonl,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordRow {
    #[serde(default)]
    device_id: String,
    kind: String,
    value: String,
    #[serde(default)]
    count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    device_type: Option<String>,
}

impl RecordRow {
    fn into_record(self) -> std::result::Result<BrowsingRecord, String> {
        if self.device_id.trim().is_empty() {
            return Err("missing device_id".into());
        }
        let kind = AttributeKind::from_str(&self.kind).map_err(|e| e.to_string())?;
        if self.value.is_empty() {
            return Err("missing value".into());
        }
        let count = self.count.unwrap_or(1);
        if count == 0 {
            return Err("count must be at least 1".into());
        }
        let device_type = match self.device_type.as_deref() {
            Some(t) => DeviceType::from_str(t).map_err(|e| e.to_string())?,
            None => DeviceType::Unknown,
        };
        Ok(BrowsingRecord {
            device_id: self.device_id,
            attribute: Attribute::new(kind, self.value),
            count,
            device_type,
        })
    }

    fn from_record(r: &BrowsingRecord) -> Self {
        RecordRow {
            device_id: r.device_id.clone(),
            kind: r.attribute.kind().as_str().to_string(),
            value: r.attribute.value().to_string(),
            count: Some(r.count),
            device_type: match r.device_type {
                DeviceType::Unknown => None,
                t => Some(t.as_str().to_string()),
            },
        }
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Load a records file and aggregate duplicate `(device, attribute)` rows.
pub fn load_records(path: impl AsRef<Path>, format: RecordFormat) -> Result<Vec<BrowsingRecord>> {
    let path = path.as_ref();
    let file = File::open(path)?;
    read_records(file, format, path)
}

pub fn read_records<R: Read>(reader: R, format: RecordFormat, origin: &Path) -> Result<Vec<BrowsingRecord>> {
    let mut raw = Vec::new();
    match format {
        RecordFormat::Jsonl => {
            for (i, line) in BufReader::new(reader).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let row: RecordRow =
                    serde_json::from_str(&line).map_err(|e| parse_err(origin, i + 1, e.to_string()))?;
                raw.push(row.into_record().map_err(|m| parse_err(origin, i + 1, m))?);
            }
        }
        RecordFormat::Csv => {
            let mut rdr = csv::ReaderBuilder::new()
                .trim(csv::Trim::All)
                .flexible(true)
                .from_reader(reader);
            let headers = rdr
                .headers()
                .map_err(|e| parse_err(origin, 1, e.to_string()))?
                .clone();
            for rec in rdr.records() {
                let rec = rec.map_err(|e| {
                    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
                    parse_err(origin, line, e.to_string())
                })?;
                let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
                let row: RecordRow = rec
                    .deserialize(Some(&headers))
                    .map_err(|e| parse_err(origin, line, e.to_string()))?;
                raw.push(row.into_record().map_err(|m| parse_err(origin, line, m))?);
            }
        }
    }
    Ok(aggregate(raw))
}

pub fn write_records<W: Write>(writer: W, records: &[BrowsingRecord], format: RecordFormat) -> Result<()> {
    match format {
        RecordFormat::Jsonl => {
            let mut w = BufWriter::new(writer);
            for r in records {
                serde_json::to_writer(&mut w, &RecordRow::from_record(r))?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        RecordFormat::Csv => {
            let mut w = csv::Writer::from_writer(writer);
            w.write_record(["device_id", "kind", "value", "count", "device_type"])
                .map_err(csv_io)?;
            for r in records {
                let count = r.count.to_string();
                let dt = match r.device_type {
                    DeviceType::Unknown => "",
                    t => t.as_str(),
                };
                w.write_record([
                    r.device_id.as_str(),
                    r.attribute.kind().as_str(),
                    r.attribute.value(),
                    count.as_str(),
                    dt,
                ])
                .map_err(csv_io)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn save_records(path: impl AsRef<Path>, records: &[BrowsingRecord], format: RecordFormat) -> Result<()> {
    write_records(File::create(path)?, records, format)
}

/// Distinct device ids in `records`, sorted.
pub fn device_ids(records: &[BrowsingRecord]) -> BTreeSet<String> {
    records.iter().map(|r| r.device_id.clone()).collect()
}

/// Map every IP attribute to its /24 prefix and re-aggregate.
pub fn prefix_ips(records: &[BrowsingRecord]) -> Result<Vec<BrowsingRecord>> {
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let mut r = r.clone();
        if let Attribute::Ip(ip) = &r.attribute {
            r.attribute = Attribute::Ip(ip_to_prefix(ip)?);
        }
        out.push(r);
    }
    Ok(aggregate(out))
}

/// `"203.0.113.57"` → `"203.0.113.0/24"`.
pub fn ip_to_prefix(ip: &str) -> Result<String> {
    let addr = Ipv4Addr::from_str(ip.trim()).map_err(|_| Error::InvalidIp(ip.to_string()))?;
    let [a, b, c, _] = addr.octets();
    Ok(format!("{a}.{b}.{c}.0/24"))
}

/// Drop every record of the `n` most visited domains.
///
/// Domains are ranked by total count across devices, ties by name. All
/// domains tied with the n-th ranked one are removed as well, so under ties
/// more than `n` domains can go.
pub fn filter_top_domains(records: &[BrowsingRecord], n: usize) -> Vec<BrowsingRecord> {
    let removed = top_domains(records, n);
    records
        .iter()
        .filter(|r| match &r.attribute {
            Attribute::Domain(d) => !removed.contains(d.as_str()),
            Attribute::Ip(_) => true,
        })
        .cloned()
        .collect()
}

/// The domain set [`filter_top_domains`] removes.
pub fn top_domains(records: &[BrowsingRecord], n: usize) -> BTreeSet<&str> {
    if n == 0 {
        return BTreeSet::new();
    }
    let mut totals: HashMap<&str, u64> = HashMap::new();
    for r in records {
        if let Attribute::Domain(d) = &r.attribute {
            *totals.entry(d.as_str()).or_insert(0) += r.count;
        }
    }
    let mut ranked: Vec<(&str, u64)> = totals.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    if n >= ranked.len() {
        return ranked.into_iter().map(|(d, _)| d).collect();
    }
    let cutoff = ranked[n - 1].1;
    ranked
        .into_iter()
        .take_while(|(_, c)| *c >= cutoff)
        .map(|(d, _)| d)
        .collect()
}

/// Device → user assignment.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GroundTruth {
    owner: BTreeMap<String, String>,
}

impl GroundTruth {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, device_id: impl Into<String>, user_id: impl Into<String>) {
        self.owner.insert(device_id.into(), user_id.into());
    }

    pub fn user_of(&self, device_id: &str) -> Option<&str> {
        self.owner.get(device_id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.owner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.owner.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.owner.iter().map(|(d, u)| (d.as_str(), u.as_str()))
    }

    /// Users with their devices, both sorted.
    pub fn users(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut users: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (d, u) in &self.owner {
            users.entry(u.as_str()).or_default().push(d.as_str());
        }
        users
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut truth = GroundTruth::new();
        #[derive(Deserialize)]
        struct Row {
            device_id: String,
            user_id: String,
        }
        for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Row = serde_json::from_str(&line).map_err(|e| parse_err(path, i + 1, e.to_string()))?;
            truth.insert(row.device_id, row.user_id);
        }
        Ok(truth)
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = BufWriter::new(writer);
        for (d, u) in &self.owner {
            serde_json::to_writer(&mut w, &serde_json::json!({ "device_id": d, "user_id": u }))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(File::create(path)?)
    }
}

impl FromIterator<(String, String)> for GroundTruth {
    fn from_iter<I: IntoIterator<Item = (String, String)>>(iter: I) -> Self {
        GroundTruth {
            owner: iter.into_iter().collect(),
        }
    }
}

/// Device pairs known to belong to the same user.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabeledPairs {
    pub pairs: Vec<(String, String)>,
}

impl LabeledPairs {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        #[derive(Deserialize)]
        struct Row {
            device_a: String,
            device_b: String,
        }
        let mut pairs = Vec::new();
        for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Row = serde_json::from_str(&line).map_err(|e| parse_err(path, i + 1, e.to_string()))?;
            pairs.push((row.device_a, row.device_b));
        }
        Ok(LabeledPairs { pairs })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for (a, b) in &self.pairs {
            serde_json::to_writer(&mut w, &serde_json::json!({ "device_a": a, "device_b": b }))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Labels from a random subset of users, plus the devices of everyone else.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSplit {
    pub labels: LabeledPairs,
    pub held_out: BTreeSet<String>,
}

fn intra_user_pairs(devices: &[&str], out: &mut Vec<(String, String)>) {
    for (i, a) in devices.iter().enumerate() {
        for b in &devices[i + 1..] {
            out.push((a.to_string(), b.to_string()));
        }
    }
}

/// Pick `⌊fraction · n_users⌋` users and label all of their device pairs.
pub fn sample_labels_random(truth: &GroundTruth, fraction: f64, seed: u64) -> Result<LabelSplit> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(format!("label fraction {fraction} outside [0, 1]")));
    }
    let users: Vec<(&str, Vec<&str>)> = truth.users().into_iter().collect();
    let n_selected = (fraction * users.len() as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut selected: Vec<usize> = sample(&mut rng, users.len(), n_selected).into_vec();
    selected.sort_unstable();
    let mut is_selected = vec![false; users.len()];
    let mut pairs = Vec::new();
    for &i in &selected {
        is_selected[i] = true;
        intra_user_pairs(&users[i].1, &mut pairs);
    }
    let held_out = users
        .iter()
        .zip(&is_selected)
        .filter(|(_, s)| !**s)
        .flat_map(|((_, devices), _)| devices.iter().map(|d| d.to_string()))
        .collect();
    Ok(LabelSplit {
        labels: LabeledPairs { pairs },
        held_out,
    })
}

/// Label the same-user pairs where both devices visited `domain`.
pub fn sample_labels_single_domain(records: &[BrowsingRecord], truth: &GroundTruth, domain: &str) -> LabeledPairs {
    let visitors: BTreeSet<&str> = records
        .iter()
        .filter(|r| matches!(&r.attribute, Attribute::Domain(d) if d == domain))
        .map(|r| r.device_id.as_str())
        .collect();
    let mut by_user: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for d in visitors {
        if let Some(u) = truth.user_of(d) {
            by_user.entry(u).or_default().push(d);
        }
    }
    let mut pairs = Vec::new();
    for devices in by_user.values() {
        intra_user_pairs(devices, &mut pairs);
    }
    LabeledPairs { pairs }
}

/// Records plus the ground truth they were generated or collected with.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub records: Vec<BrowsingRecord>,
    pub truth: GroundTruth,
}

impl Dataset {
    pub fn load(records: impl AsRef<Path>, truth: impl AsRef<Path>) -> Result<Self> {
        let records_path: PathBuf = records.as_ref().to_path_buf();
        let format = RecordFormat::from_path(&records_path);
        Ok(Dataset {
            records: load_records(&records_path, format)?,
            truth: GroundTruth::load(truth)?,
        })
    }
}
