//! Seeded perturbations of records and graphs for robustness experiments.

use std::collections::{BTreeMap, HashSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{aggregate, AttributeKind, BrowsingRecord, DeviceType};
use crate::error::{Error, Result};
use crate::graph::{build_graph, BipartiteGraph};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbConfig {
    pub seed: u64,
    /// Share of each device's visits handed to other devices of its type.
    pub error_rate: f64,
    /// Share of IPs that get attached to extra devices.
    pub shared_ip_fraction: f64,
    /// Share of all devices each shared IP is attached to.
    pub shared_ip_device_fraction: f64,
    /// Share of domains whose edges are removed.
    pub dropped_domain_fraction: f64,
    /// Fake device-IP edges per existing edge.
    pub fake_edge_ratio: f64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            seed: 0,
            error_rate: 0.0,
            shared_ip_fraction: 0.0,
            shared_ip_device_fraction: 0.05,
            dropped_domain_fraction: 0.0,
            fake_edge_ratio: 0.0,
        }
    }
}

impl PerturbConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("error_rate", self.error_rate),
            ("shared_ip_fraction", self.shared_ip_fraction),
            ("shared_ip_device_fraction", self.shared_ip_device_fraction),
            ("dropped_domain_fraction", self.dropped_domain_fraction),
            ("fake_edge_ratio", self.fake_edge_ratio),
        ] {
            check_fraction(name, v)?;
        }
        Ok(())
    }

    fn touches_graph(&self) -> bool {
        self.shared_ip_fraction > 0.0 || self.dropped_domain_fraction > 0.0 || self.fake_edge_ratio > 0.0
    }

    /// Every configured perturbation, record-level first. Each step draws
    /// from its own stream derived from `seed`.
    pub fn apply(&self, records: &[BrowsingRecord]) -> Result<Vec<BrowsingRecord>> {
        self.validate()?;
        let mut out = inject_linking_errors(records, self.error_rate, self.seed)?;
        if self.touches_graph() {
            let mut g = build_graph(&out, &[AttributeKind::Ip, AttributeKind::Domain])?;
            g = share_ips(&g, self.shared_ip_fraction, self.shared_ip_device_fraction, self.seed.wrapping_add(1))?;
            g = drop_referers(&g, self.dropped_domain_fraction, self.seed.wrapping_add(2))?;
            g = inject_fake_edges(&g, self.fake_edge_ratio, self.seed.wrapping_add(3))?;
            out = g.to_records();
        }
        Ok(out)
    }
}

fn check_fraction(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} = {v} is outside [0, 1]")))
    }
}

/// Move `round(y · visits)` single visits of every device to random other
/// devices of the same type. Moved visits keep their attribute.
pub fn inject_linking_errors(records: &[BrowsingRecord], y: f64, seed: u64) -> Result<Vec<BrowsingRecord>> {
    check_fraction("error_rate", y)?;
    let records = aggregate(records.iter().cloned());
    if y == 0.0 {
        return Ok(records);
    }
    let mut by_device: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut types: BTreeMap<&str, DeviceType> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_device.entry(&r.device_id).or_default().push(i);
        types.insert(&r.device_id, r.device_type);
    }
    let mut peers: BTreeMap<DeviceType, Vec<&str>> = BTreeMap::new();
    for (&d, &t) in &types {
        peers.entry(t).or_default().push(d);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut remaining: Vec<u64> = records.iter().map(|r| r.count).collect();
    let mut moved: Vec<BrowsingRecord> = Vec::new();
    for (&device, rows) in &by_device {
        let total: u64 = rows.iter().map(|&i| records[i].count).sum();
        let budget = ((y * total as f64) + 0.5).floor().min(total as f64) as u64;
        if budget == 0 {
            continue;
        }
        let t = types[device];
        let others = &peers[&t];
        if others.len() < 2 {
            return Err(Error::LoneDeviceType(t.as_str().to_string()));
        }
        let own = others.binary_search(&device).expect("device is among its peers");
        let mut cumulative = Vec::with_capacity(rows.len());
        let mut acc = 0u64;
        for &i in rows {
            acc += records[i].count;
            cumulative.push(acc);
        }
        let mut units = sample(&mut rng, total as usize, budget as usize).into_vec();
        units.sort_unstable();
        for u in units {
            let slot = cumulative.partition_point(|&c| c <= u as u64);
            let row = rows[slot];
            remaining[row] -= 1;
            let mut target = rng.gen_range(0..others.len() - 1);
            if target >= own {
                target += 1;
            }
            moved.push(BrowsingRecord::new(others[target], records[row].attribute.clone(), 1).with_type(t));
        }
    }
    let kept = records
        .iter()
        .zip(&remaining)
        .filter(|(_, &c)| c > 0)
        .map(|(r, &c)| BrowsingRecord { count: c, ..r.clone() });
    Ok(aggregate(kept.chain(moved)))
}

/// Attach `⌊x_ip · #IPs⌋` random IPs each to `⌊device_fraction · n⌋`
/// random devices with unit weight. Existing edges are left alone.
pub fn share_ips(g: &BipartiteGraph, x_ip: f64, device_fraction: f64, seed: u64) -> Result<BipartiteGraph> {
    check_fraction("shared_ip_fraction", x_ip)?;
    check_fraction("shared_ip_device_fraction", device_fraction)?;
    let mut out = g.clone();
    let ips = g.attribute_nodes(AttributeKind::Ip);
    let n_ips = (x_ip * ips.len() as f64).floor() as usize;
    let n_devices = (device_fraction * g.device_count() as f64).floor() as usize;
    if n_ips == 0 || n_devices == 0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = sample(&mut rng, ips.len(), n_ips).into_vec();
    chosen.sort_unstable();
    for i in chosen {
        let mut devices = sample(&mut rng, g.device_count(), n_devices).into_vec();
        devices.sort_unstable();
        for d in devices {
            out.insert_edge(g.device_node(d), ips[i], 1.0);
        }
    }
    Ok(out)
}

/// Remove every edge of `⌊x_dom · #domains⌋` random domains.
pub fn drop_referers(g: &BipartiteGraph, x_dom: f64, seed: u64) -> Result<BipartiteGraph> {
    check_fraction("dropped_domain_fraction", x_dom)?;
    let mut out = g.clone();
    let domains = g.attribute_nodes(AttributeKind::Domain);
    let n = (x_dom * domains.len() as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in sample(&mut rng, domains.len(), n) {
        out.remove_attribute_edges(domains[i]);
    }
    Ok(out)
}

/// Add `⌊ratio · |E|⌋` unit-weight edges between device-IP pairs that are
/// not yet connected, sampled uniformly.
pub fn inject_fake_edges(g: &BipartiteGraph, ratio: f64, seed: u64) -> Result<BipartiteGraph> {
    if !(ratio >= 0.0) {
        return Err(Error::InvalidConfig(format!("fake edge ratio {ratio} must be non-negative")));
    }
    let mut out = g.clone();
    let requested = (ratio * g.edge_count() as f64).floor() as usize;
    if requested == 0 {
        return Ok(out);
    }
    let ips = g.attribute_nodes(AttributeKind::Ip);
    let n_dev = g.device_count();
    let existing: usize = ips.iter().map(|&ip| g.neighbors(ip).len()).sum();
    let available = n_dev * ips.len() - existing;
    if requested > available {
        return Err(Error::GraphTooDense { requested, available });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pair = |k: usize| (g.device_node(k / ips.len()), ips[k % ips.len()]);
    if requested * 2 <= available {
        let mut taken: HashSet<usize> = HashSet::with_capacity(requested);
        let mut added = 0;
        while added < requested {
            let k = rng.gen_range(0..n_dev * ips.len());
            let (d, ip) = pair(k);
            if taken.insert(k) && !g.has_edge(d, ip) {
                out.insert_edge(d, ip, 1.0);
                added += 1;
            }
        }
    } else {
        let free: Vec<usize> = (0..n_dev * ips.len())
            .filter(|&k| {
                let (d, ip) = pair(k);
                !g.has_edge(d, ip)
            })
            .collect();
        let mut picks = sample(&mut rng, free.len(), requested).into_vec();
        picks.sort_unstable();
        for i in picks {
            let (d, ip) = pair(free[i]);
            out.insert_edge(d, ip, 1.0);
        }
    }
    Ok(out)
}
