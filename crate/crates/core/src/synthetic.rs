//! Seeded synthetic browsing data with known device ownership.
//!
//! Every user has a home IP that all of their devices use, a few more
//! private IPs, and a personal set of domains drawn from one interest
//! cluster. On top of that, devices visit popular domains that everyone
//! visits and, when `shared_ip_fraction > 0`, hub IPs that many users go
//! through (NAT, public wifi). Hub and popular visits are heavy so that
//! degree-blind similarity has something to trip over.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{aggregate, BrowsingRecord, DeviceType, GroundTruth};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub n_users: usize,
    /// `(devices per user, relative weight)`.
    pub device_count_weights: Vec<(usize, f64)>,
    /// Private IPs per user, home IP included.
    pub ip_pool_per_user: usize,
    /// Share of a device's IPs that are hub IPs shared across users.
    pub shared_ip_fraction: f64,
    /// Users per hub IP, on average.
    pub users_per_hub: usize,
    pub domain_cluster_count: usize,
    pub domains_per_cluster: usize,
    /// Size of a user's personal domain set.
    pub domains_per_user: usize,
    /// Personal domains each device visits.
    pub domains_per_device: usize,
    pub popular_domain_count: usize,
    /// Popular domains each device visits.
    pub popular_per_device: usize,
    /// Inclusive range of visits per private (device, attribute) pair.
    pub visits: (u64, u64),
    /// Inclusive range of visits per hub IP or popular domain.
    pub heavy_visits: (u64, u64),
    /// Alternate mobile and desktop within a user; otherwise all unknown.
    pub typed: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 0,
            n_users: 200,
            device_count_weights: vec![(2, 1.0)],
            ip_pool_per_user: 3,
            shared_ip_fraction: 0.0,
            users_per_hub: 20,
            domain_cluster_count: 10,
            domains_per_cluster: 40,
            domains_per_user: 8,
            domains_per_device: 5,
            popular_domain_count: 20,
            popular_per_device: 4,
            visits: (1, 20),
            heavy_visits: (20, 60),
            typed: true,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.device_count_weights.is_empty()
            || self.device_count_weights.iter().any(|&(n, w)| n == 0 || !(w >= 0.0))
            || !self.device_count_weights.iter().any(|&(_, w)| w > 0.0)
        {
            return bad("device_count_weights needs positive sizes and at least one positive weight".into());
        }
        if self.ip_pool_per_user == 0 {
            return bad("ip_pool_per_user must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.shared_ip_fraction) {
            return bad(format!("shared_ip_fraction {} is outside [0, 1)", self.shared_ip_fraction));
        }
        if self.shared_ip_fraction > 0.0 && self.users_per_hub == 0 {
            return bad("users_per_hub must be at least 1".into());
        }
        if self.domains_per_user > self.domains_per_cluster {
            return bad("domains_per_user exceeds domains_per_cluster".into());
        }
        if self.domains_per_user > 0 && self.domain_cluster_count == 0 {
            return bad("personal domains need at least one cluster".into());
        }
        if self.domains_per_device > self.domains_per_user {
            return bad("domains_per_device exceeds domains_per_user".into());
        }
        if self.popular_per_device > self.popular_domain_count {
            return bad("popular_per_device exceeds popular_domain_count".into());
        }
        for (name, (lo, hi)) in [("visits", self.visits), ("heavy_visits", self.heavy_visits)] {
            if lo == 0 || lo > hi {
                return bad(format!("{name} range ({lo}, {hi}) must satisfy 1 <= lo <= hi"));
            }
        }
        Ok(())
    }

    /// Hub IPs each device visits on top of its private ones.
    fn hubs_per_device(&self, private: usize) -> usize {
        let x = self.shared_ip_fraction;
        if x == 0.0 {
            0
        } else {
            ((x * private as f64 / (1.0 - x)).round() as usize).max(1)
        }
    }
}

fn address(a: u8, i: usize) -> String {
    format!("{a}.{}.{}.{}", (i >> 16) & 255, (i >> 8) & 255, i & 255)
}

fn pick_device_count(rng: &mut ChaCha8Rng, weights: &[(usize, f64)]) -> usize {
    let total: f64 = weights.iter().map(|w| w.1).sum();
    let mut x = rng.gen::<f64>() * total;
    for &(n, w) in weights {
        if x < w {
            return n;
        }
        x -= w;
    }
    weights.iter().rev().find(|w| w.1 > 0.0).expect("validated").0
}

/// Records and the true device owners. Same config, same output.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<(Vec<BrowsingRecord>, GroundTruth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_hubs = if cfg.shared_ip_fraction > 0.0 {
        cfg.n_users.div_ceil(cfg.users_per_hub).max(1)
    } else {
        0
    };
    let mut records = Vec::new();
    let mut truth = GroundTruth::new();
    for u in 0..cfg.n_users {
        let user = format!("u{u:05}");
        let n_devices = pick_device_count(&mut rng, &cfg.device_count_weights);
        let private: Vec<String> = (0..cfg.ip_pool_per_user)
            .map(|j| address(10, u * cfg.ip_pool_per_user + j))
            .collect();
        let cluster = if cfg.domain_cluster_count > 0 {
            rng.gen_range(0..cfg.domain_cluster_count)
        } else {
            0
        };
        let personal: Vec<String> = sample(&mut rng, cfg.domains_per_cluster, cfg.domains_per_user)
            .into_iter()
            .map(|j| format!("c{cluster}-{j}.example"))
            .collect();
        // a user's devices go through the same hubs
        let n_user_hubs = cfg.hubs_per_device(cfg.ip_pool_per_user).min(n_hubs);
        let hubs: Vec<String> = sample(&mut rng, n_hubs, n_user_hubs)
            .into_iter()
            .map(|h| address(100, h))
            .collect();

        for i in 0..n_devices {
            let device = format!("{user}_d{i}");
            let device_type = match (cfg.typed, i % 2) {
                (false, _) => DeviceType::Unknown,
                (true, 0) => DeviceType::Mobile,
                (true, _) => DeviceType::Desktop,
            };
            truth.insert(device.clone(), user.clone());
            let mut push = |rec: BrowsingRecord| records.push(rec.with_type(device_type));

            push(BrowsingRecord::ip(&device, &private[0], rng.gen_range(cfg.visits.0..=cfg.visits.1)));
            if private.len() > 1 {
                let extra = rng.gen_range(1..private.len());
                for j in sample(&mut rng, private.len() - 1, extra) {
                    push(BrowsingRecord::ip(&device, &private[j + 1], rng.gen_range(cfg.visits.0..=cfg.visits.1)));
                }
            }
            for h in &hubs {
                push(BrowsingRecord::ip(&device, h, rng.gen_range(cfg.heavy_visits.0..=cfg.heavy_visits.1)));
            }
            let mine: Vec<&String> = personal.choose_multiple(&mut rng, cfg.domains_per_device).collect();
            for d in mine {
                push(BrowsingRecord::domain(&device, d, rng.gen_range(cfg.visits.0..=cfg.visits.1)));
            }
            for j in sample(&mut rng, cfg.popular_domain_count, cfg.popular_per_device) {
                push(BrowsingRecord::domain(
                    &device,
                    format!("popular{j}.example"),
                    rng.gen_range(cfg.heavy_visits.0..=cfg.heavy_visits.1),
                ));
            }
        }
    }
    Ok((aggregate(records), truth))
}
