use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::similarity::SimilarityGraph;
use crate::error::{Error, Result};

/// Disjoint device groups plus the devices predicted to have no sibling.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Prediction {
    /// Each group sorted, groups sorted by first member.
    pub groups: Vec<Vec<String>>,
    pub no_match: BTreeSet<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PredictionLine {
    Group { group_id: usize, device_ids: Vec<String> },
    NoMatch { device_id: String, no_match: bool },
}

impl Prediction {
    pub fn from_parts(mut groups: Vec<Vec<String>>, no_match: BTreeSet<String>) -> Self {
        for g in &mut groups {
            g.sort();
        }
        groups.sort();
        Prediction { groups, no_match }
    }

    pub fn device_count(&self) -> usize {
        self.groups.iter().map(Vec::len).sum::<usize>() + self.no_match.len()
    }

    pub fn devices(&self) -> impl Iterator<Item = &str> {
        self.groups
            .iter()
            .flatten()
            .chain(self.no_match.iter())
            .map(String::as_str)
    }

    /// The group holding `device`, if any.
    pub fn group_of(&self, device: &str) -> Option<&[String]> {
        self.groups
            .iter()
            .find(|g| g.iter().any(|d| d == device))
            .map(Vec::as_slice)
    }

    /// Keep groups that touch `keep` (unchanged) and the no-match devices
    /// inside `keep`.
    pub fn restrict_to(&self, keep: &BTreeSet<String>) -> Prediction {
        Prediction {
            groups: self
                .groups
                .iter()
                .filter(|g| g.iter().any(|d| keep.contains(d)))
                .cloned()
                .collect(),
            no_match: self.no_match.intersection(keep).cloned().collect(),
        }
    }

    pub fn write_jsonl<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = BufWriter::new(writer);
        for (group_id, g) in self.groups.iter().enumerate() {
            serde_json::to_writer(
                &mut w,
                &PredictionLine::Group {
                    group_id,
                    device_ids: g.clone(),
                },
            )?;
            w.write_all(b"\n")?;
        }
        for d in &self.no_match {
            serde_json::to_writer(
                &mut w,
                &PredictionLine::NoMatch {
                    device_id: d.clone(),
                    no_match: true,
                },
            )?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_jsonl(File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut groups = Vec::new();
        let mut no_match = BTreeSet::new();
        for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: PredictionLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            match parsed {
                PredictionLine::Group { device_ids, .. } => groups.push(device_ids),
                PredictionLine::NoMatch { device_id, .. } => {
                    no_match.insert(device_id);
                }
            }
        }
        Ok(Prediction::from_parts(groups, no_match))
    }
}

/// All maximal cliques with at least two members, each sorted.
///
/// Bron–Kerbosch with pivoting, one connected neighborhood at a time.
pub fn maximal_cliques(sg: &SimilarityGraph) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    // each clique is reported from the search rooted at its smallest member
    for v in 0..sg.len() {
        if sg.degree(v) == 0 {
            continue;
        }
        let p: Vec<usize> = sg.neighbors(v).range(v + 1..).copied().collect();
        let x: Vec<usize> = sg.neighbors(v).range(..v).copied().collect();
        let mut r = vec![v];
        bron_kerbosch(sg, &mut r, p, x, &mut out);
    }
    for c in &mut out {
        c.sort_unstable();
    }
    out
}

fn bron_kerbosch(sg: &SimilarityGraph, r: &mut Vec<usize>, mut p: Vec<usize>, mut x: Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if p.is_empty() {
        if x.is_empty() && r.len() >= 2 {
            out.push(r.clone());
        }
        return;
    }
    let pivot = p
        .iter()
        .chain(&x)
        .copied()
        .max_by_key(|&u| p.iter().filter(|&&w| sg.has_edge(u, w)).count())
        .expect("p is non-empty");
    let branch: Vec<usize> = p.iter().copied().filter(|&w| !sg.has_edge(pivot, w)).collect();
    for v in branch {
        let nv = sg.neighbors(v);
        let p_next = p.iter().copied().filter(|w| nv.contains(w)).collect();
        let x_next = x.iter().copied().filter(|w| nv.contains(w)).collect();
        r.push(v);
        bron_kerbosch(sg, r, p_next, x_next, out);
        r.pop();
        p.retain(|&w| w != v);
        x.push(v);
    }
}

/// Turn a similarity graph into disjoint groups.
///
/// Maximal cliques are taken largest first; equal sizes are ordered by a
/// shuffle seeded with `rng_seed`. Each clique claims its members that no
/// earlier clique claimed, and becomes a group if at least two remain.
/// Devices left unclaimed are no-match.
pub fn assign_groups(sg: &SimilarityGraph, rng_seed: u64) -> Prediction {
    let mut cliques = maximal_cliques(sg);
    cliques.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut start = 0;
    while start < cliques.len() {
        let size = cliques[start].len();
        let end = start + cliques[start..].iter().take_while(|c| c.len() == size).count();
        cliques[start..end].shuffle(&mut rng);
        start = end;
    }

    let mut claimed = vec![false; sg.len()];
    let mut groups = Vec::new();
    for c in &cliques {
        let rest: Vec<usize> = c.iter().copied().filter(|&v| !claimed[v]).collect();
        if rest.len() >= 2 {
            for &v in &rest {
                claimed[v] = true;
            }
            groups.push(rest.iter().map(|&v| sg.ids()[v].clone()).collect());
        }
    }
    let no_match = (0..sg.len())
        .filter(|&v| !claimed[v])
        .map(|v| sg.ids()[v].clone())
        .collect();
    Prediction::from_parts(groups, no_match)
}
