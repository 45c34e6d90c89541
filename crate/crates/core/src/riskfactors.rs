//! Risk-factor ranking from fitted weights, at task, cluster and population
//! level, plus the plurality vote that merges several single-task rankings.
//!
//! A feature's score within a task is its absolute weight. All ties are
//! broken by ascending feature index so every report is deterministic.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::mtl_l21::WeightMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFactor {
    pub feature: String,
    pub feature_index: usize,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRanking {
    pub task: String,
    pub factors: Vec<RankedFactor>,
}

impl TaskRanking {
    pub fn feature_names(&self) -> Vec<String> {
        self.factors.iter().map(|f| f.feature.clone()).collect()
    }
}

/// A feature and the number of tasks whose top list contains it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedFactor {
    pub feature: String,
    pub feature_index: usize,
    pub share_count: usize,
}

/// Features whose top-list occurrences span exactly `clusters`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterGroup {
    pub clusters: Vec<usize>,
    pub features: Vec<String>,
}

fn feature_lookup(names: &[String]) -> HashMap<&str, usize> {
    names.iter().enumerate().map(|(j, n)| (n.as_str(), j)).collect()
}

/// Top `top_k` features of one task by `|φ_tj|`, ties by feature index.
pub fn rank_task_rfs(
    weights: &WeightMatrix,
    feature_names: &[String],
    task_index: usize,
    top_k: usize,
) -> Result<Vec<RankedFactor>> {
    let j = weights.n_features();
    if feature_names.len() != j {
        return Err(Error::dims("feature names", j, feature_names.len()));
    }
    if task_index >= weights.n_tasks() {
        return Err(Error::Index {
            what: "tasks",
            index: task_index,
            len: weights.n_tasks(),
        });
    }
    if top_k < 1 || top_k > j {
        return Err(Error::param("top_k", format!("{top_k} is not in 1..={j}")));
    }
    let row = weights.task_row(task_index);
    let mut order: Vec<usize> = (0..j).collect();
    order.sort_by(|&a, &b| row[b].abs().total_cmp(&row[a].abs()).then(a.cmp(&b)));
    Ok(order
        .into_iter()
        .take(top_k)
        .enumerate()
        .map(|(i, f)| RankedFactor {
            feature: feature_names[f].clone(),
            feature_index: f,
            score: row[f].abs(),
            rank: i + 1,
        })
        .collect())
}

fn resolve_lists(lists: &[Vec<String>], feature_names: &[String]) -> Result<Vec<BTreeSet<usize>>> {
    let lookup = feature_lookup(feature_names);
    lists
        .iter()
        .map(|list| {
            list.iter()
                .map(|name| {
                    lookup
                        .get(name.as_str())
                        .copied()
                        .ok_or_else(|| Error::UnknownFeature(name.clone()))
                })
                .collect()
        })
        .collect()
}

/// Counts, for each feature, how many task lists contain it. Sorted by count
/// descending, then feature index.
pub fn aggregate_population(
    per_task_top: &[Vec<String>],
    feature_names: &[String],
) -> Result<Vec<SharedFactor>> {
    let sets = resolve_lists(per_task_top, feature_names)?;
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for set in &sets {
        for &f in set {
            *counts.entry(f).or_default() += 1;
        }
    }
    let mut shared: Vec<SharedFactor> = counts
        .into_iter()
        .map(|(f, c)| SharedFactor {
            feature: feature_names[f].clone(),
            feature_index: f,
            share_count: c,
        })
        .collect();
    shared.sort_by(|a, b| {
        b.share_count
            .cmp(&a.share_count)
            .then(a.feature_index.cmp(&b.feature_index))
    });
    Ok(shared)
}

/// Groups features by the set of clusters in which at least one member task
/// lists them. Groups are ordered by set size descending, then by the sorted
/// cluster ids; features within a group by index.
pub fn aggregate_cluster_level(
    per_task_top: &[Vec<String>],
    assignments: &[usize],
    feature_names: &[String],
) -> Result<Vec<ClusterGroup>> {
    if assignments.len() != per_task_top.len() {
        return Err(Error::dims(
            "cluster assignments",
            per_task_top.len(),
            assignments.len(),
        ));
    }
    let sets = resolve_lists(per_task_top, feature_names)?;
    let mut spans: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for (set, &cluster) in sets.iter().zip(assignments) {
        for &f in set {
            spans.entry(f).or_default().insert(cluster);
        }
    }
    let mut groups: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    for (f, clusters) in spans {
        groups
            .entry(clusters.into_iter().collect())
            .or_default()
            .push(f);
    }
    let mut out: Vec<ClusterGroup> = groups
        .into_iter()
        .map(|(clusters, features)| ClusterGroup {
            clusters,
            features: features.into_iter().map(|f| feature_names[f].clone()).collect(),
        })
        .collect();
    out.sort_by(|a, b| {
        b.clusters
            .len()
            .cmp(&a.clusters.len())
            .then_with(|| a.clusters.cmp(&b.clusters))
    });
    Ok(out)
}

/// Merges several rankings (feature indices, best first) into one list by a
/// per-position plurality vote.
///
/// At position `r` every method proposes the feature it ranked `r`-th,
/// skipping features already picked; the most proposed feature wins, ties to
/// the lower index. When every proposal at `r` has been picked already, each
/// method proposes its next unpicked feature instead.
pub fn vote_merge_stl(rankings: &[Vec<usize>], top_k: usize) -> Result<Vec<usize>> {
    if rankings.is_empty() {
        return Err(Error::Empty("no rankings to merge"));
    }
    let universe: BTreeSet<usize> = rankings.iter().flatten().copied().collect();
    let target = top_k.min(universe.len());
    let mut picked: Vec<usize> = Vec::with_capacity(target);
    let mut taken: BTreeSet<usize> = BTreeSet::new();
    let mut position = 0;
    while picked.len() < target {
        let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
        for ranking in rankings {
            if let Some(&f) = ranking.get(position) {
                if !taken.contains(&f) {
                    *votes.entry(f).or_default() += 1;
                }
            }
        }
        if votes.is_empty() {
            for ranking in rankings {
                let next = ranking
                    .iter()
                    .skip(position + 1)
                    .chain(ranking.iter())
                    .find(|f| !taken.contains(f));
                if let Some(&f) = next {
                    *votes.entry(f).or_default() += 1;
                }
            }
        }
        // BTreeMap iterates by ascending index, so `max_by` keeps ties
        // resolved toward the lower index via the reversed comparison
        let winner = votes
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(&f, _)| f)
            .expect("universe not exhausted");
        taken.insert(winner);
        picked.push(winner);
        position += 1;
    }
    Ok(picked)
}

/// Name-based wrapper around [`vote_merge_stl`].
pub fn vote_merge_stl_names(
    rankings: &[Vec<String>],
    feature_names: &[String],
    top_k: usize,
) -> Result<Vec<String>> {
    let lookup = feature_lookup(feature_names);
    let indexed = rankings
        .iter()
        .map(|r| {
            r.iter()
                .map(|n| {
                    lookup
                        .get(n.as_str())
                        .copied()
                        .ok_or_else(|| Error::UnknownFeature(n.clone()))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(vote_merge_stl(&indexed, top_k)?
        .into_iter()
        .map(|f| feature_names[f].clone())
        .collect())
}

/// Which report levels to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Levels {
    pub task: bool,
    pub cluster: bool,
    pub population: bool,
}

impl Default for Levels {
    fn default() -> Self {
        Self {
            task: true,
            cluster: false,
            population: true,
        }
    }
}

impl std::str::FromStr for Levels {
    type Err = Error;

    /// Comma-separated subset of `task,cluster,population`.
    fn from_str(s: &str) -> Result<Self> {
        let mut levels = Levels {
            task: false,
            cluster: false,
            population: false,
        };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "task" => levels.task = true,
                "cluster" => levels.cluster = true,
                "population" => levels.population = true,
                other => {
                    return Err(Error::param(
                        "levels",
                        format!("unknown level `{other}` (expected task, cluster, population)"),
                    ))
                }
            }
        }
        Ok(levels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub top_k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_task: Option<Vec<TaskRanking>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub population: Option<Vec<SharedFactor>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_cluster: Option<Vec<ClusterGroup>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub categories: Option<BTreeMap<String, String>>,
}

impl RiskReport {
    /// Ranks every task, then aggregates the requested levels. `assignments`
    /// is required for the cluster level.
    pub fn build(
        weights: &WeightMatrix,
        feature_names: &[String],
        task_labels: &[String],
        top_k: usize,
        levels: Levels,
        assignments: Option<&[usize]>,
    ) -> Result<RiskReport> {
        if task_labels.len() != weights.n_tasks() {
            return Err(Error::dims("task labels", weights.n_tasks(), task_labels.len()));
        }
        let rankings = task_labels
            .iter()
            .enumerate()
            .map(|(t, label)| {
                Ok(TaskRanking {
                    task: label.clone(),
                    factors: rank_task_rfs(weights, feature_names, t, top_k)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let lists: Vec<Vec<String>> = rankings.iter().map(TaskRanking::feature_names).collect();
        let population = if levels.population {
            Some(aggregate_population(&lists, feature_names)?)
        } else {
            None
        };
        let per_cluster = if levels.cluster {
            let assignments = assignments.ok_or_else(|| {
                Error::param("levels", "cluster level needs cluster assignments (a CMTL model)")
            })?;
            Some(aggregate_cluster_level(&lists, assignments, feature_names)?)
        } else {
            None
        };
        Ok(RiskReport {
            top_k,
            per_task: levels.task.then_some(rankings),
            population,
            per_cluster,
            categories: None,
        })
    }

    /// Attaches a feature → category mapping, restricted to features that
    /// occur in the report.
    pub fn with_categories(mut self, categories: &BTreeMap<String, String>) -> Self {
        let mut used = BTreeSet::new();
        for r in self.per_task.iter().flatten() {
            used.extend(r.factors.iter().map(|f| f.feature.clone()));
        }
        used.extend(self.population.iter().flatten().map(|s| s.feature.clone()));
        for g in self.per_cluster.iter().flatten() {
            used.extend(g.features.iter().cloned());
        }
        self.categories = Some(
            categories
                .iter()
                .filter(|(k, _)| used.contains(*k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        );
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Flat `level,group,rank,feature,value[,category]` table. `value` is the
    /// absolute weight (task), the share count (population) or the number of
    /// clusters spanned (cluster).
    pub fn to_csv(&self) -> Result<String> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let with_cat = self.categories.is_some();
        let mut header = vec!["level", "group", "rank", "feature", "value"];
        if with_cat {
            header.push("category");
        }
        wtr.write_record(&header)?;
        let category = |f: &str| -> String {
            self.categories
                .as_ref()
                .and_then(|c| c.get(f).cloned())
                .unwrap_or_default()
        };
        let mut write = |fields: [String; 5]| -> Result<()> {
            let mut row = fields.to_vec();
            if with_cat {
                row.push(category(&fields[3]));
            }
            wtr.write_record(&row)?;
            Ok(())
        };
        for r in self.per_task.iter().flatten() {
            for f in &r.factors {
                write([
                    "task".into(),
                    r.task.clone(),
                    f.rank.to_string(),
                    f.feature.clone(),
                    f.score.to_string(),
                ])?;
            }
        }
        for (i, s) in self.population.iter().flatten().enumerate() {
            write([
                "population".into(),
                "all".into(),
                (i + 1).to_string(),
                s.feature.clone(),
                s.share_count.to_string(),
            ])?;
        }
        for g in self.per_cluster.iter().flatten() {
            let group = g
                .clusters
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(",");
            for (i, f) in g.features.iter().enumerate() {
                write([
                    "cluster".into(),
                    group.clone(),
                    (i + 1).to_string(),
                    f.clone(),
                    g.clusters.len().to_string(),
                ])?;
            }
        }
        let bytes = wtr
            .into_inner()
            .map_err(|e| Error::io("<report csv>", e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}
