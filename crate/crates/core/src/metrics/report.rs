use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::Assignment;
use crate::dataset::{AgentContext, AgentId};
use crate::error::{Error, Result};

/// Cluster mean of one context feature and its percentage deviation from the
/// society mean (`None` when the society mean is zero).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextCell {
    pub mean: f64,
    pub deviation_pct: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextReport {
    pub feature_names: Vec<String>,
    pub global_means: Vec<f64>,
    /// Keyed by zero-based cluster index, populated clusters only.
    pub clusters: BTreeMap<usize, Vec<ContextCell>>,
}

/// Per-cluster context means and deviations. `agent_ids[j]` names agent `j`
/// of the assignment.
pub fn context_report(
    assignment: &Assignment,
    agent_ids: &[AgentId],
    contexts: &[AgentContext],
) -> Result<ContextReport> {
    if agent_ids.len() != assignment.len() {
        return Err(Error::Data("agent id list does not match the assignment".into()));
    }
    let by_id: BTreeMap<&AgentId, &AgentContext> = contexts.iter().map(|c| (&c.agent_id, c)).collect();
    let rows: Vec<[f64; 6]> = agent_ids
        .iter()
        .map(|id| {
            by_id
                .get(id)
                .map(|c| c.feature_vector())
                .ok_or_else(|| Error::MissingContext(id.clone()))
        })
        .collect::<Result<_>>()?;
    let mean_of = |idx: &[usize]| -> Vec<f64> {
        let mut m = vec![0.0; 6];
        for &j in idx {
            for (k, v) in rows[j].iter().enumerate() {
                m[k] += v;
            }
        }
        m.iter().map(|s| s / idx.len().max(1) as f64).collect()
    };
    let everyone: Vec<usize> = (0..rows.len()).collect();
    let global_means = mean_of(&everyone);
    let mut clusters = BTreeMap::new();
    for l in assignment.populated() {
        let members: Vec<usize> = assignment.members(l).collect();
        let cells = mean_of(&members)
            .into_iter()
            .zip(&global_means)
            .map(|(mean, &global)| ContextCell {
                mean,
                deviation_pct: (global != 0.0).then(|| 100.0 * (mean - global) / global),
            })
            .collect();
        clusters.insert(l, cells);
    }
    Ok(ContextReport {
        feature_names: AgentContext::FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        global_means,
        clusters,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterRow {
    /// One-based cluster label as shown in tables.
    pub cluster: usize,
    pub weights: Vec<f64>,
    pub size: usize,
    pub representativeness: f64,
    pub context: Option<Vec<ContextCell>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TotalRow {
    pub agents: usize,
    pub representativeness: f64,
    pub conciseness: Option<f64>,
    #[serde(with = "crate::metrics::dunn_serde")]
    pub dunn: Option<f64>,
    pub coherence: Vec<f64>,
    pub grounding_coherence: f64,
    pub context_means: Option<Vec<f64>>,
}

/// Per-cluster weights, sizes and representativeness plus society totals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub value_names: Vec<String>,
    pub clusters: Vec<ClusterRow>,
    pub total: TotalRow,
}

fn fmt_opt(x: Option<f64>) -> String {
    match x {
        None => "-".into(),
        Some(v) if v.is_infinite() => "inf".into(),
        Some(v) => format!("{v:.3}"),
    }
}

fn fmt_cell(c: &ContextCell) -> String {
    match c.deviation_pct {
        Some(d) => format!("{:.2} ({:+.1}%)", c.mean, d),
        None => format!("{:.2} (n/a)", c.mean),
    }
}

impl ClusterReport {
    /// Aligned-column text table.
    pub fn to_table(&self) -> String {
        let mut header: Vec<String> = vec![
            "Cl.".into(),
            format!("VS ({})", self.value_names.join(", ")),
            "|C_l|".into(),
            "Repr.".into(),
            "Conc.".into(),
            "Dunn".into(),
        ];
        for name in &self.value_names {
            header.push(format!("Chr {name}"));
        }
        let has_context = self.total.context_means.is_some();
        if has_context {
            header.extend(AgentContext::FEATURE_NAMES.iter().map(|s| s.to_string()));
        }
        let ncols = header.len();
        let mut rows: Vec<Vec<String>> = vec![header];
        for c in &self.clusters {
            let w: Vec<String> = c.weights.iter().map(|x| format!("{x:.2}")).collect();
            let mut row = vec![
                c.cluster.to_string(),
                format!("({})", w.join(", ")),
                c.size.to_string(),
                format!("{:.3}", c.representativeness),
                "-".into(),
                "-".into(),
            ];
            row.extend(self.value_names.iter().map(|_| "-".to_string()));
            if let Some(ctx) = &c.context {
                row.extend(ctx.iter().map(fmt_cell));
            } else if has_context {
                row.extend((0..6).map(|_| "-".to_string()));
            }
            rows.push(row);
        }
        let t = &self.total;
        let mut total = vec![
            "Total".into(),
            "-".into(),
            t.agents.to_string(),
            format!("{:.3}", t.representativeness),
            fmt_opt(t.conciseness),
            fmt_opt(t.dunn),
        ];
        total.extend(t.coherence.iter().map(|c| format!("{c:.3}")));
        if let Some(m) = &t.context_means {
            total.extend(m.iter().map(|x| format!("{x:.2}")));
        }
        rows.push(total);

        let widths: Vec<usize> = (0..ncols)
            .map(|k| {
                rows.iter()
                    .map(|r| r.get(k).map_or(0, |s| s.chars().count()))
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        for (i, row) in rows.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(k, cell)| format!("{cell:>w$}", w = widths[k]))
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
            if i == 0 || i + 2 == rows.len() {
                let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (ncols - 1)));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(id: &str, income: f64, business: bool) -> AgentContext {
        AgentContext {
            agent_id: id.into(),
            household_income: income,
            car_available: false,
            commuting: !business,
            shopping: false,
            business,
            leisure: false,
        }
    }

    #[test]
    fn single_cluster_has_zero_deviation() {
        let ids: Vec<AgentId> = vec!["1".into(), "2".into()];
        let contexts = vec![ctx("1", 80_000.0, true), ctx("2", 40_000.0, false)];
        let r = context_report(&Assignment::single(2, 1), &ids, &contexts).unwrap();
        let cells = &r.clusters[&0];
        assert_eq!(cells[0].deviation_pct, Some(0.0));
        // Car availability is zero for everyone: deviation is undefined.
        assert_eq!(cells[1].deviation_pct, None);
    }

    #[test]
    fn two_clusters_income_deviation() {
        let ids: Vec<AgentId> = vec!["1".into(), "2".into()];
        let contexts = vec![ctx("1", 80_000.0, true), ctx("2", 40_000.0, false)];
        let beta = Assignment::new(vec![0, 1], 2).unwrap();
        let r = context_report(&beta, &ids, &contexts).unwrap();
        assert_eq!(r.global_means[0], 60_000.0);
        assert!((r.clusters[&0][0].deviation_pct.unwrap() - 100.0 / 3.0).abs() < 1e-12);
        assert!((r.clusters[&1][0].deviation_pct.unwrap() + 100.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn missing_context_names_agent() {
        let ids: Vec<AgentId> = vec!["1".into(), "7".into()];
        let contexts = vec![ctx("1", 1.0, true)];
        match context_report(&Assignment::single(2, 1), &ids, &contexts) {
            Err(Error::MissingContext(id)) => assert_eq!(id.as_str(), "7"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn table_renders_every_cluster() {
        let report = ClusterReport {
            value_names: vec!["time".into(), "cost".into()],
            clusters: vec![ClusterRow {
                cluster: 1,
                weights: vec![0.7, 0.3],
                size: 10,
                representativeness: 0.9,
                context: None,
            }],
            total: TotalRow {
                agents: 10,
                representativeness: 0.9,
                conciseness: None,
                dunn: None,
                coherence: vec![1.0, 1.0],
                grounding_coherence: 1.0,
                context_means: None,
            },
        };
        let table = report.to_table();
        assert!(table.contains("(0.70, 0.30)"));
        assert!(table.lines().any(|l| l.trim_start().starts_with("Total")));
    }
}
