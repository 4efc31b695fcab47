//! Ingestion of the two-route choice CSV and construction of the per-value
//! grounding dataset from the time / cost / comfort value definitions.
//!
//! Every choice instance contributes two entities to the pool: its first
//! route at id `2k` and its second route at `2k + 1`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{
    AgentContext, AgentDataset, AgentId, EntityId, EntityPool, GroundingDataset, Label, PreferenceRecord, Society,
    ValueSystemDataset,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const VALUE_NAMES: [&str; 3] = ["time", "cost", "comfort"];

const TIME: usize = 0;
const COST: usize = 1;
const HEADWAY: usize = 2;
const INTERCHANGES: usize = 3;

/// Column names of the context features, in [`AgentContext::FEATURE_NAMES`] order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextColumns {
    pub income: String,
    pub car_available: String,
    pub commuting: String,
    pub shopping: String,
    pub business: String,
    pub leisure: String,
}

impl ContextColumns {
    fn names(&self) -> [&str; 6] {
        [
            &self.income,
            &self.car_available,
            &self.commuting,
            &self.shopping,
            &self.business,
            &self.leisure,
        ]
    }

    pub fn from_list(names: &[String]) -> Result<Self> {
        if names.len() != 6 {
            return Err(Error::config("csv.context", "expected six column names"));
        }
        Ok(Self {
            income: names[0].clone(),
            car_available: names[1].clone(),
            commuting: names[2].clone(),
            shopping: names[3].clone(),
            business: names[4].clone(),
            leisure: names[5].clone(),
        })
    }

    pub fn to_list(&self) -> Vec<String> {
        self.names().iter().map(|s| s.to_string()).collect()
    }
}

/// Mapping from roles to CSV column names.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceSchema {
    pub agent_id: String,
    pub choice: String,
    /// Feature columns of the first route (time, cost, headway, interchanges
    /// for the route-choice data).
    pub route1: Vec<String>,
    pub route2: Vec<String>,
    pub context: Option<ContextColumns>,
}

impl Default for ChoiceSchema {
    fn default() -> Self {
        let s = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        Self {
            agent_id: "ID".into(),
            choice: "choice".into(),
            route1: s(&["tt1", "tc1", "hw1", "ch1"]),
            route2: s(&["tt2", "tc2", "hw2", "ch2"]),
            context: Some(ContextColumns {
                income: "hh_inc_abs".into(),
                car_available: "car_availability".into(),
                commuting: "commute".into(),
                shopping: "shopping".into(),
                business: "business".into(),
                leisure: "leisure".into(),
            }),
        }
    }
}

impl ChoiceSchema {
    /// Generic schema `x{k}_r1` / `x{k}_r2` with no context columns.
    pub fn generic(dim: usize) -> Self {
        Self {
            agent_id: "ID".into(),
            choice: "choice".into(),
            route1: (1..=dim).map(|k| format!("x{k}_r1")).collect(),
            route2: (1..=dim).map(|k| format!("x{k}_r2")).collect(),
            context: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.route1.len()
    }

    fn validate(&self) -> Result<()> {
        if self.route1.is_empty() || self.route1.len() != self.route2.len() {
            return Err(Error::config(
                "csv.route1",
                "route feature column lists must be non-empty and of equal length",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Chosen {
    First,
    Second,
}

/// One row of the choice file with unscaled route features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChoiceInstance {
    pub agent: AgentId,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub chosen: Chosen,
}

impl ChoiceInstance {
    pub fn entity_ids(index: usize) -> (EntityId, EntityId) {
        let k = u32::try_from(index).expect("instance index fits u32");
        (EntityId(2 * k), EntityId(2 * k + 1))
    }
}

/// Per-feature `(min, max)` over the training file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureBounds {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl FeatureBounds {
    pub fn from_instances(instances: &[ChoiceInstance], dim: usize) -> Self {
        let mut min = vec![f64::INFINITY; dim];
        let mut max = vec![f64::NEG_INFINITY; dim];
        for inst in instances {
            for route in [&inst.first, &inst.second] {
                for (k, &x) in route.iter().enumerate() {
                    min[k] = min[k].min(x);
                    max[k] = max[k].max(x);
                }
            }
        }
        Self { min, max }
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// Affine map to `[0, 1]`, clamped; a constant feature maps to 0.
    pub fn scale(&self, features: &[f64]) -> Vec<f64> {
        features
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                let (lo, hi) = (self.min[k], self.max[k]);
                if hi > lo {
                    ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn warn_degenerate(&self) {
        for k in 0..self.dim() {
            if !(self.max[k] > self.min[k]) {
                log::warn!("feature {k} is constant over the file; it is mapped to 0");
            }
        }
    }
}

/// Parsed choice file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChoiceFile {
    pub schema: ChoiceSchema,
    pub instances: Vec<ChoiceInstance>,
    /// One context record per agent, ascending agent id. Empty when the schema
    /// has no context columns.
    pub contexts: Vec<AgentContext>,
    pub bounds: FeatureBounds,
}

pub fn load_choice_csv(path: impl AsRef<Path>, schema: &ChoiceSchema) -> Result<ChoiceFile> {
    read_choice_csv(File::open(path)?, schema)
}

pub fn read_choice_csv<R: Read>(reader: R, schema: &ChoiceSchema) -> Result<ChoiceFile> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let id_col = col(&schema.agent_id)?;
    let choice_col = col(&schema.choice)?;
    let r1: Vec<usize> = schema.route1.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let r2: Vec<usize> = schema.route2.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let ctx_cols: Option<Vec<usize>> = schema
        .context
        .as_ref()
        .map(|c| c.names().iter().map(|n| col(n)).collect::<Result<_>>())
        .transpose()?;

    let mut instances = Vec::new();
    let mut contexts: BTreeMap<AgentId, AgentContext> = BTreeMap::new();
    for (i, record) in rdr.records().enumerate() {
        // Header is row 1.
        let row = i + 2;
        let record = record?;
        let number = |c: usize| -> Result<f64> {
            let cell = record.get(c).unwrap_or("");
            cell.parse::<f64>().map_err(|_| Error::Parse {
                row,
                message: format!("column `{}`: `{cell}` is not a number", &headers[c]),
            })
        };
        let agent = AgentId::new(record.get(id_col).unwrap_or(""));
        if agent.as_str().is_empty() {
            return Err(Error::Parse {
                row,
                message: "empty agent id".into(),
            });
        }
        let chosen = match number(choice_col)? {
            c if c == 1.0 => Chosen::First,
            c if c == 2.0 => Chosen::Second,
            c => {
                return Err(Error::Parse {
                    row,
                    message: format!("choice must be 1 or 2, got {c}"),
                })
            }
        };
        let first = r1.iter().map(|&c| number(c)).collect::<Result<Vec<_>>>()?;
        let second = r2.iter().map(|&c| number(c)).collect::<Result<Vec<_>>>()?;
        if let Some(cols) = &ctx_cols {
            let v = cols.iter().map(|&c| number(c)).collect::<Result<Vec<_>>>()?;
            let ctx = AgentContext {
                agent_id: agent.clone(),
                household_income: v[0],
                car_available: v[1] != 0.0,
                commuting: v[2] != 0.0,
                shopping: v[3] != 0.0,
                business: v[4] != 0.0,
                leisure: v[5] != 0.0,
            };
            ctx.validate().map_err(|e| Error::Parse {
                row,
                message: e.to_string(),
            })?;
            contexts.entry(agent.clone()).or_insert(ctx);
        }
        instances.push(ChoiceInstance {
            agent,
            first,
            second,
            chosen,
        });
    }
    let bounds = FeatureBounds::from_instances(&instances, schema.dim());
    if !instances.is_empty() {
        bounds.warn_degenerate();
    }
    Ok(ChoiceFile {
        schema: schema.clone(),
        instances,
        contexts: contexts.into_values().collect(),
        bounds,
    })
}

/// Writes instances in the schema's layout; floats use shortest round-trip
/// formatting so re-reading reproduces them exactly.
pub fn write_choice_csv<W: Write>(
    writer: W,
    schema: &ChoiceSchema,
    instances: &[ChoiceInstance],
    contexts: &[AgentContext],
) -> Result<()> {
    schema.validate()?;
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec![schema.agent_id.clone(), schema.choice.clone()];
    header.extend(schema.route1.iter().cloned());
    header.extend(schema.route2.iter().cloned());
    if let Some(c) = &schema.context {
        header.extend(c.to_list());
    }
    wtr.write_record(&header)?;
    let by_agent: BTreeMap<&AgentId, &AgentContext> = contexts.iter().map(|c| (&c.agent_id, c)).collect();
    for inst in instances {
        if inst.first.len() != schema.dim() || inst.second.len() != schema.dim() {
            return Err(Error::Dimension {
                expected: schema.dim(),
                got: inst.first.len(),
            });
        }
        let mut row = vec![
            inst.agent.to_string(),
            match inst.chosen {
                Chosen::First => "1".to_string(),
                Chosen::Second => "2".to_string(),
            },
        ];
        row.extend(inst.first.iter().map(|x| x.to_string()));
        row.extend(inst.second.iter().map(|x| x.to_string()));
        if schema.context.is_some() {
            let ctx = by_agent
                .get(&inst.agent)
                .ok_or_else(|| Error::MissingContext(inst.agent.clone()))?;
            row.extend(ctx.feature_vector().iter().map(|x| x.to_string()));
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Builds the scaled entity pool (two entities per instance).
pub fn scale_features<S: Scalar>(instances: &[ChoiceInstance], bounds: &FeatureBounds) -> Result<EntityPool<S>> {
    let mut pool = EntityPool::new(bounds.dim());
    for inst in instances {
        for route in [&inst.first, &inst.second] {
            let scaled: Vec<S> = bounds.scale(route).into_iter().map(S::lit).collect();
            pool.push(&scaled)?;
        }
    }
    Ok(pool)
}

/// Stated choices: the chosen route is always on the left with label 1.
pub fn value_system_dataset(instances: &[ChoiceInstance]) -> Result<ValueSystemDataset> {
    let mut by_agent: BTreeMap<AgentId, Vec<PreferenceRecord>> = BTreeMap::new();
    for (k, inst) in instances.iter().enumerate() {
        let (first, second) = ChoiceInstance::entity_ids(k);
        let record = match inst.chosen {
            Chosen::First => PreferenceRecord::new(first, second, Label::Left),
            Chosen::Second => PreferenceRecord::new(second, first, Label::Left),
        };
        by_agent.entry(inst.agent.clone()).or_default().push(record);
    }
    ValueSystemDataset::new(
        by_agent
            .into_iter()
            .map(|(id, records)| AgentDataset::new(id, records))
            .collect(),
    )
}

/// Lower is better; equal gives a tie.
fn lower_is_better(a: f64, b: f64) -> Label {
    if a < b {
        Label::Left
    } else if a > b {
        Label::Right
    } else {
        Label::Tie
    }
}

/// Comfort: preferred when headway and interchanges are both no worse and at
/// least one is strictly better. Conflicting features give no record.
pub fn comfort_label(first: &[f64], second: &[f64]) -> Option<Label> {
    let (h1, h2) = (first[HEADWAY], second[HEADWAY]);
    let (i1, i2) = (first[INTERCHANGES], second[INTERCHANGES]);
    if h1 == h2 && i1 == i2 {
        Some(Label::Tie)
    } else if h1 <= h2 && i1 <= i2 {
        Some(Label::Left)
    } else if h1 >= h2 && i1 >= i2 {
        Some(Label::Right)
    } else {
        None
    }
}

fn require_route_features(instances: &[ChoiceInstance]) -> Result<()> {
    for inst in instances {
        if inst.first.len() < 4 || inst.second.len() < 4 {
            return Err(Error::Dimension {
                expected: 4,
                got: inst.first.len().min(inst.second.len()),
            });
        }
    }
    Ok(())
}

/// Compares the two routes of every instance under each value definition.
/// Route 1 is always the left entity.
pub fn build_grounding_dataset(instances: &[ChoiceInstance]) -> Result<GroundingDataset> {
    require_route_features(instances)?;
    let mut per_value: Vec<BTreeMap<AgentId, Vec<PreferenceRecord>>> = vec![BTreeMap::new(); 3];
    for (k, inst) in instances.iter().enumerate() {
        let (left, right) = ChoiceInstance::entity_ids(k);
        let labels = [
            Some(lower_is_better(inst.first[TIME], inst.second[TIME])),
            Some(lower_is_better(inst.first[COST], inst.second[COST])),
            comfort_label(&inst.first, &inst.second),
        ];
        for (v, label) in labels.into_iter().enumerate() {
            if let Some(label) = label {
                per_value[v]
                    .entry(inst.agent.clone())
                    .or_default()
                    .push(PreferenceRecord::new(left, right, label));
            }
        }
    }
    GroundingDataset::new(
        per_value
            .into_iter()
            .map(|m| m.into_iter().map(|(id, r)| AgentDataset::new(id, r)).collect())
            .collect(),
    )
}

/// Fraction of instances whose routes conflict on headway vs interchanges.
pub fn comfort_exclusion_fraction(instances: &[ChoiceInstance]) -> f64 {
    if instances.is_empty() {
        return 0.0;
    }
    let excluded = instances
        .iter()
        .filter(|i| comfort_label(&i.first, &i.second).is_none())
        .count();
    excluded as f64 / instances.len() as f64
}

impl ChoiceFile {
    pub fn to_society<S: Scalar>(&self) -> Result<Society<S>> {
        let entities = scale_features(&self.instances, &self.bounds)?;
        let vs = value_system_dataset(&self.instances)?;
        let grounding = build_grounding_dataset(&self.instances)?;
        Society::new(
            entities,
            vs,
            grounding,
            VALUE_NAMES.iter().map(|s| s.to_string()).collect(),
        )
    }

    pub fn summary<S: Scalar>(&self, society: &Society<S>) -> crate::dataset::DatasetSummary {
        let mut summary = society.summary();
        summary.excluded_fraction = vec![
            ("time".into(), 0.0),
            ("cost".into(), 0.0),
            ("comfort".into(), comfort_exclusion_fraction(&self.instances)),
        ];
        summary
    }
}
