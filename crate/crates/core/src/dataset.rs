//! Entities, preference records and the two kinds of preference datasets.
//!
//! Entities live in one shared [`EntityPool`]; records refer to them by
//! [`EntityId`], so the value-system dataset and the grounding dataset can
//! talk about the same routes without copying feature vectors around.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A decision alternative described by its feature vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entity<S> {
    pub features: Vec<S>,
}

impl<S: Scalar> Entity<S> {
    pub fn new(features: Vec<S>) -> Self {
        Self { features }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub u32);

impl EntityId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Row-major storage of entity features with a fixed dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityPool<S> {
    dim: usize,
    data: Vec<S>,
}

impl<S: Scalar> EntityPool<S> {
    pub fn new(dim: usize) -> Self {
        Self { dim, data: Vec::new() }
    }

    pub fn push(&mut self, features: &[S]) -> Result<EntityId> {
        if features.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: features.len(),
            });
        }
        let id = EntityId(u32::try_from(self.len()).map_err(|_| Error::Data("too many entities".into()))?);
        self.data.extend_from_slice(features);
        Ok(id)
    }

    #[inline]
    pub fn features(&self, id: EntityId) -> &[S] {
        let start = id.index() * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn entity(&self, id: EntityId) -> Entity<S> {
        Entity::new(self.features(id).to_vec())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[S]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn contains(&self, id: EntityId) -> bool {
        id.index() < self.len()
    }
}

/// Preference label of a pair: left preferred (1), indifferent (0.5), right
/// preferred (0).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Left,
    Tie,
    Right,
}

impl Label {
    #[inline]
    pub fn value<S: Scalar>(self) -> S {
        match self {
            Label::Left => S::one(),
            Label::Tie => S::half(),
            Label::Right => S::zero(),
        }
    }

    /// Parses one of the three admissible numeric labels exactly.
    pub fn from_value(y: f64) -> Result<Self> {
        if y == 1.0 {
            Ok(Label::Left)
        } else if y == 0.5 {
            Ok(Label::Tie)
        } else if y == 0.0 {
            Ok(Label::Right)
        } else {
            Err(Error::Data(format!("label {y} is not one of 0, 0.5, 1")))
        }
    }

    /// Label for "higher score is preferred".
    pub fn from_scores<S: Scalar>(left: S, right: S) -> Self {
        match left.partial_cmp(&right) {
            Some(Ordering::Greater) => Label::Left,
            Some(Ordering::Less) => Label::Right,
            _ => Label::Tie,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Left => Label::Right,
            Label::Right => Label::Left,
            Label::Tie => Label::Tie,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub left: EntityId,
    pub right: EntityId,
    pub label: Label,
}

impl PreferenceRecord {
    pub fn new(left: EntityId, right: EntityId, label: Label) -> Self {
        Self { left, right, label }
    }
}

/// Opaque agent identifier. Ordering is numeric when both ids are integers,
/// lexicographic otherwise, so "ascending agent id" matches the source file
/// for the usual numeric ids.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub String);

impl AgentId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl Ord for AgentId {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self.0.parse::<i64>(), other.0.parse::<i64>()) {
            (Ok(a), Ok(b)) => a.cmp(&b).then_with(|| self.0.cmp(&other.0)),
            _ => self.0.cmp(&other.0),
        }
    }
}

impl PartialOrd for AgentId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AgentId {
    fn from(s: &str) -> Self {
        AgentId::new(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentDataset {
    pub agent_id: AgentId,
    pub records: Vec<PreferenceRecord>,
}

impl AgentDataset {
    pub fn new(agent_id: impl Into<AgentId>, records: Vec<PreferenceRecord>) -> Self {
        Self {
            agent_id: agent_id.into(),
            records,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl From<String> for AgentId {
    fn from(s: String) -> Self {
        AgentId(s)
    }
}

/// Sorts by agent id, drops agents with no records (with a warning) and
/// rejects duplicates.
fn normalize_agents(mut agents: Vec<AgentDataset>, what: &str) -> Result<Vec<AgentDataset>> {
    agents.retain(|a| {
        if a.is_empty() {
            log::warn!("{what}: agent {} has no records and is excluded", a.agent_id);
            false
        } else {
            true
        }
    });
    agents.sort_by(|a, b| a.agent_id.cmp(&b.agent_id));
    for pair in agents.windows(2) {
        if pair[0].agent_id == pair[1].agent_id {
            return Err(Error::Data(format!("{what}: duplicate agent id {}", pair[0].agent_id)));
        }
    }
    Ok(agents)
}

/// Value-system preferences of every agent of the society, in ascending
/// agent-id order. Agent indices used elsewhere (assignments) refer to this
/// order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValueSystemDataset {
    agents: Vec<AgentDataset>,
}

impl ValueSystemDataset {
    pub fn new(agents: Vec<AgentDataset>) -> Result<Self> {
        Ok(Self {
            agents: normalize_agents(agents, "value-system dataset")?,
        })
    }

    pub fn agents(&self) -> &[AgentDataset] {
        &self.agents
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn record_count(&self) -> usize {
        self.agents.iter().map(AgentDataset::len).sum()
    }

    pub fn agent_ids(&self) -> Vec<AgentId> {
        self.agents.iter().map(|a| a.agent_id.clone()).collect()
    }
}

/// Per-value alignment preferences; `per_value[i]` holds the agents that
/// stated at least one preference for value `i` (zero-based).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundingDataset {
    per_value: Vec<Vec<AgentDataset>>,
}

impl GroundingDataset {
    pub fn new(per_value: Vec<Vec<AgentDataset>>) -> Result<Self> {
        let per_value = per_value
            .into_iter()
            .enumerate()
            .map(|(i, agents)| normalize_agents(agents, &format!("grounding dataset, value {}", i + 1)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { per_value })
    }

    pub fn value_count(&self) -> usize {
        self.per_value.len()
    }

    pub fn value(&self, index: usize) -> &[AgentDataset] {
        &self.per_value[index]
    }

    pub fn per_value(&self) -> &[Vec<AgentDataset>] {
        &self.per_value
    }

    pub fn record_counts(&self) -> Vec<usize> {
        self.per_value
            .iter()
            .map(|agents| agents.iter().map(AgentDataset::len).sum())
            .collect()
    }
}

/// Agent-level context features, used only for post-hoc cluster analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentContext {
    pub agent_id: AgentId,
    pub household_income: f64,
    pub car_available: bool,
    pub commuting: bool,
    pub shopping: bool,
    pub business: bool,
    pub leisure: bool,
}

impl AgentContext {
    pub const FEATURE_NAMES: [&'static str; 6] = ["income", "car", "commuting", "shopping", "business", "leisure"];

    /// Checks that exactly one trip purpose is set.
    pub fn validate(&self) -> Result<()> {
        let purposes = [self.commuting, self.shopping, self.business, self.leisure];
        let set = purposes.iter().filter(|p| **p).count();
        if set != 1 {
            return Err(Error::Data(format!(
                "agent {}: exactly one trip purpose must be set, found {set}",
                self.agent_id
            )));
        }
        Ok(())
    }

    pub fn feature_vector(&self) -> [f64; 6] {
        let b = |x: bool| if x { 1.0 } else { 0.0 };
        [
            self.household_income,
            b(self.car_available),
            b(self.commuting),
            b(self.shopping),
            b(self.business),
            b(self.leisure),
        ]
    }
}

/// Everything the trainer needs: the entity pool, both datasets and the
/// value names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Society<S> {
    pub entities: EntityPool<S>,
    pub vs: ValueSystemDataset,
    pub grounding: GroundingDataset,
    pub value_names: Vec<String>,
}

impl<S: Scalar> Society<S> {
    pub fn new(
        entities: EntityPool<S>,
        vs: ValueSystemDataset,
        grounding: GroundingDataset,
        value_names: Vec<String>,
    ) -> Result<Self> {
        if value_names.len() != grounding.value_count() {
            return Err(Error::Data(format!(
                "{} value names for {} grounding values",
                value_names.len(),
                grounding.value_count()
            )));
        }
        let check = |agents: &[AgentDataset]| -> Result<()> {
            for agent in agents {
                for r in &agent.records {
                    if !entities.contains(r.left) || !entities.contains(r.right) {
                        return Err(Error::Data(format!(
                            "agent {} references an entity outside the pool",
                            agent.agent_id
                        )));
                    }
                }
            }
            Ok(())
        };
        check(vs.agents())?;
        for agents in grounding.per_value() {
            check(agents)?;
        }
        Ok(Self {
            entities,
            vs,
            grounding,
            value_names,
        })
    }

    pub fn value_count(&self) -> usize {
        self.value_names.len()
    }

    pub fn agent_count(&self) -> usize {
        self.vs.len()
    }

    pub fn summary(&self) -> DatasetSummary {
        let ids: BTreeSet<&AgentId> = self.vs.agents().iter().map(|a| &a.agent_id).collect();
        DatasetSummary {
            agents: ids.len(),
            entities: self.entities.len(),
            value_system_records: self.vs.record_count(),
            grounding_records: self
                .value_names
                .iter()
                .cloned()
                .zip(self.grounding.record_counts())
                .collect(),
            excluded_fraction: Vec::new(),
        }
    }
}

/// Dataset summary emitted as JSON by the CLI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub agents: usize,
    pub entities: usize,
    pub value_system_records: usize,
    pub grounding_records: Vec<(String, usize)>,
    /// Fraction of source pairs excluded per value (only rule-derived values
    /// can exclude pairs).
    pub excluded_fraction: Vec<(String, f64)>,
}
