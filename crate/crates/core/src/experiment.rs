//! Experiment configuration, built-in hyperparameter profiles, commands and
//! result bundles.
//!
//! Configuration is a flat `key = value` file. A base profile is chosen by the
//! `profile` and `lmax` keys (last occurrence wins); every other key then
//! overrides the profile in order, so command-line overrides appended after
//! the file take precedence.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{AgentContext, Society};
use crate::emtrain::{self, run_em, write_epoch_csv, LagrangeState, TrainConfig, TrainState};
use crate::error::{Error, Result};
use crate::evolution::{run_search, write_step_csv, CandidateSolution, SearchConfig, SolutionMemory};
use crate::metrics::{self, Assignment};
use crate::metrics::{context_report, ClusterReport, ClusterRow, TotalRow};
use crate::netcore::{init_parameters, softmax_weights, Architecture, ModelParameters, ModelTape};
use crate::rng::SeedTree;
use crate::route_choice::{load_choice_csv, ChoiceSchema, ContextColumns};
use crate::synthlab::{
    baseline_flat_bt, baseline_sequential, export_choice_csv, generate_society, FlatBtConfig, SequentialConfig,
    SyntheticSpec,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Profile {
    /// Hyperparameter table of the route-choice experiments.
    Reference,
    /// Faster rates for plain gradient descent on planted societies.
    Synthetic,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Reference => "reference",
            Profile::Synthetic => "synthetic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "reference" => Ok(Profile::Reference),
            "synthetic" => Ok(Profile::Synthetic),
            other => Err(Error::config("profile", format!("unknown profile `{other}`"))),
        }
    }
}

/// Cluster counts with a row in the reference hyperparameter table.
pub const REFERENCE_LMAX: [usize; 8] = [1, 2, 3, 4, 5, 6, 9, 12];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub lmax: usize,
    pub alpha_theta: f64,
    pub alpha_omega: f64,
    pub alpha_lambda: f64,
    pub gamma_lambda: f64,
    /// EM epochs per refinement (R).
    pub epochs: usize,
    pub b0: usize,
    pub br: usize,
    pub lagrange_ascent: bool,
    /// Search steps (T).
    pub steps: usize,
    /// Memory size (N).
    pub memory: usize,
    pub epsilon0: f64,
    pub p_m: f64,
    pub s_m: f64,
    /// One multiplier for every value, or a single value broadcast to all.
    pub lambda0: Vec<f64>,
    pub init_scale: f64,
    pub coherence_tolerance: f64,
    pub seeds: Vec<u64>,
    /// Choice CSV; the synthetic spec is used when absent.
    pub dataset: Option<PathBuf>,
    pub schema: ChoiceSchema,
    pub synthetic: SyntheticSpec,
    pub flat_steps: usize,
    pub flat_lr: f64,
    pub grounding_steps: usize,
    pub weight_steps: usize,
    pub out: PathBuf,
}

fn planted_three() -> SyntheticSpec {
    SyntheticSpec::planted(
        60,
        vec![vec![0.8, 0.1, 0.1], vec![0.1, 0.8, 0.1], vec![0.1, 0.1, 0.8]],
        40,
        0,
    )
}

impl ExperimentConfig {
    /// Row of the reference hyperparameter table for `lmax`.
    pub fn reference(lmax: usize) -> Result<Self> {
        let col = REFERENCE_LMAX.iter().position(|&l| l == lmax).ok_or_else(|| {
            Error::config(
                "lmax",
                format!("no reference profile for L_max = {lmax}; known: {REFERENCE_LMAX:?}"),
            )
        })?;
        const EPS: [f64; 8] = [0.0, 0.2, 0.2, 0.25, 0.3, 0.3, 0.3, 0.4];
        const A_THETA: [f64; 8] = [0.005, 0.005, 0.005, 0.005, 0.005, 0.005, 0.006, 0.006];
        const A_OMEGA: [f64; 8] = [0.01, 0.01, 0.015, 0.02, 0.02, 0.02, 0.02, 0.025];
        const T: [usize; 8] = [1, 150, 200, 200, 225, 250, 400, 400];
        // The single-cluster row has no memory; two keeps the config valid.
        const N: [usize; 8] = [2, 4, 5, 5, 5, 6, 7, 8];
        const R: [usize; 8] = [500, 3, 3, 3, 4, 4, 4, 4];
        const BR: [usize; 8] = [10, 3, 3, 4, 3, 3, 5, 5];
        const B0: [usize; 8] = [10, 10, 12, 12, 12, 12, 16, 20];
        const PM: [f64; 8] = [0.0, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1];
        const SM: [f64; 8] = [0.0, 0.3, 0.25, 0.25, 0.25, 0.2, 0.1, 0.1];
        Ok(Self {
            profile: Profile::Reference,
            lmax,
            alpha_theta: A_THETA[col],
            alpha_omega: A_OMEGA[col],
            alpha_lambda: 0.005,
            gamma_lambda: 1e-4,
            epochs: R[col],
            b0: B0[col],
            br: BR[col],
            lagrange_ascent: true,
            steps: T[col],
            memory: N[col],
            epsilon0: EPS[col],
            p_m: PM[col],
            s_m: SM[col],
            lambda0: vec![0.01],
            init_scale: 1.0,
            coherence_tolerance: 0.0,
            seeds: (26..=35).collect(),
            dataset: None,
            schema: ChoiceSchema::default(),
            synthetic: planted_three(),
            flat_steps: 2000,
            flat_lr: 0.05,
            grounding_steps: 2000,
            weight_steps: 2000,
            out: PathBuf::from("results"),
        })
    }

    /// Planted-society profile: the three-cluster recovery setup with rates
    /// large enough for plain gradient descent to converge within T = 50.
    pub fn synthetic(lmax: usize) -> Result<Self> {
        if lmax == 0 {
            return Err(Error::config("lmax", "must be at least 1"));
        }
        Ok(Self {
            profile: Profile::Synthetic,
            lmax,
            alpha_theta: 0.1,
            alpha_omega: 1.0,
            alpha_lambda: 0.05,
            gamma_lambda: 1e-4,
            epochs: 3,
            b0: 24,
            br: 8,
            lagrange_ascent: true,
            steps: 50,
            memory: 5,
            epsilon0: 0.2,
            p_m: 0.1,
            s_m: 0.25,
            lambda0: vec![1.0],
            init_scale: 1.0,
            coherence_tolerance: 0.01,
            seeds: vec![0],
            dataset: None,
            schema: ChoiceSchema::generic(3),
            synthetic: planted_three(),
            flat_steps: 1000,
            flat_lr: 0.5,
            grounding_steps: 1000,
            weight_steps: 1000,
            out: PathBuf::from("results"),
        })
    }

    pub fn base(profile: Profile, lmax: usize) -> Result<Self> {
        match profile {
            Profile::Reference => Self::reference(lmax),
            Profile::Synthetic => Self::synthetic(lmax),
        }
    }

    /// Builds a config from ordered `key = value` pairs.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut profile = Profile::Reference;
        let mut lmax = 1;
        for (k, v) in pairs {
            match k.as_str() {
                "profile" => profile = Profile::parse(v)?,
                "lmax" => lmax = parse_num(k, v)?,
                _ => {}
            }
        }
        let mut cfg = Self::base(profile, lmax)?;
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_pairs(&parse_pairs(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Applies one key. Unknown keys are an error naming the key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "profile" | "lmax" => {
                if key == "lmax" {
                    self.lmax = parse_num(key, v)?;
                }
            }
            "alpha_theta" => self.alpha_theta = parse_num(key, v)?,
            "alpha_omega" => self.alpha_omega = parse_num(key, v)?,
            "alpha_lambda" => self.alpha_lambda = parse_num(key, v)?,
            "gamma_lambda" => self.gamma_lambda = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "b0" => self.b0 = parse_num(key, v)?,
            "br" => self.br = parse_num(key, v)?,
            "lagrange_ascent" => self.lagrange_ascent = parse_num(key, v)?,
            "steps" => self.steps = parse_num(key, v)?,
            "memory" => self.memory = parse_num(key, v)?,
            "epsilon0" => self.epsilon0 = parse_num(key, v)?,
            "p_m" => self.p_m = parse_num(key, v)?,
            "s_m" => self.s_m = parse_num(key, v)?,
            "lambda0" => self.lambda0 = parse_list(key, v)?,
            "init_scale" => self.init_scale = parse_num(key, v)?,
            "coherence_tolerance" => self.coherence_tolerance = parse_num(key, v)?,
            "seeds" => self.seeds = parse_seeds(v)?,
            "dataset" => self.dataset = (!v.is_empty()).then(|| PathBuf::from(v)),
            "csv.agent_id" => self.schema.agent_id = v.to_string(),
            "csv.choice" => self.schema.choice = v.to_string(),
            "csv.route1" => self.schema.route1 = split_names(v),
            "csv.route2" => self.schema.route2 = split_names(v),
            "csv.context" => {
                self.schema.context = if v.is_empty() || v == "none" {
                    None
                } else {
                    Some(ContextColumns::from_list(&split_names(v))?)
                }
            }
            "synthetic.agents" => self.synthetic.agents = parse_num(key, v)?,
            "synthetic.clusters" => self.synthetic.cluster_weights = parse_matrix(key, v)?,
            "synthetic.grounding" => self.synthetic.grounding = parse_matrix(key, v)?,
            "synthetic.pairs" => self.synthetic.pairs_per_agent = parse_num(key, v)?,
            "synthetic.noise" => self.synthetic.noise = parse_num(key, v)?,
            "synthetic.entity_pool" => {
                self.synthetic.entity_pool = if v.is_empty() || v == "none" {
                    None
                } else {
                    Some(parse_num(key, v)?)
                }
            }
            "synthetic.seed" => self.synthetic.seed = parse_num(key, v)?,
            "baseline.flat_steps" => self.flat_steps = parse_num(key, v)?,
            "baseline.flat_lr" => self.flat_lr = parse_num(key, v)?,
            "baseline.grounding_steps" => self.grounding_steps = parse_num(key, v)?,
            "baseline.weight_steps" => self.weight_steps = parse_num(key, v)?,
            "out" => self.out = PathBuf::from(v),
            other => return Err(Error::config(other, "unknown key")),
        }
        Ok(())
    }

    /// Every field as ordered pairs; `from_pairs(to_pairs())` reproduces the
    /// config exactly.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let join = |xs: &[String]| xs.join(",");
        let nums = |xs: &[f64]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let matrix = |m: &[Vec<f64>]| m.iter().map(|r| nums(r)).collect::<Vec<_>>().join(";");
        let mut p: Vec<(&str, String)> = vec![
            ("profile", self.profile.name().into()),
            ("lmax", self.lmax.to_string()),
            ("alpha_theta", self.alpha_theta.to_string()),
            ("alpha_omega", self.alpha_omega.to_string()),
            ("alpha_lambda", self.alpha_lambda.to_string()),
            ("gamma_lambda", self.gamma_lambda.to_string()),
            ("epochs", self.epochs.to_string()),
            ("b0", self.b0.to_string()),
            ("br", self.br.to_string()),
            ("lagrange_ascent", self.lagrange_ascent.to_string()),
            ("steps", self.steps.to_string()),
            ("memory", self.memory.to_string()),
            ("epsilon0", self.epsilon0.to_string()),
            ("p_m", self.p_m.to_string()),
            ("s_m", self.s_m.to_string()),
            ("lambda0", nums(&self.lambda0)),
            ("init_scale", self.init_scale.to_string()),
            ("coherence_tolerance", self.coherence_tolerance.to_string()),
            (
                "seeds",
                self.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
            ),
            (
                "dataset",
                self.dataset
                    .as_ref()
                    .map(|d| d.display().to_string())
                    .unwrap_or_default(),
            ),
            ("csv.agent_id", self.schema.agent_id.clone()),
            ("csv.choice", self.schema.choice.clone()),
            ("csv.route1", join(&self.schema.route1)),
            ("csv.route2", join(&self.schema.route2)),
            (
                "csv.context",
                self.schema
                    .context
                    .as_ref()
                    .map_or("none".into(), |c| join(&c.to_list())),
            ),
            ("synthetic.agents", self.synthetic.agents.to_string()),
            ("synthetic.clusters", matrix(&self.synthetic.cluster_weights)),
            ("synthetic.grounding", matrix(&self.synthetic.grounding)),
            ("synthetic.pairs", self.synthetic.pairs_per_agent.to_string()),
            ("synthetic.noise", self.synthetic.noise.to_string()),
            (
                "synthetic.entity_pool",
                self.synthetic.entity_pool.map_or("none".into(), |n| n.to_string()),
            ),
            ("synthetic.seed", self.synthetic.seed.to_string()),
            ("baseline.flat_steps", self.flat_steps.to_string()),
            ("baseline.flat_lr", self.flat_lr.to_string()),
            ("baseline.grounding_steps", self.grounding_steps.to_string()),
            ("baseline.weight_steps", self.weight_steps.to_string()),
            ("out", self.out.display().to_string()),
        ];
        p.drain(..).map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_pairs() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn train_config(&self) -> TrainConfig<f64> {
        TrainConfig {
            lr_theta: self.alpha_theta,
            lr_omega: self.alpha_omega,
            lr_lambda: self.alpha_lambda,
            lambda_decay: self.gamma_lambda,
            epochs: self.epochs,
            first_repetitions: self.b0,
            repetitions: self.br,
            max_clusters: self.lmax,
            lagrange_ascent: self.lagrange_ascent,
        }
    }

    /// Initial multipliers for `m` values.
    pub fn lambda0_for(&self, m: usize) -> Result<Vec<f64>> {
        match self.lambda0.len() {
            1 => Ok(vec![self.lambda0[0]; m]),
            n if n == m => Ok(self.lambda0.clone()),
            n => Err(Error::config("lambda0", format!("{n} multipliers for {m} values"))),
        }
    }

    pub fn search_config(&self, values: usize) -> Result<SearchConfig<f64>> {
        Ok(SearchConfig {
            train: self.train_config(),
            steps: self.steps,
            memory_size: self.memory,
            mutation_probability: self.epsilon0,
            reassign_probability: self.p_m,
            mutation_scale: self.s_m,
            lambda0: self.lambda0_for(values)?,
            init_scale: self.init_scale,
            coherence_tolerance: self.coherence_tolerance,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        if self.lmax == 0 {
            return Err(Error::config("lmax", "must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if !(self.init_scale > 0.0) || !self.init_scale.is_finite() {
            return Err(Error::config("init_scale", "must be positive"));
        }
        if self.memory < 2 {
            return Err(Error::config("memory", "must hold at least two solutions"));
        }
        if !(0.0..1.0).contains(&self.epsilon0) {
            return Err(Error::config("epsilon0", "must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.p_m) {
            return Err(Error::config("p_m", "must lie in [0, 1]"));
        }
        if !(self.s_m >= 0.0) || !self.s_m.is_finite() {
            return Err(Error::config("s_m", "must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.coherence_tolerance) {
            return Err(Error::config("coherence_tolerance", "must lie in [0, 1)"));
        }
        if self.lambda0.is_empty() || self.lambda0.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::config("lambda0", "needs one or more non-negative multipliers"));
        }
        if self.dataset.is_none() {
            self.synthetic.validate()?;
        }
        Ok(())
    }

    fn with_seed(&self, seed: u64) -> Self {
        Self {
            seeds: vec![seed],
            ..self.clone()
        }
    }
}

pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            row: n + 1,
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Parses a `key=value` command-line override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::config(s, "override must look like key=value"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>()
        .map_err(|e| Error::config(key, format!("cannot parse `{v}`: {e}")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|x| parse_num(key, x.trim())).collect()
}

fn parse_matrix(key: &str, v: &str) -> Result<Vec<Vec<f64>>> {
    v.split(';').map(|row| parse_list(key, row)).collect()
}

fn split_names(v: &str) -> Vec<String> {
    v.split(',')
        .map(|x| x.trim().to_string())
        .filter(|x| !x.is_empty())
        .collect()
}

/// Comma-separated seeds; `a-b` expands to the inclusive range.
pub fn parse_seeds(v: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for part in v.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (parse_num("seeds", a.trim())?, parse_num("seeds", b.trim())?);
                if a > b {
                    return Err(Error::config("seeds", format!("empty range `{part}`")));
                }
                out.extend(a..=b);
            }
            None => out.push(parse_num("seeds", part)?),
        }
    }
    Ok(out)
}

/// The society an experiment trains on, with optional context and planted
/// truth.
#[derive(Clone, Debug)]
pub struct LoadedData {
    pub society: Society<f64>,
    pub contexts: Option<Vec<AgentContext>>,
    pub truth: Option<Assignment>,
}

pub fn load_data(config: &ExperimentConfig) -> Result<LoadedData> {
    match &config.dataset {
        Some(path) => {
            let file = load_choice_csv(path, &config.schema)?;
            let society = file.to_society()?;
            let contexts = (!file.contexts.is_empty()).then(|| file.contexts.clone());
            Ok(LoadedData {
                society,
                contexts,
                truth: None,
            })
        }
        None => {
            let syn = generate_society(&config.synthetic)?;
            Ok(LoadedData {
                society: syn.society,
                contexts: None,
                truth: Some(syn.truth),
            })
        }
    }
}

/// Weights, sizes and representativeness of each populated cluster plus
/// society totals, all recomputed from the parameters.
pub fn cluster_report(
    params: &ModelParameters<f64>,
    assignment: &Assignment,
    society: &Society<f64>,
    contexts: Option<&[AgentContext]>,
) -> Result<ClusterReport> {
    let tape = ModelTape::forward(params, &society.entities)?;
    let scores = emtrain::score_tape(&tape, society, assignment)?;
    let per_cluster = metrics::cluster_representativeness(|l, e| tape.score(l, e), assignment, &society.vs)?;
    let ctx = match contexts {
        Some(c) => Some(context_report(assignment, &society.vs.agent_ids(), c)?),
        None => None,
    };
    let sizes = assignment.sizes();
    let clusters = assignment
        .populated()
        .into_iter()
        .map(|l| ClusterRow {
            cluster: l + 1,
            weights: softmax_weights(&params.clusters[l].omega),
            size: sizes[l],
            representativeness: per_cluster[&l],
            context: ctx.as_ref().map(|c| c.clusters[&l].clone()),
        })
        .collect();
    Ok(ClusterReport {
        value_names: society.value_names.clone(),
        clusters,
        total: TotalRow {
            agents: assignment.len(),
            representativeness: scores.representativeness,
            conciseness: scores.conciseness,
            dunn: scores.dunn,
            coherence: scores.coherence,
            grounding_coherence: scores.grounding_coherence,
            context_means: ctx.map(|c| c.global_means),
        },
    })
}

/// Result of one learning run.
#[derive(Clone, Debug)]
pub struct LearnOutcome {
    pub seed: u64,
    pub champion: CandidateSolution<f64>,
    pub memory: SolutionMemory<f64>,
    /// Per-step champion curve, or per-epoch curve for single-cluster runs.
    pub curves: Vec<u8>,
    /// Epoch telemetry of every refinement (search runs only).
    pub epochs: Option<Vec<u8>>,
    pub report: ClusterReport,
    pub ari: Option<f64>,
}

/// Trains on `data` with one seed: the EM trainer alone for a single
/// cluster, the memory search otherwise.
pub fn learn_seed(config: &ExperimentConfig, data: &LoadedData, seed: u64) -> Result<LearnOutcome> {
    let society = &data.society;
    let m = society.value_count();
    let (champion, memory, curves, epochs) = if config.lmax == 1 {
        let seeds = SeedTree::new(seed);
        let arch = Architecture::standard(society.entities.dim());
        let params = init_parameters(&seeds.child("init", 0), &arch, m, 1, config.init_scale)?;
        let assignment = Assignment::single(society.agent_count(), 1);
        let state = TrainState::new(params, assignment, LagrangeState::new(config.lambda0_for(m)?)?)?;
        let run = run_em(state, &config.train_config(), society, true)?;
        let mut curves = Vec::new();
        write_epoch_csv(&run.epochs, &society.value_names, &mut curves)?;
        let champion = CandidateSolution::evaluate(
            run.state.assignment,
            run.state.params,
            run.state.lagrange.lambda,
            society,
        )?;
        let mut memory = SolutionMemory::new(1);
        memory.solutions.push(champion.clone());
        (champion, memory, curves, None)
    } else {
        let out = run_search(&config.search_config(m)?, society, seed)?;
        let mut curves = Vec::new();
        write_step_csv(&out.steps, &society.value_names, &mut curves)?;
        let mut epochs = Vec::new();
        let records: Vec<_> = out.epochs.iter().map(|(_, e)| e.clone()).collect();
        write_epoch_csv(&records, &society.value_names, &mut epochs)?;
        (out.best, out.memory, curves, Some(epochs))
    };
    let report = cluster_report(
        &champion.params,
        &champion.assignment,
        society,
        data.contexts.as_deref(),
    )?;
    let ari = match &data.truth {
        Some(t) => Some(metrics::adjusted_rand_index(&champion.assignment, t)?),
        None => None,
    };
    Ok(LearnOutcome {
        seed,
        champion,
        memory,
        curves,
        epochs,
        report,
        ari,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

/// Writes `config.snapshot`, `champion.json`, `report.txt`, `report.json`,
/// `curves.csv` and `memory.json` into `dir`.
pub fn write_bundle(dir: &Path, config: &ExperimentConfig, outcome: &LearnOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.snapshot"), config.with_seed(outcome.seed).dump())?;
    write_json(&dir.join("champion.json"), &outcome.champion)?;
    let mut text = outcome.report.to_table();
    if let Some(a) = outcome.ari {
        let _ = writeln!(text, "ARI vs planted assignment: {a:.4}");
    }
    fs::write(dir.join("report.txt"), text)?;
    write_json(&dir.join("report.json"), &outcome.report)?;
    fs::write(dir.join("curves.csv"), &outcome.curves)?;
    if let Some(e) = &outcome.epochs {
        fs::write(dir.join("epochs.csv"), e)?;
    }
    write_json(&dir.join("memory.json"), &outcome.memory)?;
    Ok(())
}

/// One summary row per seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub lmax: usize,
    pub populated: usize,
    pub coherence: Vec<f64>,
    pub representativeness: f64,
    pub conciseness: Option<f64>,
    #[serde(with = "crate::metrics::dunn_serde")]
    pub dunn: Option<f64>,
    pub ari: Option<f64>,
}

impl SeedSummary {
    fn from_outcome(lmax: usize, o: &LearnOutcome) -> Self {
        let s = &o.champion.scores;
        Self {
            seed: o.seed,
            lmax,
            populated: s.populated,
            coherence: s.coherence.clone(),
            representativeness: s.representativeness,
            conciseness: s.conciseness,
            dunn: s.dunn,
            ari: o.ari,
        }
    }
}

fn opt(x: Option<f64>) -> String {
    match x {
        None => String::new(),
        Some(v) if v.is_infinite() => "inf".into(),
        Some(v) => v.to_string(),
    }
}

pub fn write_summary_csv(path: &Path, rows: &[SeedSummary], value_names: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = vec!["seed".into(), "lmax".into(), "populated".into()];
    header.extend(value_names.iter().map(|v| format!("coherence_{v}")));
    header.extend(["representativeness", "conciseness", "dunn", "ari"].map(String::from));
    w.write_record(&header)?;
    for r in rows {
        let mut row = vec![r.seed.to_string(), r.lmax.to_string(), r.populated.to_string()];
        row.extend(r.coherence.iter().map(|c| c.to_string()));
        row.push(r.representativeness.to_string());
        row.push(opt(r.conciseness));
        row.push(opt(r.dunn));
        row.push(opt(r.ari));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean and standard error of the defined, finite entries.
pub fn mean_se(xs: impl IntoIterator<Item = Option<f64>>) -> Option<(f64, f64)> {
    let v: Vec<f64> = xs.into_iter().flatten().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let se = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
    } else {
        0.0
    };
    Some((mean, se))
}

/// Aligned text summary across seeds.
pub fn summary_text(rows: &[SeedSummary], value_names: &[String]) -> String {
    let mut s = String::new();
    let fmt = |x: Option<(f64, f64)>| x.map_or("-".into(), |(m, e)| format!("{m:.3} ± {e:.3}"));
    let _ = writeln!(s, "seeds: {}", rows.len());
    for (i, v) in value_names.iter().enumerate() {
        let _ = writeln!(
            s,
            "coherence {v}: {}",
            fmt(mean_se(rows.iter().map(|r| Some(r.coherence[i]))))
        );
    }
    let _ = writeln!(
        s,
        "representativeness: {}",
        fmt(mean_se(rows.iter().map(|r| Some(r.representativeness))))
    );
    let _ = writeln!(s, "conciseness: {}", fmt(mean_se(rows.iter().map(|r| r.conciseness))));
    let _ = writeln!(s, "dunn: {}", fmt(mean_se(rows.iter().map(|r| r.dunn))));
    let _ = writeln!(
        s,
        "clusters found: {}",
        fmt(mean_se(rows.iter().map(|r| Some(r.populated as f64))))
    );
    if rows.iter().any(|r| r.ari.is_some()) {
        let _ = writeln!(s, "ARI: {}", fmt(mean_se(rows.iter().map(|r| r.ari))));
    }
    s
}

/// Runs every configured seed and writes one bundle per seed under
/// `out/seed-<n>`, plus `summary.csv`, `summary.txt` and `config.snapshot`
/// in `out`.
pub fn cmd_learn(config: &ExperimentConfig) -> Result<Vec<SeedSummary>> {
    config.validate()?;
    let data = load_data(config)?;
    fs::create_dir_all(&config.out)?;
    fs::write(config.out.join("config.snapshot"), config.dump())?;
    let mut rows = Vec::new();
    for &seed in &config.seeds {
        log::info!("learn: L_max = {}, seed {seed}", config.lmax);
        let outcome = learn_seed(config, &data, seed)?;
        write_bundle(&seed_dir(&config.out, seed), config, &outcome)?;
        rows.push(SeedSummary::from_outcome(config.lmax, &outcome));
    }
    write_summary_csv(&config.out.join("summary.csv"), &rows, &data.society.value_names)?;
    fs::write(
        config.out.join("summary.txt"),
        summary_text(&rows, &data.society.value_names),
    )?;
    Ok(rows)
}

/// Same as [`cmd_learn`] with multiplier ascent disabled, so the multipliers
/// stay at their initial values.
pub fn cmd_ablate_lagrange(config: &ExperimentConfig) -> Result<Vec<SeedSummary>> {
    let cfg = ExperimentConfig {
        lagrange_ascent: false,
        ..config.clone()
    };
    cmd_learn(&cfg)
}

/// One row of the sweep curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lmax: usize,
    pub seeds: usize,
    pub clusters_found: f64,
    pub representativeness: (f64, f64),
    pub conciseness: Option<(f64, f64)>,
    pub dunn: Option<(f64, f64)>,
    /// Mean Dunn divided by the largest mean Dunn of the sweep.
    pub dunn_normalized: Option<f64>,
}

/// Runs [`cmd_learn`] for each `lmax`, rebuilding the config from `pairs`
/// with the cluster count replaced so each profile row applies, and writes
/// `sweep.csv`.
pub fn cmd_sweep(pairs: &[(String, String)], lmaxes: &[usize]) -> Result<Vec<SweepPoint>> {
    if lmaxes.is_empty() {
        return Err(Error::config("lmax", "the sweep needs at least one value"));
    }
    let root = ExperimentConfig::from_pairs(pairs)?.out;
    let mut points = Vec::new();
    for &l in lmaxes {
        let mut p = pairs.to_vec();
        p.push(("lmax".into(), l.to_string()));
        p.push(("out".into(), root.join(format!("lmax-{l}")).display().to_string()));
        let cfg = ExperimentConfig::from_pairs(&p)?;
        let rows = cmd_learn(&cfg)?;
        points.push(SweepPoint {
            lmax: l,
            seeds: rows.len(),
            clusters_found: rows.iter().map(|r| r.populated as f64).sum::<f64>() / rows.len() as f64,
            representativeness: mean_se(rows.iter().map(|r| Some(r.representativeness))).expect("non-empty"),
            conciseness: mean_se(rows.iter().map(|r| r.conciseness)),
            dunn: mean_se(rows.iter().map(|r| r.dunn)),
            dunn_normalized: None,
        });
    }
    let best = points
        .iter()
        .filter_map(|p| p.dunn.map(|d| d.0))
        .fold(f64::NEG_INFINITY, f64::max);
    for p in &mut points {
        p.dunn_normalized = p.dunn.map(|d| if best > 0.0 { d.0 / best } else { 0.0 });
    }
    write_sweep_csv(&root.join("sweep.csv"), &points)?;
    Ok(points)
}

pub fn write_sweep_csv(path: &Path, points: &[SweepPoint]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "lmax",
        "seeds",
        "clusters_found",
        "repr_mean",
        "repr_se",
        "conc_mean",
        "conc_se",
        "dunn_mean",
        "dunn_se",
        "dunn_normalized",
    ])?;
    for p in points {
        let pair = |x: Option<(f64, f64)>| match x {
            Some((m, s)) => [m.to_string(), s.to_string()],
            None => [String::new(), String::new()],
        };
        let [cm, cs] = pair(p.conciseness);
        let [dm, ds] = pair(p.dunn);
        w.write_record([
            p.lmax.to_string(),
            p.seeds.to_string(),
            p.clusters_found.to_string(),
            p.representativeness.0.to_string(),
            p.representativeness.1.to_string(),
            cm,
            cs,
            dm,
            ds,
            opt(p.dunn_normalized),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineKind {
    FlatBt,
    Sequential,
}

impl BaselineKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "flat-bt" => Ok(BaselineKind::FlatBt),
            "sequential" => Ok(BaselineKind::Sequential),
            other => Err(Error::config("which", format!("unknown baseline `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub seed: u64,
    pub representativeness: f64,
    pub coherence: Vec<f64>,
}

/// Fits a baseline per seed and writes `config.snapshot`, `champion.json`,
/// `report.json` and `report.txt` under `out/seed-<n>`.
pub fn cmd_baseline(config: &ExperimentConfig, which: BaselineKind) -> Result<Vec<BaselineSummary>> {
    config.validate()?;
    let data = load_data(config)?;
    let society = &data.society;
    fs::create_dir_all(&config.out)?;
    fs::write(config.out.join("config.snapshot"), config.dump())?;
    let mut rows = Vec::new();
    for &seed in &config.seeds {
        let dir = seed_dir(&config.out, seed);
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("config.snapshot"), config.with_seed(seed).dump())?;
        let (summary, text) = match which {
            BaselineKind::FlatBt => {
                let res = baseline_flat_bt(
                    society,
                    &FlatBtConfig {
                        steps: config.flat_steps,
                        lr: config.flat_lr,
                        init_scale: config.init_scale,
                        seed,
                    },
                )?;
                write_json(&dir.join("champion.json"), &res.network)?;
                let summary = BaselineSummary {
                    seed,
                    representativeness: res.representativeness,
                    coherence: res.coherence.clone(),
                };
                let mut text = String::from("flat Bradley-Terry baseline\n");
                let _ = writeln!(text, "representativeness: {:.3}", res.representativeness);
                for (v, c) in society.value_names.iter().zip(&res.coherence) {
                    let _ = writeln!(text, "coherence {v}: {c:.3}");
                }
                (summary, text)
            }
            BaselineKind::Sequential => {
                let res = baseline_sequential(
                    society,
                    &SequentialConfig {
                        grounding_steps: config.grounding_steps,
                        weight_steps: config.weight_steps,
                        lr_theta: config.alpha_theta,
                        lr_omega: config.alpha_omega,
                        init_scale: config.init_scale,
                        seed,
                    },
                )?;
                write_json(&dir.join("champion.json"), &res.params)?;
                let single = Assignment::single(society.agent_count(), 1);
                let report = cluster_report(&res.params, &single, society, data.contexts.as_deref())?;
                let summary = BaselineSummary {
                    seed,
                    representativeness: res.scores.representativeness,
                    coherence: res.scores.coherence.clone(),
                };
                (summary, format!("sequential baseline\n{}", report.to_table()))
            }
        };
        write_json(&dir.join("report.json"), &summary)?;
        fs::write(dir.join("report.txt"), text)?;
        rows.push(summary);
    }
    Ok(rows)
}

/// Generates the configured synthetic society and writes `choices.csv`
/// (value-system preferences in the ingestion schema), `truth.csv` and
/// `summary.json`. Returns the number of tied pairs left out of the CSV.
pub fn cmd_synth(config: &ExperimentConfig) -> Result<usize> {
    config.synthetic.validate()?;
    let syn = generate_society::<f64>(&config.synthetic)?;
    fs::create_dir_all(&config.out)?;
    let skipped = export_choice_csv(&syn, fs::File::create(config.out.join("choices.csv"))?)?;
    let mut w = csv::Writer::from_path(config.out.join("truth.csv"))?;
    w.write_record(["agent", "cluster"])?;
    for (id, l) in syn.society.vs.agent_ids().iter().zip(syn.truth.labels()) {
        w.write_record([id.as_str().to_string(), (l + 1).to_string()])?;
    }
    w.flush()?;
    write_json(&config.out.join("summary.json"), &syn.society.summary())?;
    fs::write(config.out.join("config.snapshot"), config.dump())?;
    Ok(skipped)
}

/// Recomputes the cluster report of a bundle from its `config.snapshot` and
/// `champion.json`.
pub fn cmd_report(bundle: &Path) -> Result<ClusterReport> {
    let config = ExperimentConfig::load(bundle.join("config.snapshot"))?;
    let champion: CandidateSolution<f64> = serde_json::from_str(&fs::read_to_string(bundle.join("champion.json"))?)?;
    let data = load_data(&config)?;
    cluster_report(
        &champion.params,
        &champion.assignment,
        &data.society,
        data.contexts.as_deref(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_profile_matches_table() {
        let c = ExperimentConfig::reference(3).unwrap();
        assert_eq!((c.epsilon0, c.alpha_omega, c.steps, c.memory), (0.2, 0.015, 200, 5));
        assert_eq!((c.epochs, c.br, c.b0, c.p_m, c.s_m), (3, 3, 12, 0.1, 0.25));
        let c = ExperimentConfig::reference(1).unwrap();
        assert_eq!((c.epochs, c.b0, c.br), (500, 10, 10));
        let c = ExperimentConfig::reference(12).unwrap();
        assert_eq!(
            (c.epsilon0, c.alpha_theta, c.alpha_omega, c.memory, c.b0),
            (0.4, 0.006, 0.025, 8, 20)
        );
        assert!(ExperimentConfig::reference(7).is_err());
    }

    #[test]
    fn overrides_are_last_wins_on_top_of_the_profile() {
        let text = "profile = reference\nlmax = 3\nsteps = 7 # desk run\n\nsteps = 9\n";
        let mut pairs = parse_pairs(text).unwrap();
        pairs.push(("alpha_theta".into(), "0.5".into()));
        let c = ExperimentConfig::from_pairs(&pairs).unwrap();
        assert_eq!(c.steps, 9);
        assert_eq!(c.alpha_theta, 0.5);
        assert_eq!(c.alpha_omega, 0.015);
    }

    #[test]
    fn dump_round_trips() {
        let mut c = ExperimentConfig::synthetic(2).unwrap();
        c.alpha_theta = 0.1 + 0.2;
        c.dataset = Some("data/routes.csv".into());
        c.seeds = vec![3, 5];
        c.synthetic.entity_pool = Some(50);
        let back = ExperimentConfig::parse(&c.dump()).unwrap();
        assert_eq!(back, c);
        let p = ExperimentConfig::reference(4).unwrap();
        assert_eq!(ExperimentConfig::parse(&p.dump()).unwrap(), p);
    }

    #[test]
    fn errors_name_the_field() {
        match ExperimentConfig::parse("lmax = 2\nalpha_theta = fast\n") {
            Err(Error::Config { field, .. }) => assert_eq!(field, "alpha_theta"),
            other => panic!("{other:?}"),
        }
        match ExperimentConfig::parse("bogus = 1") {
            Err(Error::Config { field, .. }) => assert_eq!(field, "bogus"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            ExperimentConfig::parse("no equals sign"),
            Err(Error::Parse { row: 1, .. })
        ));
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("26-28, 40").unwrap(), vec![26, 27, 28, 40]);
        assert!(parse_seeds("5-2").is_err());
    }

    #[test]
    fn mean_and_standard_error() {
        let (m, se) = mean_se([Some(1.0), Some(3.0), None, Some(f64::INFINITY)]).unwrap();
        assert_eq!(m, 2.0);
        assert!((se - 1.0).abs() < 1e-15);
        assert!(mean_se([None]).is_none());
    }
}
