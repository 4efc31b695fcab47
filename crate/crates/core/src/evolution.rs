//! Evolutionary search over social value systems: a bounded memory of
//! candidates, rank selection, structural and parametric mutation, Pareto
//! insertion and lexicographic elimination, each step refined by EM.

use std::cmp::Ordering;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::Society;
use crate::emtrain::{self, run_em, EpochRecord, LagrangeState, TrainConfig, TrainState};
use crate::error::{Error, Result};
use crate::metrics::{Assignment, SocietyScores};
use crate::netcore::{init_parameters, Architecture, ModelParameters};
use crate::rng::SeedTree;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig<S> {
    pub train: TrainConfig<S>,
    /// Training steps (T).
    pub steps: usize,
    /// Memory capacity (N).
    pub memory_size: usize,
    /// Probability of mutating the selected solution (epsilon_0).
    pub mutation_probability: f64,
    /// Per-agent probability of moving into an added cluster (p_m).
    pub reassign_probability: f64,
    /// Parameter noise scale (s_m).
    pub mutation_scale: f64,
    pub lambda0: Vec<S>,
    pub init_scale: f64,
    /// Coherence differences up to this size count as ties when picking the
    /// champion.
    #[serde(default)]
    pub coherence_tolerance: f64,
}

impl<S: Scalar> SearchConfig<S> {
    pub fn validate(&self, society: &Society<S>) -> Result<()> {
        self.train.validate(society.agent_count())?;
        if self.memory_size < 2 {
            return Err(Error::config("n", "memory must hold at least two solutions"));
        }
        if !(0.0..1.0).contains(&self.mutation_probability) {
            return Err(Error::config("epsilon0", "must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.reassign_probability) {
            return Err(Error::config("p_m", "must lie in [0, 1]"));
        }
        if !(self.mutation_scale >= 0.0) || !self.mutation_scale.is_finite() {
            return Err(Error::config("s_m", "must be non-negative"));
        }
        if self.lambda0.len() != society.value_count() {
            return Err(Error::config(
                "lambda0",
                format!(
                    "{} multipliers for {} values",
                    self.lambda0.len(),
                    society.value_count()
                ),
            ));
        }
        if !(0.0..1.0).contains(&self.coherence_tolerance) {
            return Err(Error::config("coherence_tolerance", "must lie in [0, 1)"));
        }
        LagrangeState::new(self.lambda0.clone())?;
        Ok(())
    }
}

/// A social value system with its multipliers and cached training-set
/// scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct CandidateSolution<S> {
    pub assignment: Assignment,
    pub params: ModelParameters<S>,
    pub lambda: Vec<S>,
    pub scores: SocietyScores<S>,
}

impl<S: Scalar> CandidateSolution<S> {
    pub fn evaluate(
        assignment: Assignment,
        params: ModelParameters<S>,
        lambda: Vec<S>,
        society: &Society<S>,
    ) -> Result<Self> {
        let scores = emtrain::score_state(&params, &assignment, society)?;
        Ok(Self {
            assignment,
            params,
            lambda,
            scores,
        })
    }

    pub fn refresh(&mut self, society: &Society<S>) -> Result<()> {
        self.scores = emtrain::score_state(&self.params, &self.assignment, society)?;
        Ok(())
    }

    pub fn coherence(&self) -> S {
        self.scores.grounding_coherence
    }

    pub fn dunn(&self) -> Option<S> {
        self.scores.dunn.filter(|d| !d.is_nan())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct SolutionMemory<S> {
    pub capacity: usize,
    pub solutions: Vec<CandidateSolution<S>>,
}

impl<S: Scalar> SolutionMemory<S> {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            solutions: Vec::with_capacity(capacity + 1),
        }
    }

    pub fn len(&self) -> usize {
        self.solutions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.solutions.is_empty()
    }

    pub fn best_dunn(&self) -> Option<S> {
        self.solutions
            .iter()
            .filter_map(|s| s.dunn())
            .fold(None, |acc, d| match acc {
                Some(b) if b >= d => Some(b),
                _ => Some(d),
            })
    }
}

/// Absent Dunn ranks below any defined value.
fn cmp_dunn<S: Scalar>(a: Option<S>, b: Option<S>) -> Ordering {
    match (a, b) {
        (None, None) => Ordering::Equal,
        (None, Some(_)) => Ordering::Less,
        (Some(_), None) => Ordering::Greater,
        (Some(x), Some(y)) => x.partial_cmp(&y).unwrap_or(Ordering::Equal),
    }
}

fn cmp_scalar<S: Scalar>(a: S, b: S) -> Ordering {
    a.partial_cmp(&b).unwrap_or(Ordering::Equal)
}

/// Selection order: Dunn first (absent Dunn below all, then by
/// representativeness), then coherence.
fn cmp_selection<S: Scalar>(a: &CandidateSolution<S>, b: &CandidateSolution<S>) -> Ordering {
    let by_dunn = match (a.dunn(), b.dunn()) {
        (None, None) => cmp_scalar(a.scores.representativeness, b.scores.representativeness),
        (x, y) => cmp_dunn(x, y),
    };
    by_dunn.then_with(|| cmp_scalar(a.coherence(), b.coherence()))
}

/// Member indices from worst to best in selection order.
pub fn selection_ranking<S: Scalar>(memory: &SolutionMemory<S>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..memory.len()).collect();
    idx.sort_by(|&a, &b| cmp_selection(&memory.solutions[a], &memory.solutions[b]));
    idx
}

/// Rank-proportional selection: the `i`-th worst member is drawn with
/// probability `i / sum(1..=n)`.
pub fn select_index<S: Scalar, R: Rng>(memory: &SolutionMemory<S>, rng: &mut R) -> Result<usize> {
    if memory.is_empty() {
        return Err(Error::Data("selection from an empty memory".into()));
    }
    let ranking = selection_ranking(memory);
    let n = ranking.len();
    let total = n * (n + 1) / 2;
    let mut ticket = rng.gen_range(0..total);
    for (pos, &idx) in ranking.iter().enumerate() {
        let weight = pos + 1;
        if ticket < weight {
            return Ok(idx);
        }
        ticket -= weight;
    }
    unreachable!("ticket within total weight")
}

pub fn select<'a, S: Scalar, R: Rng>(memory: &'a SolutionMemory<S>, rng: &mut R) -> Result<&'a CandidateSolution<S>> {
    Ok(&memory.solutions[select_index(memory, rng)?])
}

/// Which structural change a mutation applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StructuralChange {
    Removed(usize),
    Added(usize),
    None,
}

/// Moves agents between clusters: removes a populated cluster or opens an
/// unpopulated slot, each with probability one half (the other branch when
/// one is impossible).
pub fn mutate_assignment<R: Rng>(
    assignment: &Assignment,
    reassign_probability: f64,
    rng: &mut R,
) -> (Assignment, StructuralChange) {
    let populated = assignment.populated();
    let can_remove = populated.len() > 1;
    let can_add = populated.len() < assignment.max_clusters();
    let remove = match (can_remove, can_add) {
        (true, true) => rng.gen_bool(0.5),
        (true, false) => true,
        (false, true) => false,
        (false, false) => return (assignment.clone(), StructuralChange::None),
    };
    let mut out = assignment.clone();
    if remove {
        let victim = populated[rng.gen_range(0..populated.len())];
        let rest: Vec<usize> = populated.iter().copied().filter(|&l| l != victim).collect();
        for j in 0..out.len() {
            if out.cluster_of(j) == victim {
                out.set(j, rest[rng.gen_range(0..rest.len())]);
            }
        }
        (out, StructuralChange::Removed(victim))
    } else {
        let slot = (0..assignment.max_clusters())
            .find(|l| !populated.contains(l))
            .expect("an unpopulated slot exists");
        let mut moved = false;
        for j in 0..out.len() {
            if rng.gen_bool(reassign_probability) {
                out.set(j, slot);
                moved = true;
            }
        }
        if !moved {
            let j = rng.gen_range(0..out.len());
            out.set(j, slot);
        }
        (out, StructuralChange::Added(slot))
    }
}

/// `1 - dunn / best`, clamped to `[0, 1]`; 1 when either is undefined.
pub fn dunn_error<S: Scalar>(dunn: Option<S>, best: Option<S>) -> f64 {
    match (dunn, best) {
        (Some(d), Some(b)) if b > S::zero() => {
            let (d, b) = (d.as_f64(), b.as_f64());
            let e = if b.is_infinite() {
                if d.is_infinite() {
                    0.0
                } else {
                    1.0
                }
            } else {
                1.0 - d / b
            };
            if e.is_nan() {
                1.0
            } else {
                e.clamp(0.0, 1.0)
            }
        }
        (Some(_), Some(_)) => 0.0,
        _ => 1.0,
    }
}

/// Structural mutation followed by Gaussian noise on the networks (scaled
/// by the coherence error) and on every weight logit (scaled by the Dunn
/// error relative to `best_dunn`). Scores are recomputed.
pub fn mutate<S: Scalar, R: Rng>(
    solution: &CandidateSolution<S>,
    reassign_probability: f64,
    mutation_scale: f64,
    best_dunn: Option<S>,
    society: &Society<S>,
    rng: &mut R,
) -> Result<(CandidateSolution<S>, StructuralChange)> {
    let (assignment, change) = mutate_assignment(&solution.assignment, reassign_probability, rng);
    let mut params = solution.params.clone();
    let theta_sd = mutation_scale * (1.0 - solution.coherence().as_f64());
    let omega_sd = mutation_scale * dunn_error(solution.dunn(), best_dunn);
    if theta_sd > 0.0 {
        let normal = Normal::new(0.0, theta_sd).map_err(|e| Error::config("s_m", e.to_string()))?;
        for net in &mut params.grounding.nets {
            for p in net.parameters_mut() {
                *p += S::lit(normal.sample(rng));
            }
        }
    }
    if omega_sd > 0.0 {
        let normal = Normal::new(0.0, omega_sd).map_err(|e| Error::config("s_m", e.to_string()))?;
        for c in &mut params.clusters {
            for w in &mut c.omega {
                *w += S::lit(normal.sample(rng));
            }
        }
    }
    let mutated = CandidateSolution::evaluate(assignment, params, solution.lambda.clone(), society)?;
    Ok((mutated, change))
}

/// `a` is at least as good on coherence, conciseness and representativeness,
/// uses no more clusters, and is strictly better somewhere. Absent
/// conciseness is worse than any value.
pub fn pareto_dominates<S: Scalar>(a: &SocietyScores<S>, b: &SocietyScores<S>) -> bool {
    let conc = cmp_dunn(a.conciseness, b.conciseness);
    let orders = [
        cmp_scalar(a.grounding_coherence, b.grounding_coherence),
        conc,
        cmp_scalar(a.representativeness, b.representativeness),
        b.populated.cmp(&a.populated),
    ];
    orders.iter().all(|o| *o != Ordering::Less) && orders.iter().any(|o| *o == Ordering::Greater)
}

fn first_best_by<S: Scalar>(
    memory: &SolutionMemory<S>,
    cmp: impl Fn(&CandidateSolution<S>, &CandidateSolution<S>) -> Ordering,
) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in memory.solutions.iter().enumerate() {
        if best.map_or(true, |b| cmp(s, &memory.solutions[b]) == Ordering::Greater) {
            best = Some(i);
        }
    }
    best
}

/// Indices of the best-coherence and best-Dunn members (first found).
pub fn protected_members<S: Scalar>(memory: &SolutionMemory<S>) -> (Option<usize>, Option<usize>) {
    (
        first_best_by(memory, |a, b| cmp_scalar(a.coherence(), b.coherence())),
        first_best_by(memory, |a, b| cmp_dunn(a.dunn(), b.dunn())),
    )
}

/// Elimination key; larger is worse.
#[derive(Clone, Debug, PartialEq)]
struct Badness<S> {
    populated: usize,
    overlap: usize,
    dominated_by: usize,
    coherence: S,
    dunn: Option<S>,
}

fn cmp_badness<S: Scalar>(a: &Badness<S>, b: &Badness<S>) -> Ordering {
    a.populated
        .cmp(&b.populated)
        .then(a.overlap.cmp(&b.overlap))
        .then(a.dominated_by.cmp(&b.dominated_by))
        .then(cmp_scalar(b.coherence, a.coherence))
        .then(cmp_dunn(b.dunn, a.dunn))
}

fn badness<S: Scalar>(memory: &SolutionMemory<S>) -> Vec<Badness<S>> {
    let sols = &memory.solutions;
    sols.iter()
        .enumerate()
        .map(|(i, s)| Badness {
            populated: s.scores.populated,
            overlap: sols
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != i)
                .map(|(_, o)| s.assignment.identical_mappings(&o.assignment))
                .max()
                .unwrap_or(0),
            dominated_by: sols
                .iter()
                .enumerate()
                .filter(|&(k, o)| k != i && pareto_dominates(&o.scores, &s.scores))
                .count(),
            coherence: s.coherence(),
            dunn: s.dunn(),
        })
        .collect()
}

/// Worst index among `candidates` by the elimination order; the highest
/// index wins full ties.
fn worst_of<S: Scalar>(keys: &[Badness<S>], candidates: impl Iterator<Item = usize>) -> Option<usize> {
    let mut worst: Option<usize> = None;
    for i in candidates {
        if worst.map_or(true, |w| cmp_badness(&keys[i], &keys[w]) != Ordering::Less) {
            worst = Some(i);
        }
    }
    worst
}

/// Removes the worst unprotected member. Returns its former index.
pub fn eliminate<S: Scalar>(memory: &mut SolutionMemory<S>) -> Option<usize> {
    let keys = badness(memory);
    let (best_chr, best_dunn) = protected_members(memory);
    let victim = worst_of(
        &keys,
        (0..memory.len()).filter(|&i| Some(i) != best_chr && Some(i) != best_dunn),
    )?;
    memory.solutions.remove(victim);
    Some(victim)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InsertOutcome {
    /// Replaced the member formerly at this index.
    Replaced(usize),
    Appended,
    /// Appended, then the member formerly at this index was eliminated
    /// (the new solution itself when it is the last index).
    Eliminated(usize),
}

pub fn insert<S: Scalar>(memory: &mut SolutionMemory<S>, solution: CandidateSolution<S>) -> InsertOutcome {
    let dominated: Vec<usize> = (0..memory.len())
        .filter(|&i| pareto_dominates(&solution.scores, &memory.solutions[i].scores))
        .collect();
    if !dominated.is_empty() {
        let keys = badness(memory);
        let victim = worst_of(&keys, dominated.into_iter()).expect("non-empty");
        memory.solutions[victim] = solution;
        return InsertOutcome::Replaced(victim);
    }
    memory.solutions.push(solution);
    if memory.len() > memory.capacity {
        match eliminate(memory) {
            Some(i) => InsertOutcome::Eliminated(i),
            None => InsertOutcome::Appended,
        }
    } else {
        InsertOutcome::Appended
    }
}

/// Best member by coherence, then Dunn: among members whose coherence is
/// within `tolerance` of the highest, the best Dunn wins, then the higher
/// coherence, then the lower index.
pub fn get_best<S: Scalar>(memory: &SolutionMemory<S>, tolerance: f64) -> Option<usize> {
    let top = memory
        .solutions
        .iter()
        .map(|s| s.coherence().as_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut best: Option<usize> = None;
    for (i, s) in memory.solutions.iter().enumerate() {
        if s.coherence().as_f64() < top - tolerance {
            continue;
        }
        let better = best.map_or(true, |b| {
            let o = &memory.solutions[b];
            cmp_dunn(s.dunn(), o.dunn()).then_with(|| cmp_scalar(s.coherence(), o.coherence())) == Ordering::Greater
        });
        if better {
            best = Some(i);
        }
    }
    best
}

/// Champion telemetry after each search step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct StepRecord<S> {
    pub step: usize,
    pub selected: usize,
    pub mutated: bool,
    pub change: StructuralChange,
    pub insert: InsertOutcome,
    pub champion: SocietyScores<S>,
}

#[derive(Clone, Debug)]
pub struct SearchOutcome<S> {
    pub best: CandidateSolution<S>,
    pub memory: SolutionMemory<S>,
    pub steps: Vec<StepRecord<S>>,
    /// Epoch telemetry of every refinement, tagged with its step.
    pub epochs: Vec<(usize, EpochRecord<S>)>,
    pub chr_star: Vec<S>,
}

/// Initial memory: seeded random networks and logits, uniform random
/// assignments over all cluster slots.
pub fn initial_memory<S: Scalar>(
    config: &SearchConfig<S>,
    society: &Society<S>,
    seeds: &SeedTree,
) -> Result<SolutionMemory<S>> {
    let arch = Architecture::standard(society.entities.dim());
    let lmax = config.train.max_clusters;
    let mut memory = SolutionMemory::new(config.memory_size);
    for k in 0..config.memory_size {
        let params = init_parameters(
            &seeds.child("init", k as u64),
            &arch,
            society.value_count(),
            lmax,
            config.init_scale,
        )?;
        let mut rng = seeds.stream("assign", k as u64);
        let labels = (0..society.agent_count()).map(|_| rng.gen_range(0..lmax)).collect();
        let assignment = Assignment::new(labels, lmax)?;
        memory.solutions.push(CandidateSolution::evaluate(
            assignment,
            params,
            config.lambda0.clone(),
            society,
        )?);
    }
    Ok(memory)
}

pub fn run_search<S: Scalar>(config: &SearchConfig<S>, society: &Society<S>, seed: u64) -> Result<SearchOutcome<S>> {
    config.validate(society)?;
    let seeds = SeedTree::new(seed);
    let mut memory = initial_memory(config, society, &seeds)?;
    let mut chr_star = vec![S::zero(); society.value_count()];
    let mut steps = Vec::with_capacity(config.steps);
    let mut epochs = Vec::new();
    for t in 0..config.steps {
        let mut rng = seeds.stream("step", t as u64);
        let selected = select_index(&memory, &mut rng)?;
        let mut candidate = memory.solutions[selected].clone();
        let mut change = StructuralChange::None;
        let mutated = rng.gen::<f64>() < config.mutation_probability;
        if mutated {
            let mut mrng = seeds.stream("mutate", t as u64);
            let (m, c) = mutate(
                &candidate,
                config.reassign_probability,
                config.mutation_scale,
                memory.best_dunn(),
                society,
                &mut mrng,
            )?;
            candidate = m;
            change = c;
        }
        let lagrange = LagrangeState {
            lambda: candidate.lambda,
            chr_star: chr_star.clone(),
        };
        let state = TrainState::new(candidate.params, candidate.assignment, lagrange)?;
        let run = run_em(state, &config.train, society, true)?;
        chr_star = run.state.lagrange.chr_star.clone();
        epochs.extend(run.epochs.into_iter().map(|e| (t, e)));
        let refined = match run.scores {
            Some(scores) => CandidateSolution {
                assignment: run.state.assignment,
                params: run.state.params,
                lambda: run.state.lagrange.lambda,
                scores,
            },
            None => CandidateSolution::evaluate(
                run.state.assignment,
                run.state.params,
                run.state.lagrange.lambda,
                society,
            )?,
        };
        let outcome = insert(&mut memory, refined);
        let champion = &memory.solutions[get_best(&memory, config.coherence_tolerance).expect("non-empty memory")];
        log::debug!(
            "step {t}: selected {selected}, mutated {mutated}, {outcome:?}, champion coherence {} dunn {:?}",
            champion.coherence(),
            champion.dunn()
        );
        steps.push(StepRecord {
            step: t,
            selected,
            mutated,
            change,
            insert: outcome,
            champion: champion.scores.clone(),
        });
    }
    let best = memory.solutions[get_best(&memory, config.coherence_tolerance).expect("non-empty memory")].clone();
    Ok(SearchOutcome {
        best,
        memory,
        steps,
        epochs,
        chr_star,
    })
}

fn fmt_opt<S: Scalar>(x: Option<S>) -> String {
    match x {
        None => String::new(),
        Some(v) if v.is_infinite() => "inf".into(),
        Some(v) => v.to_string(),
    }
}

/// Per-step champion curve as CSV.
pub fn write_step_csv<S: Scalar, W: Write>(records: &[StepRecord<S>], value_names: &[String], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["step".to_string()];
    header.extend(value_names.iter().map(|v| format!("coherence_{v}")));
    header.extend(
        [
            "grounding_coherence",
            "representativeness",
            "conciseness",
            "dunn",
            "populated",
        ]
        .map(String::from),
    );
    w.write_record(&header)?;
    for r in records {
        let c = &r.champion;
        let mut row = vec![r.step.to_string()];
        row.extend(c.coherence.iter().map(|x| x.to_string()));
        row.push(c.grounding_coherence.to_string());
        row.push(c.representativeness.to_string());
        row.push(fmt_opt(c.conciseness));
        row.push(fmt_opt(c.dunn));
        row.push(c.populated.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::synthlab::{generate_society, SyntheticSpec};

    fn scores(chr: f64, repr: f64, conc: Option<f64>, populated: usize) -> SocietyScores<f64> {
        SocietyScores {
            coherence: vec![chr],
            grounding_coherence: chr,
            representativeness: repr,
            conciseness: conc,
            dunn: crate::metrics::dunn_index(repr, conc),
            populated,
        }
    }

    fn fake(labels: Vec<usize>, s: SocietyScores<f64>) -> CandidateSolution<f64> {
        let params = init_parameters(&SeedTree::new(0), &Architecture::standard(1), 1, 3, 1.0).unwrap();
        CandidateSolution {
            assignment: Assignment::new(labels, 3).unwrap(),
            params,
            lambda: vec![0.01],
            scores: s,
        }
    }

    fn memory(capacity: usize, members: Vec<CandidateSolution<f64>>) -> SolutionMemory<f64> {
        let mut m = SolutionMemory::new(capacity);
        m.solutions = members;
        m
    }

    #[test]
    fn rank_selection_frequencies() {
        let mem = memory(
            3,
            vec![
                fake(vec![0, 1], scores(1.0, 0.9, Some(0.3), 2)),
                fake(vec![0, 1], scores(1.0, 0.8, Some(0.3), 2)),
                fake(vec![0, 1], scores(1.0, 0.95, Some(0.3), 2)),
            ],
        );
        assert_eq!(selection_ranking(&mem), vec![1, 0, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = [0usize; 3];
        let n = 60_000;
        for _ in 0..n {
            counts[select_index(&mem, &mut rng).unwrap()] += 1;
        }
        let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
        for (f, want) in freq.iter().zip([2.0 / 6.0, 1.0 / 6.0, 3.0 / 6.0]) {
            assert!((f - want).abs() < 0.01, "{freq:?}");
        }
    }

    #[test]
    fn absent_dunn_ranks_lowest_then_by_representativeness() {
        let mem = memory(
            3,
            vec![
                fake(vec![0, 0], scores(1.0, 0.9, None, 1)),
                fake(vec![0, 1], scores(1.0, 0.5, Some(0.01), 2)),
                fake(vec![0, 0], scores(1.0, 0.7, None, 1)),
            ],
        );
        assert_eq!(selection_ranking(&mem), vec![2, 0, 1]);
    }

    #[test]
    fn pareto_examples() {
        let a = scores(1.0, 0.9, Some(0.4), 2);
        assert!(!pareto_dominates(&a, &a));
        assert!(pareto_dominates(&a, &scores(1.0, 0.8, Some(0.4), 2)));
        assert!(pareto_dominates(&a, &scores(1.0, 0.9, Some(0.4), 3)));
        assert!(!pareto_dominates(&a, &scores(1.0, 0.95, Some(0.4), 3)));
        assert!(pareto_dominates(
            &scores(1.0, 0.9, Some(0.0), 2),
            &scores(1.0, 0.9, None, 2)
        ));
        assert!(!pareto_dominates(&scores(0.99, 1.0, Some(0.5), 1), &a));
    }

    #[test]
    fn elimination_order() {
        // Unique worst on populated count goes first.
        let mut mem = memory(
            3,
            vec![
                fake(vec![0, 1], scores(1.0, 0.9, Some(0.4), 2)),
                fake(vec![0, 0], scores(0.9, 0.5, None, 1)),
                fake(vec![2, 1], scores(0.95, 0.6, Some(0.1), 3)),
                fake(vec![1, 0], scores(0.99, 0.95, Some(0.5), 2)),
            ],
        );
        assert_eq!(eliminate(&mut mem), Some(2));
        assert_eq!(mem.len(), 3);

        // Equal through coherence: lowest Dunn goes unless protected.
        let mut mem = memory(
            3,
            vec![
                fake(vec![0, 1], scores(1.0, 0.9, Some(0.4), 2)),
                fake(vec![1, 0], scores(1.0, 0.9, Some(0.2), 2)),
                fake(vec![1, 0], scores(1.0, 0.9, Some(0.3), 2)),
            ],
        );
        assert_eq!(eliminate(&mut mem), Some(1));
    }

    #[test]
    fn protected_pair_rejects_the_newcomer() {
        // Member 0 holds the best coherence, member 1 the best Dunn.
        let mut mem = memory(
            2,
            vec![
                fake(vec![0, 1], scores(1.0, 0.5, Some(0.1), 2)),
                fake(vec![1, 0], scores(0.9, 0.9, Some(0.5), 2)),
            ],
        );
        let newcomer = fake(vec![2, 2], scores(0.95, 0.7, Some(0.2), 1));
        assert_eq!(insert(&mut mem, newcomer), InsertOutcome::Eliminated(2));
        assert_eq!(mem.len(), 2);
        assert_eq!(mem.solutions[0].scores.grounding_coherence, 1.0);
    }

    #[test]
    fn insert_replaces_a_dominated_member() {
        let mut mem = memory(
            3,
            vec![
                fake(vec![0, 1], scores(1.0, 0.9, Some(0.4), 2)),
                fake(vec![0, 1], scores(0.9, 0.8, Some(0.3), 2)),
            ],
        );
        let better = fake(vec![1, 0], scores(0.95, 0.85, Some(0.35), 2));
        assert_eq!(insert(&mut mem, better), InsertOutcome::Replaced(1));
        let other = fake(vec![1, 1], scores(0.5, 0.99, Some(0.1), 1));
        assert_eq!(insert(&mut mem, other), InsertOutcome::Appended);
        assert_eq!(mem.len(), 3);
    }

    #[test]
    fn champion_uses_coherence_band_then_dunn() {
        let mem = memory(
            3,
            vec![
                fake(vec![0, 1], scores(0.99, 0.9, Some(0.4), 2)),
                fake(vec![0, 1], scores(1.0, 0.8, Some(0.3), 2)),
                fake(vec![0, 1], scores(0.9, 0.99, Some(0.5), 2)),
            ],
        );
        assert_eq!(get_best(&mem, 0.0), Some(1));
        assert_eq!(get_best(&mem, 0.02), Some(0));
        assert_eq!(get_best(&mem, 0.5), Some(2));
    }

    #[test]
    fn structural_mutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let single = Assignment::new(vec![1; 8], 3).unwrap();
        let (a, c) = mutate_assignment(&single, 0.5, &mut rng);
        assert_eq!(c, StructuralChange::Added(0));
        assert_eq!(a.populated_count(), 2);

        let full = Assignment::new(vec![0, 1, 2, 0, 1, 2], 3).unwrap();
        let (a, c) = mutate_assignment(&full, 0.5, &mut rng);
        let StructuralChange::Removed(v) = c else {
            panic!("{c:?}")
        };
        assert_eq!(a.populated_count(), 2);
        assert!(a.labels().iter().all(|&l| l != v));

        let one = Assignment::new(vec![0; 4], 1).unwrap();
        assert_eq!(mutate_assignment(&one, 0.5, &mut rng).1, StructuralChange::None);
    }

    #[test]
    fn dunn_error_range() {
        assert_eq!(dunn_error(Some(1.0), Some(2.0)), 0.5);
        assert_eq!(dunn_error(None, Some(2.0)), 1.0);
        assert_eq!(dunn_error(Some(f64::INFINITY), Some(f64::INFINITY)), 0.0);
        assert_eq!(dunn_error(Some(3.0), Some(2.0)), 0.0);
    }

    fn tiny_search(steps: usize) -> (SearchConfig<f64>, Society<f64>) {
        let w = vec![vec![0.9, 0.1], vec![0.1, 0.9]];
        let mut spec = SyntheticSpec::planted(8, w, 6, 1);
        spec.entity_pool = Some(16);
        let society = generate_society(&spec).unwrap().society;
        let config = SearchConfig {
            train: TrainConfig {
                lr_theta: 0.05,
                lr_omega: 0.5,
                lr_lambda: 0.05,
                lambda_decay: 1e-4,
                epochs: 2,
                first_repetitions: 3,
                repetitions: 2,
                max_clusters: 2,
                lagrange_ascent: true,
            },
            steps,
            memory_size: 3,
            mutation_probability: 0.5,
            reassign_probability: 0.2,
            mutation_scale: 0.3,
            lambda0: vec![1.0; 2],
            init_scale: 1.0,
            coherence_tolerance: 0.0,
        };
        (config, society)
    }

    #[test]
    fn zero_steps_returns_best_initial_member() {
        let (config, society) = tiny_search(0);
        let out = run_search(&config, &society, 9).unwrap();
        let init = initial_memory(&config, &society, &SeedTree::new(9)).unwrap();
        assert_eq!(out.best, init.solutions[get_best(&init, 0.0).unwrap()]);
        assert!(out.steps.is_empty());
    }

    #[test]
    fn search_is_reproducible_and_caches_are_fresh() {
        let (config, society) = tiny_search(6);
        let a = run_search(&config, &society, 4).unwrap();
        let b = run_search(&config, &society, 4).unwrap();
        assert_eq!(a.best, b.best);
        assert_eq!(a.steps, b.steps);
        assert!(a.memory.len() <= config.memory_size);
        for s in &a.memory.solutions {
            let fresh = emtrain::score_state(&s.params, &s.assignment, &society).unwrap();
            assert_eq!(fresh, s.scores);
        }
    }

    #[test]
    fn no_mutation_keeps_assignments_to_e_steps() {
        let (mut config, society) = tiny_search(4);
        config.mutation_probability = 0.0;
        let out = run_search(&config, &society, 2).unwrap();
        assert!(out
            .steps
            .iter()
            .all(|s| !s.mutated && s.change == StructuralChange::None));
    }

    fn arb_scores() -> impl Strategy<Value = SocietyScores<f64>> {
        (0u8..5, 0u8..5, prop::option::of(0u8..5), 1usize..4).prop_map(|(c, r, k, p)| {
            scores(
                0.8 + f64::from(c) * 0.05,
                0.5 + f64::from(r) * 0.1,
                k.map(|k| f64::from(k) * 0.1),
                p,
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn protected_members_survive_inserts(
            seq in prop::collection::vec((arb_scores(), prop::collection::vec(0usize..3, 4)), 1..25),
            cap in 2usize..5,
        ) {
            let mut mem = SolutionMemory::new(cap);
            for (s, labels) in seq {
                let before = (mem.solutions.iter().map(|m| m.coherence()).fold(f64::NEG_INFINITY, f64::max),
                              mem.best_dunn());
                insert(&mut mem, fake(labels, s));
                prop_assert!(mem.len() <= cap);
                let chr = mem.solutions.iter().map(|m| m.coherence()).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(chr >= before.0);
                if let Some(d) = before.1 {
                    prop_assert!(mem.best_dunn().unwrap() >= d);
                }
            }
        }
    }
}
