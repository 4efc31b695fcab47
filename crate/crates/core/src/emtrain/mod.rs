//! EM training of a social value system: loss assembly, the Lagrangian
//! objective, E-step reassignment, M-step descent with multiplier updates,
//! and per-epoch telemetry.

mod losses;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub(crate) use losses::{agent_cross_entropy, grounding_term, representativeness_term};
pub use losses::{
    evaluate_losses, lagrangian, loss_conciseness, loss_grounding, loss_representativeness, loss_value_system,
    Lagrangian, LossTerms,
};

use crate::dataset::Society;
use crate::error::{Error, Result};
use crate::metrics::{self, Assignment, SocietyScores};
use crate::netcore::{ModelParameters, ModelTape};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig<S> {
    pub lr_theta: S,
    pub lr_omega: S,
    pub lr_lambda: S,
    pub lambda_decay: S,
    /// Epochs per EM invocation (R).
    pub epochs: usize,
    /// M-step repetitions in the first epoch (b_0).
    pub first_repetitions: usize,
    /// M-step repetitions in later epochs (b_r).
    pub repetitions: usize,
    pub max_clusters: usize,
    pub lagrange_ascent: bool,
}

impl<S: Scalar> TrainConfig<S> {
    pub fn validate(&self, agents: usize) -> Result<()> {
        let positive = |name: &str, v: S| {
            if v > S::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(name, format!("must be positive, got {v}")))
            }
        };
        positive("alpha_theta", self.lr_theta)?;
        positive("alpha_omega", self.lr_omega)?;
        positive("alpha_lambda", self.lr_lambda)?;
        positive("gamma_lambda", self.lambda_decay)?;
        if self.lambda_decay >= S::one() {
            return Err(Error::config("gamma_lambda", "must be below 1"));
        }
        if self.repetitions == 0 {
            return Err(Error::config("b_r", "must be at least 1"));
        }
        if self.first_repetitions < self.repetitions {
            return Err(Error::config("b_0", "must be at least b_r"));
        }
        if self.max_clusters == 0 {
            return Err(Error::config("lmax", "must be at least 1"));
        }
        if self.max_clusters > agents {
            return Err(Error::config(
                "lmax",
                format!("{} clusters for {agents} agents", self.max_clusters),
            ));
        }
        Ok(())
    }
}

/// Multipliers and best observed per-value coherence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagrangeState<S> {
    pub lambda: Vec<S>,
    pub chr_star: Vec<S>,
}

impl<S: Scalar> LagrangeState<S> {
    pub fn new(lambda: Vec<S>) -> Result<Self> {
        if lambda.iter().any(|&l| !(l > S::zero()) || !l.is_finite()) {
            return Err(Error::config("lambda0", "multipliers must be positive"));
        }
        let chr_star = vec![S::zero(); lambda.len()];
        Ok(Self { lambda, chr_star })
    }

    /// One multiplier update after a descent step. Ascent when coherence is
    /// below the best seen, decay otherwise; nothing moves when ascent is
    /// disabled. The best-seen coherence is always tracked.
    pub fn update(&mut self, coherence: &[S], grounding_loss: &[S], config: &TrainConfig<S>) {
        let keep = S::one() - config.lambda_decay;
        for i in 0..self.lambda.len() {
            if config.lagrange_ascent {
                if self.chr_star[i] > coherence[i] {
                    self.lambda[i] = keep * self.lambda[i] + config.lr_lambda * grounding_loss[i];
                } else {
                    self.lambda[i] = keep * self.lambda[i];
                }
            }
            self.chr_star[i] = self.chr_star[i].max(coherence[i]);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState<S> {
    pub params: ModelParameters<S>,
    pub assignment: Assignment,
    pub lagrange: LagrangeState<S>,
}

impl<S: Scalar> TrainState<S> {
    pub fn new(params: ModelParameters<S>, assignment: Assignment, lagrange: LagrangeState<S>) -> Result<Self> {
        if assignment.max_clusters() > params.cluster_count() {
            return Err(Error::Dimension {
                expected: params.cluster_count(),
                got: assignment.max_clusters(),
            });
        }
        if lagrange.lambda.len() != params.value_count() {
            return Err(Error::Dimension {
                expected: params.value_count(),
                got: lagrange.lambda.len(),
            });
        }
        Ok(Self {
            params,
            assignment,
            lagrange,
        })
    }
}

fn grounding_coherence_on<S: Scalar>(
    tape: &ModelTape<S>,
    society: &Society<S>,
) -> Result<metrics::GroundingCoherence<S>> {
    metrics::coherence_grounding(|i, e| tape.alignment(i, e), &society.grounding)
}

/// Headline metrics from a cached forward pass.
pub fn score_tape<S: Scalar>(
    tape: &ModelTape<S>,
    society: &Society<S>,
    assignment: &Assignment,
) -> Result<SocietyScores<S>> {
    let g = grounding_coherence_on(tape, society)?;
    let f = |l: usize, e| tape.score(l, e);
    let representativeness = metrics::representativeness(f, assignment, &society.vs)?;
    let conciseness = metrics::conciseness(f, assignment, &society.vs)?;
    Ok(SocietyScores {
        coherence: g.per_value,
        grounding_coherence: g.mean,
        representativeness,
        conciseness,
        dunn: metrics::dunn_index(representativeness, conciseness),
        populated: assignment.populated_count(),
    })
}

pub fn score_state<S: Scalar>(
    params: &ModelParameters<S>,
    assignment: &Assignment,
    society: &Society<S>,
) -> Result<SocietyScores<S>> {
    let tape = ModelTape::forward(params, &society.entities)?;
    score_tape(&tape, society, assignment)
}

/// Reassigns every agent to the populated cluster whose function disagrees
/// least with its preferences; ties go to the lowest index.
pub fn e_step_on<S: Scalar>(tape: &ModelTape<S>, society: &Society<S>, current: &Assignment) -> Result<Assignment> {
    let populated = current.populated();
    let mut labels = Vec::with_capacity(current.len());
    for agent in society.vs.agents() {
        let mut best: Option<(S, usize)> = None;
        for &l in &populated {
            let d = metrics::discordance_agent(|e| tape.score(l, e), agent)?;
            if best.map_or(true, |(b, _)| d < b) {
                best = Some((d, l));
            }
        }
        labels.push(best.map_or(0, |(_, l)| l));
    }
    Assignment::new(labels, current.max_clusters())
}

pub fn e_step<S: Scalar>(
    params: &ModelParameters<S>,
    society: &Society<S>,
    current: &Assignment,
) -> Result<Assignment> {
    let tape = ModelTape::forward(params, &society.entities)?;
    e_step_on(&tape, society, current)
}

/// Outcome of the last repetition of an M-step.
#[derive(Clone, Debug)]
pub struct MStepReport<S> {
    /// Losses at the start of the last repetition (the point the gradient
    /// was taken at).
    pub losses: LossTerms<S>,
    /// Per-value coherence after the last update.
    pub coherence: Vec<S>,
}

fn m_step_on<S: Scalar>(
    state: &mut TrainState<S>,
    config: &TrainConfig<S>,
    society: &Society<S>,
    repetitions: usize,
    mut tape: ModelTape<S>,
) -> Result<(ModelTape<S>, MStepReport<S>)> {
    if repetitions == 0 {
        return Err(Error::config("repetitions", "must be at least 1"));
    }
    let mut report = None;
    for _ in 0..repetitions {
        let objective = Lagrangian::new(society, &state.assignment, &state.lagrange.lambda)?;
        let (losses, grad) = objective.evaluate_on(&state.params, &tape)?;
        state.params.descend(&grad, config.lr_theta, config.lr_omega);
        if let Some(index) = state.params.first_non_finite() {
            return Err(Error::Divergence { index });
        }
        tape = ModelTape::forward(&state.params, &society.entities)?;
        let coherence = grounding_coherence_on(&tape, society)?.per_value;
        state.lagrange.update(&coherence, &losses.grounding, config);
        report = Some(MStepReport { losses, coherence });
    }
    Ok((tape, report.expect("at least one repetition")))
}

/// `repetitions` full-batch descent steps on the Lagrangian, each followed
/// by a multiplier update.
pub fn m_step<S: Scalar>(
    state: &mut TrainState<S>,
    config: &TrainConfig<S>,
    society: &Society<S>,
    repetitions: usize,
) -> Result<MStepReport<S>> {
    let tape = ModelTape::forward(&state.params, &society.entities)?;
    Ok(m_step_on(state, config, society, repetitions, tape)?.1)
}

/// Telemetry row written after each epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct EpochRecord<S> {
    pub epoch: usize,
    pub scores: SocietyScores<S>,
    pub lambda: Vec<S>,
    pub loss_representativeness: S,
    pub loss_conciseness: S,
    pub loss_grounding: Vec<S>,
    pub lagrangian: S,
}

#[derive(Clone, Debug)]
pub struct EmRun<S> {
    pub state: TrainState<S>,
    pub epochs: Vec<EpochRecord<S>>,
    pub scores: Option<SocietyScores<S>>,
}

/// Runs `config.epochs` EM epochs. The E-step is skipped in the first epoch
/// when `assignment_supplied` is set.
pub fn run_em<S: Scalar>(
    mut state: TrainState<S>,
    config: &TrainConfig<S>,
    society: &Society<S>,
    assignment_supplied: bool,
) -> Result<EmRun<S>> {
    config.validate(society.agent_count())?;
    let mut epochs = Vec::with_capacity(config.epochs);
    if config.epochs == 0 {
        return Ok(EmRun {
            state,
            epochs,
            scores: None,
        });
    }
    let mut tape = ModelTape::forward(&state.params, &society.entities)?;
    let mut scores = None;
    for r in 0..config.epochs {
        if !(r == 0 && assignment_supplied) {
            state.assignment = e_step_on(&tape, society, &state.assignment)?;
        }
        let reps = if r == 0 {
            config.first_repetitions
        } else {
            config.repetitions
        };
        let (next, report) = m_step_on(&mut state, config, society, reps, tape)?;
        tape = next;
        let s = score_tape(&tape, society, &state.assignment)?;
        epochs.push(EpochRecord {
            epoch: r,
            scores: s.clone(),
            lambda: state.lagrange.lambda.clone(),
            loss_representativeness: report.losses.representativeness,
            loss_conciseness: report.losses.conciseness,
            loss_grounding: report.losses.grounding.clone(),
            lagrangian: report.losses.lagrangian,
        });
        scores = Some(s);
    }
    Ok(EmRun { state, epochs, scores })
}

fn fmt_opt<S: Scalar>(x: Option<S>) -> String {
    match x {
        None => String::new(),
        Some(v) if v.is_infinite() => "inf".into(),
        Some(v) => v.to_string(),
    }
}

/// Writes epoch telemetry as CSV with one column per value for coherence,
/// multipliers and grounding losses.
pub fn write_epoch_csv<S: Scalar, W: Write>(records: &[EpochRecord<S>], value_names: &[String], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["epoch".to_string()];
    header.extend(value_names.iter().map(|v| format!("coherence_{v}")));
    header.extend(["representativeness", "conciseness", "dunn", "populated"].map(String::from));
    header.extend(value_names.iter().map(|v| format!("lambda_{v}")));
    header.extend(["loss_representativeness", "loss_conciseness"].map(String::from));
    header.extend(value_names.iter().map(|v| format!("loss_grounding_{v}")));
    header.push("lagrangian".into());
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.epoch.to_string()];
        row.extend(r.scores.coherence.iter().map(|c| c.to_string()));
        row.push(r.scores.representativeness.to_string());
        row.push(fmt_opt(r.scores.conciseness));
        row.push(fmt_opt(r.scores.dunn));
        row.push(r.scores.populated.to_string());
        row.extend(r.lambda.iter().map(|c| c.to_string()));
        row.push(r.loss_representativeness.to_string());
        row.push(r.loss_conciseness.to_string());
        row.extend(r.loss_grounding.iter().map(|c| c.to_string()));
        row.push(r.lagrangian.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{init_parameters, Architecture};
    use crate::prefmodel::{bradley_terry, bt_cross_entropy, jsd_bernoulli};
    use crate::rng::SeedTree;
    use crate::synthlab::{generate_society, SyntheticSpec};

    fn small_society() -> Society<f64> {
        let w = vec![vec![0.7, 0.2, 0.1], vec![0.1, 0.3, 0.6]];
        let mut spec = SyntheticSpec::planted(6, w, 5, 4);
        spec.entity_pool = Some(12);
        spec.noise = 0.2;
        generate_society(&spec).unwrap().society
    }

    fn params(clusters: usize) -> ModelParameters<f64> {
        init_parameters(&SeedTree::new(11), &Architecture::standard(3), 3, clusters, 1.0).unwrap()
    }

    fn config() -> TrainConfig<f64> {
        TrainConfig {
            lr_theta: 0.01,
            lr_omega: 0.05,
            lr_lambda: 0.005,
            lambda_decay: 1e-4,
            epochs: 2,
            first_repetitions: 3,
            repetitions: 2,
            max_clusters: 3,
            lagrange_ascent: true,
        }
    }

    fn mean(xs: impl Iterator<Item = f64>) -> f64 {
        let v: Vec<f64> = xs.collect();
        v.iter().sum::<f64>() / v.len() as f64
    }

    #[test]
    fn losses_match_direct_loops() {
        let society = small_society();
        let p = params(3);
        let a = Assignment::new(vec![0, 2, 2, 0, 2, 0], 3).unwrap();
        let lambda = [0.3, 0.7, 1.1];
        let feat = |e: crate::dataset::EntityId| society.entities.features(e).to_vec();
        let score = |l: usize, e| p.function(l).evaluate(&feat(e)).unwrap();
        let align = |i: usize, e| p.grounding.nets[i].forward(&feat(e)).unwrap();

        let lr = mean(society.vs.agents().iter().enumerate().map(|(j, ag)| {
            let l = a.cluster_of(j);
            mean(ag.records.iter().map(|r| {
                bt_cross_entropy(
                    bradley_terry(score(l, r.left), score(l, r.right)).unwrap(),
                    r.label.value(),
                )
            }))
        }));
        let lc = mean(society.vs.agents().iter().map(|ag| {
            mean(ag.records.iter().map(|r| {
                let p0 = bradley_terry(score(0, r.left), score(0, r.right)).unwrap().get();
                let p2 = bradley_terry(score(2, r.left), score(2, r.right)).unwrap().get();
                jsd_bernoulli(p0, p2)
            }))
        }));
        let lv: Vec<f64> = (0..3)
            .map(|i| {
                mean(society.grounding.value(i).iter().filter(|ag| !ag.is_empty()).map(|ag| {
                    mean(ag.records.iter().map(|r| {
                        bt_cross_entropy(
                            bradley_terry(align(i, r.left), align(i, r.right)).unwrap(),
                            r.label.value(),
                        )
                    }))
                }))
            })
            .collect();

        let tape = ModelTape::forward(&p, &society.entities).unwrap();
        let t = evaluate_losses(&tape, &society, &a, &lambda, None).unwrap();
        assert!((t.representativeness - lr).abs() < 1e-12);
        assert!((t.conciseness - lc).abs() < 1e-12);
        assert_eq!(t.concise_pair, Some((0, 2)));
        for i in 0..3 {
            assert!((t.grounding[i] - lv[i]).abs() < 1e-12);
        }
        let expected = lr - lc + lambda.iter().zip(&lv).map(|(a, b)| a * b).sum::<f64>();
        assert!((t.lagrangian - expected).abs() < 1e-12);
        assert!((lagrangian(&p, &a, &lambda, &society).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn conciseness_is_zero_with_one_populated_cluster() {
        let society = small_society();
        let a = Assignment::single(6, 3);
        assert_eq!(loss_conciseness(&params(3), &a, &society).unwrap(), 0.0);
    }

    #[test]
    fn multiplier_ascent_and_decay() {
        let mut cfg = config();
        cfg.lambda_decay = 0.1;
        cfg.lr_lambda = 0.5;
        let mut st = LagrangeState::new(vec![1.0, 1.0]).unwrap();
        st.chr_star = vec![0.9, 0.5];
        st.update(&[0.8, 0.6], &[2.0, 3.0], &cfg);
        assert_eq!(st.lambda, vec![0.9 * 1.0 + 0.5 * 2.0, 0.9]);
        assert_eq!(st.chr_star, vec![0.9, 0.6]);

        cfg.lagrange_ascent = false;
        let mut st = LagrangeState::new(vec![1.0, 1.0]).unwrap();
        st.chr_star = vec![0.9, 0.5];
        st.update(&[0.8, 0.6], &[2.0, 3.0], &cfg);
        assert_eq!(st.lambda, vec![1.0, 1.0]);
        assert_eq!(st.chr_star, vec![0.9, 0.6]);

        assert!(LagrangeState::<f64>::new(vec![0.0]).is_err());
    }

    #[test]
    fn e_step_uses_populated_clusters_and_lowest_index_on_ties() {
        let society = small_society();
        let mut p = params(3);
        let omega = p.clusters[2].omega.clone();
        p.clusters[0].omega = omega;
        // Clusters 0 and 2 are identical; cluster 0 is empty.
        let all_two = Assignment::new(vec![2; 6], 3).unwrap();
        assert_eq!(e_step(&p, &society, &all_two).unwrap().labels(), &[2; 6]);
        let split = Assignment::new(vec![0, 2, 2, 2, 2, 2], 3).unwrap();
        assert_eq!(e_step(&p, &society, &split).unwrap().labels(), &[0; 6]);
    }

    #[test]
    fn e_step_never_increases_discordance() {
        let society = small_society();
        let p = params(3);
        let a = Assignment::new(vec![0, 1, 2, 0, 1, 2], 3).unwrap();
        let tape = ModelTape::forward(&p, &society.entities).unwrap();
        let f = |l: usize, e| tape.score(l, e);
        let before = metrics::representativeness(f, &a, &society.vs).unwrap();
        let b = e_step_on(&tape, &society, &a).unwrap();
        let after = metrics::representativeness(f, &b, &society.vs).unwrap();
        assert!(after >= before);
    }

    #[test]
    fn run_em_zero_epochs_is_identity() {
        let society = small_society();
        let mut cfg = config();
        cfg.epochs = 0;
        let state = TrainState::new(
            params(3),
            Assignment::single(6, 3),
            LagrangeState::new(vec![0.01; 3]).unwrap(),
        )
        .unwrap();
        let run = run_em(state.clone(), &cfg, &society, false).unwrap();
        assert_eq!(run.state, state);
        assert!(run.epochs.is_empty() && run.scores.is_none());
    }

    #[test]
    fn supplied_assignment_survives_first_epoch() {
        let society = small_society();
        let mut cfg = config();
        cfg.epochs = 1;
        let a = Assignment::new(vec![1, 0, 1, 0, 1, 0], 3).unwrap();
        let state = TrainState::new(params(3), a.clone(), LagrangeState::new(vec![0.01; 3]).unwrap()).unwrap();
        let run = run_em(state, &cfg, &society, true).unwrap();
        assert_eq!(run.state.assignment, a);
        assert_eq!(run.epochs.len(), 1);
        let fresh = score_state(&run.state.params, &run.state.assignment, &society).unwrap();
        assert_eq!(run.scores.unwrap(), fresh);
    }

    #[test]
    fn small_steps_decrease_the_lagrangian() {
        let society = small_society();
        let mut cfg = config();
        cfg.lr_theta = 1e-3;
        cfg.lr_omega = 1e-3;
        let a = Assignment::new(vec![0, 1, 0, 1, 0, 1], 3).unwrap();
        let lambda = vec![0.5; 3];
        let mut state = TrainState::new(params(3), a.clone(), LagrangeState::new(lambda.clone()).unwrap()).unwrap();
        let before = lagrangian(&state.params, &a, &lambda, &society).unwrap();
        cfg.lagrange_ascent = false;
        m_step(&mut state, &cfg, &society, 1).unwrap();
        let after = lagrangian(&state.params, &a, &lambda, &society).unwrap();
        assert!(after < before, "{after} >= {before}");
    }

    #[test]
    fn config_validation_names_fields() {
        let mut cfg = config();
        cfg.max_clusters = 7;
        match cfg.validate(6) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "lmax"),
            other => panic!("{other:?}"),
        }
        let mut cfg = config();
        cfg.first_repetitions = 1;
        assert!(cfg.validate(6).is_err());
    }

    #[test]
    fn epoch_csv_has_one_row_per_epoch() {
        let society = small_society();
        let state = TrainState::new(
            params(3),
            Assignment::single(6, 3),
            LagrangeState::new(vec![0.01; 3]).unwrap(),
        )
        .unwrap();
        let run = run_em(state, &config(), &society, false).unwrap();
        let mut buf = Vec::new();
        write_epoch_csv(&run.epochs, &society.value_names, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("epoch,coherence_v1,coherence_v2,coherence_v3,representativeness"));
    }
}
