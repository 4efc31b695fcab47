use crate::dataset::{AgentDataset, Society};
use crate::error::{Error, Result};
use crate::metrics::Assignment;
use crate::netcore::{Cotangent, ModelParameters, ModelTape, Objective};
use crate::prefmodel::{cross_entropy_grad_diff, cross_entropy_raw, jsd_bernoulli, jsd_grad_diff, logistic};
use crate::scalar::{from_usize, Scalar};

/// Every loss term at one parameter point.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTerms<S> {
    pub representativeness: S,
    pub conciseness: S,
    /// Cluster pair achieving the conciseness minimum.
    pub concise_pair: Option<(usize, usize)>,
    pub grounding: Vec<S>,
    pub lagrangian: S,
}

impl<S: Scalar> LossTerms<S> {
    pub fn value_system(&self) -> S {
        self.representativeness - self.conciseness
    }
}

fn check_assignment<S: Scalar>(assignment: &Assignment, society: &Society<S>, clusters: usize) -> Result<()> {
    if assignment.len() != society.agent_count() {
        return Err(Error::Data(format!(
            "assignment covers {} agents, dataset has {}",
            assignment.len(),
            society.agent_count()
        )));
    }
    if assignment.max_clusters() > clusters {
        return Err(Error::Dimension {
            expected: clusters,
            got: assignment.max_clusters(),
        });
    }
    Ok(())
}

/// Cross-entropy of a score vector against each agent's labels, averaged per
/// agent then over contributing agents. Adds `scale * dL/dscore` into `grad`.
pub(crate) fn agent_cross_entropy<S: Scalar>(
    scores: &[S],
    agents: &[&AgentDataset],
    scale: S,
    mut grad: Option<&mut [S]>,
) -> S {
    let n_agents = from_usize::<S>(agents.len());
    let mut total = S::zero();
    for agent in agents {
        let inv = S::one() / (from_usize::<S>(agent.len()) * n_agents);
        let mut acc = S::zero();
        for r in &agent.records {
            let d = scores[r.left.index()] - scores[r.right.index()];
            let p = logistic(d);
            let y = r.label.value::<S>();
            acc += cross_entropy_raw(p, y);
            if let Some(g) = grad.as_deref_mut() {
                let dd = scale * inv * cross_entropy_grad_diff(p, y);
                g[r.left.index()] += dd;
                g[r.right.index()] -= dd;
            }
        }
        total += acc / from_usize(agent.len());
    }
    total / n_agents
}

/// Cluster cross-entropy term of the loss. Gradient contributions go to the
/// cluster score cotangents.
pub(crate) fn representativeness_term<S: Scalar>(
    tape: &ModelTape<S>,
    society: &Society<S>,
    assignment: &Assignment,
    mut cot: Option<&mut Cotangent<S>>,
) -> S {
    let agents = society.vs.agents();
    let n_agents = from_usize::<S>(agents.len());
    let mut total = S::zero();
    for (j, agent) in agents.iter().enumerate() {
        let l = assignment.cluster_of(j);
        let grad = cot.as_deref_mut().map(|c| c.d_scores[l].as_mut_slice());
        // One agent at a time keeps the per-agent average and the 1/|J| factor.
        total += agent_cross_entropy(tape.scores(l), &[agent], S::one() / n_agents, grad);
    }
    total / n_agents
}

/// Grounding cross-entropy of value `i`; gradient scaled by `scale`.
pub(crate) fn grounding_term<S: Scalar>(
    tape: &ModelTape<S>,
    society: &Society<S>,
    i: usize,
    scale: S,
    cot: Option<&mut Cotangent<S>>,
) -> Result<S> {
    let contributing: Vec<&AgentDataset> = society.grounding.value(i).iter().filter(|a| !a.is_empty()).collect();
    if contributing.is_empty() {
        return Err(Error::Data(format!(
            "value `{}` has no grounding records",
            society.value_names[i]
        )));
    }
    let grad = cot.map(|c| c.d_alignments[i].as_mut_slice());
    Ok(agent_cross_entropy(tape.alignments(i), &contributing, scale, grad))
}

/// Mean JSD between two clusters' preference probabilities over every
/// agent's pairs.
fn pair_divergence<S: Scalar>(a: &[S], b: &[S], agents: &[AgentDataset]) -> S {
    let mut total = S::zero();
    for agent in agents {
        let mut acc = S::zero();
        for r in &agent.records {
            let p = logistic(a[r.left.index()] - a[r.right.index()]);
            let q = logistic(b[r.left.index()] - b[r.right.index()]);
            acc += jsd_bernoulli(p, q);
        }
        total += acc / from_usize(agent.len());
    }
    total / from_usize(agents.len())
}

fn pair_divergence_grad<S: Scalar>(a: &[S], b: &[S], agents: &[AgentDataset], scale: S, ga: &mut [S], gb: &mut [S]) {
    let n_agents = from_usize::<S>(agents.len());
    for agent in agents {
        let inv = scale / (from_usize::<S>(agent.len()) * n_agents);
        for r in &agent.records {
            let (li, ri) = (r.left.index(), r.right.index());
            let da = a[li] - a[ri];
            let db = b[li] - b[ri];
            let p = logistic(da);
            let q = logistic(db);
            let ja = inv * jsd_grad_diff(p, da, q);
            let jb = inv * jsd_grad_diff(q, db, p);
            ga[li] += ja;
            ga[ri] -= ja;
            gb[li] += jb;
            gb[ri] -= jb;
        }
    }
}

/// Evaluates every loss on a cached forward pass. When `cot` is given, the
/// gradient of the Lagrangian `L_r - L_c + lambda . L_V` with respect to the
/// cached scores and alignments is accumulated into it.
pub fn evaluate_losses<S: Scalar>(
    tape: &ModelTape<S>,
    society: &Society<S>,
    assignment: &Assignment,
    lambda: &[S],
    mut cot: Option<&mut Cotangent<S>>,
) -> Result<LossTerms<S>> {
    let m = society.value_count();
    if lambda.len() != m {
        return Err(Error::Dimension {
            expected: m,
            got: lambda.len(),
        });
    }
    let agents = society.vs.agents();
    if agents.is_empty() {
        return Err(Error::Data("value-system dataset has no agents".into()));
    }
    let representativeness = representativeness_term(tape, society, assignment, cot.as_deref_mut());

    // Conciseness: minimum over populated pairs, first pair on ties.
    let populated = assignment.populated();
    let mut best: Option<(S, usize, usize)> = None;
    for (k, &l1) in populated.iter().enumerate() {
        for &l2 in &populated[k + 1..] {
            let d = pair_divergence(tape.scores(l1), tape.scores(l2), agents);
            if best.map_or(true, |(b, _, _)| d < b) {
                best = Some((d, l1, l2));
            }
        }
    }
    let (conciseness, concise_pair) = match best {
        Some((d, l1, l2)) => {
            if let Some(c) = cot.as_deref_mut() {
                let mut ga = std::mem::take(&mut c.d_scores[l1]);
                let mut gb = std::mem::take(&mut c.d_scores[l2]);
                pair_divergence_grad(tape.scores(l1), tape.scores(l2), agents, -S::one(), &mut ga, &mut gb);
                c.d_scores[l1] = ga;
                c.d_scores[l2] = gb;
            }
            (d, Some((l1, l2)))
        }
        None => (S::zero(), None),
    };

    // Grounding: per value, contributing agents only.
    let mut grounding = Vec::with_capacity(m);
    for i in 0..m {
        grounding.push(grounding_term(tape, society, i, lambda[i], cot.as_deref_mut())?);
    }

    let mut lagrangian = representativeness - conciseness;
    for (l, g) in lambda.iter().zip(&grounding) {
        lagrangian += *l * *g;
    }
    if !lagrangian.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok(LossTerms {
        representativeness,
        conciseness,
        concise_pair,
        grounding,
        lagrangian,
    })
}

fn terms<S: Scalar>(
    params: &ModelParameters<S>,
    assignment: &Assignment,
    society: &Society<S>,
) -> Result<LossTerms<S>> {
    check_assignment(assignment, society, params.cluster_count())?;
    let tape = ModelTape::forward(params, &society.entities)?;
    let zeros = vec![S::zero(); society.value_count()];
    evaluate_losses(&tape, society, assignment, &zeros, None)
}

/// Mean per-agent cross-entropy of each agent's pairs under its cluster's
/// function.
pub fn loss_representativeness<S: Scalar>(
    params: &ModelParameters<S>,
    assignment: &Assignment,
    society: &Society<S>,
) -> Result<S> {
    Ok(terms(params, assignment, society)?.representativeness)
}

/// Smallest mean Jensen-Shannon divergence between two populated clusters;
/// 0 with fewer than two.
pub fn loss_conciseness<S: Scalar>(
    params: &ModelParameters<S>,
    assignment: &Assignment,
    society: &Society<S>,
) -> Result<S> {
    Ok(terms(params, assignment, society)?.conciseness)
}

pub fn loss_value_system<S: Scalar>(
    params: &ModelParameters<S>,
    assignment: &Assignment,
    society: &Society<S>,
) -> Result<S> {
    Ok(terms(params, assignment, society)?.value_system())
}

/// Per-value grounding cross-entropy.
pub fn loss_grounding<S: Scalar>(params: &ModelParameters<S>, society: &Society<S>) -> Result<Vec<S>> {
    let assignment = Assignment::single(society.agent_count(), params.cluster_count());
    Ok(terms(params, &assignment, society)?.grounding)
}

pub fn lagrangian<S: Scalar>(
    params: &ModelParameters<S>,
    assignment: &Assignment,
    lambda: &[S],
    society: &Society<S>,
) -> Result<S> {
    Ok(Lagrangian::new(society, assignment, lambda)?.value(params)?)
}

/// The descent-side objective `L_VS + lambda . L_V` for a fixed assignment.
pub struct Lagrangian<'a, S> {
    society: &'a Society<S>,
    assignment: &'a Assignment,
    lambda: &'a [S],
}

impl<'a, S: Scalar> Lagrangian<'a, S> {
    pub fn new(society: &'a Society<S>, assignment: &'a Assignment, lambda: &'a [S]) -> Result<Self> {
        if lambda.len() != society.value_count() {
            return Err(Error::Dimension {
                expected: society.value_count(),
                got: lambda.len(),
            });
        }
        Ok(Self {
            society,
            assignment,
            lambda,
        })
    }

    /// Loss terms and gradient from an existing forward pass.
    pub fn evaluate_on(
        &self,
        params: &ModelParameters<S>,
        tape: &ModelTape<S>,
    ) -> Result<(LossTerms<S>, ModelParameters<S>)> {
        check_assignment(self.assignment, self.society, params.cluster_count())?;
        let mut cot = Cotangent::zeros(
            params.value_count(),
            params.cluster_count(),
            self.society.entities.len(),
        );
        let t = evaluate_losses(tape, self.society, self.assignment, self.lambda, Some(&mut cot))?;
        let grad = tape.backward(params, &self.society.entities, &cot)?;
        Ok((t, grad))
    }
}

impl<S: Scalar> Objective<S> for Lagrangian<'_, S> {
    fn value(&self, params: &ModelParameters<S>) -> Result<S> {
        check_assignment(self.assignment, self.society, params.cluster_count())?;
        let tape = ModelTape::forward(params, &self.society.entities)?;
        Ok(evaluate_losses(&tape, self.society, self.assignment, self.lambda, None)?.lagrangian)
    }

    fn value_and_gradient(&self, params: &ModelParameters<S>) -> Result<(S, ModelParameters<S>)> {
        let tape = ModelTape::forward(params, &self.society.entities)?;
        let (t, g) = self.evaluate_on(params, &tape)?;
        Ok((t.lagrangian, g))
    }
}
