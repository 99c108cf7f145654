//! Per-video identity clustering and the anonymity verification loop.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::config::RetryDeltas;
use crate::error::{DimensionError, RetryExhaustedError};
use crate::exec::mix_seed;
use crate::model::{cosine_distance, Embedding, InpaintParams};

/// Upper end of the guidance band retries may push towards.
pub const MAX_RETRY_GUIDANCE: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCluster {
    pub cluster_id: usize,
    pub scene_ids: BTreeSet<usize>,
    pub centroid: Embedding,
    /// Shared by every scene of the cluster so they inpaint the same identity.
    pub anon_seed: u64,
    #[serde(skip)]
    sum: Vec<f64>,
}

impl IdentityCluster {
    fn found(cluster_id: usize, scene_id: usize, embedding: &Embedding, run_seed: u64) -> Self {
        Self {
            cluster_id,
            scene_ids: BTreeSet::from([scene_id]),
            centroid: embedding.clone(),
            anon_seed: mix_seed(run_seed, cluster_id as u64),
            sum: embedding.values().to_vec(),
        }
    }

    fn absorb(&mut self, scene_id: usize, embedding: &Embedding) {
        self.scene_ids.insert(scene_id);
        for (s, v) in self.sum.iter_mut().zip(embedding.values()) {
            *s += v;
        }
        // The running sum of unit vectors only vanishes for exactly
        // cancelling members; keep the old centroid then.
        if let Ok(c) = Embedding::new(self.sum.clone()) {
            self.centroid = c;
        }
    }
}

/// Greedy first-fit clustering in ascending scene id: a scene joins the first
/// cluster whose centroid lies within `max_distance`, otherwise it founds a
/// new cluster.
pub fn cluster_scenes(
    reps: &BTreeMap<usize, Embedding>,
    max_distance: f64,
    run_seed: u64,
) -> Result<Vec<IdentityCluster>, DimensionError> {
    let mut clusters: Vec<IdentityCluster> = Vec::new();
    for (&scene_id, emb) in reps {
        let mut target = None;
        for (k, c) in clusters.iter().enumerate() {
            if cosine_distance(emb, &c.centroid)? <= max_distance {
                target = Some(k);
                break;
            }
        }
        match target {
            Some(k) => clusters[k].absorb(scene_id, emb),
            None => {
                if let Some(first) = clusters.first() {
                    if first.centroid.dim() != emb.dim() {
                        return Err(DimensionError::Mismatch { left: first.centroid.dim(), right: emb.dim() });
                    }
                }
                let id = clusters.len();
                clusters.push(IdentityCluster::found(id, scene_id, emb, run_seed));
            }
        }
    }
    Ok(clusters)
}

/// `(accepted, distance)`; a distance exactly at the threshold is accepted.
pub fn verify_anonymity(orig: &Embedding, anon: &Embedding, threshold: f64) -> Result<(bool, f64), DimensionError> {
    let d = cosine_distance(orig, anon)?;
    Ok((d >= threshold, d))
}

/// Parameters for retry `attempt` (0 = first try).
///
/// Steps grow by `deltas.steps` per attempt; guidance grows by
/// `deltas.guidance` up to 20 (never below the base); every control strength
/// shrinks by `deltas.control` down to 0; the seed advances by one.
pub fn retry_schedule(
    attempt: u32,
    base: &InpaintParams,
    deltas: &RetryDeltas,
    max_retries: u32,
) -> Result<InpaintParams, RetryExhaustedError> {
    if attempt > max_retries {
        return Err(RetryExhaustedError { attempt, max_retries });
    }
    let a = f64::from(attempt);
    Ok(InpaintParams {
        steps: base.steps + attempt * deltas.steps,
        guidance: (base.guidance + a * deltas.guidance).min(MAX_RETRY_GUIDANCE).max(base.guidance),
        control_strengths: base
            .control_strengths
            .iter()
            .map(|(&c, &v)| (c, (v - a * deltas.control).max(0.0).min(v)))
            .collect(),
        seed: base.seed.wrapping_add(u64::from(attempt)),
        prompt_pair: base.prompt_pair.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationOutcome {
    pub distance: f64,
    pub accepted: bool,
    pub attempts: u32,
    pub final_params: InpaintParams,
}

/// Runs `attempt_fn` with the scheduled parameters until the returned
/// distance reaches `threshold` or `max_retries` retries are spent. The
/// artifact produced by the last attempt is returned alongside the outcome;
/// `accepted` is false when the budget ran out.
pub fn run_verification<T, E, F>(
    base: &InpaintParams,
    deltas: &RetryDeltas,
    max_retries: u32,
    threshold: f64,
    mut attempt_fn: F,
) -> Result<(VerificationOutcome, T), E>
where
    F: FnMut(u32, &InpaintParams) -> Result<(f64, T), E>,
{
    let mut attempt = 0;
    loop {
        let params = retry_schedule(attempt, base, deltas, max_retries).expect("attempt within budget");
        let (distance, artifact) = attempt_fn(attempt, &params)?;
        let accepted = distance >= threshold;
        if accepted || attempt == max_retries {
            let outcome = VerificationOutcome { distance, accepted, attempts: attempt + 1, final_params: params };
            return Ok((outcome, artifact));
        }
        attempt += 1;
    }
}
