use serde::{Deserialize, Serialize};

use super::{match_targets, prepare, segment, select_pitches, MatchConfig, NoteSegment};
use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::params::Tier;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub tier: Tier,
    pub dimension: usize,
    /// Final loss per seed, in seed order.
    pub losses: Vec<f64>,
    pub median: f64,
    /// Runs that ended with detune pinned at a bound.
    pub detune_at_bound: usize,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Runs every tier on the same targets with the same budget, once per seed.
/// Rows are sorted by tier dimension.
pub fn ablate_targets(
    targets: &[NoteSegment],
    tiers: &[Tier],
    base: &MatchConfig,
    seeds: &[u64],
) -> Result<Vec<AblationRow>> {
    if tiers.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument("ablation needs at least one tier and one seed".into()));
    }
    let mut tiers = tiers.to_vec();
    tiers.sort_by_key(|t| t.dimension());
    tiers.dedup();
    tiers
        .into_iter()
        .map(|tier| {
            let mut losses = Vec::with_capacity(seeds.len());
            let mut pinned = 0;
            for &seed in seeds {
                let config = MatchConfig {
                    tier,
                    cma: base.cma.with_seed(seed),
                    ..*base
                };
                let out = match_targets(targets, &config, &mut |_| {})?;
                losses.push(out.report.final_loss);
                pinned += usize::from(out.report.detune_at_bound());
            }
            Ok(AblationRow {
                tier,
                dimension: tier.dimension(),
                median: median(&losses),
                losses,
                detune_at_bound: pinned,
            })
        })
        .collect()
}

/// [`ablate_targets`] on the representative notes of a recording.
pub fn ablate(audio: &AudioBuffer, tiers: &[Tier], base: &MatchConfig, seeds: &[u64]) -> Result<Vec<AblationRow>> {
    let audio = prepare(audio);
    let picked = select_pitches(&segment(&audio)?, base.pitches);
    ablate_targets(&picked, tiers, base, seeds)
}
