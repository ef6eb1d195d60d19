use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::lpcs::{lpcs, FeatureExtractor};
use crate::error::Result;
use crate::geometry::{OrientedBox3, PointCloud, RigidTransform};
use crate::raycast::{raycast_fpa, BeamTable, RaycastConfig};

/// A real frame together with the dense scene it should be re-simulated from.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePair {
    /// Global frame.
    pub scene: PointCloud,
    /// Sensor → global.
    pub sensor_pose: RigidTransform,
    /// Sensor frame.
    pub real: PointCloud,
    /// Sensor frame.
    pub boxes: Vec<OrientedBox3>,
    /// Rays to cast for this frame.
    pub beams: BeamTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedConfig {
    pub config: RaycastConfig,
    /// Mean LPCS over the pairs; absent when simulation failed.
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Tie-break among equal scores: larger images first, then narrower peaks,
/// then the remaining fields so the order is total.
fn config_order(a: &RaycastConfig, b: &RaycastConfig) -> Ordering {
    let pixels = |c: &RaycastConfig| c.width as u128 * c.height as u128;
    pixels(b)
        .cmp(&pixels(a))
        .then(a.peak_width.total_cmp(&b.peak_width))
        .then(a.width.cmp(&b.width))
        .then(a.height.cmp(&b.height))
        .then(a.idw_power.total_cmp(&b.idw_power))
        .then(a.azimuth_start.total_cmp(&b.azimuth_start))
        .then(a.azimuth_span.total_cmp(&b.azimuth_span))
        .then(a.elevation_min.total_cmp(&b.elevation_min))
        .then(a.elevation_max.total_cmp(&b.elevation_max))
}

/// Scored entries ascending, failed ones after them.
pub fn rank_order(a: &RankedConfig, b: &RankedConfig) -> Ordering {
    match (a.score, b.score) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    }
    .then_with(|| config_order(&a.config, &b.config))
}

fn evaluate(config: &RaycastConfig, pairs: &[ScenePair], extractor: &dyn FeatureExtractor) -> Result<f64> {
    let mut total = 0.0;
    for p in pairs {
        let sim = raycast_fpa(&p.scene, &p.sensor_pose, &p.beams, config)?;
        total += lpcs(&sim.cloud, &p.real, &p.boxes, extractor)?;
    }
    Ok(total / pairs.len() as f64)
}

/// Re-simulates every pair under each candidate and sorts by mean LPCS (lower is better).
///
/// A failing candidate is kept with its error and sorted last.
pub fn rank_raycast_configs(
    candidates: &[RaycastConfig],
    pairs: &[ScenePair],
    extractor: &dyn FeatureExtractor,
) -> Result<Vec<RankedConfig>> {
    if candidates.is_empty() || pairs.is_empty() {
        return Err(crate::error::Error::Domain(format!(
            "ranking needs candidates and pairs, got {} and {}",
            candidates.len(),
            pairs.len()
        )));
    }
    let mut ranked: Vec<RankedConfig> = candidates
        .iter()
        .map(|c| match evaluate(c, pairs, extractor) {
            Ok(s) => RankedConfig {
                config: *c,
                score: Some(s),
                error: None,
            },
            Err(e) => RankedConfig {
                config: *c,
                score: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    ranked.sort_by(rank_order);
    Ok(ranked)
}

pub fn ranking_to_text(ranked: &[RankedConfig]) -> String {
    let mut s = format!(
        "{:>4}  {:>6}  {:>5}  {:>8}  {:>6}  {:>14}\n",
        "rank", "width", "height", "peak_m", "power", "mean_lpcs"
    );
    for (i, r) in ranked.iter().enumerate() {
        let score = match (&r.score, &r.error) {
            (Some(v), _) => format!("{v:.6}"),
            (None, Some(e)) => format!("error: {e}"),
            (None, None) => "-".into(),
        };
        s.push_str(&format!(
            "{:>4}  {:>6}  {:>5}  {:>8.3}  {:>6.2}  {:>14}\n",
            i + 1,
            r.config.width,
            r.config.height,
            r.config.peak_width,
            r.config.idw_power,
            score
        ));
    }
    s
}

pub fn ranking_to_csv(ranked: &[RankedConfig]) -> String {
    let mut s = String::from("rank,width,height,peak_width,idw_power,mean_lpcs\n");
    for (i, r) in ranked.iter().enumerate() {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            i + 1,
            r.config.width,
            r.config.height,
            r.config.peak_width,
            r.config.idw_power,
            r.score.map_or(String::new(), |v| v.to_string())
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(w: usize, h: usize, pw: f64, score: Option<f64>) -> RankedConfig {
        RankedConfig {
            config: RaycastConfig {
                width: w,
                height: h,
                peak_width: pw,
                ..RaycastConfig::default()
            },
            score,
            error: None,
        }
    }

    #[test]
    fn ties_prefer_bigger_images_then_narrow_peaks() {
        let mut v = vec![
            entry(1024, 64, 0.2, Some(1.0)),
            entry(2560, 128, 0.3, Some(1.0)),
            entry(2560, 128, 0.2, Some(1.0)),
            entry(512, 32, 0.2, None),
            entry(512, 32, 0.2, Some(0.5)),
        ];
        v.sort_by(rank_order);
        let got: Vec<(usize, f64, Option<f64>)> = v.iter().map(|r| (r.config.width, r.config.peak_width, r.score)).collect();
        assert_eq!(
            got,
            vec![
                (512, 0.2, Some(0.5)),
                (2560, 0.2, Some(1.0)),
                (2560, 0.3, Some(1.0)),
                (1024, 0.2, Some(1.0)),
                (512, 0.2, None)
            ]
        );
    }
}
