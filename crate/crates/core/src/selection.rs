//! Feature ranking from sparse-layer magnitudes, the elbow cut-off on the
//! sorted magnitude curve, and stability measures across runs.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::ModelParams;

/// Features sorted by |θ_spl| descending; ties broken by ascending index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedWeights {
    pub order: Vec<usize>,
    pub magnitudes: Vec<f64>,
}

/// Elbow location on a nonincreasing curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElbowCut {
    pub index: usize,
    /// Maximum point-to-chord distance; exactly 0 means the curve is
    /// collinear with its chord and the elbow carries no information.
    pub max_distance: f64,
}

/// Ranking with the elbow applied: `selected` holds the features whose
/// magnitude is strictly greater than the elbow point's.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    pub order: Vec<usize>,
    pub magnitudes: Vec<f64>,
    pub elbow_index: usize,
    pub selected: Vec<usize>,
    /// Set when all chord distances were zero; the strict-greater rule would
    /// select nothing, so every feature is kept instead.
    pub collinear_fallback: bool,
}

/// Sorts features by absolute sparse-layer weight, descending, with stable
/// index tie-break.
pub fn rank_features(params: &ModelParams, feature_names: &[String]) -> Result<RankedWeights> {
    if feature_names.len() != params.spl.len() {
        return Err(Error::Shape(format!(
            "{} feature names for {} sparse weights",
            feature_names.len(),
            params.spl.len()
        )));
    }
    let mut order: Vec<usize> = (0..params.spl.len()).collect();
    order.sort_by(|&a, &b| {
        params.spl[b]
            .abs()
            .total_cmp(&params.spl[a].abs())
            .then(a.cmp(&b))
    });
    let magnitudes = order.iter().map(|&i| params.spl[i].abs()).collect();
    Ok(RankedWeights { order, magnitudes })
}

/// Elbow of a nonincreasing curve: the point at maximum perpendicular
/// distance from the straight line joining the first and last points, in raw
/// (index, magnitude) coordinates. Ties go to the smaller index.
pub fn elbow_cutoff(magnitudes: &[f64]) -> Result<ElbowCut> {
    if magnitudes.len() < 3 {
        return Err(Error::Data(format!(
            "elbow undefined for {} points (need at least 3)",
            magnitudes.len()
        )));
    }
    let n = magnitudes.len();
    let (x0, y0) = (0.0, magnitudes[0]);
    let (x1, y1) = ((n - 1) as f64, magnitudes[n - 1]);
    let dy = y1 - y0;
    let dx = x1 - x0;
    let norm = (dy * dy + dx * dx).sqrt();
    let mut best = ElbowCut {
        index: 0,
        max_distance: 0.0,
    };
    for (i, &y) in magnitudes.iter().enumerate() {
        // |Δy·x − Δx·y + x1·y0 − y1·x0| / ‖(Δx, Δy)‖
        let dist = (dy * i as f64 - dx * y + x1 * y0 - y1 * x0).abs() / norm;
        if dist > best.max_distance {
            best = ElbowCut {
                index: i,
                max_distance: dist,
            };
        }
    }
    Ok(best)
}

/// Elbow with both axes rescaled to [0,1] first. Provided because the raw
/// axes weight index spacing against magnitude scale; the raw variant is the
/// default everywhere.
pub fn elbow_cutoff_normalized(magnitudes: &[f64]) -> Result<ElbowCut> {
    if magnitudes.len() < 3 {
        return Err(Error::Data(format!(
            "elbow undefined for {} points (need at least 3)",
            magnitudes.len()
        )));
    }
    let n = magnitudes.len();
    let max = magnitudes[0];
    let min = magnitudes[n - 1];
    let span = max - min;
    let scaled: Vec<f64> = if span > 0.0 {
        magnitudes.iter().map(|&v| (v - min) / span).collect()
    } else {
        vec![0.0; n]
    };
    // Normalize the x axis by evaluating on a curve reindexed to [0,1]:
    // equivalent to scaling distances, so reuse the raw routine on the
    // rescaled y values with x compressed by n−1.
    let compressed: Vec<f64> = scaled.iter().map(|&v| v * (n - 1) as f64).collect();
    elbow_cutoff(&compressed)
}

/// Combines a ranking with the elbow rule. On a collinear curve (all chord
/// distances zero) there is no evidence for discarding anything, so all
/// features are selected.
pub fn apply_elbow(ranking: &RankedWeights, normalized: bool) -> Result<FeatureRanking> {
    let cut = if normalized {
        elbow_cutoff_normalized(&ranking.magnitudes)?
    } else {
        elbow_cutoff(&ranking.magnitudes)?
    };
    let collinear = cut.max_distance == 0.0;
    let selected: Vec<usize> = if collinear {
        ranking.order.clone()
    } else {
        let threshold = ranking.magnitudes[cut.index];
        ranking
            .order
            .iter()
            .zip(&ranking.magnitudes)
            .take_while(|(_, &m)| m > threshold)
            .map(|(&f, _)| f)
            .collect()
    };
    Ok(FeatureRanking {
        order: ranking.order.clone(),
        magnitudes: ranking.magnitudes.clone(),
        elbow_index: cut.index,
        selected,
        collinear_fallback: collinear,
    })
}

/// First k features of the ranking.
pub fn top_k(ranking: &RankedWeights, k: usize) -> Result<Vec<usize>> {
    if k > ranking.order.len() {
        return Err(Error::Data(format!(
            "top_k: k={k} exceeds {} features",
            ranking.order.len()
        )));
    }
    Ok(ranking.order[..k].to_vec())
}

/// Multiway Jaccard index |∩ sets| / |∪ sets| of the selected sets.
pub fn jaccard_stability(sets: &[Vec<usize>]) -> Result<f64> {
    if sets.len() < 2 {
        return Err(Error::Data(format!(
            "jaccard stability needs at least 2 sets, got {}",
            sets.len()
        )));
    }
    let mut union: BTreeSet<usize> = BTreeSet::new();
    for s in sets {
        union.extend(s.iter().copied());
    }
    if union.is_empty() {
        return Err(Error::Data("jaccard stability of all-empty sets".into()));
    }
    let mut intersection: BTreeSet<usize> = sets[0].iter().copied().collect();
    for s in &sets[1..] {
        let other: BTreeSet<usize> = s.iter().copied().collect();
        intersection = intersection.intersection(&other).copied().collect();
    }
    Ok(intersection.len() as f64 / union.len() as f64)
}

/// Pairwise |∩|/|∪| table across runs.
pub fn pairwise_jaccard(sets: &[Vec<usize>]) -> Vec<Vec<f64>> {
    let n = sets.len();
    let as_sets: Vec<BTreeSet<usize>> = sets
        .iter()
        .map(|s| s.iter().copied().collect())
        .collect();
    let mut table = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let inter = as_sets[i].intersection(&as_sets[j]).count();
            let union = as_sets[i].union(&as_sets[j]).count();
            let v = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
            table[i][j] = v;
            table[j][i] = v;
        }
    }
    table
}

/// Ranking CSV: rank, feature_index, feature_name, abs_weight, selected.
pub fn write_ranking_csv(
    ranking: &FeatureRanking,
    feature_names: &[String],
    path: &Path,
) -> Result<()> {
    let selected: BTreeSet<usize> = ranking.selected.iter().copied().collect();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["rank", "feature_index", "feature_name", "abs_weight", "selected"])?;
    for (rank, (&feat, &mag)) in ranking.order.iter().zip(&ranking.magnitudes).enumerate() {
        w.write_record([
            rank.to_string(),
            feat.to_string(),
            feature_names[feat].clone(),
            mag.to_string(),
            selected.contains(&feat).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Sparsity-curve CSV: rank, abs_weight.
pub fn write_sparsity_curve_csv(magnitudes: &[f64], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["rank", "abs_weight"])?;
    for (rank, m) in magnitudes.iter().enumerate() {
        w.write_record([rank.to_string(), m.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
