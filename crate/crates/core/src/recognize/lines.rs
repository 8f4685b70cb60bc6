use serde::{Deserialize, Serialize};

use super::Detection;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextLine {
    pub rho: f64,
    pub theta: f64,
    /// Indices into the detection list, ordered by x.
    pub members: Vec<usize>,
    /// Leftover detections that joined no line, in reading order.
    #[serde(default)]
    pub pseudo: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HoughParams {
    pub bin_rho: f64,
    pub bin_theta: f64,
    /// Half-open `[lo, hi)` in degrees.
    pub theta_window: (f64, f64),
    pub min_votes: usize,
}

impl Default for HoughParams {
    fn default() -> Self {
        HoughParams {
            bin_rho: 8.0,
            bin_theta: 1.0,
            theta_window: (0.0, 180.0),
            min_votes: 2,
        }
    }
}

impl HoughParams {
    pub fn is_valid(&self) -> bool {
        let (lo, hi) = self.theta_window;
        self.bin_rho > 0.0 && self.bin_theta > 0.0 && 0.0 <= lo && lo < hi && hi <= 180.0
    }
}

fn centre(d: &Detection) -> (f64, f64) {
    (d.x as f64 + d.w as f64 / 2.0, d.y as f64 + d.h as f64 / 2.0)
}

struct Peak {
    votes: usize,
    spread: f64,
    theta: f64,
    rho: f64,
    members: Vec<usize>,
}

impl Peak {
    fn beats(&self, other: &Peak) -> bool {
        (other.votes, self.spread, self.theta, self.rho)
            .partial_cmp(&(self.votes, other.spread, other.theta, other.rho))
            == Some(std::cmp::Ordering::Less)
    }
}

/// Densest `bin_rho`-wide window of rho values at one angle.
fn best_window(theta: f64, rhos: &mut [(f64, usize)], bin_rho: f64) -> Option<Peak> {
    rhos.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut best: Option<Peak> = None;
    let mut end = 0;
    for start in 0..rhos.len() {
        end = end.max(start);
        while end + 1 < rhos.len() && rhos[end + 1].0 - rhos[start].0 <= bin_rho {
            end += 1;
        }
        let window = &rhos[start..=end];
        let spread = window[window.len() - 1].0 - window[0].0;
        let rho = window.iter().map(|r| r.0).sum::<f64>() / window.len() as f64;
        let cand = Peak {
            votes: window.len(),
            spread,
            theta,
            rho,
            members: window.iter().map(|r| r.1).collect(),
        };
        if best.as_ref().map_or(true, |b| cand.beats(b)) {
            best = Some(cand);
        }
    }
    best
}

/// Greedy Hough line extraction over detection centres.
///
/// The strongest (rho, theta) cell is taken first, its detections removed,
/// and the search repeats until no cell reaches `min_votes`. Lines come back
/// ordered by rho; leftovers form one trailing pseudo-line.
pub fn detect_lines(detections: &[Detection], params: &HoughParams) -> Vec<TextLine> {
    if detections.is_empty() || !params.is_valid() {
        return Vec::new();
    }
    let centres: Vec<(f64, f64)> = detections.iter().map(centre).collect();
    let (lo, hi) = params.theta_window;
    let thetas: Vec<f64> = (0..)
        .map(|i| lo + i as f64 * params.bin_theta)
        .take_while(|&t| t < hi)
        .collect();
    let mut free: Vec<usize> = (0..detections.len()).collect();
    let mut lines = Vec::new();
    let mut rhos = Vec::with_capacity(free.len());
    while free.len() >= params.min_votes.max(1) {
        let mut best: Option<Peak> = None;
        for &theta in &thetas {
            let (s, c) = theta.to_radians().sin_cos();
            rhos.clear();
            rhos.extend(free.iter().map(|&i| (centres[i].0 * c + centres[i].1 * s, i)));
            if let Some(p) = best_window(theta, &mut rhos, params.bin_rho) {
                if best.as_ref().map_or(true, |b| p.beats(b)) {
                    best = Some(p);
                }
            }
        }
        let Some(peak) = best.filter(|p| p.votes >= params.min_votes.max(1)) else {
            break;
        };
        free.retain(|i| !peak.members.contains(i));
        let mut members = peak.members;
        members.sort_by(|&a, &b| {
            centres[a]
                .0
                .total_cmp(&centres[b].0)
                .then(centres[a].1.total_cmp(&centres[b].1))
                .then(a.cmp(&b))
        });
        lines.push(TextLine {
            rho: peak.rho,
            theta: peak.theta,
            members,
            pseudo: false,
        });
    }
    lines.sort_by(|a, b| a.rho.total_cmp(&b.rho).then(a.theta.total_cmp(&b.theta)));
    if !free.is_empty() {
        free.sort_by(|&a, &b| {
            centres[a]
                .1
                .total_cmp(&centres[b].1)
                .then(centres[a].0.total_cmp(&centres[b].0))
                .then(a.cmp(&b))
        });
        lines.push(TextLine {
            rho: 0.0,
            theta: 0.0,
            members: free,
            pseudo: true,
        });
    }
    lines
}

/// Member labels of each line, concatenated.
pub fn line_texts(lines: &[TextLine], detections: &[Detection]) -> Vec<String> {
    lines
        .iter()
        .map(|l| l.members.iter().map(|&i| detections[i].label).collect())
        .collect()
}
