//! Network degree models and explicit geometric graphs.
//!
//! Devices are points of a homogeneous Poisson point process with intensity
//! `lambda` (devices/km²) and connect to every other device within range `r`
//! (km). The node degree is then Poisson with mean `lambda * pi * r^2`.
//! Empirical graphs (sampled, or built from real location data) give the
//! agent-based simulator something concrete to run on.

use std::f64::consts::PI;
use std::io::Read;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Mean Earth radius in km, used by the local equirectangular projection.
const EARTH_RADIUS_KM: f64 = 6371.0088;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkParams {
    /// Device intensity, devices per km².
    pub lambda: f64,
    /// Communication range, km.
    pub r: f64,
    /// Probability that a transmission succeeds.
    pub rho: f64,
    /// Fraction of devices vulnerable to infiltration.
    pub p: f64,
}

impl NetworkParams {
    pub fn new(lambda: f64, r: f64, rho: f64, p: f64) -> Result<Self> {
        let params = Self { lambda, r, rho, p };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(invalid("lambda", format!("must be positive, got {}", self.lambda)));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(invalid("r", format!("must be positive, got {}", self.r)));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(invalid("rho", format!("must lie in [0, 1], got {}", self.rho)));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(invalid("p", format!("must lie in [0, 1], got {}", self.p)));
        }
        Ok(())
    }

    /// Mean degree of the PPP geometric graph, `lambda * pi * r^2`.
    pub fn mean_degree(&self) -> f64 {
        self.lambda * PI * self.r * self.r
    }
}

/// Degree probabilities `pi_0 ..= pi_kmax` plus the mass cut off beyond `k_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeDistribution {
    probs: Vec<f64>,
    mean_degree: f64,
    tail_mass: f64,
}

impl DegreeDistribution {
    /// Poisson degree law of the PPP network, truncated at the smallest
    /// `k_max` whose tail mass `P[K > k_max]` is at most `epsilon`.
    pub fn poisson(params: &NetworkParams, epsilon: f64) -> Result<Self> {
        params.validate()?;
        Self::poisson_with_epsilon(params.mean_degree(), epsilon)
    }

    /// Poisson law with the given mean and epsilon-driven truncation.
    pub fn poisson_with_epsilon(mean: f64, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(invalid("epsilon", format!("must lie in (0, 1), got {epsilon}")));
        }
        if !(mean >= 0.0 && mean.is_finite()) {
            return Err(invalid("mean_degree", format!("must be finite and non-negative, got {mean}")));
        }
        let k_max = poisson_truncation_degree(mean, epsilon);
        Ok(Self::poisson_with_kmax(mean, k_max))
    }

    /// Poisson law with the given mean truncated at an explicit `k_max`.
    pub fn poisson_with_kmax(mean: f64, k_max: usize) -> Self {
        let probs = (0..=k_max).map(|k| poisson_pmf(mean, k)).collect();
        Self {
            probs,
            mean_degree: mean,
            tail_mass: poisson_tail(mean, k_max),
        }
    }

    /// Builds a distribution from explicit probabilities. `mean_degree` is the
    /// untruncated mean; the remainder `1 - sum(probs)` becomes the tail mass.
    pub fn from_probabilities(probs: Vec<f64>, mean_degree: f64) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Degenerate("empty degree distribution".into()));
        }
        if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(invalid("pi", "probabilities must be finite and non-negative"));
        }
        let total: f64 = probs.iter().sum();
        if total > 1.0 + 1e-12 {
            return Err(invalid("pi", format!("probabilities sum to {total} > 1")));
        }
        Ok(Self {
            probs,
            mean_degree,
            tail_mass: (1.0 - total).max(0.0),
        })
    }

    pub fn k_max(&self) -> usize {
        self.probs.len() - 1
    }

    /// `P[K = k]`, zero beyond the truncation degree.
    pub fn prob(&self, k: usize) -> f64 {
        self.probs.get(k).copied().unwrap_or(0.0)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mean_degree(&self) -> f64 {
        self.mean_degree
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    /// `sum_k k * pi_k` over the truncated support. Link probabilities are
    /// normalized by this so that boundary states map to exactly 0 or 1.
    pub fn link_normalizer(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(k, p)| k as f64 * p)
            .sum()
    }

    /// Probability of the most probable degrees first; ties broken by degree.
    pub fn degrees_by_probability(&self) -> Vec<usize> {
        let mut ks: Vec<usize> = (0..self.probs.len()).collect();
        ks.sort_by(|&a, &b| self.probs[b].total_cmp(&self.probs[a]).then(a.cmp(&b)));
        ks
    }
}

/// `e^{-m} m^k / k!` evaluated in log space.
pub fn poisson_pmf(mean: f64, k: usize) -> f64 {
    if mean == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    let ln_fact: f64 = (2..=k).map(|i| (i as f64).ln()).sum();
    (-mean + k as f64 * mean.ln() - ln_fact).exp()
}

/// `P[K > k]` for `K ~ Poisson(mean)`, summed upward so that small tails keep
/// full relative precision.
pub fn poisson_tail(mean: f64, k: usize) -> f64 {
    if mean == 0.0 {
        return 0.0;
    }
    if (k as f64) < mean {
        let head: f64 = (0..=k).map(|j| poisson_pmf(mean, j)).sum();
        return (1.0 - head).max(0.0);
    }
    let mut term = poisson_pmf(mean, k + 1);
    let mut sum = 0.0;
    let mut j = k + 1;
    while term > 0.0 && term > sum * 1e-18 {
        sum += term;
        j += 1;
        term *= mean / j as f64;
    }
    sum
}

fn poisson_truncation_degree(mean: f64, epsilon: f64) -> usize {
    let mut k = 0;
    while poisson_tail(mean, k) > epsilon {
        k += 1;
    }
    k
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Periodic region; removes edge effects.
    Torus,
    /// Plain Euclidean distance inside the region.
    Hard,
}

/// Axis-aligned rectangle, km.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub origin: [f64; 2],
    pub width: f64,
    pub height: f64,
}

impl Region {
    pub fn new(width: f64, height: f64) -> Self {
        Self {
            origin: [0.0, 0.0],
            width,
            height,
        }
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    fn bounding(positions: &[[f64; 2]]) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in positions {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        Self {
            origin: lo,
            width: hi[0] - lo[0],
            height: hi[1] - lo[1],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGraph {
    positions: Vec<[f64; 2]>,
    adjacency: Vec<Vec<usize>>,
    region: Region,
    boundary: Boundary,
    range: f64,
}

impl SpatialGraph {
    /// Connects every pair of nodes within `range` under the boundary metric.
    pub fn from_positions(
        positions: Vec<[f64; 2]>,
        range: f64,
        region: Region,
        boundary: Boundary,
    ) -> Result<Self> {
        if !(range > 0.0 && range.is_finite()) {
            return Err(invalid("r", format!("must be positive, got {range}")));
        }
        if boundary == Boundary::Torus && !(region.width > 0.0 && region.height > 0.0) {
            return Err(invalid("region", "torus boundary needs a region with positive area"));
        }
        let adjacency = build_adjacency(&positions, range, &region, boundary);
        Ok(Self {
            positions,
            adjacency,
            region,
            boundary,
            range,
        })
    }

    /// Graph with explicit edges; positions are kept for export only.
    pub fn from_edges(positions: Vec<[f64; 2]>, edges: &[(usize, usize)]) -> Result<Self> {
        let n = positions.len();
        let mut adjacency = vec![Vec::new(); n];
        for &(i, j) in edges {
            if i >= n || j >= n || i == j {
                return Err(invalid("edges", format!("bad edge ({i}, {j}) for {n} nodes")));
            }
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        let region = if n > 0 {
            Region::bounding(&positions)
        } else {
            Region::new(0.0, 0.0)
        };
        Ok(Self {
            positions,
            adjacency,
            region,
            boundary: Boundary::Hard,
            range: f64::INFINITY,
        })
    }

    /// Complete graph on `n` nodes (positions on a unit circle).
    pub fn complete(n: usize) -> Self {
        let positions = (0..n)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / n.max(1) as f64;
                [a.cos(), a.sin()]
            })
            .collect();
        let adjacency = (0..n)
            .map(|i| (0..n).filter(|&j| j != i).collect())
            .collect();
        Self {
            positions,
            adjacency,
            region: Region {
                origin: [-1.0, -1.0],
                width: 2.0,
                height: 2.0,
            },
            boundary: Boundary::Hard,
            range: f64::INFINITY,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency.iter().map(Vec::len).collect()
    }

    pub fn region(&self) -> Region {
        self.region
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn mean_degree(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.adjacency.iter().map(Vec::len).sum::<usize>() as f64 / self.len() as f64
    }

    /// Undirected edges with `i < j`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, list) in self.adjacency.iter().enumerate() {
            out.extend(list.iter().filter(|&&j| j > i).map(|&j| (i, j)));
        }
        out
    }

    /// Distance between two nodes under the graph's boundary metric.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        metric_distance(&self.positions[i], &self.positions[j], &self.region, self.boundary)
    }

    pub fn export(&self) -> GraphExport {
        GraphExport {
            positions: self.positions.clone(),
            edges: self.edges().into_iter().map(|(i, j)| [i, j]).collect(),
        }
    }
}

/// JSON form of a graph: `positions` as `[x, y]` and `edges` as `[i, j]`, `i < j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphExport {
    pub positions: Vec<[f64; 2]>,
    pub edges: Vec<[usize; 2]>,
}

fn metric_distance(a: &[f64; 2], b: &[f64; 2], region: &Region, boundary: Boundary) -> f64 {
    let mut dx = (a[0] - b[0]).abs();
    let mut dy = (a[1] - b[1]).abs();
    if boundary == Boundary::Torus {
        dx = dx.min(region.width - dx);
        dy = dy.min(region.height - dy);
    }
    dx.hypot(dy)
}

/// Cell-list neighbor search: bins of side >= range, so only the 3x3 block
/// around each bin needs checking.
fn build_adjacency(
    positions: &[[f64; 2]],
    range: f64,
    region: &Region,
    boundary: Boundary,
) -> Vec<Vec<usize>> {
    let n = positions.len();
    let mut adjacency = vec![Vec::new(); n];
    if n < 2 {
        return adjacency;
    }
    let extent = if boundary == Boundary::Torus {
        *region
    } else {
        Region::bounding(positions)
    };
    let cells_along = |len: f64| ((len / range).floor() as usize).clamp(1, 1 << 12);
    let (nx, ny) = (cells_along(extent.width), cells_along(extent.height));
    let cell_of = |p: &[f64; 2]| {
        let fx = if extent.width > 0.0 {
            (p[0] - extent.origin[0]) / extent.width
        } else {
            0.0
        };
        let fy = if extent.height > 0.0 {
            (p[1] - extent.origin[1]) / extent.height
        } else {
            0.0
        };
        let cx = ((fx * nx as f64).floor() as isize).clamp(0, nx as isize - 1) as usize;
        let cy = ((fy * ny as f64).floor() as isize).clamp(0, ny as isize - 1) as usize;
        (cx, cy)
    };

    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); nx * ny];
    for (i, p) in positions.iter().enumerate() {
        let (cx, cy) = cell_of(p);
        bins[cy * nx + cx].push(i);
    }

    let wrap = boundary == Boundary::Torus;
    let mut around = Vec::with_capacity(9);
    for cy in 0..ny {
        for cx in 0..nx {
            around.clear();
            for oy in -1isize..=1 {
                for ox in -1isize..=1 {
                    let (mut x, mut y) = (cx as isize + ox, cy as isize + oy);
                    if wrap {
                        x = x.rem_euclid(nx as isize);
                        y = y.rem_euclid(ny as isize);
                    } else if x < 0 || y < 0 || x >= nx as isize || y >= ny as isize {
                        continue;
                    }
                    around.push(y as usize * nx + x as usize);
                }
            }
            around.sort_unstable();
            around.dedup();
            for &i in &bins[cy * nx + cx] {
                for &cell in &around {
                    for &j in &bins[cell] {
                        if j > i
                            && metric_distance(&positions[i], &positions[j], &extent, boundary)
                                <= range
                        {
                            adjacency[i].push(j);
                            adjacency[j].push(i);
                        }
                    }
                }
            }
        }
    }
    for list in &mut adjacency {
        list.sort_unstable();
    }
    adjacency
}

/// Samples a PPP realization in `region` and connects nodes within range.
pub fn sample_ppp_graph(
    params: &NetworkParams,
    region: Region,
    seed: u64,
    boundary: Boundary,
) -> Result<SpatialGraph> {
    params.validate()?;
    if !(region.area() > 0.0) {
        return Err(invalid("region", "area must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let expected = params.lambda * region.area();
    let count = Poisson::new(expected)
        .map_err(|e| invalid("lambda", e.to_string()))?
        .sample(&mut rng) as usize;
    let positions = (0..count)
        .map(|_| {
            [
                region.origin[0] + rng.random::<f64>() * region.width,
                region.origin[1] + rng.random::<f64>() * region.height,
            ]
        })
        .collect();
    SpatialGraph::from_positions(positions, params.r, region, boundary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordinateSystem {
    /// Planar coordinates in km, header `x,y`.
    Planar,
    /// Longitude/latitude in degrees, header `lon,lat`.
    LonLat,
}

/// Reads a location CSV (`x,y` in km or `lon,lat` in degrees) and builds a
/// hard-boundary graph with the given range. Lon/lat is projected to local
/// planar km (equirectangular about the centroid).
pub fn ingest_locations<R: Read>(source: R, range: f64) -> Result<SpatialGraph> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let names: Vec<String> = headers.iter().map(|h| h.to_ascii_lowercase()).collect();
    let system = match names.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["x", "y"] => CoordinateSystem::Planar,
        ["lon", "lat"] => CoordinateSystem::LonLat,
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header `x,y` or `lon,lat`, got `{}`", names.join(",")),
            })
        }
    };

    let mut raw = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected 2 fields, found {}", record.len()),
            });
        }
        let field = |i: usize| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    line,
                    message: format!("`{}` is not a finite number", &record[i]),
                })
        };
        raw.push([field(0)?, field(1)?]);
    }
    if raw.len() < 2 {
        return Err(Error::Degenerate(format!(
            "location file has {} node(s); at least 2 are needed",
            raw.len()
        )));
    }

    let positions = match system {
        CoordinateSystem::Planar => raw,
        CoordinateSystem::LonLat => project_equirectangular(&raw),
    };
    let region = Region::bounding(&positions);
    SpatialGraph::from_positions(positions, range, region, Boundary::Hard)
}

/// Local equirectangular projection of `[lon, lat]` degrees to km about the centroid.
pub fn project_equirectangular(lon_lat: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let n = lon_lat.len() as f64;
    let lon0 = lon_lat.iter().map(|p| p[0]).sum::<f64>() / n;
    let lat0 = lon_lat.iter().map(|p| p[1]).sum::<f64>() / n;
    let scale = EARTH_RADIUS_KM * PI / 180.0;
    let cos_lat0 = lat0.to_radians().cos();
    lon_lat
        .iter()
        .map(|p| [(p[0] - lon0) * scale * cos_lat0, (p[1] - lat0) * scale])
        .collect()
}

/// Degree histogram of a graph: `pi_k` is the fraction of nodes of degree `k`.
pub fn empirical_degree_distribution(graph: &SpatialGraph) -> Result<DegreeDistribution> {
    if graph.is_empty() {
        return Err(Error::Degenerate("graph has no nodes".into()));
    }
    let degrees = graph.degrees();
    let k_max = degrees.iter().copied().max().unwrap_or(0);
    let mut counts = vec![0usize; k_max + 1];
    for d in &degrees {
        counts[*d] += 1;
    }
    let n = graph.len() as f64;
    Ok(DegreeDistribution {
        probs: counts.iter().map(|&c| c as f64 / n).collect(),
        mean_degree: graph.mean_degree(),
        tail_mass: 0.0,
    })
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn truncation_degree_is_minimal(mean in 0.1f64..40.0, log_eps in -10.0f64..-1.0) {
            let eps = 10f64.powf(log_eps);
            let dist = DegreeDistribution::poisson_with_epsilon(mean, eps).unwrap();
            let k = dist.k_max();
            prop_assert!(poisson_tail(mean, k) <= eps);
            prop_assert!(k == 0 || poisson_tail(mean, k - 1) > eps);
        }

        #[test]
        fn adjacency_is_symmetric_and_within_range(
            pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..80),
            range in 0.02f64..0.6,
            torus in any::<bool>(),
        ) {
            let boundary = if torus { Boundary::Torus } else { Boundary::Hard };
            let positions: Vec<[f64; 2]> = pts.iter().map(|&(x, y)| [x, y]).collect();
            let g = SpatialGraph::from_positions(positions, range, Region::new(1.0, 1.0), boundary).unwrap();
            for i in 0..g.len() {
                for &j in g.neighbors(i) {
                    prop_assert!(i != j);
                    prop_assert!(g.neighbors(j).contains(&i));
                    prop_assert!(g.distance(i, j) <= range);
                }
                for j in 0..g.len() {
                    if i != j && g.distance(i, j) <= range {
                        prop_assert!(g.neighbors(i).contains(&j));
                    }
                }
            }
        }
    }

    #[test]
    fn ppp_mean_degree_matches_three_pi() {
        let params = NetworkParams::new(300.0, 0.1, 0.95, 0.7).unwrap();
        let (mut edges, mut nodes) = (0usize, 0usize);
        for seed in 0..200 {
            let g = sample_ppp_graph(&params, Region::new(1.0, 1.0), seed, Boundary::Torus).unwrap();
            nodes += g.len();
            edges += g.degrees().iter().sum::<usize>();
        }
        let mean = edges as f64 / nodes as f64;
        let target = params.mean_degree();
        assert!((mean - target).abs() <= 0.02 * target, "{mean} vs {target}");
    }
}
