//! Random Gaussian atomic clouds at a prescribed peak optical depth.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::cloud_rng;

/// Default lower bound on `k_l r` between any two atoms.
pub const DEFAULT_MIN_PAIR_SEPARATION: f64 = 1e-2;

/// Maximum redraws of a single atom before sampling gives up.
pub const MAX_REDRAWS_PER_ATOM: usize = 10_000;

/// An immutable set of atom positions in units of `1/k_l`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cloud {
    positions: Vec<[f64; 3]>,
    b0: f64,
    radius: f64,
    seed: u64,
    min_pair_separation: f64,
}

/// Gaussian rms radius `k_l R` giving peak optical depth `b0 = 3N/(k_l R)^2`.
pub fn radius_from_b0(n_atoms: usize, b0: f64) -> Result<f64> {
    if n_atoms == 0 {
        return Err(Error::invalid("n_atoms", "must be at least 1"));
    }
    if !(b0 > 0.0) || !b0.is_finite() {
        return Err(Error::invalid("b0", format!("must be positive and finite, got {b0}")));
    }
    Ok((3.0 * n_atoms as f64 / b0).sqrt())
}

/// Draws `n_atoms` positions from an isotropic normal distribution with
/// per-axis standard deviation [`radius_from_b0`].
///
/// An atom closer than `min_pair_separation` to any already accepted atom is
/// redrawn; the accepted atoms are never moved.
pub fn sample_gaussian_cloud(
    n_atoms: usize,
    b0: f64,
    seed: u64,
    min_pair_separation: f64,
) -> Result<Cloud> {
    let radius = radius_from_b0(n_atoms, b0)?;
    if !(min_pair_separation >= 0.0) || !min_pair_separation.is_finite() {
        return Err(Error::invalid(
            "min_pair_separation",
            format!("must be finite and non-negative, got {min_pair_separation}"),
        ));
    }
    let mut rng = cloud_rng(seed);
    let min_sq = min_pair_separation * min_pair_separation;
    let mut positions: Vec<[f64; 3]> = Vec::with_capacity(n_atoms);
    for atom in 0..n_atoms {
        let mut redraws = 0;
        loop {
            let candidate = [
                radius * rng.sample::<f64, _>(StandardNormal),
                radius * rng.sample::<f64, _>(StandardNormal),
                radius * rng.sample::<f64, _>(StandardNormal),
            ];
            let too_close = min_sq > 0.0
                && positions
                    .iter()
                    .any(|p| distance_sq(p, &candidate) < min_sq);
            if !too_close {
                positions.push(candidate);
                break;
            }
            redraws += 1;
            if redraws > MAX_REDRAWS_PER_ATOM {
                return Err(Error::GeometryInfeasible {
                    atom,
                    max_redraws: MAX_REDRAWS_PER_ATOM,
                    min_pair_separation,
                });
            }
        }
    }
    Ok(Cloud {
        positions,
        b0,
        radius,
        seed,
        min_pair_separation,
    })
}

#[inline]
pub(crate) fn distance_sq(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

impl Cloud {
    /// Wraps explicit positions, e.g. hand-placed test geometries or a loaded
    /// dump. `radius` fixes the nominal size from which `b0` is derived.
    ///
    /// Rejects non-finite coordinates and coincident atoms, since the scalar
    /// kernel diverges at zero separation.
    pub fn from_positions(positions: Vec<[f64; 3]>, radius: f64) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::invalid("positions", "cloud must contain at least one atom"));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::invalid("radius", format!("must be positive, got {radius}")));
        }
        if let Some(i) = positions.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::invalid("positions", format!("atom {i} has a non-finite coordinate")));
        }
        let cloud = Cloud {
            b0: 3.0 * positions.len() as f64 / (radius * radius),
            positions,
            radius,
            seed: 0,
            min_pair_separation: 0.0,
        };
        let min = cloud.min_pair_distance();
        if min.is_some_and(|d| d <= 0.0) {
            return Err(Error::invalid("positions", "two atoms share the same position"));
        }
        Ok(cloud)
    }

    pub fn n_atoms(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn b0(&self) -> f64 {
        self.b0
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn min_pair_separation(&self) -> f64 {
        self.min_pair_separation
    }

    /// `k_l r_ij`.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        distance_sq(&self.positions[i], &self.positions[j]).sqrt()
    }

    /// Smallest pairwise distance, `None` for a single atom. O(N^2).
    pub fn min_pair_distance(&self) -> Option<f64> {
        let n = self.n_atoms();
        let mut best: Option<f64> = None;
        for i in 0..n {
            for j in (i + 1)..n {
                let d = distance_sq(&self.positions[i], &self.positions[j]);
                best = Some(best.map_or(d, |b: f64| b.min(d)));
            }
        }
        best.map(f64::sqrt)
    }

    /// Index of the atom closest to `atom`.
    pub fn nearest_neighbour(&self, atom: usize) -> Option<usize> {
        let p = &self.positions[atom];
        self.positions
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != atom)
            .map(|(j, q)| (j, distance_sq(p, q)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(j, _)| j)
    }

    pub fn centroid(&self) -> [f64; 3] {
        let n = self.n_atoms() as f64;
        let mut c = [0.0; 3];
        for p in &self.positions {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        c.map(|v| v / n)
    }

    /// Largest distance of any atom from `origin`.
    pub fn extent_about(&self, origin: [f64; 3]) -> f64 {
        self.positions
            .iter()
            .map(|p| distance_sq(p, &origin))
            .fold(0.0, f64::max)
            .sqrt()
    }

    /// Writes `atom_index,x,y,z` with 17 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["atom_index", "x", "y", "z"])?;
        for (i, p) in self.positions.iter().enumerate() {
            w.write_record([
                i.to_string(),
                format!("{:.16e}", p[0]),
                format!("{:.16e}", p[1]),
                format!("{:.16e}", p[2]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads positions written by [`Cloud::write_csv`].
    pub fn read_csv_positions<R: Read>(reader: R) -> Result<Vec<[f64; 3]>> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["atom_index", "x", "y", "z"] {
            return Err(Error::Config(format!(
                "cloud csv header must be atom_index,x,y,z, got {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut positions = Vec::new();
        for (line, record) in r.records().enumerate() {
            let record = record?;
            let index: usize = parse_field(&record, 0, line)?;
            if index != positions.len() {
                return Err(Error::Config(format!(
                    "cloud csv row {line}: expected atom_index {}, got {index}",
                    positions.len()
                )));
            }
            positions.push([
                parse_field(&record, 1, line)?,
                parse_field(&record, 2, line)?,
                parse_field(&record, 3, line)?,
            ]);
        }
        Ok(positions)
    }
}

fn parse_field<T: std::str::FromStr>(record: &csv::StringRecord, col: usize, line: usize) -> Result<T> {
    record
        .get(col)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::Config(format!("cloud csv row {line}: bad value in column {col}")))
}
