//! Point sources: drifting 3-D Gaussians, labelled blobs and CSV files.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, HighDimPoint, Result};

/// A stream item. Labels are carried for evaluation only.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoint {
    pub point: HighDimPoint,
    pub label: Option<u32>,
}

/// One drifting Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftStructureSpec {
    pub mean: [f64; 3],
    pub covariance: [[f64; 3]; 3],
    /// Added to the mean on every tick.
    pub velocity: [f64; 3],
    /// The covariance is multiplied by this rate (or its inverse) on every
    /// tick.
    pub scale_rate: f64,
    /// Ticks between switches from dilation to contraction and back.
    /// Zero keeps scaling in one direction.
    pub scale_flip_ticks: usize,
    pub points: usize,
    /// Stream points (over all structures) between ticks.
    pub tick_every: usize,
}

impl DriftStructureSpec {
    pub fn stationary(mean: [f64; 3], points: usize) -> Self {
        Self {
            mean,
            covariance: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            velocity: [0.0; 3],
            scale_rate: 1.0,
            scale_flip_ticks: 0,
            points,
            tick_every: 300,
        }
    }
}

/// Three structures sharing `total` points: two approach each other along x
/// and cross mid-run, the third stays put while dilating and contracting.
pub fn drift_preset(total: usize) -> [DriftStructureSpec; 3] {
    let share = |i: usize| total / 3 + usize::from(i < total % 3);
    let base = |i: usize, mean, velocity| DriftStructureSpec {
        velocity,
        scale_rate: 1.002,
        scale_flip_ticks: 10,
        tick_every: 300,
        ..DriftStructureSpec::stationary(mean, share(i))
    };
    [
        base(0, [-2.5, 0.0, 0.0], [0.05, 0.0, 0.0]),
        base(1, [2.5, 0.0, 0.0], [-0.05, 0.0, 0.0]),
        base(2, [0.0, 4.0, 0.0], [0.0, 0.0, 0.0]),
    ]
}

struct Structure {
    spec: DriftStructureSpec,
    chol: Matrix3<f64>,
    mean: Vector3<f64>,
    scale: f64,
    emitted: usize,
    ticks: usize,
}

impl Structure {
    fn tick(&mut self) {
        self.mean += Vector3::from(self.spec.velocity);
        let phase = match self.spec.scale_flip_ticks {
            0 => 0,
            f => self.ticks / f,
        };
        self.scale *= if phase % 2 == 0 { self.spec.scale_rate } else { 1.0 / self.spec.scale_rate };
        self.ticks += 1;
    }
}

/// Round-robin draws from three drifting Gaussians. Ids count up from 0 and
/// labels are the structure index.
pub struct SyntheticDriftStream {
    structures: Vec<Structure>,
    rng: ChaCha8Rng,
    next: usize,
    next_id: u64,
}

pub fn synthetic_drift_stream(specs: [DriftStructureSpec; 3], seed: u64) -> Result<SyntheticDriftStream> {
    let mut structures = Vec::with_capacity(3);
    for (i, spec) in specs.into_iter().enumerate() {
        if !(spec.scale_rate > 0.0) || !spec.scale_rate.is_finite() {
            return Err(Error::Config(format!("structure {i}: scale rate must be positive")));
        }
        if spec.tick_every == 0 {
            return Err(Error::Config(format!("structure {i}: tick_every must be at least 1")));
        }
        let cov = Matrix3::from_fn(|r, c| spec.covariance[r][c]);
        if (cov - cov.transpose()).abs().max() > 1e-12 {
            return Err(Error::Config(format!("structure {i}: covariance is not symmetric")));
        }
        let chol = cov
            .cholesky()
            .ok_or_else(|| Error::Config(format!("structure {i}: covariance is not positive definite")))?;
        structures.push(Structure {
            chol: chol.l(),
            mean: Vector3::from(spec.mean),
            scale: 1.0,
            emitted: 0,
            ticks: 0,
            spec,
        });
    }
    Ok(SyntheticDriftStream { structures, rng: ChaCha8Rng::seed_from_u64(seed), next: 0, next_id: 0 })
}

impl Iterator for SyntheticDriftStream {
    type Item = LabeledPoint;

    fn next(&mut self) -> Option<LabeledPoint> {
        let k = (0..3)
            .map(|o| (self.next + o) % 3)
            .find(|&k| self.structures[k].emitted < self.structures[k].spec.points)?;
        self.next = (k + 1) % 3;
        let s = &mut self.structures[k];
        let z = Vector3::from_fn(|_, _| StandardNormal.sample(&mut self.rng));
        let x = s.mean + s.chol * z * s.scale.sqrt();
        s.emitted += 1;
        let point = HighDimPoint::new(self.next_id, x.iter().copied().collect());
        self.next_id += 1;
        for s in &mut self.structures {
            if self.next_id % s.spec.tick_every as u64 == 0 {
                s.tick();
            }
        }
        Some(LabeledPoint { point, label: Some(k as u32) })
    }
}

/// `k` unit-variance Gaussians in `dim` dimensions, `n_per` points each,
/// emitted round-robin. Means sit on scaled coordinate axes (or along the
/// first axis when `k > dim`) so every pair is at least `separation` apart.
pub fn blob_stream(k: usize, n_per: usize, separation: f64, dim: usize, seed: u64) -> Result<Vec<LabeledPoint>> {
    if !(separation > 0.0) {
        return Err(Error::Config(format!("separation {separation} must be positive")));
    }
    if k == 0 || dim == 0 {
        return Err(Error::Config("blob count and dimension must be positive".into()));
    }
    let means: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            let mut m = vec![0.0; dim];
            if k <= dim {
                m[c] = separation / std::f64::consts::SQRT_2;
            } else {
                m[0] = separation * c as f64;
            }
            m
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(k * n_per);
    for _ in 0..n_per {
        for (c, mean) in means.iter().enumerate() {
            let coords = mean
                .iter()
                .map(|m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + z
                })
                .collect();
            let id = out.len() as u64;
            out.push(LabeledPoint { point: HighDimPoint::new(id, coords), label: Some(c as u32) });
        }
    }
    Ok(out)
}

/// Streaming CSV reader. Ids are row numbers from 0 in file order.
///
/// A first line with any non-numeric field is a header. When the header's
/// last column is named `label`, that column is read as an integer label.
pub struct FileStream {
    records: csv::StringRecordsIntoIter<Box<dyn Read>>,
    pending: Option<csv::StringRecord>,
    labelled: bool,
    dim: Option<usize>,
    next_id: u64,
    failed: bool,
}

pub fn file_stream(path: &Path) -> Result<FileStream> {
    let file = File::open(path)?;
    let reader: Box<dyn Read> = Box::new(std::io::BufReader::new(file));
    let mut records = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader)
        .into_records();
    let (pending, labelled) = match records.next() {
        None => (None, false),
        Some(first) => {
            let first = first.map_err(csv_error)?;
            if first.iter().all(|f| f.parse::<f64>().is_ok()) {
                (Some(first), false)
            } else {
                let labelled = first.iter().last().is_some_and(|h| h.eq_ignore_ascii_case("label"));
                (None, labelled)
            }
        }
    };
    Ok(FileStream { records, pending, labelled, dim: None, next_id: 0, failed: false })
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse { line, message: e.to_string() }
}

impl FileStream {
    fn parse(&mut self, record: csv::StringRecord) -> Result<LabeledPoint> {
        let line = record.position().map_or(0, |p| p.line());
        let err = |message: String| Error::Parse { line, message };
        let fields: Vec<&str> = record.iter().collect();
        let (values, label) = if self.labelled {
            let (last, rest) = fields.split_last().ok_or_else(|| err("empty row".into()))?;
            let label = last.parse::<u32>().map_err(|_| err(format!("label '{last}' is not a non-negative integer")))?;
            (rest, Some(label))
        } else {
            (&fields[..], None)
        };
        let coords = values
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| err(format!("field '{f}' is not a number"))))
            .collect::<Result<Vec<f64>>>()?;
        if coords.is_empty() {
            return Err(err("row has no coordinates".into()));
        }
        if let Some(bad) = coords.iter().find(|c| !c.is_finite()) {
            return Err(err(format!("field '{bad}' is not finite")));
        }
        let dim = *self.dim.get_or_insert(coords.len());
        if coords.len() != dim {
            return Err(err(format!("row has {} coordinates, expected {dim}", coords.len())));
        }
        let point = HighDimPoint::new(self.next_id, coords);
        self.next_id += 1;
        Ok(LabeledPoint { point, label })
    }
}

impl Iterator for FileStream {
    type Item = Result<LabeledPoint>;

    /// Yields parse errors once, then stops.
    fn next(&mut self) -> Option<Result<LabeledPoint>> {
        if self.failed {
            return None;
        }
        let record = match self.pending.take() {
            Some(r) => Ok(r),
            None => self.records.next()?.map_err(csv_error),
        };
        let item = record.and_then(|r| self.parse(r));
        self.failed = item.is_err();
        Some(item)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn stationary_structure_mean() {
        let n = 10_000;
        let specs = [
            DriftStructureSpec::stationary([1.0, -2.0, 3.0], n),
            DriftStructureSpec::stationary([0.0; 3], 0),
            DriftStructureSpec::stationary([0.0; 3], 0),
        ];
        let pts: Vec<_> = synthetic_drift_stream(specs, 4).unwrap().collect();
        assert_eq!(pts.len(), n);
        for (axis, want) in [1.0, -2.0, 3.0].into_iter().enumerate() {
            let mean = pts.iter().map(|p| p.point.coords[axis]).sum::<f64>() / n as f64;
            assert!((mean - want).abs() < 3.0 / (n as f64).sqrt(), "axis {axis}: {mean}");
        }
    }

    #[test]
    fn moving_structure_drifts_along_x() {
        let mut moving = DriftStructureSpec::stationary([0.0; 3], 3000);
        moving.velocity = [1.0, 0.0, 0.0];
        moving.tick_every = 100;
        let specs = [moving, DriftStructureSpec::stationary([0.0; 3], 0), DriftStructureSpec::stationary([0.0; 3], 0)];
        let pts: Vec<_> = synthetic_drift_stream(specs, 9).unwrap().collect();
        let window_means: Vec<f64> = pts
            .chunks(300)
            .map(|w| w.iter().map(|p| p.point.coords[0]).sum::<f64>() / w.len() as f64)
            .collect();
        assert!(window_means.windows(2).all(|w| w[1] > w[0]), "{window_means:?}");
    }

    #[test]
    fn round_robin_and_deterministic() {
        let a: Vec<_> = synthetic_drift_stream(drift_preset(30), 1).unwrap().collect();
        let b: Vec<_> = synthetic_drift_stream(drift_preset(30), 1).unwrap().collect();
        assert_eq!(a, b);
        let labels: Vec<_> = a.iter().take(6).map(|p| p.label.unwrap()).collect();
        assert_eq!(labels, vec![0, 1, 2, 0, 1, 2]);
        let c: Vec<_> = synthetic_drift_stream(drift_preset(30), 2).unwrap().collect();
        assert_ne!(a, c);
    }

    #[test]
    fn preset_structures_cross() {
        let specs = drift_preset(30_000);
        let ticks = 30_000 / specs[0].tick_every;
        let x0 = specs[0].mean[0] + specs[0].velocity[0] * ticks as f64;
        let x1 = specs[1].mean[0] + specs[1].velocity[0] * ticks as f64;
        assert!(specs[0].mean[0] < specs[1].mean[0] && x0 > x1);
        assert_eq!(specs.iter().map(|s| s.points).sum::<usize>(), 30_000);
    }

    #[test]
    fn non_spd_covariance_is_rejected() {
        let mut bad = DriftStructureSpec::stationary([0.0; 3], 10);
        bad.covariance = [[1.0, 2.0, 0.0], [2.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let specs = [bad, DriftStructureSpec::stationary([0.0; 3], 1), DriftStructureSpec::stationary([0.0; 3], 1)];
        assert!(matches!(synthetic_drift_stream(specs, 0), Err(Error::Config(_))));
    }

    #[test]
    fn blob_means_are_separated() {
        let pts = blob_stream(2, 200, 50.0, 3, 0).unwrap();
        assert_eq!(pts.len(), 400);
        // the separating hyperplane x0 - x1 = 0 splits the two blobs
        for p in &pts {
            let side = p.point.coords[0] - p.point.coords[1] > 0.0;
            assert_eq!(side, p.label == Some(0));
        }
        assert!(blob_stream(1, 5, 1.0, 2, 0).unwrap().iter().all(|p| p.label == Some(0)));
        assert!(blob_stream(2, 5, 0.0, 2, 0).is_err());
    }

    #[test]
    fn csv_points_in_file_order() {
        let f = write_csv("1,2\n3,4\n5,6\n");
        let pts: Vec<_> = file_stream(f.path()).unwrap().collect::<Result<_>>().unwrap();
        assert_eq!(pts.len(), 3);
        assert_eq!(pts[2].point.coords, vec![5.0, 6.0]);
        assert_eq!(pts[2].point.id, 2);
        assert!(pts.iter().all(|p| p.label.is_none()));
    }

    #[test]
    fn csv_header_and_labels() {
        let f = write_csv("x,y,label\n1,2,0\n3,4,7\n");
        let pts: Vec<_> = file_stream(f.path()).unwrap().collect::<Result<_>>().unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[1].label, Some(7));
        assert_eq!(pts[1].point.coords, vec![3.0, 4.0]);
    }

    #[test]
    fn csv_errors_name_the_line() {
        let f = write_csv("1,2\n3,abc\n");
        let err = file_stream(f.path()).unwrap().find_map(|r| r.err()).unwrap();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");

        let f = write_csv("1,2\n3,4\n5\n");
        let err = file_stream(f.path()).unwrap().find_map(|r| r.err()).unwrap();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
    }
}
