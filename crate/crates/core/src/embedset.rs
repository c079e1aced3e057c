//! Labeled embedding pools, episode sampling and synthetic data.

use alloc::collections::BTreeMap;
use alloc::string::ToString;
use alloc::vec::Vec;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// A pool of fixed-dimension embedding vectors with integer class labels.
///
/// Vectors are stored as `f32`, matching the on-disk format; everything
/// downstream widens to `f64`. Invariants (length, finiteness, non-empty
/// classes) are enforced on insertion, so an `EmbeddingSet` that exists is
/// always valid.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    data: Vec<f32>,
    labels: Vec<u32>,
    class_index: BTreeMap<u32, Vec<usize>>,
}

impl EmbeddingSet {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::out_of_range("dim", 0.0, "> 0"));
        }
        Ok(Self {
            dim,
            data: Vec::new(),
            labels: Vec::new(),
            class_index: BTreeMap::new(),
        })
    }

    pub fn from_records<I, V>(dim: usize, records: I) -> Result<Self>
    where
        I: IntoIterator<Item = (V, u32)>,
        V: AsRef<[f32]>,
    {
        let mut set = Self::new(dim)?;
        for (v, c) in records {
            set.push(v.as_ref(), c)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, vector: &[f32], class_id: u32) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: vector.len(),
            });
        }
        if let Some(index) = vector.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                context: "embedding vector",
                index,
            });
        }
        let record = self.labels.len();
        self.data.extend_from_slice(vector);
        self.labels.push(class_id);
        self.class_index.entry(class_id).or_default().push(record);
        Ok(())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn vector(&self, record: usize) -> &[f32] {
        &self.data[record * self.dim..(record + 1) * self.dim]
    }

    pub fn label(&self, record: usize) -> u32 {
        self.labels[record]
    }

    pub fn records(&self) -> impl ExactSizeIterator<Item = (&[f32], u32)> + '_ {
        (0..self.len()).map(move |i| (self.vector(i), self.labels[i]))
    }

    pub fn n_classes(&self) -> usize {
        self.class_index.len()
    }

    /// Class ids in ascending order.
    pub fn classes(&self) -> impl Iterator<Item = u32> + '_ {
        self.class_index.keys().copied()
    }

    /// Record indices of `class_id`, in insertion order.
    pub fn class_records(&self, class_id: u32) -> &[usize] {
        self.class_index.get(&class_id).map_or(&[], Vec::as_slice)
    }

    fn vector_f64(&self, record: usize) -> impl Iterator<Item = f64> + '_ {
        self.vector(record).iter().map(|&x| f64::from(x))
    }
}

/// Query labels of an episode. Only the scorer reads them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HiddenLabels(Vec<usize>);

impl HiddenLabels {
    pub(crate) fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// One N-way k-shot task with `q` queries per class.
///
/// Classes are relabeled `0..N` in sampling order. Support and query rows are
/// grouped by local class (all rows of class 0 first, then class 1, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    n_ways: usize,
    k_shots: usize,
    n_queries: usize,
    classes: Vec<u32>,
    support: Matrix,
    support_labels: Vec<usize>,
    query: Matrix,
    query_labels: HiddenLabels,
    support_records: Vec<usize>,
    query_records: Vec<usize>,
}

impl Episode {
    /// Assembles an episode from explicit parts, checking the per-class
    /// count invariants. `classes` maps each local id to its pool class.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        k_shots: usize,
        n_queries: usize,
        classes: Vec<u32>,
        support: Matrix,
        support_labels: Vec<usize>,
        query: Matrix,
        query_labels: Vec<usize>,
    ) -> Result<Self> {
        let n_ways = classes.len();
        check_counts("support", &support, &support_labels, n_ways, k_shots)?;
        check_counts("query", &query, &query_labels, n_ways, n_queries)?;
        if support.cols() != query.cols() {
            return Err(Error::DimensionMismatch {
                expected: support.cols(),
                actual: query.cols(),
            });
        }
        Ok(Self {
            n_ways,
            k_shots,
            n_queries,
            classes,
            support,
            support_labels,
            query,
            query_labels: HiddenLabels(query_labels),
            support_records: Vec::new(),
            query_records: Vec::new(),
        })
    }

    pub fn n_ways(&self) -> usize {
        self.n_ways
    }

    pub fn k_shots(&self) -> usize {
        self.k_shots
    }

    pub fn n_queries(&self) -> usize {
        self.n_queries
    }

    pub fn dim(&self) -> usize {
        self.support.cols()
    }

    /// Pool class id of each local class.
    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    pub fn support(&self) -> &Matrix {
        &self.support
    }

    pub fn support_labels(&self) -> &[usize] {
        &self.support_labels
    }

    pub fn query(&self) -> &Matrix {
        &self.query
    }

    pub fn query_labels(&self) -> &HiddenLabels {
        &self.query_labels
    }

    /// Pool record indices of the support rows (empty for hand-built episodes).
    pub fn support_records(&self) -> &[usize] {
        &self.support_records
    }

    pub fn query_records(&self) -> &[usize] {
        &self.query_records
    }

    /// Number of queries per local class.
    pub fn query_class_counts(&self) -> Vec<usize> {
        let mut counts = alloc::vec![0; self.n_ways];
        for &l in self.query_labels.as_slice() {
            counts[l] += 1;
        }
        counts
    }
}

fn check_counts(
    what: &'static str,
    rows: &Matrix,
    labels: &[usize],
    n_ways: usize,
    per_class: usize,
) -> Result<()> {
    let expected = n_ways * per_class;
    if rows.rows() != expected || labels.len() != expected {
        return Err(Error::CountMismatch {
            what,
            expected,
            actual: rows.rows().min(labels.len()),
        });
    }
    let mut counts = alloc::vec![0usize; n_ways];
    for &l in labels {
        if l >= n_ways {
            return Err(Error::out_of_range("local class", l as f64, "< n_ways"));
        }
        counts[l] += 1;
    }
    if let Some(c) = counts.iter().position(|&c| c != per_class) {
        return Err(Error::CountMismatch {
            what,
            expected: per_class,
            actual: counts[c],
        });
    }
    Ok(())
}

/// Draws an N-way k-shot episode with `n_queries` queries per class.
///
/// Classes and records are chosen uniformly without replacement; the result
/// depends only on `set` and the generator state.
pub fn sample_episode<R: Rng + ?Sized>(
    set: &EmbeddingSet,
    n_ways: usize,
    k_shots: usize,
    n_queries: usize,
    rng: &mut R,
) -> Result<Episode> {
    for (name, v) in [
        ("n_ways", n_ways),
        ("k_shots", k_shots),
        ("n_queries", n_queries),
    ] {
        if v == 0 {
            return Err(Error::out_of_range(name, 0.0, "> 0"));
        }
    }
    if set.n_classes() < n_ways {
        return Err(Error::InsufficientClasses {
            requested: n_ways,
            available: set.n_classes(),
        });
    }

    let mut pool: Vec<u32> = set.classes().collect();
    let (chosen, _) = pool.partial_shuffle(rng, n_ways);
    let classes = chosen.to_vec();

    let per_class = k_shots + n_queries;
    let dim = set.dim();
    let mut support = Vec::with_capacity(n_ways * k_shots * dim);
    let mut query = Vec::with_capacity(n_ways * n_queries * dim);
    let mut support_labels = Vec::with_capacity(n_ways * k_shots);
    let mut query_labels = Vec::with_capacity(n_ways * n_queries);
    let mut support_records = Vec::with_capacity(n_ways * k_shots);
    let mut query_records = Vec::with_capacity(n_ways * n_queries);

    for (local, &class) in classes.iter().enumerate() {
        let records = set.class_records(class);
        if records.len() < per_class {
            return Err(Error::InsufficientRecords {
                class,
                available: records.len(),
                required: per_class,
            });
        }
        let mut records = records.to_vec();
        let (picked, _) = records.partial_shuffle(rng, per_class);
        for &r in &picked[..k_shots] {
            support.extend(set.vector_f64(r));
            support_labels.push(local);
            support_records.push(r);
        }
        for &r in &picked[k_shots..] {
            query.extend(set.vector_f64(r));
            query_labels.push(local);
            query_records.push(r);
        }
    }

    Ok(Episode {
        n_ways,
        k_shots,
        n_queries,
        classes,
        support: Matrix::from_vec(n_ways * k_shots, dim, support)?,
        support_labels,
        query: Matrix::from_vec(n_ways * n_queries, dim, query)?,
        query_labels: HiddenLabels(query_labels),
        support_records,
        query_records,
    })
}

/// Parameters of an isotropic-Gaussian synthetic pool.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub mean_scale: f64,
    pub noise_sigma: f64,
}

impl SyntheticSpec {
    /// 20 classes of 50 points in 64 dimensions, means at radius 10, unit noise.
    pub const STANDARD: SyntheticSpec = SyntheticSpec {
        n_classes: 20,
        per_class: 50,
        dim: 64,
        mean_scale: 10.0,
        noise_sigma: 1.0,
    };

    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<EmbeddingSet> {
        generate_synthetic(
            self.n_classes,
            self.per_class,
            self.dim,
            self.mean_scale,
            self.noise_sigma,
            rng,
        )
    }
}

/// Parses `n_classes,per_class,dim,mean_scale,sigma`.
impl FromStr for SyntheticSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let bad = || {
            Error::InvalidConfig(alloc::format!(
                "synthetic spec `{s}`: expected n_classes,per_class,dim,mean_scale,sigma"
            ))
        };
        if parts.len() != 5 {
            return Err(bad());
        }
        let int = |p: &str| p.parse::<usize>().map_err(|_| bad());
        let real = |p: &str| p.parse::<f64>().map_err(|_| bad());
        Ok(SyntheticSpec {
            n_classes: int(parts[0])?,
            per_class: int(parts[1])?,
            dim: int(parts[2])?,
            mean_scale: real(parts[3])?,
            noise_sigma: real(parts[4])?,
        })
    }
}

impl core::fmt::Display for SyntheticSpec {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(
            f,
            "{},{},{},{},{}",
            self.n_classes, self.per_class, self.dim, self.mean_scale, self.noise_sigma
        )
    }
}

/// Generates `n_classes` Gaussian clusters of `per_class` points each.
///
/// Class means are uniform on the sphere of radius `mean_scale` (normalized
/// standard normal draws); points are `mean + noise_sigma * N(0, I)`.
/// Class ids are `0..n_classes`; records are grouped by class.
pub fn generate_synthetic<R: Rng + ?Sized>(
    n_classes: usize,
    per_class: usize,
    dim: usize,
    mean_scale: f64,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<EmbeddingSet> {
    for (name, v) in [
        ("n_classes", n_classes),
        ("per_class", per_class),
        ("dim", dim),
    ] {
        if v == 0 {
            return Err(Error::out_of_range(name, 0.0, "> 0"));
        }
    }
    if !(mean_scale.is_finite() && mean_scale >= 0.0) {
        return Err(Error::out_of_range(
            "mean_scale",
            mean_scale,
            "finite, >= 0",
        ));
    }
    if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
        return Err(Error::out_of_range(
            "noise_sigma",
            noise_sigma,
            "finite, >= 0",
        ));
    }
    let class_id = |c: usize| {
        u32::try_from(c).map_err(|_| Error::InvalidConfig("n_classes exceeds u32".to_string()))
    };

    let mut set = EmbeddingSet::new(dim)?;
    let mut mean = alloc::vec![0.0f64; dim];
    let mut point = alloc::vec![0.0f32; dim];
    for c in 0..n_classes {
        loop {
            mean.iter_mut()
                .for_each(|m| *m = rng.sample(StandardNormal));
            let n = crate::math::norm(&mean);
            if n > 0.0 {
                mean.iter_mut().for_each(|m| *m *= mean_scale / n);
                break;
            }
        }
        for _ in 0..per_class {
            for (p, m) in point.iter_mut().zip(&mean) {
                let z: f64 = rng.sample(StandardNormal);
                *p = (m + noise_sigma * z) as f32;
            }
            set.push(&point, class_id(c)?)?;
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::TaskRng;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn toy_set(n_classes: u32, per_class: usize, dim: usize) -> EmbeddingSet {
        let mut set = EmbeddingSet::new(dim).unwrap();
        for c in 0..n_classes {
            for i in 0..per_class {
                let v: Vec<f32> = (0..dim)
                    .map(|d| (c * 1000 + i as u32 * 10 + d as u32) as f32)
                    .collect();
                set.push(&v, c).unwrap();
            }
        }
        set
    }

    #[test]
    fn push_validates() {
        let mut set = EmbeddingSet::new(3).unwrap();
        assert!(matches!(
            set.push(&[1.0, 2.0], 0),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            set.push(&[1.0, f32::NAN, 0.0], 0),
            Err(Error::NonFinite { index: 1, .. })
        ));
        assert!(set.push(&[1.0, f32::INFINITY, 0.0], 0).is_err());
        assert!(set.is_empty());
        assert!(EmbeddingSet::new(0).is_err());
    }

    #[test]
    fn five_way_one_shot_sizes() {
        let set = toy_set(8, 20, 4);
        let mut rng = TaskRng::seed_from_u64(1);
        let ep = sample_episode(&set, 5, 1, 15, &mut rng).unwrap();
        assert_eq!(ep.support().rows(), 5);
        assert_eq!(ep.query().rows(), 75);
        assert_eq!(ep.support().rows() + ep.query().rows(), 80);
        assert_eq!(ep.query_class_counts(), vec![15; 5]);
    }

    #[test]
    fn single_class_two_records_split() {
        let set = toy_set(1, 2, 3);
        let mut rng = TaskRng::seed_from_u64(9);
        let ep = sample_episode(&set, 1, 1, 1, &mut rng).unwrap();
        let mut used = vec![ep.support_records()[0], ep.query_records()[0]];
        used.sort_unstable();
        assert_eq!(used, vec![0, 1]);
        assert_eq!(ep.support_labels(), &[0]);
    }

    #[test]
    fn same_seed_same_episode() {
        let set = toy_set(10, 30, 5);
        let a = sample_episode(&set, 5, 5, 15, &mut TaskRng::seed_from_u64(42)).unwrap();
        let b = sample_episode(&set, 5, 5, 15, &mut TaskRng::seed_from_u64(42)).unwrap();
        let c = sample_episode(&set, 5, 5, 15, &mut TaskRng::seed_from_u64(43)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn sampling_errors() {
        let set = toy_set(3, 4, 2);
        let mut rng = TaskRng::seed_from_u64(0);
        assert!(matches!(
            sample_episode(&set, 4, 1, 1, &mut rng),
            Err(Error::InsufficientClasses {
                requested: 4,
                available: 3
            })
        ));
        assert!(matches!(
            sample_episode(&set, 2, 3, 2, &mut rng),
            Err(Error::InsufficientRecords {
                available: 4,
                required: 5,
                ..
            })
        ));
        assert!(sample_episode(&set, 0, 1, 1, &mut rng).is_err());
    }

    #[test]
    fn from_parts_checks_counts() {
        let support = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        let query = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        assert!(Episode::from_parts(
            1,
            1,
            vec![0, 1],
            support.clone(),
            vec![0, 1],
            query.clone(),
            vec![1, 0]
        )
        .is_ok());
        assert!(
            Episode::from_parts(1, 1, vec![0, 1], support, vec![0, 0], query, vec![1, 0]).is_err()
        );
    }

    #[test]
    fn zero_noise_gives_identical_class_members() {
        let set = generate_synthetic(3, 4, 8, 5.0, 0.0, &mut TaskRng::seed_from_u64(3)).unwrap();
        for c in set.classes() {
            let recs = set.class_records(c);
            for &r in recs {
                assert_eq!(set.vector(r), set.vector(recs[0]));
            }
        }
    }

    #[test]
    fn synthetic_counts() {
        let set =
            generate_synthetic(20, 50, 64, 10.0, 1.0, &mut TaskRng::seed_from_u64(5)).unwrap();
        assert_eq!(set.len(), 1000);
        assert_eq!(set.n_classes(), 20);
        assert!(set.classes().all(|c| set.class_records(c).len() == 50));
    }

    #[test]
    fn synthetic_means_have_requested_radius() {
        let set = generate_synthetic(4, 1, 32, 7.5, 0.0, &mut TaskRng::seed_from_u64(8)).unwrap();
        for (v, _) in set.records() {
            let n = v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
            assert!((n - 7.5).abs() < 1e-5, "norm {n}");
        }
    }

    #[test]
    fn synthetic_rejects_bad_params() {
        let mut rng = TaskRng::seed_from_u64(0);
        assert!(generate_synthetic(0, 1, 1, 1.0, 1.0, &mut rng).is_err());
        assert!(generate_synthetic(1, 1, 1, 1.0, -1.0, &mut rng).is_err());
        assert!(generate_synthetic(1, 1, 1, f64::NAN, 1.0, &mut rng).is_err());
    }

    /// Nearest-class-mean with means estimated from 50 points per class,
    /// evaluated by brute force on 10,000 held-out draws.
    #[test]
    fn synthetic_separability_nearest_mean_oracle() {
        let (n_classes, train, held) = (20usize, 50usize, 500usize);
        let set = generate_synthetic(
            n_classes,
            train + held,
            64,
            10.0,
            1.0,
            &mut TaskRng::seed_from_u64(2024),
        )
        .unwrap();
        let means: Vec<Vec<f64>> = set
            .classes()
            .map(|c| {
                let recs = &set.class_records(c)[..train];
                let mut m = vec![0.0; 64];
                for &r in recs {
                    for (a, &x) in m.iter_mut().zip(set.vector(r)) {
                        *a += f64::from(x) / train as f64;
                    }
                }
                m
            })
            .collect();
        let mut correct = 0usize;
        let mut total = 0usize;
        for c in set.classes() {
            for &r in &set.class_records(c)[train..] {
                let v = set.vector(r);
                let best = (0..n_classes)
                    .min_by(|&a, &b| {
                        let da: f64 = means[a]
                            .iter()
                            .zip(v)
                            .map(|(m, &x)| (m - f64::from(x)).powi(2))
                            .sum();
                        let db: f64 = means[b]
                            .iter()
                            .zip(v)
                            .map(|(m, &x)| (m - f64::from(x)).powi(2))
                            .sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                correct += usize::from(best as u32 == c);
                total += 1;
            }
        }
        assert_eq!(total, 10_000);
        assert!(
            correct as f64 / total as f64 >= 0.99,
            "accuracy {}",
            correct as f64 / total as f64
        );
    }

    #[test]
    fn synthetic_spec_parse() {
        let s: SyntheticSpec = "20, 50,64,10,0.1".parse().unwrap();
        assert_eq!(s.n_classes, 20);
        assert_eq!(s.noise_sigma, 0.1);
        assert_eq!(s.to_string().parse::<SyntheticSpec>().unwrap(), s);
        assert!("1,2,3".parse::<SyntheticSpec>().is_err());
        assert!("a,2,3,4,5".parse::<SyntheticSpec>().is_err());
    }

    proptest! {
        #[test]
        fn episodes_are_disjoint_with_exact_counts(
            n_classes in 1u32..8,
            extra in 0usize..5,
            n_ways in 1usize..8,
            k in 1usize..4,
            q in 1usize..4,
            seed in any::<u64>(),
        ) {
            prop_assume!(n_ways <= n_classes as usize);
            let set = toy_set(n_classes, k + q + extra, 3);
            let ep = sample_episode(&set, n_ways, k, q, &mut TaskRng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(ep.support().rows(), n_ways * k);
            prop_assert_eq!(ep.query().rows(), n_ways * q);
            prop_assert_eq!(ep.query_class_counts(), vec![q; n_ways]);
            for c in 0..n_ways {
                prop_assert_eq!(ep.support_labels().iter().filter(|&&l| l == c).count(), k);
            }
            let mut all: Vec<usize> = ep.support_records().iter().chain(ep.query_records()).copied().collect();
            all.sort_unstable();
            let before = all.len();
            all.dedup();
            prop_assert_eq!(all.len(), before);
            for (row, &rec) in ep.support_records().iter().enumerate() {
                let local = ep.support_labels()[row];
                prop_assert_eq!(set.label(rec), ep.classes()[local]);
            }
        }
    }
}
