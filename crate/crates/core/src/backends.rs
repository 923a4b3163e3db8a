//! Back-ends for utterance vectors: cosine scoring, LDA and two-covariance
//! PLDA.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use ndarray::{Array1, Array2};

use crate::container::Archive;
use crate::error::{Error, Result};

fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn to_nd(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

fn vec_na(v: &Array1<f64>) -> DVector<f64> {
    DVector::from_iterator(v.len(), v.iter().copied())
}

pub fn cosine_score(a: &Array1<f64>, b: &Array1<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::usage("cosine scoring needs vectors of equal length"));
    }
    let (na, nb) = (a.dot(a).sqrt(), b.dot(b).sqrt());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::usage("cosine score of a zero vector"));
    }
    Ok((a.dot(b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Vectors that have been centered and scaled to unit length; the only
/// input PLDA training accepts.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedVectors {
    /// One vector per row.
    pub rows: Array2<f64>,
    pub center: Array1<f64>,
}

pub fn length_normalize(v: &Array1<f64>, center: &Array1<f64>) -> Result<Array1<f64>> {
    if v.len() != center.len() {
        return Err(Error::usage("vector and center differ in length"));
    }
    let c = v - center;
    let n = c.dot(&c).sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::DegenerateVector("vector coincides with the center".into()));
    }
    Ok(c / n)
}

pub fn center_and_length_normalize(vectors: &Array2<f64>, center: &Array1<f64>) -> Result<NormalizedVectors> {
    let mut rows = Array2::zeros(vectors.dim());
    for (i, v) in vectors.rows().into_iter().enumerate() {
        rows.row_mut(i).assign(&length_normalize(&v.to_owned(), center)?);
    }
    Ok(NormalizedVectors {
        rows,
        center: center.clone(),
    })
}

pub fn mean_vector(vectors: &Array2<f64>) -> Result<Array1<f64>> {
    vectors
        .mean_axis(ndarray::Axis(0))
        .ok_or_else(|| Error::usage("mean of an empty vector set"))
}

/// Groups row indices by label, with labels in ascending order.
fn classes(labels: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        map.entry(l).or_default().push(i);
    }
    map
}

/// Global mean, between-class and within-class scatter (both normalized by
/// the total count).
pub fn scatter_matrices(vectors: &Array2<f64>, labels: &[usize]) -> Result<(Array1<f64>, Array2<f64>, Array2<f64>)> {
    if vectors.nrows() != labels.len() {
        return Err(Error::usage("one label per vector required"));
    }
    let n = vectors.nrows() as f64;
    let mu = mean_vector(vectors)?;
    let d = vectors.ncols();
    let mut sb = Array2::zeros((d, d));
    let mut sw = Array2::zeros((d, d));
    for idx in classes(labels).values() {
        let sub = vectors.select(ndarray::Axis(0), idx);
        let mc = mean_vector(&sub)?;
        let dm = (&mc - &mu).insert_axis(ndarray::Axis(1));
        sb.scaled_add(idx.len() as f64, &dm.dot(&dm.t()));
        let centered = &sub - &mc;
        sw += &centered.t().dot(&centered);
    }
    Ok((mu, sb / n, sw / n))
}

fn check_classes(labels: &[usize], min_per_class: usize) -> Result<usize> {
    let c = classes(labels);
    if c.len() < 2 {
        return Err(Error::usage("at least two classes are required"));
    }
    if let Some((l, idx)) = c.iter().find(|(_, v)| v.len() < min_per_class) {
        return Err(Error::usage(format!(
            "class {l} has {} examples, at least {min_per_class} required",
            idx.len()
        )));
    }
    Ok(c.len())
}

/// Makes the largest-magnitude entry of each column positive.
fn fix_column_signs(w: &mut DMatrix<f64>) {
    for mut col in w.column_iter_mut() {
        let pivot = col.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        if pivot < 0.0 {
            col.neg_mut();
        }
    }
}

/// Condition number beyond which the within-class scatter is regularized.
const MAX_CONDITION: f64 = 1e10;

#[derive(Debug, Clone, PartialEq)]
pub struct LdaTransform {
    pub mean: Array1<f64>,
    /// `D x d`; projected vectors are `W' (x - mean)`.
    pub w: Array2<f64>,
    /// Generalized eigenvalues of the retained directions, descending.
    pub eigenvalues: Vec<f64>,
    /// Whether `1e-6 trace(S_w) / D` was added to the within-class scatter.
    pub regularized: bool,
}

/// Default projected dimension: `min(D, classes - 1, 150)`.
pub fn default_lda_dim(dim: usize, num_classes: usize) -> usize {
    dim.min(num_classes.saturating_sub(1)).min(150)
}

/// Fisher LDA: the top `target_dim` solutions of `S_b w = lambda S_w w`,
/// scaled so the projected within-class scatter is the identity.
pub fn fit_lda(vectors: &Array2<f64>, labels: &[usize], target_dim: usize) -> Result<LdaTransform> {
    let k = check_classes(labels, 2)?;
    let d = vectors.ncols();
    if target_dim == 0 || target_dim > d.min(k - 1) {
        return Err(Error::usage(format!(
            "LDA dimension {target_dim} outside 1..={} for {k} classes in {d} dimensions",
            d.min(k - 1)
        )));
    }
    let (mean, sb, sw) = scatter_matrices(vectors, labels)?;
    let mut sw = to_na(&sw);
    let sb = to_na(&sb);

    let eig = SymmetricEigen::new(sw.clone());
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let regularized = !(lo > 0.0 && hi / lo < MAX_CONDITION);
    if regularized {
        let eps = 1e-6 * sw.trace() / d as f64;
        let eps = if eps > 0.0 { eps } else { 1e-12 };
        log::warn!("within-class scatter is ill-conditioned; adding {eps:.3e} to its diagonal");
        sw += DMatrix::identity(d, d) * eps;
    }
    let chol = Cholesky::new(sw).ok_or_else(|| Error::usage("within-class scatter is not positive definite"))?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::usage("within-class scatter is singular"))?;
    let m = &l_inv * sb * l_inv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let v = DMatrix::from_fn(d, target_dim, |i, j| eig.eigenvectors[(i, order[j])]);
    let mut w = l_inv.transpose() * v;
    fix_column_signs(&mut w);
    Ok(LdaTransform {
        mean,
        w: to_nd(&w),
        eigenvalues: order[..target_dim].iter().map(|&i| eig.eigenvalues[i]).collect(),
        regularized,
    })
}

impl LdaTransform {
    pub fn input_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn apply(&self, v: &Array1<f64>) -> Result<Array1<f64>> {
        if v.len() != self.input_dim() {
            return Err(Error::usage(format!(
                "LDA expects {}-d vectors, got {}",
                self.input_dim(),
                v.len()
            )));
        }
        Ok(self.w.t().dot(&(v - &self.mean)))
    }

    pub fn apply_rows(&self, rows: &Array2<f64>) -> Result<Array2<f64>> {
        if rows.ncols() != self.input_dim() {
            return Err(Error::usage("LDA input width mismatch"));
        }
        Ok((rows - &self.mean).dot(&self.w))
    }

    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new("lda");
        a.push_real("mean", vec![self.mean.len()], self.mean.to_vec());
        a.push_real("w", vec![self.w.nrows(), self.w.ncols()], self.w.iter().copied().collect());
        a.push_real("eigenvalues", vec![self.eigenvalues.len()], self.eigenvalues.clone());
        a.push_text("meta", format!("regularized={}", self.regularized));
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        a.expect_kind("lda")?;
        let (_, mean) = a.real("mean")?;
        let (shape, w) = a.real("w")?;
        if shape.len() != 2 || shape[0] != mean.len() {
            return Err(Error::format("LDA projection shape does not match its mean"));
        }
        let w = Array2::from_shape_vec((shape[0], shape[1]), w.to_vec()).map_err(|e| Error::format(e.to_string()))?;
        Ok(Self {
            mean: Array1::from_vec(mean.to_vec()),
            w,
            eigenvalues: a.real("eigenvalues")?.1.to_vec(),
            regularized: a.text("meta")?.contains("regularized=true"),
        })
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PldaConfig {
    pub iterations: usize,
}

impl Default for PldaConfig {
    fn default() -> Self {
        Self { iterations: 20 }
    }
}

/// Two-covariance model: `x = mean + y + e`, `y ~ N(0, phi_b)` shared by
/// all vectors of a speaker, `e ~ N(0, phi_w)` per vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PldaModel {
    pub mean: Array1<f64>,
    pub phi_b: Array2<f64>,
    pub phi_w: Array2<f64>,
    /// Set when an eigenvalue floor had to be applied to either covariance.
    pub floored: bool,
    /// Marginal log-likelihood of the training data after each EM iteration
    /// (index 0 is the initial model).
    pub log_likelihood: Vec<f64>,
    scoring: PldaScoring,
}

#[derive(Debug, Clone, PartialEq)]
struct PldaScoring {
    q: DMatrix<f64>,
    p: DMatrix<f64>,
    constant: f64,
}

fn sym(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Clamps eigenvalues from below at `1e-6 trace / D`; reports whether any
/// value moved.
fn floor_eigenvalues(m: DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let d = m.nrows();
    let floor = (1e-6 * m.trace() / d as f64).max(1e-12);
    let eig = SymmetricEigen::new(sym(m));
    if eig.eigenvalues.iter().all(|&v| v >= floor) {
        return (eig.recompose(), false);
    }
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    let vecs = &eig.eigenvectors;
    (sym(vecs * DMatrix::from_diagonal(&vals) * vecs.transpose()), true)
}

fn log_det_spd(m: &DMatrix<f64>) -> Result<f64> {
    let c = Cholesky::new(m.clone()).ok_or_else(|| Error::usage("matrix is not positive definite"))?;
    Ok(2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Cholesky::new(m.clone())
        .map(|c| sym(c.inverse()))
        .ok_or_else(|| Error::usage("matrix is not positive definite"))
}

struct ClassStats {
    n: usize,
    /// Sum of centered vectors.
    f: DVector<f64>,
    /// Sum of `x' W x` is recomputed per iteration from these.
    members: Vec<DVector<f64>>,
}

fn class_stats(vectors: &Array2<f64>, labels: &[usize], mean: &Array1<f64>) -> Vec<ClassStats> {
    classes(labels)
        .values()
        .map(|idx| {
            let members: Vec<DVector<f64>> = idx.iter().map(|&i| vec_na(&(&vectors.row(i).to_owned() - mean))).collect();
            let f = members.iter().fold(DVector::zeros(mean.len()), |acc, x| acc + x);
            ClassStats { n: idx.len(), f, members }
        })
        .collect()
}

fn marginal_log_likelihood(stats: &[ClassStats], phi_b: &DMatrix<f64>, phi_w: &DMatrix<f64>) -> Result<f64> {
    let d = phi_b.nrows() as f64;
    let b = spd_inverse(phi_b)?;
    let w = spd_inverse(phi_w)?;
    let (ld_b, ld_w) = (log_det_spd(phi_b)?, log_det_spd(phi_w)?);
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let mut total = 0.0;
    for s in stats {
        let n = s.n as f64;
        let l = &b + &w * n;
        let wf = &w * &s.f;
        let l_inv = spd_inverse(&l)?;
        let quad: f64 = s.members.iter().map(|x| x.dot(&(&w * x))).sum();
        total += -0.5 * n * d * ln2pi - 0.5 * ld_b - 0.5 * n * ld_w - 0.5 * log_det_spd(&l)? - 0.5 * quad
            + 0.5 * wf.dot(&(&l_inv * &wf));
    }
    Ok(total)
}

/// PLDA on centered, length-normalized vectors.
pub fn fit_plda(vectors: &NormalizedVectors, labels: &[usize], cfg: &PldaConfig) -> Result<PldaModel> {
    fit_plda_unnormalized(&vectors.rows, labels, cfg)
}

/// EM for the two-covariance model on arbitrary vectors. The global mean is
/// fixed at the sample mean; the covariances start from the scatter
/// matrices.
pub fn fit_plda_unnormalized(vectors: &Array2<f64>, labels: &[usize], cfg: &PldaConfig) -> Result<PldaModel> {
    check_classes(labels, 2)?;
    let d = vectors.ncols();
    let (mean, sb, sw) = scatter_matrices(vectors, labels)?;
    let stats = class_stats(vectors, labels, &mean);
    let total_n: usize = stats.iter().map(|s| s.n).sum();
    let (mut phi_b, fb) = floor_eigenvalues(to_na(&sb));
    let (mut phi_w, fw) = floor_eigenvalues(to_na(&sw));
    let mut floored = fb || fw;
    let mut lls = vec![marginal_log_likelihood(&stats, &phi_b, &phi_w)?];
    for it in 0..cfg.iterations {
        let b = spd_inverse(&phi_b)?;
        let w = spd_inverse(&phi_w)?;
        let mut new_b = DMatrix::zeros(d, d);
        let mut new_w = DMatrix::zeros(d, d);
        for s in &stats {
            let l_inv = spd_inverse(&(&b + &w * s.n as f64))?;
            let gamma = &l_inv * (&w * &s.f);
            new_b += &l_inv + &gamma * gamma.transpose();
            for x in &s.members {
                let r = x - &gamma;
                new_w += &r * r.transpose();
            }
            new_w += &l_inv * s.n as f64;
        }
        let (pb, fb) = floor_eigenvalues(new_b / stats.len() as f64);
        let (pw, fw) = floor_eigenvalues(new_w / total_n as f64);
        phi_b = pb;
        phi_w = pw;
        floored |= fb || fw;
        let ll = marginal_log_likelihood(&stats, &phi_b, &phi_w)?;
        if !ll.is_finite() {
            return Err(Error::TrainingDiverged {
                stage: "plda iteration",
                index: it,
                what: "log-likelihood".into(),
            });
        }
        lls.push(ll);
    }
    if floored {
        log::warn!("PLDA covariance eigenvalues were floored");
    }
    PldaModel::new(mean, to_nd(&phi_b), to_nd(&phi_w), floored, lls)
}

impl PldaModel {
    pub fn new(
        mean: Array1<f64>,
        phi_b: Array2<f64>,
        phi_w: Array2<f64>,
        floored: bool,
        log_likelihood: Vec<f64>,
    ) -> Result<Self> {
        let d = mean.len();
        if phi_b.dim() != (d, d) || phi_w.dim() != (d, d) {
            return Err(Error::usage("PLDA covariances must be D x D"));
        }
        let b = to_na(&phi_b);
        let t = &b + to_na(&phi_w);
        let t_inv = spd_inverse(&t)?;
        let schur = sym(&t - &b * &t_inv * &b);
        let schur_inv = spd_inverse(&schur)?;
        let q = sym(&t_inv - &schur_inv);
        let p = &t_inv * &b * &schur_inv;
        let constant = 0.5 * log_det_spd(&t)? - 0.5 * log_det_spd(&schur)?;
        Ok(Self {
            mean,
            phi_b,
            phi_w,
            floored,
            log_likelihood,
            scoring: PldaScoring { q, p, constant },
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `ln p(a, b | same speaker) - ln p(a, b | different speakers)`.
    pub fn score(&self, enroll: &Array1<f64>, test: &Array1<f64>) -> Result<f64> {
        if enroll.len() != self.dim() || test.len() != self.dim() {
            return Err(Error::usage(format!(
                "PLDA expects {}-d vectors, got {} and {}",
                self.dim(),
                enroll.len(),
                test.len()
            )));
        }
        let a = vec_na(&(enroll - &self.mean));
        let b = vec_na(&(test - &self.mean));
        let s = &self.scoring;
        Ok(0.5 * a.dot(&(&s.q * &a)) + 0.5 * b.dot(&(&s.q * &b)) + a.dot(&(&s.p * &b)) + s.constant)
    }

    pub fn to_archive(&self) -> Archive {
        let d = self.dim();
        let mut a = Archive::new("plda");
        a.push_real("mean", vec![d], self.mean.to_vec());
        a.push_real("phi_b", vec![d, d], self.phi_b.iter().copied().collect());
        a.push_real("phi_w", vec![d, d], self.phi_w.iter().copied().collect());
        a.push_real("log_likelihood", vec![self.log_likelihood.len()], self.log_likelihood.clone());
        a.push_text("meta", format!("floored={}", self.floored));
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        a.expect_kind("plda")?;
        let mean = Array1::from_vec(a.real("mean")?.1.to_vec());
        let d = mean.len();
        let square = |name: &str| -> Result<Array2<f64>> {
            let (shape, v) = a.real(name)?;
            if shape != [d, d] {
                return Err(Error::format(format!("{name} is not {d} x {d}")));
            }
            Array2::from_shape_vec((d, d), v.to_vec()).map_err(|e| Error::format(e.to_string()))
        };
        Self::new(
            mean.clone(),
            square("phi_b")?,
            square("phi_w")?,
            a.text("meta")?.contains("floored=true"),
            a.real("log_likelihood")?.1.to_vec(),
        )
    }
}

/// Vector back-end used at scoring time.
#[derive(Debug, Clone, PartialEq)]
pub enum Backend {
    Cosine,
    /// Cosine after LDA projection.
    Lda(LdaTransform),
    /// Optional LDA, then centering and length normalization, then PLDA.
    Plda {
        lda: Option<LdaTransform>,
        center: Array1<f64>,
        plda: PldaModel,
    },
}

impl Backend {
    pub fn name(&self) -> &'static str {
        match self {
            Backend::Cosine => "cosine",
            Backend::Lda(_) => "lda",
            Backend::Plda { .. } => "plda",
        }
    }

    /// Maps a raw vector into the space the final scorer works in.
    pub fn prepare(&self, v: &Array1<f64>) -> Result<Array1<f64>> {
        match self {
            Backend::Cosine => Ok(v.clone()),
            Backend::Lda(lda) => lda.apply(v),
            Backend::Plda { lda, center, .. } => {
                let v = match lda {
                    Some(l) => l.apply(v)?,
                    None => v.clone(),
                };
                length_normalize(&v, center)
            }
        }
    }

    /// Scores two prepared vectors.
    pub fn score_prepared(&self, a: &Array1<f64>, b: &Array1<f64>) -> Result<f64> {
        match self {
            Backend::Cosine | Backend::Lda(_) => cosine_score(a, b),
            Backend::Plda { plda, .. } => plda.score(a, b),
        }
    }

    pub fn score(&self, a: &Array1<f64>, b: &Array1<f64>) -> Result<f64> {
        self.score_prepared(&self.prepare(a)?, &self.prepare(b)?)
    }

    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new("backend");
        a.push_text("type", self.name());
        let mut nest = |prefix: &str, inner: Archive| {
            for (name, section) in inner.sections {
                a.sections.push((format!("{prefix}{name}"), section));
            }
        };
        match self {
            Backend::Cosine => {}
            Backend::Lda(l) => nest("lda/", l.to_archive()),
            Backend::Plda { lda, center, plda } => {
                if let Some(l) = lda {
                    nest("lda/", l.to_archive());
                }
                nest("plda/", plda.to_archive());
                a.push_real("center", vec![center.len()], center.to_vec());
            }
        }
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        a.expect_kind("backend")?;
        let sub = |prefix: &str, kind: &str| -> Option<Archive> {
            let sections: Vec<_> = a
                .sections
                .iter()
                .filter_map(|(n, s)| n.strip_prefix(prefix).map(|n| (n.to_string(), s.clone())))
                .collect();
            (!sections.is_empty()).then(|| Archive {
                kind: kind.to_string(),
                sections,
            })
        };
        match a.text("type")? {
            "cosine" => Ok(Backend::Cosine),
            "lda" => Ok(Backend::Lda(LdaTransform::from_archive(
                &sub("lda/", "lda").ok_or_else(|| Error::format("backend lacks its LDA"))?,
            )?)),
            "plda" => Ok(Backend::Plda {
                lda: sub("lda/", "lda").map(|s| LdaTransform::from_archive(&s)).transpose()?,
                center: Array1::from_vec(a.real("center")?.1.to_vec()),
                plda: PldaModel::from_archive(&sub("plda/", "plda").ok_or_else(|| Error::format("backend lacks its PLDA"))?)?,
            }),
            other => Err(Error::format(format!("unknown back-end type `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    /// LDA output dimension; 0 selects `min(D, classes - 1, 150)`.
    pub lda_dim: usize,
    /// Apply LDA (with `lda_dim`) before PLDA.
    pub plda_after_lda: bool,
    pub plda: PldaConfig,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            lda_dim: 0,
            plda_after_lda: true,
            plda: PldaConfig::default(),
        }
    }
}

/// Fits the requested back-end on labeled training vectors (one per row).
pub fn fit_backend(kind: &str, vectors: &Array2<f64>, labels: &[usize], cfg: &BackendConfig) -> Result<Backend> {
    let num_classes = classes(labels).len();
    let lda_dim = if cfg.lda_dim == 0 {
        default_lda_dim(vectors.ncols(), num_classes)
    } else {
        cfg.lda_dim
    };
    match kind {
        "cosine" => Ok(Backend::Cosine),
        "lda" => Ok(Backend::Lda(fit_lda(vectors, labels, lda_dim)?)),
        "plda" => {
            let lda = if cfg.plda_after_lda {
                Some(fit_lda(vectors, labels, lda_dim)?)
            } else {
                None
            };
            let projected = match &lda {
                Some(l) => l.apply_rows(vectors)?,
                None => vectors.clone(),
            };
            let center = mean_vector(&projected)?;
            let normalized = center_and_length_normalize(&projected, &center)?;
            let plda = fit_plda(&normalized, labels, &cfg.plda)?;
            Ok(Backend::Plda { lda, center, plda })
        }
        other => Err(Error::usage(format!(
            "unknown back-end `{other}` (expected cosine, lda or plda)"
        ))),
    }
}
