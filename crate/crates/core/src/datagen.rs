//! Synthetic data from the Gaussian chain `X -> Y -> Z` and dataset plumbing.
//!
//! The chain is
//!
//! ```text
//! X ~ N(0, sx^2 S),  Y ~ N(X, sy^2 S),  Z ~ N(Y, sz^2 S)
//! ```
//!
//! where `S` is the `d x d` tridiagonal matrix with unit diagonal and `rho`
//! on the first off-diagonals. All information quantities are in nats.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Parameters of the Gaussian chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianChainConfig {
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub sigma_z: f64,
    pub d: usize,
    #[serde(default)]
    pub rho: f64,
}

impl GaussianChainConfig {
    pub fn new(sigma_x: f64, sigma_y: f64, sigma_z: f64, d: usize, rho: f64) -> Result<Self> {
        let cfg = Self {
            sigma_x,
            sigma_y,
            sigma_z,
            d,
            rho,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `sx = 10, sy = 1, sz = 5`, identity covariance.
    pub fn standard(d: usize) -> Self {
        Self {
            sigma_x: 10.0,
            sigma_y: 1.0,
            sigma_z: 5.0,
            d,
            rho: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma_x", self.sigma_x),
            ("sigma_y", self.sigma_y),
            ("sigma_z", self.sigma_z),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.d == 0 {
            return Err(Error::config("dimension d must be at least 1"));
        }
        if !self.rho.is_finite() || self.rho.abs() >= 0.5 {
            return Err(Error::config(format!(
                "|rho| must be below 0.5 for a positive definite covariance, got {}",
                self.rho
            )));
        }
        Ok(())
    }

    /// The tridiagonal shape matrix `S`.
    pub fn shape_matrix(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.d, self.d), |(i, j)| {
            if i == j {
                1.0
            } else if i.abs_diff(j) == 1 {
                self.rho
            } else {
                0.0
            }
        })
    }

    /// Lower-triangular Cholesky factor of the shape matrix.
    pub fn cholesky(&self) -> Result<Array2<f64>> {
        self.validate()?;
        cholesky(&self.shape_matrix())
    }

    pub(crate) fn moments(&self) -> ChainMoments {
        let vx = self.sigma_x * self.sigma_x;
        let vy = self.sigma_y * self.sigma_y;
        let vz = self.sigma_z * self.sigma_z;
        ChainMoments {
            x_var: vx,
            x_given_y_gain: vx / (vx + vy),
            x_given_y_var: vx * vy / (vx + vy),
            x_given_z_gain: vx / (vx + vy + vz),
            x_given_z_var: vx * (vy + vz) / (vx + vy + vz),
        }
    }
}

/// Scalar moments of the conditionals of `X`.
///
/// Every covariance in the chain is a multiple of `S`, so each conditional of
/// `X` is `N(gain * v, var * S)` for the conditioning vector `v`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ChainMoments {
    pub x_var: f64,
    pub x_given_y_gain: f64,
    pub x_given_y_var: f64,
    pub x_given_z_gain: f64,
    pub x_given_z_var: f64,
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension {
            expected: n,
            got: a.ncols(),
        });
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = a[[j, j]];
        for p in 0..j {
            diag -= l[[j, p]] * l[[j, p]];
        }
        if !(diag > 0.0) {
            return Err(Error::config("matrix is not positive definite"));
        }
        let ljj = diag.sqrt();
        l[[j, j]] = ljj;
        for i in j + 1..n {
            let mut v = a[[i, j]];
            for p in 0..j {
                v -= l[[i, p]] * l[[j, p]];
            }
            l[[i, j]] = v / ljj;
        }
    }
    Ok(l)
}

/// One of the three variable roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    X,
    Y,
    Z,
}

impl Role {
    pub fn prefix(self) -> &'static str {
        match self {
            Role::X => "x",
            Role::Y => "y",
            Role::Z => "z",
        }
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Ok(Role::X),
            "y" => Ok(Role::Y),
            "z" => Ok(Role::Z),
            other => Err(Error::config(format!("unknown role `{other}`"))),
        }
    }
}

/// Where a dataset came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub seed: Option<u64>,
}

/// `n` triples `(x, y, z)` stored as three row-aligned matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    y: Array2<f64>,
    z: Array2<f64>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Array2<f64>, z: Array2<f64>) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::Empty("dataset has no samples".into()));
        }
        for m in [&y, &z] {
            if m.nrows() != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: m.nrows(),
                });
            }
        }
        Ok(Self {
            x,
            y,
            z,
            provenance: Provenance::default(),
        })
    }

    pub fn with_provenance(mut self, source: impl Into<String>, seed: Option<u64>) -> Self {
        self.provenance = Provenance {
            source: source.into(),
            seed,
        };
        self
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(d_x, d_y, d_z)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.x.ncols(), self.y.ncols(), self.z.ncols())
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn y(&self) -> ArrayView2<'_, f64> {
        self.y.view()
    }

    pub fn z(&self) -> ArrayView2<'_, f64> {
        self.z.view()
    }

    pub fn role(&self, role: Role) -> ArrayView2<'_, f64> {
        match role {
            Role::X => self.x.view(),
            Role::Y => self.y.view(),
            Role::Z => self.z.view(),
        }
    }

    /// The `i`-th triple concatenated as `[x | y | z]`.
    pub fn features_row(&self, i: usize) -> Array1<f64> {
        concatenate(
            Axis(0),
            &[self.x.row(i), self.y.row(i), self.z.row(i)],
        )
        .expect("rows of one sample concatenate")
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), indices),
            y: self.y.select(Axis(0), indices),
            z: self.z.select(Axis(0), indices),
            provenance: self.provenance.clone(),
        }
    }

    /// Reassigns roles: the returned dataset's `(X, Y, Z)` are this dataset's
    /// `(x_role, y_role, z_role)`. Used to estimate e.g. `I(X;Z|Y)`.
    pub fn permute_roles(&self, x_role: Role, y_role: Role, z_role: Role) -> Dataset {
        Dataset {
            x: self.role(x_role).to_owned(),
            y: self.role(y_role).to_owned(),
            z: self.role(z_role).to_owned(),
            provenance: self.provenance.clone(),
        }
    }

    /// Splits `Y` at column `d1` into `(Y1, Y2)` and returns the datasets
    /// for `I(X;Y1|Z)` and `I(X;Y2|Y1,Z)`.
    pub fn split_y(&self, d1: usize) -> Result<(Dataset, Dataset)> {
        let dy = self.y.ncols();
        if d1 == 0 || d1 >= dy {
            return Err(Error::config(format!(
                "split point {d1} must lie strictly inside Y's dimension {dy}"
            )));
        }
        let y1 = self.y.slice(s![.., ..d1]).to_owned();
        let y2 = self.y.slice(s![.., d1..]).to_owned();
        let first = Dataset {
            x: self.x.clone(),
            y: y1.clone(),
            z: self.z.clone(),
            provenance: self.provenance.clone(),
        };
        let z_ext = concatenate(Axis(1), &[y1.view(), self.z.view()]).expect("row counts agree");
        let second = Dataset {
            x: self.x.clone(),
            y: y2,
            z: z_ext,
            provenance: self.provenance.clone(),
        };
        Ok((first, second))
    }

    /// Writes the dataset as CSV with header `x_0,..,y_0,..,z_0,..`.
    ///
    /// Values carry 17 significant digits, enough to round-trip any `f64`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let (dx, dy, dz) = self.dims();
        let header: Vec<String> = [(Role::X, dx), (Role::Y, dy), (Role::Z, dz)]
            .iter()
            .flat_map(|&(r, d)| (0..d).map(move |i| format!("{}_{i}", r.prefix())))
            .collect();
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for i in 0..self.len() {
            record.clear();
            for v in self
                .x
                .row(i)
                .iter()
                .chain(self.y.row(i).iter())
                .chain(self.z.row(i).iter())
            {
                record.push(format!("{v:.16e}"));
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Reads a dataset written by [`Dataset::write_csv`].
    ///
    /// Columns are grouped by their `x_`/`y_`/`z_` prefix and ordered by
    /// index; each role's indices must run `0..d` without gaps. When
    /// `expected_dims` is given, it must match the header.
    pub fn read_csv<R: Read>(
        reader: R,
        path: &Path,
        expected_dims: Option<(usize, usize, usize)>,
    ) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let mut cols: [Vec<(usize, usize)>; 3] = Default::default();
        for (pos, name) in headers.iter().enumerate() {
            let (prefix, idx) = name.split_once('_').ok_or_else(|| Error::Input {
                path: path.to_owned(),
                msg: format!("unrecognized column `{name}`"),
            })?;
            let role: Role = prefix.parse().map_err(|_| Error::Input {
                path: path.to_owned(),
                msg: format!("unrecognized column `{name}`"),
            })?;
            let idx: usize = idx.parse().map_err(|_| Error::Input {
                path: path.to_owned(),
                msg: format!("bad column index in `{name}`"),
            })?;
            cols[role as usize].push((idx, pos));
        }
        for (r, c) in cols.iter_mut().enumerate() {
            c.sort_unstable();
            for (expect, &(idx, _)) in c.iter().enumerate() {
                if idx != expect {
                    let role = [Role::X, Role::Y, Role::Z][r];
                    return Err(Error::MissingColumn {
                        path: path.to_owned(),
                        column: format!("{}_{expect}", role.prefix()),
                    });
                }
            }
        }
        let dims = (cols[0].len(), cols[1].len(), cols[2].len());
        if let Some(exp) = expected_dims {
            let roles = [(Role::X, exp.0, dims.0), (Role::Y, exp.1, dims.1), (Role::Z, exp.2, dims.2)];
            for (role, want, have) in roles {
                if have < want {
                    return Err(Error::MissingColumn {
                        path: path.to_owned(),
                        column: format!("{}_{have}", role.prefix()),
                    });
                }
                if have > want {
                    return Err(Error::Input {
                        path: path.to_owned(),
                        msg: format!(
                            "role {} has {have} columns, expected {want}",
                            role.prefix()
                        ),
                    });
                }
            }
        }
        let mut data: [Vec<f64>; 3] = Default::default();
        let mut n = 0usize;
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            for (r, c) in cols.iter().enumerate() {
                for &(_, pos) in c {
                    let cell = rec.get(pos).unwrap_or("");
                    let v: f64 = cell.parse().map_err(|_| Error::Input {
                        path: path.to_owned(),
                        msg: format!("row {}: cannot parse `{cell}` in `{}`", row + 1, &headers[pos]),
                    })?;
                    data[r].push(v);
                }
            }
            n += 1;
        }
        let [xd, yd, zd] = data;
        let shape = |d: usize, v: Vec<f64>| {
            Array2::from_shape_vec((n, d), v).expect("row-major buffer matches shape")
        };
        Dataset::new(shape(dims.0, xd), shape(dims.1, yd), shape(dims.2, zd)).map_err(|e| match e {
            Error::Empty(_) => Error::Input {
                path: path.to_owned(),
                msg: "no data rows".into(),
            },
            other => other,
        })
    }

    pub fn load_csv(
        path: impl AsRef<Path>,
        expected_dims: Option<(usize, usize, usize)>,
    ) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file), path, expected_dims)
            .map(|d| d.with_provenance(format!("csv:{}", path.display()), None))
    }
}

fn standard_normal_row<R: Rng>(rng: &mut R, buf: &mut [f64]) {
    for v in buf.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

/// `out = scale * L * eps` for lower-triangular `L`.
fn correlate(l: &Array2<f64>, eps: &[f64], scale: f64, out: &mut [f64]) {
    let d = eps.len();
    for i in 0..d {
        let mut acc = 0.0;
        for j in 0..=i {
            acc += l[[i, j]] * eps[j];
        }
        out[i] = scale * acc;
    }
}

/// Draws `n` i.i.d. triples from the Gaussian chain.
pub fn sample_gaussian_chain(config: &GaussianChainConfig, n: usize, seed: u64) -> Result<Dataset> {
    let l = config.cholesky()?;
    if n == 0 {
        return Err(Error::Empty("sample count must be at least 1".into()));
    }
    let d = config.d;
    let mut rng = rng_from_seed(seed);
    let mut x = Array2::<f64>::zeros((n, d));
    let mut y = Array2::<f64>::zeros((n, d));
    let mut z = Array2::<f64>::zeros((n, d));
    let mut eps = vec![0.0; d];
    let mut noise = vec![0.0; d];
    for i in 0..n {
        standard_normal_row(&mut rng, &mut eps);
        correlate(&l, &eps, config.sigma_x, &mut noise);
        for j in 0..d {
            x[[i, j]] = noise[j];
        }
        standard_normal_row(&mut rng, &mut eps);
        correlate(&l, &eps, config.sigma_y, &mut noise);
        for j in 0..d {
            y[[i, j]] = x[[i, j]] + noise[j];
        }
        standard_normal_row(&mut rng, &mut eps);
        correlate(&l, &eps, config.sigma_z, &mut noise);
        for j in 0..d {
            z[[i, j]] = y[[i, j]] + noise[j];
        }
    }
    Ok(Dataset::new(x, y, z)?.with_provenance("gaussian_chain", Some(seed)))
}

/// Draws `n` triples from the product density `p(x|z) p(y, z)`.
///
/// `(y, z)` come from the chain; `x` is redrawn from its exact conditional
/// given `z`. Serves as a Monte-Carlo reference for resampled batches.
pub fn sample_product_density(
    config: &GaussianChainConfig,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    let base = sample_gaussian_chain(config, n, seed)?;
    let l = config.cholesky()?;
    let mo = config.moments();
    let d = config.d;
    let mut rng = rng_from_seed(crate::rng::derive_seed(seed, &[0x50_52_4f_44]));
    let mut x = Array2::<f64>::zeros((n, d));
    let mut eps = vec![0.0; d];
    let mut noise = vec![0.0; d];
    let sd = mo.x_given_z_var.sqrt();
    for i in 0..n {
        standard_normal_row(&mut rng, &mut eps);
        correlate(&l, &eps, sd, &mut noise);
        for j in 0..d {
            x[[i, j]] = mo.x_given_z_gain * base.z[[i, j]] + noise[j];
        }
    }
    Ok(Dataset::new(x, base.y, base.z)?.with_provenance("gaussian_chain_product", Some(seed)))
}

/// Closed-form `I(X;Y|Z)` in nats for the chain with identity `S`.
///
/// `d/2 ln(1 + sx^2/sy^2) - d/2 ln(1 + sx^2/(sy^2 + sz^2))`.
pub fn true_cmi_xy_given_z(config: &GaussianChainConfig) -> Result<f64> {
    config.validate()?;
    if config.rho != 0.0 {
        return Err(Error::Unsupported(format!(
            "closed-form I(X;Y|Z) is provided for rho = 0 only (got rho = {})",
            config.rho
        )));
    }
    let vx = config.sigma_x * config.sigma_x;
    let vy = config.sigma_y * config.sigma_y;
    let vz = config.sigma_z * config.sigma_z;
    let half_d = config.d as f64 / 2.0;
    Ok(half_d * (vx / vy).ln_1p() - half_d * (vx / (vy + vz)).ln_1p())
}

/// `I(X;Z|Y)`, which vanishes because `X -> Y -> Z` is a Markov chain.
pub fn true_cmi_xz_given_y(_config: &GaussianChainConfig) -> f64 {
    0.0
}

/// Scalar map applied element-wise to one role.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ComponentMap {
    Identity,
    /// `tanh(scale * v)`.
    Tanh { scale: f64 },
    /// `scale * v + offset`.
    Affine { scale: f64, offset: f64 },
}

impl ComponentMap {
    pub fn apply(&self, v: f64) -> f64 {
        match *self {
            ComponentMap::Identity => v,
            ComponentMap::Tanh { scale } => (scale * v).tanh(),
            ComponentMap::Affine { scale, offset } => scale * v + offset,
        }
    }
}

impl fmt::Display for ComponentMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ComponentMap::Identity => write!(f, "identity"),
            ComponentMap::Tanh { scale } => write!(f, "tanh:{scale}"),
            ComponentMap::Affine { scale, offset } => write!(f, "affine:{scale},{offset}"),
        }
    }
}

impl FromStr for ComponentMap {
    type Err = Error;

    /// Parses `identity`, `tanh[:scale]` (default scale 0.05), or
    /// `affine:scale,offset`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::config(format!("bad number `{t}` in map `{s}`")))
        };
        match (name, args) {
            ("identity", None) => Ok(ComponentMap::Identity),
            ("tanh", None) => Ok(ComponentMap::Tanh { scale: 0.05 }),
            ("tanh", Some(a)) => Ok(ComponentMap::Tanh { scale: num(a)? }),
            ("affine", Some(a)) => {
                let (sc, off) = a
                    .split_once(',')
                    .ok_or_else(|| Error::config(format!("affine map needs `scale,offset`: `{s}`")))?;
                Ok(ComponentMap::Affine {
                    scale: num(sc)?,
                    offset: num(off)?,
                })
            }
            _ => Err(Error::config(format!("unknown component map `{s}`"))),
        }
    }
}

/// Applies `map` element-wise to one role; the other roles are untouched.
pub fn apply_componentwise(dataset: &Dataset, role: Role, map: ComponentMap) -> Dataset {
    let mut out = dataset.clone();
    let target = match role {
        Role::X => &mut out.x,
        Role::Y => &mut out.y,
        Role::Z => &mut out.z,
    };
    target.mapv_inplace(|v| map.apply(v));
    out
}

/// Random disjoint split into `(train, test)`.
///
/// The train part receives `floor(train_fraction * n)` samples.
pub fn split_dataset(
    dataset: &Dataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let n = dataset.len();
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n_train = (train_fraction * n as f64).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::config(format!(
            "train fraction {train_fraction} of {n} samples leaves an empty part"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let perm = crate::rng::sample_without_replacement(&mut rng, n, n);
    let (train, test) = perm.split_at(n_train);
    Ok((dataset.select(train), dataset.select(test)))
}

/// Sample covariance of the rows of `m` (denominator `n - 1`).
pub fn sample_covariance(m: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = m.nrows() as f64;
    let mean = m.mean_axis(Axis(0)).expect("non-empty");
    let centered = &m - &mean;
    centered.t().dot(&centered) / (n - 1.0)
}

pub(crate) fn quad_form_inv(l: &Array2<f64>, v: ArrayView1<'_, f64>) -> f64 {
    // v^T (L L^T)^{-1} v = |L^{-1} v|^2 by forward substitution.
    let d = v.len();
    let mut w = [0.0f64; 64];
    let mut heap;
    let w: &mut [f64] = if d <= 64 {
        &mut w[..d]
    } else {
        heap = vec![0.0; d];
        &mut heap
    };
    let mut acc = 0.0;
    for i in 0..d {
        let mut t = v[i];
        for j in 0..i {
            t -= l[[i, j]] * w[j];
        }
        w[i] = t / l[[i, i]];
        acc += w[i] * w[i];
    }
    acc
}
