//! Dynamic mode decomposition with control (unknown-input-matrix variant).
//!
//! Given snapshots `Z' ≈ A Z + B U`, the input-space SVD of `Ω = [Z; U]`
//! gives the pseudo-inverse and the output-space SVD of `Z'` gives the
//! projection basis `Ũ`. The reduced operators are
//!
//! ```text
//! Ā = Ũᵀ Z' V̂ Σ̂⁻¹ Û₁ᵀ Ũ        B̄ = Ũᵀ Z' V̂ Σ̂⁻¹ Û₂ᵀ
//! ```
//!
//! where `Û₁`/`Û₂` are the state and input row blocks of `Û`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SVD};
use serde::Deserialize;
use thiserror::Error;

use crate::embed::SnapshotMatrices;
use crate::trajmodel::{fmt_f64, fmt_str};

pub const MODEL_FORMAT: &str = "koopctl-model-v1";

/// Default reconstruction-error gate on standardized one-step MSE.
pub const DEFAULT_MSE_GATE: f64 = 0.01;

const ORTHONORMAL_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DmdcError {
    #[error("singular value sequence is empty")]
    EmptySpectrum,
    #[error("singular values must be finite, non-negative and non-increasing (index {0})")]
    UnorderedSpectrum(usize),
    #[error("invalid rank rule: {0}")]
    InvalidRule(String),
    #[error("need at least 2 snapshots, got {0}")]
    TooFewSnapshots(usize),
    #[error("snapshot matrices are inconsistent: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("{0} is numerically zero; nothing to fit")]
    Degenerate(&'static str),
    #[error("SVD did not converge")]
    SvdFailed,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite state at rollout step {0}")]
    Diverged(usize),
    #[error("line {line}: {msg}")]
    ModelFile { line: usize, msg: String },
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

/// How many singular values survive truncation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RankRule {
    /// Smallest rank whose cumulative squared singular values reach the
    /// given fraction of the total.
    Energy(f64),
    Fixed(usize),
    Full,
}

impl RankRule {
    pub fn energy(fraction: f64) -> Result<Self, DmdcError> {
        if fraction > 0.0 && fraction < 1.0 {
            Ok(Self::Energy(fraction))
        } else {
            Err(DmdcError::InvalidRule(format!(
                "energy fraction must lie in (0, 1), got {fraction}"
            )))
        }
    }

    pub fn fixed(r: usize) -> Result<Self, DmdcError> {
        if r >= 1 {
            Ok(Self::Fixed(r))
        } else {
            Err(DmdcError::InvalidRule("fixed rank must be at least 1".into()))
        }
    }

    fn validate(&self) -> Result<(), DmdcError> {
        match *self {
            Self::Energy(f) => Self::energy(f).map(|_| ()),
            Self::Fixed(r) => Self::fixed(r).map(|_| ()),
            Self::Full => Ok(()),
        }
    }
}

impl std::fmt::Display for RankRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Energy(x) => write!(f, "{x}"),
            Self::Fixed(r) => write!(f, "{r}"),
            Self::Full => f.write_str("full"),
        }
    }
}

impl std::str::FromStr for RankRule {
    type Err = DmdcError;

    /// `full`, an integer rank, or an energy fraction in (0, 1).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("full") {
            return Ok(Self::Full);
        }
        if let Ok(r) = s.parse::<usize>() {
            return Self::fixed(r);
        }
        match s.parse::<f64>() {
            Ok(f) => Self::energy(f),
            Err(_) => Err(DmdcError::InvalidRule(format!(
                "expected `full`, an integer rank, or a fraction in (0, 1); got {s:?}"
            ))),
        }
    }
}

pub fn truncation_rank(singular_values: &[f64], rule: RankRule) -> Result<usize, DmdcError> {
    rule.validate()?;
    if singular_values.is_empty() {
        return Err(DmdcError::EmptySpectrum);
    }
    for (i, &s) in singular_values.iter().enumerate() {
        if !(s.is_finite() && s >= 0.0) || (i > 0 && s > singular_values[i - 1]) {
            return Err(DmdcError::UnorderedSpectrum(i));
        }
    }
    let len = singular_values.len();
    Ok(match rule {
        RankRule::Full => len,
        RankRule::Fixed(r) => r.min(len),
        RankRule::Energy(f) => {
            let total: f64 = singular_values.iter().map(|s| s * s).sum();
            if total == 0.0 {
                return Ok(1);
            }
            let mut acc = 0.0;
            let mut rank = len;
            for (i, s) in singular_values.iter().enumerate() {
                acc += s * s;
                if acc / total >= f {
                    rank = i + 1;
                    break;
                }
            }
            rank
        }
    })
}

/// Fitted reduced-order LTI surrogate `x⁺ = Ā x + B̄ u` living in the span
/// of `basis`.
#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanControlModel {
    /// `r × r`
    pub a_reduced: DMatrix<f64>,
    /// `r × q`
    pub b_reduced: DMatrix<f64>,
    /// `n × r`, orthonormal columns.
    pub basis: DMatrix<f64>,
    /// Output-space truncation rank.
    pub r: usize,
    /// Input-space truncation rank.
    pub p: usize,
    pub n: usize,
    pub q: usize,
    /// Size of the readout block (the current state) at the top of `z`.
    pub state_dim: usize,
    pub singular_values_omega: Vec<f64>,
    pub singular_values_output: Vec<f64>,
}

impl KoopmanControlModel {
    /// Assembles a model from its parts, checking shapes and basis
    /// orthonormality.
    pub fn from_parts(
        a_reduced: DMatrix<f64>,
        b_reduced: DMatrix<f64>,
        basis: DMatrix<f64>,
        p: usize,
        state_dim: usize,
        singular_values_omega: Vec<f64>,
        singular_values_output: Vec<f64>,
    ) -> Result<Self, DmdcError> {
        let r = a_reduced.nrows();
        let n = basis.nrows();
        let q = b_reduced.ncols();
        if r == 0 || a_reduced.ncols() != r {
            return Err(DmdcError::InvalidModel("A must be square and non-empty".into()));
        }
        if b_reduced.nrows() != r || basis.ncols() != r {
            return Err(DmdcError::InvalidModel(format!(
                "B is {}x{}, basis is {}x{}, expected {r} rows/cols",
                b_reduced.nrows(),
                q,
                n,
                basis.ncols()
            )));
        }
        if state_dim == 0 || state_dim > n {
            return Err(DmdcError::InvalidModel(format!(
                "state_dim {state_dim} outside [1, {n}]"
            )));
        }
        if [&a_reduced, &b_reduced, &basis]
            .iter()
            .any(|m| m.iter().any(|v| !v.is_finite()))
        {
            return Err(DmdcError::NonFinite("model matrices"));
        }
        let gram = basis.transpose() * &basis;
        let dev = (gram - DMatrix::identity(r, r)).amax();
        if dev > ORTHONORMAL_TOL {
            return Err(DmdcError::InvalidModel(format!(
                "basis columns not orthonormal (max deviation {dev:e})"
            )));
        }
        for sv in [&singular_values_omega, &singular_values_output] {
            truncation_rank(sv, RankRule::Full)?;
        }
        if p == 0 {
            return Err(DmdcError::InvalidModel("input rank p must be at least 1".into()));
        }
        Ok(Self {
            a_reduced,
            b_reduced,
            basis,
            r,
            p,
            n,
            q,
            state_dim,
            singular_values_omega,
            singular_values_output,
        })
    }
}

/// Rank rules for the two truncations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub input_rule: RankRule,
    pub output_rule: RankRule,
}

impl FitOptions {
    /// `rule` on the output space, no truncation of `Ω` beyond the
    /// numerical guard.
    pub fn output_only(rule: RankRule) -> Self {
        Self {
            input_rule: RankRule::Full,
            output_rule: rule,
        }
    }

    /// The same rule on both truncations.
    pub fn uniform(rule: RankRule) -> Self {
        Self {
            input_rule: rule,
            output_rule: rule,
        }
    }
}

struct ThinSvd {
    u: DMatrix<f64>,
    sigma: Vec<f64>,
    v_t: Option<DMatrix<f64>>,
}

fn thin_svd(m: DMatrix<f64>, want_v: bool) -> Result<ThinSvd, DmdcError> {
    let svd = SVD::try_new(m, true, want_v, f64::EPSILON * 5.0, 200_000).ok_or(DmdcError::SvdFailed)?;
    Ok(ThinSvd {
        u: svd.u.ok_or(DmdcError::SvdFailed)?,
        sigma: svd.singular_values.iter().copied().collect(),
        v_t: svd.v_t,
    })
}

/// Truncation rank after discarding singular values below
/// `max(rows, cols) · ε · σ₁`.
fn guarded_rank(
    sigma: &[f64],
    rows: usize,
    cols: usize,
    rule: RankRule,
    what: &'static str,
) -> Result<usize, DmdcError> {
    let tol = rows.max(cols) as f64 * f64::EPSILON * sigma[0];
    let numeric = sigma.iter().take_while(|&&s| s > tol).count();
    if numeric == 0 {
        return Err(DmdcError::Degenerate(what));
    }
    Ok(truncation_rank(sigma, rule)?.min(numeric))
}

/// Fits with `rule` applied to the output basis only; see
/// [`FitOptions::output_only`].
pub fn fit_dmdc(snapshots: &SnapshotMatrices, rule: RankRule) -> Result<KoopmanControlModel, DmdcError> {
    fit_dmdc_with(snapshots, FitOptions::output_only(rule))
}

pub fn fit_dmdc_with(snapshots: &SnapshotMatrices, opts: FitOptions) -> Result<KoopmanControlModel, DmdcError> {
    opts.input_rule.validate()?;
    opts.output_rule.validate()?;
    let (z, z_next, u) = (&snapshots.z, &snapshots.z_next, &snapshots.u);
    let (n, m) = z.shape();
    let q = u.nrows();
    if z_next.shape() != (n, m) || u.ncols() != m {
        return Err(DmdcError::Shape(format!(
            "Z {}x{}, Z' {}x{}, U {}x{}",
            n,
            m,
            z_next.nrows(),
            z_next.ncols(),
            q,
            u.ncols()
        )));
    }
    if n == 0 || q == 0 {
        return Err(DmdcError::Shape("empty state or input dimension".into()));
    }
    if m < 2 {
        return Err(DmdcError::TooFewSnapshots(m));
    }
    if snapshots.state_dim == 0 || snapshots.state_dim > n {
        return Err(DmdcError::Shape(format!("state_dim {} outside [1, {n}]", snapshots.state_dim)));
    }
    for (mat, name) in [(z, "Z"), (z_next, "Z'"), (u, "U")] {
        if mat.iter().any(|v| !v.is_finite()) {
            return Err(DmdcError::NonFinite(name));
        }
    }

    let mut omega = DMatrix::zeros(n + q, m);
    omega.rows_mut(0, n).copy_from(z);
    omega.rows_mut(n, q).copy_from(u);
    let in_svd = thin_svd(omega, true)?;
    let p = guarded_rank(&in_svd.sigma, n + q, m, opts.input_rule, "input snapshot matrix [Z; U]")?;

    let out_svd = thin_svd(z_next.clone(), false)?;
    let r = guarded_rank(&out_svd.sigma, n, m, opts.output_rule, "output snapshot matrix Z'")?;

    let basis = out_svd.u.columns(0, r).into_owned();
    let v_t = in_svd.v_t.as_ref().ok_or(DmdcError::SvdFailed)?;
    // Ũᵀ Z' V̂ Σ̂⁻¹, r × p
    let projected = basis.transpose() * z_next;
    let mut core = projected * v_t.rows(0, p).transpose();
    for (k, mut col) in core.column_iter_mut().enumerate() {
        col /= in_svd.sigma[k];
    }
    let u_state = in_svd.u.view((0, 0), (n, p));
    let u_input = in_svd.u.view((n, 0), (q, p));
    let a_reduced = &core * (u_state.transpose() * &basis);
    let b_reduced = &core * u_input.transpose();

    Ok(KoopmanControlModel {
        a_reduced,
        b_reduced,
        basis,
        r,
        p,
        n,
        q,
        state_dim: snapshots.state_dim,
        singular_values_omega: in_svd.sigma,
        singular_values_output: out_svd.sigma,
    })
}

fn check_len(expected: usize, got: usize) -> Result<(), DmdcError> {
    if expected == got {
        Ok(())
    } else {
        Err(DmdcError::DimensionMismatch { expected, got })
    }
}

/// `basis · (Ā · basisᵀ z + B̄ u)`
pub fn predict_one_step(
    model: &KoopmanControlModel,
    z: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>, DmdcError> {
    check_len(model.n, z.len())?;
    check_len(model.q, u.len())?;
    let reduced = &model.a_reduced * (model.basis.transpose() * z) + &model.b_reduced * u;
    Ok(&model.basis * reduced)
}

/// Iterates the model in the reduced space from `z0`, returning one lifted
/// state per input.
pub fn rollout_model(
    model: &KoopmanControlModel,
    z0: &DVector<f64>,
    inputs: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>, DmdcError> {
    check_len(model.n, z0.len())?;
    let mut x = model.basis.transpose() * z0;
    let mut out = Vec::with_capacity(inputs.len());
    for (step, u) in inputs.iter().enumerate() {
        check_len(model.q, u.len())?;
        x = &model.a_reduced * &x + &model.b_reduced * u;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DmdcError::Diverged(step));
        }
        out.push(&model.basis * &x);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitDiagnostics {
    pub mse_one_step: f64,
    pub m: usize,
    pub gate: f64,
    pub passed_gate: bool,
}

/// One-step reconstruction MSE of the current-state readout, averaged over
/// snapshots and state coordinates.
pub fn reconstruction_mse(
    model: &KoopmanControlModel,
    snapshots: &SnapshotMatrices,
    gate: f64,
) -> Result<FitDiagnostics, DmdcError> {
    check_len(model.n, snapshots.z.nrows())?;
    check_len(model.q, snapshots.u.nrows())?;
    check_len(model.state_dim, snapshots.state_dim)?;
    let m = snapshots.z.ncols();
    if m == 0 {
        return Err(DmdcError::TooFewSnapshots(0));
    }
    let d = model.state_dim;
    let reduced = &model.a_reduced * (model.basis.transpose() * &snapshots.z) + &model.b_reduced * &snapshots.u;
    let lead = model.basis.rows(0, d) * reduced;
    let sse: f64 = (lead - snapshots.z_next.rows(0, d)).iter().map(|e| e * e).sum();
    let mse = sse / (m * d) as f64;
    Ok(FitDiagnostics {
        mse_one_step: mse,
        m,
        gate,
        passed_gate: mse < gate,
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelHeader {
    format: String,
    n: usize,
    q: usize,
    r: usize,
    p: usize,
    state_dim: usize,
    #[serde(default)]
    comment: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelRecord {
    name: String,
    #[serde(default)]
    rows: Option<usize>,
    #[serde(default)]
    cols: Option<usize>,
    data: Vec<f64>,
}

fn write_matrix(out: &mut String, name: &str, m: &DMatrix<f64>) {
    let _ = write!(out, "{{\"name\":\"{name}\",\"rows\":{},\"cols\":{},\"data\":[", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if i + j > 0 {
                out.push(',');
            }
            fmt_f64(out, m[(i, j)]);
        }
    }
    out.push_str("]}\n");
}

fn write_vector(out: &mut String, name: &str, v: &[f64]) {
    let _ = write!(out, "{{\"name\":\"{name}\",\"data\":[");
    for (i, &x) in v.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        fmt_f64(out, x);
    }
    out.push_str("]}\n");
}

/// Serializes a model as `koopctl-model-v1` records (matrices row-major).
pub fn serialize_model(model: &KoopmanControlModel, comment: Option<&str>) -> Vec<u8> {
    let mut out = String::new();
    let _ = write!(
        out,
        "{{\"format\":\"{MODEL_FORMAT}\",\"n\":{},\"q\":{},\"r\":{},\"p\":{},\"state_dim\":{}",
        model.n, model.q, model.r, model.p, model.state_dim
    );
    if let Some(c) = comment {
        out.push_str(",\"comment\":");
        fmt_str(&mut out, c);
    }
    out.push_str("}\n");
    write_matrix(&mut out, "A_reduced", &model.a_reduced);
    write_matrix(&mut out, "B_reduced", &model.b_reduced);
    write_matrix(&mut out, "basis", &model.basis);
    write_vector(&mut out, "singular_values_omega", &model.singular_values_omega);
    write_vector(&mut out, "singular_values_output", &model.singular_values_output);
    out.into_bytes()
}

/// Parses a `koopctl-model-v1` file. Returns the model and the optional
/// header comment.
pub fn parse_model_file(bytes: &[u8]) -> Result<(KoopmanControlModel, Option<String>), DmdcError> {
    let err = |line: usize, msg: String| DmdcError::ModelFile { line, msg };
    let text = std::str::from_utf8(bytes).map_err(|_| err(0, "invalid UTF-8".into()))?;
    let mut lines = text
        .split('\n')
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let (hline, htext) = lines.next().ok_or_else(|| err(1, "missing header".into()))?;
    let header: ModelHeader = serde_json::from_str(htext).map_err(|e| err(hline, e.to_string()))?;
    if header.format != MODEL_FORMAT {
        return Err(err(hline, format!("unsupported format tag {:?}", header.format)));
    }

    let mut a = None;
    let mut b = None;
    let mut basis = None;
    let mut sv_omega = None;
    let mut sv_out = None;
    for (line, t) in lines {
        let rec: ModelRecord = serde_json::from_str(t).map_err(|e| err(line, e.to_string()))?;
        let as_matrix = |rec: ModelRecord, rows: usize, cols: usize| -> Result<DMatrix<f64>, DmdcError> {
            if rec.rows != Some(rows) || rec.cols != Some(cols) || Some(rows * cols) != Some(rec.data.len()) {
                return Err(err(line, format!("{} must be {rows}x{cols} with {} entries", rec.name, rows * cols)));
            }
            Ok(DMatrix::from_row_slice(rows, cols, &rec.data))
        };
        let slot_taken = |taken: bool| {
            if taken {
                Err(err(line, format!("duplicate record {:?}", rec.name)))
            } else {
                Ok(())
            }
        };
        match rec.name.as_str() {
            "A_reduced" => {
                slot_taken(a.is_some())?;
                a = Some(as_matrix(rec, header.r, header.r)?);
            }
            "B_reduced" => {
                slot_taken(b.is_some())?;
                b = Some(as_matrix(rec, header.r, header.q)?);
            }
            "basis" => {
                slot_taken(basis.is_some())?;
                basis = Some(as_matrix(rec, header.n, header.r)?);
            }
            "singular_values_omega" => {
                slot_taken(sv_omega.is_some())?;
                sv_omega = Some(rec.data);
            }
            "singular_values_output" => {
                slot_taken(sv_out.is_some())?;
                sv_out = Some(rec.data);
            }
            other => return Err(err(line, format!("unknown record {other:?}"))),
        }
    }
    let missing = |what: &str| err(0, format!("missing record {what:?}"));
    let model = KoopmanControlModel::from_parts(
        a.ok_or_else(|| missing("A_reduced"))?,
        b.ok_or_else(|| missing("B_reduced"))?,
        basis.ok_or_else(|| missing("basis"))?,
        header.p,
        header.state_dim,
        sv_omega.ok_or_else(|| missing("singular_values_omega"))?,
        sv_out.ok_or_else(|| missing("singular_values_output"))?,
    )?;
    Ok((model, header.comment))
}
