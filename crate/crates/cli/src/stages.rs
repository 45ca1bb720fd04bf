use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use lorenzlab_core::entropy::{
    arc_sample, disk_volume_expansion, entropy_estimate, flow_expansiveness_probe, DiskConfig, DiskMesh,
    EntropyConfig, ExpansivenessConfig, TimeOneMap,
};
use lorenzlab_core::flow::{flow, FlowSystem, OrbitSegment, Tolerance};
use lorenzlab_core::poincare::CocycleChain;
use lorenzlab_core::shadowing::{
    certify_quasi_hyperbolic, find_recurrences, gap_scaling, horseshoe_census, pesin_block, recheck_certificate,
    scaled_step_matrix, shadow_periodic, PeriodicOrbitRecord, PesinBlock, RecurrenceConfig, Seed, ShadowConfig,
};
use lorenzlab_core::splitting::{
    check_dominated_splitting, check_sectional_expansion, lyapunov_spectrum, oseledets_directions,
    search_domination_step, singularity_analysis, DominationVerdict, SampledSplitting, SplittingField,
};
use lorenzlab_core::Error;
use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use toml::Table;

use crate::config::Budgets;
use crate::rng::substream;
use crate::systems::default_start;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Lyapunov,
    Singularity,
    Splitting,
    Domination,
    Sectional,
    Spanning,
    Disk,
    Expansiveness,
    Pesin,
    Certify,
    Recurrences,
    Shadow,
    Census,
}

impl Stage {
    pub const ALL: [Stage; 13] = [
        Stage::Lyapunov,
        Stage::Singularity,
        Stage::Splitting,
        Stage::Domination,
        Stage::Sectional,
        Stage::Spanning,
        Stage::Disk,
        Stage::Expansiveness,
        Stage::Pesin,
        Stage::Certify,
        Stage::Recurrences,
        Stage::Shadow,
        Stage::Census,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Lyapunov => "lyapunov",
            Stage::Singularity => "singularity",
            Stage::Splitting => "splitting",
            Stage::Domination => "domination",
            Stage::Sectional => "sectional",
            Stage::Spanning => "spanning",
            Stage::Disk => "disk",
            Stage::Expansiveness => "expansiveness",
            Stage::Pesin => "pesin",
            Stage::Certify => "certify",
            Stage::Recurrences => "recurrences",
            Stage::Shadow => "shadow",
            Stage::Census => "census",
        }
    }

    pub fn requires(self) -> &'static [Stage] {
        match self {
            Stage::Domination | Stage::Sectional | Stage::Spanning | Stage::Disk | Stage::Pesin => {
                &[Stage::Splitting]
            }
            Stage::Certify | Stage::Recurrences => &[Stage::Pesin],
            Stage::Shadow => &[Stage::Recurrences],
            Stage::Census => &[Stage::Shadow],
            _ => &[],
        }
    }

    /// Stages built on a two-dimensional F inside R^3.
    pub fn needs_dimension_three(self) -> bool {
        matches!(
            self,
            Stage::Splitting | Stage::Spanning | Stage::Disk | Stage::Expansiveness | Stage::Recurrences
        )
    }

    pub fn check_params(self, params: &Table) -> Result<(), String> {
        fn check<P: DeserializeOwned>(params: &Table) -> Result<(), String> {
            decode::<P>(params).map(|_| ())
        }
        match self {
            Stage::Lyapunov => check::<LyapunovParams>(params),
            Stage::Singularity => check::<SingularityParams>(params),
            Stage::Splitting => check::<SplittingParams>(params),
            Stage::Domination => check::<DominationParams>(params),
            Stage::Sectional => check::<SectionalParams>(params),
            Stage::Spanning => check::<SpanningParams>(params),
            Stage::Disk => check::<DiskParams>(params),
            Stage::Expansiveness => check::<ExpansivenessParams>(params),
            Stage::Pesin => check::<PesinParams>(params),
            Stage::Certify => check::<CertifyParams>(params),
            Stage::Recurrences => check::<RecurrenceParams>(params),
            Stage::Shadow => check::<ShadowParams>(params),
            Stage::Census => check::<CensusParams>(params),
        }
    }
}

fn decode<P: DeserializeOwned>(params: &Table) -> Result<P, String> {
    toml::Value::Table(params.clone()).try_into().map_err(|e: toml::de::Error| e.message().to_string())
}

#[derive(Debug, thiserror::Error)]
pub enum StageError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Input(String),
}

impl StageError {
    pub fn is_budget(&self) -> bool {
        matches!(self, StageError::Core(Error::Budget { .. }))
    }
}

/// Result of one stage: emitted files (relative to the output directory),
/// the gate verdict and a one-line summary.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Outcome {
    pub files: Vec<String>,
    pub passed: bool,
    pub budget_exceeded: bool,
    pub summary: String,
}

/// State threaded between stages.
pub struct Context<'a> {
    pub system: FlowSystem,
    pub seed: u64,
    pub tol: f64,
    pub budgets: &'a Budgets,
    pub out: &'a Path,
    pub field: Option<SplittingField>,
    pub poincare: Option<SampledSplitting>,
    pub block: Option<PesinBlock>,
    pub seeds: Option<Vec<Seed>>,
    pub records: Option<Vec<PeriodicOrbitRecord>>,
    pub h_upper: Option<f64>,
}

impl Context<'_> {
    fn json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<String, StageError> {
        let f = BufWriter::new(File::create(self.out.join(name))?);
        serde_json::to_writer_pretty(f, value).map_err(|e| StageError::Input(e.to_string()))?;
        Ok(name.to_string())
    }

    fn csv<R: Serialize>(&self, name: &str, rows: impl IntoIterator<Item = R>) -> Result<String, StageError> {
        let mut w = csv::Writer::from_path(self.out.join(name)).map_err(|e| StageError::Input(e.to_string()))?;
        for r in rows {
            w.serialize(r).map_err(|e| StageError::Input(e.to_string()))?;
        }
        w.flush()?;
        Ok(name.to_string())
    }

    fn field(&self) -> Result<&SplittingField, StageError> {
        self.field.as_ref().ok_or_else(|| StageError::Input("no splitting field; run a splitting stage first".into()))
    }

    fn start(&self, x0: &Option<Vec<f64>>, transient: f64) -> Result<Vec<f64>, StageError> {
        let x = x0.clone().unwrap_or_else(|| default_start(&self.system));
        if x.len() != self.system.dim() {
            return Err(StageError::Input(format!("x0 must have {} entries", self.system.dim())));
        }
        if transient > 0.0 {
            Ok(flow(&self.system, &x, transient, self.tol)?)
        } else {
            Ok(x)
        }
    }

    pub fn run(&mut self, stage: Stage, params: &Table) -> Result<Outcome, StageError> {
        fn p<P: DeserializeOwned>(params: &Table) -> Result<P, StageError> {
            decode(params).map_err(StageError::Input)
        }
        match stage {
            Stage::Lyapunov => self.lyapunov(p(params)?),
            Stage::Singularity => self.singularity(p(params)?),
            Stage::Splitting => self.splitting(p(params)?),
            Stage::Domination => self.domination(p(params)?),
            Stage::Sectional => self.sectional(p(params)?),
            Stage::Spanning => self.spanning(p(params)?),
            Stage::Disk => self.disk(p(params)?),
            Stage::Expansiveness => self.expansiveness(p(params)?),
            Stage::Pesin => self.pesin(p(params)?),
            Stage::Certify => self.certify(p(params)?),
            Stage::Recurrences => self.recurrences(p(params)?),
            Stage::Shadow => self.shadow(p(params)?),
            Stage::Census => self.census(p(params)?),
        }
    }
}

fn outcome(files: Vec<String>, passed: bool, summary: String) -> Outcome {
    Outcome {
        files,
        passed,
        budget_exceeded: false,
        summary,
    }
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LyapunovParams {
    pub x0: Option<Vec<f64>>,
    pub transient: f64,
    pub window: f64,
    pub renorm_step: f64,
}

impl Default for LyapunovParams {
    fn default() -> Self {
        Self {
            x0: None,
            transient: 50.0,
            window: 2000.0,
            renorm_step: 0.1,
        }
    }
}

#[derive(Serialize)]
struct ExponentRow {
    index: usize,
    exponent: f64,
}

impl Context<'_> {
    fn lyapunov(&mut self, p: LyapunovParams) -> Result<Outcome, StageError> {
        let x = self.start(&p.x0, p.transient)?;
        let r = lyapunov_spectrum(&self.system, &x, p.window, p.renorm_step, self.tol)?;
        let files = vec![
            self.csv(
                "exponents.csv",
                r.exponents.iter().enumerate().map(|(index, &exponent)| ExponentRow { index, exponent }),
            )?,
            self.json("lyapunov.json", &r)?,
        ];
        let finite = r.exponents.iter().all(|e| e.is_finite());
        let summary = format!(
            "exponents [{}], sum {:.6}, converged {}",
            r.exponents.iter().map(|e| format!("{e:.4}")).collect::<Vec<_>>().join(", "),
            r.sum(),
            r.converged
        );
        Ok(outcome(files, finite, summary))
    }
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SingularityParams {
    /// Equilibria to analyse; the system's known equilibria by default.
    pub points: Option<Vec<Vec<f64>>>,
}

impl Context<'_> {
    fn singularity(&mut self, p: SingularityParams) -> Result<Outcome, StageError> {
        let points = p.points.unwrap_or_else(|| self.system.known_equilibria());
        let reports = points
            .iter()
            .map(|x| singularity_analysis(&self.system, x))
            .collect::<Result<Vec<_>, _>>()?;
        let files = vec![self.json("singularities.json", &reports)?];
        let hyperbolic = reports.iter().all(|r| r.hyperbolic);
        let rates: Vec<String> = reports
            .iter()
            .map(|r| r.min_sectional_rate.map_or("n/a".into(), |v| format!("{v:.4}")))
            .collect();
        let summary = format!(
            "{} equilibria, all hyperbolic: {hyperbolic}, sectional rates [{}]",
            reports.len(),
            rates.join(", ")
        );
        Ok(outcome(files, hyperbolic, summary))
    }
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplittingParams {
    pub x0: Option<Vec<f64>>,
    pub transient: f64,
    pub steps: usize,
    pub step: f64,
    pub lookback: f64,
    pub d_f: usize,
    /// Largest tolerated fraction of samples whose subspaces did not
    /// converge.
    pub max_unconverged: f64,
}

impl Default for SplittingParams {
    fn default() -> Self {
        Self {
            x0: None,
            transient: 50.0,
            steps: 21_000,
            step: 0.1,
            lookback: 20.0,
            d_f: 2,
            max_unconverged: 0.05,
        }
    }
}

#[derive(Serialize)]
struct FieldRow {
    index: usize,
    x: f64,
    y: f64,
    z: f64,
    convergence: f64,
}

impl Context<'_> {
    fn splitting(&mut self, p: SplittingParams) -> Result<Outcome, StageError> {
        let x = self.start(&p.x0, p.transient)?;
        let chain = CocycleChain::along_orbit(&self.system, &x, p.steps, p.step, self.tol)?;
        let field = oseledets_directions(chain, p.lookback, p.d_f)?;
        let rows: Vec<FieldRow> = (0..field.len())
            .map(|i| {
                let x = field.point(i);
                FieldRow {
                    index: field.chain_index(i),
                    x: x[0],
                    y: x[1],
                    z: x[2],
                    convergence: field.convergence[i],
                }
            })
            .collect();
        let frac = field.unconverged.len() as f64 / field.len().max(1) as f64;
        let summary_json = json!({
            "samples": field.len(),
            "first": field.first,
            "last": field.last,
            "step": p.step,
            "d_f": p.d_f,
            "lookback_steps": field.lookback_steps,
            "unconverged": field.unconverged.len(),
        });
        let files = vec![self.csv("splitting.csv", rows)?, self.json("splitting.json", &summary_json)?];
        let summary = format!("{} samples, {} unconverged", field.len(), field.unconverged.len());
        self.poincare = Some(field.scaled_poincare(&self.system));
        self.field = Some(field);
        Ok(outcome(files, frac <= p.max_unconverged, summary))
    }
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DominationParams {
    pub samples: usize,
    pub l_max: usize,
    pub aperture: f64,
    /// Also check the splitting with E and F exchanged, which must fail at
    /// no less than this fraction of samples. Zero disables the control.
    pub swapped_min_fraction: f64,
}

impl Default for DominationParams {
    fn default() -> Self {
        Self {
            samples: 10_000,
            l_max: 20,
            aperture: 0.2,
            swapped_min_fraction: 0.99,
        }
    }
}

impl Context<'_> {
    fn domination(&mut self, p: DominationParams) -> Result<Outcome, StageError> {
        let tangent = self.field()?.tangent();
        let cover = tangent.coverable(p.l_max);
        if cover.is_empty() {
            return Err(StageError::Input("splitting too short for l_max".into()));
        }
        let stride = (cover.len() / p.samples.max(1)).max(1);
        let samples: Vec<usize> = cover.iter().step_by(stride).take(p.samples).copied().collect();
        let search = search_domination_step(&tangent, &samples, p.l_max, p.aperture)?;
        let (l, passed) = match search.verdict {
            DominationVerdict::Passed { l } => (Some(l), true),
            DominationVerdict::Inconclusive => (None, false),
        };
        let mut swapped_fraction = None;
        if p.swapped_min_fraction > 0.0 {
            let c = check_dominated_splitting(&tangent.swapped(), &samples, l.unwrap_or(p.l_max), p.aperture)?;
            swapped_fraction = Some(c.violation_count as f64 / c.sample_count.max(1) as f64);
        }
        let control_ok = swapped_fraction.is_none_or(|f| f >= p.swapped_min_fraction);
        let files = vec![self.json(
            "domination.json",
            &json!({
                "l": l,
                "samples": samples.len(),
                "certificate": search.certificate,
                "swapped_violation_fraction": swapped_fraction,
            }),
        )?];
        let summary = format!(
            "L = {}, {} violations on {} samples, swapped control fails at {}",
            l.map_or("none".into(), |l| l.to_string()),
            search.certificate.violation_count,
            samples.len(),
            swapped_fraction.map_or("n/a".into(), |f| format!("{:.2}%", 100.0 * f))
        );
        Ok(outcome(files, passed && control_ok, summary))
    }
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SectionalParams {
    pub stride: usize,
    pub t_max: usize,
    pub lambda_min: f64,
}

impl Default for SectionalParams {
    fn default() -> Self {
        Self {
            stride: 20,
            t_max: 20,
            lambda_min: 1e-3,
        }
    }
}

#[derive(Serialize)]
struct RateRow {
    index: usize,
    rate: f64,
}

impl Context<'_> {
    fn sectional(&mut self, p: SectionalParams) -> Result<Outcome, StageError> {
        let field = self.field()?;
        let idx: Vec<usize> = (0..field.len()).step_by(p.stride.max(1)).collect();
        let pts: Vec<Vec<f64>> = idx.iter().map(|&i| field.point(i).to_vec()).collect();
        let fs: Vec<DMatrix<f64>> = idx.iter().map(|&i| field.f[i].clone()).collect();
        let grid: Vec<f64> = (1..=p.t_max.max(1)).map(|t| t as f64).collect();
        let cert = check_sectional_expansion(&self.system, &pts, &fs, &grid, p.lambda_min, self.tol)?;
        let rows = idx
            .iter()
            .zip(&cert.sample_rates)
            .map(|(&i, &rate)| RateRow { index: field.chain_index(i), rate });
        let files = vec![self.csv("sectional.csv", rows)?, self.json("sectional.json", &cert)?];
        let summary = format!(
            "{} points, worst rate {:.4}, mean rate {:.4}",
            pts.len(),
            cert.worst_plane_rate,
            cert.mean_rate
        );
        Ok(outcome(files, cert.passes, summary))
    }
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpanningParams {
    /// Splitting sample the arc is centred on.
    pub sample_index: usize,
    pub arc_length: f64,
    pub count: usize,
    pub eps: Vec<f64>,
    pub n_max: usize,
    pub map_tol: f64,
}

impl Default for SpanningParams {
    fn default() -> Self {
        Self {
            sample_index: 500,
            arc_length: 0.5,
            count: 100_000,
            eps: vec![0.5, 0.25, 0.125],
            n_max: 30,
            map_tol: 1e-8,
        }
    }
}

/// Unit vector of F orthogonal to the flow at field sample i.
fn unstable_direction(system: &FlowSystem, field: &SplittingField, i: usize) -> Result<DVector<f64>, StageError> {
    let x = field.point(i);
    let flow_dir = DVector::from_vec(system.evaluate(x)?).normalize();
    let mut best = DVector::zeros(x.len());
    for c in field.f[i].column_iter() {
        let mut v: DVector<f64> = c.into();
        v -= &flow_dir * flow_dir.dot(&v);
        if v.norm() > best.norm() {
            best = v;
        }
    }
    Ok(best.normalize())
}

fn sample_in_range(field: &SplittingField, i: usize) -> Result<(), StageError> {
    if i >= field.len() {
        return Err(StageError::Input(format!("sample_index {i} outside the field (len {})", field.len())));
    }
    Ok(())
}

impl Context<'_> {
    fn spanning(&mut self, p: SpanningParams) -> Result<Outcome, StageError> {
        let field = self.field()?;
        sample_in_range(field, p.sample_index)?;
        let center = field.point(p.sample_index).to_vec();
        let u = unstable_direction(&self.system, field, p.sample_index)?;
        let k = arc_sample(&center, u.as_slice(), p.arc_length, p.count);
        let map = TimeOneMap::new(self.system.clone(), p.map_tol);
        let ns: Vec<usize> = (1..=p.n_max).collect();
        let cfg = EntropyConfig {
            order_seed: substream(self.seed, "spanning").next_u64(),
            budget: self.budgets.max_samples,
            ..Default::default()
        };
        let est = entropy_estimate(&map, &k, &p.eps, &ns, &cfg)?;
        let files = vec![self.csv("spanning.csv", &est.rows)?, self.json("entropy.json", &est)?];
        let positive = est.curves.iter().filter(|c| c.lower.as_ref().is_some_and(|f| f.slope > 0.0)).count();
        let summary = format!(
            "h_lower {:.4}, h_upper {:.4}, {positive} of {} eps with a positive lower slope",
            est.h_lower,
            est.h_upper,
            est.curves.len()
        );
        self.h_upper = Some(est.h_upper);
        let mut o = outcome(files, est.h_lower > 0.0, summary);
        o.budget_exceeded = est.achieved_n < p.n_max;
        Ok(o)
    }
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiskParams {
    pub sample_index: usize,
    pub half_extent: f64,
    pub cells: usize,
    pub steps: usize,
    pub target_edge: f64,
    pub aperture: f64,
    pub map_tol: f64,
}

impl Default for DiskParams {
    fn default() -> Self {
        Self {
            sample_index: 500,
            half_extent: 1e-3,
            cells: 4,
            steps: 12,
            target_edge: 0.01,
            aperture: 0.2,
            map_tol: 1e-8,
        }
    }
}

#[derive(Serialize)]
struct DiskRow {
    n: usize,
    volume: f64,
    max_piece: f64,
    worst_aspect: f64,
    vertices: usize,
}

impl Context<'_> {
    fn disk(&mut self, p: DiskParams) -> Result<Outcome, StageError> {
        let field = self.field()?;
        sample_in_range(field, p.sample_index)?;
        let i = p.sample_index;
        let x = field.point(i).to_vec();
        let u = unstable_direction(&self.system, field, i)?;
        let v = DVector::from_vec(self.system.evaluate(&x)?).normalize();
        let a: Vec<f64> = (&u * p.half_extent).as_slice().to_vec();
        let b: Vec<f64> = (&v * p.half_extent).as_slice().to_vec();
        let mut mesh = DiskMesh::tangent_disk(&x, [&a, &b], [p.cells, p.cells], &field.f[i], p.aperture)?;
        let mut cfg = DiskConfig {
            target_edge: p.target_edge,
            ..Default::default()
        };
        if let Some(cap) = self.budgets.max_vertices {
            cfg.max_vertices = cap;
        }
        let map = TimeOneMap::new(self.system.clone(), p.map_tol);
        let r = disk_volume_expansion(&map, &mut mesh, p.steps, &cfg)?;
        let rows = (0..r.volumes.len()).map(|n| DiskRow {
            n,
            volume: r.volumes[n],
            max_piece: r.max_piece[n],
            worst_aspect: r.worst_aspect[n],
            vertices: r.vertex_counts[n],
        });
        let files = vec![self.csv("disk.csv", rows)?, self.json("disk.json", &r)?];
        let mut passed = r.v_f > 0.0;
        let mut summary = format!("v_F {:.4} over n = {:?}", r.v_f, r.fit_range);
        if let Some(h) = self.h_upper {
            passed &= h >= r.v_f - 0.1;
            summary.push_str(&format!(", h_upper {h:.4}"));
        }
        let mut o = outcome(files, passed, summary);
        o.budget_exceeded = r.saturated;
        Ok(o)
    }
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpansivenessParams {
    pub x0: Option<Vec<f64>>,
    pub transient: f64,
    pub points: usize,
    /// Time between probe centres along the orbit.
    pub spacing: f64,
    pub delta: f64,
    pub n: usize,
    pub survivors: usize,
    pub attempts: usize,
    pub eps_inner: f64,
    pub collapse_tol: f64,
    pub min_fraction: f64,
    pub max_slope: f64,
}

impl Default for ExpansivenessParams {
    fn default() -> Self {
        Self {
            x0: None,
            transient: 100.0,
            points: 100,
            spacing: 5.0,
            delta: 0.1,
            n: 40,
            survivors: 8,
            attempts: 60,
            eps_inner: 0.01,
            collapse_tol: 0.02,
            min_fraction: 0.95,
            max_slope: 0.05,
        }
    }
}

#[derive(Serialize)]
struct ProbeRow {
    index: usize,
    survivors: usize,
    attempts: usize,
    collapse: Option<f64>,
    slope: f64,
}

impl Context<'_> {
    fn expansiveness(&mut self, p: ExpansivenessParams) -> Result<Outcome, StageError> {
        let x = self.start(&p.x0, p.transient)?;
        let orbit = OrbitSegment::integrate(&self.system, &x, p.spacing * p.points as f64, p.spacing, self.tol)?;
        let mut rng = substream(self.seed, "expansiveness");
        let seeds: Vec<u64> = (0..p.points).map(|_| rng.next_u64()).collect();
        let probes = orbit.points[..p.points.min(orbit.len())]
            .par_iter()
            .zip(&seeds)
            .map(|(x, &seed)| {
                let c = ExpansivenessConfig {
                    survivors: p.survivors,
                    max_attempts: p.attempts,
                    eps_inner: p.eps_inner,
                    seed,
                    ..Default::default()
                };
                flow_expansiveness_probe(&self.system, x, p.delta, p.n, &c, self.tol.max(1e-9))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let rows = probes.iter().enumerate().map(|(index, r)| ProbeRow {
            index,
            survivors: r.survivors,
            attempts: r.attempts,
            collapse: r.collapse_distance,
            slope: r.slope,
        });
        let files = vec![self.csv("expansiveness.csv", rows)?, self.json("expansiveness.json", &probes)?];
        let collapsed = probes
            .iter()
            .filter(|r| r.survivors > 0 && r.collapse_distance.is_some_and(|d| d <= p.collapse_tol))
            .count();
        let max_slope = probes.iter().map(|r| r.slope).fold(f64::NEG_INFINITY, f64::max);
        let passed = collapsed as f64 >= p.min_fraction * probes.len() as f64 && max_slope < p.max_slope;
        let summary = format!("{collapsed}/{} collapsed, max inner slope {max_slope:.4}", probes.len());
        Ok(outcome(files, passed, summary))
    }
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PesinParams {
    pub n0: usize,
    pub threshold: f64,
}

impl Default for PesinParams {
    fn default() -> Self {
        Self {
            n0: 50,
            threshold: -0.1,
        }
    }
}

#[derive(Serialize)]
struct PesinRow {
    index: usize,
    e_average: f64,
    f_average: f64,
    in_block: bool,
}

impl Context<'_> {
    fn pesin(&mut self, p: PesinParams) -> Result<Outcome, StageError> {
        let split = self.poincare.as_ref().ok_or_else(|| StageError::Input("no splitting field".into()))?;
        let step = self.field()?.chain.step;
        let block = pesin_block(split, step, p.n0, p.threshold)?;
        let rows = (0..block.e_average.len()).map(|k| PesinRow {
            index: k,
            e_average: block.e_average[k],
            f_average: block.f_average[k],
            in_block: block.contains(k),
        });
        let files = vec![
            self.csv("pesin.csv", rows)?,
            self.json(
                "pesin.json",
                &json!({
                    "n0": block.n0,
                    "threshold": block.threshold,
                    "step": block.step,
                    "eligible": block.eligible,
                    "members": block.indices.len(),
                    "measure": block.measure,
                }),
            )?,
        ];
        let summary = format!("measure {:.3}, {} members", block.measure, block.indices.len());
        let passed = block.measure > 0.0;
        self.block = Some(block);
        Ok(outcome(files, passed, summary))
    }
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifyParams {
    pub count: usize,
    /// Spacing, in block members, between certified arcs.
    pub stride: usize,
    pub arc: usize,
    pub t0: f64,
    pub lambda: f64,
    /// Certificates re-verified with the tangent maps recomputed at half
    /// the tolerance.
    pub recheck: usize,
    pub max_drift: f64,
}

impl Default for CertifyParams {
    fn default() -> Self {
        Self {
            count: 20,
            stride: 97,
            arc: 100,
            t0: 5.0,
            lambda: 0.8,
            recheck: 5,
            max_drift: 1e-4,
        }
    }
}

impl Context<'_> {
    fn certify(&mut self, p: CertifyParams) -> Result<Outcome, StageError> {
        let split = self.poincare.as_ref().ok_or_else(|| StageError::Input("no splitting field".into()))?;
        let block = self.block.as_ref().ok_or_else(|| StageError::Input("no Pesin block".into()))?;
        let step = block.step;
        let starts: Vec<usize> = block
            .indices
            .iter()
            .copied()
            .step_by(p.stride.max(1))
            .filter(|&k| k + p.arc < split.steps.len())
            .take(p.count)
            .collect();
        let certs = starts
            .iter()
            .map(|&k| certify_quasi_hyperbolic(split, step, k, k + p.arc, p.t0, p.lambda))
            .collect::<Result<Vec<_>, _>>()?;
        let tol = Tolerance::new(0.5 * self.tol);
        let mut rechecks = Vec::new();
        for c in certs.iter().filter(|c| c.passes).take(p.recheck) {
            let r = recheck_certificate(c, split, |j| {
                scaled_step_matrix(&self.system, &split.points[j], &split.points[j + 1], step, tol)
            })?;
            rechecks.push(r);
        }
        let passing = certs.iter().filter(|c| c.passes).count();
        let drift = rechecks.iter().map(|r| r.max_relative_drift).fold(0.0f64, f64::max);
        let rechecks_ok = rechecks.iter().all(|r| r.passes) && drift < p.max_drift;
        let files = vec![self.json("certificates.json", &json!({ "certificates": certs, "rechecks": rechecks }))?];
        let summary = format!(
            "{passing}/{} certificates pass, {} rechecked, max drift {drift:.2e}",
            certs.len(),
            rechecks.len()
        );
        Ok(outcome(files, passing > 0 && rechecks_ok, summary))
    }
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecurrenceParams {
    pub x0: Option<Vec<f64>>,
    pub transient: f64,
    pub duration: f64,
    pub h: f64,
    pub delta: f64,
    pub min_t: f64,
    pub max_t: f64,
}

impl Default for RecurrenceParams {
    fn default() -> Self {
        let r = RecurrenceConfig::default();
        Self {
            x0: None,
            transient: 50.0,
            duration: 2100.0,
            h: 0.01,
            delta: r.delta,
            min_t: r.min_t,
            max_t: r.max_t,
        }
    }
}

#[derive(Serialize)]
struct SeedRow {
    start_time: f64,
    t: f64,
    gap: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl Context<'_> {
    fn recurrences(&mut self, p: RecurrenceParams) -> Result<Outcome, StageError> {
        let x = self.start(&p.x0, p.transient)?;
        let block = self.block.as_ref().ok_or_else(|| StageError::Input("no Pesin block".into()))?;
        let orbit = OrbitSegment::integrate(&self.system, &x, p.duration, p.h, self.tol)?;
        let cfg = RecurrenceConfig {
            delta: p.delta,
            min_t: p.min_t,
            max_t: p.max_t,
        };
        let seeds = find_recurrences(&self.system, &orbit, block, &cfg, self.tol)?;
        let rows = seeds.iter().map(|s| SeedRow {
            start_time: s.start_time,
            t: s.t,
            gap: s.gap,
            x: s.x[0],
            y: s.x[1],
            z: s.x[2],
        });
        let files = vec![self.csv("seeds.csv", rows)?];
        let summary = format!("{} recurrence seeds", seeds.len());
        let passed = !seeds.is_empty();
        self.seeds = Some(seeds);
        Ok(outcome(files, passed, summary))
    }
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShadowParams {
    pub max_period: f64,
    pub segment: f64,
    pub max_iterations: usize,
    pub residual_tol: f64,
    pub c_max: f64,
    pub min_orbits: usize,
    pub gap_offsets: Vec<f64>,
    pub max_spread: f64,
}

impl Default for ShadowParams {
    fn default() -> Self {
        let s = ShadowConfig::default();
        Self {
            max_period: 6.5,
            segment: s.segment,
            max_iterations: s.max_iterations,
            residual_tol: s.residual_tol,
            c_max: 0.1,
            min_orbits: 10,
            gap_offsets: vec![1e-3, 1e-4, 1e-5],
            max_spread: 3.0,
        }
    }
}

#[derive(Serialize)]
struct OrbitRow {
    period: f64,
    word: String,
    gap: f64,
    c_bound: f64,
    d_bound: f64,
    residual: f64,
    iterations: usize,
    left_tube: bool,
}

impl Context<'_> {
    fn shadow(&mut self, p: ShadowParams) -> Result<Outcome, StageError> {
        let seeds = self.seeds.as_ref().ok_or_else(|| StageError::Input("no recurrence seeds".into()))?;
        let cfg = ShadowConfig {
            segment: p.segment,
            max_iterations: p.max_iterations,
            residual_tol: p.residual_tol,
            ..Default::default()
        };
        let attempts: Vec<_> = seeds
            .par_iter()
            .filter(|s| s.t <= p.max_period)
            .map(|s| shadow_periodic(&self.system, s, &cfg))
            .collect();
        let failed = attempts.iter().filter(|r| r.is_err()).count();
        let records: Vec<PeriodicOrbitRecord> = attempts.into_iter().filter_map(|r| r.ok()).collect();
        let rows = records.iter().map(|r| OrbitRow {
            period: r.period,
            word: r.symbol_sequence.clone().unwrap_or_default(),
            gap: r.gap,
            c_bound: r.c_bound,
            d_bound: r.d_bound,
            residual: r.residual,
            iterations: r.iterations,
            left_tube: r.left_tube,
        });
        let mut files = vec![self.csv("shadowing.csv", rows)?, self.json("periodic_orbits.json", &records)?];
        let close = records.iter().filter(|r| r.c_bound <= p.c_max).count();
        let mut passed = close >= p.min_orbits;
        let mut summary = format!("{} orbits ({failed} seeds failed), {close} with c <= {}", records.len(), p.c_max);
        let shortest = records.iter().min_by(|a, b| a.period.total_cmp(&b.period));
        if let (Some(r), false) = (shortest, p.gap_offsets.is_empty()) {
            let g = gap_scaling(&self.system, r, &p.gap_offsets, &cfg)?;
            passed &= g.spread <= p.max_spread;
            summary.push_str(&format!(", gap ratio spread {:.3}", g.spread));
            files.push(self.json("gap_scaling.json", &g)?);
        }
        self.records = Some(records);
        Ok(outcome(files, passed, summary))
    }
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CensusParams {
    pub t_max: f64,
    pub step: f64,
    pub min_rate: f64,
}

impl Default for CensusParams {
    fn default() -> Self {
        Self {
            t_max: 6.0,
            step: 0.5,
            min_rate: 0.3,
        }
    }
}

impl Context<'_> {
    fn census(&mut self, p: CensusParams) -> Result<Outcome, StageError> {
        let records = self.records.as_ref().ok_or_else(|| StageError::Input("no periodic orbits".into()))?;
        let c = horseshoe_census(records, p.t_max, p.step)?;
        c.write_csv(BufWriter::new(File::create(self.out.join("census.csv"))?))?;
        let files = vec!["census.csv".to_string(), self.json("census.json", &c)?];
        let mut passed = !c.insufficient && c.rate > p.min_rate;
        let within = c.orbits.iter().filter(|o| o.period <= p.t_max).count();
        let mut summary = format!("{within} orbits up to T = {}, rate {:.4}", p.t_max, c.rate);
        if let Some(h) = self.h_upper {
            passed &= c.rate <= h + 0.1;
            summary.push_str(&format!(", h_upper {h:.4}"));
        }
        Ok(outcome(files, passed, summary))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_match_serde() {
        for s in Stage::ALL {
            let v = toml::Value::try_from(s).unwrap();
            assert_eq!(v.as_str(), Some(s.name()));
        }
    }

    #[test]
    fn prerequisites_come_earlier_in_the_list() {
        for (i, s) in Stage::ALL.iter().enumerate() {
            for r in s.requires() {
                assert!(Stage::ALL[..i].contains(r));
            }
        }
    }

    #[test]
    fn defaults_decode_from_an_empty_table() {
        for s in Stage::ALL {
            s.check_params(&Table::new()).unwrap();
        }
    }
}
