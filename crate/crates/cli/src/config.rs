//! Scenario configuration: a single TOML document describing the system,
//! the input field, the measurement and the numerics.
//!
//! Complex matrices are nested arrays of `[re, im]` pairs, row-major. All
//! defaults are filled during resolution and the resolved document is echoed
//! into the output directory; re-running from the echo reproduces results
//! exactly.

use anyhow::{anyhow, bail, Context};
use serde::{Deserialize, Serialize};

use cmptraj::master::Steps;
use cmptraj::operators;
use cmptraj::quadrature::UniformGrid;
use cmptraj::slh::{OperatorFn, SlhTriple};
use cmptraj::trajectory::{Measurement, TrajectorySettings};
use cmptraj::wavepacket::{CmpGenerator, WavePacket};
use cmptraj::{CMatrix, CVector, Complex64, Scenario};

/// `[re, im]` pair.
pub type ComplexEntry = [f64; 2];
/// Row-major complex matrix.
pub type MatrixSpec = Vec<Vec<ComplexEntry>>;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub system: SystemConfig,
    pub input: InputConfig,
    pub measurement: MeasurementConfig,
    pub numerics: NumericsConfig,
    pub run: RunConfig,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// `"two_level_atom"` (uses `kappa`) or `"trivial"` (uses `dim`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    /// `"excited"` (top basis vector), `"ground"` (bottom basis vector) or
    /// an explicit unit vector of `[re, im]` entries. Defaults to the top
    /// basis vector.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialState>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<MatrixSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l: Option<MatrixSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<MatrixSpec>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    Vacuum,
    SinglePhoton,
    NPhoton,
    CustomGenerator,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub kind: InputKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub packets: Vec<PacketConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<MatrixSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_aux: Option<MatrixSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi: Option<Vec<ComplexEntry>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum PacketConfig {
    DecayingExponential { gamma: f64 },
    Gaussian { t0: f64, sigma: f64 },
    Square { t0: f64, t1: f64 },
    /// `(time, re, im)` samples, piecewise linear, rescaled to unit norm.
    Tabulated { samples: Vec<[f64; 3]> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementKind {
    Homodyne,
    Counting,
    None,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementConfig {
    pub kind: MeasurementKind,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsConfig {
    pub dt: f64,
    pub t_max: f64,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_eps_w")]
    pub eps_w: f64,
    #[serde(default = "default_eps_nu")]
    pub eps_nu: f64,
}

fn default_grid_points() -> usize {
    10_000
}

fn default_eps_w() -> f64 {
    1e-8
}

fn default_eps_nu() -> f64 {
    1e-12
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Master,
    Trajectory,
    Ensemble,
    Verify,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(default = "default_n_traj")]
    pub n_traj: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub observables: Vec<ObservableConfig>,
    /// 0 selects a cadence near 200 output samples.
    #[serde(default)]
    pub output_every: usize,
}

fn default_n_traj() -> usize {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialState {
    Named(String),
    Vector(Vec<ComplexEntry>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ObservableConfig {
    Named(String),
    Matrix { name: String, matrix: MatrixSpec },
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        toml::from_str(text).map_err(|e| anyhow!("config parse error: {e}"))
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        toml::to_string_pretty(self).context("serializing effective config")
    }

    /// Fill defaults, apply command-line overrides and build the runnable
    /// objects. Errors name the offending config field.
    pub fn resolve(
        mut self,
        mode: Mode,
        seed: Option<u64>,
        dt: Option<f64>,
        t_max: Option<f64>,
    ) -> anyhow::Result<ResolvedRun> {
        self.run.mode = mode;
        if let Some(seed) = seed {
            self.run.seed = seed;
        }
        if let Some(dt) = dt {
            self.numerics.dt = dt;
        }
        if let Some(t_max) = t_max {
            self.numerics.t_max = t_max;
        }

        let numerics = &self.numerics;
        if numerics.dt <= 0.0 || numerics.t_max <= 0.0 {
            bail!("numerics.dt and numerics.t_max must be positive");
        }
        let n_steps_f = numerics.t_max / numerics.dt;
        let n_steps = n_steps_f.round() as usize;
        if n_steps == 0 || (n_steps_f - n_steps as f64).abs() > 1e-6 * n_steps_f.max(1.0) {
            bail!(
                "numerics.dt = {} does not divide numerics.t_max = {} (t_max/dt = {n_steps_f})",
                numerics.dt,
                numerics.t_max
            );
        }
        if self.run.output_every == 0 {
            self.run.output_every = default_cadence(n_steps);
        }
        if n_steps % self.run.output_every != 0 {
            bail!(
                "run.output_every = {} does not divide the {n_steps} steps of the run",
                self.run.output_every
            );
        }
        if self.run.n_traj == 0 {
            bail!("run.n_traj must be at least 1");
        }

        let sys = build_system(&self.system)?;
        let grid = UniformGrid::new(numerics.t_max, numerics.grid_points);
        let gen = build_generator(&self.input, &grid, numerics.eps_w)?;
        let eta = initial_system_vector(self.system.initial.as_ref(), sys.dim())?;
        let observables = build_observables(&self.run.observables, sys.dim())?;
        let scenario = Scenario::new(sys, gen, eta, observables)
            .map_err(|e| anyhow!("scenario validation: {e}"))?;

        let steps = Steps::new(
            numerics.t_max / n_steps as f64,
            n_steps,
            self.run.output_every,
        )
        .map_err(|e| anyhow!("numerics: {e}"))?;
        let mut settings = TrajectorySettings::new(steps);
        settings.eps_nu = numerics.eps_nu;

        let measurement = match self.measurement.kind {
            MeasurementKind::Homodyne => Some(Measurement::Homodyne),
            MeasurementKind::Counting => Some(Measurement::Counting),
            MeasurementKind::None => None,
        };
        if measurement.is_none() && matches!(mode, Mode::Trajectory | Mode::Ensemble) {
            bail!("measurement.kind = \"none\" cannot drive a {mode:?} run");
        }

        Ok(ResolvedRun { config: self, scenario, settings, measurement })
    }
}

fn default_cadence(n_steps: usize) -> usize {
    let target = n_steps.div_ceil(200).max(1);
    (target..=n_steps).find(|d| n_steps % d == 0).unwrap_or(n_steps)
}

/// A validated run: the effective config plus the objects it describes.
pub struct ResolvedRun {
    pub config: ScenarioConfig,
    pub scenario: Scenario,
    pub settings: TrajectorySettings,
    pub measurement: Option<Measurement>,
}

fn to_cmatrix(spec: &MatrixSpec, field: &str) -> anyhow::Result<CMatrix> {
    let rows = spec.len();
    if rows == 0 {
        bail!("{field}: matrix is empty");
    }
    if spec.iter().any(|row| row.len() != rows) {
        bail!("{field}: matrix must be square ({rows} rows)");
    }
    Ok(CMatrix::from_fn(rows, rows, |i, j| Complex64::new(spec[i][j][0], spec[i][j][1])))
}

fn build_system(cfg: &SystemConfig) -> anyhow::Result<SlhTriple> {
    match cfg.preset.as_deref() {
        Some("two_level_atom") => {
            let kappa = cfg.kappa.unwrap_or(1.0);
            if kappa <= 0.0 {
                bail!("system.kappa must be positive");
            }
            Ok(SlhTriple::two_level_atom(kappa))
        }
        Some("trivial") => Ok(SlhTriple::trivial(cfg.dim.unwrap_or(1))),
        Some(other) => bail!("system.preset: unknown preset '{other}'"),
        None => {
            let l = to_cmatrix(
                cfg.l.as_ref().ok_or_else(|| anyhow!("system.l: required without a preset"))?,
                "system.l",
            )?;
            let dim = l.nrows();
            let s = match &cfg.s {
                Some(spec) => to_cmatrix(spec, "system.s")?,
                None => operators::identity(dim),
            };
            let h = match &cfg.h {
                Some(spec) => to_cmatrix(spec, "system.h")?,
                None => operators::zeros(dim),
            };
            SlhTriple::constant(s, l, h).map_err(|e| anyhow!("system: {e}"))
        }
    }
}

fn build_packet(cfg: &PacketConfig, index: usize) -> anyhow::Result<WavePacket> {
    let field = format!("input.packets[{index}]");
    match cfg {
        PacketConfig::DecayingExponential { gamma } => {
            WavePacket::decaying_exponential(*gamma).map_err(|e| anyhow!("{field}: {e}"))
        }
        PacketConfig::Gaussian { t0, sigma } => {
            WavePacket::gaussian(*t0, *sigma).map_err(|e| anyhow!("{field}: {e}"))
        }
        PacketConfig::Square { t0, t1 } => {
            WavePacket::square(*t0, *t1).map_err(|e| anyhow!("{field}: {e}"))
        }
        PacketConfig::Tabulated { samples } => {
            let times = samples.iter().map(|s| s[0]).collect();
            let values = samples.iter().map(|s| Complex64::new(s[1], s[2])).collect();
            WavePacket::tabulated(times, values).map_err(|e| anyhow!("{field}: {e}"))
        }
    }
}

fn build_generator(
    cfg: &InputConfig,
    grid: &UniformGrid,
    eps_w: f64,
) -> anyhow::Result<CmpGenerator> {
    match cfg.kind {
        InputKind::Vacuum => Ok(CmpGenerator::vacuum()),
        InputKind::SinglePhoton => {
            if cfg.packets.len() != 1 {
                bail!("input.packets: single_photon needs exactly one packet");
            }
            let packet = build_packet(&cfg.packets[0], 0)?;
            CmpGenerator::single_photon(&packet, grid, eps_w).map_err(|e| anyhow!("input: {e}"))
        }
        InputKind::NPhoton => {
            if cfg.packets.is_empty() {
                bail!("input.packets: n_photon needs at least one packet");
            }
            let packets = cfg
                .packets
                .iter()
                .enumerate()
                .map(|(i, p)| build_packet(p, i))
                .collect::<anyhow::Result<Vec<_>>>()?;
            CmpGenerator::n_photon(&packets, grid, eps_w).map_err(|e| anyhow!("input: {e}"))
        }
        InputKind::CustomGenerator => {
            let r = to_cmatrix(
                cfg.r.as_ref().ok_or_else(|| anyhow!("input.r: required for custom_generator"))?,
                "input.r",
            )?;
            let h_aux = match &cfg.h_aux {
                Some(spec) => to_cmatrix(spec, "input.h_aux")?,
                None => operators::zeros(r.nrows()),
            };
            let phi_spec = cfg
                .phi
                .as_ref()
                .ok_or_else(|| anyhow!("input.phi: required for custom_generator"))?;
            let phi =
                CVector::from_iterator(phi_spec.len(), phi_spec.iter().map(|e| Complex64::new(e[0], e[1])));
            CmpGenerator::custom(phi, OperatorFn::constant(r), OperatorFn::constant(h_aux))
                .map_err(|e| anyhow!("input: {e}"))
        }
    }
}

fn initial_system_vector(spec: Option<&InitialState>, dim: usize) -> anyhow::Result<CVector> {
    match spec {
        None => Ok(operators::basis_vector(dim, 0)),
        Some(InitialState::Named(name)) => match name.as_str() {
            "excited" => Ok(operators::basis_vector(dim, 0)),
            "ground" => Ok(operators::basis_vector(dim, dim - 1)),
            other => bail!("system.initial: unknown state '{other}'"),
        },
        Some(InitialState::Vector(entries)) => {
            if entries.len() != dim {
                bail!("system.initial: vector has {} entries, system dim is {dim}", entries.len());
            }
            let v = CVector::from_iterator(
                dim,
                entries.iter().map(|e| Complex64::new(e[0], e[1])),
            );
            let norm = v.norm();
            if (norm - 1.0).abs() > 1e-9 {
                bail!("system.initial: vector norm {norm} is not 1");
            }
            Ok(v)
        }
    }
}

fn named_observable(name: &str, dim: usize) -> anyhow::Result<CMatrix> {
    let two_level = |m: CMatrix| -> anyhow::Result<CMatrix> {
        if dim == 2 {
            Ok(m)
        } else {
            bail!("run.observables: '{name}' needs a two-level system (dim = {dim})")
        }
    };
    match name {
        "identity" => Ok(operators::identity(dim)),
        "excitation" => two_level(operators::sigma_plus() * operators::sigma_minus()),
        "ground" => two_level(operators::sigma_minus() * operators::sigma_plus()),
        "sigma_x" => two_level(operators::sigma_x()),
        "sigma_y" => two_level(operators::sigma_y()),
        "sigma_z" => two_level(operators::sigma_z()),
        _ => {
            if let Some(idx) = name.strip_prefix("population_") {
                let k: usize = idx
                    .parse()
                    .map_err(|_| anyhow!("run.observables: bad level index in '{name}'"))?;
                if k >= dim {
                    bail!("run.observables: '{name}' out of range for dim = {dim}");
                }
                return Ok(operators::projector(dim, k));
            }
            bail!("run.observables: unknown observable '{name}'")
        }
    }
}

fn build_observables(
    specs: &[ObservableConfig],
    dim: usize,
) -> anyhow::Result<Vec<(String, CMatrix)>> {
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        match spec {
            ObservableConfig::Named(name) => out.push((name.clone(), named_observable(name, dim)?)),
            ObservableConfig::Matrix { name, matrix } => {
                let m = to_cmatrix(matrix, &format!("run.observables['{name}']"))?;
                if m.nrows() != dim {
                    bail!("run.observables['{name}']: dimension {} but system has {dim}", m.nrows());
                }
                out.push((name.clone(), m));
            }
        }
    }
    Ok(out)
}
