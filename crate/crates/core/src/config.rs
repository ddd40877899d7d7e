//! Run configuration: a flat `key = value` text format (one assignment per
//! line, `#` comments) mapped onto the model, grid, time and output settings.
//!
//! Parsing is strict but total: every problem in the file is collected and
//! reported in one shot rather than failing at the first offence. Missing
//! keys fall back to documented defaults, unknown keys are errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::audit::AuditConfig;
use crate::error::{Error, Result};
use crate::grid::{GridSpacing, InitialCondition, VolumeGrid};
use crate::integrator::{TimeMethod, TimeStepperConfig};
use crate::kernels::{
    BreakupDistribution, CoalescenceProbability, CollisionKernel, FragmentTable,
};
use crate::operators::OperatorWorkspace;

/// Fully validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub kernel: CollisionKernel,
    pub probability: CoalescenceProbability,
    pub breakup: BreakupDistribution,
    pub grid_zmin: f64,
    pub grid_n: f64,
    pub grid_cells: usize,
    pub grid_spacing: GridSpacing,
    pub time: TimeStepperConfig,
    pub init: InitialCondition,
    pub out_dir: PathBuf,
    pub dump_tables: bool,
    pub allow_noncompliant: bool,
    pub audit: AuditConfig,
    pub converge_n: Vec<f64>,
    pub converge_steps: usize,
}

impl RunConfig {
    pub fn build_grid(&self) -> Result<Arc<VolumeGrid>> {
        VolumeGrid::build(self.grid_zmin, self.grid_n, self.grid_cells, self.grid_spacing)
    }

    pub fn build_workspace(&self, grid: Arc<VolumeGrid>) -> Result<OperatorWorkspace> {
        OperatorWorkspace::new(
            grid,
            self.kernel,
            self.probability,
            self.breakup.clone(),
        )
    }
}

/// Parse a configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::Config(vec![format!("cannot read config {}: {e}", path.display())])
    })?;
    parse_config_str(&text, path.parent().unwrap_or(Path::new(".")))
}

/// Parse configuration text; relative file references resolve against `base`.
pub fn parse_config_str(text: &str, base: &Path) -> Result<RunConfig> {
    let mut issues: Vec<String> = Vec::new();
    let raw = split_assignments(text, &mut issues);
    let mut keys = KeyReader::new(raw, &mut issues);

    // Grid block first: its window is the default kernel truncation.
    let grid_n = keys.real("grid.n", 50.0);
    let grid_zmin = keys.real("grid.zmin", 1e-4 * grid_n);
    let grid_cells = keys.integer("grid.cells", 128);
    let grid_spacing = keys.choice(
        "grid.spacing",
        GridSpacing::Geometric,
        &[("geometric", GridSpacing::Geometric), ("uniform", GridSpacing::Uniform)],
    );
    if !(grid_zmin > 0.0 && grid_zmin < grid_n) {
        keys.issue(format!(
            "grid bounds must satisfy 0 < grid.zmin < grid.n, got {grid_zmin} and {grid_n}"
        ));
    }
    if grid_cells < 2 {
        keys.issue(format!("grid.cells must be at least 2, got {grid_cells}"));
    }

    // Kernel block.
    let kernel_form = keys.string("kernel.form", "product_sum");
    let truncation = match keys.take("kernel.truncation_n") {
        Some(v) if v == "infinite" || v == "inf" => f64::INFINITY,
        Some(v) => match v.parse::<f64>() {
            Ok(x) if x > 0.0 => x,
            _ => {
                keys.issue(format!(
                    "kernel.truncation_n must be a positive number or \"infinite\", got {v:?}"
                ));
                grid_n
            }
        },
        None => grid_n,
    };
    let kernel = match kernel_form.as_str() {
        "product_sum" => {
            let k1 = keys.real("kernel.k1", 1.0);
            let alpha = keys.real("kernel.alpha", 0.3);
            let beta = keys.real("kernel.beta", 0.7);
            CollisionKernel::product_sum(k1, alpha, beta)
        }
        "constant" => {
            let c = keys.real("kernel.c", 1.0);
            CollisionKernel::constant(c)
        }
        other => {
            keys.issue(format!(
                "kernel.form must be product_sum or constant, got {other:?}"
            ));
            CollisionKernel::constant(1.0)
        }
    }
    .and_then(|k| k.with_truncation(truncation));
    let kernel = match kernel {
        Ok(k) => k,
        Err(e) => {
            keys.issue(e.to_string());
            CollisionKernel::constant(1.0).unwrap()
        }
    };

    // Coalescence probability block.
    let prob_form = keys.string("probability.form", "one");
    let probability = match prob_form.as_str() {
        "one" => Ok(CoalescenceProbability::One),
        "zero" => Ok(CoalescenceProbability::Zero),
        "constant" => CoalescenceProbability::constant(keys.real("probability.e0", 0.5)),
        "volume_ratio" => CoalescenceProbability::volume_ratio(
            keys.real("probability.e0", 1.0),
            keys.real("probability.exponent", 1.0),
        ),
        other => {
            keys.issue(format!(
                "probability.form must be one, zero, constant or volume_ratio, got {other:?}"
            ));
            Ok(CoalescenceProbability::One)
        }
    };
    let probability = match probability {
        Ok(p) => p,
        Err(e) => {
            keys.issue(e.to_string());
            CoalescenceProbability::One
        }
    };

    // Breakup block.
    let breakup_form = keys.string("breakup.form", "power_law");
    let breakup = match breakup_form.as_str() {
        "power_law" => BreakupDistribution::power_law(keys.real("breakup.nu", 0.0)),
        "custom" => match keys.take("breakup.table") {
            Some(rel) => load_fragment_table(&base.join(&rel))
                .map(BreakupDistribution::custom),
            None => Err(Error::Config(vec![
                "breakup.form = custom requires breakup.table = <csv path>".into(),
            ])),
        },
        other => {
            keys.issue(format!(
                "breakup.form must be power_law or custom, got {other:?}"
            ));
            BreakupDistribution::power_law(0.0)
        }
    };
    let breakup = match breakup {
        Ok(b) => b,
        Err(e) => {
            keys.issue(e.to_string());
            BreakupDistribution::power_law(0.0).unwrap()
        }
    };

    // Time block.
    let t_end = keys.real("time.t_end", 1.0);
    let dt_init = keys.real("time.dt_init", 1e-3);
    let time = TimeStepperConfig {
        method: keys.choice(
            "time.method",
            TimeMethod::Rk4,
            &[
                ("rk4", TimeMethod::Rk4),
                ("heun", TimeMethod::Heun),
                ("euler", TimeMethod::Euler),
            ],
        ),
        dt_init,
        dt_min: keys.real("time.dt_min", 1e-12),
        dt_max: keys.real("time.dt_max", (0.1 * t_end).max(dt_init)),
        rel_tol: keys.real("time.rel_tol", 1e-6),
        abs_tol: keys.real("time.abs_tol", 1e-12),
        t_end,
        snapshot_times: keys.real_list("time.snapshots", &[]),
    };
    for issue in time.validate() {
        keys.issue(issue);
    }

    // Initial condition block.
    let init_family = keys.string("init.family", "exponential");
    let init = match init_family.as_str() {
        "exponential" => InitialCondition::exponential(keys.real("init.scale", 1.0)),
        "uniform" => InitialCondition::uniform(keys.real("init.a", 0.0), keys.real("init.b", 1.0)),
        "monodisperse" => InitialCondition::monodisperse(
            keys.real("init.z0", 1.0),
            keys.real("init.amplitude", 1.0),
        ),
        "tabulated" => match keys.take("init.path") {
            Some(rel) => load_tabulated_density(&base.join(&rel)),
            None => Err(Error::Config(vec![
                "init.family = tabulated requires init.path = <csv path>".into(),
            ])),
        },
        other => {
            keys.issue(format!(
                "init.family must be exponential, uniform, monodisperse or tabulated, got {other:?}"
            ));
            InitialCondition::exponential(1.0)
        }
    };
    let init = match init {
        Ok(i) => i,
        Err(e) => {
            keys.issue(e.to_string());
            InitialCondition::exponential(1.0).unwrap()
        }
    };

    // Output and policy.
    let out_dir = PathBuf::from(keys.string("output.dir", "out"));
    let dump_tables = keys.boolean("output.dump_tables", false);
    let allow_noncompliant = keys.boolean("allow_noncompliant", false);

    let audit = AuditConfig {
        seed: keys.integer("audit.seed", 7) as u64,
        samples: keys.integer("audit.samples", 64),
        tolerance: keys.real("audit.tolerance", 1e-9),
        ..AuditConfig::default()
    };

    let converge_n = keys.real_list("converge.n_values", &[10.0, 20.0, 40.0, 80.0]);
    let converge_steps = keys.integer("converge.steps", 256);
    if converge_n.is_empty() || converge_n.windows(2).any(|w| w[1] < w[0]) {
        keys.issue("converge.n_values must be a nondecreasing, nonempty list".into());
    }

    // Compliance gate: noncompliant kernels only run when explicitly allowed.
    if !kernel.is_growth_compliant() && !allow_noncompliant {
        let (k1, alpha, beta) = kernel.product_sum_parameters();
        keys.issue(format!(
            "kernel is outside the compliant product-sum band 0 < alpha <= beta < 1 \
             (k1={k1}, alpha={alpha}, beta={beta}); set allow_noncompliant = true to run it anyway"
        ));
    }

    keys.finish()?;
    Ok(RunConfig {
        kernel,
        probability,
        breakup,
        grid_zmin,
        grid_n,
        grid_cells,
        grid_spacing,
        time,
        init,
        out_dir,
        dump_tables,
        allow_noncompliant,
        audit,
        converge_n,
        converge_steps,
    })
}

fn split_assignments(text: &str, issues: &mut Vec<String>) -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    for (lineno, raw_line) in text.lines().enumerate() {
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once('=') {
            Some((key, value)) => {
                map.insert(key.trim().to_string(), value.trim().to_string());
            }
            None => issues.push(format!(
                "line {}: expected `key = value`, got {raw_line:?}",
                lineno + 1
            )),
        }
    }
    map
}

/// Tracks which keys were consumed so leftovers can be reported as unknown.
struct KeyReader<'a> {
    map: BTreeMap<String, String>,
    issues: &'a mut Vec<String>,
}

impl<'a> KeyReader<'a> {
    fn new(map: BTreeMap<String, String>, issues: &'a mut Vec<String>) -> Self {
        Self { map, issues }
    }

    fn issue(&mut self, msg: String) {
        self.issues.push(msg);
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn string(&mut self, key: &str, default: &str) -> String {
        self.take(key).unwrap_or_else(|| default.to_string())
    }

    fn real(&mut self, key: &str, default: f64) -> f64 {
        match self.take(key) {
            Some(v) => match v.parse::<f64>() {
                Ok(x) => x,
                Err(_) => {
                    self.issue(format!("{key} must be a number, got {v:?}"));
                    default
                }
            },
            None => default,
        }
    }

    fn integer(&mut self, key: &str, default: usize) -> usize {
        match self.take(key) {
            Some(v) => match v.parse::<usize>() {
                Ok(x) => x,
                Err(_) => {
                    self.issue(format!("{key} must be a nonnegative integer, got {v:?}"));
                    default
                }
            },
            None => default,
        }
    }

    fn boolean(&mut self, key: &str, default: bool) -> bool {
        match self.take(key) {
            Some(v) => match v.as_str() {
                "true" | "yes" | "1" => true,
                "false" | "no" | "0" => false,
                _ => {
                    self.issue(format!("{key} must be true or false, got {v:?}"));
                    default
                }
            },
            None => default,
        }
    }

    fn real_list(&mut self, key: &str, default: &[f64]) -> Vec<f64> {
        match self.take(key) {
            Some(v) if v.is_empty() => Vec::new(),
            Some(v) => {
                let mut out = Vec::new();
                for part in v.split(',') {
                    match part.trim().parse::<f64>() {
                        Ok(x) => out.push(x),
                        Err(_) => {
                            self.issue(format!(
                                "{key} must be a comma-separated list of numbers, got {v:?}"
                            ));
                            return default.to_vec();
                        }
                    }
                }
                out
            }
            None => default.to_vec(),
        }
    }

    fn choice<T: Copy>(&mut self, key: &str, default: T, options: &[(&str, T)]) -> T {
        match self.take(key) {
            Some(v) => {
                for (name, value) in options {
                    if v == *name {
                        return *value;
                    }
                }
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                self.issue(format!("{key} must be one of {names:?}, got {v:?}"));
                default
            }
            None => default,
        }
    }

    fn finish(self) -> Result<()> {
        let mut issues = std::mem::take(self.issues);
        for key in self.map.keys() {
            issues.push(format!("unknown key: {key}"));
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(issues))
        }
    }
}

/// Read numeric CSV rows, skipping `#` comments and non-numeric header lines.
fn read_numeric_rows(path: &Path, want_cols: usize) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::Config(vec![format!("cannot read {}: {e}", path.display())])
    })?;
    let mut rows = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: Option<Vec<f64>> = fields.iter().map(|f| f.parse::<f64>().ok()).collect();
        match parsed {
            Some(values) if values.len() >= want_cols => rows.push(values),
            Some(_) => {
                return Err(Error::Config(vec![format!(
                    "{}: expected at least {want_cols} numeric columns, got {line:?}",
                    path.display()
                )]))
            }
            // Header line: skip.
            None => continue,
        }
    }
    if rows.is_empty() {
        return Err(Error::Config(vec![format!(
            "{}: no numeric data rows found",
            path.display()
        )]));
    }
    Ok(rows)
}

/// Load a tabulated density. Accepts `pivot,density` rows or snapshot rows
/// `time,pivot,density`; the last two columns are used either way.
pub fn load_tabulated_density(path: &Path) -> Result<InitialCondition> {
    let rows = read_numeric_rows(path, 2)?;
    let mut pivots = Vec::with_capacity(rows.len());
    let mut densities = Vec::with_capacity(rows.len());
    for row in rows {
        let cols = row.len();
        pivots.push(row[cols - 2]);
        densities.push(row[cols - 1]);
    }
    InitialCondition::tabulated(pivots, densities)
}

/// Load a fragment table from `u,q` CSV rows.
pub fn load_fragment_table(path: &Path) -> Result<FragmentTable> {
    let rows = read_numeric_rows(path, 2)?;
    let mut knots = Vec::with_capacity(rows.len());
    let mut values = Vec::with_capacity(rows.len());
    for row in rows {
        knots.push(row[0]);
        values.push(row[1]);
    }
    FragmentTable::new(knots, values)
}
