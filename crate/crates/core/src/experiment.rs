//! Config-driven experiment runner.
//!
//! A run reads one TOML document, builds the requested model at every grid
//! point, evaluates exact oracles, draws seeded replicates in parallel and
//! renders the requested tables as CSV together with a JSON manifest. The
//! config grammar is documented in the repository README.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bernoulli::{chen_stein_terms, exact_distribution, simulate_sum, BernoulliScheme, DEFAULT_COMPONENT_BITS};
use crate::error::{Error, Result};
use crate::markov::{choose_target_sets, ChainSpec, FiniteMarkovChain, MarkovArrival, MarkovTarget, TargetChoice};
use crate::paths::Scratch;
use crate::poisson::{binomial_sigma, clopper_pearson, empirical_distribution, THREE_SIGMA_ALPHA, theorem21_bound, tv_distance, CountDistribution, PoissonLaw};
use crate::schedule::{subshift_a, subshift_l, GapParams, QSchedule, ScheduleFamily, DEFAULT_ENUMERATION_BUDGET};
use crate::seeding::{derive_seed, stream_rng, tags};
use crate::sevastyanov::{
    bernoulli_rare_envelope, check_conditions, CheckSettings, CoefficientOracle, GridPoint, RareParams, Tolerances,
};
use crate::subshift::{
    gibbs_constant, psi_mixing_check, sample_omega_star, CylinderTarget, MarkovGibbsMeasure, OmegaStar, Refinement,
    SubshiftArrival, SubshiftSFT,
};
use crate::table::{num, opt, Table};

/// Table names accepted in `outputs`, with a one-line description.
pub const TABLES: [(&str, &str); 6] = [
    ("pmf_vs_poisson", "exact and empirical pmf of S_n next to Poisson(lambda) and Poisson(lambda_n)"),
    ("tv_and_bounds", "total variation distance to Poisson, with the explicit bound for Bernoulli arrays"),
    ("chen_stein_terms", "I1, I2, I3 and their envelopes (bernoulli only)"),
    ("sevastyanov_report", "condition values, envelopes and margins per n, then the verdict"),
    ("mixing_certificates", "Doeblin, mixing, Gibbs and psi-mixing constants (markov, subshift)"),
    ("hitting_time_survival", "survival of the scaled hitting time against exp(-t) (subshift only)"),
];

const REQUIRED_KEYS: [&str; 6] = ["seed", "lambda", "n_grid", "outputs", "schedule", "model"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub lambda: f64,
    pub n_grid: Vec<u64>,
    #[serde(default)]
    pub replicates: u64,
    pub outputs: Vec<String>,
    /// Evaluate the exact law of `S_n` at every grid point.
    #[serde(default = "yes")]
    pub exact: bool,
    pub schedule: ScheduleSpec,
    pub model: ModelSpec,
    #[serde(default)]
    pub sevastyanov: SevastyanovSpec,
    #[serde(default)]
    pub budgets: Budgets,
    #[serde(default)]
    pub hitting: HittingSpec,
    #[serde(default)]
    pub certificates: CertificateSpec,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub ell: usize,
    #[serde(flatten)]
    pub family: ScheduleFamily,
    #[serde(default)]
    pub gap: Option<GapParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Bernoulli,
    Markov {
        chain: ChainSpec,
        /// Initial law; the invariant measure when absent.
        #[serde(default)]
        initial: Option<Vec<f64>>,
        /// Fixed target states. When absent, target word sets are chosen per
        /// `n` so that `n mu(G)^ell` is within `tolerance` of `lambda`.
        #[serde(default)]
        target_states: Option<Vec<u8>>,
        #[serde(default = "default_tolerance")]
        tolerance: f64,
        #[serde(default = "default_max_lift")]
        max_lift: usize,
    },
    Subshift {
        shift: ShiftSpec,
        /// Transition matrix of the Markov measure; the maximal-entropy
        /// measure when absent.
        #[serde(default)]
        measure: Option<Vec<Vec<f64>>>,
        omega_star: OmegaStar,
        #[serde(default)]
        s: f64,
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default)]
        refinement: Option<Refinement>,
    },
}

fn default_tolerance() -> f64 {
    0.25
}

fn default_max_lift() -> usize {
    12
}

fn default_eps() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShiftSpec {
    Full { iota: usize },
    GoldenMean,
    Matrix { adjacency: Vec<Vec<u8>> },
}

impl ShiftSpec {
    pub fn build(&self) -> Result<SubshiftSFT> {
        match self {
            ShiftSpec::Full { iota } => {
                if *iota < 2 {
                    return Err(Error::validation("full shift needs iota >= 2"));
                }
                Ok(SubshiftSFT::full_shift(*iota))
            }
            ShiftSpec::GoldenMean => Ok(SubshiftSFT::golden_mean()),
            ShiftSpec::Matrix { adjacency } => SubshiftSFT::new(adjacency.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SevastyanovSpec {
    pub r: usize,
    /// Cluster threshold; the model's own choice when absent.
    pub threshold: Option<u64>,
    /// Smallest-index cutoff; the model's own choice when absent.
    pub cutoff: Option<u64>,
    pub tolerances: Tolerances,
    pub sample_size: u64,
}

impl Default for SevastyanovSpec {
    fn default() -> Self {
        Self {
            r: 2,
            threshold: None,
            cutoff: None,
            tolerances: Tolerances::default(),
            sample_size: 20_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budgets {
    /// Largest union-find component enumerated by the Bernoulli oracle, in bits.
    pub component_bits: u32,
    /// Largest number of tuples enumerated by the condition checker.
    pub tuples: u64,
    /// Largest number of admissible paths walked by the exact-law search.
    pub exact_paths: u64,
    /// Longest simulated symbol path.
    pub path_len: u64,
    /// Draws allowed when sampling a reference word.
    pub omega_tries: u32,
}

impl Default for Budgets {
    fn default() -> Self {
        Self {
            component_bits: DEFAULT_COMPONENT_BITS,
            tuples: DEFAULT_ENUMERATION_BUDGET as u64,
            exact_paths: 10_000_000,
            path_len: 1 << 30,
            omega_tries: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HittingSpec {
    /// Levels `t` at which `P(P(B_n)^ell tau > t)` is reported.
    pub levels: Vec<f64>,
    /// Scaled horizon beyond which hitting times are censored.
    pub cap: f64,
}

impl Default for HittingSpec {
    fn default() -> Self {
        Self {
            levels: vec![0.5, 1.0, 2.0],
            cap: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertificateSpec {
    pub mixing_horizon: usize,
    pub gibbs_max_len: usize,
    pub psi_max_len: usize,
    pub psi_max_gap: u64,
}

impl Default for CertificateSpec {
    fn default() -> Self {
        Self {
            mixing_horizon: 60,
            gibbs_max_len: 10,
            psi_max_len: 4,
            psi_max_gap: 30,
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML, reporting every missing required key at once.
    pub fn parse(text: &str) -> Result<Self> {
        let value: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let missing: Vec<String> = REQUIRED_KEYS
            .iter()
            .filter(|k| !value.contains_key(**k))
            .map(|k| format!("missing required key `{k}`"))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Config(missing.join("\n")));
        }
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    fn model_name(&self) -> &'static str {
        match self.model {
            ModelSpec::Bernoulli => "bernoulli",
            ModelSpec::Markov { .. } => "markov",
            ModelSpec::Subshift { .. } => "subshift",
        }
    }

    /// Checks that need no model construction.
    fn static_faults(&self) -> Vec<String> {
        let mut f = Vec::new();
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            f.push(format!("lambda must be a positive real, got {}", self.lambda));
        }
        if self.n_grid.is_empty() {
            f.push("n_grid must not be empty".into());
        }
        if self.n_grid.contains(&0) {
            f.push("n_grid entries must be >= 1".into());
        }
        if self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            f.push("n_grid must be strictly increasing".into());
        }
        if self.outputs.is_empty() {
            f.push("outputs must name at least one table".into());
        }
        let model = self.model_name();
        for name in &self.outputs {
            if !TABLES.iter().any(|(t, _)| t == name) {
                f.push(format!("unknown table `{name}` (see list-tables)"));
                continue;
            }
            let ok = match name.as_str() {
                "chen_stein_terms" => model == "bernoulli",
                "mixing_certificates" => model != "bernoulli",
                "hitting_time_survival" => model == "subshift",
                _ => true,
            };
            if !ok {
                f.push(format!("table `{name}` is not available for the {model} model"));
            }
        }
        if (self.wants("pmf_vs_poisson") || self.wants("tv_and_bounds")) && !self.exact && self.replicates == 0 {
            f.push("pmf_vs_poisson and tv_and_bounds need exact = true or replicates > 0".into());
        }
        if self.wants("hitting_time_survival") {
            if self.replicates == 0 {
                f.push("hitting_time_survival needs replicates > 0".into());
            }
            if !(self.hitting.cap > 0.0) {
                f.push("hitting.cap must be positive".into());
            }
            if self.hitting.levels.iter().any(|t| !(*t >= 0.0) || *t > self.hitting.cap) {
                f.push("hitting.levels must lie in [0, hitting.cap]".into());
            }
        }
        let b = &self.budgets;
        for (name, v) in [
            ("component_bits", b.component_bits as u64),
            ("tuples", b.tuples),
            ("exact_paths", b.exact_paths),
            ("path_len", b.path_len),
            ("omega_tries", b.omega_tries as u64),
        ] {
            if v == 0 {
                f.push(format!("budgets.{name} must be positive"));
            }
        }
        if b.component_bits > 40 {
            f.push("budgets.component_bits must be <= 40".into());
        }
        if self.wants("sevastyanov_report") {
            if self.sevastyanov.r < 1 {
                f.push("sevastyanov.r must be >= 1".into());
            }
            if self.sevastyanov.sample_size == 0 {
                f.push("sevastyanov.sample_size must be positive".into());
            }
        }
        if matches!(self.model, ModelSpec::Subshift { .. }) && self.wants("sevastyanov_report") {
            let gap = self.gap_params();
            if self.sevastyanov.cutoff.is_none() && gap.is_none() {
                f.push("subshift cutoff L(n) needs schedule.gap or an arithmetic_gap family".into());
            }
        }
        f
    }

    fn wants(&self, table: &str) -> bool {
        self.outputs.iter().any(|o| o == table)
    }

    fn wants_exact_tables(&self) -> bool {
        self.exact && (self.wants("pmf_vs_poisson") || self.wants("tv_and_bounds"))
    }

    fn wants_simulation(&self) -> bool {
        self.replicates > 0 && (self.wants("pmf_vs_poisson") || self.wants("tv_and_bounds"))
    }

    fn gap_params(&self) -> Option<GapParams> {
        self.schedule.gap.or(match self.schedule.family {
            ScheduleFamily::ArithmeticGap { c, gamma } => Some(GapParams { c, gamma }),
            _ => None,
        })
    }
}

/// One model instance per grid point.
enum Instance {
    Bernoulli(BernoulliScheme),
    Markov { arrival: MarkovArrival, choice: TargetChoice },
    Subshift { arrival: SubshiftArrival, target: CylinderTarget },
}

impl Instance {
    fn oracle(&self) -> &dyn CoefficientOracle {
        match self {
            Instance::Bernoulli(s) => s,
            Instance::Markov { arrival, .. } => arrival,
            Instance::Subshift { arrival, .. } => arrival,
        }
    }

    fn terms(&self) -> u64 {
        self.oracle().terms()
    }

    /// Per-coordinate success probability.
    fn p(&self) -> f64 {
        match self {
            Instance::Bernoulli(s) => s.p_n(),
            Instance::Markov { choice, .. } => choice.mu_mass,
            Instance::Subshift { target, .. } => target.prob,
        }
    }

    fn lambda_n(&self) -> f64 {
        match self {
            Instance::Bernoulli(s) => s.lambda_n(),
            Instance::Markov { choice, .. } => choice.lambda_n,
            Instance::Subshift { arrival, .. } => arrival.realized_lambda(),
        }
    }

    fn exact_law(&self, budgets: &Budgets) -> Result<CountDistribution> {
        match self {
            Instance::Bernoulli(s) => exact_distribution(s, budgets.component_bits),
            Instance::Markov { arrival, .. } => arrival.exact_law(budgets.exact_paths as u128),
            Instance::Subshift { arrival, .. } => arrival.exact_law(budgets.exact_paths as u128),
        }
    }

    fn tag(&self) -> u64 {
        match self {
            Instance::Bernoulli(_) => tags::BERNOULLI_SUM,
            Instance::Markov { .. } => tags::MARKOV_SUM,
            Instance::Subshift { .. } => tags::SUBSHIFT_SUM,
        }
    }

    fn sample(&self, scratch: &mut Scratch, rng: &mut rand_chacha::ChaCha8Rng) -> u64 {
        match self {
            Instance::Bernoulli(s) => simulate_sum(s, rng),
            Instance::Markov { arrival, .. } => arrival.sample(scratch, rng),
            Instance::Subshift { arrival, .. } => arrival.sample_sum(scratch, rng),
        }
    }
}

enum ModelContext {
    Bernoulli,
    Markov(FiniteMarkovChain),
    Subshift(MarkovGibbsMeasure),
}

/// A validated config with its model built at every grid point.
pub struct Prepared {
    config: ExperimentConfig,
    config_hash: String,
    schedule: QSchedule,
    context: ModelContext,
    instances: Vec<Instance>,
}

/// Parses and validates a config, returning every fault found.
pub fn validate(text: &str) -> Result<Prepared> {
    let config = ExperimentConfig::parse(text)?;
    let mut faults = config.static_faults();
    let schedule = QSchedule::new(config.schedule.ell, config.schedule.family.clone(), config.schedule.gap);
    let schedule = match schedule {
        Ok(s) => Some(s),
        Err(e) => {
            faults.push(format!("schedule: {e}"));
            None
        }
    };
    let mut prepared = None;
    if let Some(schedule) = schedule {
        if config.lambda > 0.0 && !config.n_grid.is_empty() && !config.n_grid.contains(&0) {
            match build(&config, &schedule) {
                Ok((context, instances, mut more)) => {
                    faults.append(&mut more);
                    prepared = Some((schedule, context, instances));
                }
                Err(e) => faults.push(e.to_string()),
            }
        }
    }
    if !faults.is_empty() {
        return Err(Error::Config(faults.join("\n")));
    }
    let (schedule, context, instances) = prepared.expect("no faults implies a built model");
    Ok(Prepared {
        config_hash: hex::encode(Sha256::digest(text.as_bytes())),
        config,
        schedule,
        context,
        instances,
    })
}

type Built = (ModelContext, Vec<Instance>, Vec<String>);

fn build(config: &ExperimentConfig, schedule: &QSchedule) -> Result<Built> {
    let mut faults = Vec::new();
    let mut instances = Vec::new();
    let lambda = config.lambda;
    let context = match &config.model {
        ModelSpec::Bernoulli => {
            for &n in &config.n_grid {
                match BernoulliScheme::from_lambda(schedule.clone(), n, lambda) {
                    Ok(s) => instances.push(Instance::Bernoulli(s)),
                    Err(e) => faults.push(format!("n={n}: {e}")),
                }
            }
            ModelContext::Bernoulli
        }
        ModelSpec::Markov {
            chain,
            initial,
            target_states,
            tolerance,
            max_lift,
        } => {
            let chain = FiniteMarkovChain::from_spec(chain, initial.clone())?;
            let choices: Vec<TargetChoice> = match target_states {
                Some(states) => {
                    if states.iter().any(|s| *s as usize >= chain.states()) {
                        return Err(Error::validation("target_states names a state outside the chain"));
                    }
                    let target = MarkovTarget::states(states);
                    let mass = target.mu_mass(&chain);
                    config
                        .n_grid
                        .iter()
                        .map(|&n| TargetChoice {
                            n,
                            target: target.clone(),
                            mu_mass: mass,
                            lambda_n: n as f64 * mass.powi(schedule.ell() as i32),
                        })
                        .collect()
                }
                None => {
                    choose_target_sets(&chain, schedule.ell(), lambda, &config.n_grid, *tolerance, *max_lift)?.entries
                }
            };
            for choice in choices {
                match MarkovArrival::new(&chain, schedule, &choice.target, choice.n) {
                    Ok(arrival) => instances.push(Instance::Markov { arrival, choice }),
                    Err(e) => faults.push(format!("n={}: {e}", choice.n)),
                }
            }
            ModelContext::Markov(chain)
        }
        ModelSpec::Subshift {
            shift,
            measure,
            omega_star,
            s,
            eps,
            refinement,
        } => {
            let sft = shift.build()?;
            let measure = match measure {
                Some(q) => MarkovGibbsMeasure::new(sft, q.clone())?,
                None => MarkovGibbsMeasure::uniform(sft)?,
            };
            let block_len = |n: u64| n as usize + (s * (n as f64).ln()).floor() as usize;
            let longest = config.n_grid.iter().map(|&n| block_len(n)).max().unwrap_or(0);
            let word = match omega_star {
                OmegaStar::Word(w) => w.clone(),
                OmegaStar::Sample { seed } => {
                    let checks: Vec<(u64, u64)> = config.n_grid.iter().map(|&n| (n, subshift_a(n, *eps))).collect();
                    sample_omega_star(
                        &measure,
                        longest,
                        &checks,
                        derive_seed(*seed, tags::OMEGA_STAR, 0),
                        config.budgets.omega_tries,
                    )?
                }
            };
            for &n in &config.n_grid {
                let built = CylinderTarget::new(&measure, &word, n, *s, *eps, *refinement).and_then(|target| {
                    let arrival =
                        SubshiftArrival::new(&measure, schedule, &target, lambda, config.budgets.path_len)?;
                    Ok(Instance::Subshift { arrival, target })
                });
                match built {
                    Ok(i) => instances.push(i),
                    Err(e) => faults.push(format!("n={n}: {e}")),
                }
            }
            ModelContext::Subshift(measure)
        }
    };
    Ok((context, instances, faults))
}

/// Rendered tables keyed by name, and the manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutput {
    pub tables: BTreeMap<String, String>,
    pub manifest: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    config_hash: &'a str,
    seed: u64,
    tables: Vec<ManifestTable>,
    versions: BTreeMap<&'static str, &'static str>,
}

#[derive(Serialize)]
struct ManifestTable {
    name: String,
    file: String,
    rows: usize,
    sha256: String,
}

impl Prepared {
    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn run(&self) -> Result<RunOutput> {
        let cfg = &self.config;
        let exact: Vec<Option<CountDistribution>> = if cfg.wants_exact_tables() {
            self.instances
                .iter()
                .map(|i| i.exact_law(&cfg.budgets).map(Some))
                .collect::<Result<_>>()?
        } else {
            vec![None; self.instances.len()]
        };
        let empirical: Vec<Option<CountDistribution>> = if cfg.wants_simulation() {
            self.instances
                .iter()
                .enumerate()
                .map(|(g, inst)| {
                    let samples = self.sample_counts(g, inst);
                    empirical_distribution(&samples).map(Some)
                })
                .collect::<Result<_>>()?
        } else {
            vec![None; self.instances.len()]
        };
        let mut tables = BTreeMap::new();
        for name in &cfg.outputs {
            let table = match name.as_str() {
                "pmf_vs_poisson" => self.pmf_table(&exact, &empirical)?,
                "tv_and_bounds" => self.tv_table(&exact, &empirical)?,
                "chen_stein_terms" => self.chen_stein_table(),
                "sevastyanov_report" => self.sevastyanov_table()?,
                "mixing_certificates" => self.certificate_table()?,
                "hitting_time_survival" => self.hitting_table()?,
                other => return Err(Error::Config(format!("unknown table `{other}`"))),
            };
            tables.insert(name.clone(), table);
        }
        let mut rendered = BTreeMap::new();
        let mut listed = Vec::new();
        for (name, table) in &tables {
            let csv = table.to_csv()?;
            listed.push(ManifestTable {
                name: name.clone(),
                file: format!("{name}.csv"),
                rows: table.rows.len(),
                sha256: hex::encode(Sha256::digest(csv.as_bytes())),
            });
            rendered.insert(name.clone(), csv);
        }
        let manifest = Manifest {
            config_hash: &self.config_hash,
            seed: cfg.seed,
            tables: listed,
            versions: BTreeMap::from([("ncpoisson", env!("CARGO_PKG_VERSION")), ("manifest_format", "1")]),
        };
        let manifest = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(e.to_string()))? + "\n";
        Ok(RunOutput {
            tables: rendered,
            manifest,
        })
    }

    fn sample_counts(&self, grid_index: usize, inst: &Instance) -> Vec<u64> {
        let master = derive_seed(self.config.seed, inst.tag(), grid_index as u64);
        (0..self.config.replicates)
            .into_par_iter()
            .map_init(Scratch::default, |scratch, i| {
                let mut rng = stream_rng(master, inst.tag(), i);
                inst.sample(scratch, &mut rng)
            })
            .collect()
    }

    fn pmf_table(&self, exact: &[Option<CountDistribution>], empirical: &[Option<CountDistribution>]) -> Result<Table> {
        let mut t = Table::new(&[
            "n",
            "k",
            "exact",
            "empirical",
            "sigma",
            "z",
            "ci_lo",
            "ci_hi",
            "poisson_lambda",
            "poisson_lambda_n",
        ]);
        let reps = self.config.replicates;
        for ((inst, ex), em) in self.instances.iter().zip(exact).zip(empirical) {
            let n = self.grid_n(inst);
            let lam = PoissonLaw::new(self.config.lambda)?;
            let lam_n = PoissonLaw::new(inst.lambda_n()).ok();
            let mut kmax = lam.truncation_point();
            if let Some(e) = em {
                kmax = kmax.max(e.max_count());
            }
            if let Some(x) = ex {
                kmax = kmax.min(x.max_count().max(em.as_ref().map_or(0, |e| e.max_count())));
            }
            for k in 0..=kmax {
                let x = ex.as_ref().map(|d| d.prob(k));
                let e = em.as_ref().map(|d| d.prob(k));
                let (sigma, z) = match (x, e) {
                    (Some(x), Some(e)) => {
                        let s = binomial_sigma(x, reps);
                        let z = if s > 0.0 {
                            (e - x).abs() / s
                        } else if e == x {
                            0.0
                        } else {
                            f64::INFINITY
                        };
                        (Some(s), Some(z))
                    }
                    _ => (None, None),
                };
                let ci = e.map(|e| clopper_pearson((e * reps as f64).round() as u64, reps, THREE_SIGMA_ALPHA));
                t.push(vec![
                    n.to_string(),
                    k.to_string(),
                    opt(x),
                    opt(e),
                    opt(sigma),
                    opt(z),
                    opt(ci.map(|c| c.0)),
                    opt(ci.map(|c| c.1)),
                    num(crate::poisson::poisson_pmf(&lam, k)),
                    opt(lam_n.as_ref().map(|l| crate::poisson::poisson_pmf(l, k))),
                ]);
            }
        }
        Ok(t)
    }

    fn tv_table(&self, exact: &[Option<CountDistribution>], empirical: &[Option<CountDistribution>]) -> Result<Table> {
        let mut t = Table::new(&[
            "n",
            "terms",
            "p",
            "lambda_n",
            "tv_exact_lambda",
            "tv_exact_lambda_n",
            "tv_empirical_lambda_n",
            "bound",
            "margin",
        ]);
        let lam = PoissonLaw::new(self.config.lambda)?.to_distribution();
        for ((inst, ex), em) in self.instances.iter().zip(exact).zip(empirical) {
            let lam_n = PoissonLaw::new(inst.lambda_n())?.to_distribution();
            let tv_l = ex.as_ref().map(|d| tv_distance(d, &lam));
            let tv_ln = ex.as_ref().map(|d| tv_distance(d, &lam_n));
            let tv_e = em.as_ref().map(|d| tv_distance(d, &lam_n));
            let bound = match inst {
                Instance::Bernoulli(s) => Some(theorem21_bound(s.ell(), s.p_n(), self.config.lambda, s.lambda_n())),
                _ => None,
            };
            let margin = bound.zip(tv_l).map(|(b, tv)| b - tv);
            t.push(vec![
                self.grid_n(inst).to_string(),
                inst.terms().to_string(),
                num(inst.p()),
                num(inst.lambda_n()),
                opt(tv_l),
                opt(tv_ln),
                opt(tv_e),
                opt(bound),
                opt(margin),
            ]);
        }
        Ok(t)
    }

    fn chen_stein_table(&self) -> Table {
        let mut t = Table::new(&["n", "i1", "i1_identity", "i2", "i2_envelope", "i3", "i3_envelope", "bound"]);
        for inst in &self.instances {
            if let Instance::Bernoulli(s) = inst {
                let c = chen_stein_terms(s);
                let identity = s.n() as f64 * s.p_n().powi(2 * s.ell() as i32);
                t.push(vec![
                    s.n().to_string(),
                    num(c.i1),
                    num(identity),
                    num(c.i2),
                    num(c.i2_envelope),
                    num(c.i3),
                    num(c.i3_envelope),
                    num(c.bound),
                ]);
            }
        }
        t
    }

    /// Rare-set parameters of grid point `inst`, with config overrides.
    fn rare_params(&self, inst: &Instance) -> Result<RareParams> {
        let spec = &self.config.sevastyanov;
        let n = self.grid_n(inst);
        let (threshold, cutoff) = match inst {
            Instance::Bernoulli(_) => (0, 0),
            Instance::Markov { choice, .. } => {
                let a = self.schedule.markov_a(n)?.floor().max(0.0) as u64;
                (a + choice.target.lift as u64 - 1, a)
            }
            Instance::Subshift { target, .. } => {
                let threshold = target.block_len as u64 + target.a_n;
                let cutoff = match (spec.cutoff, self.config.gap_params()) {
                    (Some(c), _) => c,
                    (None, Some(gap)) => subshift_l(n, target.a_n, gap),
                    (None, None) => return Err(Error::validation("subshift cutoff needs gap parameters")),
                };
                (threshold, cutoff)
            }
        };
        Ok(RareParams {
            threshold: spec.threshold.unwrap_or(threshold),
            cutoff: spec.cutoff.unwrap_or(cutoff),
        })
    }

    fn sevastyanov_table(&self) -> Result<Table> {
        let spec = &self.config.sevastyanov;
        let mut points = Vec::with_capacity(self.instances.len());
        for inst in &self.instances {
            let rare_envelope = match inst {
                Instance::Bernoulli(s) => Some(bernoulli_rare_envelope(s.p_n(), s.lambda_n(), spec.r, s.ell())),
                _ => None,
            };
            points.push(GridPoint {
                n: self.grid_n(inst),
                oracle: inst.oracle(),
                schedule: &self.schedule,
                rare: self.rare_params(inst)?,
                rare_envelope,
            });
        }
        let settings = CheckSettings {
            r: spec.r,
            lambda: self.config.lambda,
            budget: self.config.budgets.tuples as u128,
            sample_size: spec.sample_size,
            seed: self.config.seed,
        };
        Ok(check_conditions(&points, &settings)?.table(&spec.tolerances))
    }

    fn certificate_table(&self) -> Result<Table> {
        let mut t = Table::new(&["quantity", "value"]);
        let mut row = |q: &str, v: f64| t.push(vec![q.to_string(), num(v)]);
        let c = &self.config.certificates;
        match &self.context {
            ModelContext::Bernoulli => {}
            ModelContext::Markov(chain) => {
                let cert = chain.certificate();
                let fit = chain.mixing_rate(c.mixing_horizon);
                row("doeblin_n0", cert.n0 as f64);
                row("doeblin_c", cert.c);
                row("mixing_c1", fit.c1);
                row("mixing_beta", fit.beta);
                row("spectral_beta", -chain.second_eigenvalue_modulus().ln());
                row("eventually_decreasing", if fit.eventually_decreasing { 1.0 } else { 0.0 });
            }
            ModelContext::Subshift(measure) => {
                let gibbs = gibbs_constant(measure, c.gibbs_max_len)?;
                let psi = psi_mixing_check(measure, c.psi_max_len, c.psi_max_gap)?;
                row("entropy", measure.entropy());
                row("gibbs_c", gibbs.c);
                row("psi_c", psi.c);
                row("psi_beta", psi.beta);
                row("spectral_beta", psi.spectral_beta);
                row("psi_triples", psi.triples as f64);
                row("psi_violations", psi.violations as f64);
            }
        }
        Ok(t)
    }

    fn hitting_table(&self) -> Result<Table> {
        let cfg = &self.config;
        let mut t = Table::new(&["n", "t", "survival", "sigma", "z", "exp_neg_t", "censored"]);
        let ModelContext::Subshift(measure) = &self.context else {
            return Ok(t);
        };
        for (g, inst) in self.instances.iter().enumerate() {
            let Instance::Subshift { target, .. } = inst else { continue };
            let arrival = SubshiftArrival::new(measure, &self.schedule, target, cfg.hitting.cap, cfg.budgets.path_len)?;
            let master = derive_seed(cfg.seed, tags::HITTING_TIME, g as u64);
            let draws: Vec<(f64, bool)> = (0..cfg.replicates)
                .into_par_iter()
                .map_init(Scratch::default, |scratch, i| {
                    let mut rng = stream_rng(master, tags::HITTING_TIME, i);
                    let h = arrival.sample_hitting(scratch, &mut rng);
                    (h.scaled, h.censored)
                })
                .collect();
            let reps = draws.len() as f64;
            let censored = draws.iter().filter(|d| d.1).count();
            for &level in &cfg.hitting.levels {
                let survival = draws.iter().filter(|d| d.0 > level).count() as f64 / reps;
                let reference = (-level).exp();
                let sigma = binomial_sigma(reference, cfg.replicates);
                t.push(vec![
                    target.n.to_string(),
                    num(level),
                    num(survival),
                    num(sigma),
                    num((survival - reference).abs() / sigma),
                    num(reference),
                    censored.to_string(),
                ]);
            }
        }
        Ok(t)
    }

    fn grid_n(&self, inst: &Instance) -> u64 {
        match inst {
            Instance::Bernoulli(s) => s.n(),
            Instance::Markov { choice, .. } => choice.n,
            Instance::Subshift { target, .. } => target.n,
        }
    }
}

/// Validates and runs the config text.
pub fn run(text: &str) -> Result<RunOutput> {
    validate(text)?.run()
}

/// Writes `<name>.csv` for every table and `manifest.json` into `dir`.
pub fn write_outputs(output: &RunOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, csv) in &output.tables {
        std::fs::write(dir.join(format!("{name}.csv")), csv)?;
    }
    std::fs::write(dir.join("manifest.json"), &output.manifest)?;
    Ok(())
}
