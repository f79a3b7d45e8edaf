//! Experiment configuration: JSON documents merged over preset defaults.

use cavity_spdc::pdh::PdhParams;
use cavity_spdc::rates::RateParams;
use cavity_spdc::spectral::{CavityParams, EtalonParams, Preset};
use cavity_spdc::temporal::TemporalParams;
use cavity_spdc::ParamIssue;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Lock parameters; the cavity itself comes from the `cavity` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LockConfig {
    pub modulation_frequency_hz: f64,
    pub mirror_reflectivities: [f64; 2],
    pub round_trip_loss: f64,
    pub v_resonance_offset_hz: f64,
}

impl Default for LockConfig {
    fn default() -> Self {
        let p = PdhParams::default();
        Self {
            modulation_frequency_hz: p.modulation_frequency,
            mirror_reflectivities: p.mirror_reflectivities,
            round_trip_loss: p.round_trip_loss,
            v_resonance_offset_hz: p.v_resonance_offset,
        }
    }
}

/// Sizes of the simulated data sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    /// Relative H/V phase at the PBS overlap, radians.
    pub pbs_phase_rad: f64,
    /// Expected coincidences per CHSH analyzer pair.
    pub chsh_counts_per_pair: f64,
    pub tomography_counts_per_setting: f64,
    pub mle_max_iterations: usize,
    pub mle_tolerance: f64,
    pub g2_events: u64,
    pub visibility_v0: f64,
    pub visibility_delays_m: Vec<f64>,
    /// Standard deviation of the visibility noise relative to the noiseless value.
    pub visibility_relative_noise: f64,
    pub rate_powers_mw: Vec<f64>,
    pub rate_relative_noise: f64,
    pub pdh_span_hz: f64,
    pub pdh_points: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            pbs_phase_rad: 0.0,
            chsh_counts_per_pair: 1e4,
            tomography_counts_per_setting: 1e4,
            mle_max_iterations: 10_000,
            mle_tolerance: 1e-10,
            g2_events: 100_000,
            visibility_v0: 0.95,
            visibility_delays_m: (0..=24).map(|i| 2.5 * f64::from(i)).collect(),
            visibility_relative_noise: 0.02,
            rate_powers_mw: (1..=9).map(|i| 3.0 * f64::from(i)).collect(),
            rate_relative_noise: 0.05,
            pdh_span_hz: 150e6,
            pdh_points: 3001,
        }
    }
}

impl SimulationConfig {
    fn issues(&self) -> Vec<ParamIssue> {
        let mut issues = Vec::new();
        let mut positive = |field: &str, v: f64| {
            if !(v > 0.0 && v.is_finite()) {
                issues.push(ParamIssue::new(field, "must be positive and finite"));
            }
        };
        positive("chsh_counts_per_pair", self.chsh_counts_per_pair);
        positive("tomography_counts_per_setting", self.tomography_counts_per_setting);
        positive("mle_tolerance", self.mle_tolerance);
        positive("pdh_span_hz", self.pdh_span_hz);
        positive("visibility_v0", self.visibility_v0);
        if !self.pbs_phase_rad.is_finite() {
            issues.push(ParamIssue::new("pbs_phase_rad", "must be finite"));
        }
        if self.mle_max_iterations == 0 {
            issues.push(ParamIssue::new("mle_max_iterations", "must be at least 1"));
        }
        if self.g2_events == 0 {
            issues.push(ParamIssue::new("g2_events", "must be at least 1"));
        }
        if self.visibility_delays_m.len() < 3 || self.visibility_delays_m.iter().any(|d| !(*d >= 0.0 && d.is_finite()))
        {
            issues.push(ParamIssue::new(
                "visibility_delays_m",
                "needs at least 3 nonnegative finite delays",
            ));
        }
        if !(self.visibility_relative_noise >= 0.0 && self.visibility_relative_noise.is_finite()) {
            issues.push(ParamIssue::new("visibility_relative_noise", "must be nonnegative"));
        }
        if self.rate_powers_mw.is_empty() || self.rate_powers_mw.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
            issues.push(ParamIssue::new(
                "rate_powers_mw",
                "needs at least one nonnegative finite power",
            ));
        }
        if !(self.rate_relative_noise >= 0.0 && self.rate_relative_noise.is_finite()) {
            issues.push(ParamIssue::new("rate_relative_noise", "must be nonnegative"));
        }
        if self.pdh_points < 2 {
            issues.push(ParamIssue::new("pdh_points", "must be at least 2"));
        }
        issues
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub cavity: CavityParams,
    pub etalon: EtalonParams,
    pub temporal: TemporalParams,
    pub rates: RateParams,
    pub pdh: LockConfig,
    /// Werner visibility of the entangled state.
    pub noise_visibility: f64,
    pub seed: u64,
    pub simulation: SimulationConfig,
}

pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_NOISE_VISIBILITY: f64 = 0.97;

impl ExperimentConfig {
    pub fn from_preset(preset: Preset) -> Self {
        Self {
            cavity: CavityParams::from_preset(preset),
            etalon: EtalonParams::reference(),
            temporal: TemporalParams::reference(),
            rates: RateParams::reference(),
            pdh: LockConfig::default(),
            noise_visibility: DEFAULT_NOISE_VISIBILITY,
            seed: DEFAULT_SEED,
            simulation: SimulationConfig::default(),
        }
    }

    pub fn pdh_params(&self) -> PdhParams {
        PdhParams {
            cavity: self.cavity.clone(),
            modulation_frequency: self.pdh.modulation_frequency_hz,
            mirror_reflectivities: self.pdh.mirror_reflectivities,
            round_trip_loss: self.pdh.round_trip_loss,
            v_resonance_offset: self.pdh.v_resonance_offset_hz,
        }
    }

    pub fn issues(&self) -> Vec<ParamIssue> {
        fn prefixed(prefix: &str, issues: Vec<ParamIssue>) -> impl Iterator<Item = ParamIssue> + '_ {
            issues.into_iter().map(move |i| i.under(prefix))
        }
        let mut issues: Vec<ParamIssue> = Vec::new();
        issues.extend(prefixed("cavity", self.cavity.issues()));
        issues.extend(prefixed("etalon", self.etalon.issues()));
        issues.extend(prefixed("temporal", self.temporal.issues()));
        issues.extend(prefixed("rates", self.rates.issues()));
        issues.extend(prefixed("pdh", self.pdh_params().lock_issues()));
        issues.extend(prefixed("simulation", self.simulation.issues()));
        if !(0.0..=1.0).contains(&self.noise_visibility) {
            issues.push(ParamIssue::new("noise_visibility", "must lie in [0, 1]"));
        }
        issues
    }
}

/// Paths present in `document` but absent from `reference`.
fn unknown_keys(document: &Value, reference: &Value, path: &str, out: &mut Vec<ParamIssue>) {
    if let (Value::Object(doc), Value::Object(known)) = (document, reference) {
        for (key, value) in doc {
            let here = if path.is_empty() {
                key.clone()
            } else {
                format!("{path}.{key}")
            };
            match known.get(key) {
                Some(expected) => unknown_keys(value, expected, &here, out),
                None => out.push(ParamIssue::new(here, "unknown key")),
            }
        }
    }
}

/// Recursively overlays `document` onto `base`; non-object values replace.
fn merge(base: &mut Value, document: &Value) {
    match (base, document) {
        (Value::Object(b), Value::Object(d)) => {
            for (key, value) in d {
                match b.get_mut(key) {
                    Some(slot) => merge(slot, value),
                    None => {
                        b.insert(key.clone(), value.clone());
                    }
                }
            }
        }
        (slot, value) => *slot = value.clone(),
    }
}

/// Parses a JSON configuration document over the defaults of `preset`.
///
/// Every problem found is returned, each addressed by its dotted field path.
pub fn validate_config(document: &str, preset: Preset) -> Result<ExperimentConfig, Vec<ParamIssue>> {
    let defaults = serde_json::to_value(ExperimentConfig::from_preset(preset)).expect("defaults serialize");
    let parsed: Value = if document.trim().is_empty() {
        Value::Object(Map::new())
    } else {
        serde_json::from_str(document).map_err(|e| vec![ParamIssue::new("<document>", format!("invalid JSON: {e}"))])?
    };
    if !parsed.is_object() {
        return Err(vec![ParamIssue::new("<document>", "must be a JSON object")]);
    }

    let mut issues = Vec::new();
    unknown_keys(&parsed, &defaults, "", &mut issues);
    if !issues.is_empty() {
        return Err(issues);
    }

    let mut merged = defaults;
    merge(&mut merged, &parsed);
    let config: ExperimentConfig = serde_path_to_error::deserialize(merged).map_err(|e| {
        let path = e.path().to_string();
        vec![ParamIssue::new(path, e.into_inner().to_string())]
    })?;
    let issues = config.issues();
    if issues.is_empty() {
        Ok(config)
    } else {
        Err(issues)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_reference_defaults() {
        let c = validate_config("", Preset::RatioMatched).unwrap();
        assert_eq!(c, ExperimentConfig::from_preset(Preset::RatioMatched));
        assert_eq!(c.cavity.fsr_mean, 1.9e9);
        assert_eq!(c.cavity.finesse, 166.0);
        assert_eq!(c.temporal.linewidth, 9.6e6);
        assert_eq!((c.etalon.fsr, c.etalon.finesse), (13.9e9, 31.0));
        assert_eq!(c.temporal.detector_jitter_fwhm, 350e-12);
        assert_eq!(c.pdh.modulation_frequency_hz, 70e6);
        assert_eq!(c.seed, 0);
        assert_eq!(validate_config("{}", Preset::RatioMatched).unwrap(), c);
    }

    #[test]
    fn negative_finesse_names_the_field() {
        let err = validate_config(r#"{"cavity": {"finesse": -5}}"#, Preset::RatioMatched).unwrap_err();
        assert_eq!(err[0].field, "cavity.finesse");
    }

    #[test]
    fn unknown_keys_are_listed_with_paths() {
        let err = validate_config(r#"{"cavity": {"finese": 100}, "colour": 1}"#, Preset::RatioMatched).unwrap_err();
        let fields: Vec<&str> = err.iter().map(|i| i.field.as_str()).collect();
        assert!(fields.contains(&"cavity.finese"));
        assert!(fields.contains(&"colour"));
    }

    #[test]
    fn type_errors_carry_paths() {
        let err = validate_config(r#"{"temporal": {"linewidth_hz": "wide"}}"#, Preset::RatioMatched).unwrap_err();
        assert_eq!(err[0].field, "temporal.linewidth_hz");
    }

    #[test]
    fn all_violations_are_reported() {
        let err = validate_config(
            r#"{"cavity": {"finesse": 0}, "noise_visibility": 2, "pdh": {"mirror_reflectivities": [0.5, 1.5]}}"#,
            Preset::RatioMatched,
        )
        .unwrap_err();
        let fields: Vec<&str> = err.iter().map(|i| i.field.as_str()).collect();
        assert_eq!(
            fields,
            ["cavity.finesse", "pdh.mirror_reflectivities", "noise_visibility"]
        );
    }

    #[test]
    fn partial_sections_merge_over_defaults() {
        let c = validate_config(r#"{"seed": 42, "cavity": {"finesse": 200}}"#, Preset::Quoted).unwrap();
        assert_eq!(c.seed, 42);
        assert_eq!(c.cavity.finesse, 200.0);
        assert_eq!(c.cavity.fsr_diff, 21e6);
        assert_eq!(c.cavity.fsr_mean, 1.9e9);
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = ExperimentConfig::from_preset(Preset::RatioMatched);
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(validate_config(&text, Preset::Quoted).unwrap(), c);
    }
}
