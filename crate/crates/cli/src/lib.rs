//! Command-line front end for the simulation core: JSON config loading,
//! sweep parsing, Monte Carlo orchestration over a thread pool, and CSV
//! emission.
//!
//! All randomness flows through the per-trial seeding in the core, so any
//! command rerun with the same config and seed produces byte-identical
//! output regardless of thread count.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use risbench_core::eval::{
    aggregate, run_detection_trial, run_wsr_trial, ScenarioConfig, SetPolicy,
};
use risbench_core::sync::FalseAlarmLevels;
use risbench_core::Error as CoreError;

/// Errors surfaced to the shell, keyed to process exit codes.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Bad flag values, sweep grammar or config contents. Exit code 2.
    Validation(String),
    /// Unreadable input or unwritable output. Exit code 3.
    Io(String),
    /// Numerical breakdown inside a solver. Exit code 4.
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(msg) => write!(f, "error: {msg}"),
            CliError::Io(msg) => write!(f, "i/o error: {msg}"),
            CliError::Numeric(msg) => write!(f, "numeric error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match &e {
            CoreError::InvalidParameter(_) => CliError::Validation(e.to_string()),
            CoreError::Numeric(_) => CliError::Numeric(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn validation(msg: impl fmt::Display) -> CliError {
    CliError::Validation(format!("{msg}"))
}

/// Quantity varied across sweep points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Data SNR `10 log10(P/sigma^2)`; sweeping sets the data power.
    SnrDb,
    /// Pilot SNR; sweeping sets the pilot power.
    PilotSnrDb,
    PBlock,
    /// Uniform per-panel false-alarm level.
    Alpha,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::SnrDb => "snr_db",
            SweepAxis::PilotSnrDb => "pilot_snr_db",
            SweepAxis::PBlock => "p_block",
            SweepAxis::Alpha => "alpha",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "snr_db" => Ok(SweepAxis::SnrDb),
            "pilot_snr_db" => Ok(SweepAxis::PilotSnrDb),
            "p_block" => Ok(SweepAxis::PBlock),
            "alpha" => Ok(SweepAxis::Alpha),
            other => Err(validation(format!(
                "sweep: unknown axis {other:?} (expected snr_db, pilot_snr_db, p_block or alpha)"
            ))),
        }
    }
}

/// A parsed `--sweep` argument: one axis and a nonempty grid of values.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

impl SweepSpec {
    /// Grammar: `[axis=]start:stop:step` or `[axis=]v1,v2,...` (a single
    /// value counts as a one-element list). The range form is inclusive of
    /// `stop` up to a tiny tolerance against accumulated rounding, and
    /// requires `step > 0` and `stop >= start`.
    pub fn parse(text: &str, default_axis: SweepAxis) -> CliResult<Self> {
        let (axis, body) = match text.split_once('=') {
            Some((name, rest)) => (SweepAxis::from_str(name.trim())?, rest),
            None => (default_axis, text),
        };
        let body = body.trim();
        if body.is_empty() {
            return Err(validation("sweep: empty value list"));
        }
        let values: Vec<f64> = if body.contains(':') {
            let parts: Vec<&str> = body.split(':').collect();
            if parts.len() != 3 {
                return Err(validation("sweep: range form is start:stop:step"));
            }
            let start = parse_number(parts[0], "sweep start")?;
            let stop = parse_number(parts[1], "sweep stop")?;
            let step = parse_number(parts[2], "sweep step")?;
            if !(step > 0.0) {
                return Err(validation("sweep: step must be positive"));
            }
            if stop < start {
                return Err(validation("sweep: stop must not precede start"));
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            (0..=n).map(|i| start + i as f64 * step).collect()
        } else {
            body.split(',')
                .map(|v| parse_number(v, "sweep value"))
                .collect::<CliResult<_>>()?
        };
        Ok(SweepSpec { axis, values })
    }

    /// Applies one sweep value to a copy of the configuration.
    pub fn apply(&self, cfg: &ScenarioConfig, value: f64) -> ScenarioConfig {
        let mut point = cfg.clone();
        match self.axis {
            SweepAxis::SnrDb => point.set_data_snr_db(value),
            SweepAxis::PilotSnrDb => point.set_pilot_snr_db(value),
            SweepAxis::PBlock => point.p_block = value,
            SweepAxis::Alpha => point.alpha = FalseAlarmLevels::Uniform(value),
        }
        point
    }
}

fn parse_number(text: &str, what: &str) -> CliResult<f64> {
    let v: f64 = text
        .trim()
        .parse()
        .map_err(|_| validation(format!("{what}: {:?} is not a number", text.trim())))?;
    if !v.is_finite() {
        return Err(validation(format!("{what}: must be finite")));
    }
    Ok(v)
}

/// Parses the `--policies` comma list, defaulting to every policy;
/// duplicates collapse while keeping first-occurrence order.
pub fn parse_policies(text: Option<&str>) -> CliResult<Vec<SetPolicy>> {
    let Some(text) = text else {
        return Ok(SetPolicy::ALL.to_vec());
    };
    let mut out = Vec::new();
    for name in text.split(',') {
        let p = SetPolicy::from_str(name.trim())?;
        if !out.contains(&p) {
            out.push(p);
        }
    }
    if out.is_empty() {
        return Err(validation("policies: at least one policy required"));
    }
    Ok(out)
}

/// Reads and parses the JSON scenario config; a missing path means the
/// built-in defaults.
pub fn load_config(path: Option<&Path>) -> CliResult<ScenarioConfig> {
    match path {
        None => Ok(ScenarioConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Io(format!("config {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| validation(format!("config {}: {e}", p.display())))
        }
    }
}

/// Writes the CSV to the given path, or to stdout when no path is set.
pub fn write_output(path: Option<&Path>, csv: &str) -> CliResult<()> {
    match path {
        None => {
            print!("{csv}");
            Ok(())
        }
        Some(p) => std::fs::write(p, csv)
            .map_err(|e| CliError::Io(format!("output {}: {e}", p.display()))),
    }
}

/// Runs trial indices `0..n` across the thread pool; results keep index
/// order, so aggregation is independent of scheduling.
fn run_trials<T, F>(n: usize, f: F) -> CliResult<Vec<T>>
where
    T: Send,
    F: Sync + Fn(u64) -> risbench_core::Result<T>,
{
    (0..n as u64)
        .into_par_iter()
        .map(|t| f(t).map_err(CliError::from))
        .collect()
}

/// False-alarm level echoed in the detect output: the uniform level as
/// given, or the mean across panels for per-panel levels.
fn alpha_column(alpha: &FalseAlarmLevels, panels: usize) -> CliResult<f64> {
    match alpha {
        FalseAlarmLevels::Uniform(a) => Ok(*a),
        FalseAlarmLevels::PerPanel(_) => {
            let levels = alpha.resolve(panels).map_err(CliError::from)?;
            Ok(levels.iter().sum::<f64>() / levels.len() as f64)
        }
    }
}

/// Detection accuracy sweep. Each trial contributes the mean Jaccard index
/// over users; rows report mean and standard error over trials together
/// with the operating point.
pub fn cmd_detect(cfg: &ScenarioConfig, sweep: Option<&str>) -> CliResult<String> {
    cfg.validate().map_err(CliError::from)?;
    let spec = match sweep {
        Some(text) => SweepSpec::parse(text, SweepAxis::PilotSnrDb)?,
        None => SweepSpec {
            axis: SweepAxis::PilotSnrDb,
            values: vec![cfg.pilot_snr_db()],
        },
    };
    if spec.axis == SweepAxis::SnrDb {
        return Err(validation(
            "sweep: axis snr_db is ambiguous for detect; sweep pilot_snr_db instead",
        ));
    }
    let mut out = String::from("snr_db,mean_jaccard,stderr,trials,K,M,p_block,alpha\n");
    for &value in &spec.values {
        let point = spec.apply(cfg, value);
        point.validate().map_err(CliError::from)?;
        let samples = run_trials(point.trials, |t| {
            run_detection_trial(&point, t)
                .map(|r| r.jaccard.iter().sum::<f64>() / r.jaccard.len() as f64)
        })?;
        let agg = aggregate(&samples).map_err(CliError::from)?;
        let alpha = alpha_column(&point.alpha, point.dims.panels)?;
        // Echo the exact swept value when the axis is the pilot SNR; the
        // power round trip through log10 could smear the printed digits.
        let snr_col = match spec.axis {
            SweepAxis::PilotSnrDb => value,
            _ => point.pilot_snr_db(),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            snr_col,
            agg.mean,
            agg.stderr,
            agg.count,
            point.dims.users,
            point.dims.panels,
            point.p_block,
            alpha,
        )
        .expect("string writes cannot fail");
    }
    Ok(out)
}

/// Realized sum-rate sweep per panel-set policy. Rates are reported in
/// bits (natural-log rates over ln 2). Trials are paired across policies
/// at each sweep point through the shared per-trial channel stream.
pub fn cmd_wsr(
    cfg: &ScenarioConfig,
    sweep: Option<&str>,
    policies: &[SetPolicy],
) -> CliResult<String> {
    cfg.validate().map_err(CliError::from)?;
    if policies.is_empty() {
        return Err(validation("policies: at least one policy required"));
    }
    let spec = match sweep {
        Some(text) => SweepSpec::parse(text, SweepAxis::SnrDb)?,
        None => SweepSpec {
            axis: SweepAxis::SnrDb,
            values: vec![cfg.data_snr_db()],
        },
    };
    if matches!(spec.axis, SweepAxis::PBlock | SweepAxis::Alpha) {
        return Err(validation(format!(
            "sweep: axis {} has no column in the wsr output; sweep snr_db or pilot_snr_db",
            spec.axis.name()
        )));
    }
    let mut out = String::from("snr_db,policy,mean_wsr_bits,stderr,trials\n");
    for &value in &spec.values {
        let point = spec.apply(cfg, value);
        point.validate().map_err(CliError::from)?;
        // Both remaining axes are SNRs; the swept value is the exact
        // number to report (a pilot-SNR sweep keeps the data SNR fixed,
        // so echoing the sweep keeps rows distinguishable).
        let snr_col = value;
        for &policy in policies {
            let samples = run_trials(point.trials, |t| {
                run_wsr_trial(&point, policy, t)
                    .map(|r| r.wsr_realized / std::f64::consts::LN_2)
            })?;
            let agg = aggregate(&samples).map_err(CliError::from)?;
            writeln!(
                out,
                "{},{},{},{},{}",
                snr_col, policy, agg.mean, agg.stderr, agg.count
            )
            .expect("string writes cannot fail");
        }
    }
    Ok(out)
}

/// Per-iteration optimizer trace for a single instance (trial 0, true
/// panel sets) at the given data SNR.
pub fn cmd_trace(cfg: &ScenarioConfig, snr_db: f64) -> CliResult<String> {
    let mut point = cfg.clone();
    point.set_data_snr_db(snr_db);
    point.validate().map_err(CliError::from)?;
    let result = run_wsr_trial(&point, SetPolicy::Genie, 0).map_err(CliError::from)?;
    let trace = &result.trace;
    let mut out = String::from("iter,wsr_bits,wmmse_obj,backtracks\n");
    for t in 0..trace.wsr.len() {
        writeln!(
            out,
            "{},{},{},{}",
            t + 1,
            trace.wsr[t] / std::f64::consts::LN_2,
            trace.wmmse_obj[t],
            trace.backtrack_counts[t].iter().sum::<u32>(),
        )
        .expect("string writes cannot fail");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use risbench_core::channel::SystemDims;
    use risbench_core::crpa::CrpaConfig;

    fn tiny_cfg() -> ScenarioConfig {
        ScenarioConfig {
            dims: SystemDims {
                users: 2,
                panels: 3,
                bs_antennas: 4,
                ue_antennas: 2,
                elements_per_panel: 4,
            },
            crpa: CrpaConfig {
                max_iter: 15,
                ..CrpaConfig::default()
            },
            trials: 3,
            base_seed: 5,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn test_sweep_range_form() {
        let s = SweepSpec::parse("0:10:5", SweepAxis::SnrDb).unwrap();
        assert_eq!(s.axis, SweepAxis::SnrDb);
        assert_eq!(s.values, vec![0.0, 5.0, 10.0]);

        let s = SweepSpec::parse("2:2:1", SweepAxis::SnrDb).unwrap();
        assert_eq!(s.values, vec![2.0]);

        // Grid endpoints survive accumulated floating-point rounding.
        let s = SweepSpec::parse("0:1:0.1", SweepAxis::SnrDb).unwrap();
        assert_eq!(s.values.len(), 11);
        assert!((s.values[10] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn test_sweep_list_and_scalar_forms() {
        let s = SweepSpec::parse("1,2.5,7", SweepAxis::PilotSnrDb).unwrap();
        assert_eq!(s.values, vec![1.0, 2.5, 7.0]);
        let s = SweepSpec::parse("-3.5", SweepAxis::PilotSnrDb).unwrap();
        assert_eq!(s.values, vec![-3.5]);
    }

    #[test]
    fn test_sweep_axis_prefix() {
        let s = SweepSpec::parse("p_block=0:0.4:0.2", SweepAxis::SnrDb).unwrap();
        assert_eq!(s.axis, SweepAxis::PBlock);
        assert_eq!(s.values, vec![0.0, 0.2, 0.4]);
        let s = SweepSpec::parse("alpha=0.1,0.01", SweepAxis::SnrDb).unwrap();
        assert_eq!(s.axis, SweepAxis::Alpha);
    }

    #[test]
    fn test_sweep_rejects_bad_grammar() {
        for text in [
            "",
            "0:10",
            "0:10:5:1",
            "0:10:0",
            "0:10:-1",
            "10:0:1",
            "a,b",
            "snr=0:10:5",
            "1,,2",
        ] {
            let err = SweepSpec::parse(text, SweepAxis::SnrDb).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text:?} should fail validation");
        }
    }

    #[test]
    fn test_sweep_apply_sets_the_right_knob() {
        let cfg = tiny_cfg();
        let s = SweepSpec::parse("snr_db=20", SweepAxis::SnrDb).unwrap();
        let point = s.apply(&cfg, 20.0);
        assert!((point.data_power - 100.0).abs() < 1e-9);
        assert_eq!(point.pilot_power, cfg.pilot_power);

        let s = SweepSpec::parse("p_block=0.3", SweepAxis::SnrDb).unwrap();
        assert_eq!(s.apply(&cfg, 0.3).p_block, 0.3);

        let s = SweepSpec::parse("alpha=0.05", SweepAxis::SnrDb).unwrap();
        assert_eq!(
            s.apply(&cfg, 0.05).alpha,
            FalseAlarmLevels::Uniform(0.05)
        );
    }

    #[test]
    fn test_policy_list_parsing() {
        assert_eq!(parse_policies(None).unwrap(), SetPolicy::ALL.to_vec());
        assert_eq!(
            parse_policies(Some("genie, none")).unwrap(),
            vec![SetPolicy::Genie, SetPolicy::DirectOnly]
        );
        assert_eq!(
            parse_policies(Some("genie,genie")).unwrap(),
            vec![SetPolicy::Genie]
        );
        assert_eq!(parse_policies(Some("antenna")).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn test_detect_csv_shape() {
        let mut cfg = tiny_cfg();
        cfg.trials = 2;
        let csv = cmd_detect(&cfg, Some("0:10:5")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "snr_db,mean_jaccard,stderr,trials,K,M,p_block,alpha");
        assert_eq!(lines.len(), 4);
        assert!(csv.ends_with('\n'));
        let first: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(first[0], "0");
        assert_eq!(first[3], "2");
        assert_eq!(first[4], "2");
        assert_eq!(first[5], "3");
        assert_eq!(first[6], "0.1");
        assert_eq!(first[7], "0.001");
    }

    #[test]
    fn test_detect_single_trial_has_zero_stderr() {
        let mut cfg = tiny_cfg();
        cfg.trials = 1;
        let csv = cmd_detect(&cfg, Some("0,5")).unwrap();
        for line in csv.lines().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            assert_eq!(cols[2], "0");
            assert_eq!(cols[3], "1");
        }
    }

    #[test]
    fn test_detect_rejects_data_snr_axis_and_bad_point() {
        let cfg = tiny_cfg();
        let err = cmd_detect(&cfg, Some("snr_db=0:10:5")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let err = cmd_detect(&cfg, Some("p_block=0:2:1")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(format!("{err}").contains("p_block"));
    }

    #[test]
    fn test_wsr_direct_only_positive_at_zero_db() {
        let cfg = tiny_cfg();
        let csv = cmd_wsr(&cfg, Some("0"), &[SetPolicy::DirectOnly]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "snr_db,policy,mean_wsr_bits,stderr,trials");
        assert_eq!(lines.len(), 2);
        let cols: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(cols[1], "none");
        let mean: f64 = cols[2].parse().unwrap();
        assert!(mean > 0.0, "direct links alone should carry positive rate");
    }

    #[test]
    fn test_wsr_row_order_and_policy_column() {
        let mut cfg = tiny_cfg();
        cfg.trials = 2;
        cfg.crpa.max_iter = 8;
        let policies = [SetPolicy::Genie, SetPolicy::DirectOnly];
        let csv = cmd_wsr(&cfg, Some("0,10"), &policies).unwrap();
        let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
        assert_eq!(rows.len(), 4);
        assert_eq!((rows[0][0], rows[0][1]), ("0", "genie"));
        assert_eq!((rows[1][0], rows[1][1]), ("0", "none"));
        assert_eq!((rows[2][0], rows[2][1]), ("10", "genie"));
        assert_eq!((rows[3][0], rows[3][1]), ("10", "none"));
    }

    #[test]
    fn test_wsr_rejects_unreportable_axes() {
        let cfg = tiny_cfg();
        for sweep in ["p_block=0:0.5:0.1", "alpha=0.1"] {
            let err = cmd_wsr(&cfg, Some(sweep), &[SetPolicy::Genie]).unwrap_err();
            assert_eq!(err.exit_code(), 2);
        }
    }

    #[test]
    fn test_wsr_deterministic_rerun() {
        let mut cfg = tiny_cfg();
        cfg.trials = 2;
        cfg.crpa.max_iter = 8;
        let a = cmd_wsr(&cfg, Some("0:10:10"), &[SetPolicy::Genie, SetPolicy::RandomPhase]).unwrap();
        let b = cmd_wsr(&cfg, Some("0:10:10"), &[SetPolicy::Genie, SetPolicy::RandomPhase]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn test_trace_columns_behave() {
        let mut cfg = tiny_cfg();
        cfg.crpa.max_iter = 20;
        let csv = cmd_trace(&cfg, 10.0).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "iter,wsr_bits,wmmse_obj,backtracks");
        assert!(lines.len() >= 3);
        let mut prev_wsr = f64::NEG_INFINITY;
        let mut prev_obj = f64::INFINITY;
        for (i, line) in lines[1..].iter().enumerate() {
            let cols: Vec<&str> = line.split(',').collect();
            assert_eq!(cols[0], format!("{}", i + 1));
            let w: f64 = cols[1].parse().unwrap();
            let j: f64 = cols[2].parse().unwrap();
            let slack = 1e-9 * w.abs().max(1.0);
            assert!(w >= prev_wsr - slack, "sum-rate dipped at row {}", i + 1);
            assert!(j <= prev_obj + slack, "surrogate rose at row {}", i + 1);
            prev_wsr = w;
            prev_obj = j;
        }
    }

    #[test]
    fn test_load_config_error_paths() {
        let missing = load_config(Some(Path::new("/definitely/not/here.json"))).unwrap_err();
        assert_eq!(missing.exit_code(), 3);
        assert!(format!("{missing}").contains("/definitely/not/here.json"));
    }

    #[test]
    fn test_core_error_mapping() {
        let v: CliError = CoreError::InvalidParameter("x: bad".into()).into();
        assert_eq!(v.exit_code(), 2);
        let n: CliError = CoreError::Numeric("cholesky failed".into()).into();
        assert_eq!(n.exit_code(), 4);
    }
}
