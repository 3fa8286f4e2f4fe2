use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::equilibrate::EquilibrationParams;
use crate::error::{Error, Result};

/// The experiment a configuration is for; each has its own default sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Equilibration,
    Lsqr,
    Ccp,
}

/// Settings of one experiment. The `key = value` names used by
/// [`ExperimentConfig::apply_text`] and [`ExperimentConfig::provenance`] are
/// the long CLI flag names without dashes.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub rows: usize,
    pub cols: usize,
    pub density: f64,
    pub seed: u64,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: f64,
    pub max_log_scale: f64,
    /// Equilibration iterations, or solver iterations for the benchmarks.
    pub iterations: usize,
    pub stride: usize,
    pub equil_budgets: Vec<usize>,
    pub matrix: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub plot: Option<PathBuf>,
}

pub const DEFAULT_BUDGETS: [usize; 5] = [0, 10, 30, 100, 300];

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        let eq = EquilibrationParams::default();
        let (rows, cols, iterations) = match kind {
            ExperimentKind::Equilibration => (2000, 1000, 1000),
            ExperimentKind::Lsqr => (500, 500, 3000),
            ExperimentKind::Ccp => (500, 1000, 5000),
        };
        Self {
            rows,
            cols,
            density: 0.01,
            seed: 0,
            alpha: eq.alpha,
            beta: eq.beta,
            gamma: eq.gamma,
            max_log_scale: eq.max_log_scale,
            iterations,
            stride: 1,
            equil_budgets: DEFAULT_BUDGETS.to_vec(),
            matrix: None,
            out: None,
            plot: None,
        }
    }

    /// Equilibration parameters with `iterations` steps.
    pub fn equilibration(&self, iterations: usize) -> EquilibrationParams {
        EquilibrationParams {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            max_log_scale: self.max_log_scale,
            iterations,
            seed: self.seed,
        }
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::InvalidParameter(format!("{key}: expected {what}, got {value:?}"));
        let float = || value.parse::<f64>().map_err(|_| bad("a number"));
        let count = || value.parse::<usize>().map_err(|_| bad("a non-negative integer"));
        let auto = || -> Result<Option<f64>> {
            if value == "auto" {
                Ok(None)
            } else {
                value.parse().map(Some).map_err(|_| bad("a number or \"auto\""))
            }
        };
        match key {
            "rows" => self.rows = count()?,
            "cols" => self.cols = count()?,
            "density" => self.density = float()?,
            "seed" => self.seed = value.parse().map_err(|_| bad("a non-negative integer"))?,
            "alpha" => self.alpha = auto()?,
            "beta" => self.beta = auto()?,
            "gamma" => self.gamma = float()?,
            "max-scale-log" => self.max_log_scale = float()?,
            "iters" => self.iterations = count()?,
            "stride" => self.stride = count()?,
            "equil-budgets" => self.equil_budgets = parse_budgets(value)?,
            "matrix" => self.matrix = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            "plot" => self.plot = Some(PathBuf::from(value)),
            _ => return Err(Error::InvalidParameter(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: k + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err("expected `key = value`".into()))?;
            self.set(key.trim(), value.trim()).map_err(|e| parse_err(e.to_string()))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.apply_text(&text, path)
    }

    /// The settings that determine the numbers, as `# key = value` comment
    /// lines. Stripping the `# ` prefixes yields a loadable config file.
    pub fn provenance(&self, command: &str) -> String {
        let opt = |x: Option<f64>| x.map_or("auto".to_string(), |v| v.to_string());
        let mut s = format!("# mfequil {command} {}\n", env!("CARGO_PKG_VERSION"));
        match &self.matrix {
            Some(path) => writeln!(s, "# matrix = {}", path.display()).unwrap(),
            None => {
                writeln!(s, "# rows = {}", self.rows).unwrap();
                writeln!(s, "# cols = {}", self.cols).unwrap();
                writeln!(s, "# density = {}", self.density).unwrap();
            }
        }
        writeln!(s, "# seed = {}", self.seed).unwrap();
        writeln!(s, "# alpha = {}", opt(self.alpha)).unwrap();
        writeln!(s, "# beta = {}", opt(self.beta)).unwrap();
        writeln!(s, "# gamma = {}", self.gamma).unwrap();
        writeln!(s, "# max-scale-log = {}", self.max_log_scale).unwrap();
        writeln!(s, "# iters = {}", self.iterations).unwrap();
        if command == "equilibrate" {
            writeln!(s, "# stride = {}", self.stride).unwrap();
        } else {
            let budgets: Vec<String> = self.equil_budgets.iter().map(|b| b.to_string()).collect();
            writeln!(s, "# equil-budgets = {}", budgets.join(",")).unwrap();
        }
        s
    }
}

pub fn parse_budgets(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|t| t.trim())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| Error::InvalidParameter(format!("bad equilibration budget {t:?}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_overrides_defaults() {
        let mut c = ExperimentConfig::new(ExperimentKind::Lsqr);
        let text = "# comment\n\nrows = 40\ncols=40\nalpha = 0.5\nbeta = auto\nequil-budgets = 0, 5,7\n";
        c.apply_text(text, Path::new("c.cfg")).unwrap();
        assert_eq!((c.rows, c.cols), (40, 40));
        assert_eq!((c.alpha, c.beta), (Some(0.5), None));
        assert_eq!(c.equil_budgets, vec![0, 5, 7]);
        assert_eq!(c.density, 0.01);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let mut c = ExperimentConfig::new(ExperimentKind::Ccp);
        let err = c.apply_text("rows = 3\nnonsense\n", Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = c.apply_text("gamma = fast\n", Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        assert!(c.apply_text("colour = red\n", Path::new("x")).is_err());
    }

    #[test]
    fn provenance_round_trips() {
        let mut c = ExperimentConfig::new(ExperimentKind::Equilibration);
        c.seed = 17;
        c.gamma = 0.25;
        c.alpha = Some(2.0);
        c.stride = 5;
        let text: String = c
            .provenance("equilibrate")
            .lines()
            .skip(1)
            .map(|l| format!("{}\n", l.trim_start_matches("# ")))
            .collect();
        let mut d = ExperimentConfig::new(ExperimentKind::Equilibration);
        d.apply_text(&text, Path::new("p")).unwrap();
        assert_eq!(c, d);
    }
}
