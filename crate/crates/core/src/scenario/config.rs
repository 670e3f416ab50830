//! Line-oriented `key = value` scenario files.
//!
//! `#` starts a comment. Keys may appear at most once; unknown keys are
//! rejected. Required keys: `scenario`, `epsilon`, `t_final`, `steps`, `nx`,
//! `nu_T`, `nu_d`, `nu_f`, `initial`. Profiles are written as a generator
//! name followed by `name=value` parameters, e.g. `circle cx=0 cy=0 r=0.5`.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::forward::StepScheme;
use crate::mpec::HomotopySchedule;
use crate::scenario::profiles::Profile;
use crate::trn::TrustRegionState;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PotentialKind {
    DoubleWell,
    Obstacle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunMode {
    Optimize,
    Forward,
}

/// Resolution used by `--paper-scale`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PaperScale {
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    pub steps: Option<usize>,
    pub tol: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub scenario: String,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
    pub t_final: f64,
    pub steps: usize,
    pub epsilon: f64,
    pub potential: PotentialKind,
    pub phases: usize,
    pub nu_t: f64,
    pub nu_d: f64,
    pub nu_f: f64,
    pub scheme: StepScheme,
    pub mode: RunMode,
    pub warm_start: bool,
    pub initial: Profile,
    pub target: Profile,
    pub desired: Profile,
    pub trust_region: TrustRegionState,
    pub homotopy: HomotopySchedule,
    pub paper: PaperScale,
    pub gradcheck_directions: usize,
    pub gradcheck_step: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    Word,
    Num,
    Int,
    Flag,
    Profile,
}

const KEYS: &[(&str, Kind)] = &[
    ("scenario", Kind::Word),
    ("x_min", Kind::Num),
    ("x_max", Kind::Num),
    ("y_min", Kind::Num),
    ("y_max", Kind::Num),
    ("nx", Kind::Int),
    ("ny", Kind::Int),
    ("t_final", Kind::Num),
    ("steps", Kind::Int),
    ("epsilon", Kind::Num),
    ("potential", Kind::Word),
    ("phases", Kind::Int),
    ("nu_T", Kind::Num),
    ("nu_d", Kind::Num),
    ("nu_f", Kind::Num),
    ("scheme", Kind::Word),
    ("mode", Kind::Word),
    ("warm_start", Kind::Flag),
    ("initial", Kind::Profile),
    ("target", Kind::Profile),
    ("desired", Kind::Profile),
    ("tol", Kind::Num),
    ("tol_cg", Kind::Num),
    ("forcing", Kind::Flag),
    ("delta0", Kind::Num),
    ("delta_max", Kind::Num),
    ("eta_accept", Kind::Num),
    ("eta_shrink", Kind::Num),
    ("eta_expand", Kind::Num),
    ("max_iter", Kind::Int),
    ("max_cg", Kind::Int),
    ("sigma0", Kind::Num),
    ("sigma_factor", Kind::Num),
    ("sigma_min", Kind::Num),
    ("alpha0", Kind::Num),
    ("alpha_factor", Kind::Num),
    ("alpha_min", Kind::Num),
    ("paper_nx", Kind::Int),
    ("paper_ny", Kind::Int),
    ("paper_steps", Kind::Int),
    ("paper_tol", Kind::Num),
    ("gradcheck_directions", Kind::Int),
    ("gradcheck_step", Kind::Num),
    ("seed", Kind::Int),
];

const REQUIRED_KEYS: &[&str] = &["scenario", "epsilon", "t_final", "steps", "nx", "nu_T", "nu_d", "nu_f", "initial"];

struct Entries {
    map: BTreeMap<String, (usize, String)>,
    last_line: usize,
}

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut map: BTreeMap<String, (usize, String)> = BTreeMap::new();
        let mut last_line = 0;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            last_line = line;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::config(line, format!("expected `key = value`, got `{content}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(Error::config(line, format!("invalid key `{key}`")));
            }
            if !KEYS.iter().any(|(k, _)| *k == key) {
                return Err(Error::config(line, format!("unknown key `{key}`")));
            }
            if value.is_empty() {
                return Err(Error::config(line, format!("missing value for `{key}`")));
            }
            if let Some((first, _)) = map.get(key) {
                return Err(Error::config(line, format!("duplicate key `{key}` (first set on line {first})")));
            }
            map.insert(key.to_string(), (line, value.to_string()));
        }
        let entries = Entries { map, last_line };
        let mut by_line: Vec<_> = KEYS.iter().filter_map(|(k, kind)| Some((entries.raw(k)?.0, *k, *kind))).collect();
        by_line.sort_unstable();
        for (_, key, kind) in by_line {
            entries.check_kind(key, kind)?;
        }
        for key in REQUIRED_KEYS {
            if !entries.map.contains_key(*key) {
                return Err(Error::config(last_line + 1, format!("missing required key `{key}`")));
            }
        }
        Ok(entries)
    }

    fn check_kind(&self, key: &str, kind: Kind) -> Result<()> {
        match kind {
            Kind::Word => Ok(()),
            Kind::Num => self.num(key).map(drop),
            Kind::Int => self.typed::<u64>(key, "a non-negative integer").map(drop),
            Kind::Flag => self.flag(key, false).map(drop),
            Kind::Profile => self.profile(key).map(drop),
        }
    }

    fn raw(&self, key: &str) -> Option<(usize, &str)> {
        self.map.get(key).map(|(l, v)| (*l, v.as_str()))
    }

    fn typed<T: FromStr>(&self, key: &str, what: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::config(line, format!("`{key}` expects {what}, got `{v}`"))),
        }
    }

    fn num(&self, key: &str) -> Result<Option<f64>> {
        match self.typed::<f64>(key, "a number")? {
            Some(v) if !v.is_finite() => {
                let (line, _) = self.raw(key).expect("present");
                Err(Error::config(line, format!("`{key}` must be finite")))
            }
            other => Ok(other),
        }
    }

    fn num_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.num(key)?.unwrap_or(default))
    }

    fn int(&self, key: &str) -> Result<Option<usize>> {
        self.typed::<usize>(key, "a non-negative integer")
    }

    fn flag(&self, key: &str, default: bool) -> Result<bool> {
        match self.raw(key) {
            None => Ok(default),
            Some((_, "true")) => Ok(true),
            Some((_, "false")) => Ok(false),
            Some((line, v)) => Err(Error::config(line, format!("`{key}` expects true or false, got `{v}`"))),
        }
    }

    fn required_num(&self, key: &str) -> Result<f64> {
        Ok(self.num(key)?.expect("required keys checked"))
    }

    fn required_int(&self, key: &str) -> Result<usize> {
        Ok(self.int(key)?.expect("required keys checked"))
    }

    fn profile(&self, key: &str) -> Result<Option<Profile>> {
        match self.raw(key) {
            None => Ok(None),
            Some((line, v)) => Profile::parse(v).map(Some).map_err(|msg| Error::config(line, format!("`{key}`: {msg}"))),
        }
    }

    fn line_of(&self, key: &str) -> usize {
        self.raw(key).map_or(self.last_line + 1, |(l, _)| l)
    }

    /// Error at the line of `key` unless `ok`.
    fn ensure(&self, ok: bool, key: &str, msg: impl FnOnce() -> String) -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(Error::config(self.line_of(key), msg()))
        }
    }
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let e = Entries::parse(text)?;

        let scenario = e.raw("scenario").expect("required").1.to_string();
        let potential = match e.raw("potential") {
            None | Some((_, "double_well")) => PotentialKind::DoubleWell,
            Some((_, "obstacle")) => PotentialKind::Obstacle,
            Some((line, v)) => return Err(Error::config(line, format!("`potential` expects double_well or obstacle, got `{v}`"))),
        };
        let scheme = match e.raw("scheme") {
            None => StepScheme::Implicit,
            Some((line, v)) => v.parse().map_err(|_| Error::config(line, format!("`scheme` expects implicit or semi, got `{v}`")))?,
        };
        let mode = match e.raw("mode") {
            None | Some((_, "optimize")) => RunMode::Optimize,
            Some((_, "forward")) => RunMode::Forward,
            Some((line, v)) => return Err(Error::config(line, format!("`mode` expects optimize or forward, got `{v}`"))),
        };

        let defaults = TrustRegionState::default();
        let trust_region = TrustRegionState {
            delta: e.num_or("delta0", defaults.delta)?,
            delta_max: e.num_or("delta_max", defaults.delta_max)?,
            eta_accept: e.num_or("eta_accept", defaults.eta_accept)?,
            eta_shrink: e.num_or("eta_shrink", defaults.eta_shrink)?,
            eta_expand: e.num_or("eta_expand", defaults.eta_expand)?,
            tol: e.num_or("tol", defaults.tol)?,
            tol_cg: e.num_or("tol_cg", defaults.tol_cg)?,
            forcing: e.flag("forcing", defaults.forcing)?,
            max_iter: e.int("max_iter")?.unwrap_or(defaults.max_iter),
            max_cg: e.int("max_cg")?.unwrap_or(defaults.max_cg),
            ..defaults
        };
        let hd = HomotopySchedule::default();
        let homotopy = HomotopySchedule {
            sigma_0: e.num_or("sigma0", hd.sigma_0)?,
            sigma_factor: e.num_or("sigma_factor", hd.sigma_factor)?,
            sigma_min: e.num_or("sigma_min", hd.sigma_min)?,
            alpha_0: e.num_or("alpha0", hd.alpha_0)?,
            alpha_factor: e.num_or("alpha_factor", hd.alpha_factor)?,
            alpha_min: e.num_or("alpha_min", hd.alpha_min)?,
        };

        let initial = e.profile("initial")?.expect("required");
        let target = e.profile("target")?.unwrap_or_else(|| initial.clone());
        let desired = e.profile("desired")?.unwrap_or_else(|| target.clone());
        let nx = e.required_int("nx")?;

        let cfg = ScenarioConfig {
            scenario,
            x_min: e.num_or("x_min", -1.0)?,
            x_max: e.num_or("x_max", 1.0)?,
            y_min: e.num_or("y_min", -1.0)?,
            y_max: e.num_or("y_max", 1.0)?,
            nx,
            ny: e.int("ny")?.unwrap_or(nx),
            t_final: e.required_num("t_final")?,
            steps: e.required_int("steps")?,
            epsilon: e.required_num("epsilon")?,
            potential,
            phases: e.int("phases")?.unwrap_or(match potential {
                PotentialKind::DoubleWell => 2,
                PotentialKind::Obstacle => 3,
            }),
            nu_t: e.required_num("nu_T")?,
            nu_d: e.required_num("nu_d")?,
            nu_f: e.required_num("nu_f")?,
            scheme,
            mode,
            warm_start: e.flag("warm_start", true)?,
            initial,
            target,
            desired,
            trust_region,
            homotopy,
            paper: PaperScale {
                nx: e.int("paper_nx")?,
                ny: e.int("paper_ny")?,
                steps: e.int("paper_steps")?,
                tol: e.num("paper_tol")?,
            },
            gradcheck_directions: e.int("gradcheck_directions")?.unwrap_or(20),
            gradcheck_step: e.num_or("gradcheck_step", 1e-5)?,
            seed: e.typed::<u64>("seed", "a non-negative integer")?.unwrap_or(0),
        };
        cfg.validate_with(&e)?;
        Ok(cfg)
    }

    fn validate_with(&self, e: &Entries) -> Result<()> {
        e.ensure(self.epsilon > 0.0, "epsilon", || "`epsilon` must be positive".into())?;
        e.ensure(self.t_final > 0.0, "t_final", || "`t_final` must be positive".into())?;
        e.ensure(self.steps > 0, "steps", || "`steps` must be positive".into())?;
        e.ensure(self.nx >= 2, "nx", || "`nx` must be at least 2".into())?;
        e.ensure(self.ny >= 2, "ny", || "`ny` must be at least 2".into())?;
        e.ensure(self.x_max > self.x_min, "x_max", || "`x_max` must exceed `x_min`".into())?;
        e.ensure(self.y_max > self.y_min, "y_max", || "`y_max` must exceed `y_min`".into())?;
        for (key, v) in [("nu_T", self.nu_t), ("nu_d", self.nu_d), ("nu_f", self.nu_f)] {
            e.ensure(v >= 0.0, key, || format!("`{key}` must be non-negative"))?;
        }
        e.ensure(self.nu_f > 0.0 || self.mode == RunMode::Forward, "nu_f", || {
            "`nu_f` must be positive for optimization runs".into()
        })?;
        match self.potential {
            PotentialKind::DoubleWell => {
                e.ensure(self.phases == 2, "phases", || {
                    "the double-well potential is the scalar two-phase model; `phases` must be 2".into()
                })?;
            }
            PotentialKind::Obstacle => {
                e.ensure(self.phases >= 2, "phases", || "the obstacle potential needs at least 2 phases".into())?;
            }
        }
        let ncomp = self.ncomp();
        for key in ["initial", "target", "desired"] {
            let p = match key {
                "initial" => &self.initial,
                "target" => &self.target,
                _ => &self.desired,
            };
            e.ensure(p.accepts(ncomp), key, || {
                format!("profile `{}` does not produce {ncomp}-component fields", p.name())
            })?;
        }
        self.trust_region
            .validate()
            .map_err(|err| Error::config(e.line_of("eta_accept"), err.to_string()))?;
        if self.potential == PotentialKind::Obstacle {
            self.homotopy
                .validate()
                .map_err(|err| Error::config(e.line_of("sigma0"), err.to_string()))?;
        }
        e.ensure(self.gradcheck_step > 0.0, "gradcheck_step", || "`gradcheck_step` must be positive".into())?;
        Ok(())
    }

    /// Components per node of the state (1 for the scalar double well).
    pub fn ncomp(&self) -> usize {
        match self.potential {
            PotentialKind::DoubleWell => 1,
            PotentialKind::Obstacle => self.phases,
        }
    }

    /// Copy with the paper-scale resolution substituted where given.
    pub fn paper_scale(&self) -> Self {
        let mut c = self.clone();
        if let Some(nx) = self.paper.nx {
            c.nx = nx;
            c.ny = self.paper.ny.unwrap_or(nx);
        }
        if let Some(ny) = self.paper.ny {
            c.ny = ny;
        }
        if let Some(steps) = self.paper.steps {
            c.steps = steps;
        }
        if let Some(tol) = self.paper.tol {
            c.trust_region.tol = tol;
        }
        c
    }
}

impl FromStr for ScenarioConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioConfig::parse(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
scenario = keep_circle
nu_T = 1.0
nu_d = 0
nu_f = 0.01
epsilon = 2.2736e-2
t_final = 0.01
steps = 20
nx = 32
initial = circle r=0.5
";

    fn line_of(err: Error) -> usize {
        match err {
            Error::Config { line, .. } => line,
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn minimal_file_parses_with_defaults() {
        let c = ScenarioConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.scenario, "keep_circle");
        assert_eq!(c.nx, 32);
        assert_eq!(c.ny, 32);
        assert_eq!(c.epsilon, 2.2736e-2);
        assert_eq!(c.potential, PotentialKind::DoubleWell);
        assert_eq!(c.scheme, StepScheme::Implicit);
        assert_eq!(c.target, c.initial);
        assert_eq!(c.desired, c.initial);
        assert_eq!(c.trust_region.tol_cg, 1e-13);
        assert_eq!((c.x_min, c.x_max), (-1.0, 1.0));
        assert_eq!(c.paper_scale(), c);
    }

    #[test]
    fn type_error_names_line() {
        let err = ScenarioConfig::parse("nu_T = banana\n").unwrap_err();
        assert_eq!(line_of(err), 1);
        let text = "nu_T = banana\n".to_string() + &MINIMAL.replace("nu_T = 1.0\n", "");
        let err = ScenarioConfig::parse(&text).unwrap_err();
        assert_eq!(line_of(err), 1);
    }

    #[test]
    fn duplicate_and_unknown_keys_rejected() {
        let dup = format!("{MINIMAL}nx = 64\n");
        let err = ScenarioConfig::parse(&dup).unwrap_err();
        assert_eq!(line_of(err), 10);
        let unk = format!("colour = red\n{MINIMAL}");
        let err = ScenarioConfig::parse(&unk).unwrap_err();
        assert_eq!(line_of(err), 1);
        assert!(err_text(&unk).contains("unknown key"));
    }

    fn err_text(text: &str) -> String {
        ScenarioConfig::parse(text).unwrap_err().to_string()
    }

    #[test]
    fn missing_required_key() {
        let text = MINIMAL.replace("epsilon = 2.2736e-2\n", "");
        assert!(err_text(&text).contains("missing required key `epsilon`"));
    }

    #[test]
    fn comments_and_blank_lines() {
        let text = format!("# header\n\n{}", MINIMAL.replace("nx = 32", "nx = 16   # coarse"));
        assert_eq!(ScenarioConfig::parse(&text).unwrap().nx, 16);
    }

    #[test]
    fn validation_errors_point_at_lines() {
        let text = MINIMAL.replace("epsilon = 2.2736e-2", "epsilon = -1");
        assert_eq!(line_of(ScenarioConfig::parse(&text).unwrap_err()), 5);
        let text = MINIMAL.replace("initial = circle r=0.5", "initial = rings3");
        assert_eq!(line_of(ScenarioConfig::parse(&text).unwrap_err()), 9);
        let text = MINIMAL.replace("initial = circle r=0.5", "initial = blob r=1");
        assert!(err_text(&text).contains("unknown profile"));
        let text = MINIMAL.replace("nu_f = 0.01", "nu_f = -1");
        assert_eq!(line_of(ScenarioConfig::parse(&text).unwrap_err()), 4);
    }

    #[test]
    fn paper_scale_overrides() {
        let text = format!("{MINIMAL}paper_nx = 128\npaper_steps = 80\npaper_tol = 1e-13\n");
        let c = ScenarioConfig::parse(&text).unwrap().paper_scale();
        assert_eq!((c.nx, c.ny, c.steps), (128, 128, 80));
        assert_eq!(c.trust_region.tol, 1e-13);
    }

    #[test]
    fn obstacle_settings() {
        let text = "\
scenario = rings3
potential = obstacle
phases = 3
x_min = 0
x_max = 1
y_min = 0
y_max = 1
nu_T = 1
nu_d = 1e4
nu_f = 1e-3
epsilon = 0.1
t_final = 5e-4
steps = 5
nx = 60
initial = rings3 cx=0.5 cy=0.5 r1=0.2 r2=0.4
sigma0 = 0.05
warm_start = false
";
        let c = ScenarioConfig::parse(text).unwrap();
        assert_eq!(c.ncomp(), 3);
        assert_eq!(c.homotopy.sigma_0, 0.05);
        assert!(!c.warm_start);
        let bad = text.replace("warm_start = false", "warm_start = maybe");
        assert_eq!(line_of(ScenarioConfig::parse(&bad).unwrap_err()), 17);
    }
}
