//! Flat `key = value` run configuration.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rlab_core::training::FgsmStep;
use rlab_core::{AttackName, InitMode, Method, ModelSpec, TrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}` given twice (lines {first} and {second})")]
    DuplicateKey { key: String, first: usize, second: usize },
    #[error("missing required key `{0}`")]
    MissingKey(String),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

type Result<T> = std::result::Result<T, ConfigError>;

/// Every accepted key with its default; `None` marks a required key.
const KEYS: &[(&str, Option<&str>)] = &[
    ("method", None),
    ("seed", None),
    ("eps", Some("0.3")),
    ("alpha_train", Some("auto")),
    ("pgd_train_steps", Some("40")),
    ("train_init", Some("uniform")),
    ("lambda", Some("0.1")),
    ("reg_steps", Some("3")),
    ("reg_examples", Some("1")),
    ("fgsm_step", Some("eps")),
    ("free_replays", Some("8")),
    ("epochs", Some("20")),
    ("batch_size", Some("100")),
    ("lr", Some("0.01")),
    ("momentum", Some("0.9")),
    ("dataset", Some("mnist")),
    ("data_dir", Some("data/mnist")),
    ("train_subset", Some("0")),
    ("subset_seed", Some("0")),
    ("synth_per_class", Some("200")),
    ("synth_dim", Some("20")),
    ("synth_separation", Some("0.5")),
    ("model", Some("auto")),
    ("hidden", Some("64")),
    ("eval_subset", Some("1000")),
    ("eval_eps", Some("auto")),
    ("eval_alpha", Some("0.1")),
    ("eval_pgd_steps", Some("50")),
    ("eval_restarts", Some("1")),
    ("eval_budgets", Some("PGD-20-10,PGD-40-10,CW-20-10,CW-40-10")),
    ("eval_full_subset", Some("0")),
    ("out_dir", Some("runs/latest")),
    ("checkpoint_interval", Some("1")),
    ("record_wall_time", Some("false")),
];

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Mnist { dir: PathBuf },
    Synthetic { per_class: usize, dim: usize, separation: f64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelChoice {
    MnistConv,
    MnistMlp,
    Mlp { hidden: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DataSource,
    /// 0 keeps the whole training set.
    pub train_subset: usize,
    pub subset_seed: u64,
    pub model: ModelChoice,
    /// Size of the per-epoch evaluation subsample (0 = whole test set).
    pub eval_subset: usize,
    pub eval_eps: f64,
    pub eval_alpha: f64,
    pub eval_pgd_steps: usize,
    pub eval_restarts: usize,
    /// Attacks run by `eval`.
    pub eval_budgets: Vec<AttackName>,
    pub eval_full_subset: usize,
    pub out_dir: PathBuf,
    /// Save a checkpoint every this many epochs (0 = only the last epoch).
    pub checkpoint_interval: usize,
    pub record_wall_time: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        text.parse()
    }

    pub fn model_spec(&self) -> ModelSpec {
        match &self.model {
            ModelChoice::MnistConv => ModelSpec::mnist_conv(),
            ModelChoice::MnistMlp => ModelSpec::mnist_mlp(),
            ModelChoice::Mlp { hidden } => {
                let dim = match self.data {
                    DataSource::Synthetic { dim, .. } => dim,
                    DataSource::Mnist { .. } => unreachable!("rejected at parse time"),
                };
                ModelSpec::mlp(dim, hidden, 2).expect("widths validated at parse time")
            }
        }
    }

    /// Every key with its effective value, in a fixed order; parsing the
    /// result gives back an equal config.
    pub fn resolved(&self) -> String {
        let t = &self.train;
        let mut out = String::from("# resolved run configuration\n");
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("method", t.method.to_string());
        kv("seed", t.seed.to_string());
        kv("eps", t.eps.to_string());
        kv("alpha_train", t.resolved_alpha_train().to_string());
        kv("pgd_train_steps", t.pgd_train_steps.to_string());
        kv("train_init", init_name(t.train_init).into());
        kv("lambda", t.lambda.to_string());
        kv("reg_steps", t.reg_steps.to_string());
        kv("reg_examples", t.reg_examples.to_string());
        kv(
            "fgsm_step",
            match t.fgsmpr_step {
                FgsmStep::Eps => "eps",
                FgsmStep::AlphaTrain => "alpha_train",
            }
            .into(),
        );
        kv("free_replays", t.free_replays.to_string());
        kv("epochs", t.epochs.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("lr", t.lr.to_string());
        kv("momentum", t.momentum.to_string());
        match &self.data {
            DataSource::Mnist { dir } => {
                kv("dataset", "mnist".into());
                kv("data_dir", dir.display().to_string());
            }
            DataSource::Synthetic {
                per_class,
                dim,
                separation,
            } => {
                kv("dataset", "synthetic".into());
                kv("synth_per_class", per_class.to_string());
                kv("synth_dim", dim.to_string());
                kv("synth_separation", separation.to_string());
            }
        }
        kv("train_subset", self.train_subset.to_string());
        kv("subset_seed", self.subset_seed.to_string());
        match &self.model {
            ModelChoice::MnistConv => kv("model", "mnist_conv".into()),
            ModelChoice::MnistMlp => kv("model", "mnist_mlp".into()),
            ModelChoice::Mlp { hidden } => {
                kv("model", "mlp".into());
                kv(
                    "hidden",
                    hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(","),
                );
            }
        }
        kv("eval_subset", self.eval_subset.to_string());
        kv("eval_eps", self.eval_eps.to_string());
        kv("eval_alpha", self.eval_alpha.to_string());
        kv("eval_pgd_steps", self.eval_pgd_steps.to_string());
        kv("eval_restarts", self.eval_restarts.to_string());
        kv(
            "eval_budgets",
            self.eval_budgets.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(","),
        );
        kv("eval_full_subset", self.eval_full_subset.to_string());
        kv("out_dir", self.out_dir.display().to_string());
        kv("checkpoint_interval", self.checkpoint_interval.to_string());
        kv("record_wall_time", self.record_wall_time.to_string());
        out
    }
}

fn init_name(i: InitMode) -> &'static str {
    match i {
        InitMode::Zero => "zero",
        InitMode::Uniform => "uniform",
    }
}

/// Splits `key = value` lines, dropping blanks and `#` comments.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (k, v) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line,
            reason: format!("expected `key = value`, found `{content}`"),
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ConfigError::Syntax {
                line,
                reason: "empty key".into(),
            });
        }
        if let Some(first) = seen.insert(k.to_string(), line) {
            return Err(ConfigError::DuplicateKey {
                key: k.to_string(),
                first,
                second: line,
            });
        }
        out.push((line, k.to_string(), v.to_string()));
    }
    Ok(out)
}

struct Values(HashMap<String, String>);

impl Values {
    fn raw(&self, key: &str) -> &str {
        &self.0[key]
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key).parse().map_err(|e: T::Err| ConfigError::Invalid {
            key: key.into(),
            reason: e.to_string(),
        })
    }

    fn real(&self, key: &str, ok: impl Fn(f64) -> bool, range: &str) -> Result<f64> {
        let v: f64 = self.get(key)?;
        if v.is_finite() && ok(v) {
            Ok(v)
        } else {
            Err(invalid(key, format!("{v} is outside {range}")))
        }
    }

    fn count(&self, key: &str, min: usize) -> Result<usize> {
        let v: usize = self.get(key)?;
        if v < min {
            return Err(invalid(key, format!("{v} must be >= {min}")));
        }
        Ok(v)
    }

    fn auto_or_real(&self, key: &str, ok: impl Fn(f64) -> bool, range: &str) -> Result<Option<f64>> {
        if self.raw(key) == "auto" {
            Ok(None)
        } else {
            self.real(key, ok, range).map(Some)
        }
    }
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        reason: reason.into(),
    }
}

impl FromStr for RunConfig {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self> {
        let mut values: HashMap<String, String> = HashMap::new();
        for (_, k, v) in parse_pairs(text)? {
            if !KEYS.iter().any(|(name, _)| *name == k) {
                return Err(ConfigError::UnknownKey(k));
            }
            values.insert(k, v);
        }
        for (name, default) in KEYS {
            if !values.contains_key(*name) {
                match default {
                    Some(d) => {
                        values.insert(name.to_string(), d.to_string());
                    }
                    None => return Err(ConfigError::MissingKey(name.to_string())),
                }
            }
        }
        let v = Values(values);

        let method: Method = v.get("method")?;
        let seed: u64 = v.get("seed")?;
        let eps = v.real("eps", |x| x >= 0.0, "[0, inf)")?;
        if eps == 0.0 && method != Method::Standard {
            return Err(invalid("eps", "must be > 0 for adversarial methods"));
        }
        let init = |key: &str| match v.raw(key) {
            "zero" => Ok(InitMode::Zero),
            "uniform" => Ok(InitMode::Uniform),
            other => Err(invalid(key, format!("`{other}` is not zero or uniform"))),
        };
        let batch_size = v.count("batch_size", 1)?;
        let reg_examples = v.count("reg_examples", 1)?;
        if reg_examples > batch_size {
            return Err(invalid("reg_examples", format!("{reg_examples} exceeds batch_size {batch_size}")));
        }
        let train = TrainConfig {
            method,
            eps,
            alpha_train: v.auto_or_real("alpha_train", |x| x > 0.0, "(0, inf)")?,
            pgd_train_steps: v.count("pgd_train_steps", 1)?,
            train_init: init("train_init")?,
            lambda: v.real("lambda", |x| x >= 0.0, "[0, inf)")?,
            reg_steps: v.count("reg_steps", 1)?,
            reg_examples,
            fgsmpr_step: match v.raw("fgsm_step") {
                "eps" => FgsmStep::Eps,
                "alpha_train" => FgsmStep::AlphaTrain,
                other => return Err(invalid("fgsm_step", format!("`{other}` is not eps or alpha_train"))),
            },
            free_replays: v.count("free_replays", 1)?,
            epochs: v.count("epochs", 1)?,
            batch_size,
            lr: v.real("lr", |x| x > 0.0, "(0, inf)")?,
            momentum: v.real("momentum", |x| (0.0..1.0).contains(&x), "[0, 1)")?,
            seed,
        };
        train.validate().map_err(|e| invalid("config", e.to_string()))?;

        let data = match v.raw("dataset") {
            "mnist" => DataSource::Mnist {
                dir: PathBuf::from(v.raw("data_dir")),
            },
            "synthetic" => DataSource::Synthetic {
                per_class: v.count("synth_per_class", 1)?,
                dim: v.count("synth_dim", 1)?,
                separation: v.real("synth_separation", |x| x >= 0.0, "[0, inf)")?,
            },
            other => return Err(invalid("dataset", format!("`{other}` is not mnist or synthetic"))),
        };
        let hidden: Vec<usize> = if v.raw("hidden").is_empty() {
            Vec::new()
        } else {
            v.raw("hidden")
                .split(',')
                .map(|h| match h.trim().parse::<usize>() {
                    Ok(n) if n > 0 => Ok(n),
                    _ => Err(invalid("hidden", format!("`{h}` is not a positive width"))),
                })
                .collect::<Result<_>>()?
        };
        let model = match (v.raw("model"), &data) {
            ("auto", DataSource::Mnist { .. }) | ("mnist_conv", DataSource::Mnist { .. }) => ModelChoice::MnistConv,
            ("mnist_mlp", DataSource::Mnist { .. }) => ModelChoice::MnistMlp,
            ("mlp", DataSource::Mnist { .. }) => return Err(invalid("model", "use mnist_mlp for MNIST")),
            ("auto", _) | ("mlp", _) => ModelChoice::Mlp { hidden },
            ("mnist_conv" | "mnist_mlp", _) => {
                return Err(invalid("model", "MNIST architectures need dataset = mnist"))
            }
            (other, _) => {
                return Err(invalid(
                    "model",
                    format!("`{other}` is not auto, mnist_conv, mnist_mlp or mlp"),
                ))
            }
        };
        let eval_budgets = v
            .raw("eval_budgets")
            .split(',')
            .map(|b| b.parse::<AttackName>().map_err(|e| invalid("eval_budgets", e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let record_wall_time = v.get("record_wall_time")?;

        Ok(RunConfig {
            train,
            data,
            train_subset: v.get("train_subset")?,
            subset_seed: v.get("subset_seed")?,
            model,
            eval_subset: v.get("eval_subset")?,
            eval_eps: v.auto_or_real("eval_eps", |x| x >= 0.0, "[0, inf)")?.unwrap_or(eps),
            eval_alpha: v.real("eval_alpha", |x| x > 0.0, "(0, inf)")?,
            eval_pgd_steps: v.count("eval_pgd_steps", 1)?,
            eval_restarts: v.count("eval_restarts", 1)?,
            eval_budgets,
            eval_full_subset: v.get("eval_full_subset")?,
            out_dir: PathBuf::from(v.raw("out_dir")),
            checkpoint_interval: v.get("checkpoint_interval")?,
            record_wall_time,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let c: RunConfig = "method = fgsmpr\nseed = 3\n".parse().unwrap();
        assert_eq!(c.train.method, Method::Fgsmpr);
        assert_eq!(c.train.lambda, 0.1);
        assert_eq!(c.train.reg_steps, 3);
        assert_eq!(c.train.reg_examples, 1);
        assert_eq!(c.train.eps, 0.3);
        assert_eq!(c.eval_eps, 0.3);
        assert_eq!(c.model, ModelChoice::MnistConv);
        assert_eq!(c.eval_budgets.len(), 4);
    }

    #[test]
    fn errors_name_the_key() {
        let cases = [
            ("method = fgsmpr\nseed = 1\nlambda = -1\n", "lambda"),
            ("method = fgsmpr\n", "seed"),
            ("method = fgsmpr\nseed = 1\nlearning_rate = 0.1\n", "learning_rate"),
            ("method = fgsmpr\nseed = 1\nmomentum = 1.5\n", "momentum"),
            ("method = fgsmpr\nseed = 1\nreg_examples = 200\n", "reg_examples"),
            ("method = nope\nseed = 1\n", "method"),
            ("method = fgsm\nseed = 1\nseed = 2\n", "seed"),
            ("method = fgsm\nseed = 1\neval_budgets = PGD-20\n", "eval_budgets"),
        ];
        for (text, key) in cases {
            let err = text.parse::<RunConfig>().unwrap_err().to_string();
            assert!(err.contains(key), "{text:?} -> {err}");
        }
        assert!(matches!(
            "just words".parse::<RunConfig>(),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let c: RunConfig = "# header\n\nmethod = pgd # trailing\n  seed=9\n".parse().unwrap();
        assert_eq!(c.train.method, Method::Pgd);
        assert_eq!(c.train.seed, 9);
    }

    #[test]
    fn resolved_config_round_trips() {
        let texts = [
            "method = fast_fgsm\nseed = 4\n",
            "method = fgsmpr\nseed = 4\ndataset = synthetic\nhidden = 8,4\neps = 0.1\nlr = 0.123456789\n",
            "method = free\nseed = 0\nmodel = mnist_mlp\nrecord_wall_time = true\ncheckpoint_interval = 0\n",
        ];
        for t in texts {
            let c: RunConfig = t.parse().unwrap();
            let again: RunConfig = c.resolved().parse().unwrap();
            assert_eq!(again.resolved(), c.resolved());
            assert_eq!(again.train.resolved_alpha_train(), c.train.resolved_alpha_train());
        }
    }
}
